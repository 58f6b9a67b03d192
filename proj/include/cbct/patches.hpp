#pragma once

#include <cstddef>
#include <vector>

#include "cbct/volume.hpp"

namespace cbct {

struct PatchMeta {
  std::size_t volume_id = 0;
  std::size_t slice = 0;
  std::size_t row = 0;  // top-left corner, y
  std::size_t col = 0;  // top-left corner, x
  bool operator==(const PatchMeta&) const = default;
};

// p x p axial patches stored back to back (row-major within a patch).
struct Patches {
  std::size_t p = 0;
  std::vector<double> data;
  std::vector<PatchMeta> meta;
  std::size_t count() const { return meta.size(); }
};

// Start offsets 0, stride, 2*stride, ... plus a final start at len - p so
// the last patch is flush with the edge.
std::vector<std::size_t> tile_starts(std::size_t len, std::size_t p, std::size_t stride);

// Tiles every axial slice of `vol`.
Patches extract_patches(const Volume3D& vol, std::size_t p, std::size_t stride,
                        std::size_t volume_id = 0);

// Inverse of extract_patches: averages all contributions per voxel. Voxels
// covered by no patch are 0.
Volume3D reassemble_patches(const Patches& patches, Dims3 dims, double voxel_size);

// Aligned (input, target) patch pairs for training.
struct PatchSet {
  std::size_t p = 0;
  std::vector<double> inputs;
  std::vector<double> targets;
  std::vector<PatchMeta> meta;
  std::size_t count() const { return meta.size(); }
};

// Patches of inputs[i] and targets[i] at identical positions, each value
// divided by `scale`.
PatchSet make_patch_set(const std::vector<Volume3D>& inputs, const std::vector<Volume3D>& targets,
                        std::size_t p, std::size_t stride, double scale = 1.0);

} // namespace cbct
