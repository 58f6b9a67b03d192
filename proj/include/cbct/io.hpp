#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "cbct/volume.hpp"

namespace cbct {

// Volume file, little-endian:
//   "CBVL" | u32 version | u32 nx, ny, nz | f64 voxel_size | f32 payload
// Projection file:
//   "CBPR" | u32 version | u32 n_views | u32 rows, cols | f64 pixel_pitch | f32 payload
// Payloads follow the in-memory linearization (x fastest / column fastest).
// Values are rounded to float32 on write.
inline constexpr std::uint32_t kFileVersion = 1;

void write_volume(const std::string& path, const Volume3D& vol);
Volume3D read_volume(const std::string& path);

void write_projections(const std::string& path, const ProjectionStack& proj);
ProjectionStack read_projections(const std::string& path);

// Headerless row-major float32 little-endian stack (views x rows x cols),
// as exported by common scanner pipelines.
ProjectionStack import_raw_projections(const std::string& path, std::size_t n_views,
                                       std::size_t rows, std::size_t cols, double pixel_pitch);

// Binary 8-bit PGM of a width x height slice mapped linearly from
// [level - window/2, level + window/2] to [0, 255].
void write_pgm(const std::string& path, std::span<const double> slice, std::size_t width,
               std::size_t height, double window, double level);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

} // namespace cbct
