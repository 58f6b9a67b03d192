#include "cbct/patches.hpp"

#include "cbct/error.hpp"

namespace cbct {

std::vector<std::size_t> tile_starts(std::size_t len, std::size_t p, std::size_t stride) {
  if (p == 0 || p > len)
    throw DimensionMismatch("patch size " + std::to_string(p) + " does not fit a slice side of " +
                            std::to_string(len));
  if (stride == 0)
    throw InvalidSpec("patch stride must be at least 1");
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + p < len; s += stride)
    starts.push_back(s);
  if (starts.empty() || starts.back() != len - p)
    starts.push_back(len - p);
  return starts;
}

Patches extract_patches(const Volume3D& vol, std::size_t p, std::size_t stride,
                        std::size_t volume_id) {
  const Dims3 d = vol.dims();
  const auto rows = tile_starts(d.ny, p, stride);
  const auto cols = tile_starts(d.nx, p, stride);
  Patches out;
  out.p = p;
  out.data.reserve(d.nz * rows.size() * cols.size() * p * p);
  for (std::size_t k = 0; k < d.nz; ++k)
    for (std::size_t r : rows)
      for (std::size_t c : cols) {
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            out.data.push_back(vol.at(c + x, r + y, k));
        out.meta.push_back({volume_id, k, r, c});
      }
  return out;
}

Volume3D reassemble_patches(const Patches& patches, Dims3 dims, double voxel_size) {
  // Running mean, so overlapping copies of one value reproduce it exactly.
  Volume3D mean(dims, voxel_size);
  std::vector<std::size_t> hits(dims.count(), 0);
  const std::size_t p = patches.p;
  for (std::size_t n = 0; n < patches.count(); ++n) {
    const PatchMeta& m = patches.meta[n];
    if (m.slice >= dims.nz || m.row + p > dims.ny || m.col + p > dims.nx)
      throw DimensionMismatch("patch lies outside the target volume");
    const double* src = patches.data.data() + n * p * p;
    for (std::size_t y = 0; y < p; ++y)
      for (std::size_t x = 0; x < p; ++x) {
        const std::size_t idx = mean.index(m.col + x, m.row + y, m.slice);
        double& cur = mean.data()[idx];
        const std::size_t k = ++hits[idx];
        cur = k == 1 ? src[y * p + x] : cur + (src[y * p + x] - cur) / double(k);
      }
  }
  return mean;
}

PatchSet make_patch_set(const std::vector<Volume3D>& inputs, const std::vector<Volume3D>& targets,
                        std::size_t p, std::size_t stride, double scale) {
  if (inputs.size() != targets.size())
    throw DimensionMismatch("training inputs and targets differ in count");
  if (!(scale > 0.0))
    throw InvalidSpec("patch scale must be positive");
  PatchSet set;
  set.p = p;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].same_shape(targets[i]))
      throw DimensionMismatch("training input and target volumes differ in shape");
    Patches in = extract_patches(inputs[i], p, stride, i);
    Patches tg = extract_patches(targets[i], p, stride, i);
    for (double& v : in.data)
      v /= scale;
    for (double& v : tg.data)
      v /= scale;
    set.inputs.insert(set.inputs.end(), in.data.begin(), in.data.end());
    set.targets.insert(set.targets.end(), tg.data.begin(), tg.data.end());
    set.meta.insert(set.meta.end(), in.meta.begin(), in.meta.end());
  }
  return set;
}

} // namespace cbct
