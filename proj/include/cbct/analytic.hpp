#pragma once

#include <cstddef>

#include "cbct/geometry.hpp"
#include "cbct/volume.hpp"

namespace cbct {

enum class FilterKind { RamLak, HammingRamLak };

struct FilterConfig {
  FilterKind kind = FilterKind::HammingRamLak;
  // Zero-padded FFT length; a power of two >= 2 * det_cols. 0 selects the
  // smallest such length.
  std::size_t zero_pad_to = 0;
};

// Resolved padding length for `det_cols` columns; throws InvalidSpec when an
// explicit zero_pad_to is not a power of two or shorter than 2 * det_cols.
std::size_t padded_length(const FilterConfig& cfg, std::size_t det_cols);

// Convolves every detector row with the discrete ramp kernel of sample
// spacing `pitch` (h[0] = 1/(4 pitch^2), h[odd k] = -1/(pi^2 k^2 pitch^2),
// h[even k] = 0), scaled by `pitch`. The kernel is transformed on the padded
// grid, so the result is the exact linear convolution for RamLak; the
// Hamming variant additionally multiplies the response by
// 0.54 + 0.46 cos(2 pi f), f in cycles/sample.
ProjectionStack ramp_filter_rows(const ProjectionStack& proj, const FilterConfig& cfg,
                                 double pitch);
ProjectionStack ramp_filter_rows(const ProjectionStack& proj, const FilterConfig& cfg);

// Feldkamp-Davis-Kress reconstruction for a full circular scan: cosine
// weighting, row-wise ramp filtering on the detector rescaled to the
// rotation axis, and distance-weighted voxel-driven backprojection scaled by
// pi / n_views. A voxel whose projection leaves the detector in any view is
// set to 0.
Volume3D fdk_reconstruct(const ProjectionStack& proj, const ConeBeamGeometry& geom,
                         const FilterConfig& cfg = {});

} // namespace cbct
