#include "cbct/volume.hpp"

#include <cmath>
#include <string>

#include "cbct/error.hpp"

namespace cbct {

Volume3D::Volume3D(Dims3 dims, double voxel_size)
    : Volume3D(dims, voxel_size, std::vector<double>(dims.count(), 0.0)) {}

Volume3D::Volume3D(Dims3 dims, double voxel_size, std::vector<double> data)
    : dims_(dims), voxel_size_(voxel_size), data_(std::move(data)) {
  if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0)
    throw InvalidSpec("volume dimensions must be positive");
  if (!(voxel_size > 0.0))
    throw InvalidSpec("voxel size must be positive");
  if (data_.size() != dims.count())
    throw DimensionMismatch("volume data length " + std::to_string(data_.size()) +
                            " != nx*ny*nz = " + std::to_string(dims.count()));
}

ProjectionStack::ProjectionStack(std::size_t n_views, std::size_t det_rows, std::size_t det_cols,
                                 double pixel_pitch)
    : ProjectionStack(n_views, det_rows, det_cols, pixel_pitch,
                      std::vector<double>(n_views * det_rows * det_cols, 0.0)) {}

ProjectionStack::ProjectionStack(std::size_t n_views, std::size_t det_rows, std::size_t det_cols,
                                 double pixel_pitch, std::vector<double> data)
    : n_views_(n_views), det_rows_(det_rows), det_cols_(det_cols), pixel_pitch_(pixel_pitch),
      data_(std::move(data)) {
  if (n_views == 0 || det_rows == 0 || det_cols == 0)
    throw InvalidSpec("projection dimensions must be positive");
  if (!(pixel_pitch > 0.0))
    throw InvalidSpec("pixel pitch must be positive");
  if (data_.size() != n_views * det_rows * det_cols)
    throw DimensionMismatch("projection data length " + std::to_string(data_.size()) +
                            " != views*rows*cols = " +
                            std::to_string(n_views * det_rows * det_cols));
}

void require_finite(const std::vector<double>& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericError(std::string(what) + " contains non-finite values");
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += a[i] * b[i];
  return s;
}

double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

} // namespace cbct
