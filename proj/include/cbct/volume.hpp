#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace cbct {

struct Dims3 {
  std::size_t nx = 0, ny = 0, nz = 0;
  std::size_t count() const { return nx * ny * nz; }
  bool operator==(const Dims3&) const = default;
};

// Attenuation image on a regular voxel grid (mm^-1).
//
// Linearization is x-fastest: index = x + nx * (y + ny * z). An axial
// slice (fixed z) is therefore one contiguous nx*ny block. Values may be
// negative; only finiteness is an invariant.
class Volume3D {
public:
  Volume3D() = default;
  Volume3D(Dims3 dims, double voxel_size);
  Volume3D(Dims3 dims, double voxel_size, std::vector<double> data);

  const Dims3& dims() const { return dims_; }
  double voxel_size() const { return voxel_size_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims_.nx * (y + dims_.ny * z);
  }
  double& at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  double at(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Volume3D& o) const { return dims_ == o.dims_; }

private:
  Dims3 dims_{};
  double voxel_size_ = 1.0;
  std::vector<double> data_;
};

// Log-normalized line integrals b, laid out view-major then row then
// column: index = col + cols * (row + rows * view).
class ProjectionStack {
public:
  ProjectionStack() = default;
  ProjectionStack(std::size_t n_views, std::size_t det_rows, std::size_t det_cols,
                  double pixel_pitch);
  ProjectionStack(std::size_t n_views, std::size_t det_rows, std::size_t det_cols,
                  double pixel_pitch, std::vector<double> data);

  std::size_t n_views() const { return n_views_; }
  std::size_t det_rows() const { return det_rows_; }
  std::size_t det_cols() const { return det_cols_; }
  double pixel_pitch() const { return pixel_pitch_; }
  std::size_t size() const { return data_.size(); }
  std::size_t view_size() const { return det_rows_ * det_cols_; }

  double& at(std::size_t view, std::size_t row, std::size_t col) {
    return data_[col + det_cols_ * (row + det_rows_ * view)];
  }
  double at(std::size_t view, std::size_t row, std::size_t col) const {
    return data_[col + det_cols_ * (row + det_rows_ * view)];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const ProjectionStack& o) const {
    return n_views_ == o.n_views_ && det_rows_ == o.det_rows_ && det_cols_ == o.det_cols_;
  }

private:
  std::size_t n_views_ = 0, det_rows_ = 0, det_cols_ = 0;
  double pixel_pitch_ = 1.0;
  std::vector<double> data_;
};

// Throws NumericError naming `what` if any element is NaN/Inf.
void require_finite(const std::vector<double>& v, const char* what);

// Small vector helpers shared by the solvers.
double dot(const std::vector<double>& a, const std::vector<double>& b);
double norm2(const std::vector<double>& a);

} // namespace cbct
