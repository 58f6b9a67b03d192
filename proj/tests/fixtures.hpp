#pragma once

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "cbct/geometry.hpp"
#include "cbct/volume.hpp"

namespace cbct::testing {

// 8^3 volume, 12 views, 16 x 16 detector: small enough to materialise A.
inline ConeBeamGeometry oracle_geometry() {
  GeometryParams p;
  p.source_to_origin = 50.0;
  p.source_to_detector = 100.0;
  p.det_rows = 16;
  p.det_cols = 16;
  p.det_pixel_pitch = 2.0;
  p.n_views = 12;
  p.vol_dims = {8, 8, 8};
  p.voxel_size = 1.0;
  return make_circular_geometry(p);
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(n);
  for (double& x : v)
    x = normal(rng);
  return v;
}

inline Volume3D random_volume(const ConeBeamGeometry& g, std::uint64_t seed) {
  return Volume3D(g.vol_dims, g.voxel_size, random_vector(g.vol_dims.count(), seed));
}

inline ProjectionStack random_projections(const ConeBeamGeometry& g, std::uint64_t seed) {
  return ProjectionStack(g.n_views(), g.det_rows, g.det_cols, g.det_pixel_pitch,
                         random_vector(g.n_pixels(), seed));
}

// Small random geometry with a detector wide enough for the whole volume.
inline ConeBeamGeometry random_geometry(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim(3, 9), det(6, 14), views(1, 9);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GeometryParams p;
  p.vol_dims = {std::size_t(dim(rng)), std::size_t(dim(rng)), std::size_t(dim(rng))};
  p.voxel_size = 0.5 + unit(rng);
  p.source_to_origin = 40.0 + 20.0 * unit(rng);
  p.source_to_detector = p.source_to_origin * (1.5 + unit(rng));
  p.det_rows = std::size_t(det(rng));
  p.det_cols = std::size_t(det(rng));
  p.det_offset = {unit(rng) - 0.5, unit(rng) - 0.5};
  const double r = 0.5 * p.voxel_size *
                   std::sqrt(double(p.vol_dims.count() > 0 ? p.vol_dims.nx * p.vol_dims.nx +
                                                                 p.vol_dims.ny * p.vol_dims.ny +
                                                                 p.vol_dims.nz * p.vol_dims.nz
                                                           : 0));
  const double need = std::tan(std::asin(r / p.source_to_origin)) * p.source_to_detector;
  const double half = double(std::min(p.det_rows, p.det_cols) - 1) / 2.0 - 0.5;
  p.det_pixel_pitch = 1.1 * need / half;
  std::vector<double> angles;
  double a = unit(rng);
  for (int i = 0, n = views(rng); i < n; ++i) {
    angles.push_back(a);
    a += 0.1 + unit(rng) * 0.5;
  }
  p.angles = angles;
  return make_circular_geometry(p);
}

using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const Eigen::VectorXd> as_vector(const std::vector<double>& v) {
  return {v.data(), Eigen::Index(v.size())};
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

} // namespace cbct::testing

namespace cbct::testing {

// Desk-scale scanner: 64^3 voxels of 0.1 mm, 128 x 128 detector.
inline ConeBeamGeometry desk_geometry(std::size_t views, Dims3 dims = {64, 64, 64},
                                      double voxel = 0.1) {
  GeometryParams p;
  p.source_to_origin = 66.0;
  p.source_to_detector = 199.0;
  p.det_rows = 128;
  p.det_cols = 128;
  p.det_pixel_pitch = 0.3;
  p.n_views = views;
  p.vol_dims = dims;
  p.voxel_size = voxel;
  return make_circular_geometry(p);
}

} // namespace cbct::testing
