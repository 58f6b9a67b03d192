#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cbct/volume.hpp"

namespace cbct {

// Circular cone-beam geometry with a flat detector.
//
// World frame (right-handed, mm): the rotation axis is z and the voxel grid
// is centred on the origin. At view angle t the source sits at
// R_so * (cos t, sin t, 0) and the detector centre at
// -(R_sd - R_so) * (cos t, sin t, 0). The detector u axis is
// (-sin t, cos t, 0) and its v axis is +z, so (u, v, towards-source) is
// right-handed. Pixel (row, col) has its centre at
//   u = (col - (cols-1)/2 + u0) * pitch,  v = (row - (rows-1)/2 + v0) * pitch.
// Voxel (i, j, k) has its centre at ((i - (nx-1)/2) * voxel_size, ...).
class ConeBeamGeometry {
public:
  double source_to_origin = 0.0;
  double source_to_detector = 0.0;
  std::size_t det_rows = 0;
  std::size_t det_cols = 0;
  double det_pixel_pitch = 0.0;
  std::vector<double> angles;
  Dims3 vol_dims{};
  double voxel_size = 0.0;
  std::array<double, 2> det_offset{0.0, 0.0};

  std::size_t n_views() const { return angles.size(); }
  std::size_t n_pixels() const { return angles.size() * det_rows * det_cols; }

  // Throws InvalidSpec or CoverageError when an invariant does not hold.
  void validate() const;

  // Radius of the sphere circumscribing the voxel grid.
  double object_radius() const;

  std::array<double, 3> source_position(std::size_t view) const;
  std::array<double, 3> pixel_position(std::size_t view, double row, double col) const;
  std::array<double, 3> voxel_center(std::size_t i, std::size_t j, std::size_t k) const;

  bool operator==(const ConeBeamGeometry&) const = default;
};

// Inputs of make_circular_geometry. Either `angles` is given explicitly or
// `n_views` angles are spread uniformly over [0, 2pi) (full revolution) or
// [0, pi).
struct GeometryParams {
  double source_to_origin = 0.0;
  double source_to_detector = 0.0;
  std::size_t det_rows = 0;
  std::size_t det_cols = 0;
  double det_pixel_pitch = 0.0;
  std::optional<std::vector<double>> angles;
  std::size_t n_views = 0;
  bool full_revolution = true;
  Dims3 vol_dims{};
  double voxel_size = 0.0;
  std::array<double, 2> det_offset{0.0, 0.0};
};

ConeBeamGeometry make_circular_geometry(const GeometryParams& params);

struct SubsampledScan {
  ProjectionStack proj;
  ConeBeamGeometry geom;
};

// Keeps views 0, factor, 2*factor, ... of both the data and the angle list.
SubsampledScan subsample_views(const ProjectionStack& proj, const ConeBeamGeometry& geom,
                               std::size_t factor);
ConeBeamGeometry subsample_geometry(const ConeBeamGeometry& geom, std::size_t factor);

// Empty volume / projection stack shaped for this geometry.
Volume3D make_volume(const ConeBeamGeometry& geom);
ProjectionStack make_projections(const ConeBeamGeometry& geom);

void check_volume(const Volume3D& vol, const ConeBeamGeometry& geom);
void check_projections(const ProjectionStack& proj, const ConeBeamGeometry& geom);

// JSON document with the field names of ConeBeamGeometry; doubles are
// written with round-trip precision.
std::string geometry_to_json(const ConeBeamGeometry& geom);
ConeBeamGeometry geometry_from_json(const std::string& text);
void write_geometry(const std::string& path, const ConeBeamGeometry& geom);
ConeBeamGeometry read_geometry(const std::string& path);

// Parses GeometryParams from JSON. Accepts an explicit "angles" array or
// "n_views" plus optional "full_revolution".
GeometryParams geometry_params_from_json(const std::string& text);

} // namespace cbct
