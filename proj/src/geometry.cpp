#include "cbct/geometry.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "cbct/error.hpp"

namespace cbct {

using nlohmann::json;

void ConeBeamGeometry::validate() const {
  if (!(source_to_origin > 0.0))
    throw InvalidSpec("source_to_origin must be positive");
  if (!(source_to_detector > source_to_origin))
    throw InvalidSpec("source_to_detector must exceed source_to_origin");
  if (det_rows == 0 || det_cols == 0)
    throw InvalidSpec("detector dimensions must be positive");
  if (!(det_pixel_pitch > 0.0))
    throw InvalidSpec("det_pixel_pitch must be positive");
  if (vol_dims.nx == 0 || vol_dims.ny == 0 || vol_dims.nz == 0)
    throw InvalidSpec("vol_dims must be positive");
  if (!(voxel_size > 0.0))
    throw InvalidSpec("voxel_size must be positive");
  if (angles.empty())
    throw InvalidSpec("at least one view angle is required");
  for (std::size_t i = 0; i < angles.size(); ++i) {
    if (!(angles[i] >= 0.0 && angles[i] < 2.0 * std::numbers::pi))
      throw InvalidSpec("view angles must lie in [0, 2pi)");
    if (i > 0 && !(angles[i] > angles[i - 1]))
      throw InvalidSpec("view angles must be strictly increasing");
  }
  if (!std::isfinite(det_offset[0]) || !std::isfinite(det_offset[1]))
    throw InvalidSpec("det_offset must be finite");

  // The outermost pixel centres bound the cone; the circumscribing sphere
  // must subtend no more than that from the source.
  const double r = object_radius();
  if (r >= source_to_origin)
    throw CoverageError("voxel grid encloses the source");
  const double half_u = ((double(det_cols) - 1.0) / 2.0 - std::abs(det_offset[0])) * det_pixel_pitch;
  const double half_v = ((double(det_rows) - 1.0) / 2.0 - std::abs(det_offset[1])) * det_pixel_pitch;
  const double sphere = std::asin(r / source_to_origin);
  const double cone_u = std::atan(half_u / source_to_detector);
  const double cone_v = std::atan(half_v / source_to_detector);
  if (sphere > cone_u || sphere > cone_v) {
    std::ostringstream msg;
    msg << "object sphere (radius " << r << " mm, half-angle " << sphere
        << " rad) exceeds the cone (half-angles " << cone_u << ", " << cone_v << " rad)";
    throw CoverageError(msg.str());
  }
}

double ConeBeamGeometry::object_radius() const {
  const double nx = double(vol_dims.nx), ny = double(vol_dims.ny), nz = double(vol_dims.nz);
  return 0.5 * voxel_size * std::sqrt(nx * nx + ny * ny + nz * nz);
}

std::array<double, 3> ConeBeamGeometry::source_position(std::size_t view) const {
  const double t = angles[view];
  return {source_to_origin * std::cos(t), source_to_origin * std::sin(t), 0.0};
}

std::array<double, 3> ConeBeamGeometry::pixel_position(std::size_t view, double row,
                                                       double col) const {
  const double t = angles[view];
  const double c = std::cos(t), s = std::sin(t);
  const double back = source_to_detector - source_to_origin;
  const double u = (col - (double(det_cols) - 1.0) / 2.0 + det_offset[0]) * det_pixel_pitch;
  const double v = (row - (double(det_rows) - 1.0) / 2.0 + det_offset[1]) * det_pixel_pitch;
  return {-back * c - u * s, -back * s + u * c, v};
}

std::array<double, 3> ConeBeamGeometry::voxel_center(std::size_t i, std::size_t j,
                                                     std::size_t k) const {
  return {(double(i) - (double(vol_dims.nx) - 1.0) / 2.0) * voxel_size,
          (double(j) - (double(vol_dims.ny) - 1.0) / 2.0) * voxel_size,
          (double(k) - (double(vol_dims.nz) - 1.0) / 2.0) * voxel_size};
}

ConeBeamGeometry make_circular_geometry(const GeometryParams& p) {
  ConeBeamGeometry g;
  g.source_to_origin = p.source_to_origin;
  g.source_to_detector = p.source_to_detector;
  g.det_rows = p.det_rows;
  g.det_cols = p.det_cols;
  g.det_pixel_pitch = p.det_pixel_pitch;
  g.vol_dims = p.vol_dims;
  g.voxel_size = p.voxel_size;
  g.det_offset = p.det_offset;
  if (p.angles) {
    g.angles = *p.angles;
  } else {
    if (p.n_views == 0)
      throw InvalidSpec("n_views must be positive");
    const double span = p.full_revolution ? 2.0 * std::numbers::pi : std::numbers::pi;
    g.angles.resize(p.n_views);
    for (std::size_t i = 0; i < p.n_views; ++i)
      g.angles[i] = span * double(i) / double(p.n_views);
  }
  g.validate();
  return g;
}

ConeBeamGeometry subsample_geometry(const ConeBeamGeometry& geom, std::size_t factor) {
  if (factor == 0)
    throw InvalidSpec("subsampling factor must be at least 1");
  if (factor > geom.n_views())
    throw InvalidSpec("subsampling factor " + std::to_string(factor) + " exceeds view count " +
                      std::to_string(geom.n_views()));
  ConeBeamGeometry out = geom;
  out.angles.clear();
  for (std::size_t i = 0; i < geom.n_views(); i += factor)
    out.angles.push_back(geom.angles[i]);
  return out;
}

SubsampledScan subsample_views(const ProjectionStack& proj, const ConeBeamGeometry& geom,
                               std::size_t factor) {
  check_projections(proj, geom);
  ConeBeamGeometry g = subsample_geometry(geom, factor);
  const std::size_t vs = proj.view_size();
  std::vector<double> data;
  data.reserve(g.n_views() * vs);
  for (std::size_t i = 0; i < proj.n_views(); i += factor) {
    auto first = proj.data().begin() + std::ptrdiff_t(i * vs);
    data.insert(data.end(), first, first + std::ptrdiff_t(vs));
  }
  ProjectionStack out(g.n_views(), proj.det_rows(), proj.det_cols(), proj.pixel_pitch(),
                      std::move(data));
  return {std::move(out), std::move(g)};
}

Volume3D make_volume(const ConeBeamGeometry& geom) { return Volume3D(geom.vol_dims, geom.voxel_size); }

ProjectionStack make_projections(const ConeBeamGeometry& geom) {
  return ProjectionStack(geom.n_views(), geom.det_rows, geom.det_cols, geom.det_pixel_pitch);
}

void check_volume(const Volume3D& vol, const ConeBeamGeometry& geom) {
  if (!(vol.dims() == geom.vol_dims))
    throw DimensionMismatch("volume dims do not match geometry vol_dims");
  if (vol.voxel_size() != geom.voxel_size)
    throw DimensionMismatch("volume voxel size does not match geometry voxel_size");
}

void check_projections(const ProjectionStack& proj, const ConeBeamGeometry& geom) {
  if (proj.n_views() != geom.n_views() || proj.det_rows() != geom.det_rows ||
      proj.det_cols() != geom.det_cols)
    throw DimensionMismatch("projection dims (" + std::to_string(proj.n_views()) + "x" +
                            std::to_string(proj.det_rows()) + "x" +
                            std::to_string(proj.det_cols()) + ") do not match geometry (" +
                            std::to_string(geom.n_views()) + "x" + std::to_string(geom.det_rows) +
                            "x" + std::to_string(geom.det_cols) + ")");
}

std::string geometry_to_json(const ConeBeamGeometry& g) {
  json j;
  j["source_to_origin"] = g.source_to_origin;
  j["source_to_detector"] = g.source_to_detector;
  j["det_rows"] = g.det_rows;
  j["det_cols"] = g.det_cols;
  j["det_pixel_pitch"] = g.det_pixel_pitch;
  j["angles"] = g.angles;
  j["vol_dims"] = {g.vol_dims.nx, g.vol_dims.ny, g.vol_dims.nz};
  j["voxel_size"] = g.voxel_size;
  j["det_offset"] = {g.det_offset[0], g.det_offset[1]};
  return j.dump(2);
}

namespace {

Dims3 dims_from(const json& j) {
  if (!j.is_array() || j.size() != 3)
    throw InvalidSpec("vol_dims must be an array of three integers");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("geometry JSON: ") + e.what());
  }
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

} // namespace

ConeBeamGeometry geometry_from_json(const std::string& text) {
  const json j = parse(text);
  ConeBeamGeometry g;
  try {
    g.source_to_origin = j.at("source_to_origin").get<double>();
    g.source_to_detector = j.at("source_to_detector").get<double>();
    g.det_rows = j.at("det_rows").get<std::size_t>();
    g.det_cols = j.at("det_cols").get<std::size_t>();
    g.det_pixel_pitch = j.at("det_pixel_pitch").get<double>();
    g.angles = j.at("angles").get<std::vector<double>>();
    g.vol_dims = dims_from(j.at("vol_dims"));
    g.voxel_size = j.at("voxel_size").get<double>();
    if (j.contains("det_offset")) {
      const auto off = j.at("det_offset").get<std::vector<double>>();
      if (off.size() != 2)
        throw InvalidSpec("det_offset must have two entries");
      g.det_offset = {off[0], off[1]};
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("geometry JSON: ") + e.what());
  }
  g.validate();
  return g;
}

void write_geometry(const std::string& path, const ConeBeamGeometry& geom) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write " + path);
  out << geometry_to_json(geom) << '\n';
}

ConeBeamGeometry read_geometry(const std::string& path) { return geometry_from_json(slurp(path)); }

GeometryParams geometry_params_from_json(const std::string& text) {
  const json j = parse(text);
  GeometryParams p;
  try {
    p.source_to_origin = j.at("source_to_origin").get<double>();
    p.source_to_detector = j.at("source_to_detector").get<double>();
    p.det_rows = j.at("det_rows").get<std::size_t>();
    p.det_cols = j.at("det_cols").get<std::size_t>();
    p.det_pixel_pitch = j.at("det_pixel_pitch").get<double>();
    if (j.contains("angles"))
      p.angles = j.at("angles").get<std::vector<double>>();
    p.n_views = j.value("n_views", std::size_t{0});
    p.full_revolution = j.value("full_revolution", true);
    p.vol_dims = dims_from(j.at("vol_dims"));
    p.voxel_size = j.at("voxel_size").get<double>();
    if (j.contains("det_offset")) {
      const auto off = j.at("det_offset").get<std::vector<double>>();
      if (off.size() != 2)
        throw InvalidSpec("det_offset must have two entries");
      p.det_offset = {off[0], off[1]};
    }
  } catch (const json::exception& e) {
    throw InvalidSpec(std::string("geometry parameters: ") + e.what());
  }
  return p;
}

} // namespace cbct
