#include "cbct/projector.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "cbct/error.hpp"
#include "cbct/parallel.hpp"

namespace cbct {

namespace {

constexpr std::size_t kAdjointChunks = 4;

// Sampling plan of one ray in continuous voxel-index coordinates: sample k
// sits at start + k * step and contributes `weight` times the trilinear
// interpolant there.
struct RayPlan {
  double start[3];
  double step[3];
  std::size_t count = 0;
  double weight = 0.0;
};

class RayTracer {
public:
  explicit RayTracer(const ConeBeamGeometry& g) : g_(g) {
    const double n[3] = {double(g.vol_dims.nx), double(g.vol_dims.ny), double(g.vol_dims.nz)};
    for (int a = 0; a < 3; ++a) {
      half_support_[a] = (n[a] + 1.0) / 2.0 * g.voxel_size;
      center_[a] = (n[a] - 1.0) / 2.0;
    }
  }

  RayPlan plan(std::size_t view, std::size_t row, std::size_t col) const {
    const auto src = g_.source_position(view);
    const auto pix = g_.pixel_position(view, double(row), double(col));
    double dir[3] = {pix[0] - src[0], pix[1] - src[1], pix[2] - src[2]};
    const double len = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    for (double& d : dir)
      d /= len;

    // Slab clipping against the interpolation support.
    double t0 = 0.0, t1 = len;
    for (int a = 0; a < 3; ++a) {
      const double lo = -half_support_[a], hi = half_support_[a];
      if (std::abs(dir[a]) < 1e-15) {
        if (src[a] <= lo || src[a] >= hi)
          return {};
        continue;
      }
      double ta = (lo - src[a]) / dir[a];
      double tb = (hi - src[a]) / dir[a];
      if (ta > tb)
        std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
    RayPlan p;
    if (!(t1 > t0))
      return p;
    const double dt = g_.voxel_size;
    p.count = std::size_t(std::ceil((t1 - t0) / dt));
    p.weight = dt;
    const double tfirst = t0 + 0.5 * dt;
    for (int a = 0; a < 3; ++a) {
      p.start[a] = (src[a] + tfirst * dir[a]) / g_.voxel_size + center_[a];
      p.step[a] = dir[a];
    }
    return p;
  }

  // Calls fn(voxel_index, weight) for every non-zero interpolation weight of
  // every sample along the ray.
  template <class Fn>
  void visit(const RayPlan& p, Fn&& fn) const {
    const long nx = long(g_.vol_dims.nx), ny = long(g_.vol_dims.ny), nz = long(g_.vol_dims.nz);
    const long sxy = nx * ny;
    for (std::size_t k = 0; k < p.count; ++k) {
      const double fx = p.start[0] + double(k) * p.step[0];
      const double fy = p.start[1] + double(k) * p.step[1];
      const double fz = p.start[2] + double(k) * p.step[2];
      const double flx = std::floor(fx), fly = std::floor(fy), flz = std::floor(fz);
      const long ix = long(flx), iy = long(fly), iz = long(flz);
      if (ix < -1 || iy < -1 || iz < -1 || ix >= nx || iy >= ny || iz >= nz)
        continue;
      const double wx1 = fx - flx, wy1 = fy - fly, wz1 = fz - flz;
      const double wx[2] = {1.0 - wx1, wx1};
      const double wy[2] = {1.0 - wy1, wy1};
      const double wz[2] = {1.0 - wz1, wz1};
      const bool interior = ix >= 0 && iy >= 0 && iz >= 0 && ix + 1 < nx && iy + 1 < ny && iz + 1 < nz;
      for (int c = 0; c < 2; ++c) {
        const long z = iz + c;
        if (!interior && (z < 0 || z >= nz))
          continue;
        for (int b = 0; b < 2; ++b) {
          const long y = iy + b;
          if (!interior && (y < 0 || y >= ny))
            continue;
          const double wyz = p.weight * wz[c] * wy[b];
          const long base = y * nx + z * sxy;
          for (int a = 0; a < 2; ++a) {
            const long x = ix + a;
            if (!interior && (x < 0 || x >= nx))
              continue;
            fn(std::size_t(base + x), wyz * wx[a]);
          }
        }
      }
    }
  }

private:
  const ConeBeamGeometry& g_;
  double half_support_[3];
  double center_[3];
};

} // namespace

ProjectionStack forward_project(const Volume3D& vol, const ConeBeamGeometry& geom) {
  check_volume(vol, geom);
  ProjectionStack out = make_projections(geom);
  const RayTracer tracer(geom);
  const std::size_t rows = geom.det_rows, cols = geom.det_cols;
  const double* x = vol.data().data();
  double* y = out.data().data();
  parallel_for(geom.n_pixels(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t col = i % cols;
      const std::size_t row = (i / cols) % rows;
      const std::size_t view = i / (cols * rows);
      double acc = 0.0;
      tracer.visit(tracer.plan(view, row, col), [&](std::size_t v, double w) { acc += w * x[v]; });
      y[i] = acc;
    }
  });
  return out;
}

Volume3D back_project(const ProjectionStack& proj, const ConeBeamGeometry& geom) {
  check_projections(proj, geom);
  Volume3D out = make_volume(geom);
  const RayTracer tracer(geom);
  const std::size_t n_views = geom.n_views();
  const std::size_t rows = geom.det_rows, cols = geom.det_cols;
  const std::size_t chunks = std::min(kAdjointChunks, n_views);
  const std::size_t n_vox = out.size();

  std::vector<std::vector<double>> partial(chunks);
  parallel_tasks(chunks, [&](std::size_t c) {
    std::vector<double> acc(n_vox, 0.0);
    const std::size_t v0 = c * n_views / chunks, v1 = (c + 1) * n_views / chunks;
    for (std::size_t view = v0; view < v1; ++view)
      for (std::size_t row = 0; row < rows; ++row)
        for (std::size_t col = 0; col < cols; ++col) {
          const double val = proj.at(view, row, col);
          if (val == 0.0)
            continue;
          tracer.visit(tracer.plan(view, row, col),
                       [&](std::size_t v, double w) { acc[v] += w * val; });
        }
    partial[c] = std::move(acc);
  });

  double* x = out.data().data();
  parallel_for(n_vox, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double s = 0.0;
      for (const auto& p : partial)
        s += p[i];
      x[i] = s;
    }
  });
  return out;
}

double adjoint_gap(const ConeBeamGeometry& geom, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Volume3D x = make_volume(geom);
  for (double& v : x.data())
    v = normal(rng);
  ProjectionStack y = make_projections(geom);
  for (double& v : y.data())
    v = normal(rng);
  const ProjectionStack ax = forward_project(x, geom);
  const Volume3D aty = back_project(y, geom);
  const double lhs = dot(ax.data(), y.data());
  const double rhs = dot(x.data(), aty.data());
  const double scale = norm2(ax.data()) * norm2(y.data());
  if (scale == 0.0)
    return std::abs(lhs - rhs);
  return std::abs(lhs - rhs) / scale;
}

std::vector<double> materialize_dense(const ConeBeamGeometry& geom) {
  const std::size_t m = geom.n_pixels();
  const std::size_t n = geom.vol_dims.count();
  std::vector<double> a(m * n, 0.0);
  Volume3D e = make_volume(geom);
  for (std::size_t j = 0; j < n; ++j) {
    e.data()[j] = 1.0;
    const ProjectionStack col = forward_project(e, geom);
    for (std::size_t i = 0; i < m; ++i)
      a[i * n + j] = col.data()[i];
    e.data()[j] = 0.0;
  }
  return a;
}

namespace {

template <class T>
void put_le(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(b, b + sizeof(T));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T)))
    throw FormatError("unexpected end of dense matrix file");
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

} // namespace

void write_dense_matrix(const std::string& path, const std::vector<double>& matrix,
                        std::uint64_t rows, std::uint64_t cols) {
  if (matrix.size() != rows * cols)
    throw DimensionMismatch("matrix size does not match rows*cols");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write " + path);
  put_le<std::uint64_t>(out, rows);
  put_le<std::uint64_t>(out, cols);
  put_le<std::uint64_t>(out, 0);
  for (double v : matrix)
    put_le<double>(out, v);
}

std::vector<double> read_dense_matrix(const std::string& path, std::uint64_t& rows,
                                      std::uint64_t& cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path);
  rows = get_le<std::uint64_t>(in);
  cols = get_le<std::uint64_t>(in);
  (void)get_le<std::uint64_t>(in);
  std::vector<double> m(rows * cols);
  for (double& v : m)
    v = get_le<double>(in);
  return m;
}

} // namespace cbct
