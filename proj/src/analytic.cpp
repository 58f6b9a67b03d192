#include "cbct/analytic.hpp"

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include <fftw3.h>

#include "cbct/error.hpp"
#include "cbct/parallel.hpp"

namespace cbct {

namespace {

// FFTW planning is not thread-safe; execution with new-array calls is.
std::mutex g_plan_mutex;

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
using RealBuffer = std::unique_ptr<double[], FftwFree>;
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

RealBuffer alloc_real(std::size_t n) {
  return RealBuffer(static_cast<double*>(fftw_malloc(sizeof(double) * n)));
}
ComplexBuffer alloc_complex(std::size_t n) {
  return ComplexBuffer(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
}

class RowFilter {
public:
  RowFilter(std::size_t padded, FilterKind kind, double pitch)
      : n_(padded), spectrum_(padded / 2 + 1) {
    auto real = alloc_real(n_);
    auto cplx = alloc_complex(n_ / 2 + 1);
    {
      std::lock_guard lock(g_plan_mutex);
      forward_ = fftw_plan_dft_r2c_1d(int(n_), real.get(), cplx.get(), FFTW_ESTIMATE);
      inverse_ = fftw_plan_dft_c2r_1d(int(n_), cplx.get(), real.get(), FFTW_ESTIMATE);
    }
    const double pi2 = std::numbers::pi * std::numbers::pi;
    for (std::size_t i = 0; i < n_; ++i) {
      const long k = i <= n_ / 2 ? long(i) : long(i) - long(n_);
      double h = 0.0;
      if (k == 0)
        h = 1.0 / (4.0 * pitch * pitch);
      else if (k % 2 != 0)
        h = -1.0 / (pi2 * double(k) * double(k) * pitch * pitch);
      real[i] = h * pitch;
    }
    fftw_execute_dft_r2c(forward_, real.get(), cplx.get());
    for (std::size_t f = 0; f <= n_ / 2; ++f) {
      double w = 1.0;
      if (kind == FilterKind::HammingRamLak)
        w = 0.54 + 0.46 * std::cos(2.0 * std::numbers::pi * double(f) / double(n_));
      // The kernel is even, so its transform is real; fold in the c2r scale.
      spectrum_[f] = cplx[f][0] * w / double(n_);
    }
  }
  ~RowFilter() {
    std::lock_guard lock(g_plan_mutex);
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }
  RowFilter(const RowFilter&) = delete;
  RowFilter& operator=(const RowFilter&) = delete;

  std::size_t size() const { return n_; }

  // Filters `len` samples in place; `real`/`cplx` are scratch of size n and
  // n/2+1 allocated with fftw_malloc.
  void apply(double* row, std::size_t len, double* real, fftw_complex* cplx) const {
    std::fill(real, real + n_, 0.0);
    std::copy(row, row + len, real);
    fftw_execute_dft_r2c(forward_, real, cplx);
    for (std::size_t f = 0; f <= n_ / 2; ++f) {
      cplx[f][0] *= spectrum_[f];
      cplx[f][1] *= spectrum_[f];
    }
    fftw_execute_dft_c2r(inverse_, cplx, real);
    std::copy(real, real + len, row);
  }

private:
  std::size_t n_;
  std::vector<double> spectrum_;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

} // namespace

std::size_t padded_length(const FilterConfig& cfg, std::size_t det_cols) {
  if (cfg.zero_pad_to == 0) {
    std::size_t n = 1;
    while (n < 2 * det_cols)
      n *= 2;
    return n;
  }
  const std::size_t n = cfg.zero_pad_to;
  if ((n & (n - 1)) != 0)
    throw InvalidSpec("zero_pad_to must be a power of two");
  if (n < 2 * det_cols)
    throw InvalidSpec("zero_pad_to must be at least 2 * det_cols");
  return n;
}

ProjectionStack ramp_filter_rows(const ProjectionStack& proj, const FilterConfig& cfg,
                                 double pitch) {
  if (!(pitch > 0.0))
    throw InvalidSpec("filter sample pitch must be positive");
  const std::size_t cols = proj.det_cols();
  const RowFilter filter(padded_length(cfg, cols), cfg.kind, pitch);
  ProjectionStack out = proj;
  const std::size_t n_rows = proj.n_views() * proj.det_rows();
  double* data = out.data().data();
  parallel_for(n_rows, [&](std::size_t begin, std::size_t end) {
    auto real = alloc_real(filter.size());
    auto cplx = alloc_complex(filter.size() / 2 + 1);
    for (std::size_t r = begin; r < end; ++r)
      filter.apply(data + r * cols, cols, real.get(), cplx.get());
  });
  return out;
}

ProjectionStack ramp_filter_rows(const ProjectionStack& proj, const FilterConfig& cfg) {
  return ramp_filter_rows(proj, cfg, proj.pixel_pitch());
}

Volume3D fdk_reconstruct(const ProjectionStack& proj, const ConeBeamGeometry& geom,
                         const FilterConfig& cfg) {
  check_projections(proj, geom);
  const double dso = geom.source_to_origin;
  const double dsd = geom.source_to_detector;
  const double pitch = geom.det_pixel_pitch;
  const std::size_t rows = geom.det_rows, cols = geom.det_cols, n_views = geom.n_views();
  const double c_col = (double(cols) - 1.0) / 2.0 - geom.det_offset[0];
  const double c_row = (double(rows) - 1.0) / 2.0 - geom.det_offset[1];

  ProjectionStack weighted = proj;
  for (std::size_t v = 0; v < n_views; ++v)
    for (std::size_t r = 0; r < rows; ++r) {
      const double vv = (double(r) - c_row) * pitch;
      for (std::size_t c = 0; c < cols; ++c) {
        const double uu = (double(c) - c_col) * pitch;
        weighted.at(v, r, c) *= dsd / std::sqrt(dsd * dsd + uu * uu + vv * vv);
      }
    }
  // Filtering happens on the detector scaled back to the rotation axis.
  const ProjectionStack filtered = ramp_filter_rows(weighted, cfg, pitch * dso / dsd);

  std::vector<double> cos_t(n_views), sin_t(n_views);
  for (std::size_t v = 0; v < n_views; ++v) {
    cos_t[v] = std::cos(geom.angles[v]);
    sin_t[v] = std::sin(geom.angles[v]);
  }
  const double scale = std::numbers::pi / double(n_views);

  Volume3D out = make_volume(geom);
  const Dims3 d = geom.vol_dims;
  const double* q = filtered.data().data();
  parallel_for(d.nz * d.ny, [&](std::size_t begin, std::size_t end) {
    for (std::size_t yz = begin; yz < end; ++yz) {
      const std::size_t j = yz % d.ny, k = yz / d.ny;
      for (std::size_t i = 0; i < d.nx; ++i) {
        const auto p = geom.voxel_center(i, j, k);
        double acc = 0.0;
        bool inside = true;
        for (std::size_t v = 0; v < n_views && inside; ++v) {
          const double depth = dso - (p[0] * cos_t[v] + p[1] * sin_t[v]);
          const double lateral = -p[0] * sin_t[v] + p[1] * cos_t[v];
          const double mag = dsd / depth;
          const double col = lateral * mag / pitch + c_col;
          const double row = p[2] * mag / pitch + c_row;
          if (col < 0.0 || row < 0.0 || col > double(cols - 1) || row > double(rows - 1)) {
            inside = false;
            break;
          }
          const std::size_t c0 = std::min(std::size_t(col), cols > 1 ? cols - 2 : 0);
          const std::size_t r0 = std::min(std::size_t(row), rows > 1 ? rows - 2 : 0);
          const double fc = col - double(c0), fr = row - double(r0);
          const std::size_t c1 = cols > 1 ? c0 + 1 : c0, r1 = rows > 1 ? r0 + 1 : r0;
          const double* view = q + v * rows * cols;
          const double val = (1.0 - fr) * ((1.0 - fc) * view[r0 * cols + c0] + fc * view[r0 * cols + c1]) +
                             fr * ((1.0 - fc) * view[r1 * cols + c0] + fc * view[r1 * cols + c1]);
          const double u = depth / dso;
          acc += val / (u * u);
        }
        out.at(i, j, k) = inside ? acc * scale : 0.0;
      }
    }
  });
  return out;
}

} // namespace cbct
