#include "cbct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "cbct/error.hpp"

namespace cbct {

double psnr(std::span<const double> x, std::span<const double> ref, double data_range) {
  if (x.size() != ref.size())
    throw DimensionMismatch("psnr: inputs differ in size");
  if (!(data_range > 0.0))
    throw InvalidSpec("psnr: data_range must be positive");
  if (x.empty())
    throw DimensionMismatch("psnr: empty input");
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - ref[i];
    se += d * d;
  }
  const double mse = se / double(x.size());
  if (mse == 0.0)
    return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

namespace {

std::vector<double> gaussian_taps(std::size_t n, double sigma) {
  std::vector<double> w(n);
  const double c = (double(n) - 1.0) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = double(i) - c;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (double& v : w)
    v /= sum;
  return w;
}

// Separable "valid" filtering: output is (w - n + 1) x (h - n + 1).
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t w, std::size_t h,
                                 const std::vector<double>& taps) {
  const std::size_t n = taps.size();
  const std::size_t ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(ow * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t)
        s += taps[t] * img[y * w + x + t];
      tmp[y * ow + x] = s;
    }
  std::vector<double> out(ow * oh);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t)
        s += taps[t] * tmp[(y + t) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

} // namespace

double ssim(std::span<const double> x, std::span<const double> ref, std::size_t width,
            std::size_t height, const SSIMConfig& cfg) {
  if (x.size() != ref.size() || x.size() != width * height)
    throw DimensionMismatch("ssim: inputs differ in size");
  if (!(cfg.data_range > 0.0))
    throw InvalidSpec("ssim: data_range must be positive");
  if (width < cfg.window || height < cfg.window)
    throw DimensionMismatch("ssim: image smaller than the window");
  const auto taps = gaussian_taps(cfg.window, cfg.sigma);
  const std::size_t n = x.size();
  std::vector<double> a(x.begin(), x.end()), b(ref.begin(), ref.end()), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, width, height, taps);
  const auto mu_b = filter_valid(b, width, height, taps);
  const auto e_aa = filter_valid(aa, width, height, taps);
  const auto e_bb = filter_valid(bb, width, height, taps);
  const auto e_ab = filter_valid(ab, width, height, taps);
  const double c1 = (cfg.k1 * cfg.data_range) * (cfg.k1 * cfg.data_range);
  const double c2 = (cfg.k2 * cfg.data_range) * (cfg.k2 * cfg.data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / double(mu_a.size());
}

double ssim_volume(const Volume3D& x, const Volume3D& ref, const SSIMConfig& cfg) {
  if (!x.same_shape(ref))
    throw DimensionMismatch("ssim_volume: volumes differ in shape");
  const Dims3 d = x.dims();
  const std::size_t slice = d.nx * d.ny;
  double total = 0.0;
  for (std::size_t k = 0; k < d.nz; ++k)
    total += ssim(std::span(x.data()).subspan(k * slice, slice),
                  std::span(ref.data()).subspan(k * slice, slice), d.nx, d.ny, cfg);
  return total / double(d.nz);
}

double reference_range(const Volume3D& ref) {
  return *std::max_element(ref.data().begin(), ref.data().end());
}

std::string metrics_to_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "volume_id,method,psnr_db,ssim\n";
  for (const auto& r : rows) {
    out << r.volume_id << ',' << r.method << ',';
    if (std::isinf(r.psnr_db))
      out << "inf";
    else
      out << r.psnr_db;
    out << ',' << r.ssim << '\n';
  }
  return out.str();
}

} // namespace cbct
