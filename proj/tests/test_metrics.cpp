#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "cbct/error.hpp"
#include "cbct/metrics.hpp"

using namespace cbct;

namespace {

std::vector<double> test_image(std::size_t w, std::size_t h) {
  std::vector<double> img(w * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = double(x) - 0.4 * double(w), dy = double(y) - 0.55 * double(h);
      img[y * w + x] = 0.3 + 0.5 * (dx * dx + 2.0 * dy * dy < 90.0) +
                       0.15 * std::sin(0.3 * double(x)) * std::cos(0.2 * double(y));
    }
  return img;
}

std::vector<double> add_noise(std::vector<double> img, double sigma, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (double& v : img)
    v += n(rng);
  return img;
}

// Direct 2D windowed summation, no separability.
double ssim_bruteforce(const std::vector<double>& a, const std::vector<double>& b, std::size_t w,
                       std::size_t h, const SSIMConfig& cfg) {
  const std::size_t n = cfg.window;
  std::vector<double> k(n * n);
  double sum = 0.0;
  const double c = (double(n) - 1.0) / 2.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double r2 = (double(i) - c) * (double(i) - c) + (double(j) - c) * (double(j) - c);
      k[i * n + j] = std::exp(-r2 / (2.0 * cfg.sigma * cfg.sigma));
      sum += k[i * n + j];
    }
  const double c1 = std::pow(cfg.k1 * cfg.data_range, 2), c2 = std::pow(cfg.k2 * cfg.data_range, 2);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y + n <= h; ++y)
    for (std::size_t x = 0; x + n <= w; ++x) {
      double ma = 0, mb = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double wt = k[i * n + j] / sum;
          ma += wt * a[(y + i) * w + x + j];
          mb += wt * b[(y + i) * w + x + j];
        }
      double va = 0, vb = 0, cov = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double wt = k[i * n + j] / sum;
          const double da = a[(y + i) * w + x + j] - ma, db = b[(y + i) * w + x + j] - mb;
          va += wt * da * da;
          vb += wt * db * db;
          cov += wt * da * db;
        }
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / double(count);
}

} // namespace

TEST_CASE("PSNR closed forms") {
  std::vector<double> ref(1000, 0.25), x = ref;
  CHECK(std::isinf(psnr(x, ref, 1.0)));
  CHECK(psnr(x, ref, 1.0) > 0.0);
  for (double& v : x)
    v += 0.1;
  CHECK(psnr(x, ref, 1.0) == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("PSNR matches a naive reference and is symmetric") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(4096), ref(4096);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = u(rng);
    ref[i] = u(rng);
  }
  long double se = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i)
    se += (long double)(x[i] - ref[i]) * (x[i] - ref[i]);
  const double naive = double(10.0L * std::log10(0.81L / (se / x.size())));
  CHECK(psnr(x, ref, 0.9) == doctest::Approx(naive).epsilon(1e-9));
  CHECK(psnr(x, ref, 0.9) == psnr(ref, x, 0.9));
}

TEST_CASE("PSNR falls as noise grows") {
  const auto img = test_image(64, 64);
  double prev = std::numeric_limits<double>::infinity();
  for (double sigma : {0.01, 0.05, 0.2}) {
    const double p = psnr(add_noise(img, sigma, 3), img, 1.0);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("metric input validation") {
  std::vector<double> a(100), b(99);
  CHECK_THROWS_AS(psnr(a, b, 1.0), DimensionMismatch);
  CHECK_THROWS_AS(psnr(a, a, 0.0), InvalidSpec);
  CHECK_THROWS_AS(ssim(a, a, 10, 10, SSIMConfig{}), DimensionMismatch);
  std::vector<double> c(144);
  CHECK_NOTHROW(ssim(c, c, 12, 12, SSIMConfig{}));
}

TEST_CASE("SSIM identity and constant closed form") {
  const auto img = add_noise(test_image(40, 32), 0.3, 11);
  CHECK(ssim(img, img, 40, 32, SSIMConfig{}) == 1.0);
  SSIMConfig cfg;
  cfg.data_range = 2.0;
  const double a = 0.7, b = 1.3;
  const std::vector<double> x(30 * 30, a), r(30 * 30, b);
  const double c1 = std::pow(cfg.k1 * cfg.data_range, 2);
  CHECK(ssim(x, r, 30, 30, cfg) == doctest::Approx((2 * a * b + c1) / (a * a + b * b + c1)).epsilon(1e-12));
}

TEST_CASE("SSIM matches a brute-force windowed oracle") {
  const std::size_t w = 48, h = 40;
  const auto ref = test_image(w, h);
  const auto noisy = add_noise(ref, 0.08, 5);
  SSIMConfig cfg;
  const double fast = ssim(noisy, ref, w, h, cfg);
  CHECK(std::abs(fast - ssim_bruteforce(noisy, ref, w, h, cfg)) < 1e-6);
  CHECK(fast < 1.0);
  CHECK(fast > -1.0);
}

TEST_CASE("volume SSIM averages axial slices") {
  const Dims3 d{16, 16, 3};
  Volume3D ref(d, 1.0), x(d, 1.0);
  const auto slice_img = test_image(16, 16);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto noisy = add_noise(slice_img, 0.05 * double(k + 1), unsigned(k));
    std::copy(slice_img.begin(), slice_img.end(), ref.data().begin() + std::ptrdiff_t(k * 256));
    std::copy(noisy.begin(), noisy.end(), x.data().begin() + std::ptrdiff_t(k * 256));
  }
  SSIMConfig cfg;
  cfg.data_range = reference_range(ref);
  double expect = 0.0;
  for (std::size_t k = 0; k < 3; ++k)
    expect += ssim(std::span(x.data()).subspan(k * 256, 256),
                   std::span(ref.data()).subspan(k * 256, 256), 16, 16, cfg);
  CHECK(ssim_volume(x, ref, cfg) == doctest::Approx(expect / 3.0).epsilon(1e-15));
  CHECK(ssim_volume(ref, ref, cfg) == 1.0);
  CHECK_THROWS_AS(ssim_volume(x, Volume3D({16, 16, 2}, 1.0), cfg), DimensionMismatch);
}

TEST_CASE("metrics CSV") {
  const auto csv = metrics_to_csv({{"p0", "fdk", 21.5, 0.75},
                                   {"p0", "reference", std::numeric_limits<double>::infinity(), 1.0}});
  CHECK(csv == "volume_id,method,psnr_db,ssim\np0,fdk,21.5,0.75\np0,reference,inf,1\n");
}
