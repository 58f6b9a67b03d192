#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "cbct/error.hpp"
#include "cbct/unet.hpp"

using namespace cbct;

namespace {

std::vector<double> random_patch(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                 double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v)
    x = u(rng);
  return v;
}

double inner(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += a[i] * b[i];
  return s;
}

std::string scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "cbct_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

} // namespace

TEST_CASE("layer layout") {
  const UNetArch arch{2, 4, 3};
  const auto layers = unet_layers(arch);
  REQUIRE(layers.size() == 5 * 2 + 3);
  CHECK(layers[0].in == 1);
  CHECK(layers[0].out == 4);
  CHECK(layers[4].in == 8);   // bottleneck at level 2
  CHECK(layers[4].out == 16);
  CHECK(layers.back().kernel == 1);
  CHECK(layers.back().out == 1);
  std::size_t total = 0;
  for (const auto& l : layers) {
    CHECK(l.weight_offset == total);
    CHECK(l.bias_offset == total + l.weight_count());
    total += l.weight_count() + l.out;
  }
  CHECK(DenoiserParams(arch).values.size() == total);
}

TEST_CASE("zero network gives zero output") {
  const DenoiserParams zero(UNetArch{2, 4, 3});
  const auto x = random_patch(32 * 32, 1);
  const auto y = unet_forward(zero, x, 32, 32);
  CHECK(std::all_of(y.begin(), y.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("output shape matches input shape") {
  const auto params = init_denoiser(UNetArch{2, 4, 3}, 3);
  CHECK(unet_forward(params, random_patch(64 * 64, 2), 64, 64).size() == 64 * 64);
  CHECK(unet_forward(params, random_patch(256 * 256, 2), 256, 256).size() == 256 * 256);
  CHECK(unet_forward(params, random_patch(32 * 48, 2), 32, 48).size() == 32 * 48);
  CHECK_THROWS_AS(unet_forward(params, random_patch(30 * 32, 2), 30, 32), DimensionMismatch);
  CHECK_THROWS_AS(unet_forward(params, random_patch(10, 2), 32, 32), DimensionMismatch);
}

TEST_CASE("depth-0 single convolution matches hand-computed cross-correlation") {
  // One base channel: conv(hand kernel) -> conv(identity) -> 1x1 identity.
  // Inputs and kernel are non-negative so the ReLUs pass everything through.
  DenoiserParams p(UNetArch{0, 1, 3});
  REQUIRE(p.layers.size() == 3);
  const double k[9] = {0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
  std::copy(k, k + 9, p.weights(0).begin());
  p.weights(1)[4] = 1.0;
  p.weights(2)[0] = 1.0;
  std::vector<double> x(25);
  for (std::size_t i = 0; i < 25; ++i)
    x[i] = double(i % 7) + 0.5 * double(i / 5);
  const auto y = unet_forward(p, x, 5, 5);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      double expect = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int rr = r + dy, cc = c + dx;
          if (rr < 0 || rr >= 5 || cc < 0 || cc >= 5)
            continue;
          expect += k[(dy + 1) * 3 + (dx + 1)] * x[std::size_t(rr * 5 + cc)];
        }
      CHECK(y[std::size_t(r * 5 + c)] == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("backward matches central finite differences") {
  auto params = init_denoiser(UNetArch{1, 4, 3}, 11);
  const auto bias_noise = random_patch(params.values.size(), 12, -0.05, 0.05);
  for (std::size_t l = 0; l < params.layers.size(); ++l)
    for (std::size_t o = 0; o < params.layers[l].out; ++o)
      params.bias(l)[o] = bias_noise[params.layers[l].bias_offset + o];
  const std::size_t h = 16, w = 16;
  const auto x = random_patch(h * w, 13);
  const auto up = random_patch(h * w, 14);
  const auto grad = unet_backward(params, x, h, w, up);
  REQUIRE(grad.size() == params.values.size());

  const double step = 1e-6;
  double worst = 0.0;
  std::size_t kinks = 0;
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    auto plus = params, minus = params;
    plus.values[i] += step;
    minus.values[i] -= step;
    const double fd = (inner(unet_forward(plus, x, h, w), up) -
                       inner(unet_forward(minus, x, h, w), up)) / (2.0 * step);
    const double rel = std::abs(fd - grad[i]) / std::max(std::abs(fd) + std::abs(grad[i]), 1e-8);
    if (rel >= 1e-4) {
      // A ReLU or max-pool switch inside [-step, step] makes the central
      // difference meaningless; confirm by the one-sided differences disagreeing.
      const double f0 = inner(unet_forward(params, x, h, w), up);
      const double right = (inner(unet_forward(plus, x, h, w), up) - f0) / step;
      const double left = (f0 - inner(unet_forward(minus, x, h, w), up)) / step;
      if (std::abs(right - left) > 1e-3 * std::max(std::abs(right) + std::abs(left), 1e-8)) {
        ++kinks;
        continue;
      }
    }
    worst = std::max(worst, rel);
  }
  MESSAGE("parameters: " << params.values.size() << ", kinks skipped: " << kinks
                         << ", worst relative error: " << worst);
  CHECK(worst < 1e-4);
  CHECK(kinks == 0);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  const auto params = init_denoiser(UNetArch{1, 4, 3}, 5);
  const std::vector<double> zero(16 * 16, 0.0);
  const auto g = unet_backward(params, random_patch(256, 6), 16, 16, zero);
  CHECK(std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; }));
  CHECK_THROWS_AS(unet_backward(params, random_patch(256, 6), 16, 16, std::vector<double>(10)),
                  DimensionMismatch);
}

TEST_CASE("batch gradients are the sum of sample gradients") {
  const auto params = init_denoiser(UNetArch{1, 4, 3}, 7);
  const std::size_t n = 3, hw = 16 * 16;
  const auto xs = random_patch(n * hw, 8), ups = random_patch(n * hw, 9);
  const auto batch = unet_backward_batch(params, xs, ups, n, 16, 16);
  std::vector<double> sum(params.values.size(), 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const auto g = unet_backward(params, std::span(xs).subspan(s * hw, hw), 16, 16,
                                 std::span(ups).subspan(s * hw, hw));
    for (std::size_t i = 0; i < sum.size(); ++i)
      sum[i] += g[i];
  }
  CHECK(batch == sum);
}

TEST_CASE("MSE gradient helper agrees with forward and backward") {
  const auto params = init_denoiser(UNetArch{1, 4, 3}, 21);
  const auto x = random_patch(256, 22), t = random_patch(256, 23);
  std::vector<double> grads;
  const double loss = unet_mse_gradient(params, x, t, 16, 16, 0.5, grads);
  const auto y = unet_forward(params, x, 16, 16);
  CHECK(loss == doctest::Approx(mse_loss(y, t)).epsilon(1e-15));
  std::vector<double> up(256);
  for (std::size_t i = 0; i < 256; ++i)
    up[i] = 0.5 * 2.0 * (y[i] - t[i]) / 256.0;
  const auto ref = unet_backward(params, x, 16, 16, up);
  for (std::size_t i = 0; i < ref.size(); ++i)
    REQUIRE(grads[i] == doctest::Approx(ref[i]).epsilon(1e-12).scale(1e-12));
}

TEST_CASE("mse loss") {
  const auto a = random_patch(1000, 31), b = random_patch(1000, 32);
  CHECK(mse_loss(a, a) == 0.0);
  auto c = a;
  for (double& v : c)
    v += 0.5;
  CHECK(mse_loss(c, a) == doctest::Approx(0.25).epsilon(1e-14));
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += (long double)(a[i] - b[i]) * (a[i] - b[i]);
  CHECK(mse_loss(a, b) == doctest::Approx(double(s / 1000.0L)).epsilon(1e-12));
  CHECK_THROWS_AS(mse_loss(a, std::span(b).first(10)), DimensionMismatch);
}

TEST_CASE("volume application pads, preserves dims and treats slices independently") {
  CHECK(apply_denoiser_volume(DenoiserParams(UNetArch{2, 2, 3}), Volume3D({13, 10, 3}, 0.5))
            .data() == std::vector<double>(13 * 10 * 3, 0.0));
  auto params = init_denoiser(UNetArch{2, 2, 3}, 41);
  params.norm_scale = 2.0;
  const Dims3 d{13, 10, 4};
  Volume3D vol(d, 0.5, random_patch(d.count(), 42, 0.0, 2.0));
  const auto out = apply_denoiser_volume(params, vol);
  CHECK(out.dims() == d);
  CHECK(out.voxel_size() == 0.5);
  // Reverse slice order, apply, reverse back.
  Volume3D rev(d, 0.5);
  const std::size_t s = d.nx * d.ny;
  for (std::size_t k = 0; k < d.nz; ++k)
    std::copy_n(vol.data().begin() + std::ptrdiff_t(k * s), s,
                rev.data().begin() + std::ptrdiff_t((d.nz - 1 - k) * s));
  const auto rev_out = apply_denoiser_volume(params, rev);
  for (std::size_t k = 0; k < d.nz; ++k)
    CHECK(std::equal(out.data().begin() + std::ptrdiff_t(k * s),
                     out.data().begin() + std::ptrdiff_t((k + 1) * s),
                     rev_out.data().begin() + std::ptrdiff_t((d.nz - 1 - k) * s)));
  // Normalization: D(v) = scale * net(v / scale) on one slice padded to 12 x 16.
  std::vector<double> slice(12 * 16, 0.0);
  for (std::size_t y = 0; y < 10; ++y)
    for (std::size_t x = 0; x < 13; ++x)
      slice[y * 16 + x] = vol.at(x, y, 0) / 2.0;
  const auto net = unet_forward(params, slice, 12, 16);
  CHECK(out.at(5, 7, 0) == doctest::Approx(2.0 * net[7 * 16 + 5]).epsilon(1e-14));
}

TEST_CASE("denoiser files round-trip float32 parameters") {
  auto params = init_denoiser(UNetArch{2, 4, 3}, 51);
  params.norm_scale = 0.0731;
  round_to_float32(params);
  const auto path = scratch("stage1.cbdn");
  write_denoiser(path, params);
  const auto back = read_denoiser(path);
  CHECK(back == params);

  std::ifstream in(path, std::ios::binary);
  std::string header;
  std::getline(in, header);
  CHECK(header.find("\"version\":1") != std::string::npos);

  in.seekg(0);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  bytes.resize(bytes.size() - 4);
  std::ofstream(path, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
  CHECK_THROWS_AS(read_denoiser(path), TruncationError);
}
