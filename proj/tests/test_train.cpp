#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "cbct/adam.hpp"
#include "cbct/error.hpp"
#include "cbct/patches.hpp"
#include "cbct/train.hpp"
#include "cbct/unet.hpp"

using namespace cbct;

namespace {

Volume3D random_vol(Dims3 d, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Volume3D v(d, 0.1);
  for (double& x : v.data())
    x = u(rng);
  return v;
}

// Smooth target and a noisy copy of it.
std::pair<Volume3D, Volume3D> denoising_pair(Dims3 d, std::uint64_t seed) {
  Volume3D clean(d, 0.1);
  for (std::size_t k = 0; k < d.nz; ++k)
    for (std::size_t j = 0; j < d.ny; ++j)
      for (std::size_t i = 0; i < d.nx; ++i)
        clean.at(i, j, k) = 0.5 + 0.3 * std::sin(0.4 * double(i) + double(k)) *
                                      std::cos(0.3 * double(j) + 0.1 * double(seed));
  Volume3D noisy = clean;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.1);
  for (double& x : noisy.data())
    x += n(rng);
  return {noisy, clean};
}

} // namespace

TEST_CASE("Adam: zero gradient leaves parameters unchanged") {
  std::vector<double> w{1.0, -2.0, 3.0};
  const auto w0 = w;
  AdamState st(3);
  adam_step(w, std::vector<double>(3, 0.0), st, AdamHyper{});
  CHECK(w == w0);
  CHECK(st.step == 1);
  CHECK_THROWS_AS(adam_step(w, std::vector<double>(2, 0.0), st, AdamHyper{}), DimensionMismatch);
}

TEST_CASE("Adam: first step moves by lr against the gradient sign") {
  const AdamHyper h{0.01, 0.9, 0.999, 1e-8};
  const std::vector<double> g{0.5, -3.0, 1e-3, 42.0};
  std::vector<double> w(4, 0.0);
  AdamState st(4);
  adam_step(w, g, st, h);
  // Exact deviation is eps / (|g| + eps); allow a few ulps of rounding in w.
  const double ulps = 4.0 * std::numeric_limits<double>::epsilon();
  for (std::size_t i = 0; i < 4; ++i) {
    const double expect = -h.learning_rate * (g[i] > 0 ? 1.0 : -1.0);
    CHECK(std::abs(w[i] - expect) / h.learning_rate <= h.epsilon / std::abs(g[i]) + ulps);
  }
}

TEST_CASE("Adam: matches a scalar reference and minimizes a quadratic") {
  const AdamHyper h{0.1, 0.9, 0.999, 1e-8};
  std::vector<double> w(5, 1.0);
  AdamState st(5);
  double rw = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    std::vector<double> g(5);
    for (std::size_t i = 0; i < 5; ++i)
      g[i] = 2.0 * w[i];
    adam_step(w, g, st, h);
    const double rg = 2.0 * rw;
    m = h.beta1 * m + (1 - h.beta1) * rg;
    v = h.beta2 * v + (1 - h.beta2) * rg * rg;
    const double mh = m / (1 - std::pow(h.beta1, t)), vh = v / (1 - std::pow(h.beta2, t));
    rw -= h.learning_rate * mh / (std::sqrt(vh) + h.epsilon);
    REQUIRE(w[0] == doctest::Approx(rw).epsilon(1e-12).scale(1e-12));
  }
  double n2 = 0.0;
  for (double x : w)
    n2 += x * x;
  CHECK(std::sqrt(n2) < 1e-2);
}

TEST_CASE("patch tiling covers the slice") {
  CHECK(tile_starts(380, 256, 124) == std::vector<std::size_t>{0, 124});
  CHECK(tile_starts(64, 64, 64) == std::vector<std::size_t>{0});
  CHECK(tile_starts(10, 4, 3) == std::vector<std::size_t>{0, 3, 6});
  CHECK(tile_starts(10, 4, 4) == std::vector<std::size_t>{0, 4, 6});
  CHECK_THROWS_AS(tile_starts(10, 11, 4), DimensionMismatch);
  CHECK_THROWS_AS(tile_starts(10, 4, 0), InvalidSpec);

  const Volume3D slice({380, 380, 1}, 0.1);
  const auto patches = extract_patches(slice, 256, 124);
  CHECK(patches.count() == 4);
  CHECK(patches.meta[3] == PatchMeta{0, 0, 124, 124});
}

TEST_CASE("patch reassembly is exact") {
  const Dims3 d{32, 24, 3};
  const auto vol = random_vol(d, 5, -1.0, 1.0);
  const auto tiles = extract_patches(vol, 8, 8, 2);
  CHECK(tiles.count() == 3 * 4 * 3);
  CHECK(tiles.meta.front().volume_id == 2);
  CHECK(reassemble_patches(tiles, d, 0.1).data() == vol.data());
  const auto overlap = extract_patches(vol, 8, 3);
  CHECK(reassemble_patches(overlap, d, 0.1).data() == vol.data());
  Volume3D tenth(d, 0.1, std::vector<double>(d.count(), 0.1));
  CHECK(reassemble_patches(extract_patches(tenth, 8, 1), d, 0.1).data() == tenth.data());
}

TEST_CASE("patch sets pair inputs with targets") {
  const Dims3 d{16, 16, 2};
  const auto a = random_vol(d, 1), b = random_vol(d, 2);
  const auto set = make_patch_set({a}, {b}, 8, 8, 2.0);
  CHECK(set.count() == 8);
  CHECK(set.inputs[0] == a.at(0, 0, 0) / 2.0);
  CHECK(set.targets[0] == b.at(0, 0, 0) / 2.0);
  CHECK_THROWS_AS(make_patch_set({a}, {Volume3D({8, 8, 2}, 0.1)}, 8, 8), DimensionMismatch);
  CHECK_THROWS_AS(make_patch_set({a}, {}, 8, 8), DimensionMismatch);
}

TEST_CASE("train_stage validation and zero epochs") {
  const auto [x, t] = denoising_pair({16, 16, 2}, 1);
  const auto init = init_denoiser(UNetArch{1, 4, 3}, 3);
  TrainConfig cfg;
  cfg.patch_size = 16;
  cfg.patch_stride = 16;
  cfg.batch_size = 2;
  cfg.epochs = 0;
  const auto r = train_stage({x}, {t}, cfg, init);
  CHECK(r.params == init);
  CHECK(r.epoch_loss.empty());
  cfg.epochs = 1;
  CHECK_THROWS_AS(train_stage({}, {}, cfg, init), InvalidSpec);
  cfg.batch_size = 3;
  CHECK_THROWS_AS(train_stage({x}, {t}, cfg, init), InvalidSpec);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train_stage({x}, {t}, cfg, init), InvalidSpec);
}

TEST_CASE("a small U-Net overfits one patch pair") {
  const auto [x, t] = denoising_pair({16, 16, 1}, 4);
  TrainConfig cfg;
  cfg.epochs = 2000;
  cfg.batch_size = 1;
  cfg.patch_size = 16;
  cfg.patch_stride = 16;
  cfg.normalization = NormalizationPolicy::None;
  const auto r = train_stage({x}, {t}, cfg, init_denoiser(UNetArch{1, 8, 3}, 9));
  const double final_loss = mse_loss(unet_forward(r.params, x.data(), 16, 16), t.data());
  MESSAGE("initial " << r.initial_loss << ", final " << final_loss);
  CHECK(final_loss < 1e-2 * r.initial_loss);
  std::size_t non_increasing = 0;
  for (std::size_t e = 1; e < r.epoch_loss.size(); ++e)
    non_increasing += r.epoch_loss[e] <= r.epoch_loss[e - 1];
  CHECK(double(non_increasing) >= 0.9 * double(r.epoch_loss.size() - 1));
}

TEST_CASE("training is deterministic and leaves other stages alone") {
  std::vector<Volume3D> xs, ts;
  for (std::uint64_t s = 0; s < 2; ++s) {
    auto [x, t] = denoising_pair({16, 16, 3}, s + 10);
    xs.push_back(x);
    ts.push_back(t);
  }
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.patch_size = 8;
  cfg.patch_stride = 8;
  cfg.seed = 77;
  const auto stage1 = init_denoiser(UNetArch{1, 4, 3}, 1);
  const auto a = train_stage(xs, ts, cfg, stage1);
  const auto b = train_stage(xs, ts, cfg, stage1);
  CHECK(a.params == b.params);
  CHECK(a.epoch_loss == b.epoch_loss);
  CHECK(a.params.norm_scale == pooled_percentile(xs, 0.999));

  const auto stage1_copy = a.params;
  const auto stage2 = train_stage(xs, ts, cfg, a.params);
  CHECK(a.params == stage1_copy);
  CHECK(stage2.params != a.params);

  cfg.seed = 78;
  CHECK(train_stage(xs, ts, cfg, stage1).params != a.params);
}

TEST_CASE("pooled percentile uses nearest rank") {
  Volume3D v({10, 10, 10}, 1.0);
  for (std::size_t i = 0; i < v.size(); ++i)
    v.data()[i] = double(i);
  CHECK(pooled_percentile({v}, 0.999) == 998.0);
  CHECK(pooled_percentile({v}, 0.0) == 0.0);
  CHECK(pooled_percentile({v}, 1.0) == 999.0);
}
