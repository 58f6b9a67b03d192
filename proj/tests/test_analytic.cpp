#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cbct/analytic.hpp"
#include "cbct/error.hpp"
#include "cbct/metrics.hpp"
#include "cbct/phantom.hpp"
#include "cbct/projector.hpp"
#include "fixtures.hpp"

using namespace cbct;
using namespace cbct::testing;

namespace {

// Ram-Lak kernel of spacing tau, written out from its closed form.
double ramp_tap(long k, double tau) {
  if (k == 0)
    return 1.0 / (4.0 * tau * tau);
  if (k % 2 == 0)
    return 0.0;
  return -1.0 / (std::numbers::pi * std::numbers::pi * double(k) * double(k) * tau * tau);
}

// Direct linear convolution, tau * sum_j h(i - j) x(j).
std::vector<double> ramp_direct(const std::vector<double>& row, double tau) {
  std::vector<double> out(row.size(), 0.0);
  for (std::size_t i = 0; i < row.size(); ++i)
    for (std::size_t j = 0; j < row.size(); ++j)
      out[i] += tau * ramp_tap(long(i) - long(j), tau) * row[j];
  return out;
}

ProjectionStack single_row(const std::vector<double>& row, double pitch) {
  return ProjectionStack(1, 1, row.size(), pitch, row);
}

} // namespace

TEST_CASE("ramp filter of zero is zero") {
  const ProjectionStack zero(3, 4, 32, 1.0);
  const auto out = ramp_filter_rows(zero, {});
  CHECK(out.data() == zero.data());
}

TEST_CASE("impulse response is the closed-form discrete ramp kernel") {
  const double tau = 0.5;
  std::vector<double> row(64, 0.0);
  row[32] = 1.0;
  const auto out = ramp_filter_rows(single_row(row, tau), {FilterKind::RamLak, 0}, tau);
  CHECK(out.data()[32] == doctest::Approx(1.0 / (4.0 * tau)).epsilon(1e-12));
  for (long k = -32; k < 32; ++k) {
    const double expected = tau * ramp_tap(k, tau);
    REQUIRE(std::abs(out.data()[std::size_t(32 + k)] - expected) < 1e-12);
  }
}

TEST_CASE("ramp filtering equals direct spatial convolution") {
  auto row = random_vector(96, 3);
  for (std::size_t pad : {256u, 512u}) {
    const auto out = ramp_filter_rows(single_row(row, 0.7), {FilterKind::RamLak, pad}, 0.7);
    const auto ref = ramp_direct(row, 0.7);
    CHECK(max_abs_diff(out.data(), ref) < 1e-12);
  }
}

TEST_CASE("constant rows are suppressed away from the edges") {
  const double c = 3.0;
  const std::vector<double> row(512, c);
  for (auto kind : {FilterKind::RamLak, FilterKind::HammingRamLak}) {
    const auto out = ramp_filter_rows(single_row(row, 1.0), {kind, 2048}, 1.0);
    double worst = 0.0;
    for (std::size_t i = 128; i < 384; ++i)
      worst = std::max(worst, std::abs(out.data()[i]));
    CHECK(worst < 1e-3 * c);
  }
}

TEST_CASE("Hamming window attenuates high frequencies") {
  std::vector<double> row(64, 0.0);
  for (std::size_t i = 0; i < row.size(); ++i)
    row[i] = (i % 2 == 0) ? 1.0 : -1.0;
  const auto plain = ramp_filter_rows(single_row(row, 1.0), {FilterKind::RamLak, 0}, 1.0);
  const auto hamming = ramp_filter_rows(single_row(row, 1.0), {FilterKind::HammingRamLak, 0}, 1.0);
  CHECK(std::abs(hamming.data()[32]) < 0.2 * std::abs(plain.data()[32]));
}

TEST_CASE("zero padding must be a power of two of at least twice the width") {
  const ProjectionStack p(1, 1, 100, 1.0);
  CHECK_THROWS_AS(ramp_filter_rows(p, {FilterKind::RamLak, 150}), InvalidSpec);
  CHECK_THROWS_AS(ramp_filter_rows(p, {FilterKind::RamLak, 128}), InvalidSpec);
  CHECK(padded_length({}, 100) == 256);
}

TEST_CASE("FDK is linear and maps zero to zero") {
  const auto g = desk_geometry(24, {16, 16, 16}, 0.4);
  const auto zero = fdk_reconstruct(make_projections(g), g);
  CHECK(std::all_of(zero.data().begin(), zero.data().end(), [](double v) { return v == 0.0; }));
  const auto y1 = random_projections(g, 1), y2 = random_projections(g, 2);
  ProjectionStack sum = y1;
  for (std::size_t i = 0; i < sum.size(); ++i)
    sum.data()[i] = 2.0 * y1.data()[i] + y2.data()[i];
  const auto r1 = fdk_reconstruct(y1, g), r2 = fdk_reconstruct(y2, g), rs = fdk_reconstruct(sum, g);
  for (std::size_t i = 0; i < rs.size(); ++i)
    REQUIRE(std::abs(rs.data()[i] - (2.0 * r1.data()[i] + r2.data()[i])) < 1e-9);
  CHECK_THROWS_AS(fdk_reconstruct(ProjectionStack(3, 128, 128, 0.3), g), DimensionMismatch);
}

TEST_CASE("FDK of a uniform ball recovers its attenuation") {
  const auto g = desk_geometry(180);
  const auto ball = make_ball_phantom(g.vol_dims, g.voxel_size, 2.0, 0.05);
  const auto rec = fdk_reconstruct(forward_project(ball, g), g);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < 64; ++k)
    for (std::size_t j = 0; j < 64; ++j)
      for (std::size_t i = 0; i < 64; ++i) {
        const auto c = g.voxel_center(i, j, k);
        if (c[0] * c[0] + c[1] * c[1] + c[2] * c[2] < 1.5 * 1.5) {
          sum += rec.at(i, j, k);
          ++n;
        }
      }
  CHECK(sum / double(n) == doctest::Approx(0.05).epsilon(0.10));

  const auto sparse = desk_geometry(12);
  const auto rec12 = fdk_reconstruct(forward_project(ball, sparse), sparse);
  const double dense_psnr = psnr(rec.data(), ball.data(), 0.05);
  const double sparse_psnr = psnr(rec12.data(), ball.data(), 0.05);
  CHECK(dense_psnr - sparse_psnr > 5.0);
}

TEST_CASE("doubling the views barely changes a smooth reconstruction") {
  const auto g = desk_geometry(120, {32, 32, 32}, 0.2);
  Volume3D blob = make_volume(g);
  for (std::size_t k = 0; k < 32; ++k)
    for (std::size_t j = 0; j < 32; ++j)
      for (std::size_t i = 0; i < 32; ++i) {
        const auto c = g.voxel_center(i, j, k);
        blob.at(i, j, k) = 0.05 * std::exp(-(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]) / 2.0);
      }
  const auto g2 = desk_geometry(240, {32, 32, 32}, 0.2);
  const auto r1 = fdk_reconstruct(forward_project(blob, g), g);
  const auto r2 = fdk_reconstruct(forward_project(blob, g2), g2);
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < r1.size(); ++i) {
    diff += (r1.data()[i] - r2.data()[i]) * (r1.data()[i] - r2.data()[i]);
    ref += r2.data()[i] * r2.data()[i];
  }
  CHECK(std::sqrt(diff / ref) < 0.01);
}
