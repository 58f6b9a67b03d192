#include "cbct/phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "cbct/error.hpp"
#include "cbct/parallel.hpp"
#include "cbct/projector.hpp"

namespace cbct {

void PhantomSpec::validate() const {
  if (!(attenuation_min > 0.0 && attenuation_max >= attenuation_min))
    throw InvalidSpec("phantom attenuation range must be positive and ordered");
  if (!(size_min > 0.0 && size_max >= size_min))
    throw InvalidSpec("phantom size range must be positive and ordered");
}

namespace {

struct Ellipsoid {
  double center[3];
  double axes[3];
  double rot[3][3];  // rows are the ellipsoid's principal directions
  double value;
};

// Uniformly random rotation from a unit quaternion.
void random_rotation(std::mt19937_64& rng, double r[3][3]) {
  std::normal_distribution<double> n;
  double q[4];
  double len = 0.0;
  do {
    len = 0.0;
    for (double& c : q) {
      c = n(rng);
      len += c * c;
    }
  } while (len < 1e-12);
  len = std::sqrt(len);
  const double w = q[0] / len, x = q[1] / len, y = q[2] / len, z = q[3] / len;
  r[0][0] = 1 - 2 * (y * y + z * z);
  r[0][1] = 2 * (x * y - z * w);
  r[0][2] = 2 * (x * z + y * w);
  r[1][0] = 2 * (x * y + z * w);
  r[1][1] = 1 - 2 * (x * x + z * z);
  r[1][2] = 2 * (y * z - x * w);
  r[2][0] = 2 * (x * z - y * w);
  r[2][1] = 2 * (y * z + x * w);
  r[2][2] = 1 - 2 * (x * x + y * y);
}

Ellipsoid place(std::mt19937_64& rng, const double half[3], double smin, double smax,
                double value) {
  std::uniform_real_distribution<double> size(smin, smax);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Ellipsoid e{};
    double rmax = 0.0;
    for (double& a : e.axes) {
      a = size(rng);
      rmax = std::max(rmax, a);
    }
    bool fits = true;
    for (int d = 0; d < 3; ++d)
      fits = fits && half[d] - rmax > 0.0;
    if (!fits)
      continue;
    for (int d = 0; d < 3; ++d) {
      std::uniform_real_distribution<double> c(-(half[d] - rmax), half[d] - rmax);
      e.center[d] = c(rng);
    }
    random_rotation(rng, e.rot);
    e.value = value;
    return e;
  }
  throw InvalidSpec("ellipsoid does not fit inside the volume after 100 attempts");
}

bool contains(const Ellipsoid& e, const std::array<double, 3>& p) {
  const double d[3] = {p[0] - e.center[0], p[1] - e.center[1], p[2] - e.center[2]};
  double s = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double l = (e.rot[0][a] * d[0] + e.rot[1][a] * d[1] + e.rot[2][a] * d[2]) / e.axes[a];
    s += l * l;
  }
  return s <= 1.0;
}

std::array<double, 3> center_of(Dims3 dims, double vs, std::size_t i, std::size_t j,
                                std::size_t k) {
  return {(double(i) - (double(dims.nx) - 1.0) / 2.0) * vs,
          (double(j) - (double(dims.ny) - 1.0) / 2.0) * vs,
          (double(k) - (double(dims.nz) - 1.0) / 2.0) * vs};
}

} // namespace

Volume3D make_ellipsoid_phantom(Dims3 dims, double voxel_size, const PhantomSpec& spec) {
  spec.validate();
  Volume3D vol(dims, voxel_size);
  std::mt19937_64 rng(spec.seed);
  const double half[3] = {double(dims.nx) * voxel_size / 2.0, double(dims.ny) * voxel_size / 2.0,
                          double(dims.nz) * voxel_size / 2.0};
  std::uniform_real_distribution<double> atten(spec.attenuation_min, spec.attenuation_max);
  std::vector<Ellipsoid> solids, voids;
  for (std::size_t n = 0; n < spec.n_ellipsoids; ++n) {
    const double value = atten(rng);
    solids.push_back(place(rng, half, spec.size_min, spec.size_max, value));
  }
  if (spec.voids)
    for (std::size_t n = 0; n < spec.n_ellipsoids / 2; ++n)
      voids.push_back(place(rng, half, spec.size_min / 2.0, spec.size_min, 0.0));

  parallel_for(dims.nz, [&](std::size_t k0, std::size_t k1) {
    for (std::size_t k = k0; k < k1; ++k)
      for (std::size_t j = 0; j < dims.ny; ++j)
        for (std::size_t i = 0; i < dims.nx; ++i) {
          const auto p = center_of(dims, voxel_size, i, j, k);
          double v = 0.0;
          for (const auto& e : solids)
            if (contains(e, p))
              v += e.value;
          for (const auto& e : voids)
            if (contains(e, p))
              v = 0.0;
          vol.at(i, j, k) = v;
        }
  });
  return vol;
}

Volume3D make_ball_phantom(Dims3 dims, double voxel_size, double radius, double attenuation) {
  Volume3D vol(dims, voxel_size);
  for (std::size_t k = 0; k < dims.nz; ++k)
    for (std::size_t j = 0; j < dims.ny; ++j)
      for (std::size_t i = 0; i < dims.nx; ++i) {
        const auto p = center_of(dims, voxel_size, i, j, k);
        if (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= radius * radius)
          vol.at(i, j, k) = attenuation;
      }
  return vol;
}

ProjectionStack simulate_scan(const Volume3D& vol, const ConeBeamGeometry& geom,
                              const NoiseModel& noise) {
  ProjectionStack b = forward_project(vol, geom);
  if (noise.kind == NoiseKind::None)
    return b;
  if (!(noise.incident_photons > 0.0))
    throw InvalidSpec("incident photon count must be positive");
  const double i0 = noise.incident_photons;
  SplitMix64 keyer(noise.seed);
  const std::uint64_t key = keyer();
  double* data = b.data().data();
  parallel_for(b.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      SplitMix64 gen(key ^ (0x632be59bd9b4e019ULL * (std::uint64_t(i) + 1)));
      std::poisson_distribution<long long> counts(i0 * std::exp(-data[i]));
      const double c = double(std::max<long long>(1, counts(gen)));
      data[i] = -std::log(c / i0);
    }
  });
  return b;
}

} // namespace cbct
