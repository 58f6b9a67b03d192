#pragma once

#include <cstdint>

#include "cbct/geometry.hpp"
#include "cbct/volume.hpp"

namespace cbct {

struct PhantomSpec {
  std::size_t n_ellipsoids = 8;
  double attenuation_min = 0.01;  // mm^-1
  double attenuation_max = 0.05;
  double size_min = 0.3;  // semi-axis length, mm
  double size_max = 2.0;
  // Carve n_ellipsoids / 2 smaller zero-valued voids after superposition.
  bool voids = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// Sum of randomly placed and rotated uniform ellipsoids, each fully inside
// the voxel grid (its bounding sphere is). Evaluated at voxel centres.
Volume3D make_ellipsoid_phantom(Dims3 dims, double voxel_size, const PhantomSpec& spec);

// Uniform ball centred in the grid.
Volume3D make_ball_phantom(Dims3 dims, double voxel_size, double radius, double attenuation);

enum class NoiseKind { None, PoissonTransmission };

struct NoiseModel {
  NoiseKind kind = NoiseKind::None;
  double incident_photons = 1e5;  // I0
  std::uint64_t seed = 0;
};

// Line integrals p = A vol. With Poisson noise, counts ~ Poisson(I0 exp(-p))
// are drawn per pixel from a generator keyed on (seed, pixel index), clamped
// to >= 1, and returned as -ln(counts / I0).
ProjectionStack simulate_scan(const Volume3D& vol, const ConeBeamGeometry& geom,
                              const NoiseModel& noise);

// SplitMix64 stream; satisfies UniformRandomBitGenerator.
class SplitMix64 {
public:
  using result_type = std::uint64_t;
  explicit SplitMix64(std::uint64_t state) : state_(state) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

private:
  std::uint64_t state_;
};

} // namespace cbct
