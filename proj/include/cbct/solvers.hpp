#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cbct/geometry.hpp"
#include "cbct/volume.hpp"

namespace cbct {

// Per-iteration record of a conjugate-gradient run. Index 0 holds the
// state at the starting point.
struct CgReport {
  std::vector<double> objective;  // 0.5|Ax-b|^2 + 0.5 beta |x-z|^2
  std::vector<double> residual;   // |rhs - Mx|
};

// Runs cg_iters conjugate-gradient steps on
//   (A^T A + beta I) x = A^T b + beta z
// from x0. Stops early only if the residual becomes exactly zero.
Volume3D cg_normal_solve(const Volume3D& z, const ProjectionStack& b, const ConeBeamGeometry& geom,
                         double beta, std::size_t cg_iters, const Volume3D& x0,
                         CgReport* report = nullptr);

// 0.5|Ax - b|^2 + 0.5 beta |x - z|^2.
double hqs_objective(const Volume3D& x, const Volume3D& z, const ProjectionStack& b,
                     const ConeBeamGeometry& geom, double beta);
double data_fidelity(const Volume3D& x, const ProjectionStack& b, const ConeBeamGeometry& geom);

enum class WeightMode { Shared, Unshared };

struct HQSConfig {
  std::size_t K = 3;
  double beta = 5e-2;
  std::size_t cg_iters = 10;
  WeightMode weight_mode = WeightMode::Unshared;
  // One entry per outer iteration; all equal in shared mode.
  std::vector<std::string> denoiser_ids;
  // Clamp negative values of the returned volume only.
  bool clamp_output = false;

  void validate() const;
};

// Default ids "stage1".."stageK" (unshared) or K copies of "shared".
std::vector<std::string> default_denoiser_ids(std::size_t K, WeightMode mode);

using Denoiser = std::function<Volume3D(const Volume3D&)>;
using DenoiserSet = std::map<std::string, Denoiser>;

struct IterationRecord {
  std::size_t iteration = 0;  // 1-based
  double objective_before_dc = 0.0;
  double objective_after_dc = 0.0;
  double data_fidelity = 0.0;
  std::vector<double> cg_residuals;
  std::vector<double> cg_objectives;
  std::optional<double> psnr;
};

struct ReconTrace {
  std::vector<IterationRecord> iterations;
};

struct HQSResult {
  Volume3D volume;
  ReconTrace trace;
};

// Optional PSNR tracking against a reference volume.
struct TraceReference {
  const Volume3D* volume = nullptr;
  double data_range = 0.0;
};

// Learned half-quadratic splitting: for n = 1..K,
//   z_n = D_n(x_{n-1}),  x_n = cg_normal_solve(z_n, b, beta, cg_iters, x_{n-1}).
// With K = 0 the initial volume is returned unchanged.
HQSResult hqs_reconstruct(const ProjectionStack& b, const ConeBeamGeometry& geom,
                          const HQSConfig& cfg, const DenoiserSet& denoisers,
                          const Volume3D& x_init, TraceReference reference = {},
                          const std::function<void(std::size_t, const Volume3D&)>& on_iterate = {});

// CSV with columns iteration,objective_before_dc,objective_after_dc,data_fidelity,psnr.
std::string trace_to_csv(const ReconTrace& trace);

// 3D forward-difference gradient G (zero difference across the far
// boundary of each axis) and G^T G.
std::vector<double> gradient_energy_terms(const Volume3D& x);
double gradient_energy(const Volume3D& x);
Volume3D apply_gtg(const Volume3D& x);

// Conjugate gradient on (A^T A + lambda G^T G) x = A^T b from x0.
Volume3D quadratic_mbir_baseline(const ProjectionStack& b, const ConeBeamGeometry& geom,
                                 double lambda, std::size_t iters, const Volume3D& x0);

} // namespace cbct
