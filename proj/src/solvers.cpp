#include "cbct/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "cbct/error.hpp"
#include "cbct/metrics.hpp"
#include "cbct/projector.hpp"

namespace cbct {

namespace {

void axpy(double a, const std::vector<double>& x, std::vector<double>& y) {
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] += a * x[i];
}

double half_sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return 0.5 * s;
}

} // namespace

double data_fidelity(const Volume3D& x, const ProjectionStack& b, const ConeBeamGeometry& geom) {
  return half_sq_dist(forward_project(x, geom).data(), b.data());
}

double hqs_objective(const Volume3D& x, const Volume3D& z, const ProjectionStack& b,
                     const ConeBeamGeometry& geom, double beta) {
  return data_fidelity(x, b, geom) + beta * half_sq_dist(x.data(), z.data());
}

Volume3D cg_normal_solve(const Volume3D& z, const ProjectionStack& b, const ConeBeamGeometry& geom,
                         double beta, std::size_t cg_iters, const Volume3D& x0, CgReport* report) {
  if (!(beta > 0.0))
    throw InvalidSpec("beta must be positive");
  check_volume(z, geom);
  check_volume(x0, geom);
  check_projections(b, geom);
  require_finite(z.data(), "denoised volume z");
  require_finite(x0.data(), "initial volume x0");
  require_finite(b.data(), "measurements b");

  Volume3D x = x0;
  std::vector<double> ax = forward_project(x, geom).data();

  // r = A^T (b - Ax) + beta (z - x)
  ProjectionStack misfit = b;
  for (std::size_t i = 0; i < ax.size(); ++i)
    misfit.data()[i] = b.data()[i] - ax[i];
  std::vector<double> r = back_project(misfit, geom).data();
  for (std::size_t i = 0; i < r.size(); ++i)
    r[i] += beta * (z.data()[i] - x.data()[i]);

  auto objective = [&] {
    return half_sq_dist(ax, b.data()) + beta * half_sq_dist(x.data(), z.data());
  };
  if (report) {
    report->objective.assign(1, objective());
    report->residual.assign(1, norm2(r));
  }

  std::vector<double> p = r;
  double rr = dot(r, r);
  ProjectionStack ap_stack = make_projections(geom);
  Volume3D p_vol = make_volume(geom);
  for (std::size_t it = 0; it < cg_iters && rr > 0.0; ++it) {
    p_vol.data() = p;
    ap_stack = forward_project(p_vol, geom);
    const std::vector<double>& ap = ap_stack.data();
    std::vector<double> mp = back_project(ap_stack, geom).data();
    axpy(beta, p, mp);
    const double pmp = dot(ap, ap) + beta * dot(p, p);
    if (!(pmp > 0.0))
      break;
    const double alpha = rr / pmp;
    axpy(alpha, p, x.data());
    axpy(alpha, ap, ax);
    axpy(-alpha, mp, r);
    const double rr_next = dot(r, r);
    const double gamma = rr_next / rr;
    for (std::size_t i = 0; i < p.size(); ++i)
      p[i] = r[i] + gamma * p[i];
    rr = rr_next;
    if (report) {
      report->objective.push_back(objective());
      report->residual.push_back(std::sqrt(rr));
    }
  }
  require_finite(x.data(), "CG iterate");
  return x;
}

void HQSConfig::validate() const {
  if (!(beta > 0.0))
    throw InvalidSpec("HQS beta must be positive");
  if (cg_iters < 1)
    throw InvalidSpec("HQS cg_iters must be at least 1");
  if (denoiser_ids.size() != K)
    throw InvalidSpec("HQS needs exactly K denoiser ids (K = " + std::to_string(K) + ", got " +
                      std::to_string(denoiser_ids.size()) + ")");
  if (weight_mode == WeightMode::Shared)
    for (const auto& id : denoiser_ids)
      if (id != denoiser_ids.front())
        throw InvalidSpec("shared weight mode requires identical denoiser ids");
}

std::vector<std::string> default_denoiser_ids(std::size_t K, WeightMode mode) {
  std::vector<std::string> ids;
  for (std::size_t n = 1; n <= K; ++n)
    ids.push_back(mode == WeightMode::Shared ? "shared" : "stage" + std::to_string(n));
  return ids;
}

HQSResult hqs_reconstruct(const ProjectionStack& b, const ConeBeamGeometry& geom,
                          const HQSConfig& cfg, const DenoiserSet& denoisers,
                          const Volume3D& x_init, TraceReference reference,
                          const std::function<void(std::size_t, const Volume3D&)>& on_iterate) {
  cfg.validate();
  check_volume(x_init, geom);
  check_projections(b, geom);
  std::vector<std::string> missing;
  for (const auto& id : cfg.denoiser_ids)
    if (!denoisers.contains(id) && std::find(missing.begin(), missing.end(), id) == missing.end())
      missing.push_back(id);
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing)
      list += (list.empty() ? "" : ", ") + id;
    throw InvalidSpec("missing stage denoiser(s): " + list);
  }

  HQSResult result{x_init, {}};
  Volume3D& x = result.volume;
  for (std::size_t n = 0; n < cfg.K; ++n) {
    const Volume3D z = denoisers.at(cfg.denoiser_ids[n])(x);
    if (!z.same_shape(x))
      throw DimensionMismatch("denoiser changed the volume shape");
    IterationRecord rec;
    rec.iteration = n + 1;
    rec.objective_before_dc = hqs_objective(x, z, b, geom, cfg.beta);
    CgReport cg;
    x = cg_normal_solve(z, b, geom, cfg.beta, cfg.cg_iters, x, &cg);
    rec.objective_after_dc = hqs_objective(x, z, b, geom, cfg.beta);
    rec.data_fidelity = data_fidelity(x, b, geom);
    rec.cg_residuals = std::move(cg.residual);
    rec.cg_objectives = std::move(cg.objective);
    if (reference.volume)
      rec.psnr = psnr(x.data(), reference.volume->data(), reference.data_range);
    result.trace.iterations.push_back(std::move(rec));
    if (on_iterate)
      on_iterate(n + 1, x);
  }
  if (cfg.clamp_output)
    for (double& v : x.data())
      v = std::max(v, 0.0);
  return result;
}

std::string trace_to_csv(const ReconTrace& trace) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "iteration,objective_before_dc,objective_after_dc,data_fidelity,psnr\n";
  for (const auto& r : trace.iterations) {
    out << r.iteration << ',' << r.objective_before_dc << ',' << r.objective_after_dc << ','
        << r.data_fidelity << ',';
    if (r.psnr) {
      if (std::isinf(*r.psnr))
        out << "inf";
      else
        out << *r.psnr;
    }
    out << '\n';
  }
  return out.str();
}

std::vector<double> gradient_energy_terms(const Volume3D& x) {
  const Dims3 d = x.dims();
  std::vector<double> g(3 * x.size(), 0.0);
  for (std::size_t k = 0; k < d.nz; ++k)
    for (std::size_t j = 0; j < d.ny; ++j)
      for (std::size_t i = 0; i < d.nx; ++i) {
        const std::size_t idx = x.index(i, j, k);
        const double v = x.data()[idx];
        if (i + 1 < d.nx)
          g[3 * idx] = x.at(i + 1, j, k) - v;
        if (j + 1 < d.ny)
          g[3 * idx + 1] = x.at(i, j + 1, k) - v;
        if (k + 1 < d.nz)
          g[3 * idx + 2] = x.at(i, j, k + 1) - v;
      }
  return g;
}

double gradient_energy(const Volume3D& x) {
  const auto g = gradient_energy_terms(x);
  return dot(g, g);
}

Volume3D apply_gtg(const Volume3D& x) {
  const Dims3 d = x.dims();
  const auto g = gradient_energy_terms(x);
  Volume3D out(d, x.voxel_size());
  // G^T of a forward difference: each difference subtracts at its base
  // voxel and adds at its neighbour.
  for (std::size_t k = 0; k < d.nz; ++k)
    for (std::size_t j = 0; j < d.ny; ++j)
      for (std::size_t i = 0; i < d.nx; ++i) {
        const std::size_t idx = x.index(i, j, k);
        if (i + 1 < d.nx) {
          out.data()[idx] -= g[3 * idx];
          out.at(i + 1, j, k) += g[3 * idx];
        }
        if (j + 1 < d.ny) {
          out.data()[idx] -= g[3 * idx + 1];
          out.at(i, j + 1, k) += g[3 * idx + 1];
        }
        if (k + 1 < d.nz) {
          out.data()[idx] -= g[3 * idx + 2];
          out.at(i, j, k + 1) += g[3 * idx + 2];
        }
      }
  return out;
}

Volume3D quadratic_mbir_baseline(const ProjectionStack& b, const ConeBeamGeometry& geom,
                                 double lambda, std::size_t iters, const Volume3D& x0) {
  if (!(lambda >= 0.0))
    throw InvalidSpec("lambda must be non-negative");
  check_volume(x0, geom);
  check_projections(b, geom);
  require_finite(b.data(), "measurements b");
  require_finite(x0.data(), "initial volume x0");

  auto apply = [&](const Volume3D& v) {
    Volume3D out = back_project(forward_project(v, geom), geom);
    if (lambda > 0.0)
      axpy(lambda, apply_gtg(v).data(), out.data());
    return out;
  };

  Volume3D x = x0;
  std::vector<double> r = back_project(b, geom).data();
  axpy(-1.0, apply(x).data(), r);
  Volume3D p(x.dims(), x.voxel_size(), r);
  double rr = dot(r, r);
  for (std::size_t it = 0; it < iters && rr > 0.0; ++it) {
    const Volume3D mp = apply(p);
    const double pmp = dot(p.data(), mp.data());
    if (!(pmp > 0.0))
      break;
    const double alpha = rr / pmp;
    axpy(alpha, p.data(), x.data());
    axpy(-alpha, mp.data(), r);
    const double rr_next = dot(r, r);
    const double gamma = rr_next / rr;
    for (std::size_t i = 0; i < r.size(); ++i)
      p.data()[i] = r[i] + gamma * p.data()[i];
    rr = rr_next;
  }
  require_finite(x.data(), "baseline iterate");
  return x;
}

} // namespace cbct
