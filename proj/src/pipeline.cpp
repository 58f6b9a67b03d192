#include "cbct/pipeline.hpp"

#include "cbct/error.hpp"
#include "cbct/phantom.hpp"

namespace cbct {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  SplitMix64 mix(seed ^ (0xd1b54a32d192ed03ULL * (stream + 1)));
  return mix();
}

TrainedDenoisers train_unrolled(const std::vector<TrainingSample>& samples,
                                const ConeBeamGeometry& sparse_geom, const HQSConfig& hqs,
                                const TrainConfig& train, const UNetArch& arch,
                                std::uint64_t seed,
                                const std::function<void(const std::string&)>& log) {
  hqs.validate();
  train.validate();
  if (samples.empty())
    throw InvalidSpec("no training samples");
  std::vector<Volume3D> x, targets;
  for (const auto& s : samples) {
    check_projections(s.sparse, sparse_geom);
    check_volume(s.x_init, sparse_geom);
    check_volume(s.target, sparse_geom);
    x.push_back(s.x_init);
    targets.push_back(s.target);
  }

  TrainedDenoisers out;
  out.mode = hqs.weight_mode;
  DenoiserParams current = init_denoiser(arch, derive_seed(seed, 100));
  for (std::size_t n = 1; n <= hqs.K; ++n) {
    TrainConfig cfg = train;
    cfg.seed = derive_seed(seed, 200 + n);
    const DenoiserParams init =
        hqs.weight_mode == WeightMode::Shared ? current : init_denoiser(arch, derive_seed(seed, 100 + n));
    TrainResult r = train_stage(x, targets, cfg, init);
    round_to_float32(r.params);
    out.logs.push_back({n, r.initial_loss, r.epoch_loss});
    if (log)
      log("stage " + std::to_string(n) + ": loss " + std::to_string(r.initial_loss) + " -> " +
          (r.epoch_loss.empty() ? std::string("n/a") : std::to_string(r.epoch_loss.back())));
    current = r.params;
    if (hqs.weight_mode == WeightMode::Unshared)
      out.params.push_back(r.params);
    if (n == hqs.K)
      break;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Volume3D z = apply_denoiser_volume(current, x[i]);
      x[i] = cg_normal_solve(z, samples[i].sparse, sparse_geom, hqs.beta, hqs.cg_iters, x[i]);
    }
  }
  if (hqs.weight_mode == WeightMode::Shared)
    out.params.push_back(current);
  return out;
}

DenoiserSet make_denoiser_set(const TrainedDenoisers& trained) {
  DenoiserSet set;
  if (trained.mode == WeightMode::Shared) {
    if (trained.params.size() != 1)
      throw InvalidSpec("shared mode expects exactly one parameter set");
    const DenoiserParams p = trained.params.front();
    set["shared"] = [p](const Volume3D& v) { return apply_denoiser_volume(p, v); };
    return set;
  }
  for (std::size_t n = 0; n < trained.params.size(); ++n) {
    const DenoiserParams p = trained.params[n];
    set["stage" + std::to_string(n + 1)] = [p](const Volume3D& v) {
      return apply_denoiser_volume(p, v);
    };
  }
  return set;
}

} // namespace cbct
