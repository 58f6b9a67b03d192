#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cbct/geometry.hpp"
#include "cbct/solvers.hpp"
#include "cbct/train.hpp"
#include "cbct/unet.hpp"

namespace cbct {

// One training scan: sparse measurements, the initial iterate x_0 and the
// ground-truth target.
struct TrainingSample {
  ProjectionStack sparse;
  Volume3D x_init;
  Volume3D target;
};

struct StageLog {
  std::size_t stage = 0;  // 1-based
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;
};

// Unshared: params[n] is stage n+1. Shared: a single entry used by every stage.
struct TrainedDenoisers {
  WeightMode mode = WeightMode::Unshared;
  std::vector<DenoiserParams> params;
  std::vector<StageLog> logs;
};

// Stage-sequential training: stage n is trained to completion on the
// current iterates x_{n-1}, rounded to float32 (the stored precision), and
// every training iterate is advanced through z = D_n(x), x = DC(z) before
// stage n+1 starts. Shared mode keeps training one parameter set.
TrainedDenoisers train_unrolled(const std::vector<TrainingSample>& samples,
                                const ConeBeamGeometry& sparse_geom, const HQSConfig& hqs,
                                const TrainConfig& train, const UNetArch& arch,
                                std::uint64_t seed,
                                const std::function<void(const std::string&)>& log = {});

// Denoiser callbacks keyed by the ids HQS expects for this weight mode.
DenoiserSet make_denoiser_set(const TrainedDenoisers& trained);

// Derived per-purpose seed, so stages and phantoms draw independent streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

} // namespace cbct
