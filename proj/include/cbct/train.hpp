#pragma once

#include <cstdint>
#include <vector>

#include "cbct/adam.hpp"
#include "cbct/unet.hpp"
#include "cbct/volume.hpp"

namespace cbct {

enum class NormalizationPolicy {
  // Scale by the 99.9th percentile of all training input voxels.
  Percentile999,
  None,
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  AdamHyper adam{};
  std::size_t patch_size = 64;
  std::size_t patch_stride = 64;
  std::uint64_t seed = 0;
  NormalizationPolicy normalization = NormalizationPolicy::Percentile999;

  void validate() const;
};

struct TrainResult {
  DenoiserParams params;
  double initial_loss = 0.0;       // mean patch MSE before the first update
  std::vector<double> epoch_loss;  // mean per-patch MSE seen during each epoch
};

// q-quantile (nearest rank) of the pooled voxel values.
double pooled_percentile(const std::vector<Volume3D>& vols, double q);

// Trains one stage denoiser on aligned (input, target) volumes: axial patch
// pairs on a fixed grid, shuffled every epoch with cfg.seed, mean-squared
// error minimised with Adam. Only `init` is read; no other stage's
// parameters are touched. epochs == 0 returns `init` unchanged.
TrainResult train_stage(const std::vector<Volume3D>& inputs, const std::vector<Volume3D>& targets,
                        const TrainConfig& cfg, const DenoiserParams& init);

} // namespace cbct
