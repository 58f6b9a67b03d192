#include "cbct/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cbct/error.hpp"
#include "cbct/parallel.hpp"
#include "cbct/patches.hpp"

namespace cbct {

void TrainConfig::validate() const {
  if (batch_size == 0)
    throw InvalidSpec("batch_size must be positive");
  if (patch_size == 0 || patch_stride == 0)
    throw InvalidSpec("patch size and stride must be positive");
  if (!(adam.learning_rate > 0.0) || !(adam.epsilon > 0.0))
    throw InvalidSpec("learning rate and epsilon must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw InvalidSpec("Adam betas must lie in [0, 1)");
}

double pooled_percentile(const std::vector<Volume3D>& vols, double q) {
  std::vector<double> all;
  for (const auto& v : vols)
    all.insert(all.end(), v.data().begin(), v.data().end());
  if (all.empty())
    throw InvalidSpec("percentile of an empty set");
  const std::size_t k = std::size_t(std::floor(q * double(all.size() - 1)));
  std::nth_element(all.begin(), all.begin() + std::ptrdiff_t(k), all.end());
  return all[k];
}

TrainResult train_stage(const std::vector<Volume3D>& inputs, const std::vector<Volume3D>& targets,
                        const TrainConfig& cfg, const DenoiserParams& init) {
  cfg.validate();
  if (inputs.empty())
    throw InvalidSpec("empty patch set: no training volumes");
  TrainResult result{init, 0.0, {}};
  if (cfg.epochs == 0)
    return result;

  double scale = 1.0;
  if (cfg.normalization == NormalizationPolicy::Percentile999) {
    scale = pooled_percentile(inputs, 0.999);
    if (!(scale > 0.0))
      scale = 1.0;
  }
  const PatchSet set = make_patch_set(inputs, targets, cfg.patch_size, cfg.patch_stride, scale);
  const std::size_t n = set.count();
  if (n == 0)
    throw InvalidSpec("empty patch set");
  if (cfg.batch_size > n)
    throw InvalidSpec("batch_size " + std::to_string(cfg.batch_size) + " exceeds the " +
                      std::to_string(n) + " available patches");

  DenoiserParams& params = result.params;
  params.norm_scale = scale;
  const std::size_t p = set.p, pp = p * p;
  auto input = [&](std::size_t i) { return std::span(set.inputs).subspan(i * pp, pp); };
  auto target = [&](std::size_t i) { return std::span(set.targets).subspan(i * pp, pp); };

  {
    std::vector<double> losses(n);
    parallel_tasks(n, [&](std::size_t i) {
      losses[i] = mse_loss(unet_forward(params, input(i), p, p), target(i));
    });
    result.initial_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / double(n);
  }

  std::mt19937_64 rng(cfg.seed);
  AdamState state(params.values.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      std::vector<std::vector<double>> grads(count);
      std::vector<double> losses(count);
      parallel_tasks(count, [&](std::size_t b) {
        const std::size_t i = order[start + b];
        losses[b] = unet_mse_gradient(params, input(i), target(i), p, p, 1.0 / double(count),
                                      grads[b]);
      });
      std::vector<double> total(params.values.size(), 0.0);
      for (std::size_t b = 0; b < count; ++b) {
        for (std::size_t j = 0; j < total.size(); ++j)
          total[j] += grads[b][j];
        epoch_loss += losses[b];
      }
      adam_step(params.values, total, state, cfg.adam);
    }
    result.epoch_loss.push_back(epoch_loss / double(n));
  }
  require_finite(params.values, "trained denoiser parameters");
  return result;
}

} // namespace cbct
