#include "cbct/adam.hpp"

#include <cmath>

#include "cbct/error.hpp"

namespace cbct {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamHyper& h) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw DimensionMismatch("adam_step: parameter, gradient and moment sizes differ");
  ++state.step;
  const double t = double(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= h.learning_rate * mhat / (std::sqrt(vhat) + h.epsilon);
  }
}

} // namespace cbct
