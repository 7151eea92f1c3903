#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mtpbias/tensor.hpp"

namespace mtpbias {

// Bias-corrected Adam with linear learning-rate warmup. Moment buffers are
// held per parameter, in the order the parameters are registered.
template <typename S>
struct AdamState {
  int64_t step_count = 0;
  std::vector<std::vector<S>> first_moment;
  std::vector<std::vector<S>> second_moment;
  S learning_rate = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S epsilon = S(1e-8);
  int64_t warmup_steps = 0;

  void init(const std::vector<Tensor<S>>& params) {
    first_moment.clear();
    second_moment.clear();
    for (const auto& p : params) {
      first_moment.emplace_back(static_cast<size_t>(p.size()), S(0));
      second_moment.emplace_back(static_cast<size_t>(p.size()), S(0));
    }
  }

  // Learning rate scaled linearly over the warmup window, constant after.
  S effective_lr(int64_t step) const {
    if (warmup_steps <= 0 || step >= warmup_steps) return learning_rate;
    return learning_rate * static_cast<S>(step) / static_cast<S>(warmup_steps);
  }
};

template <typename S>
void adam_step(std::vector<Tensor<S>>& params, AdamState<S>& state) {
  if (state.first_moment.size() != params.size())
    throw DimensionError("adam_step: state holds " + std::to_string(state.first_moment.size()) +
                         " moments for " + std::to_string(params.size()) + " parameters");
  state.step_count += 1;
  const S t = static_cast<S>(state.step_count);
  const S lr = state.effective_lr(state.step_count);
  const S bc1 = S(1) - std::pow(state.beta1, t);
  const S bc2 = S(1) - std::pow(state.beta2, t);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != static_cast<size_t>(p.size()))
      throw DimensionError("adam_step: moment shape mismatch at parameter " + std::to_string(i));
    const S* g = p.has_grad() ? p.grad_vec().data() : nullptr;
    S* w = p.data();
    for (size_t j = 0; j < m.size(); ++j) {
      const S gj = g ? g[j] : S(0);
      m[j] = state.beta1 * m[j] + (S(1) - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (S(1) - state.beta2) * gj * gj;
      const S mhat = m[j] / bc1;
      const S vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace mtpbias
