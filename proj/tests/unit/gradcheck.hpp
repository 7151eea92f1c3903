#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mtpbias/rng.hpp"
#include "mtpbias/tensor.hpp"

// Central finite-difference oracle. Runs in double so the eps = 1e-4 stencil
// resolves gradients well below the 1e-3 relative gate; the checked code is
// the same template the float build instantiates.
namespace gradcheck {

struct Failure {
  std::string where;
  double analytic, numeric;
};

template <typename LossFn>
std::vector<Failure> compare(std::vector<mtpbias::Tensor<double>> params,
                             const std::vector<std::string>& names, LossFn&& loss_fn,
                             int max_elems_per_param = -1, uint64_t seed = 17,
                             double eps = 1e-4, double rtol = 1e-3) {
  std::vector<Failure> failures;
  for (auto& p : params) p.zero_grad();
  mtpbias::Tensor<double> loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params)
    analytic.emplace_back(p.has_grad() ? p.grad_vec()
                                       : std::vector<double>(static_cast<size_t>(p.size()), 0.0));

  mtpbias::Rng rng(seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    std::vector<int64_t> elems;
    if (max_elems_per_param <= 0 || p.size() <= max_elems_per_param) {
      for (int64_t i = 0; i < p.size(); ++i) elems.push_back(i);
    } else {
      for (int e = 0; e < max_elems_per_param; ++e)
        elems.push_back(static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(p.size()))));
    }
    for (int64_t i : elems) {
      const double orig = p.data()[i];
      p.data()[i] = orig + eps;
      const double up = loss_fn().item();
      p.data()[i] = orig - eps;
      const double down = loss_fn().item();
      p.data()[i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[pi][static_cast<size_t>(i)];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-6});
      if (std::fabs(a - numeric) / denom > rtol)
        failures.push_back({names[pi] + "[" + std::to_string(i) + "]", a, numeric});
    }
  }
  return failures;
}

inline mtpbias::Tensor<double> random_tensor(std::vector<int> shape, mtpbias::Rng& rng,
                                             double scale = 1.0, bool requires_grad = true) {
  auto t = mtpbias::Tensor<double>::zeros(shape, requires_grad);
  for (int64_t i = 0; i < t.size(); ++i)
    t.data()[i] = scale * rng.next_gaussian();
  return t;
}

}  // namespace gradcheck
