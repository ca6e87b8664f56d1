#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mvtrack/tensor.hpp"

namespace testutil {

inline std::mt19937_64 rng(uint64_t seed) { return std::mt19937_64(seed); }

template <typename T>
mvtrack::TensorT<T> random_tensor(std::vector<int64_t> shape, std::mt19937_64& gen,
                                  double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
  mvtrack::TensorT<T> t(std::move(shape), requires_grad);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = T(dist(gen));
  return t;
}

// Central-difference check of d(loss)/d(each element of each tensor in
// `wrt`). `make_loss` must rebuild the graph from the tensors' current data.
// Returns the max elementwise relative error.
inline double fd_max_rel_err(const std::function<mvtrack::TensorD()>& make_loss,
                             std::vector<mvtrack::TensorD*> wrt, double h = 1e-4) {
  for (auto* t : wrt) t->zero_grad();
  auto loss = make_loss();
  mvtrack::backward(loss);
  double worst = 0;
  for (auto* t : wrt) {
    const std::vector<double> analytic = t->has_grad()
                                             ? t->grad()
                                             : std::vector<double>(t->data().size(), 0.0);
    for (size_t i = 0; i < t->data().size(); ++i) {
      double keep = t->data()[i];
      t->data()[i] = keep + h;
      double lp = make_loss().item();
      t->data()[i] = keep - h;
      double lm = make_loss().item();
      t->data()[i] = keep;
      double numeric = (lp - lm) / (2 * h);
      double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-5});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace testutil
