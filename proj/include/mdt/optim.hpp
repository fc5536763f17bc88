#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mdt/errors.hpp"
#include "mdt/tensor.hpp"

namespace mdt {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
using ParamList = std::vector<NamedTensor<T>>;

// Linear warmup from 0 to peak_lr, then polynomial decay to end_lr at
// total_updates. power = 1 is linear decay.
struct LrSchedule {
  double peak_lr = 3e-5;
  double end_lr = 3e-7;
  std::int64_t warmup_updates = 500;
  std::int64_t total_updates = 3350;
  double power = 1.0;

  void validate() const {
    if (!(peak_lr > 0.0) || !(end_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (end_lr > peak_lr) throw ConfigError("end_lr must not exceed peak_lr");
    if (warmup_updates <= 0 || total_updates <= 0) throw ConfigError("update counts must be positive");
    if (warmup_updates >= total_updates) throw ConfigError("warmup_updates must be < total_updates");
    if (!(power > 0.0)) throw ConfigError("decay power must be positive");
  }
};

inline double lr_at(const LrSchedule& s, std::int64_t step) {
  if (step <= 0) return 0.0;
  if (step < s.warmup_updates) return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_updates);
  if (step >= s.total_updates) return s.end_lr;
  const double remaining = 1.0 - static_cast<double>(step - s.warmup_updates) /
                                     static_cast<double>(s.total_updates - s.warmup_updates);
  return s.end_lr + (s.peak_lr - s.end_lr) * std::pow(remaining, s.power);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

template <class T>
OptimizerState<T> make_optimizer_state(const ParamList<T>& params, AdamConfig config = {}) {
  OptimizerState<T> state;
  state.config = config;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.tensor.size(), T{0});
    state.second_moment.emplace_back(p.tensor.size(), T{0});
  }
  return state;
}

// One bias-corrected Adam update over every trainable parameter. Frozen
// parameters (requires_grad false) are skipped entirely. Throws NumericError
// naming the first parameter whose gradient is not finite; nothing is
// modified in that case.
template <class T>
void adam_step(ParamList<T>& params, OptimizerState<T>& state, double lr) {
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match params");
  if (lr < 0.0) throw ConfigError("adam_step: negative learning rate");
  for (const auto& p : params) {
    if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad())
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
  }
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& t = params[k].tensor;
    if (!t.requires_grad() || !t.has_grad()) continue;
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != t.size()) throw ShapeError("adam_step: moment buffer shape mismatch for '" + params[k].name + "'");
    const auto g = t.grad();
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

template <class T>
void zero_grads(ParamList<T>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace mdt
