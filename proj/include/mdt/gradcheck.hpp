#pragma once

// Finite-difference verification of reverse-mode gradients. Meant for the
// double instantiation with dropout disabled.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mdt/errors.hpp"
#include "mdt/optim.hpp"
#include "mdt/rng.hpp"
#include "mdt/tensor.hpp"

namespace mdt {

struct GradCheckOptions {
  double step = 1e-5;          // relative to max(1, |w|)
  double denom_floor = 1e-6;   // keeps relative error meaningful near zero gradients
  std::size_t max_entries_per_param = 0;  // 0 checks every entry; otherwise a seeded sample
  std::uint64_t sample_seed = 1;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

// fn builds a scalar from the current parameter values. Every trainable
// tensor in `params` is perturbed in place and restored afterwards.
template <class T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& fn, ParamList<T>& params, GradCheckOptions opt = {}) {
  const T base = fn().item();
  if (fn().item() != base) throw NumericError("grad_check: function is not deterministic");

  for (auto& p : params) p.tensor.zero_grad();
  fn().backward();

  GradCheckReport report;
  Rng rng(opt.sample_seed);
  for (auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    const std::size_t n = p.tensor.size();
    std::vector<std::size_t> entries(n);
    for (std::size_t i = 0; i < n; ++i) entries[i] = i;
    if (opt.max_entries_per_param && n > opt.max_entries_per_param) {
      rng.shuffle(entries);
      entries.resize(opt.max_entries_per_param);
      std::sort(entries.begin(), entries.end());
    }
    const std::vector<T> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    auto w = p.tensor.mutable_data();
    for (std::size_t i : entries) {
      const T orig = w[i];
      const T h = static_cast<T>(opt.step * std::max(1.0, std::abs(static_cast<double>(orig))));
      w[i] = orig + h;
      const double up = fn().item();
      w[i] = orig - h;
      const double down = fn().item();
      w[i] = orig;
      const double numeric = (up - down) / (2.0 * static_cast<double>(h));
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.denom_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace mdt
