#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "gatecrush/common.hpp"
#include "gatecrush/tensor.hpp"

namespace gatecrush::testing {

struct GradCheckReport {
  double max_rel = 0.0;
  int checked = 0;
  int skipped_kinks = 0;
};

// Central finite differences against analytic gradients on randomly sampled
// coordinates. The loss builder must rebuild the graph from the same leaf
// tensors each call (their data is perturbed in place). Coordinates whose
// h and 2h difference quotients disagree are near a kink and are skipped.
inline GradCheckReport gradcheck(std::vector<Tensor<double>> params,
                                 const std::function<Tensor<double>()>& build_loss, int n_coords,
                                 Rng& rng, double rtol = 1e-6, double h = 1e-5) {
  auto loss = build_loss();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    check(p.has_grad(), "gradcheck: parameter received no gradient");
    analytic.emplace_back(p.grad().begin(), p.grad().end());
  }

  int64_t total = 0;
  for (auto& p : params) total += p.numel();

  auto eval_at = [&](Tensor<double>& p, size_t idx, double value) {
    const double saved = p.data_vec()[idx];
    p.data_vec()[idx] = value;
    const double out = build_loss().item();
    p.data_vec()[idx] = saved;
    return out;
  };

  GradCheckReport rep;
  for (int c = 0; c < n_coords; ++c) {
    int64_t flat = rng.uniform_int(0, total - 1);
    size_t pi = 0;
    while (flat >= params[pi].numel()) {
      flat -= params[pi].numel();
      ++pi;
    }
    auto& p = params[pi];
    const size_t idx = static_cast<size_t>(flat);
    const double x = p.data_vec()[idx];
    const double fd = (eval_at(p, idx, x + h) - eval_at(p, idx, x - h)) / (2.0 * h);
    const double fd2 =
        (eval_at(p, idx, x + 2.0 * h) - eval_at(p, idx, x - 2.0 * h)) / (4.0 * h);
    if (std::abs(fd - fd2) > 1e-3 * std::max(1.0, std::abs(fd))) {
      ++rep.skipped_kinks;
      continue;
    }
    const double an = analytic[pi][idx];
    const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
    rep.max_rel = std::max(rep.max_rel, rel);
    ++rep.checked;
    if (rel >= rtol) {
      throw Error("gradcheck failed: param " + std::to_string(pi) + " coord " +
                  std::to_string(idx) + " analytic " + std::to_string(an) + " fd " +
                  std::to_string(fd) + " rel " + std::to_string(rel));
    }
  }
  check(rep.skipped_kinks <= n_coords / 10, "gradcheck: too many kink skips");
  return rep;
}

}  // namespace gatecrush::testing
