#pragma once

// ===== Dual-multiplier subsidy mapping =====
//
// A fixed multiplier lambda prices the relative-spend constraint; each
// broadcast pair then gets the subsidy maximizing its own Lagrangian term.
// Under a linear completion lift the maximizer is closed-form:
//   kappa = (C + delta + 1/lambda) / 2,  b* = clamp(kappa * reward, 0, cap).

#include <cmath>
#include <concepts>
#include <vector>

#include "subsidy/core.hpp"

namespace subsidy {

struct DualParams {
  double lambda = 1.0;
  double cap_C = 0.1;
  double tolerance_delta = 0.0;

  void validate() const {
    if (!(lambda > 0.0))
      throw ValidationError("DualParams: lambda must be positive (kappa divides by it)");
    if (!(cap_C > 0.0 && cap_C < 1.0))
      throw ValidationError("DualParams: cap_C must lie in (0,1)");
    if (tolerance_delta < 0.0)
      throw ValidationError("DualParams: tolerance_delta must be >= 0");
  }

  double kappa() const {
    validate();
    return 0.5 * (cap_C + tolerance_delta + 1.0 / lambda);
  }
};

inline double closed_form_subsidy(const DualParams& d, double reward, double cap) {
  if (!(reward > 0.0)) throw ValidationError("closed_form_subsidy: reward must be positive");
  if (!(cap > 0.0)) throw ValidationError("closed_form_subsidy: cap must be positive");
  return std::clamp(d.kappa() * reward, 0.0, cap);
}

// Per-pair Lagrangian contribution under the linear completion lift p(b) = slope*b.
inline double pairwise_lagrangian_term(const DualParams& d, double reward, double slope,
                                       double b) {
  d.validate();
  const double boost = 1.0 + d.lambda * (d.cap_C + d.tolerance_delta);
  return boost * reward * slope * b - d.lambda * slope * b * b;
}

// ===== General completion models =====
//
// Requirements: prob is C1 and nondecreasing, concave, prob(0) = 0, and
// prob(cap) <= 1.  Under these the pair objective has at most one interior
// stationary point, so sign-change bisection is exact.

template <typename M>
concept CompletionModel = requires(const M& m, double b) {
  { m.prob(b) } -> std::convertible_to<double>;
  { m.dprob(b) } -> std::convertible_to<double>;
};

struct LinearCompletion {
  double slope = 0.0;
  double prob(double b) const { return slope * b; }
  double dprob(double) const { return slope; }
};

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Shifted so prob(0) = 0 exactly.
struct LogisticCompletion {
  double scale = 1.0;  // saturation level
  double mid = 1.0;    // inflection point in subsidy units
  double rate = 1.0;   // steepness

  double prob(double b) const {
    return scale * (sigmoid(rate * (b - mid)) - sigmoid(-rate * mid));
  }
  double dprob(double b) const {
    double s = sigmoid(rate * (b - mid));
    return scale * rate * s * (1.0 - s);
  }
};

template <CompletionModel M>
double general_subsidy(const DualParams& d, double reward, double cap, const M& model) {
  if (!(reward > 0.0)) throw ValidationError("general_subsidy: reward must be positive");
  if (!(cap > 0.0)) throw ValidationError("general_subsidy: cap must be positive");
  d.validate();

  if (std::abs(model.prob(0.0)) > 1e-12)
    throw InvariantError("general_subsidy: completion model must satisfy prob(0) = 0");
  for (int k = 0; k <= 16; ++k) {  // spot-check monotonicity on the feasible range
    if (model.dprob(cap * k / 16.0) < -1e-12)
      throw InvariantError("general_subsidy: completion model is decreasing somewhere");
  }

  const double boost = 1.0 + d.lambda * (d.cap_C + d.tolerance_delta);
  auto objective = [&](double b) {
    return (boost * reward - d.lambda * b) * model.prob(b);
  };
  auto foc = [&](double b) {
    return (boost * reward - d.lambda * b) * model.dprob(b) - d.lambda * model.prob(b);
  };

  double lo = 0.0, hi = cap, flo = foc(lo), fhi = foc(hi);
  double interior = -1.0;
  if (flo > 0.0 && fhi < 0.0) {
    for (int it = 0; it < 100; ++it) {
      double mid = 0.5 * (lo + hi);
      if (foc(mid) > 0.0)
        lo = mid;
      else
        hi = mid;
    }
    interior = 0.5 * (lo + hi);
  }

  // ties resolve toward zero spend
  double best_b = 0.0, best_v = objective(0.0);
  if (interior >= 0.0 && objective(interior) > best_v) {
    best_b = interior;
    best_v = objective(interior);
  }
  if (objective(cap) > best_v) best_b = cap;
  return best_b;
}

inline std::vector<double> map_window_subsidies(const DualParams& d,
                                                const std::vector<PairEconomics>& pairs) {
  d.validate();
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    p.validate();
    out.push_back(closed_form_subsidy(d, p.reward, p.cap));
  }
  return out;
}

}  // namespace subsidy
