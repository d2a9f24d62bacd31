#pragma once

// ===== Prefix-conditional denoising diffusion over day trajectories =====
//
// Rows 0..K-1 of the day matrix are observed history and are clamped to their
// true values at every step, both in the forward corruption and after each
// reverse update; only rows K..T-1 are ever noised or sampled.

#include <cmath>
#include <functional>
#include <vector>

#include "subsidy/core.hpp"

namespace subsidy {

// Arrays are indexed by step tau in 1..L; index 0 holds the conventions
// alpha_bar[0] = 1, beta[0] = 0 so ratio identities hold at the boundary.
struct NoiseSchedule {
  int L = 0;
  std::vector<double> beta, alpha, alpha_bar, beta_tilde;

  void validate() const {
    if (L < 1) throw ValidationError("NoiseSchedule: L must be >= 1");
    if (static_cast<int>(beta.size()) != L + 1 || static_cast<int>(alpha_bar.size()) != L + 1)
      throw InvariantError("NoiseSchedule: array sizes must be L+1");
    for (int t = 1; t <= L; ++t) {
      if (!(beta[t] > 0.0 && beta[t] <= 0.999))
        throw InvariantError("NoiseSchedule: beta outside (0, 0.999]");
      if (!(alpha_bar[t] > 0.0 && alpha_bar[t] < alpha_bar[t - 1]))
        throw InvariantError("NoiseSchedule: alpha_bar must decrease from 1");
    }
  }
};

// Squared-cosine schedule; betas are derived from consecutive ratios and
// clipped, then alpha_bar is rebuilt as the running product so that
// alpha_bar[tau] == prod alpha[1..tau] holds exactly.
inline NoiseSchedule cosine_schedule(int L, double s = 0.008) {
  if (L < 1) throw ValidationError("cosine_schedule: L must be >= 1");
  auto f = [&](double u) {
    double v = std::cos((u / L + s) / (1.0 + s) * M_PI / 2.0);
    return v * v;
  };
  NoiseSchedule sc;
  sc.L = L;
  sc.beta.assign(L + 1, 0.0);
  sc.alpha.assign(L + 1, 1.0);
  sc.alpha_bar.assign(L + 1, 1.0);
  sc.beta_tilde.assign(L + 1, 0.0);
  const double f0 = f(0.0);
  double prev_raw = 1.0;
  for (int t = 1; t <= L; ++t) {
    double raw = f(double(t)) / f0;
    double beta = 1.0 - raw / prev_raw;
    prev_raw = raw;
    sc.beta[t] = std::clamp(beta, 1e-8, 0.999);
    sc.alpha[t] = 1.0 - sc.beta[t];
    sc.alpha_bar[t] = sc.alpha_bar[t - 1] * sc.alpha[t];
    sc.beta_tilde[t] = sc.beta[t] * (1.0 - sc.alpha_bar[t - 1]) / (1.0 - sc.alpha_bar[t]);
  }
  sc.validate();
  return sc;
}

struct ForwardSample {
  Matrix z;    // corrupted day matrix, prefix rows untouched
  Matrix eps;  // the injected noise; zero on prefix rows
};

inline void check_tau(const NoiseSchedule& sc, int tau) {
  if (tau < 1 || tau > sc.L)
    throw ValidationError(str_printf("diffusion step %d outside [1, %d]", tau, sc.L));
}

inline ForwardSample forward_noise(const Matrix& x0, int K, int tau, const NoiseSchedule& sc,
                                   SeededRng& rng) {
  check_tau(sc, tau);
  if (K < 0 || K > x0.rows)
    throw ValidationError(str_printf("forward_noise: prefix %d outside [0, %d]", K, x0.rows));
  ForwardSample out;
  out.z = x0;
  out.eps = Matrix(x0.rows, x0.cols);
  const double sa = std::sqrt(sc.alpha_bar[tau]);
  const double sn = std::sqrt(1.0 - sc.alpha_bar[tau]);
  for (int t = K; t < x0.rows; ++t) {
    for (int c = 0; c < x0.cols; ++c) {
      double e = rng.normal();
      out.eps.at(t, c) = e;
      out.z.at(t, c) = sa * x0.at(t, c) + sn * e;
    }
  }
  return out;
}

// Noise estimate implied by a velocity prediction.  With v = sa*eps - sn*x0
// and z = sa*x0 + sn*eps, the identity eps = sn*z + sa*v holds exactly, so the
// z passthrough carries unit weight regardless of how good v_hat is; the
// learned term enters with weight sa, which vanishes at the noisiest steps.
inline Matrix implied_noise(const Matrix& z, const Matrix& v_hat, int tau,
                            const NoiseSchedule& sc) {
  check_tau(sc, tau);
  if (!z.same_shape(v_hat)) throw ValidationError("implied_noise: shape mismatch");
  const double sa = std::sqrt(sc.alpha_bar[tau]);
  const double sn = std::sqrt(1.0 - sc.alpha_bar[tau]);
  Matrix eps(z.rows, z.cols);
  for (size_t i = 0; i < z.data.size(); ++i) eps.data[i] = sn * z.data[i] + sa * v_hat.data[i];
  return eps;
}

// Clean-state estimate implied by a noise prediction.
inline Matrix implied_clean(const Matrix& z, const Matrix& eps_hat, int tau,
                            const NoiseSchedule& sc) {
  check_tau(sc, tau);
  if (!z.same_shape(eps_hat)) throw ValidationError("implied_clean: shape mismatch");
  const double sa = std::sqrt(sc.alpha_bar[tau]);
  const double sn = std::sqrt(1.0 - sc.alpha_bar[tau]);
  Matrix x(z.rows, z.cols);
  for (size_t i = 0; i < z.data.size(); ++i) x.data[i] = (z.data[i] - sn * eps_hat.data[i]) / sa;
  return x;
}

using DenoiserFn =
    std::function<Matrix(const Matrix& z, int tau, const std::vector<double>& ctx)>;

// Ancestral reverse sampling of rows K..T-1 given a K-row observed prefix.
// `deterministic` zeroes the per-step noise (the initial draw remains), which
// tests use to pin trajectories.  K == T returns an empty suffix untouched.
inline Matrix reverse_sample(const Matrix& prefix, const std::vector<double>& ctx,
                             const NoiseSchedule& sc, const DenoiserFn& denoiser, int T,
                             SeededRng& rng, bool deterministic = false) {
  sc.validate();
  const int K = prefix.rows, d = prefix.cols;
  if (K > T) throw ValidationError("reverse_sample: prefix longer than horizon");
  if (K == T) return Matrix(0, d);

  Matrix z(T, d);
  for (int t = 0; t < K; ++t)
    std::copy(prefix.row(t).begin(), prefix.row(t).end(), z.row(t).begin());
  for (int t = K; t < T; ++t)
    for (int c = 0; c < d; ++c) z.at(t, c) = rng.normal();

  for (int tau = sc.L; tau >= 1; --tau) {
    Matrix eps_hat = denoiser(z, tau, ctx);
    if (!eps_hat.same_shape(z))
      throw InvariantError("reverse_sample: denoiser returned wrong shape");
    const double inv_sqrt_a = 1.0 / std::sqrt(sc.alpha[tau]);
    const double coef = sc.beta[tau] / std::sqrt(1.0 - sc.alpha_bar[tau]);
    const double sig = tau > 1 ? std::sqrt(sc.beta_tilde[tau]) : 0.0;
    for (int t = K; t < T; ++t) {
      for (int c = 0; c < d; ++c) {
        double mu = inv_sqrt_a * (z.at(t, c) - coef * eps_hat.at(t, c));
        double xi = (tau > 1 && !deterministic) ? rng.normal() : 0.0;
        z.at(t, c) = mu + sig * xi;
      }
    }
    for (int t = 0; t < K; ++t)  // hard re-clamp of the observed history
      std::copy(prefix.row(t).begin(), prefix.row(t).end(), z.row(t).begin());
  }

  Matrix suffix(T - K, d);
  for (int t = K; t < T; ++t)
    std::copy(z.row(t).begin(), z.row(t).end(), suffix.row(t - K).begin());
  return suffix;
}

}  // namespace subsidy
