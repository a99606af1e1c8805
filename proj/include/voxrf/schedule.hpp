#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "voxrf/common.hpp"

namespace voxrf {

enum class SigmaMode {
  kPaper,      // Sigma_t = beta_t^2 / (2 alpha_t (1 - alpha_bar_t))
  kPosterior,  // beta_tilde_t = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t
};

// All per-step diffusion coefficients, derived once at 64-bit and immutable.
// Arrays are indexed by t-1 for t in 1..T.
struct NoiseSchedule {
  int T = 0;
  SigmaMode sigma_mode = SigmaMode::kPaper;
  std::vector<double> beta;       // noise variance schedule
  std::vector<double> alpha;      // 1 - beta_t
  std::vector<double> alpha_bar;  // running product of alpha
  std::vector<double> a;          // 1 / sqrt(alpha_t)
  std::vector<double> b;          // beta_t / sqrt(1 - alpha_bar_t)
  std::vector<double> sigma2;     // reverse-step variance (per sigma_mode)
  std::vector<double> omega;      // alpha_bar_t^2, rendering-loss weight

  double beta_at(int t) const { return beta[check(t)]; }
  double alpha_at(int t) const { return alpha[check(t)]; }
  double alpha_bar_at(int t) const { return alpha_bar[check(t)]; }
  double a_at(int t) const { return a[check(t)]; }
  double b_at(int t) const { return b[check(t)]; }
  double sigma2_at(int t) const { return sigma2[check(t)]; }
  double omega_at(int t) const { return omega[check(t)]; }

  int check(int t) const {
    if (t < 1 || t > T)
      throw ValidationError("schedule: step " + std::to_string(t) + " outside [1," + std::to_string(T) + "]");
    return t - 1;
  }
};

struct ReverseConstants {
  double a, b, sigma2;
};

inline NoiseSchedule linear_schedule(double beta_1, double beta_T, int T,
                                     SigmaMode mode = SigmaMode::kPaper) {
  if (T < 1) throw ValidationError("linear_schedule: T must be >= 1");
  if (!(beta_1 > 0.0 && beta_1 <= beta_T && beta_T < 1.0))
    throw ValidationError("linear_schedule: need 0 < beta_1 <= beta_T < 1");
  NoiseSchedule s;
  s.T = T;
  s.sigma_mode = mode;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  s.a.resize(T);
  s.b.resize(T);
  s.sigma2.resize(T);
  s.omega.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    const double beta = T == 1 ? beta_1 : beta_1 + (beta_T - beta_1) * i / double(T - 1);
    const double alpha = 1.0 - beta;
    const double prev_bar = prod;  // alpha_bar_{t-1}, with alpha_bar_0 = 1
    prod *= alpha;
    s.beta[i] = beta;
    s.alpha[i] = alpha;
    s.alpha_bar[i] = prod;
    s.a[i] = 1.0 / std::sqrt(alpha);
    s.b[i] = beta / std::sqrt(1.0 - prod);
    s.sigma2[i] = mode == SigmaMode::kPaper ? beta * beta / (2.0 * alpha * (1.0 - prod))
                                            : (1.0 - prev_bar) / (1.0 - prod) * beta;
    s.omega[i] = prod * prod;
  }
  return s;
}

inline ReverseConstants reverse_constants(const NoiseSchedule& s, int t) {
  int i = s.check(t);
  return {s.a[i], s.b[i], s.sigma2[i]};
}

}  // namespace voxrf
