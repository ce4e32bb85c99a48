#pragma once

#include "mirrorbridge/gmm.hpp"

#include <stdexcept>
#include <vector>

namespace mirrorbridge {

// Per-component tangent of the Wasserstein-Fisher-Rao flow of the KL
// functional, pulled back to potential coordinates. sym_hess_avg holds the
// averaged Hessian H_k of the conditional log-ratio; the covariance update is
// realized through the retraction with S_k = -H_k.
struct WfrTangent {
  Vector d_log_weight;               // rate of log alpha_k
  std::vector<Vector> d_mean;        // potential-coordinate mean rate
  std::vector<Matrix> sym_hess_avg;  // exactly symmetric
  Vector weights;                    // centering weights of the flowing mixture

  int num_components() const { return static_cast<int>(d_mean.size()); }
  bool is_zero() const;

  // Largest violation of the mass-conservation identity
  // sum_k weights_k * d_log_weight_k = 0, relative to the rate scale.
  double mass_violation() const;

  // Frobenius norms over all components of the three blocks.
  double mean_norm() const;
  double cov_norm() const;
  double weight_norm() const;

  static WfrTangent zero(int k_count, int dim);
  WfrTangent& axpy(double a, const WfrTangent& other);  // this += a * other
  WfrTangent& scale(double a);
  void recenter();  // re-impose sum_k weights_k * d_log_weight_k = 0
};

// Thrown when the retraction would lose positive definiteness; the step is
// rejected and the caller should retry with a smaller h.
class StepRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Monte-Carlo WFR gradient of KL(conditional(theta, x) || conditional(target, x)).
// For each component k, n_y samples are drawn from component k of the
// conditional; per-sample log ratios, gradients and Hessians of the two
// mixture log-densities yield the weight, mean and covariance rates. With
// target == theta the ratio terms vanish identically, so the finite-sample
// tangent is exactly zero. Deterministic given the seed.
WfrTangent wfr_grad(const GmmPotential& theta, const GmmPotential& target,
                    const Vector& x, int n_y, std::uint64_t seed);

// One retraction step along the tangent:
//   m_k     <- m_k + h * d_mean_k
//   Sigma_k <- (I + h S_k) Sigma_k (I + h S_k),  S_k = -sym_hess_avg_k
//   log a_k <- log a_k + h * d_log_weight_k, renormalized to the original total.
// Throws StepRejected when any retracted covariance loses SPD.
GmmPotential apply_tangent(const GmmPotential& theta, const WfrTangent& tangent, double h);

}  // namespace mirrorbridge
