#pragma once

#include "mirrorbridge/common.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace mirrorbridge {

// One mixture component of the potential: weight stored as a log, covariance
// stored as a lower-triangular Cholesky factor with strictly positive diagonal
// so Sigma = L L^T is SPD by construction.
struct PotentialComponent {
  double log_weight = 0.0;
  Vector mean;
  Matrix chol_factor;
};

class ConditionalMixture;

// Gaussian-mixture Schrodinger potential: the log-potential is
//   log v(y) = logsumexp_k( log_weight_k + log N(y | m_k, eps * Sigma_k) ).
// Values are immutable after construction and safe to share across threads.
class GmmPotential {
 public:
  GmmPotential(int dim, double epsilon, std::vector<PotentialComponent> components);

  int dim() const { return dim_; }
  double epsilon() const { return epsilon_; }
  int num_components() const { return static_cast<int>(components_.size()); }
  const PotentialComponent& component(int k) const { return components_[k]; }
  const std::vector<PotentialComponent>& components() const { return components_; }

  Matrix sigma(int k) const;  // Sigma_k = L_k L_k^T

  // log v(y) via log-sum-exp over components.
  double potential_value(const Vector& y) const;

  // The x-conditioned transport plan: a normalized Gaussian mixture with
  // component means m_k + Sigma_k x, covariances eps * Sigma_k, and weights
  // tilted in log-space by (2 <m_k, x> + x^T Sigma_k x) / (2 eps).
  ConditionalMixture condition(const Vector& x) const;

  // Checkpoint persistence. The decimal serialization uses 17 significant
  // digits so save -> load -> save is byte-identical.
  void save(const std::string& path) const;
  std::string to_checkpoint_string() const;
  static GmmPotential load(const std::string& path);
  static GmmPotential from_checkpoint_string(const std::string& text);

  // Convenience constructor for a single-component potential.
  static GmmPotential single(double epsilon, const Vector& mean, const Matrix& sigma);

 private:
  int dim_;
  double epsilon_;
  std::vector<PotentialComponent> components_;
};

// A normalized finite Gaussian mixture, the conditional plan for one input x.
// Weights sum to one; per-component Cholesky factors of the covariances are
// cached for evaluation and sampling.
class ConditionalMixture {
 public:
  struct Component {
    double weight;     // in (0, 1]
    double log_weight; // log of the normalized weight
    Vector mean;
    Matrix cov;        // SPD
    Matrix chol;       // lower Cholesky factor of cov
    double log_norm;   // log N(mean | mean, cov) = -(d/2) log(2 pi) - sum log diag(chol)
  };

  ConditionalMixture(int dim, std::vector<Component> components, double log_z);

  // Builds components from (log-space, unnormalized) weights.
  static ConditionalMixture from_log_weights(int dim, const Vector& log_weights,
                                             std::vector<Vector> means,
                                             std::vector<Matrix> covs);

  int dim() const { return dim_; }
  int num_components() const { return static_cast<int>(components_.size()); }
  const Component& component(int k) const { return components_[k]; }
  Vector weights() const;

  // log z recorded at conditioning time (the tilt normalizer); zero for
  // mixtures built directly from normalized weights.
  double log_z() const { return log_z_; }

  double log_density(const Vector& y) const;

  // Analytic gradient and Hessian of the mixture log-density at y; the
  // Hessian is symmetrized after assembly.
  std::pair<Vector, Matrix> grad_hess_log_density(const Vector& y) const;

  // n i.i.d. draws (rows), deterministic given seed: categorical component
  // choice followed by a Gaussian draw through the cached Cholesky factor.
  Matrix sample(int n, std::uint64_t seed) const;

 private:
  // Per-component log density and responsibilities, shared by the evaluators.
  Vector component_log_terms(const Vector& y) const;

  int dim_;
  std::vector<Component> components_;
  double log_z_;
};

}  // namespace mirrorbridge
