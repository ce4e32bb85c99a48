#pragma once

#include "mirrorbridge/gmm.hpp"

#include <functional>

namespace mirrorbridge {

struct GaussianMoments {
  Vector mean;
  Matrix cov;
};

// Two-sample energy distance, V-statistic form:
//   2 mean||a - b|| - mean||a - a'|| - mean||b - b'||
// with all-pairs means (denominators n m, n^2, m^2), so identical inputs give
// exactly zero. Rows are samples. The one-dimensional case runs in
// O(n log n) via sorted prefix sums.
double energy_distance(const Matrix& a, const Matrix& b);

// Mean pairwise Euclidean distance between the rows of two sample matrices.
double mean_pairwise_distance(const Matrix& a, const Matrix& b);

// Squared Bures-Wasserstein distance between Gaussian moment pairs:
//   ||m_p - m_q||^2 + tr(S_p + S_q - 2 (S_p^{1/2} S_q S_p^{1/2})^{1/2}).
double bw2_gaussian(const GaussianMoments& p, const GaussianMoments& q);

Matrix matrix_sqrt_spd(const Matrix& m);

// Unbiased sample moments, symmetrized, with an eigenvalue floor of 1e-12
// applied to the covariance.
GaussianMoments fit_moments(const Matrix& samples);

// 100 * bw2(fit of samples, reference) / variance_norm.
double bw_uvp(const Matrix& model_plan_samples, const GaussianMoments& reference,
              double variance_norm);

// Half the trace of the output-marginal block of a joint (2d) reference.
double plan_variance_norm(const GaussianMoments& joint_reference, int dim);

using ConditionalOracle = std::function<GaussianMoments(const Vector& x)>;

// Conditional UVP: per-x bw_uvp of the model's conditional against the oracle
// conditional, averaged over x_test rows. The normalizer uses the global
// output variance implied by the oracle over x_test (law of total covariance).
double cbw_uvp(const GmmPotential& model, const ConditionalOracle& reference_conditional,
               const Matrix& x_test, int n_per_x, std::uint64_t seed);

// Closed-form entropic OT plan between N(a, A) and N(b, B) with quadratic cost
// ||x - y||^2 / 2 and regularization strength eps: a joint Gaussian whose
// cross-covariance is
//   C = A^{1/2} (A^{1/2} B A^{1/2} + (eps^2/4) I)^{1/2} A^{-1/2} - (eps/2) I.
GaussianMoments gaussian_eot_plan(const Vector& a, const Matrix& A, const Vector& b,
                                  const Matrix& B, double eps);

// The plan's conditional, representable exactly as a single-component
// potential: Sigma = A^{-1/2} N A^{-1/2} - (eps/2) A^{-1}, m = b - Sigma a.
GmmPotential eot_conditional_potential(const Vector& a, const Matrix& A, const Vector& b,
                                       const Matrix& B, double eps);

// Conditional y | x of a joint Gaussian over (x, y) stacked as 2d.
GaussianMoments conditional_moments(const GaussianMoments& joint, int dim, const Vector& x);

// Monte-Carlo KL(p || q): mean over p-samples of log p - log q; deterministic
// given the seed and exactly zero when p and q coincide.
double mc_kl(const ConditionalMixture& p, const ConditionalMixture& q, int n,
             std::uint64_t seed);

}  // namespace mirrorbridge
