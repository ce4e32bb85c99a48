#include "mirrorbridge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace mirrorbridge {

namespace {

constexpr double kEigenFloor = 1e-12;

// Sum over rows of b of the summed absolute differences to the rows of a,
// computed through sorted prefix sums.
double pairwise_abs_sum_1d(const std::vector<double>& sorted_a, const Vector& prefix,
                           const Matrix& b) {
  const Eigen::Index n = static_cast<Eigen::Index>(sorted_a.size());
  double total = 0.0;
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    const double v = b(j, 0);
    const auto it = std::upper_bound(sorted_a.begin(), sorted_a.end(), v);
    const Eigen::Index below = it - sorted_a.begin();
    const double below_sum = prefix[below];
    const double above_sum = prefix[n] - below_sum;
    total += (below * v - below_sum) + (above_sum - (n - below) * v);
  }
  return total;
}

}  // namespace

double mean_pairwise_distance(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "mean_pairwise_distance: dimension mismatch");
  require(a.rows() >= 1 && b.rows() >= 1, "mean_pairwise_distance: empty sample set");
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.rows();
  if (a.cols() == 1) {
    std::vector<double> sorted_a(a.data(), a.data() + n);
    std::sort(sorted_a.begin(), sorted_a.end());
    Vector prefix = Vector::Zero(n + 1);
    for (Eigen::Index i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + sorted_a[i];
    return pairwise_abs_sum_1d(sorted_a, prefix, b) / (static_cast<double>(n) * m);
  }
  const int blocks = 4 * worker_slots();
  std::vector<double> partial(blocks, 0.0);
  parallel_blocks(
      n,
      [&](int block, std::int64_t begin, std::int64_t end) {
        double acc = 0.0;
        for (std::int64_t i = begin; i < end; ++i) {
          for (Eigen::Index j = 0; j < m; ++j) {
            acc += (a.row(i) - b.row(j)).norm();
          }
        }
        partial[block] = acc;
      },
      blocks);
  const double total = std::accumulate(partial.begin(), partial.end(), 0.0);
  return total / (static_cast<double>(n) * m);
}

namespace {

// Deterministic total order on sample matrices so the cross term is computed
// with a canonical argument order and the estimator is exactly symmetric.
bool matrix_precedes(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  if (a.cols() != b.cols()) return a.cols() < b.cols();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (a(i, j) != b(i, j)) return a(i, j) < b(i, j);
    }
  }
  return false;
}

}  // namespace

double energy_distance(const Matrix& a, const Matrix& b) {
  require(a.rows() >= 2 && b.rows() >= 2, "energy_distance: need at least two samples each");
  const bool swap = matrix_precedes(b, a);
  const Matrix& first = swap ? b : a;
  const Matrix& second = swap ? a : b;
  return 2.0 * mean_pairwise_distance(first, second) - mean_pairwise_distance(first, first) -
         mean_pairwise_distance(second, second);
}

Matrix matrix_sqrt_spd(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
  require(eig.info() == Eigen::Success, "matrix_sqrt_spd: eigensolver failure");
  Vector values = eig.eigenvalues();
  for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = std::sqrt(std::max(values[i], 0.0));
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

double bw2_gaussian(const GaussianMoments& p, const GaussianMoments& q) {
  require(p.mean.size() == q.mean.size(), "bw2_gaussian: dimension mismatch");
  for (const auto* moments : {&p, &q}) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(moments->cov);
    require(eig.info() == Eigen::Success, "bw2_gaussian: eigensolver failure");
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    require(lo > 0.0, "bw2_gaussian: covariance not SPD");
    require(hi / lo <= 1e12, "bw2_gaussian: covariance too ill-conditioned");
  }
  const Matrix root_p = matrix_sqrt_spd(p.cov);
  const Matrix inner = matrix_sqrt_spd(root_p * q.cov * root_p);
  const double value =
      (p.mean - q.mean).squaredNorm() + p.cov.trace() + q.cov.trace() - 2.0 * inner.trace();
  return std::max(value, 0.0);
}

GaussianMoments fit_moments(const Matrix& samples) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index dim = samples.cols();
  require(n >= dim + 2, "fit_moments: too few samples");
  GaussianMoments moments;
  moments.mean = samples.colwise().mean().transpose();
  const Matrix centered = samples.rowwise() - moments.mean.transpose();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  cov = 0.5 * (cov + cov.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  require(eig.info() == Eigen::Success, "fit_moments: eigensolver failure");
  require(eig.eigenvalues().minCoeff() > -1e-10,
          "fit_moments: sample covariance not PSD after symmetrization");
  Vector values = eig.eigenvalues().cwiseMax(kEigenFloor);
  moments.cov = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
  return moments;
}

double bw_uvp(const Matrix& model_plan_samples, const GaussianMoments& reference,
              double variance_norm) {
  require(variance_norm > 0.0, "bw_uvp: variance norm must be positive");
  const GaussianMoments fitted = fit_moments(model_plan_samples);
  return 100.0 * bw2_gaussian(fitted, reference) / variance_norm;
}

double plan_variance_norm(const GaussianMoments& joint_reference, int dim) {
  require(joint_reference.cov.rows() == 2 * dim, "plan_variance_norm: joint shape mismatch");
  return 0.5 * joint_reference.cov.bottomRightCorner(dim, dim).trace();
}

double cbw_uvp(const GmmPotential& model, const ConditionalOracle& reference_conditional,
               const Matrix& x_test, int n_per_x, std::uint64_t seed) {
  require(x_test.rows() >= 1, "cbw_uvp: x_test must be nonempty");
  require(n_per_x >= model.dim() + 2, "cbw_uvp: n_per_x too small");
  const Eigen::Index count = x_test.rows();
  const int dim = model.dim();

  // Global output variance implied by the oracle over the test inputs.
  Matrix mean_cov = Matrix::Zero(dim, dim);
  Matrix mean_outer = Matrix::Zero(dim, dim);
  Vector mean_of_means = Vector::Zero(dim);
  std::vector<GaussianMoments> references(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    references[i] = reference_conditional(x_test.row(i).transpose());
    mean_cov += references[i].cov / count;
    mean_of_means += references[i].mean / count;
    mean_outer += references[i].mean * references[i].mean.transpose() / count;
  }
  const Matrix global_cov =
      mean_cov + mean_outer - mean_of_means * mean_of_means.transpose();
  const double variance_norm = 0.5 * global_cov.trace();
  require(variance_norm > 0.0, "cbw_uvp: degenerate reference output variance");

  double total = 0.0;
  for (Eigen::Index i = 0; i < count; ++i) {
    const ConditionalMixture plan = model.condition(x_test.row(i).transpose());
    const Matrix samples = plan.sample(n_per_x, mix_seed(seed, 0xcb3u, i));
    const GaussianMoments fitted = fit_moments(samples);
    total += 100.0 * bw2_gaussian(fitted, references[i]) / variance_norm;
  }
  return total / count;
}

GaussianMoments gaussian_eot_plan(const Vector& a, const Matrix& A, const Vector& b,
                                  const Matrix& B, double eps) {
  const int dim = static_cast<int>(a.size());
  require(A.rows() == dim && A.cols() == dim && B.rows() == dim && B.cols() == dim &&
              b.size() == dim,
          "gaussian_eot_plan: shape mismatch");
  require(eps > 0.0, "gaussian_eot_plan: eps must be positive");
  require(Eigen::LLT<Matrix>(A).info() == Eigen::Success &&
              Eigen::LLT<Matrix>(B).info() == Eigen::Success,
          "gaussian_eot_plan: marginal covariances must be SPD");

  const Matrix root_a = matrix_sqrt_spd(A);
  const Matrix inv_root_a = root_a.inverse();
  const Matrix core = matrix_sqrt_spd(root_a * B * root_a +
                                      (eps * eps / 4.0) * Matrix::Identity(dim, dim));
  const Matrix cross =
      root_a * core * inv_root_a - (eps / 2.0) * Matrix::Identity(dim, dim);

  GaussianMoments joint;
  joint.mean = Vector(2 * dim);
  joint.mean.head(dim) = a;
  joint.mean.tail(dim) = b;
  joint.cov = Matrix(2 * dim, 2 * dim);
  joint.cov.topLeftCorner(dim, dim) = A;
  joint.cov.topRightCorner(dim, dim) = cross;
  joint.cov.bottomLeftCorner(dim, dim) = cross.transpose();
  joint.cov.bottomRightCorner(dim, dim) = B;
  return joint;
}

GmmPotential eot_conditional_potential(const Vector& a, const Matrix& A, const Vector& b,
                                       const Matrix& B, double eps) {
  const int dim = static_cast<int>(a.size());
  const Matrix root_a = matrix_sqrt_spd(A);
  const Matrix inv_root_a = root_a.inverse();
  const Matrix core = matrix_sqrt_spd(root_a * B * root_a +
                                      (eps * eps / 4.0) * Matrix::Identity(dim, dim));
  // Symmetric by construction; SPD because the core dominates (eps/2) I.
  Matrix sigma = inv_root_a * core * inv_root_a - (eps / 2.0) * A.inverse();
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  const Vector mean = b - sigma * a;
  return GmmPotential::single(eps, mean, sigma);
}

GaussianMoments conditional_moments(const GaussianMoments& joint, int dim, const Vector& x) {
  require(joint.mean.size() == 2 * dim, "conditional_moments: joint shape mismatch");
  const Matrix A = joint.cov.topLeftCorner(dim, dim);
  const Matrix cross = joint.cov.topRightCorner(dim, dim);
  const Matrix B = joint.cov.bottomRightCorner(dim, dim);
  const Matrix regression = cross.transpose() * A.inverse();
  GaussianMoments cond;
  cond.mean = joint.mean.tail(dim) + regression * (x - joint.mean.head(dim));
  cond.cov = B - regression * cross;
  cond.cov = 0.5 * (cond.cov + cond.cov.transpose()).eval();
  return cond;
}

double mc_kl(const ConditionalMixture& p, const ConditionalMixture& q, int n,
             std::uint64_t seed) {
  require(p.dim() == q.dim(), "mc_kl: dimension mismatch");
  require(n >= 1, "mc_kl: n must be positive");
  const Matrix samples = p.sample(n, mix_seed(seed, 0x71cu));
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vector y = samples.row(i).transpose();
    total += p.log_density(y) - q.log_density(y);
  }
  return total / n;
}

}  // namespace mirrorbridge
