#include "mirrorbridge/wfr.hpp"

#include <cmath>
#include <sstream>

namespace mirrorbridge {

namespace {
constexpr double kFactorDiagFloor = 1e-6;
}  // namespace

bool WfrTangent::is_zero() const {
  if (!d_log_weight.isZero(0.0)) return false;
  for (const auto& v : d_mean) {
    if (!v.isZero(0.0)) return false;
  }
  for (const auto& m : sym_hess_avg) {
    if (!m.isZero(0.0)) return false;
  }
  return true;
}

double WfrTangent::mass_violation() const {
  const double scale = std::max(1e-300, d_log_weight.cwiseAbs().maxCoeff());
  return std::abs(weights.dot(d_log_weight)) / scale;
}

double WfrTangent::mean_norm() const {
  double acc = 0.0;
  for (const auto& v : d_mean) acc += v.squaredNorm();
  return std::sqrt(acc);
}

double WfrTangent::cov_norm() const {
  double acc = 0.0;
  for (const auto& m : sym_hess_avg) acc += m.squaredNorm();
  return std::sqrt(acc);
}

double WfrTangent::weight_norm() const { return d_log_weight.norm(); }

WfrTangent WfrTangent::zero(int k_count, int dim) {
  WfrTangent t;
  t.d_log_weight = Vector::Zero(k_count);
  t.d_mean.assign(k_count, Vector::Zero(dim));
  t.sym_hess_avg.assign(k_count, Matrix::Zero(dim, dim));
  t.weights = Vector::Constant(k_count, 1.0 / k_count);
  return t;
}

WfrTangent& WfrTangent::axpy(double a, const WfrTangent& other) {
  require(other.num_components() == num_components(), "WfrTangent: component mismatch");
  d_log_weight += a * other.d_log_weight;
  for (int k = 0; k < num_components(); ++k) {
    d_mean[k] += a * other.d_mean[k];
    sym_hess_avg[k] += a * other.sym_hess_avg[k];
  }
  return *this;
}

WfrTangent& WfrTangent::scale(double a) {
  d_log_weight *= a;
  for (auto& v : d_mean) v *= a;
  for (auto& m : sym_hess_avg) m *= a;
  return *this;
}

void WfrTangent::recenter() {
  const double drift = weights.dot(d_log_weight);
  if (drift != 0.0) d_log_weight.array() -= drift;
}

WfrTangent wfr_grad(const GmmPotential& theta, const GmmPotential& target,
                    const Vector& x, int n_y, std::uint64_t seed) {
  require(theta.dim() == target.dim(), "wfr_grad: dimension mismatch");
  require(theta.epsilon() == target.epsilon(), "wfr_grad: epsilon mismatch");
  require(n_y >= 1, "wfr_grad: n_y must be positive");

  const int k_count = theta.num_components();
  const int dim = theta.dim();
  const ConditionalMixture rho = theta.condition(x);
  const ConditionalMixture rho_star = target.condition(x);

  WfrTangent tangent;
  tangent.weights = rho.weights();
  tangent.d_log_weight = Vector::Zero(k_count);
  tangent.d_mean.assign(k_count, Vector::Zero(dim));
  tangent.sym_hess_avg.assign(k_count, Matrix::Zero(dim, dim));

  Vector ratio_mean(k_count);
  std::vector<Vector> grad_cond(k_count, Vector::Zero(dim));
  for (int k = 0; k < k_count; ++k) {
    Rng rng(mix_seed(seed, 0x77a9u, static_cast<std::uint64_t>(k)));
    const auto& comp = rho.component(k);
    double ratio_acc = 0.0;
    Vector grad_acc = Vector::Zero(dim);
    Matrix hess_acc = Matrix::Zero(dim, dim);
    for (int j = 0; j < n_y; ++j) {
      const Vector y = comp.mean + comp.chol * rng.normal_vector(dim);
      ratio_acc += rho.log_density(y) - rho_star.log_density(y);
      const auto [g, h] = rho.grad_hess_log_density(y);
      const auto [g_star, h_star] = rho_star.grad_hess_log_density(y);
      grad_acc += g - g_star;
      hess_acc += h - h_star;
    }
    ratio_mean[k] = ratio_acc / n_y;
    grad_cond[k] = grad_acc / n_y;
    tangent.sym_hess_avg[k] = hess_acc / n_y;
  }

  // Spherical centering of the weight rates against the flowing mixture.
  const double centered = tangent.weights.dot(ratio_mean);
  for (int k = 0; k < k_count; ++k) {
    tangent.d_log_weight[k] = -(ratio_mean[k] - centered);
  }

  // Pull back from conditional coordinates: the covariance tangent transfers
  // verbatim (the volatility cancels in the retraction); the mean picks up the
  // covariance-tangent action on x. Exact at x = 0.
  const bool zero_input = x.isZero(0.0);
  for (int k = 0; k < k_count; ++k) {
    tangent.d_mean[k] = -grad_cond[k];
    if (!zero_input) {
      const Matrix sigma = theta.sigma(k);
      const Matrix& h = tangent.sym_hess_avg[k];
      tangent.d_mean[k] += (h * sigma + sigma * h) * x;
    }
  }
  return tangent;
}

GmmPotential apply_tangent(const GmmPotential& theta, const WfrTangent& tangent, double h) {
  require(h > 0.0, "apply_tangent: h must be positive");
  require(tangent.num_components() == theta.num_components(),
          "apply_tangent: component count mismatch");
  const int k_count = theta.num_components();
  const int dim = theta.dim();
  require(tangent.d_log_weight.size() == k_count, "apply_tangent: weight size mismatch");

  Vector log_weights(k_count);
  for (int k = 0; k < k_count; ++k) log_weights[k] = theta.component(k).log_weight;
  const double total_before = log_sum_exp(log_weights);

  std::vector<PotentialComponent> updated(k_count);
  for (int k = 0; k < k_count; ++k) {
    const auto& src = theta.component(k);
    PotentialComponent& dst = updated[k];
    dst.mean = src.mean + h * tangent.d_mean[k];

    const Matrix& hess = tangent.sym_hess_avg[k];
    require(hess.rows() == dim && hess.cols() == dim, "apply_tangent: Hessian shape mismatch");
    if (hess.isZero(0.0)) {
      dst.chol_factor = src.chol_factor;
    } else {
      const Matrix step = Matrix::Identity(dim, dim) - h * hess;
      // The geodesic step is valid only while I + hS stays positive definite;
      // an indefinite factor has overshot through the degenerate boundary.
      bool ok = step.allFinite() && Eigen::LLT<Matrix>(step).info() == Eigen::Success;
      if (ok) {
        const Matrix factor = step * src.chol_factor;
        Matrix retracted = factor * factor.transpose();
        retracted = 0.5 * (retracted + retracted.transpose()).eval();
        Eigen::LLT<Matrix> llt(retracted);
        ok = llt.info() == Eigen::Success;
        if (ok) {
          dst.chol_factor = llt.matrixL();
          for (int i = 0; i < dim && ok; ++i) {
            ok = std::isfinite(dst.chol_factor(i, i));
            // Starved components keep a numerically alive covariance so the
            // flow can revive them, matching the weight clamp.
            if (ok && dst.chol_factor(i, i) < kFactorDiagFloor) {
              dst.chol_factor(i, i) = kFactorDiagFloor;
            }
          }
        }
      }
      if (!ok) {
        std::ostringstream msg;
        msg << "apply_tangent: retracted covariance of component " << k
            << " lost positive definiteness; retry with a smaller h (h=" << h << ")";
        throw StepRejected(msg.str());
      }
    }
  }

  Vector shifted = log_weights + h * tangent.d_log_weight;
  const double total_after = log_sum_exp(shifted);
  shifted.array() += total_before - total_after;
  // Degenerate components are clamped rather than dropped so the weight
  // dynamics can revive them later.
  for (int k = 0; k < k_count; ++k) updated[k].log_weight = std::max(shifted[k], -700.0);

  return GmmPotential(dim, theta.epsilon(), std::move(updated));
}

}  // namespace mirrorbridge
