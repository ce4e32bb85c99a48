#include "mirrorbridge/solvers.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace mirrorbridge {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kDivergenceGuard = 1e8;

int params_per_component(int dim) { return 1 + dim + dim * (dim + 1) / 2; }

}  // namespace

Vector pack_params(const GmmPotential& theta) {
  const int dim = theta.dim();
  const int k_count = theta.num_components();
  Vector out(static_cast<Eigen::Index>(k_count) * params_per_component(dim));
  Eigen::Index pos = 0;
  for (int k = 0; k < k_count; ++k) out[pos++] = theta.component(k).log_weight;
  for (int k = 0; k < k_count; ++k) {
    out.segment(pos, dim) = theta.component(k).mean;
    pos += dim;
  }
  for (int k = 0; k < k_count; ++k) {
    const Matrix& l = theta.component(k).chol_factor;
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j <= i; ++j) out[pos++] = l(i, j);
    }
  }
  return out;
}

GmmPotential unpack_params(int dim, double epsilon, int k_count, const Vector& params) {
  require(params.size() == static_cast<Eigen::Index>(k_count) * params_per_component(dim),
          "unpack_params: size mismatch");
  std::vector<PotentialComponent> components(k_count);
  Eigen::Index pos = 0;
  for (int k = 0; k < k_count; ++k) components[k].log_weight = params[pos++];
  for (int k = 0; k < k_count; ++k) {
    components[k].mean = params.segment(pos, dim);
    pos += dim;
  }
  for (int k = 0; k < k_count; ++k) {
    components[k].chol_factor = Matrix::Zero(dim, dim);
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j <= i; ++j) components[k].chol_factor(i, j) = params[pos++];
    }
  }
  return GmmPotential(dim, epsilon, std::move(components));
}

std::pair<double, Vector> reverse_kl_loss(const GmmPotential& theta, const Matrix& x_batch,
                                          const Matrix& y_batch) {
  const int dim = theta.dim();
  const int k_count = theta.num_components();
  require(x_batch.rows() >= 1 && y_batch.rows() >= 1, "reverse_kl_loss: empty batch");
  require(x_batch.cols() == dim && y_batch.cols() == dim,
          "reverse_kl_loss: dimension mismatch");
  const double eps = theta.epsilon();
  const Eigen::Index n = x_batch.rows();
  const Eigen::Index m = y_batch.rows();

  // Per-component caches: Sigma^{-1}, Sigma^{-1} m, log det terms.
  std::vector<Matrix> sigma_inv(k_count);
  std::vector<Vector> sigma_inv_mean(k_count);
  Vector log_norm(k_count);
  for (int k = 0; k < k_count; ++k) {
    const Matrix& l = theta.component(k).chol_factor;
    const Matrix inv_l = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(dim, dim));
    sigma_inv[k] = inv_l.transpose() * inv_l;
    sigma_inv_mean[k] = sigma_inv[k] * theta.component(k).mean;
    double log_det_half = 0.0;
    for (int i = 0; i < dim; ++i) log_det_half += std::log(l(i, i));
    log_norm[k] = -log_det_half - 0.5 * dim * (kLog2Pi + std::log(eps));
  }

  const int stride = params_per_component(dim);
  Vector grad = Vector::Zero(static_cast<Eigen::Index>(k_count) * stride);
  auto weight_slot = [&](int k) -> double& { return grad[k]; };
  auto mean_slot = [&](int k) { return grad.segment(k_count + k * dim, dim); };
  const Eigen::Index chol_base = static_cast<Eigen::Index>(k_count) * (1 + dim);
  std::vector<Matrix> chol_grad(k_count, Matrix::Zero(dim, dim));

  double loss = 0.0;
  // log z term over the input batch.
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector x = x_batch.row(i).transpose();
    Vector tilted(k_count);
    std::vector<Vector> sigma_x(k_count);
    for (int k = 0; k < k_count; ++k) {
      const auto& c = theta.component(k);
      sigma_x[k] = c.chol_factor * (c.chol_factor.transpose() * x);
      tilted[k] = c.log_weight + (2.0 * c.mean.dot(x) + x.dot(sigma_x[k])) / (2.0 * eps);
    }
    const double log_z = log_sum_exp(tilted);
    if (!std::isfinite(log_z)) {
      std::ostringstream msg;
      msg << "reverse_kl_loss: non-finite log z at x batch index " << i;
      throw std::runtime_error(msg.str());
    }
    loss += log_z / n;
    for (int k = 0; k < k_count; ++k) {
      const double p = std::exp(tilted[k] - log_z) / n;
      weight_slot(k) += p;
      mean_slot(k) += (p / eps) * x;
      chol_grad[k] += (p / eps) * (x * (x.transpose() * theta.component(k).chol_factor));
    }
  }

  // log v term over the output batch.
  for (Eigen::Index j = 0; j < m; ++j) {
    const Vector y = y_batch.row(j).transpose();
    Vector terms(k_count);
    std::vector<Vector> pulled(k_count);  // Sigma^{-1} (y - m_k)
    for (int k = 0; k < k_count; ++k) {
      const auto& c = theta.component(k);
      const Vector centered = y - c.mean;
      pulled[k] = sigma_inv[k] * centered;
      terms[k] = c.log_weight + log_norm[k] - centered.dot(pulled[k]) / (2.0 * eps);
    }
    const double log_v = log_sum_exp(terms);
    if (!std::isfinite(log_v)) {
      std::ostringstream msg;
      msg << "reverse_kl_loss: non-finite log v at y batch index " << j;
      throw std::runtime_error(msg.str());
    }
    loss -= log_v / m;
    for (int k = 0; k < k_count; ++k) {
      const double q = std::exp(terms[k] - log_v) / m;
      weight_slot(k) -= q;
      mean_slot(k) -= (q / eps) * pulled[k];
      chol_grad[k] -=
          q * ((pulled[k] / eps) * (pulled[k].transpose() * theta.component(k).chol_factor) -
               sigma_inv[k] * theta.component(k).chol_factor);
    }
  }

  Eigen::Index pos = chol_base;
  for (int k = 0; k < k_count; ++k) {
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j <= i; ++j) grad[pos++] = chol_grad[k](i, j);
    }
  }
  return {loss, grad};
}

ReverseKlFitter::ReverseKlFitter(const FitConfig& config, const Matrix& init_y)
    : config_(config),
      theta_([&]() {
        require(config.dim >= 1 && config.components >= 1 && config.epsilon > 0.0,
                "ReverseKlFitter: invalid configuration");
        Rng rng(mix_seed(config.init_seed, 0xf17u));
        std::vector<PotentialComponent> components(config.components);
        for (int k = 0; k < config.components; ++k) {
          components[k].log_weight = 0.0;
          if (init_y.rows() > 0) {
            const int row = static_cast<int>(rng.uniform() * init_y.rows());
            components[k].mean = init_y.row(std::min<int>(row, init_y.rows() - 1)).transpose();
          } else {
            components[k].mean = rng.normal_vector(config.dim);
          }
          components[k].chol_factor =
              config.init_chol_scale * Matrix::Identity(config.dim, config.dim);
        }
        return GmmPotential(config.dim, config.epsilon, std::move(components));
      }()) {
  velocity_ = Vector::Zero(pack_params(theta_).size());
}

double ReverseKlFitter::step(const Matrix& x_batch, const Matrix& y_batch) {
  const auto [loss, grad] = reverse_kl_loss(theta_, x_batch, y_batch);
  if (!std::isfinite(loss) || loss > kDivergenceGuard) {
    std::ostringstream msg;
    msg << "ReverseKlFitter: divergence at step " << steps_ << " (loss " << loss << ")";
    throw std::runtime_error(msg.str());
  }
  velocity_ = config_.momentum * velocity_ - config_.learning_rate * grad;
  Vector delta = velocity_;
  const double step_norm = delta.norm();
  if (config_.max_step_norm > 0.0 && step_norm > config_.max_step_norm) {
    delta *= config_.max_step_norm / step_norm;
  }
  Vector params = pack_params(theta_) + delta;
  for (int k = 0; k < config_.components; ++k) {
    if (params[k] < -700.0) params[k] = -700.0;
  }
  // Keep the factor diagonals strictly positive.
  const int dim = config_.dim;
  Eigen::Index pos = static_cast<Eigen::Index>(config_.components) * (1 + dim);
  for (int k = 0; k < config_.components; ++k) {
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j <= i; ++j) {
        if (j == i && params[pos] < config_.chol_diag_floor) {
          params[pos] = config_.chol_diag_floor;
        }
        ++pos;
      }
    }
  }
  theta_ = unpack_params(dim, config_.epsilon, config_.components, params);
  ++steps_;
  return loss;
}

GmmPotential fit_reverse_kl(const FitConfig& config, const BatchStream& x_stream,
                            const BatchStream& y_stream) {
  require(static_cast<bool>(x_stream) && static_cast<bool>(y_stream),
          "fit_reverse_kl: streams required");
  ReverseKlFitter fitter(config, y_stream(0));
  for (int it = 0; it < config.iterations; ++it) {
    fitter.step(x_stream(it), y_stream(it));
  }
  return fitter.theta();
}

GmmPotential ema_update(const GmmPotential& ema, const GmmPotential& candidate, double decay) {
  require(decay >= 0.0 && decay < 1.0, "ema_update: decay must lie in [0, 1)");
  require(ema.dim() == candidate.dim() && ema.num_components() == candidate.num_components(),
          "ema_update: shape mismatch");
  require(ema.epsilon() == candidate.epsilon(), "ema_update: epsilon mismatch");
  const Vector blended = decay * pack_params(ema) + (1.0 - decay) * pack_params(candidate);
  return unpack_params(ema.dim(), ema.epsilon(), ema.num_components(), blended);
}

std::string DiscretePlan::to_csv() const {
  std::ostringstream out;
  out << "x_index,y_index,weight\n";
  char buf[40];
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < weights.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", weights(i, j));
      out << i << "," << j << "," << buf << "\n";
    }
  }
  return out.str();
}

DiscretePlan discrete_sinkhorn(const Vector& a, const Vector& b, const Matrix& cost,
                               double epsilon, int max_iters, double tol) {
  const Eigen::Index n = a.size();
  const Eigen::Index m = b.size();
  require(cost.rows() == n && cost.cols() == m, "discrete_sinkhorn: cost shape mismatch");
  require(epsilon > 0.0, "discrete_sinkhorn: epsilon must be positive");
  require((a.array() > 0.0).all() && (b.array() > 0.0).all(),
          "discrete_sinkhorn: marginals must be strictly positive");
  require(std::abs(a.sum() - 1.0) < 1e-9 && std::abs(b.sum() - 1.0) < 1e-9,
          "discrete_sinkhorn: marginals must sum to one");

  const Vector log_a = a.array().log();
  const Vector log_b = b.array().log();
  const Matrix scaled_cost = cost / epsilon;
  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(m);

  DiscretePlan plan;
  plan.dual_x = f;
  plan.dual_y = g;
  plan.weights = Matrix(n, m);

  auto build_plan = [&](Matrix& w) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        w(i, j) = std::exp(log_a[i] + log_b[j] + f[i] + g[j] - scaled_cost(i, j));
      }
    }
  };

  double error = std::numeric_limits<double>::infinity();
  int iter = 0;
  for (; iter < max_iters; ++iter) {
    // Half-update of the y-side dual: the second marginal becomes exact.
    for (Eigen::Index j = 0; j < m; ++j) {
      Vector terms = log_a + f - scaled_cost.col(j);
      g[j] = -log_sum_exp(terms);
    }
    // Half-update of the x-side dual: the first marginal becomes exact.
    for (Eigen::Index i = 0; i < n; ++i) {
      Vector terms = log_b + g - scaled_cost.row(i).transpose();
      f[i] = -log_sum_exp(terms);
    }
    build_plan(plan.weights);
    error = 0.5 * (plan.weights.colwise().sum().transpose() - b).cwiseAbs().sum();
    if (error <= tol) {
      ++iter;
      break;
    }
  }
  plan.dual_x = f;
  plan.dual_y = g;
  plan.iterations = iter;
  plan.marginal_error = error;
  plan.converged = error <= tol;
  return plan;
}

}  // namespace mirrorbridge
