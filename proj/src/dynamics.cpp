#include "mirrorbridge/dynamics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace mirrorbridge {

namespace {

void check_times(const Vector& times) {
  require(times.size() >= 2, "Trajectory: need at least two times");
  require(times[0] == 0.0, "Trajectory: first time must be 0");
  require(times[times.size() - 1] == 1.0, "Trajectory: last time must be 1");
  for (Eigen::Index i = 1; i < times.size(); ++i) {
    require(times[i] > times[i - 1], "Trajectory: times must be strictly increasing");
  }
}

struct Posterior {
  Vector log_weights;          // unnormalized
  std::vector<Vector> means;   // E[y | t, x] per component
  std::vector<Matrix> covs;    // eps * (Sigma_k^{-1} + s I)^{-1}
};

// Law of the endpoint y given state (t, x) under the pinned-bridge process:
// component k is N(C_k (Sigma_k^{-1} m_k + x/(1-t)), eps C_k) with
// C_k = (Sigma_k^{-1} + t/(1-t) I)^{-1}, weighted in log-space by
// log a_k - 1/2 log det(I + s Sigma_k)
//     + (b_k^T C_k b_k - m_k^T Sigma_k^{-1} m_k) / (2 eps).
Posterior endpoint_posterior_parts(const GmmPotential& theta, double t, const Vector& x) {
  require(x.size() == theta.dim(), "sb_drift: dimension mismatch");
  require(x.allFinite(), "sb_drift: non-finite input");
  require(t >= 0.0 && t < 1.0, "sb_drift: t must lie in [0, 1)");
  const int dim = theta.dim();
  const int k_count = theta.num_components();
  const double eps = theta.epsilon();
  const double s = t / (1.0 - t);
  const Matrix identity = Matrix::Identity(dim, dim);

  Posterior post;
  post.log_weights = Vector(k_count);
  post.means.resize(k_count);
  post.covs.resize(k_count);
  for (int k = 0; k < k_count; ++k) {
    const auto& comp = theta.component(k);
    const Matrix& chol = comp.chol_factor;
    const Matrix sigma = chol * chol.transpose();
    const Vector sigma_inv_mean = chol.transpose().triangularView<Eigen::Upper>().solve(
        chol.triangularView<Eigen::Lower>().solve(comp.mean));

    Eigen::LLT<Matrix> grown(identity + s * sigma);
    require(grown.info() == Eigen::Success, "sb_drift: covariance degenerated");
    double log_det_grown = 0.0;
    const Matrix grown_l = grown.matrixL();
    for (int i = 0; i < dim; ++i) log_det_grown += 2.0 * std::log(grown_l(i, i));

    const Vector b = sigma_inv_mean + x / (1.0 - t);
    // C b = Sigma (I + s Sigma)^{-1} (Sigma sigma_inv_mean + ...); solve via the
    // grown factor: C = (Sigma^{-1} + s I)^{-1} = Sigma (I + s Sigma)^{-1}.
    const Vector cb = sigma * grown.solve(b);
    post.means[k] = cb;
    post.covs[k] = eps * (sigma * grown.solve(identity));
    post.covs[k] = 0.5 * (post.covs[k] + post.covs[k].transpose()).eval();
    post.log_weights[k] = comp.log_weight - 0.5 * log_det_grown +
                          (b.dot(cb) - comp.mean.dot(sigma_inv_mean)) / (2.0 * eps);
  }
  return post;
}

}  // namespace

Vector sb_drift(const GmmPotential& theta, double t, const Vector& x) {
  const Posterior post = endpoint_posterior_parts(theta, t, x);
  const double log_total = log_sum_exp(post.log_weights);
  Vector endpoint_mean = Vector::Zero(theta.dim());
  for (int k = 0; k < theta.num_components(); ++k) {
    endpoint_mean += std::exp(post.log_weights[k] - log_total) * post.means[k];
  }
  return (endpoint_mean - x) / (1.0 - t);
}

double sb_log_h(const GmmPotential& theta, double t, const Vector& x) {
  const Posterior post = endpoint_posterior_parts(theta, t, x);
  return log_sum_exp(post.log_weights) -
         x.squaredNorm() / (2.0 * theta.epsilon() * (1.0 - t));
}

ConditionalMixture endpoint_posterior(const GmmPotential& theta, double t, const Vector& x) {
  Posterior post = endpoint_posterior_parts(theta, t, x);
  return ConditionalMixture::from_log_weights(theta.dim(), post.log_weights,
                                              std::move(post.means), std::move(post.covs));
}

Trajectory sample_sde(const GmmPotential& theta, const Vector& x0, int n_steps,
                      std::uint64_t seed) {
  require(n_steps >= 2, "sample_sde: need at least two steps");
  require(x0.size() == theta.dim(), "sample_sde: dimension mismatch");
  const int dim = theta.dim();
  const double dt = 1.0 / n_steps;
  const double noise_scale = std::sqrt(theta.epsilon() * dt);

  Trajectory traj;
  traj.times = Vector::LinSpaced(n_steps + 1, 0.0, 1.0);
  traj.states = Matrix(n_steps + 1, dim);
  traj.states.row(0) = x0.transpose();

  Rng rng(mix_seed(seed, 0x5deu));
  Vector state = x0;
  for (int i = 0; i < n_steps; ++i) {
    const double t = static_cast<double>(i) * dt;
    state += dt * sb_drift(theta, t, state) + noise_scale * rng.normal_vector(dim);
    if (!state.allFinite()) {
      std::ostringstream msg;
      msg << "sample_sde: non-finite state at step " << (i + 1);
      throw std::runtime_error(msg.str());
    }
    traj.states.row(i + 1) = state.transpose();
  }
  return traj;
}

Trajectory pinned_bridge_fill(const Vector& x0, const Vector& y, const Vector& times,
                              double eps, std::uint64_t seed) {
  check_times(times);
  require(x0.size() == y.size(), "pinned_bridge_fill: endpoint dimension mismatch");
  const int dim = static_cast<int>(x0.size());
  const Eigen::Index count = times.size();

  Trajectory traj;
  traj.times = times;
  traj.states = Matrix(count, dim);
  traj.states.row(0) = x0.transpose();
  traj.states.row(count - 1) = y.transpose();

  Rng rng(mix_seed(seed, 0xb1d6eu));
  Vector state = x0;
  double current = 0.0;
  for (Eigen::Index i = 1; i + 1 < count; ++i) {
    const double t = times[i];
    const double reach = (t - current) / (1.0 - current);
    const double var = eps * (t - current) * (1.0 - t) / (1.0 - current);
    state += reach * (y - state) + std::sqrt(var) * rng.normal_vector(dim);
    traj.states.row(i) = state.transpose();
    current = t;
  }
  return traj;
}

Trajectory sample_bridge(const GmmPotential& theta, const Vector& x0, const Vector& times,
                         std::uint64_t seed) {
  require(x0.size() == theta.dim(), "sample_bridge: dimension mismatch");
  const ConditionalMixture endpoint_law = theta.condition(x0);
  const Matrix y = endpoint_law.sample(1, mix_seed(seed, 0xe4du));
  return pinned_bridge_fill(x0, y.row(0).transpose(), times, theta.epsilon(),
                            mix_seed(seed, 0xf111u));
}

std::string trajectories_to_csv(const std::vector<Trajectory>& trajectories) {
  std::ostringstream out;
  out << "trajectory_id,time";
  const int dim = trajectories.empty() ? 0 : static_cast<int>(trajectories[0].states.cols());
  for (int c = 0; c < dim; ++c) out << ",x" << c;
  out << "\n";
  char buf[40];
  for (std::size_t id = 0; id < trajectories.size(); ++id) {
    const auto& traj = trajectories[id];
    for (Eigen::Index i = 0; i < traj.times.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", traj.times[i]);
      out << id << "," << buf;
      for (Eigen::Index c = 0; c < traj.states.cols(); ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", traj.states(i, c));
        out << "," << buf;
      }
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace mirrorbridge
