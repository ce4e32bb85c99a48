#include "mirrorbridge/vomd.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace mirrorbridge {

namespace {

std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Local trust region on the applied step. Monte-Carlo rates of near-massless
// components carry no signal, only variance; without a cap their parameters
// random-walk over a long run until the tilting exponent is hijacked. The
// weight rates are scaled by a common factor so the centering identity
// survives. Exact zero tangents pass through untouched.
constexpr double kMaxCovStep = 0.3;    // cap on h * ||S_k||_2
constexpr double kMaxMeanStep = 1.0;   // cap on h * ||d_mean_k||
constexpr double kMaxWeightStep = 2.0; // cap on h * |d_log_weight_k|

void apply_trust_region(WfrTangent& tangent, double h) {
  for (int k = 0; k < tangent.num_components(); ++k) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(tangent.sym_hess_avg[k]);
    const double spectral = eig.eigenvalues().cwiseAbs().maxCoeff();
    if (h * spectral > kMaxCovStep) {
      tangent.sym_hess_avg[k] *= kMaxCovStep / (h * spectral);
    }
    const double mean_step = h * tangent.d_mean[k].norm();
    if (mean_step > kMaxMeanStep) {
      tangent.d_mean[k] *= kMaxMeanStep / mean_step;
    }
  }
  const double weight_step = h * tangent.d_log_weight.cwiseAbs().maxCoeff();
  if (weight_step > kMaxWeightStep) {
    tangent.d_log_weight *= kMaxWeightStep / weight_step;
  }
}

}  // namespace

double step_size(int t, const OmdSchedule& schedule) {
  const int total = schedule.total_steps;
  require(t >= 1 && t <= total, "step_size: t out of range");
  if (t <= schedule.warmup_steps()) return 1.0;
  if (schedule.kind == ScheduleKind::kTheoretical) {
    return 2.0 / (t + 1.0);
  }
  require(total >= 2, "step_size: harmonic schedule needs at least two steps");
  require(schedule.eta_1 <= 1.0 && schedule.eta_1 >= schedule.eta_T && schedule.eta_T > 0.0,
          "step_size: need 1 >= eta_1 >= eta_T > 0");
  const double inv_1 = 1.0 / schedule.eta_1;
  const double inv_T = 1.0 / schedule.eta_T;
  const double frac = static_cast<double>(t - 1) / static_cast<double>(total - 1);
  return 1.0 / (inv_1 + (inv_T - inv_1) * frac);
}

const char* MetricLog::csv_header() {
  return "step,eta,tangent_norm_mean,tangent_norm_cov,tangent_norm_weight,"
         "kl_estimate,energy_distance";
}

void MetricLog::write_csv(std::ostream& out) const {
  out << csv_header() << "\n";
  for (const auto& row : rows) {
    out << row.step << "," << format_metric(row.eta) << ","
        << format_metric(row.tangent_norm_mean) << ","
        << format_metric(row.tangent_norm_cov) << ","
        << format_metric(row.tangent_norm_weight) << ",";
    if (row.kl_estimate) out << format_metric(*row.kl_estimate);
    out << ",";
    if (row.energy_distance) out << format_metric(*row.energy_distance);
    out << "\n";
  }
}

std::string MetricLog::to_csv() const {
  std::ostringstream out;
  write_csv(out);
  return out.str();
}

WfrTangent blended_tangent(const GmmPotential& theta, const GmmPotential& snapshot,
                           const GmmPotential& target, double eta,
                           const std::vector<Vector>& batch, int n_y,
                           std::uint64_t seed) {
  require(eta >= 0.0 && eta <= 1.0, "blended_tangent: eta must lie in [0, 1]");
  require(!batch.empty(), "blended_tangent: empty batch");
  require(theta.dim() == snapshot.dim() && theta.dim() == target.dim(),
          "blended_tangent: dimension mismatch");
  require(theta.epsilon() == snapshot.epsilon() && theta.epsilon() == target.epsilon(),
          "blended_tangent: epsilon mismatch");

  WfrTangent total = WfrTangent::zero(theta.num_components(), theta.dim());
  total.weights = Vector::Zero(theta.num_components());
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    // Both gradients of one batch item reuse the same sample stream.
    const std::uint64_t item_seed = mix_seed(seed, 0x51edu, i);
    WfrTangent toward_target = wfr_grad(theta, target, batch[i], n_y, item_seed);
    if (eta < 1.0) {
      const WfrTangent toward_snapshot = wfr_grad(theta, snapshot, batch[i], n_y, item_seed);
      toward_target.scale(eta).axpy(1.0 - eta, toward_snapshot);
    }
    total.axpy(scale, toward_target);
    total.weights += scale * toward_target.weights;
  }
  if (batch.size() > 1) total.recenter();
  return total;
}

TrainResult train(const GmmPotential& init, const TrainerConfig& config,
                  const TargetProvider& target_provider, const DataSource& data_source,
                  const Evaluator& evaluator) {
  require(config.inner_steps >= 1 && config.batch_size >= 1 && config.n_y >= 1,
          "train: counts must be positive");
  require(config.inner_step_size > 0.0, "train: inner step size must be positive");
  require(static_cast<bool>(target_provider), "train: target provider required");
  require(config.zero_centered_trick || static_cast<bool>(data_source),
          "train: data source required unless the zero-centered trick is on");

  GmmPotential theta = init;
  TrainResult result{theta, MetricLog{}, {}};
  const std::vector<Vector> zero_batch(1, Vector::Zero(init.dim()));
  const int warmup = config.schedule.warmup_steps();

  for (int t = 1; t <= config.schedule.total_steps; ++t) {
    const GmmPotential target = target_provider(t);
    if (warmup > 0 && t == warmup + 1) {
      // Warm-up hands the model over to the tracked target once.
      theta = target;
    }
    const GmmPotential snapshot = theta;
    const double eta = step_size(t, config.schedule);

    MetricRow row;
    row.step = t;
    row.eta = eta;
    double h = config.inner_step_size;
    int rejections = 0;
    bool stalled = false;
    int applied = 0;
    for (int n = 1; n <= config.inner_steps && !stalled; ++n) {
      const std::vector<Vector> batch =
          config.zero_centered_trick ? zero_batch : data_source(t, n);
      const std::uint64_t step_seed = mix_seed(config.seed, t, n);
      WfrTangent tangent =
          blended_tangent(theta, snapshot, target, eta, batch, config.n_y, step_seed);
      if (config.trust_region) apply_trust_region(tangent, h);
      row.tangent_norm_mean += tangent.mean_norm();
      row.tangent_norm_cov += tangent.cov_norm();
      row.tangent_norm_weight += tangent.weight_norm();
      ++applied;
      for (;;) {
        try {
          theta = apply_tangent(theta, tangent, h);
          break;
        } catch (const StepRejected&) {
          ++rejections;
          if (rejections >= 3) {
            stalled = true;
            break;
          }
          h *= 0.5;
        }
      }
    }
    if (applied > 0) {
      row.tangent_norm_mean /= applied;
      row.tangent_norm_cov /= applied;
      row.tangent_norm_weight /= applied;
    }
    if (stalled) result.stalled_steps.push_back(t);
    if (evaluator) evaluator(t, theta, row);
    result.log.rows.push_back(std::move(row));
  }

  result.theta = theta;
  return result;
}

}  // namespace mirrorbridge
