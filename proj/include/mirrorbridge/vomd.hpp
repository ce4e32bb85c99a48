#pragma once

#include "mirrorbridge/wfr.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

namespace mirrorbridge {

enum class ScheduleKind {
  kHarmonic,     // 1 / (1/eta_1 + (1/eta_T - 1/eta_1) (t-1)/(T-1))
  kTheoretical,  // 2 / (t + 1)
};

// Step-size sequence for the outer loop. Warm-up steps (t <= warmup_fraction*T)
// return exactly 1.
struct OmdSchedule {
  double eta_1 = 1.0;
  double eta_T = 0.05;
  int total_steps = 400;
  double warmup_fraction = 0.0;
  ScheduleKind kind = ScheduleKind::kHarmonic;

  int warmup_steps() const { return static_cast<int>(warmup_fraction * total_steps); }
};

double step_size(int t, const OmdSchedule& schedule);

struct TrainerConfig {
  int inner_steps = 50;
  double inner_step_size = 0.1;
  int batch_size = 1;
  int n_y = 16;
  bool zero_centered_trick = true;
  // Per-component caps on the applied step; keeps the noise-driven rates of
  // near-massless components from random-walking over long runs.
  bool trust_region = true;
  std::uint64_t seed = 0;
  OmdSchedule schedule;
};

struct MetricRow {
  int step = 0;
  double eta = 0.0;
  double tangent_norm_mean = 0.0;
  double tangent_norm_cov = 0.0;
  double tangent_norm_weight = 0.0;
  std::optional<double> kl_estimate;
  std::optional<double> energy_distance;
};

struct MetricLog {
  static const char* csv_header();  // fixed column set
  std::vector<MetricRow> rows;
  void write_csv(std::ostream& out) const;
  std::string to_csv() const;
};

struct TrainResult {
  GmmPotential theta;
  MetricLog log;
  std::vector<int> stalled_steps;
};

// Target model for outer step t (1-based).
using TargetProvider = std::function<GmmPotential(int t)>;
// Mini batch of inputs for inner step n of outer step t; ignored when the
// zero-centered trick is on.
using DataSource = std::function<std::vector<Vector>(int t, int n)>;
// Optional per-step evaluation hook filling the metric columns.
using Evaluator = std::function<void(int t, const GmmPotential& theta, MetricRow& row)>;

// Convex combination eta * grad(theta -> target) + (1 - eta) * grad(theta ->
// snapshot), averaged over the batch. The two gradients of one batch item
// share the sample stream (common random numbers), so the blend is exact at
// the fixed point theta == snapshot == target.
WfrTangent blended_tangent(const GmmPotential& theta, const GmmPotential& snapshot,
                           const GmmPotential& target, double eta,
                           const std::vector<Vector>& batch, int n_y,
                           std::uint64_t seed);

// The full training loop: for each outer step, acquire the target, snapshot
// the model, and run inner_steps retraction steps along the blended tangent.
// Rejected steps halve h; after three rejections within one outer step the
// step is recorded as stalled and training moves on. Deterministic given the
// config seed and deterministic providers.
TrainResult train(const GmmPotential& init, const TrainerConfig& config,
                  const TargetProvider& target_provider,
                  const DataSource& data_source = nullptr,
                  const Evaluator& evaluator = nullptr);

}  // namespace mirrorbridge
