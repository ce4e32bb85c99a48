#include "mirrorbridge/experiment.hpp"

#include "mirrorbridge/dynamics.hpp"
#include "mirrorbridge/metrics.hpp"
#include "mirrorbridge/solvers.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace mirrorbridge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ----- config parsing ------------------------------------------------------

class ConfigErrors {
 public:
  void add(const std::string& message) { messages_.push_back(message); }
  void raise_if_any() const {
    if (messages_.empty()) return;
    std::ostringstream out;
    out << "config validation failed:";
    for (const auto& m : messages_) out << "\n  - " << m;
    throw std::invalid_argument(out.str());
  }

 private:
  std::vector<std::string> messages_;
};

void check_keys(const json& section, const std::string& name,
                const std::vector<std::string>& allowed, ConfigErrors& errors) {
  for (auto it = section.begin(); it != section.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      errors.add(name + "." + it.key() + ": unknown key");
    }
  }
}

Vector parse_vector(const json& node) {
  Vector v(node.size());
  for (std::size_t i = 0; i < node.size(); ++i) v[i] = node[i].get<double>();
  return v;
}

Matrix parse_matrix(const json& node) {
  const std::size_t rows = node.size();
  require(rows > 0, "matrix: empty");
  const std::size_t cols = node[0].size();
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    require(node[i].size() == cols, "matrix: ragged rows");
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = node[i][j].get<double>();
  }
  return m;
}

DistSpec parse_dist(const json& node, const std::string& name, int dim,
                    ConfigErrors& errors) {
  const std::string type = node.value("type", "");
  if (type == "gaussian") {
    check_keys(node, name, {"type", "mean", "cov"}, errors);
    GaussianSpec spec;
    spec.mean = node.contains("mean") ? parse_vector(node["mean"]) : Vector::Zero(dim);
    spec.cov = node.contains("cov") ? parse_matrix(node["cov"]) : Matrix::Identity(dim, dim);
    return spec;
  }
  if (type == "gmm") {
    check_keys(node, name, {"type", "components"}, errors);
    std::vector<GmmSpecComponent> components;
    for (const auto& comp : node.value("components", json::array())) {
      GmmSpecComponent c;
      c.weight = comp.value("weight", 1.0);
      c.mean = parse_vector(comp.at("mean"));
      c.cov = parse_matrix(comp.at("cov"));
      components.push_back(std::move(c));
    }
    if (components.empty()) errors.add(name + ": gmm needs components");
    return components;
  }
  if (type == "ring") {
    check_keys(node, name, {"type", "count", "radius", "stddev"}, errors);
    RingSpec ring;
    ring.count = node.value("count", 8);
    ring.radius = node.value("radius", 4.0);
    ring.stddev = node.value("stddev", 0.3);
    return ring;
  }
  errors.add(name + ".type: expected gaussian | gmm | ring");
  return GaussianSpec{Vector::Zero(dim), Matrix::Identity(dim, dim)};
}

json dist_to_json(const DistSpec& spec) {
  json node;
  if (const auto* gaussian = std::get_if<GaussianSpec>(&spec)) {
    node["type"] = "gaussian";
    node["mean"] = std::vector<double>(gaussian->mean.data(),
                                       gaussian->mean.data() + gaussian->mean.size());
    json cov = json::array();
    for (Eigen::Index i = 0; i < gaussian->cov.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index j = 0; j < gaussian->cov.cols(); ++j) row.push_back(gaussian->cov(i, j));
      cov.push_back(row);
    }
    node["cov"] = cov;
  } else if (const auto* mixture = std::get_if<std::vector<GmmSpecComponent>>(&spec)) {
    node["type"] = "gmm";
    json comps = json::array();
    for (const auto& c : *mixture) {
      json comp;
      comp["weight"] = c.weight;
      comp["mean"] = std::vector<double>(c.mean.data(), c.mean.data() + c.mean.size());
      json cov = json::array();
      for (Eigen::Index i = 0; i < c.cov.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < c.cov.cols(); ++j) row.push_back(c.cov(i, j));
        cov.push_back(row);
      }
      comp["cov"] = cov;
      comps.push_back(comp);
    }
    node["components"] = comps;
  } else {
    const auto& ring = std::get<RingSpec>(spec);
    node["type"] = "ring";
    node["count"] = ring.count;
    node["radius"] = ring.radius;
    node["stddev"] = ring.stddev;
  }
  return node;
}

std::string timestamp_line() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t stamp = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&stamp));
  return std::string("# generated ") + buf + "\n";
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open output file " + path.string());
  out << text;
}

json error_record(const std::string& mode, const std::string& message) {
  json record;
  record["error"] = message;
  record["mode"] = mode;
  return record;
}

// ----- tiny SVG plotting ----------------------------------------------------

struct ScatterSeries {
  const Matrix* points;
  std::string color;
};

std::string svg_scatter(const std::vector<ScatterSeries>& series) {
  double lo = -1.0, hi = 1.0;
  for (const auto& s : series) {
    if (s.points->rows() == 0) continue;
    lo = std::min({lo, s.points->col(0).minCoeff(), s.points->col(1).minCoeff()});
    hi = std::max({hi, s.points->col(0).maxCoeff(), s.points->col(1).maxCoeff()});
  }
  const double span = hi - lo;
  const double size = 480.0;
  auto map = [&](double v) { return 20.0 + (v - lo) / span * (size - 40.0); };
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\""
      << size << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& s : series) {
    for (Eigen::Index i = 0; i < s.points->rows(); ++i) {
      out << "<circle cx=\"" << map((*s.points)(i, 0)) << "\" cy=\""
          << size - map((*s.points)(i, 1)) << "\" r=\"1.6\" fill=\"" << s.color
          << "\" fill-opacity=\"0.55\"/>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

std::string svg_trajectories(const std::vector<Trajectory>& trajectories) {
  double lo = -1.0, hi = 1.0;
  for (const auto& t : trajectories) {
    lo = std::min(lo, t.states.minCoeff());
    hi = std::max(hi, t.states.maxCoeff());
  }
  const double span = hi - lo;
  const double size = 480.0;
  auto map = [&](double v) { return 20.0 + (v - lo) / span * (size - 40.0); };
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\""
      << size << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& t : trajectories) {
    out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-opacity=\"0.4\" points=\"";
    for (Eigen::Index i = 0; i < t.times.size(); ++i) {
      const double x = t.states.cols() >= 2 ? t.states(i, 0) : t.times[i];
      const double y = t.states.cols() >= 2 ? t.states(i, 1) : t.states(i, 0);
      out << map(x) << "," << size - map(y) << " ";
    }
    out << "\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

// ----- shared run machinery --------------------------------------------------

// Oracle conditional of a Gaussian-pair problem, when both marginals are Gaussian.
std::optional<GmmPotential> problem_oracle(const ProblemSpec& problem) {
  const auto* mu = std::get_if<GaussianSpec>(&problem.mu);
  const auto* nu = std::get_if<GaussianSpec>(&problem.nu);
  if (!mu || !nu) return std::nullopt;
  return eot_conditional_potential(mu->mean, mu->cov, nu->mean, nu->cov, problem.epsilon);
}

GmmPotential init_model(const ExperimentConfig& config, std::uint64_t seed) {
  const Matrix init_y =
      sample_dist(config.problem.nu, config.problem.dim, std::max(config.components, 32),
                  mix_seed(seed, 0x1417u));
  FitConfig fit;
  fit.dim = config.problem.dim;
  fit.components = config.components;
  fit.epsilon = config.problem.epsilon;
  fit.init_seed = seed;
  fit.init_chol_scale = config.init_chol_scale;
  return ReverseKlFitter(fit, init_y).theta();
}

struct PreparedRun {
  fs::path dir;
  std::uint64_t seed;
};

// Creates the run directory; refuses to overwrite an existing run unless forced.
PreparedRun prepare_run(const std::string& mode, ExperimentConfig& config,
                        const RunOverrides& overrides) {
  if (overrides.seed) config.problem.seed = *overrides.seed;
  const fs::path dir = run_directory(overrides.out_dir, mode, config);
  if (fs::exists(dir) && !fs::is_empty(dir) && !overrides.force) {
    throw std::runtime_error("output directory already exists (use --force): " + dir.string());
  }
  fs::create_directories(dir);
  write_text(dir / "resolved_config.json", resolved_config_json(config) + "\n");
  return {dir, config.problem.seed};
}

// Fresh mini batch of inputs from mu.
Matrix mu_batch(const ExperimentConfig& config, int n, std::uint64_t seed) {
  return sample_dist(config.problem.mu, config.problem.dim, n, seed);
}

// Rows sampled with replacement.
Matrix resample_rows(const Matrix& data, int n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix out(n, data.cols());
  for (int i = 0; i < n; ++i) {
    const int row = std::min<int>(static_cast<int>(rng.uniform() * data.rows()),
                                  static_cast<int>(data.rows()) - 1);
    out.row(i) = data.row(row);
  }
  return out;
}

// Plan output samples: x ~ mu, y ~ condition(theta, x).
Matrix generated_outputs(const GmmPotential& theta, const ExperimentConfig& config, int n,
                         std::uint64_t seed) {
  const Matrix inputs = mu_batch(config, n, mix_seed(seed, 0x9edau));
  Matrix outputs(n, theta.dim());
  for (int i = 0; i < n; ++i) {
    const ConditionalMixture plan = theta.condition(inputs.row(i).transpose());
    outputs.row(i) = plan.sample(1, mix_seed(seed, 0x9edbu, i));
  }
  return outputs;
}

// Steers target fitting for train/stream: continue-mode keeps one fitter,
// fresh-mode rebuilds it from scratch every outer step.
class TargetFitter {
 public:
  TargetFitter(const ExperimentConfig& config, std::uint64_t seed)
      : config_(config), seed_(seed) {
    fit_.dim = config.problem.dim;
    fit_.components = config.components;
    fit_.epsilon = config.problem.epsilon;
    fit_.learning_rate = config.learning_rate;
    fit_.momentum = config.momentum;
    fit_.chol_diag_floor = config.fit_floor;
    fit_.init_chol_scale = config.init_chol_scale;
    fit_.init_seed = mix_seed(seed, 0x7a26u);
    reset(fit_.init_seed, sample_dist(config.problem.nu, config.problem.dim,
                                      std::max(config.components, 32),
                                      mix_seed(seed, 0x7a27u)));
    ema_.reset(new GmmPotential(fitter_->theta()));
  }

  // One outer step's worth of refitting against the given output data.
  void refit(int t, const Matrix& y_data) {
    if (config_.target_refit == "fresh") {
      reset(mix_seed(seed_, 0x7a28u, t), y_data);
    }
    for (int it = 0; it < config_.refit_iterations; ++it) {
      const std::uint64_t it_seed = mix_seed(seed_, 0x7a29u, t, it);
      const Matrix xb = mu_batch(config_, config_.batch_size, mix_seed(it_seed, 1));
      const Matrix yb = resample_rows(y_data, config_.batch_size, mix_seed(it_seed, 2));
      fitter_->step(xb, yb);
    }
    *ema_ = ema_update(*ema_, fitter_->theta(), config_.ema_decay);
  }

  GmmPotential target() const {
    if (config_.target == "reverse_kl_ema") return *ema_;
    return fitter_->theta();
  }
  GmmPotential raw() const { return fitter_->theta(); }

 private:
  void reset(std::uint64_t init_seed, const Matrix& init_y) {
    fit_.init_seed = init_seed;
    fitter_.reset(new ReverseKlFitter(fit_, init_y));
  }

  ExperimentConfig config_;
  std::uint64_t seed_;
  FitConfig fit_;
  std::unique_ptr<ReverseKlFitter> fitter_;
  std::unique_ptr<GmmPotential> ema_;
};

struct EvalContext {
  std::optional<GmmPotential> oracle;
  Matrix holdout_y;
};

Evaluator make_evaluator(const ExperimentConfig& config, const EvalContext& ctx,
                         std::uint64_t seed) {
  return [&config, &ctx, seed](int t, const GmmPotential& theta, MetricRow& row) {
    if (config.eval_every <= 0 || t % config.eval_every != 0) return;
    if (ctx.oracle && config.kl_samples > 0) {
      const Vector zero = Vector::Zero(theta.dim());
      row.kl_estimate = mc_kl(theta.condition(zero), ctx.oracle->condition(zero),
                              config.kl_samples, mix_seed(seed, 0xe7a1u, t));
    }
    if (ctx.holdout_y.rows() > 0 && config.ed_samples > 0) {
      const Matrix generated =
          generated_outputs(theta, config, config.ed_samples, mix_seed(seed, 0xe7a2u, t));
      const Matrix reference = ctx.holdout_y.topRows(
          std::min<Eigen::Index>(ctx.holdout_y.rows(), config.ed_samples));
      row.energy_distance = energy_distance(generated, reference);
    }
  };
}

void write_metrics_csv(const fs::path& dir, const MetricLog& log) {
  write_text(dir / "metrics.csv", timestamp_line() + log.to_csv());
}

void write_eval_rows(const fs::path& dir, const ExperimentConfig& config,
                     const std::vector<std::pair<std::string, json>>& rows) {
  std::ostringstream out;
  out << timestamp_line();
  out << "method,problem,seed,energy_distance,cbw_uvp\n";
  for (const auto& [method, values] : rows) {
    out << method << "," << config.problem.name << "," << config.problem.seed << ",";
    if (values.contains("energy_distance")) out << values["energy_distance"].get<double>();
    out << ",";
    if (values.contains("cbw_uvp")) out << values["cbw_uvp"].get<double>();
    out << "\n";
  }
  write_text(dir / "eval.csv", out.str());
}

TrainerConfig trainer_config(const ExperimentConfig& config, std::uint64_t seed) {
  TrainerConfig trainer;
  trainer.inner_steps = config.inner_steps_per_omd();
  trainer.inner_step_size = config.inner_step_size;
  trainer.batch_size = config.batch_size;
  trainer.n_y = config.n_y;
  trainer.zero_centered_trick = config.zero_centered;
  trainer.trust_region = config.trust_region;
  trainer.seed = seed;
  trainer.schedule = config.schedule;
  return trainer;
}

int run_training_like(const std::string& mode, const ExperimentConfig& base,
                      const RunOverrides& overrides, std::ostream& err) {
  try {
    ExperimentConfig config = base;
    const PreparedRun run = prepare_run(mode, config, overrides);
    if (overrides.dry_run) return 0;
    const std::uint64_t seed = run.seed;

    EvalContext ctx;
    ctx.oracle = problem_oracle(config.problem);
    ctx.holdout_y = config.holdout > 0
                        ? sample_dist(config.problem.nu, config.problem.dim, config.holdout,
                                      mix_seed(seed, 0x401du))
                        : Matrix();

    const bool streaming = mode == "stream";
    Matrix stream_data;
    std::unique_ptr<RotatingStream> stream;
    if (streaming) {
      stream_data = sample_dist(config.problem.nu, config.problem.dim,
                                std::max(config.holdout * 2, 8000), mix_seed(seed, 0x57eau));
      stream.reset(new RotatingStream(stream_data));
    }

    TargetFitter fitter(config, seed);
    TargetProvider provider = [&](int t) {
      if (config.target == "oracle") {
        require(static_cast<bool>(ctx.oracle), "oracle target requires Gaussian marginals");
        return *ctx.oracle;
      }
      if (streaming) {
        const RotatingStream::Window window = stream->next_window();
        if (!window.empty_flagged) fitter.refit(t, window.samples);
      } else {
        const Matrix y_data = sample_dist(config.problem.nu, config.problem.dim,
                                          config.refit_batch, mix_seed(seed, 0x1deau, t));
        fitter.refit(t, y_data);
      }
      return fitter.target();
    };

    DataSource data_source = [&](int t, int n) {
      const Matrix batch =
          mu_batch(config, config.batch_size, mix_seed(seed, 0xda7au, t, n));
      std::vector<Vector> rows(batch.rows());
      for (Eigen::Index i = 0; i < batch.rows(); ++i) rows[i] = batch.row(i).transpose();
      return rows;
    };

    const GmmPotential init = init_model(config, mix_seed(seed, 0x111du));
    const Evaluator evaluator = make_evaluator(config, ctx, seed);
    TrainResult result = train(init, trainer_config(config, seed), provider, data_source,
                               evaluator);

    const bool oracle_target = config.target == "oracle";
    if (config.write_csv) write_metrics_csv(run.dir, result.log);
    if (config.write_checkpoint) {
      result.theta.save((run.dir / "theta.json").string());
      const GmmPotential final_target = oracle_target ? *ctx.oracle : fitter.raw();
      final_target.save((run.dir / "target.json").string());
    }

    if (ctx.holdout_y.rows() > 0 && config.ed_samples > 0) {
      std::vector<std::pair<std::string, json>> rows;
      auto ed_of = [&](const GmmPotential& model, std::uint64_t tag) {
        const Matrix generated =
            generated_outputs(model, config, config.ed_samples, mix_seed(seed, tag));
        return energy_distance(generated,
                               ctx.holdout_y.topRows(std::min<Eigen::Index>(
                                   ctx.holdout_y.rows(), config.ed_samples)));
      };
      json mirrored;
      mirrored["energy_distance"] = ed_of(result.theta, 0xed01u);
      rows.emplace_back("mirrored", mirrored);
      if (!oracle_target) {
        json baseline;
        baseline["energy_distance"] = ed_of(fitter.raw(), 0xed02u);
        rows.emplace_back(config.target == "reverse_kl_ema" ? "reverse_kl_ema" : "reverse_kl",
                          baseline);
      }
      write_eval_rows(run.dir, config, rows);
    }

    if (overrides.plots) {
      const Matrix mu_points = mu_batch(config, 1500, mix_seed(seed, 0x9107u));
      const Matrix nu_points =
          sample_dist(config.problem.nu, config.problem.dim, 1500, mix_seed(seed, 0x9108u));
      const Matrix generated = generated_outputs(result.theta, config, 1500,
                                                 mix_seed(seed, 0x9109u));
      if (config.problem.dim >= 2) {
        write_text(run.dir / "scatter.svg",
                   svg_scatter({{&mu_points, "gray"},
                                {&nu_points, "salmon"},
                                {&generated, "steelblue"}}));
      }
    }
    return 0;
  } catch (const std::exception& ex) {
    err << error_record(mode, ex.what()).dump() << "\n";
    return 1;
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& ex) {
    throw std::invalid_argument(std::string("config parse error: ") + ex.what());
  }
  ConfigErrors errors;
  check_keys(doc, "config", {"problem", "model", "schedule", "trainer", "eval", "output"},
             errors);
  ExperimentConfig config;

  const json problem = doc.value("problem", json::object());
  check_keys(problem, "problem",
             {"name", "preset", "d", "epsilon", "seed", "mu", "nu"}, errors);
  const std::string preset = problem.value("preset", "");
  if (preset == "gauss_to_ring8") {
    config.problem = gauss_to_ring8();
  } else if (preset == "gauss_to_gauss") {
    config.problem = gauss_to_gauss(problem.value("d", 2), problem.value("epsilon", 0.1));
  } else if (!preset.empty()) {
    errors.add("problem.preset: unknown preset " + preset);
  }
  if (problem.contains("d")) config.problem.dim = problem["d"].get<int>();
  if (problem.contains("epsilon")) config.problem.epsilon = problem["epsilon"].get<double>();
  if (problem.contains("seed")) config.problem.seed = problem["seed"].get<std::uint64_t>();
  if (problem.contains("name")) config.problem.name = problem["name"].get<std::string>();
  if (config.problem.name.empty()) config.problem.name = "problem";
  if (problem.contains("mu")) {
    config.problem.mu = parse_dist(problem["mu"], "problem.mu", config.problem.dim, errors);
  } else if (preset.empty()) {
    config.problem.mu = GaussianSpec{Vector::Zero(config.problem.dim),
                                     Matrix::Identity(config.problem.dim, config.problem.dim)};
  }
  if (problem.contains("nu")) {
    config.problem.nu = parse_dist(problem["nu"], "problem.nu", config.problem.dim, errors);
  } else if (preset.empty()) {
    config.problem.nu = RingSpec{};
  }
  if (config.problem.epsilon <= 0.0) errors.add("problem.epsilon: must be positive");

  const json model = doc.value("model", json::object());
  check_keys(model, "model", {"components", "init_chol_scale"}, errors);
  config.components = model.value("components", 8);
  config.init_chol_scale = model.value("init_chol_scale", 1.0);
  if (config.components < 1) errors.add("model.components: must be positive");

  const json schedule = doc.value("schedule", json::object());
  check_keys(schedule, "schedule",
             {"eta_1", "eta_T", "omd_steps", "warmup_fraction", "kind"}, errors);
  config.schedule.eta_1 = schedule.value("eta_1", 1.0);
  config.schedule.eta_T = schedule.value("eta_T", 0.05);
  config.schedule.total_steps = schedule.value("omd_steps", 400);
  config.schedule.warmup_fraction = schedule.value("warmup_fraction", 0.0);
  const std::string kind = schedule.value("kind", "harmonic");
  if (kind == "harmonic") {
    config.schedule.kind = ScheduleKind::kHarmonic;
  } else if (kind == "theoretical") {
    config.schedule.kind = ScheduleKind::kTheoretical;
  } else {
    errors.add("schedule.kind: expected harmonic | theoretical");
  }
  if (!(config.schedule.eta_1 <= 1.0 && config.schedule.eta_1 >= config.schedule.eta_T &&
        config.schedule.eta_T > 0.0)) {
    errors.add("schedule: need 1 >= eta_1 >= eta_T > 0");
  }
  if (config.schedule.total_steps < 1) errors.add("schedule.omd_steps: must be positive");
  if (config.schedule.warmup_fraction < 0.0 || config.schedule.warmup_fraction >= 1.0) {
    errors.add("schedule.warmup_fraction: must lie in [0, 1)");
  }

  const json trainer = doc.value("trainer", json::object());
  check_keys(trainer, "trainer",
             {"total_inner_steps", "inner_step_size", "batch_size", "n_y", "zero_centered",
              "target", "target_refit", "refit_iterations", "refit_batch", "learning_rate",
              "momentum", "ema_decay", "fit_floor", "trust_region"},
             errors);
  config.total_inner_steps = trainer.value("total_inner_steps", 20000);
  config.inner_step_size = trainer.value("inner_step_size", 0.02);
  config.batch_size = trainer.value("batch_size", 128);
  config.n_y = trainer.value("n_y", 16);
  config.zero_centered = trainer.value("zero_centered", true);
  config.target = trainer.value("target", "reverse_kl");
  config.target_refit = trainer.value("target_refit", "continue");
  config.refit_iterations = trainer.value("refit_iterations", 50);
  config.refit_batch = trainer.value("refit_batch", 256);
  config.learning_rate = trainer.value("learning_rate", 0.05);
  config.momentum = trainer.value("momentum", 0.0);
  config.ema_decay = trainer.value("ema_decay", 0.99);
  config.fit_floor = trainer.value("fit_floor", 0.05);
  config.trust_region = trainer.value("trust_region", true);
  if (config.target != "reverse_kl" && config.target != "reverse_kl_ema" &&
      config.target != "oracle") {
    errors.add("trainer.target: expected reverse_kl | reverse_kl_ema | oracle");
  }
  if (config.target_refit != "continue" && config.target_refit != "fresh") {
    errors.add("trainer.target_refit: expected continue | fresh");
  }
  if (config.total_inner_steps < 1) errors.add("trainer.total_inner_steps: must be positive");
  if (config.inner_step_size <= 0.0) errors.add("trainer.inner_step_size: must be positive");

  const json eval = doc.value("eval", json::object());
  check_keys(eval, "eval",
             {"every", "kl_samples", "ed_samples", "holdout", "checkpoint", "sampler",
              "trajectories", "sde_steps", "x0", "grid_points", "grid_radius",
              "sinkhorn_max_iters", "sinkhorn_tol", "checkpoints"},
             errors);
  config.eval_every = eval.value("every", 10);
  config.kl_samples = eval.value("kl_samples", 4000);
  config.ed_samples = eval.value("ed_samples", 2000);
  config.holdout = eval.value("holdout", 4000);
  config.checkpoint_path = eval.value("checkpoint", "");
  config.sampler = eval.value("sampler", "sde");
  config.trajectories = eval.value("trajectories", 64);
  config.sde_steps = eval.value("sde_steps", 200);
  if (eval.contains("x0")) {
    for (const auto& v : eval["x0"]) config.x0.push_back(v.get<double>());
  }
  config.grid_points = eval.value("grid_points", 400);
  config.grid_radius = eval.value("grid_radius", 5.0);
  config.sinkhorn_max_iters = eval.value("sinkhorn_max_iters", 10000);
  config.sinkhorn_tol = eval.value("sinkhorn_tol", 1e-10);
  if (eval.contains("checkpoints")) {
    for (const auto& entry : eval["checkpoints"]) {
      config.eval_checkpoints.emplace_back(entry.value("method", "model"),
                                           entry.value("path", ""));
    }
  }
  if (config.sampler != "sde" && config.sampler != "bridge") {
    errors.add("eval.sampler: expected sde | bridge");
  }

  const json output = doc.value("output", json::object());
  check_keys(output, "output", {"checkpoint", "csv"}, errors);
  config.write_checkpoint = output.value("checkpoint", true);
  config.write_csv = output.value("csv", true);

  errors.raise_if_any();
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string resolved_config_json(const ExperimentConfig& config) {
  json doc;
  doc["problem"]["name"] = config.problem.name;
  doc["problem"]["d"] = config.problem.dim;
  doc["problem"]["epsilon"] = config.problem.epsilon;
  doc["problem"]["seed"] = config.problem.seed;
  doc["problem"]["mu"] = dist_to_json(config.problem.mu);
  doc["problem"]["nu"] = dist_to_json(config.problem.nu);
  doc["model"]["components"] = config.components;
  doc["model"]["init_chol_scale"] = config.init_chol_scale;
  doc["schedule"]["eta_1"] = config.schedule.eta_1;
  doc["schedule"]["eta_T"] = config.schedule.eta_T;
  doc["schedule"]["omd_steps"] = config.schedule.total_steps;
  doc["schedule"]["warmup_fraction"] = config.schedule.warmup_fraction;
  doc["schedule"]["kind"] =
      config.schedule.kind == ScheduleKind::kHarmonic ? "harmonic" : "theoretical";
  doc["trainer"]["total_inner_steps"] = config.total_inner_steps;
  doc["trainer"]["inner_step_size"] = config.inner_step_size;
  doc["trainer"]["batch_size"] = config.batch_size;
  doc["trainer"]["n_y"] = config.n_y;
  doc["trainer"]["zero_centered"] = config.zero_centered;
  doc["trainer"]["target"] = config.target;
  doc["trainer"]["target_refit"] = config.target_refit;
  doc["trainer"]["refit_iterations"] = config.refit_iterations;
  doc["trainer"]["refit_batch"] = config.refit_batch;
  doc["trainer"]["learning_rate"] = config.learning_rate;
  doc["trainer"]["momentum"] = config.momentum;
  doc["trainer"]["ema_decay"] = config.ema_decay;
  doc["trainer"]["fit_floor"] = config.fit_floor;
  doc["trainer"]["trust_region"] = config.trust_region;
  doc["eval"]["every"] = config.eval_every;
  doc["eval"]["kl_samples"] = config.kl_samples;
  doc["eval"]["ed_samples"] = config.ed_samples;
  doc["eval"]["holdout"] = config.holdout;
  doc["eval"]["sampler"] = config.sampler;
  doc["eval"]["trajectories"] = config.trajectories;
  doc["eval"]["sde_steps"] = config.sde_steps;
  doc["output"]["checkpoint"] = config.write_checkpoint;
  doc["output"]["csv"] = config.write_csv;
  return doc.dump(2);
}

std::string run_directory(const std::string& out_dir, const std::string& mode,
                          const ExperimentConfig& config) {
  const std::uint64_t hash = fnv1a(mode + "\n" + resolved_config_json(config));
  char digest[10];
  std::snprintf(digest, sizeof(digest), "%08llx",
                static_cast<unsigned long long>(hash & 0xffffffffull));
  std::ostringstream name;
  name << mode << "-" << config.problem.name << "-" << digest << "-s" << config.problem.seed;
  return (fs::path(out_dir) / name.str()).string();
}

int run_train(const ExperimentConfig& config, const RunOverrides& overrides,
              std::ostream& err) {
  return run_training_like("train", config, overrides, err);
}

int run_stream(const ExperimentConfig& config, const RunOverrides& overrides,
               std::ostream& err) {
  return run_training_like("stream", config, overrides, err);
}

int run_fit(const ExperimentConfig& base, const RunOverrides& overrides, std::ostream& err) {
  try {
    ExperimentConfig config = base;
    const PreparedRun run = prepare_run("fit", config, overrides);
    if (overrides.dry_run) return 0;
    const std::uint64_t seed = run.seed;

    FitConfig fit;
    fit.dim = config.problem.dim;
    fit.components = config.components;
    fit.epsilon = config.problem.epsilon;
    fit.iterations = config.total_inner_steps;
    fit.learning_rate = config.learning_rate;
    fit.momentum = config.momentum;
    fit.init_seed = mix_seed(seed, 0xf17abu);
    fit.init_chol_scale = config.init_chol_scale;
    fit.chol_diag_floor = config.fit_floor;

    std::ostringstream log;
    log << timestamp_line() << "iteration,loss\n";
    ReverseKlFitter fitter(fit, sample_dist(config.problem.nu, config.problem.dim,
                                            std::max(config.components, 32),
                                            mix_seed(seed, 0xf17acu)));
    for (int it = 0; it < fit.iterations; ++it) {
      const Matrix xb = mu_batch(config, config.batch_size, mix_seed(seed, 0xf17adu, it, 1));
      const Matrix yb = sample_dist(config.problem.nu, config.problem.dim, config.batch_size,
                                    mix_seed(seed, 0xf17adu, it, 2));
      const double loss = fitter.step(xb, yb);
      if (it % 50 == 0 || it + 1 == fit.iterations) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", loss);
        log << it << "," << buf << "\n";
      }
    }
    if (config.write_csv) write_text(run.dir / "fit.csv", log.str());
    if (config.write_checkpoint) fitter.theta().save((run.dir / "theta.json").string());
    return 0;
  } catch (const std::exception& ex) {
    err << error_record("fit", ex.what()).dump() << "\n";
    return 1;
  }
}

int run_sample(const ExperimentConfig& base, const RunOverrides& overrides,
               std::ostream& err) {
  try {
    ExperimentConfig config = base;
    const PreparedRun run = prepare_run("sample", config, overrides);
    if (overrides.dry_run) return 0;
    require(!config.checkpoint_path.empty(), "sample: eval.checkpoint required");
    const GmmPotential theta = GmmPotential::load(config.checkpoint_path);
    Vector x0 = Vector::Zero(theta.dim());
    if (!config.x0.empty()) {
      require(static_cast<int>(config.x0.size()) == theta.dim(),
              "sample: x0 dimension mismatch");
      for (int i = 0; i < theta.dim(); ++i) x0[i] = config.x0[i];
    }
    std::vector<Trajectory> trajectories;
    trajectories.reserve(config.trajectories);
    const Vector times = Vector::LinSpaced(config.sde_steps + 1, 0.0, 1.0);
    for (int i = 0; i < config.trajectories; ++i) {
      const std::uint64_t traj_seed = mix_seed(run.seed, 0x7ea1u, i);
      trajectories.push_back(config.sampler == "bridge"
                                 ? sample_bridge(theta, x0, times, traj_seed)
                                 : sample_sde(theta, x0, config.sde_steps, traj_seed));
    }
    write_text(run.dir / "trajectories.csv", timestamp_line() + trajectories_to_csv(trajectories));
    if (overrides.plots) {
      write_text(run.dir / "trajectories.svg", svg_trajectories(trajectories));
    }
    return 0;
  } catch (const std::exception& ex) {
    err << error_record("sample", ex.what()).dump() << "\n";
    return 1;
  }
}

int run_eval(const ExperimentConfig& base, const RunOverrides& overrides, std::ostream& err) {
  try {
    ExperimentConfig config = base;
    const PreparedRun run = prepare_run("eval", config, overrides);
    if (overrides.dry_run) return 0;
    require(!config.eval_checkpoints.empty(), "eval: eval.checkpoints required");
    const std::uint64_t seed = run.seed;

    const Matrix holdout = sample_dist(config.problem.nu, config.problem.dim,
                                       std::max(config.holdout, 64), mix_seed(seed, 0x401du));
    const std::optional<GmmPotential> oracle = problem_oracle(config.problem);
    const auto* mu = std::get_if<GaussianSpec>(&config.problem.mu);

    std::vector<std::pair<std::string, json>> rows;
    for (const auto& [method, path] : config.eval_checkpoints) {
      const GmmPotential model = GmmPotential::load(path);
      json values;
      if (config.ed_samples > 0) {
        const Matrix generated =
            generated_outputs(model, config, config.ed_samples, mix_seed(seed, 0xe5a1u));
        values["energy_distance"] = energy_distance(
            generated, holdout.topRows(std::min<Eigen::Index>(holdout.rows(),
                                                              config.ed_samples)));
      }
      if (oracle && mu) {
        const GaussianMoments joint =
            gaussian_eot_plan(mu->mean, mu->cov,
                              std::get<GaussianSpec>(config.problem.nu).mean,
                              std::get<GaussianSpec>(config.problem.nu).cov,
                              config.problem.epsilon);
        const Matrix x_test = mu_batch(config, 64, mix_seed(seed, 0xe5a2u));
        values["cbw_uvp"] = cbw_uvp(
            model,
            [&](const Vector& x) { return conditional_moments(joint, config.problem.dim, x); },
            x_test, std::max(2000, config.problem.dim + 2), mix_seed(seed, 0xe5a3u));
      }
      rows.emplace_back(method, values);
    }
    write_eval_rows(run.dir, config, rows);
    return 0;
  } catch (const std::exception& ex) {
    err << error_record("eval", ex.what()).dump() << "\n";
    return 1;
  }
}

int run_sinkhorn(const ExperimentConfig& base, const RunOverrides& overrides,
                 std::ostream& err) {
  try {
    ExperimentConfig config = base;
    const PreparedRun run = prepare_run("sinkhorn", config, overrides);
    if (overrides.dry_run) return 0;
    require(config.problem.dim == 1, "sinkhorn: grid oracle supports d = 1 problems");

    auto grid_weights = [&](const DistSpec& spec) {
      Vector mean;
      Matrix cov;
      dist_moments(spec, 1, mean, cov);
      const int n = config.grid_points;
      Vector nodes = Vector::LinSpaced(n, mean[0] - config.grid_radius,
                                       mean[0] + config.grid_radius);
      Vector weights(n);
      // Mixture density evaluated on the grid, renormalized.
      std::vector<GmmSpecComponent> components;
      if (const auto* gaussian = std::get_if<GaussianSpec>(&spec)) {
        components.push_back({1.0, gaussian->mean, gaussian->cov});
      } else if (const auto* mixture = std::get_if<std::vector<GmmSpecComponent>>(&spec)) {
        components = *mixture;
      } else {
        throw std::invalid_argument("sinkhorn: ring marginals are not one-dimensional");
      }
      for (int i = 0; i < n; ++i) {
        double density = 0.0;
        for (const auto& c : components) {
          const double var = c.cov(0, 0);
          density += c.weight * std::exp(-0.5 * (nodes[i] - c.mean[0]) *
                                         (nodes[i] - c.mean[0]) / var) /
                     std::sqrt(2.0 * M_PI * var);
        }
        weights[i] = density;
      }
      weights /= weights.sum();
      return std::make_pair(nodes, weights);
    };

    const auto [x_nodes, a] = grid_weights(config.problem.mu);
    const auto [y_nodes, b] = grid_weights(config.problem.nu);
    Matrix cost(x_nodes.size(), y_nodes.size());
    for (Eigen::Index i = 0; i < x_nodes.size(); ++i) {
      for (Eigen::Index j = 0; j < y_nodes.size(); ++j) {
        cost(i, j) = 0.5 * (x_nodes[i] - y_nodes[j]) * (x_nodes[i] - y_nodes[j]);
      }
    }
    DiscretePlan plan = discrete_sinkhorn(a, b, cost, config.problem.epsilon,
                                          config.sinkhorn_max_iters, config.sinkhorn_tol);
    plan.support_x = x_nodes;
    plan.support_y = y_nodes;
    write_text(run.dir / "plan.csv", timestamp_line() + plan.to_csv());

    json summary;
    summary["converged"] = plan.converged;
    summary["iterations"] = plan.iterations;
    summary["marginal_error"] = plan.marginal_error;
    write_text(run.dir / "summary.json", summary.dump(2) + "\n");
    return plan.converged ? 0 : 3;
  } catch (const std::exception& ex) {
    err << error_record("sinkhorn", ex.what()).dump() << "\n";
    return 1;
  }
}

int run_experiment(const std::string& mode, const std::string& config_path,
                   const RunOverrides& overrides, std::ostream& out, std::ostream& err) {
  try {
    ExperimentConfig config = load_config(config_path);
    if (overrides.seed) config.problem.seed = *overrides.seed;
    if (overrides.dry_run) {
      out << resolved_config_json(config) << "\n";
    }
    if (mode == "fit") return run_fit(config, overrides, err);
    if (mode == "train") return run_train(config, overrides, err);
    if (mode == "stream") return run_stream(config, overrides, err);
    if (mode == "sample") return run_sample(config, overrides, err);
    if (mode == "eval") return run_eval(config, overrides, err);
    if (mode == "sinkhorn") return run_sinkhorn(config, overrides, err);
    throw std::invalid_argument("unknown mode " + mode);
  } catch (const std::exception& ex) {
    err << error_record(mode, ex.what()).dump() << "\n";
    return 2;
  }
}

}  // namespace mirrorbridge
