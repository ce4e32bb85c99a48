#include "mirrorbridge/gmm.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

namespace mirrorbridge {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
// Log-weight clamp: degenerate components are kept at exp(-700) instead of
// being dropped so K stays fixed and the weight dynamics can revive them.
constexpr double kLogWeightFloor = -700.0;

double log_gaussian(const Vector& y, const Vector& mean, const Matrix& chol) {
  const Eigen::Index d = y.size();
  const Vector z = chol.triangularView<Eigen::Lower>().solve(y - mean);
  double log_det_half = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) log_det_half += std::log(chol(i, i));
  return -0.5 * z.squaredNorm() - log_det_half - 0.5 * static_cast<double>(d) * kLog2Pi;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

GmmPotential::GmmPotential(int dim, double epsilon,
                           std::vector<PotentialComponent> components)
    : dim_(dim), epsilon_(epsilon), components_(std::move(components)) {
  require(dim_ >= 1, "GmmPotential: dim must be positive");
  require(epsilon_ > 0.0 && std::isfinite(epsilon_), "GmmPotential: epsilon must be positive");
  require(!components_.empty(), "GmmPotential: at least one component required");
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const auto& c = components_[k];
    require(std::isfinite(c.log_weight) && std::exp(c.log_weight) > 0.0,
            "GmmPotential: weight must be finite and positive");
    require(c.mean.size() == dim_, "GmmPotential: mean dimension mismatch");
    require(c.chol_factor.rows() == dim_ && c.chol_factor.cols() == dim_,
            "GmmPotential: factor dimension mismatch");
    require(c.mean.allFinite() && c.chol_factor.allFinite(),
            "GmmPotential: non-finite component values");
    for (int i = 0; i < dim_; ++i) {
      require(c.chol_factor(i, i) > 0.0,
              "GmmPotential: Cholesky factor needs a strictly positive diagonal");
      for (int j = i + 1; j < dim_; ++j) {
        require(c.chol_factor(i, j) == 0.0,
                "GmmPotential: Cholesky factor must be lower-triangular");
      }
    }
  }
}

Matrix GmmPotential::sigma(int k) const {
  const Matrix& l = components_[k].chol_factor;
  return l * l.transpose();
}

double GmmPotential::potential_value(const Vector& y) const {
  require(y.size() == dim_, "potential_value: dimension mismatch");
  require(y.allFinite(), "potential_value: non-finite input");
  const double sqrt_eps = std::sqrt(epsilon_);
  Vector terms(num_components());
  for (int k = 0; k < num_components(); ++k) {
    const auto& c = components_[k];
    terms[k] = c.log_weight + log_gaussian(y, c.mean, sqrt_eps * c.chol_factor);
  }
  return log_sum_exp(terms);
}

ConditionalMixture GmmPotential::condition(const Vector& x) const {
  require(x.size() == dim_, "condition: dimension mismatch");
  require(x.allFinite(), "condition: non-finite input");
  const int k_count = num_components();
  Vector log_tilted(k_count);
  std::vector<Vector> means(k_count);
  std::vector<Matrix> covs(k_count);
  for (int k = 0; k < k_count; ++k) {
    const auto& c = components_[k];
    const Vector sigma_x = c.chol_factor * (c.chol_factor.transpose() * x);
    const double tilt = (2.0 * c.mean.dot(x) + x.dot(sigma_x)) / (2.0 * epsilon_);
    log_tilted[k] = c.log_weight + tilt;
    // Underflowing weights are clamped during normalization; only an upward
    // overflow of the tilting exponent is an error.
    if (log_tilted[k] > 700.0) {
      std::ostringstream msg;
      msg << "condition: tilting exponent overflow at component " << k
          << " (log weight " << log_tilted[k] << ")";
      throw std::invalid_argument(msg.str());
    }
    means[k] = c.mean + sigma_x;
    covs[k] = epsilon_ * (c.chol_factor * c.chol_factor.transpose());
  }
  return ConditionalMixture::from_log_weights(dim_, log_tilted, std::move(means),
                                              std::move(covs));
}

GmmPotential GmmPotential::single(double epsilon, const Vector& mean, const Matrix& sigma) {
  Eigen::LLT<Matrix> llt(sigma);
  require(llt.info() == Eigen::Success, "GmmPotential::single: covariance not SPD");
  PotentialComponent c;
  c.log_weight = 0.0;
  c.mean = mean;
  c.chol_factor = llt.matrixL();
  return GmmPotential(static_cast<int>(mean.size()), epsilon, {std::move(c)});
}

std::string GmmPotential::to_checkpoint_string() const {
  std::ostringstream out;
  out << "{\n";
  out << "  \"format_version\": 1,\n";
  out << "  \"d\": " << dim_ << ",\n";
  out << "  \"epsilon\": " << format_double(epsilon_) << ",\n";
  out << "  \"K\": " << num_components() << ",\n";
  out << "  \"log_weights\": [";
  for (int k = 0; k < num_components(); ++k) {
    out << (k ? ", " : "") << format_double(components_[k].log_weight);
  }
  out << "],\n  \"means\": [";
  for (int k = 0; k < num_components(); ++k) {
    out << (k ? ", " : "") << "[";
    for (int i = 0; i < dim_; ++i) {
      out << (i ? ", " : "") << format_double(components_[k].mean[i]);
    }
    out << "]";
  }
  out << "],\n  \"chol_factors\": [";
  for (int k = 0; k < num_components(); ++k) {
    out << (k ? ", " : "") << "[";
    bool first = true;
    for (int i = 0; i < dim_; ++i) {
      for (int j = 0; j <= i; ++j) {
        out << (first ? "" : ", ") << format_double(components_[k].chol_factor(i, j));
        first = false;
      }
    }
    out << "]";
  }
  out << "]\n}\n";
  return out.str();
}

void GmmPotential::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "GmmPotential::save: cannot open " + path);
  out << to_checkpoint_string();
}

GmmPotential GmmPotential::from_checkpoint_string(const std::string& text) {
  const nlohmann::json doc = nlohmann::json::parse(text);
  require(doc.value("format_version", -1) == 1, "checkpoint: unsupported format_version");
  const int d = doc.at("d").get<int>();
  const double epsilon = doc.at("epsilon").get<double>();
  const int k_count = doc.at("K").get<int>();
  const auto& log_weights = doc.at("log_weights");
  const auto& means = doc.at("means");
  const auto& factors = doc.at("chol_factors");
  require(static_cast<int>(log_weights.size()) == k_count &&
              static_cast<int>(means.size()) == k_count &&
              static_cast<int>(factors.size()) == k_count,
          "checkpoint: component count mismatch");
  std::vector<PotentialComponent> components(k_count);
  for (int k = 0; k < k_count; ++k) {
    components[k].log_weight = log_weights[k].get<double>();
    components[k].mean = Vector(d);
    for (int i = 0; i < d; ++i) components[k].mean[i] = means[k][i].get<double>();
    components[k].chol_factor = Matrix::Zero(d, d);
    require(static_cast<int>(factors[k].size()) == d * (d + 1) / 2,
            "checkpoint: factor size mismatch");
    int idx = 0;
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j <= i; ++j) {
        components[k].chol_factor(i, j) = factors[k][idx++].get<double>();
      }
    }
  }
  return GmmPotential(d, epsilon, std::move(components));
}

GmmPotential GmmPotential::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "GmmPotential::load: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_checkpoint_string(buf.str());
}

ConditionalMixture::ConditionalMixture(int dim, std::vector<Component> components,
                                       double log_z)
    : dim_(dim), components_(std::move(components)), log_z_(log_z) {
  require(dim_ >= 1, "ConditionalMixture: dim must be positive");
  require(!components_.empty(), "ConditionalMixture: empty mixture");
  double total = 0.0;
  for (const auto& c : components_) {
    require(c.weight > 0.0, "ConditionalMixture: weights must be positive");
    require(c.mean.size() == dim_ && c.cov.rows() == dim_ && c.cov.cols() == dim_,
            "ConditionalMixture: dimension mismatch");
    total += c.weight;
  }
  require(std::abs(total - 1.0) < 1e-12 * std::max(1.0, std::abs(total)),
          "ConditionalMixture: weights must sum to one");
}

ConditionalMixture ConditionalMixture::from_log_weights(int dim, const Vector& log_weights,
                                                        std::vector<Vector> means,
                                                        std::vector<Matrix> covs) {
  const int k_count = static_cast<int>(log_weights.size());
  const double log_z = log_sum_exp(log_weights);
  std::vector<Component> components(k_count);
  for (int k = 0; k < k_count; ++k) {
    Component& c = components[k];
    c.log_weight = std::max(log_weights[k] - log_z, kLogWeightFloor);
    c.weight = std::exp(c.log_weight);
    c.mean = std::move(means[k]);
    c.cov = std::move(covs[k]);
    Eigen::LLT<Matrix> llt(c.cov);
    require(llt.info() == Eigen::Success, "ConditionalMixture: covariance not SPD");
    c.chol = llt.matrixL();
    double log_det_half = 0.0;
    for (int i = 0; i < dim; ++i) log_det_half += std::log(c.chol(i, i));
    c.log_norm = -log_det_half - 0.5 * dim * kLog2Pi;
  }
  return ConditionalMixture(dim, std::move(components), log_z);
}

Vector ConditionalMixture::weights() const {
  Vector w(num_components());
  for (int k = 0; k < num_components(); ++k) w[k] = components_[k].weight;
  return w;
}

Vector ConditionalMixture::component_log_terms(const Vector& y) const {
  Vector terms(num_components());
  for (int k = 0; k < num_components(); ++k) {
    const auto& c = components_[k];
    const Vector z = c.chol.triangularView<Eigen::Lower>().solve(y - c.mean);
    terms[k] = c.log_weight + c.log_norm - 0.5 * z.squaredNorm();
  }
  return terms;
}

double ConditionalMixture::log_density(const Vector& y) const {
  require(y.size() == dim_, "log_density: dimension mismatch");
  require(y.allFinite(), "log_density: non-finite input");
  return log_sum_exp(component_log_terms(y));
}

std::pair<Vector, Matrix> ConditionalMixture::grad_hess_log_density(const Vector& y) const {
  require(y.size() == dim_, "grad_hess_log_density: dimension mismatch");
  require(y.allFinite(), "grad_hess_log_density: non-finite input");
  const Vector terms = component_log_terms(y);
  const double total = log_sum_exp(terms);

  Vector grad = Vector::Zero(dim_);
  Matrix hess = Matrix::Zero(dim_, dim_);
  for (int k = 0; k < num_components(); ++k) {
    const auto& c = components_[k];
    const double resp = std::exp(terms[k] - total);
    // g_k = -cov_k^{-1} (y - mean_k) via two triangular solves.
    Vector g = c.chol.triangularView<Eigen::Lower>().solve(y - c.mean);
    g = -c.chol.transpose().triangularView<Eigen::Upper>().solve(g);
    const Matrix inv = c.chol.triangularView<Eigen::Lower>().solve(Matrix::Identity(dim_, dim_));
    grad += resp * g;
    hess += resp * (g * g.transpose() - inv.transpose() * inv);
  }
  hess -= grad * grad.transpose();
  hess = 0.5 * (hess + hess.transpose()).eval();
  return {grad, hess};
}

Matrix ConditionalMixture::sample(int n, std::uint64_t seed) const {
  require(n >= 1, "sample: n must be positive");
  Rng rng(seed);
  const Vector w = weights();
  Matrix out(n, dim_);
  for (int i = 0; i < n; ++i) {
    const int k = rng.categorical(w);
    const auto& c = components_[k];
    out.row(i) = (c.mean + c.chol * rng.normal_vector(dim_)).transpose();
  }
  return out;
}

}  // namespace mirrorbridge
