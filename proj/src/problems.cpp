#include "mirrorbridge/problems.hpp"

#include <cmath>

namespace mirrorbridge {

namespace {

std::vector<GmmSpecComponent> ring_components(const RingSpec& ring, int dim) {
  require(dim >= 2, "ring spec needs dimension >= 2");
  require(ring.count >= 1 && ring.radius > 0.0 && ring.stddev > 0.0,
          "ring spec: invalid parameters");
  std::vector<GmmSpecComponent> components(ring.count);
  for (int k = 0; k < ring.count; ++k) {
    const double angle = 2.0 * M_PI * k / ring.count;
    components[k].weight = 1.0 / ring.count;
    components[k].mean = Vector::Zero(dim);
    components[k].mean[0] = ring.radius * std::cos(angle);
    components[k].mean[1] = ring.radius * std::sin(angle);
    components[k].cov = ring.stddev * ring.stddev * Matrix::Identity(dim, dim);
  }
  return components;
}

Matrix sample_gmm(const std::vector<GmmSpecComponent>& components, int dim, int n,
                  std::uint64_t seed) {
  require(!components.empty(), "gmm spec: empty component list");
  Vector weights(components.size());
  std::vector<Matrix> chols(components.size());
  for (std::size_t k = 0; k < components.size(); ++k) {
    require(components[k].weight > 0.0, "gmm spec: weights must be positive");
    weights[k] = components[k].weight;
    Eigen::LLT<Matrix> llt(components[k].cov);
    require(llt.info() == Eigen::Success, "gmm spec: covariance not SPD");
    chols[k] = llt.matrixL();
  }
  Rng rng(mix_seed(seed, 0x6e2u));
  Matrix out(n, dim);
  for (int i = 0; i < n; ++i) {
    const int k = rng.categorical(weights);
    out.row(i) = (components[k].mean + chols[k] * rng.normal_vector(dim)).transpose();
  }
  return out;
}

}  // namespace

Matrix sample_dist(const DistSpec& spec, int dim, int n, std::uint64_t seed) {
  require(n >= 1, "sample_dist: n must be positive");
  if (const auto* gaussian = std::get_if<GaussianSpec>(&spec)) {
    require(gaussian->mean.size() == dim, "gaussian spec: dimension mismatch");
    Eigen::LLT<Matrix> llt(gaussian->cov);
    require(llt.info() == Eigen::Success, "gaussian spec: covariance not SPD");
    const Matrix chol = llt.matrixL();
    Rng rng(mix_seed(seed, 0x6a5u));
    Matrix out(n, dim);
    for (int i = 0; i < n; ++i) {
      out.row(i) = (gaussian->mean + chol * rng.normal_vector(dim)).transpose();
    }
    return out;
  }
  if (const auto* mixture = std::get_if<std::vector<GmmSpecComponent>>(&spec)) {
    return sample_gmm(*mixture, dim, n, seed);
  }
  return sample_gmm(ring_components(std::get<RingSpec>(spec), dim), dim, n, seed);
}

void dist_moments(const DistSpec& spec, int dim, Vector& mean, Matrix& cov) {
  if (const auto* gaussian = std::get_if<GaussianSpec>(&spec)) {
    mean = gaussian->mean;
    cov = gaussian->cov;
    return;
  }
  std::vector<GmmSpecComponent> components;
  if (const auto* mixture = std::get_if<std::vector<GmmSpecComponent>>(&spec)) {
    components = *mixture;
  } else {
    components = ring_components(std::get<RingSpec>(spec), dim);
  }
  double total = 0.0;
  for (const auto& c : components) total += c.weight;
  mean = Vector::Zero(dim);
  for (const auto& c : components) mean += (c.weight / total) * c.mean;
  cov = Matrix::Zero(dim, dim);
  for (const auto& c : components) {
    const Vector shift = c.mean - mean;
    cov += (c.weight / total) * (c.cov + shift * shift.transpose());
  }
}

std::pair<Matrix, Matrix> generate_problem(const ProblemSpec& spec, int n) {
  require(n >= 1, "generate_problem: n must be positive");
  Matrix x = sample_dist(spec.mu, spec.dim, n, mix_seed(spec.seed, 0x11u));
  Matrix y = sample_dist(spec.nu, spec.dim, n, mix_seed(spec.seed, 0x22u));
  return {std::move(x), std::move(y)};
}

ProblemSpec gauss_to_ring8(std::uint64_t seed) {
  ProblemSpec spec;
  spec.name = "gauss_to_ring8";
  spec.dim = 2;
  spec.mu = GaussianSpec{Vector::Zero(2), Matrix::Identity(2, 2)};
  spec.nu = RingSpec{8, 4.0, 0.3};
  spec.epsilon = 0.1;
  spec.seed = seed;
  return spec;
}

ProblemSpec gauss_to_gauss(int dim, double epsilon, std::uint64_t seed) {
  ProblemSpec spec;
  spec.name = "gauss_to_gauss";
  spec.dim = dim;
  spec.mu = GaussianSpec{Vector::Zero(dim), Matrix::Identity(dim, dim)};
  Vector shift = Vector::Zero(dim);
  shift[0] = 2.0;
  Matrix cov = Matrix::Identity(dim, dim);
  for (int i = 0; i < dim; ++i) cov(i, i) = 0.5 + 1.0 * i / std::max(1, dim - 1);
  spec.nu = GaussianSpec{shift, cov};
  spec.epsilon = epsilon;
  spec.seed = seed;
  return spec;
}

RotatingStream::RotatingStream(Matrix dataset, double window_width, int rotation_period)
    : data_(std::move(dataset)),
      window_width_(window_width),
      rotation_period_(rotation_period) {
  require(data_.rows() >= 1, "RotatingStream: empty dataset");
  require(data_.cols() >= 2, "RotatingStream: need at least two coordinates");
  require(window_width_ > 0.0 && window_width_ <= 1.0, "RotatingStream: invalid width");
  require(rotation_period_ >= 1, "RotatingStream: invalid period");
  num_sectors_ = static_cast<int>(std::lround(1.0 / window_width_));
  require(num_sectors_ >= 1, "RotatingStream: invalid sector count");
  angles_ = Vector(data_.rows());
  for (Eigen::Index i = 0; i < data_.rows(); ++i) {
    double angle = std::atan2(data_(i, 1), data_(i, 0));
    if (angle < 0.0) angle += 2.0 * M_PI;
    angles_[i] = angle;
  }
}

std::vector<int> RotatingStream::window_indices(long cursor) const {
  const int sector = static_cast<int>((cursor / rotation_period_) % num_sectors_);
  const double lo = 2.0 * M_PI * sector / num_sectors_;
  const double hi = 2.0 * M_PI * (sector + 1) / num_sectors_;
  std::vector<int> indices;
  for (Eigen::Index i = 0; i < angles_.size(); ++i) {
    if (angles_[i] >= lo && angles_[i] < hi) indices.push_back(static_cast<int>(i));
  }
  return indices;
}

RotatingStream::Window RotatingStream::next_window() {
  Window window;
  window.sector = static_cast<int>((cursor_ / rotation_period_) % num_sectors_);
  const std::vector<int> indices = window_indices(cursor_);
  ++cursor_;
  window.samples = Matrix(indices.size(), data_.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    window.samples.row(r) = data_.row(indices[r]);
  }
  window.empty_flagged = indices.empty();
  return window;
}

}  // namespace mirrorbridge
