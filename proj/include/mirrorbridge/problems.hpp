#pragma once

#include "mirrorbridge/gmm.hpp"

#include <string>
#include <variant>
#include <vector>

namespace mirrorbridge {

struct GaussianSpec {
  Vector mean;
  Matrix cov;
};

struct GmmSpecComponent {
  double weight;
  Vector mean;
  Matrix cov;
};

// Equally weighted Gaussians centered on a circle of the given radius, each
// with isotropic standard deviation.
struct RingSpec {
  int count = 8;
  double radius = 4.0;
  double stddev = 0.3;
};

using DistSpec = std::variant<GaussianSpec, std::vector<GmmSpecComponent>, RingSpec>;

struct ProblemSpec {
  std::string name;
  int dim = 2;
  DistSpec mu;
  DistSpec nu;
  double epsilon = 0.1;
  std::uint64_t seed = 0;
};

// Draws n samples (rows) from a distribution descriptor.
Matrix sample_dist(const DistSpec& spec, int dim, int n, std::uint64_t seed);

// Population mean and covariance of a descriptor.
void dist_moments(const DistSpec& spec, int dim, Vector& mean, Matrix& cov);

// (x_samples, y_samples) from the instantiated marginals; deterministic given
// the spec seed.
std::pair<Matrix, Matrix> generate_problem(const ProblemSpec& spec, int n);

// Named presets.
ProblemSpec gauss_to_ring8(std::uint64_t seed = 0);
ProblemSpec gauss_to_gauss(int dim, double epsilon, std::uint64_t seed = 0);

// Angle-based rotating filter over a fixed dataset of output samples: only the
// current angular sector is visible, the sector advances every
// rotation_period calls, and with defaults (1/8 width, period 25) a full
// rotation takes 200 calls.
class RotatingStream {
 public:
  struct Window {
    Matrix samples;
    bool empty_flagged = false;
    int sector = 0;
  };

  RotatingStream(Matrix dataset, double window_width = 0.125, int rotation_period = 25);

  Window next_window();
  long cursor() const { return cursor_; }
  int num_sectors() const { return num_sectors_; }
  const Matrix& dataset() const { return data_; }

  // Window membership for an arbitrary cursor position, without advancing.
  std::vector<int> window_indices(long cursor) const;

 private:
  Matrix data_;
  Vector angles_;  // atan2 of the first two coordinates, normalized to [0, 2 pi)
  double window_width_;
  int rotation_period_;
  int num_sectors_;
  long cursor_ = 0;
};

}  // namespace mirrorbridge
