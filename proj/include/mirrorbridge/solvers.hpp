#pragma once

#include "mirrorbridge/gmm.hpp"

#include <functional>
#include <string>

namespace mirrorbridge {

// Flat unconstrained coordinates of a potential: log-weights, then means, then
// row-major lower-triangular Cholesky entries, component by component.
Vector pack_params(const GmmPotential& theta);
GmmPotential unpack_params(int dim, double epsilon, int k_count, const Vector& params);

// Sample form of the reverse-KL objective for the Gibbs parameterization:
//   L = mean_i log z(x_i) - mean_j log v(y_j),
// which equals the KL from the optimal plan to the model up to constants.
// Returns the loss and its exact analytic gradient in flat coordinates.
// Batches are row-major (one sample per row).
std::pair<double, Vector> reverse_kl_loss(const GmmPotential& theta, const Matrix& x_batch,
                                          const Matrix& y_batch);

struct FitConfig {
  int dim = 2;
  int components = 8;
  double epsilon = 0.1;
  int iterations = 1000;
  double learning_rate = 0.05;
  double momentum = 0.0;
  std::uint64_t init_seed = 0;
  double init_chol_scale = 1.0;
  // Applied parameter steps are rescaled to this norm when they exceed it;
  // keeps window-starved components from being catapulted by one batch.
  double max_step_norm = 1.0;
  double chol_diag_floor = 0.05;
};

// Stochastic first-order minimizer of the reverse-KL loss. Stateful so online
// runs can keep refining one model as new batches arrive.
class ReverseKlFitter {
 public:
  // init_y seeds the component means (rows drawn with replacement); an empty
  // matrix falls back to standard normal draws.
  ReverseKlFitter(const FitConfig& config, const Matrix& init_y = Matrix());

  // One gradient step; returns the batch loss. Throws on divergence
  // (loss above 1e8 or non-finite).
  double step(const Matrix& x_batch, const Matrix& y_batch);

  const GmmPotential& theta() const { return theta_; }
  int steps_taken() const { return steps_; }

 private:
  FitConfig config_;
  GmmPotential theta_;
  Vector velocity_;
  int steps_ = 0;
};

using BatchStream = std::function<Matrix(int iteration)>;

// Runs config.iterations fitter steps over the streams; deterministic given
// seeds and deterministic streams.
GmmPotential fit_reverse_kl(const FitConfig& config, const BatchStream& x_stream,
                            const BatchStream& y_stream);

// Componentwise EMA in unconstrained coordinates; decay in [0, 1).
GmmPotential ema_update(const GmmPotential& ema, const GmmPotential& candidate, double decay);

// Grid-supported coupling with dual log scalings, the discrete oracle output.
struct DiscretePlan {
  Matrix support_x;  // optional n x d row support (may be empty)
  Matrix support_y;  // optional m x d row support (may be empty)
  Matrix weights;    // n x m, nonnegative, total mass one
  Vector dual_x;     // log scaling f
  Vector dual_y;     // log scaling g
  bool converged = false;
  int iterations = 0;
  double marginal_error = 0.0;  // TV error of the non-fitted marginal

  std::string to_csv() const;  // x_index,y_index,weight triplets
};

// Log-domain iterative proportional fitting: alternating dual updates, each of
// which matches one marginal exactly; stops when the other marginal's TV error
// drops below tol. A non-converged run returns the best iterate, flagged.
DiscretePlan discrete_sinkhorn(const Vector& a, const Vector& b, const Matrix& cost,
                               double epsilon, int max_iters = 10000, double tol = 1e-10);

}  // namespace mirrorbridge
