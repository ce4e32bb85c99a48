#pragma once

#include "mirrorbridge/gmm.hpp"

#include <string>
#include <vector>

namespace mirrorbridge {

// A sampled path on [0, 1]: strictly increasing times starting at 0 and ending
// at 1, one state row per time.
struct Trajectory {
  Vector times;
  Matrix states;
};

// Drift of the bridge process whose endpoint law at time one, started from
// x0, is exactly condition(theta, x0). Given the pinned-bridge construction
// the posterior over the endpoint y at state (t, x) is again a finite Gaussian
// mixture, and the drift is its mean displacement:
//   g(t, x) = (E[y | t, x] - x) / (1 - t).
// Equivalently g = eps * grad_x sb_log_h. Defined for t in [0, 1).
Vector sb_drift(const GmmPotential& theta, double t, const Vector& x);

// Log of the h-function (up to an x-independent constant) whose eps-scaled
// gradient is the drift; exposed so derivative checks have an independent
// scalar to difference.
double sb_log_h(const GmmPotential& theta, double t, const Vector& x);

// Endpoint-posterior mixture at (t, x): weights, means and covariances of the
// law of y given the current state.
ConditionalMixture endpoint_posterior(const GmmPotential& theta, double t, const Vector& x);

// Euler-Maruyama on a uniform grid with n_steps increments; deterministic
// given the seed. Throws (naming the step) if a state turns non-finite.
Trajectory sample_sde(const GmmPotential& theta, const Vector& x0, int n_steps,
                      std::uint64_t seed);

// Exact sampler: draws the endpoint from condition(theta, x0), then fills the
// interior sequentially with pinned Brownian-bridge conditionals. Exact on any
// valid time grid.
Trajectory sample_bridge(const GmmPotential& theta, const Vector& x0, const Vector& times,
                         std::uint64_t seed);

// Interior fill of a single pinned bridge between (0, x0) and (1, y) with
// volatility eps; used by sample_bridge and directly testable.
Trajectory pinned_bridge_fill(const Vector& x0, const Vector& y, const Vector& times,
                              double eps, std::uint64_t seed);

// CSV export: trajectory_id,time,x0..x{d-1} rows.
std::string trajectories_to_csv(const std::vector<Trajectory>& trajectories);

}  // namespace mirrorbridge
