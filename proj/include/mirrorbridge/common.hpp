#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mirrorbridge {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Deterministic seed derivation: a splitmix64 chain over the base seed and up
// to three stream identifiers. Distinct identifier tuples give independent
// streams regardless of call order.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a = 0,
                       std::uint64_t b = 0, std::uint64_t c = 0);

// Random engine with all sampling paths pinned by this code (no reliance on
// standard-library distribution internals). normal() consumes exactly two
// uniforms so draw counts are stable across call patterns.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix_seed(seed, 0x9e3779b97f4a7c15ull)) {}

  // Uniform on [0, 1) with 53 bits of randomness.
  double uniform();

  // Standard normal via Box-Muller (cosine branch only).
  double normal();

  Vector normal_vector(Eigen::Index n);

  // Index k drawn with probability probs[k] / sum(probs); probs must be
  // nonnegative with a positive sum.
  int categorical(const Vector& probs);

 private:
  std::uint64_t next_u64();
  std::uint64_t state_;
};

// Worker-slot cap shared by all parallel loops: min(hardware, MIRRORBRIDGE_THREADS).
int worker_slots();

// Splits [0, n) into contiguous blocks, runs body(block_index, begin, end) on a
// small pool, and guarantees block boundaries independent of the worker count so
// fixed-order reductions over per-block partials are reproducible.
void parallel_blocks(std::int64_t n,
                     const std::function<void(int, std::int64_t, std::int64_t)>& body,
                     int n_blocks);

double log_sum_exp(const Vector& v);

void require(bool cond, const std::string& message);

}  // namespace mirrorbridge
