#include "mirrorbridge/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

namespace mirrorbridge {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                       std::uint64_t c) {
  std::uint64_t x = base;
  std::uint64_t h = splitmix64(x);
  x ^= a + 0x632be59bd9b4e019ull;
  h ^= splitmix64(x);
  x ^= b + 0xd6e8feb86659fd93ull;
  h ^= splitmix64(x);
  x ^= c + 0xa0761d6478bd642full;
  h ^= splitmix64(x);
  return h;
}

std::uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Vector Rng::normal_vector(Eigen::Index n) {
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
  return z;
}

int Rng::categorical(const Vector& probs) {
  const double total = probs.sum();
  require(total > 0.0 && std::isfinite(total), "categorical: invalid weights");
  double u = uniform() * total;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    u -= probs[k];
    if (u < 0.0) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size() - 1);
}

int worker_slots() {
  int slots = static_cast<int>(std::thread::hardware_concurrency());
  if (slots < 1) slots = 1;
  if (const char* env = std::getenv("MIRRORBRIDGE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) slots = std::min(slots, cap);
  }
  return slots;
}

void parallel_blocks(std::int64_t n,
                     const std::function<void(int, std::int64_t, std::int64_t)>& body,
                     int n_blocks) {
  if (n <= 0) return;
  n_blocks = static_cast<int>(std::max<std::int64_t>(1, std::min<std::int64_t>(n_blocks, n)));
  std::vector<std::pair<std::int64_t, std::int64_t>> ranges;
  const std::int64_t chunk = (n + n_blocks - 1) / n_blocks;
  for (std::int64_t begin = 0; begin < n; begin += chunk) {
    ranges.emplace_back(begin, std::min(begin + chunk, n));
  }
  const int workers = std::min<int>(worker_slots(), static_cast<int>(ranges.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < ranges.size(); ++i) {
      body(static_cast<int>(i), ranges[i].first, ranges[i].second);
    }
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < ranges.size(); i += workers) {
        body(static_cast<int>(i), ranges[i].first, ranges[i].second);
      }
    });
  }
  for (auto& t : pool) t.join();
}

double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) acc += std::exp(v[i] - m);
  return m + std::log(acc);
}

void require(bool cond, const std::string& message) {
  if (!cond) throw std::invalid_argument(message);
}

}  // namespace mirrorbridge
