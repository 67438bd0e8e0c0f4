#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace cupid {

// xoshiro256++ with splitmix64 seeding. Fixed algorithm so that seeded
// artifacts are identical across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t z = seed;
    for (auto& word : state_) {
      z += 0x9e3779b97f4a7c15ULL;
      std::uint64_t s = z;
      s = (s ^ (s >> 30)) * 0xbf58476d1ce4e5b9ULL;
      s = (s ^ (s >> 27)) * 0x94d049bb133111ebULL;
      word = s ^ (s >> 31);
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in {lo, ..., hi} inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // Standard normal via Box-Muller; consumes two uniforms per draw.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Standard (centered at Euler-gamma) type-I extreme value draw.
  double gumbel() {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return -std::log(-std::log(u));
  }

  // Derives an independent stream for parallel job `index`.
  static std::uint64_t split_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Binomial(n, p) by inversion ordered outward from the mode, so large n
  // cannot underflow the lower CDF tail.
  std::int64_t binomial(std::int64_t n, double p) {
    if (n < 0) throw std::invalid_argument("binomial: n < 0");
    if (n == 0 || p <= 0.0) return 0;
    if (p >= 1.0) return n;
    const double u = uniform();
    if (p > 0.5) return n - binomial_inverse(n, 1.0 - p, u);
    return binomial_inverse(n, p, u);
  }

  // Multinomial counts over `probs` summing to n, drawn as sequential
  // conditional binomials in the given category order.
  std::vector<std::int64_t> multinomial(std::int64_t n,
                                        const std::vector<double>& probs) {
    double total = 0.0;
    for (double p : probs) {
      if (p < 0.0) throw std::invalid_argument("multinomial: negative probability");
      total += p;
    }
    if (total <= 0.0) throw std::invalid_argument("multinomial: all-zero probabilities");
    std::vector<std::int64_t> counts(probs.size(), 0);
    double remaining_p = total;
    std::int64_t remaining_n = n;
    for (std::size_t i = 0; i + 1 < probs.size() && remaining_n > 0; ++i) {
      const double cond = std::min(1.0, probs[i] / remaining_p);
      counts[i] = binomial(remaining_n, cond);
      remaining_n -= counts[i];
      remaining_p -= probs[i];
      if (remaining_p <= 0.0) break;
    }
    if (!probs.empty()) counts.back() += remaining_n;
    return counts;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::int64_t binomial_inverse(std::int64_t n, double p, double u) {
    const double q = 1.0 - p;
    const double log_ratio = std::log(p) - std::log(q);
    const std::int64_t mode =
        std::min<std::int64_t>(n, static_cast<std::int64_t>((n + 1) * p));
    const double log_pmf_mode = std::lgamma(static_cast<double>(n + 1)) -
                                std::lgamma(static_cast<double>(mode + 1)) -
                                std::lgamma(static_cast<double>(n - mode + 1)) +
                                mode * std::log(p) + (n - mode) * std::log(q);
    double cum = std::exp(log_pmf_mode);
    if (u < cum) return mode;
    // Expand outward: mode-1, mode+1, mode-2, ...
    double pmf_lo = std::exp(log_pmf_mode);
    double pmf_hi = std::exp(log_pmf_mode);
    std::int64_t lo = mode;
    std::int64_t hi = mode;
    while (lo > 0 || hi < n) {
      if (lo > 0) {
        // pmf(k-1)/pmf(k) = k q / ((n-k+1) p)
        pmf_lo *= static_cast<double>(lo) * q /
                  (static_cast<double>(n - lo + 1) * p);
        --lo;
        cum += pmf_lo;
        if (u < cum) return lo;
      }
      if (hi < n) {
        // pmf(k+1)/pmf(k) = (n-k) p / ((k+1) q)
        pmf_hi *= static_cast<double>(n - hi) * p /
                  (static_cast<double>(hi + 1) * q);
        ++hi;
        cum += pmf_hi;
        if (u < cum) return hi;
      }
    }
    return mode;  // u landed in accumulated rounding slack
  }

  std::uint64_t state_[4];
};

}  // namespace cupid
