#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>

#include "cupid/market.hpp"
#include "cupid/rng.hpp"

namespace cupid {

// Observed household counts per cell: couples, single men, single women.
// Counts are integers stored as doubles; they sum to H households.
struct SampleCounts {
  Mat couples;
  Vec single_men;
  Vec single_women;
  std::int64_t households = 0;

  Eigen::Index num_x() const { return couples.rows(); }
  Eigen::Index num_y() const { return couples.cols(); }
};

struct BenchmarkInstance {
  Eigen::Index size = 0;
  std::uint64_t seed = 0;
  Margins margins;
  SurplusMatrix phi;
};

// Random square benchmark market: integer margins uniform on {1..100} and
// half-surplus draws from a standard normal.
inline BenchmarkInstance gen_benchmark(Eigen::Index size, std::uint64_t seed) {
  if (size < 1) throw std::invalid_argument("gen_benchmark: size < 1");
  Rng rng(seed);
  Vec n(size), m(size);
  for (Eigen::Index x = 0; x < size; ++x)
    n(x) = static_cast<double>(rng.uniform_int(1, 100));
  for (Eigen::Index y = 0; y < size; ++y)
    m(y) = static_cast<double>(rng.uniform_int(1, 100));
  Mat phi(size, size);
  for (Eigen::Index x = 0; x < size; ++x)
    for (Eigen::Index y = 0; y < size; ++y) phi(x, y) = 2.0 * rng.normal();
  BenchmarkInstance out;
  out.size = size;
  out.seed = seed;
  out.margins = Margins(n, m);
  out.phi = SurplusMatrix(phi);
  return out;
}

// Multinomial draw of H households across all cells, with probabilities
// proportional to the matching masses. Cell order is fixed: couples x-major,
// then single men, then single women.
inline SampleCounts sample_households(const Matching& mu, std::int64_t H,
                                      std::uint64_t seed) {
  if (H < 1) throw std::invalid_argument("sample_households: H < 1");
  const Eigen::Index X = mu.num_x();
  const Eigen::Index Y = mu.num_y();
  std::vector<double> probs;
  probs.reserve(X * Y + X + Y);
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y) probs.push_back(mu.mu(x, y));
  for (Eigen::Index x = 0; x < X; ++x) probs.push_back(mu.mu_x0(x));
  for (Eigen::Index y = 0; y < Y; ++y) probs.push_back(mu.mu_0y(y));
  double total = 0.0;
  for (double p : probs) total += p;
  if (total <= 0.0)
    throw std::invalid_argument("sample_households: matching has no mass");

  Rng rng(seed);
  const std::vector<std::int64_t> counts = rng.multinomial(H, probs);

  SampleCounts out;
  out.couples = Mat(X, Y);
  out.single_men = Vec(X);
  out.single_women = Vec(Y);
  out.households = H;
  std::size_t i = 0;
  for (Eigen::Index x = 0; x < X; ++x)
    for (Eigen::Index y = 0; y < Y; ++y)
      out.couples(x, y) = static_cast<double>(counts[i++]);
  for (Eigen::Index x = 0; x < X; ++x)
    out.single_men(x) = static_cast<double>(counts[i++]);
  for (Eigen::Index y = 0; y < Y; ++y)
    out.single_women(y) = static_cast<double>(counts[i++]);
  return out;
}

}  // namespace cupid
