#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#include "cupid/market.hpp"

namespace cupid {

// Finite-support approximation of an error law over the |Y_0| options
// (column 0 is the outside option). Rows are support points, `weights` their
// probabilities.
struct DiscretizedDistribution {
  Mat support;   // K x |Y_0|
  Vec weights;   // length K, nonnegative, sums to 1

  DiscretizedDistribution() = default;
  DiscretizedDistribution(Mat support_, Vec weights_)
      : support(std::move(support_)), weights(std::move(weights_)) {
    if (support.rows() == 0 || support.cols() == 0)
      throw std::invalid_argument("DiscretizedDistribution: empty support");
    if (weights.size() != support.rows())
      throw std::invalid_argument("DiscretizedDistribution: weight count");
    if ((weights.array() < 0).any())
      throw std::invalid_argument("DiscretizedDistribution: negative weight");
    const double s = weights.sum();
    if (std::abs(s - 1.0) > 1e-9)
      throw std::invalid_argument("DiscretizedDistribution: weights sum to " +
                                  std::to_string(s));
    weights /= s;
  }

  Eigen::Index num_points() const { return support.rows(); }
  Eigen::Index num_options() const { return support.cols(); }
};

}  // namespace cupid
