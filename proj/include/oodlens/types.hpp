#pragma once

#include <Eigen/Dense>
#include <vector>

namespace oodlens {

// In-memory numerics are 64-bit; only the on-disk format is 32-bit.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Per-sample ID-ness scores. Every scorer in the toolkit orients them so that
// higher means more in-distribution.
using ScoreVector = std::vector<double>;

}  // namespace oodlens
