#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "deconf/matrix.hpp"

namespace deconf::evaluation {

using numkit::ByteMatrix;

// Strong-generalization user split: train/val/test users are disjoint, and
// each validation user carries a holdout mask over 20% of its observed
// entries (at least one, at least one kept).
struct SplitSpec {
  std::vector<std::size_t> train_users;
  std::vector<std::size_t> val_users;
  std::vector<std::size_t> test_users;
  std::vector<std::vector<std::size_t>> val_holdout;  // aligned with val_users
  std::uint64_t seed = 0;
  std::vector<std::size_t> moved_to_train;  // val users with < 2 observations
};

SplitSpec split_users(const ByteMatrix& exposures,
                      std::array<double, 3> ratios, std::uint64_t seed,
                      double holdout_frac = 0.2);

}  // namespace deconf::evaluation
