#include "deconf/split.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deconf/common.hpp"
#include "deconf/rng.hpp"

namespace deconf::evaluation {

SplitSpec split_users(const ByteMatrix& exposures,
                      std::array<double, 3> ratios, std::uint64_t seed,
                      double holdout_frac) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9) {
    throw ParameterError("split ratios must sum to 1");
  }
  if (!(holdout_frac > 0.0 && holdout_frac < 1.0)) {
    throw ParameterError("holdout fraction must be in (0, 1)");
  }
  const std::size_t users = exposures.rows;
  if (users == 0) throw ParameterError("split: no users");

  numkit::Rng base(seed);
  numkit::Rng order_rng = base.split("split_order");

  std::vector<std::size_t> order(users);
  std::iota(order.begin(), order.end(), 0);
  order_rng.shuffle(order);

  const std::size_t n_val = static_cast<std::size_t>(
      std::llround(ratios[1] * static_cast<double>(users)));
  const std::size_t n_test = static_cast<std::size_t>(
      std::llround(ratios[2] * static_cast<double>(users)));

  SplitSpec split;
  split.seed = seed;
  numkit::Rng holdout_rng = base.split("holdout");

  for (std::size_t n = 0; n < users; ++n) {
    const std::size_t u = order[n];
    if (n < n_val) {
      std::vector<std::size_t> observed;
      for (std::size_t i = 0; i < exposures.cols; ++i) {
        if (exposures.at(u, i)) observed.push_back(i);
      }
      if (observed.size() < 2) {
        split.train_users.push_back(u);
        split.moved_to_train.push_back(u);
        continue;
      }
      numkit::Rng user_rng = holdout_rng.split(u);
      user_rng.shuffle(observed);
      std::size_t n_hold = static_cast<std::size_t>(std::llround(
          holdout_frac * static_cast<double>(observed.size())));
      n_hold = std::clamp<std::size_t>(n_hold, 1, observed.size() - 1);
      split.val_users.push_back(u);
      split.val_holdout.emplace_back(observed.begin(),
                                     observed.begin() + n_hold);
    } else if (n < n_val + n_test) {
      split.test_users.push_back(u);
    } else {
      split.train_users.push_back(u);
    }
  }
  return split;
}

}  // namespace deconf::evaluation
