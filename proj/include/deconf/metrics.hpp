#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "deconf/common.hpp"

namespace deconf::evaluation {

// holdout must be sorted ascending; ranked must have no duplicates.
inline bool is_hit(const std::vector<std::size_t>& holdout_sorted,
                   std::size_t item) {
  return std::binary_search(holdout_sorted.begin(), holdout_sorted.end(), item);
}

// R@K = sum_{r<=K} 1[i(r) in I_u] / min(K, |I_u|).
inline double recall_at_k(const std::vector<std::size_t>& ranked,
                          const std::vector<std::size_t>& holdout_sorted,
                          std::size_t k) {
  if (holdout_sorted.empty()) {
    throw EvaluationError("recall_at_k: empty holdout set");
  }
  const std::size_t limit = std::min(k, ranked.size());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < limit; ++r) {
    if (is_hit(holdout_sorted, ranked[r])) ++hits;
  }
  return static_cast<double>(hits) /
         static_cast<double>(std::min(k, holdout_sorted.size()));
}

// DCG@K = sum_{r<=K} (2^{1[hit]} - 1) / log2(r + 1), normalized by the ideal
// DCG where the first min(K, |I_u|) ranks are all hits.
inline double ndcg_at_k(const std::vector<std::size_t>& ranked,
                        const std::vector<std::size_t>& holdout_sorted,
                        std::size_t k) {
  if (holdout_sorted.empty()) {
    throw EvaluationError("ndcg_at_k: empty holdout set");
  }
  const std::size_t limit = std::min(k, ranked.size());
  double dcg = 0.0;
  for (std::size_t r = 0; r < limit; ++r) {
    if (is_hit(holdout_sorted, ranked[r])) {
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  const std::size_t ideal_hits = std::min(k, holdout_sorted.size());
  double idcg = 0.0;
  for (std::size_t r = 0; r < ideal_hits; ++r) {
    idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg / idcg;
}

}  // namespace deconf::evaluation
