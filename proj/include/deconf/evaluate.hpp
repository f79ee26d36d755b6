#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "deconf/dataset.hpp"
#include "deconf/exposure_vae.hpp"
#include "deconf/outcome_net.hpp"
#include "deconf/split.hpp"

namespace deconf::evaluation {

using datagen::CausalDataset;
using numkit::Vector;

struct EvalConfig {
  std::vector<std::size_t> k_list{5, 10, 15, 20, 25, 30, 35, 40, 45, 50};
  int relevance_threshold = 4;  // population rating >= threshold is a hit
};

struct MetricsRecord {
  std::vector<std::size_t> ks;
  std::vector<double> recall_mean;
  std::vector<double> ndcg_mean;
  std::vector<std::vector<double>> recall_per_user;  // [k index][user]
  std::vector<std::vector<double>> ndcg_per_user;
  std::size_t evaluated_users = 0;
  std::size_t skipped_users = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config_echo;

  double recall_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
};

// Full score vector over items for one user.
using ScoreFn = std::function<Vector(std::size_t user)>;

// Unbiased ranking evaluation against the population ratings: per test user,
// rank the unexposed items and score them against the relevant unexposed
// items (population rating >= threshold). Users with no relevant unexposed
// item are skipped and counted.
MetricsRecord evaluate_ranking(const ScoreFn& scorer,
                               const numkit::ByteMatrix& exposures,
                               const numkit::ByteMatrix& ratings_full,
                               std::span<const std::size_t> test_users,
                               const EvalConfig& cfg, std::uint64_t seed);

// The model stack scorer: z from the full observed exposures, softmax scores
// conditioned on the same exposures. vae may be null when the net does not
// use the confounder block.
MetricsRecord evaluate_unbiased(const exposure::ExposureVae* vae,
                                const outcome::OutcomeNet& net,
                                const CausalDataset& ds, const SplitSpec& split,
                                const EvalConfig& cfg);

// Reference scorers for oracle bounds and random baselines.
ScoreFn oracle_scorer(const CausalDataset& ds);
ScoreFn random_scorer(std::size_t items, std::uint64_t seed);

nlohmann::ordered_json metrics_to_json(const MetricsRecord& m);

}  // namespace deconf::evaluation
