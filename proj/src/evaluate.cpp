#include "deconf/evaluate.hpp"

#include <algorithm>

#include "deconf/metrics.hpp"

namespace deconf::evaluation {

double MetricsRecord::recall_at(std::size_t k) const {
  for (std::size_t n = 0; n < ks.size(); ++n) {
    if (ks[n] == k) return recall_mean[n];
  }
  throw EvaluationError("recall@" + std::to_string(k) + " was not computed");
}

double MetricsRecord::ndcg_at(std::size_t k) const {
  for (std::size_t n = 0; n < ks.size(); ++n) {
    if (ks[n] == k) return ndcg_mean[n];
  }
  throw EvaluationError("ndcg@" + std::to_string(k) + " was not computed");
}

MetricsRecord evaluate_ranking(const ScoreFn& scorer,
                               const numkit::ByteMatrix& exposures,
                               const numkit::ByteMatrix& ratings_full,
                               std::span<const std::size_t> test_users,
                               const EvalConfig& cfg, std::uint64_t seed) {
  if (ratings_full.rows == 0 || ratings_full.cols == 0) {
    throw EvaluationError(
        "unbiased evaluation requires population ratings (ratings_full)");
  }
  MetricsRecord rec;
  rec.ks = cfg.k_list;
  rec.seed = seed;
  rec.recall_per_user.resize(cfg.k_list.size());
  rec.ndcg_per_user.resize(cfg.k_list.size());

  const std::size_t items = ratings_full.cols;
  for (const std::size_t u : test_users) {
    // Relevance set: unexposed items whose population rating clears the
    // threshold.
    std::vector<std::size_t> relevant;
    for (std::size_t i = 0; i < items; ++i) {
      if (!exposures.at(u, i) &&
          ratings_full.at(u, i) >= cfg.relevance_threshold) {
        relevant.push_back(i);
      }
    }
    if (relevant.empty()) {
      ++rec.skipped_users;
      continue;
    }

    const Vector scores = scorer(u);
    Vector a_obs(items);
    for (std::size_t i = 0; i < items; ++i) {
      a_obs[i] = static_cast<double>(exposures.at(u, i));
    }
    const outcome::TopK ranked =
        outcome::recommend_topk(scores, a_obs, items);

    for (std::size_t n = 0; n < cfg.k_list.size(); ++n) {
      const std::size_t k = cfg.k_list[n];
      rec.recall_per_user[n].push_back(recall_at_k(ranked.items, relevant, k));
      rec.ndcg_per_user[n].push_back(ndcg_at_k(ranked.items, relevant, k));
    }
    ++rec.evaluated_users;
  }

  rec.recall_mean.resize(cfg.k_list.size(), 0.0);
  rec.ndcg_mean.resize(cfg.k_list.size(), 0.0);
  for (std::size_t n = 0; n < cfg.k_list.size(); ++n) {
    for (const double v : rec.recall_per_user[n]) rec.recall_mean[n] += v;
    for (const double v : rec.ndcg_per_user[n]) rec.ndcg_mean[n] += v;
    if (rec.evaluated_users > 0) {
      rec.recall_mean[n] /= static_cast<double>(rec.evaluated_users);
      rec.ndcg_mean[n] /= static_cast<double>(rec.evaluated_users);
    }
  }
  return rec;
}

MetricsRecord evaluate_unbiased(const exposure::ExposureVae* vae,
                                const outcome::OutcomeNet& net,
                                const CausalDataset& ds, const SplitSpec& split,
                                const EvalConfig& cfg) {
  if (net.cfg.use_confounder && vae == nullptr) {
    throw ValidationError("evaluate_unbiased: exposure model required");
  }
  const ScoreFn scorer = [vae, &net, &ds](std::size_t u) {
    const Vector a_obs = numkit::row_as_vector(ds.exposures, u);
    Vector z;
    if (net.cfg.use_confounder) z = vae->net.posterior_mean(a_obs);
    Vector x;
    if (net.cfg.use_features) x = numkit::row_as_vector(ds.features, u);
    return outcome::predict_ratings(net, x, z, a_obs);
  };
  return evaluate_ranking(scorer, ds.exposures, ds.ratings_full,
                          split.test_users, cfg, split.seed);
}

ScoreFn oracle_scorer(const CausalDataset& ds) {
  return [&ds](std::size_t u) {
    Vector scores(ds.items());
    for (std::size_t i = 0; i < ds.items(); ++i) {
      scores[i] = static_cast<double>(ds.ratings_full.at(u, i));
    }
    return scores;
  };
}

ScoreFn random_scorer(std::size_t items, std::uint64_t seed) {
  return [items, seed](std::size_t u) {
    numkit::Rng rng = numkit::Rng(seed).split(u);
    Vector scores(items);
    for (auto& s : scores) s = rng.uniform();
    return scores;
  };
}

nlohmann::ordered_json metrics_to_json(const MetricsRecord& m) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["evaluated_users"] = m.evaluated_users;
  j["skipped_users"] = m.skipped_users;
  auto per_k = nlohmann::ordered_json::array();
  for (std::size_t n = 0; n < m.ks.size(); ++n) {
    per_k.push_back({{"k", m.ks[n]},
                     {"recall", m.recall_mean[n]},
                     {"ndcg", m.ndcg_mean[n]}});
  }
  j["metrics"] = per_k;
  if (!m.config_echo.empty()) {
    nlohmann::ordered_json echo;
    for (const auto& [k, v] : m.config_echo) echo[k] = v;
    j["config"] = echo;
  }
  return j;
}

}  // namespace deconf::evaluation
