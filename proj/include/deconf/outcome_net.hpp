#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "deconf/adam.hpp"
#include "deconf/layers.hpp"
#include "deconf/matrix.hpp"
#include "deconf/rng.hpp"

namespace deconf::outcome {

using numkit::ByteMatrix;
using numkit::Matrix;
using numkit::Mlp;
using numkit::Rng;
using numkit::TensorRef;
using numkit::Vector;

struct OutcomeConfig {
  std::size_t items = 0;
  std::size_t latent_dim = 0;   // confounder block width
  std::size_t feature_dim = 0;  // pre-treatment feature block width
  bool use_features = true;
  bool use_confounder = true;  // false gives the exposure-only ablation
  std::size_t hidden_width = 0;  // 0 -> latent_dim
  std::size_t hidden_depth = 1;  // 0 gives the purely affine net
};

// Deconfounded outcome network over the fixed input ordering [x | z | a];
// disabled blocks are dropped from the input.
struct OutcomeNet {
  OutcomeConfig cfg;
  Mlp net;

  static OutcomeNet make(const OutcomeConfig& cfg, Rng& rng);

  std::size_t input_dim() const {
    return (cfg.use_features ? cfg.feature_dim : 0) +
           (cfg.use_confounder ? cfg.latent_dim : 0) + cfg.items;
  }

  Vector assemble_input(const Vector& x, const Vector& z,
                        const Vector& a) const;

  Vector forward_logits(const Vector& x, const Vector& z, const Vector& a,
                        Mlp::Cache* cache = nullptr) const;

  std::vector<TensorRef> param_refs() {
    std::vector<TensorRef> refs;
    numkit::append_tensor_refs(refs, "outcome", net);
    return refs;
  }
  std::vector<TensorRef> grad_refs(Mlp::Grads& g) {
    std::vector<TensorRef> refs;
    numkit::append_grad_refs(refs, "outcome", g);
    return refs;
  }
};

// Normalized rating mass over the exposed items; sums to 1 when the user
// has at least one exposed rating.
struct RatingTarget {
  Vector mass;
};

RatingTarget make_rating_target(const std::uint8_t* ratings_row,
                                std::size_t items);

// Multinomial negative log-likelihood, -sum_i t_i log softmax_i(logits);
// gradients are exact.
double outcome_loss(const OutcomeNet& net, const Vector& x, const Vector& z,
                    const Vector& a, const RatingTarget& target,
                    Mlp::Grads* grads);

// Softmax scores conditioned on the observed exposure vector.
Vector predict_ratings(const OutcomeNet& net, const Vector& x, const Vector& z,
                       const Vector& a_obs);

struct TopK {
  std::vector<std::size_t> items;
  bool truncated = false;  // fewer unexposed items than requested
};

// Masks already-exposed items, ranks by score descending, ties broken by
// ascending item index.
TopK recommend_topk(const Vector& scores, const Vector& a_obs, std::size_t k);

struct OutcomeTrainData {
  const ByteMatrix* ratings_obs = nullptr;
  const ByteMatrix* exposures = nullptr;
  const Matrix* features = nullptr;     // may be null when use_features=false
  const Matrix* confounders = nullptr;  // may be null when use_confounder=false
};

struct TrainOpts {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::size_t patience = 10;
  std::size_t select_k = 20;  // N@K used for model selection
  std::uint64_t seed = 1;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_ndcg = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_ndcg = -std::numeric_limits<double>::infinity();
  std::size_t epochs_ran = 0;
};

// Adam training on the training users; selection by N@select_k on validation
// users whose held-out observed ratings are ranked from the remaining 80%.
TrainResult train_outcome(OutcomeNet& net, const OutcomeTrainData& data,
                          std::span<const std::size_t> train_users,
                          std::span<const std::size_t> val_users,
                          const std::vector<std::vector<std::size_t>>& val_holdout,
                          const TrainOpts& opts);

void save_outcome_checkpoint(const std::filesystem::path& dir, OutcomeNet& net,
                             const TrainResult& result,
                             const std::string& config_hash);
OutcomeNet load_outcome_checkpoint(const std::filesystem::path& dir);

}  // namespace deconf::outcome
