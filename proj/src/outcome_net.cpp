#include "deconf/outcome_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "deconf/checkpoint.hpp"
#include "deconf/common.hpp"
#include "deconf/metrics.hpp"

namespace deconf::outcome {

OutcomeNet OutcomeNet::make(const OutcomeConfig& cfg, Rng& rng) {
  if (cfg.items == 0) throw ParameterError("outcome net: items must be positive");
  if (cfg.use_confounder && cfg.latent_dim == 0) {
    throw ParameterError("outcome net: latent_dim must be positive");
  }
  if (cfg.use_features && cfg.feature_dim == 0) {
    throw ParameterError("outcome net: feature_dim must be positive");
  }
  OutcomeNet net;
  net.cfg = cfg;
  const std::size_t width =
      cfg.hidden_width == 0 ? cfg.latent_dim : cfg.hidden_width;
  std::vector<std::size_t> dims{net.input_dim()};
  for (std::size_t d = 0; d < cfg.hidden_depth; ++d) dims.push_back(width);
  dims.push_back(cfg.items);
  net.net = Mlp::make(dims, /*tanh_on_output=*/false, rng);
  return net;
}

Vector OutcomeNet::assemble_input(const Vector& x, const Vector& z,
                                  const Vector& a) const {
  if (a.size() != cfg.items) {
    throw DimensionError("outcome input: exposure vector has wrong length");
  }
  Vector in;
  in.reserve(input_dim());
  if (cfg.use_features) {
    if (x.size() != cfg.feature_dim) {
      throw DimensionError("outcome input: feature vector has wrong length");
    }
    in.insert(in.end(), x.begin(), x.end());
  }
  if (cfg.use_confounder) {
    if (z.size() != cfg.latent_dim) {
      throw DimensionError("outcome input: confounder vector has wrong length");
    }
    in.insert(in.end(), z.begin(), z.end());
  }
  in.insert(in.end(), a.begin(), a.end());
  return in;
}

Vector OutcomeNet::forward_logits(const Vector& x, const Vector& z,
                                  const Vector& a, Mlp::Cache* cache) const {
  return net.forward(assemble_input(x, z, a), cache);
}

RatingTarget make_rating_target(const std::uint8_t* ratings_row,
                                std::size_t items) {
  RatingTarget t;
  t.mass.resize(items);
  double sum = 0.0;
  for (std::size_t i = 0; i < items; ++i) sum += ratings_row[i];
  if (sum <= 0.0) {
    throw ValidationError("rating target: user has no exposed ratings");
  }
  for (std::size_t i = 0; i < items; ++i) {
    t.mass[i] = static_cast<double>(ratings_row[i]) / sum;
  }
  return t;
}

double outcome_loss(const OutcomeNet& net, const Vector& x, const Vector& z,
                    const Vector& a, const RatingTarget& target,
                    Mlp::Grads* grads) {
  if (target.mass.size() != net.cfg.items) {
    throw DimensionError("outcome_loss: target has wrong length");
  }
  double mass = 0.0;
  for (double t : target.mass) {
    if (t < 0.0) throw ValidationError("outcome_loss: negative target mass");
    mass += t;
  }
  if (mass <= 0.0) {
    throw ValidationError("outcome_loss: all-zero rating target");
  }

  Mlp::Cache cache;
  const Vector logits = net.forward_logits(x, z, a, &cache);
  const Vector log_probs = numkit::log_softmax(logits);

  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (target.mass[i] != 0.0) loss -= target.mass[i] * log_probs[i];
  }

  if (grads) {
    Vector grad_logits(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      grad_logits[i] = mass * std::exp(log_probs[i]) - target.mass[i];
    }
    net.net.backward(grad_logits, cache, grads);
  }
  return loss;
}

Vector predict_ratings(const OutcomeNet& net, const Vector& x, const Vector& z,
                       const Vector& a_obs) {
  return numkit::softmax_fw(net.forward_logits(x, z, a_obs));
}

TopK recommend_topk(const Vector& scores, const Vector& a_obs, std::size_t k) {
  if (k == 0) throw ParameterError("recommend_topk: k must be >= 1");
  if (scores.size() != a_obs.size()) {
    throw DimensionError("recommend_topk: scores and exposures disagree");
  }
  TopK out;
  std::vector<std::size_t> candidates;
  candidates.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (a_obs[i] == 0.0) candidates.push_back(i);
  }
  const std::size_t take = std::min(k, candidates.size());
  out.truncated = candidates.size() < k;
  std::partial_sort(candidates.begin(), candidates.begin() + take,
                    candidates.end(), [&scores](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  candidates.resize(take);
  out.items = std::move(candidates);
  return out;
}

namespace {

std::vector<double> snapshot(std::vector<TensorRef>& refs) {
  std::vector<double> flat;
  for (const auto& r : refs) flat.insert(flat.end(), r.data, r.data + r.size());
  return flat;
}

void restore(std::vector<TensorRef>& refs, const std::vector<double>& flat) {
  std::size_t off = 0;
  for (const auto& r : refs) {
    std::copy(flat.begin() + off, flat.begin() + off + r.size(), r.data);
    off += r.size();
  }
}

Vector user_features(const OutcomeNet& net, const OutcomeTrainData& data,
                     std::size_t u) {
  if (!net.cfg.use_features) return {};
  return numkit::row_as_vector(*data.features, u);
}

Vector user_confounder(const OutcomeNet& net, const OutcomeTrainData& data,
                       std::size_t u) {
  if (!net.cfg.use_confounder) return {};
  return numkit::row_as_vector(*data.confounders, u);
}

// N@K over validation users: rank from the 80% fold-in exposures, score the
// held-out observed interactions.
double validation_ndcg(const OutcomeNet& net, const OutcomeTrainData& data,
                       std::span<const std::size_t> val_users,
                       const std::vector<std::vector<std::size_t>>& val_holdout,
                       std::size_t k) {
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t v = 0; v < val_users.size(); ++v) {
    const std::size_t u = val_users[v];
    if (val_holdout[v].empty()) continue;
    Vector a_in = numkit::row_as_vector(*data.exposures, u);
    for (const std::size_t item : val_holdout[v]) a_in[item] = 0.0;
    const Vector scores = predict_ratings(net, user_features(net, data, u),
                                          user_confounder(net, data, u), a_in);
    const TopK top = recommend_topk(scores, a_in, k);
    std::vector<std::size_t> holdout_sorted = val_holdout[v];
    std::sort(holdout_sorted.begin(), holdout_sorted.end());
    total += evaluation::ndcg_at_k(top.items, holdout_sorted, k);
    ++counted;
  }
  if (counted == 0) return 0.0;
  return total / static_cast<double>(counted);
}

}  // namespace

TrainResult train_outcome(OutcomeNet& net, const OutcomeTrainData& data,
                          std::span<const std::size_t> train_users,
                          std::span<const std::size_t> val_users,
                          const std::vector<std::vector<std::size_t>>& val_holdout,
                          const TrainOpts& opts) {
  if (train_users.empty()) {
    throw ValidationError("train_outcome: need at least one training user");
  }
  if (net.cfg.use_confounder && data.confounders == nullptr) {
    throw ValidationError("train_outcome: confounders not provided");
  }
  if (net.cfg.use_features && data.features == nullptr) {
    throw ValidationError("train_outcome: features not provided");
  }
  const bool has_val = !val_users.empty();

  // Popularity init: softmax(output bias) starts at the mean training
  // rating mass, so epoch 0 is the popularity ranker.
  {
    Vector mean_mass(net.cfg.items, 0.0);
    for (const std::size_t u : train_users) {
      const RatingTarget t = make_rating_target(data.ratings_obs->row(u),
                                                net.cfg.items);
      for (std::size_t i = 0; i < net.cfg.items; ++i) mean_mass[i] += t.mass[i];
    }
    Vector& bias = net.net.layers.back().b;
    for (std::size_t i = 0; i < net.cfg.items; ++i) {
      bias[i] = std::log(
          mean_mass[i] / static_cast<double>(train_users.size()) + 1e-8);
    }
  }

  Rng base(opts.seed);
  Rng shuffle_rng = base.split("shuffle");

  auto params = net.param_refs();
  numkit::AdamState adam;
  adam.lr = opts.lr;

  TrainResult result;
  if (has_val) {
    result.best_val_ndcg =
        validation_ndcg(net, data, val_users, val_holdout, opts.select_k);
    result.log.push_back({0, 0.0, result.best_val_ndcg});
  }
  std::vector<double> best_weights = snapshot(params);
  std::size_t stall = 0;

  std::vector<std::size_t> order(train_users.begin(), train_users.end());
  Mlp::Grads grads = net.net.zero_grads();
  auto grad_refs = net.grad_refs(grads);

  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += opts.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      for (auto& ref : grad_refs) std::fill(ref.data, ref.data + ref.size(), 0.0);

      double batch_loss = 0.0;
      for (std::size_t idx = start; idx < end; ++idx) {
        const std::size_t u = order[idx];
        const RatingTarget target =
            make_rating_target(data.ratings_obs->row(u), net.cfg.items);
        const Vector a = numkit::row_as_vector(*data.exposures, u);
        batch_loss += outcome_loss(net, user_features(net, data, u),
                                   user_confounder(net, data, u), a, target,
                                   &grads);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& ref : grad_refs) {
        for (std::size_t i = 0; i < ref.size(); ++i) ref.data[i] *= inv;
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("outcome loss became non-finite at epoch " +
                            std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      numkit::adam_step(params, grad_refs, adam);
      epoch_loss += batch_loss;
    }
    epoch_loss /= static_cast<double>(order.size());

    double val_score = 0.0;
    if (has_val) {
      val_score = validation_ndcg(net, data, val_users, val_holdout, opts.select_k);
      if (val_score > result.best_val_ndcg) {
        result.best_val_ndcg = val_score;
        result.best_epoch = epoch;
        best_weights = snapshot(params);
        stall = 0;
      } else {
        ++stall;
      }
    }
    result.log.push_back({epoch, epoch_loss, val_score});
    result.epochs_ran = epoch;
    if (has_val && stall >= opts.patience) break;
  }

  if (has_val) {
    restore(params, best_weights);
  } else {
    result.best_epoch = result.epochs_ran;
  }
  return result;
}

void save_outcome_checkpoint(const std::filesystem::path& dir, OutcomeNet& net,
                             const TrainResult& result,
                             const std::string& config_hash) {
  nlohmann::ordered_json manifest;
  manifest["kind"] = "outcome_net";
  manifest["version"] = kVersion;
  manifest["config_hash"] = config_hash;
  manifest["items"] = net.cfg.items;
  manifest["latent_dim"] = net.cfg.latent_dim;
  manifest["feature_dim"] = net.cfg.feature_dim;
  manifest["use_features"] = net.cfg.use_features;
  manifest["use_confounder"] = net.cfg.use_confounder;
  manifest["hidden_width"] = net.cfg.hidden_width;
  manifest["hidden_depth"] = net.cfg.hidden_depth;
  manifest["best_epoch"] = result.best_epoch;
  manifest["best_val_ndcg"] = result.best_val_ndcg;
  io::save_checkpoint(dir, net.param_refs(), std::move(manifest));
}

OutcomeNet load_outcome_checkpoint(const std::filesystem::path& dir) {
  const auto manifest = io::load_checkpoint_manifest(dir);
  if (manifest.value("kind", "") != "outcome_net") {
    throw IoError("checkpoint at " + dir.string() + " is not an outcome model");
  }
  OutcomeConfig cfg;
  cfg.items = manifest.at("items").get<std::size_t>();
  cfg.latent_dim = manifest.at("latent_dim").get<std::size_t>();
  cfg.feature_dim = manifest.at("feature_dim").get<std::size_t>();
  cfg.use_features = manifest.at("use_features").get<bool>();
  cfg.use_confounder = manifest.at("use_confounder").get<bool>();
  cfg.hidden_width = manifest.at("hidden_width").get<std::size_t>();
  cfg.hidden_depth = manifest.at("hidden_depth").get<std::size_t>();
  Rng dummy(0);
  OutcomeNet net = OutcomeNet::make(cfg, dummy);
  io::load_checkpoint_weights(dir, net.param_refs());
  return net;
}

}  // namespace deconf::outcome
