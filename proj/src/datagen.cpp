#include "deconf/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "deconf/csv.hpp"
#include "deconf/pca.hpp"

namespace deconf::datagen {

using numkit::Matrix;

void SimConfig::validate() const {
  if (users < 2) throw ParameterError("sim: need at least 2 users");
  if (items < 1) throw ParameterError("sim: need at least 1 item");
  if (latent_dim < 1) throw ParameterError("sim: latent_dim must be >= 1");
  if (feature_dim < 1 || feature_dim > latent_dim) {
    throw ParameterError("sim: feature_dim must be in [1, latent_dim]");
  }
  if (!(gamma_theta >= 0.0 && gamma_theta <= 1.0)) {
    throw ParameterError("sim: gamma_theta must be in [0, 1]");
  }
  if (!(gamma_b >= 0.0)) throw ParameterError("sim: gamma_b must be >= 0");
  if (!(exposure_rate > 0.0 && exposure_rate < 1.0)) {
    throw ParameterError("sim: exposure_rate must be in (0, 1)");
  }
  if (!(feature_noise >= 0.0)) {
    throw ParameterError("sim: feature_noise must be >= 0");
  }
}

namespace {

// Globally sort all U*I scores and expose the top n_expose cells; ties are
// broken by ascending cell index. Every user is then guaranteed at least one
// exposure: a zero-exposure user gets its top-propensity item, and the
// globally lowest exposed cell of a multi-exposure user is dropped to keep
// the count.
ByteMatrix threshold_exposures(const Matrix& scores, std::size_t n_expose,
                               std::vector<RepairEvent>& repairs) {
  const std::size_t u_count = scores.rows;
  const std::size_t i_count = scores.cols;
  const std::size_t cells = u_count * i_count;
  n_expose = std::min(n_expose, cells);

  std::vector<std::uint32_t> idx(cells);
  std::iota(idx.begin(), idx.end(), 0u);
  std::partial_sort(idx.begin(), idx.begin() + n_expose, idx.end(),
                    [&scores](std::uint32_t a, std::uint32_t b) {
                      const double sa = scores.data[a];
                      const double sb = scores.data[b];
                      if (sa != sb) return sa > sb;
                      return a < b;
                    });

  ByteMatrix exposures(u_count, i_count);
  std::vector<std::size_t> per_user(u_count, 0);
  for (std::size_t n = 0; n < n_expose; ++n) {
    exposures.data[idx[n]] = 1;
    per_user[idx[n] / i_count] += 1;
  }

  for (std::size_t u = 0; u < u_count; ++u) {
    if (per_user[u] > 0) continue;
    std::size_t best_item = 0;
    for (std::size_t i = 1; i < i_count; ++i) {
      if (scores.at(u, i) > scores.at(u, best_item)) best_item = i;
    }
    exposures.at(u, best_item) = 1;
    per_user[u] += 1;

    RepairEvent ev;
    ev.user = u;
    ev.exposed_item = best_item;

    // Drop the lowest exposed score whose user keeps at least one exposure.
    bool found = false;
    std::size_t drop_u = 0;
    std::size_t drop_i = 0;
    double drop_score = 0.0;
    for (std::size_t v = 0; v < u_count; ++v) {
      if (per_user[v] < 2) continue;
      for (std::size_t i = 0; i < i_count; ++i) {
        if (!exposures.at(v, i)) continue;
        const double s = scores.at(v, i);
        if (!found || s < drop_score) {
          found = true;
          drop_score = s;
          drop_u = v;
          drop_i = i;
        }
      }
    }
    if (found) {
      exposures.at(drop_u, drop_i) = 0;
      per_user[drop_u] -= 1;
      ev.removed_other = true;
      ev.removed_user = drop_u;
      ev.removed_item = drop_i;
    }
    repairs.push_back(ev);
  }
  return exposures;
}

ByteMatrix mask_ratings(const ByteMatrix& full, const ByteMatrix& exposures) {
  ByteMatrix obs(full.rows, full.cols);
  for (std::size_t n = 0; n < full.data.size(); ++n) {
    obs.data[n] = exposures.data[n] ? full.data[n] : 0;
  }
  return obs;
}

// PCA of the noisy preferences, columns rescaled to unit variance so the
// features arrive standardized at the outcome model.
Matrix project_features(const Matrix& noisy_theta, std::size_t feature_dim) {
  const numkit::PcaResult pca = numkit::pca_project(noisy_theta, feature_dim);
  Matrix features = pca.projected;
  for (std::size_t j = 0; j < features.cols; ++j) {
    double var = 0.0;
    for (std::size_t i = 0; i < features.rows; ++i) {
      var += features.at(i, j) * features.at(i, j);
    }
    var /= static_cast<double>(features.rows);
    const double sd = std::sqrt(var);
    if (sd > 1e-12) {
      for (std::size_t i = 0; i < features.rows; ++i) features.at(i, j) /= sd;
    }
  }
  return features;
}

struct LatentDraws {
  Matrix confounders;  // U x K
  Matrix theta;        // U x K
};

LatentDraws draw_latents(const SimConfig& cfg, numkit::Rng& base) {
  LatentDraws d;
  numkit::Rng conf_rng = base.split("confounders");
  numkit::Rng theta_rng = base.split("theta_noise");
  d.confounders = numkit::sample_normal_matrix(conf_rng, cfg.users,
                                               cfg.latent_dim, 1.0);
  d.theta = Matrix(cfg.users, cfg.latent_dim);
  for (std::size_t u = 0; u < cfg.users; ++u) {
    for (std::size_t k = 0; k < cfg.latent_dim; ++k) {
      d.theta.at(u, k) = cfg.gamma_theta * d.confounders.at(u, k) +
                         (1.0 - cfg.gamma_theta) * theta_rng.normal();
    }
  }
  return d;
}

Matrix noisy_features_input(const SimConfig& cfg, const Matrix& theta,
                            numkit::Rng& base) {
  numkit::Rng feat_rng = base.split("feature_noise");
  const double noise_sd = std::sqrt(cfg.feature_noise);
  Matrix noisy = theta;
  for (auto& v : noisy.data) v += noise_sd * feat_rng.normal();
  return noisy;
}

}  // namespace

CausalDataset simulate_dataset(const SimConfig& cfg) {
  cfg.validate();
  numkit::Rng base(cfg.seed);

  const LatentDraws latents = draw_latents(cfg, base);

  // Exposure propensities: ReLU(W_a c_u), used as raw sortable scores.
  numkit::Rng wa_rng = base.split("w_a");
  const double weight_sd = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
  const Matrix w_a =
      numkit::sample_normal_matrix(wa_rng, cfg.items, cfg.latent_dim, weight_sd);

  CausalDataset ds;
  ds.config = cfg;
  ds.propensity = Matrix(cfg.users, cfg.items);
  for (std::size_t u = 0; u < cfg.users; ++u) {
    for (std::size_t i = 0; i < cfg.items; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < cfg.latent_dim; ++k) {
        s += w_a.at(i, k) * latents.confounders.at(u, k);
      }
      ds.propensity.at(u, i) = s > 0.0 ? s : 0.0;
    }
  }

  const std::size_t n_expose = static_cast<std::size_t>(std::llround(
      cfg.exposure_rate * static_cast<double>(cfg.users * cfg.items)));
  ds.exposures = threshold_exposures(ds.propensity, n_expose, ds.repairs);

  // Ratings: min(1 + Poisson(ReLU(W_r (theta_u + gamma_b c_u))), 5).
  numkit::Rng wr_rng = base.split("w_r");
  const Matrix w_r =
      numkit::sample_normal_matrix(wr_rng, cfg.items, cfg.latent_dim, weight_sd);
  numkit::Rng ratings_base = base.split("ratings");
  ds.ratings_full = ByteMatrix(cfg.users, cfg.items);
  numkit::Vector pref(cfg.latent_dim);
  for (std::size_t u = 0; u < cfg.users; ++u) {
    numkit::Rng user_rng = ratings_base.split(u);
    for (std::size_t k = 0; k < cfg.latent_dim; ++k) {
      pref[k] = latents.theta.at(u, k) + cfg.gamma_b * latents.confounders.at(u, k);
    }
    for (std::size_t i = 0; i < cfg.items; ++i) {
      double rate = 0.0;
      for (std::size_t k = 0; k < cfg.latent_dim; ++k) {
        rate += w_r.at(i, k) * pref[k];
      }
      rate = rate > 0.0 ? rate : 0.0;
      const std::uint64_t draw = numkit::sample_poisson(user_rng, rate);
      ds.ratings_full.at(u, i) =
          static_cast<std::uint8_t>(std::min<std::uint64_t>(1 + draw, 5));
    }
  }

  ds.ratings_obs = mask_ratings(ds.ratings_full, ds.exposures);
  ds.features = project_features(noisy_features_input(cfg, latents.theta, base),
                                 cfg.feature_dim);
  ds.confounders_true = latents.confounders;
  return ds;
}

double histogram_kl(const std::vector<double>& observed_counts,
                    const std::vector<double>& population_counts) {
  if (observed_counts.size() != population_counts.size()) {
    throw DimensionError("histogram_kl: size mismatch");
  }
  const double eps = 1e-9;
  double obs_total = 0.0;
  double pop_total = 0.0;
  for (double c : observed_counts) obs_total += c + eps;
  for (double c : population_counts) pop_total += c + eps;
  double kl = 0.0;
  for (std::size_t r = 0; r < observed_counts.size(); ++r) {
    const double p = (observed_counts[r] + eps) / obs_total;
    const double q = (population_counts[r] + eps) / pop_total;
    kl += p * std::log(p / q);
  }
  return kl;
}

KlDiagnostics rating_distribution_kl(const CausalDataset& ds) {
  KlDiagnostics out;
  std::vector<double> pop_global(5, 0.0);
  std::vector<double> obs_global(5, 0.0);
  double individual_sum = 0.0;
  for (std::size_t u = 0; u < ds.users(); ++u) {
    std::vector<double> pop(5, 0.0);
    std::vector<double> obs(5, 0.0);
    for (std::size_t i = 0; i < ds.items(); ++i) {
      const int r = ds.ratings_full.at(u, i);
      if (r >= 1 && r <= 5) {
        pop[r - 1] += 1.0;
        pop_global[r - 1] += 1.0;
        if (ds.exposures.at(u, i)) {
          obs[r - 1] += 1.0;
          obs_global[r - 1] += 1.0;
        }
      }
    }
    individual_sum += histogram_kl(obs, pop);
  }
  out.global_kl = histogram_kl(obs_global, pop_global);
  out.mean_individual_kl = individual_sum / static_cast<double>(ds.users());
  return out;
}

std::vector<std::size_t> item_popularity(const CausalDataset& ds) {
  std::vector<std::size_t> pop(ds.items(), 0);
  for (std::size_t u = 0; u < ds.users(); ++u) {
    for (std::size_t i = 0; i < ds.items(); ++i) {
      pop[i] += ds.exposures.at(u, i);
    }
  }
  return pop;
}

double gini_coefficient(const std::vector<std::size_t>& counts) {
  if (counts.empty()) return 0.0;
  std::vector<double> x(counts.begin(), counts.end());
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double total = 0.0;
  double weighted = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += x[i];
    weighted += (2.0 * static_cast<double>(i + 1) - n - 1.0) * x[i];
  }
  if (total <= 0.0) return 0.0;
  return weighted / (n * total);
}

// ---------------------------------------------------------------------------
// raw rating files
// ---------------------------------------------------------------------------

RawRatings load_raw_ratings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  struct Entry {
    std::uint32_t user;
    std::uint32_t item;
    std::uint8_t rating;
  };
  std::vector<Entry> entries;
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::map<std::string, std::uint32_t> user_index;
  std::map<std::string, std::uint32_t> item_index;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = io::split_line(line);
    if (fields.size() != 3) {
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": expected user_id,item_id,rating");
    }
    long long rating = 0;
    const auto res = std::from_chars(fields[2].data(),
                                     fields[2].data() + fields[2].size(), rating);
    const bool numeric =
        res.ec == std::errc() && res.ptr == fields[2].data() + fields[2].size();
    if (!numeric) {
      if (lineno == 1) continue;  // header row
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": bad rating '" + std::string(fields[2]) + "'");
    }
    if (rating < 0 || rating > 5) {
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": rating out of range 0..5");
    }
    if (rating == 0) continue;  // unobserved

    const std::string uid(fields[0]);
    const std::string iid(fields[1]);
    auto [uit, unew] = user_index.try_emplace(
        uid, static_cast<std::uint32_t>(user_ids.size()));
    if (unew) user_ids.push_back(uid);
    auto [iit, inew] = item_index.try_emplace(
        iid, static_cast<std::uint32_t>(item_ids.size()));
    if (inew) item_ids.push_back(iid);
    entries.push_back({uit->second, iit->second,
                       static_cast<std::uint8_t>(rating)});
  }
  if (entries.empty()) {
    throw ValidationError("raw ratings file " + path.string() +
                          " has no observed ratings");
  }

  RawRatings raw;
  raw.path = path.string();
  raw.users = user_ids.size();
  raw.items = item_ids.size();
  raw.user_ids = std::move(user_ids);
  raw.item_ids = std::move(item_ids);
  raw.ratings = ByteMatrix(raw.users, raw.items);
  for (const auto& e : entries) raw.ratings.at(e.user, e.item) = e.rating;
  return raw;
}

// ---------------------------------------------------------------------------
// generator VAEs for semi-synthetic data
// ---------------------------------------------------------------------------

exposure::ElboResult rating_elbo_with_noise(const RatingVae& vae,
                                            const Vector& mass,
                                            const Vector& eps, double beta,
                                            exposure::VaeNet::Grads* grads) {
  if (mass.size() != vae.net.in_dim) {
    throw DimensionError("rating elbo: input has wrong length");
  }
  exposure::VaeNet::Cache cache;
  vae.net.forward(mass, eps, cache);

  const Vector log_probs = numkit::log_softmax(cache.logits);
  exposure::ElboResult result;
  double total_mass = 0.0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    total_mass += mass[i];
    if (mass[i] != 0.0) result.recon_nll -= mass[i] * log_probs[i];
  }
  result.kl = exposure::gaussian_kl(cache.mu, cache.logvar);
  result.loss = result.recon_nll + beta * result.kl;

  if (grads) {
    Vector grad_logits(mass.size());
    for (std::size_t i = 0; i < mass.size(); ++i) {
      grad_logits[i] = total_mass * std::exp(log_probs[i]) - mass[i];
    }
    vae.net.backward(grad_logits, eps, beta, cache, *grads);
  }
  return result;
}

namespace {

Vector normalized_mass_row(const ByteMatrix& ratings, std::size_t u,
                           const std::vector<std::size_t>* holdout) {
  Vector mass(ratings.cols, 0.0);
  for (std::size_t i = 0; i < ratings.cols; ++i) {
    mass[i] = static_cast<double>(ratings.at(u, i));
  }
  if (holdout) {
    for (const std::size_t i : *holdout) mass[i] = 0.0;
  }
  double sum = 0.0;
  for (double v : mass) sum += v;
  if (sum > 0.0) {
    for (auto& v : mass) v /= sum;
  }
  return mass;
}

struct GeneratorSplit {
  std::vector<std::size_t> train_users;
  std::vector<std::size_t> val_users;
  std::vector<std::vector<std::size_t>> val_holdout;
};

GeneratorSplit make_generator_split(const ByteMatrix& ratings,
                                    double val_fraction, numkit::Rng rng) {
  GeneratorSplit split;
  std::vector<std::size_t> order(ratings.rows);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const std::size_t n_val = static_cast<std::size_t>(
      std::llround(val_fraction * static_cast<double>(ratings.rows)));
  for (std::size_t n = 0; n < order.size(); ++n) {
    const std::size_t u = order[n];
    std::vector<std::size_t> observed;
    for (std::size_t i = 0; i < ratings.cols; ++i) {
      if (ratings.at(u, i) > 0) observed.push_back(i);
    }
    if (n < n_val && observed.size() >= 2) {
      numkit::Rng user_rng = rng.split(u);
      user_rng.shuffle(observed);
      std::size_t n_hold = static_cast<std::size_t>(
          std::llround(0.2 * static_cast<double>(observed.size())));
      n_hold = std::clamp<std::size_t>(n_hold, 1, observed.size() - 1);
      split.val_users.push_back(u);
      split.val_holdout.emplace_back(observed.begin(),
                                     observed.begin() + n_hold);
    } else {
      split.train_users.push_back(u);
    }
  }
  return split;
}

double rating_predictive_check(const RatingVae& vae, const ByteMatrix& ratings,
                               const std::vector<std::size_t>& val_users,
                               const std::vector<std::vector<std::size_t>>& holdout) {
  double total = 0.0;
  std::size_t entries = 0;
  for (std::size_t v = 0; v < val_users.size(); ++v) {
    const std::size_t u = val_users[v];
    const Vector mass = normalized_mass_row(ratings, u, &holdout[v]);
    const Vector mu = vae.net.posterior_mean(mass);
    const Vector probs = vae.decode_probs(mu);
    for (const std::size_t i : holdout[v]) {
      total += std::log(std::max(probs[i], 1e-12));
      ++entries;
    }
  }
  if (entries == 0) throw ValidationError("rating predictive check: empty mask");
  return total / static_cast<double>(entries);
}

}  // namespace

GeneratorVaes fit_generator_vaes(const RawRatings& raw,
                                 const GeneratorFitOpts& opts) {
  for (std::size_t u = 0; u < raw.users; ++u) {
    bool any = false;
    for (std::size_t i = 0; i < raw.items && !any; ++i) {
      any = raw.ratings.at(u, i) > 0;
    }
    if (!any) {
      throw ValidationError("fit_generator_vaes: user " + std::to_string(u) +
                            " has no observed ratings");
    }
  }

  numkit::Rng base(opts.seed);
  const GeneratorSplit split =
      make_generator_split(raw.ratings, opts.val_fraction, base.split("gen_split"));

  GeneratorVaes gens;

  // Exposure branch: factorized logistic VAE on binarized ratings.
  ByteMatrix binarized(raw.users, raw.items);
  for (std::size_t n = 0; n < raw.ratings.data.size(); ++n) {
    binarized.data[n] = raw.ratings.data[n] > 0 ? 1 : 0;
  }
  exposure::VaeConfig vcfg;
  vcfg.items = raw.items;
  vcfg.latent_dim = opts.latent_dim;
  vcfg.hidden_width = opts.hidden_width;
  vcfg.hidden_depth = opts.hidden_depth;
  vcfg.beta_max = opts.beta_max;
  vcfg.anneal_epochs = opts.anneal_epochs;
  numkit::Rng exp_init = base.split("exposure_init");
  gens.exposure_vae = exposure::ExposureVae::make(vcfg, exp_init);
  exposure::TrainOpts etrain;
  etrain.epochs = opts.epochs;
  etrain.batch_size = opts.batch_size;
  etrain.lr = opts.lr;
  etrain.patience = opts.patience;
  etrain.seed = base.split("exposure_train").seed();
  gens.exposure_log =
      exposure::train_exposure(gens.exposure_vae, binarized, split.train_users,
                               split.val_users, split.val_holdout, etrain);

  // Rating branch: multinomial VAE on normalized rating mass.
  numkit::Rng rat_init = base.split("rating_init");
  gens.rating_vae.net = exposure::VaeNet::make(
      raw.items, opts.latent_dim, opts.hidden_width, opts.hidden_depth, rat_init);

  {
    // Popularity init for the rating decoder: softmax(bias) equals the mean
    // normalized rating mass of the training users.
    Vector mean_mass(raw.items, 0.0);
    for (const std::size_t u : split.train_users) {
      const Vector mass = normalized_mass_row(raw.ratings, u, nullptr);
      for (std::size_t i = 0; i < raw.items; ++i) mean_mass[i] += mass[i];
    }
    Vector& bias = gens.rating_vae.net.dec.layers.back().b;
    for (std::size_t i = 0; i < raw.items; ++i) {
      bias[i] = std::log(mean_mass[i] / static_cast<double>(split.train_users.size()) +
                         1e-8);
    }

    numkit::Rng train_base(base.split("rating_train").seed());
    numkit::Rng shuffle_rng = train_base.split("shuffle");
    numkit::Rng noise_rng = train_base.split("noise");
    auto params = gens.rating_vae.net.param_refs("rating");
    numkit::AdamState adam;
    adam.lr = opts.lr;
    exposure::BetaSchedule beta{opts.beta_max, opts.anneal_epochs};

    exposure::TrainResult result;
    const bool has_val = !split.val_users.empty();
    if (has_val) {
      result.best_val_score = rating_predictive_check(
          gens.rating_vae, raw.ratings, split.val_users, split.val_holdout);
      result.log.push_back({0, 0.0, result.best_val_score, 0.0});
    }
    std::vector<double> best;
    for (const auto& r : params) best.insert(best.end(), r.data, r.data + r.size());
    std::size_t stall = 0;

    std::vector<std::size_t> order = split.train_users;
    exposure::VaeNet::Grads grads = gens.rating_vae.net.zero_grads();
    auto grad_refs = gens.rating_vae.net.grad_refs(grads, "rating");

    for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
      const double b = beta.at(epoch);
      shuffle_rng.shuffle(order);
      double epoch_loss = 0.0;
      std::size_t batch_index = 0;
      for (std::size_t start = 0; start < order.size();
           start += opts.batch_size, ++batch_index) {
        const std::size_t end = std::min(order.size(), start + opts.batch_size);
        for (auto& ref : grad_refs) {
          std::fill(ref.data, ref.data + ref.size(), 0.0);
        }
        double batch_loss = 0.0;
        for (std::size_t idx = start; idx < end; ++idx) {
          const Vector mass = normalized_mass_row(raw.ratings, order[idx], nullptr);
          const Vector eps =
              numkit::sample_standard_normal(noise_rng, opts.latent_dim);
          batch_loss +=
              rating_elbo_with_noise(gens.rating_vae, mass, eps, b, &grads).loss;
        }
        const double inv = 1.0 / static_cast<double>(end - start);
        for (auto& ref : grad_refs) {
          for (std::size_t i = 0; i < ref.size(); ++i) ref.data[i] *= inv;
        }
        if (!std::isfinite(batch_loss)) {
          throw TrainingError("rating elbo became non-finite at epoch " +
                              std::to_string(epoch) + ", batch " +
                              std::to_string(batch_index));
        }
        numkit::adam_step(params, grad_refs, adam);
        epoch_loss += batch_loss;
      }
      epoch_loss /= static_cast<double>(order.size());

      double val_score = 0.0;
      if (has_val) {
        val_score = rating_predictive_check(gens.rating_vae, raw.ratings,
                                            split.val_users, split.val_holdout);
        if (val_score > result.best_val_score) {
          result.best_val_score = val_score;
          result.best_epoch = epoch;
          best.clear();
          for (const auto& r : params) {
            best.insert(best.end(), r.data, r.data + r.size());
          }
          stall = 0;
        } else {
          ++stall;
        }
      }
      result.log.push_back({epoch, epoch_loss, val_score, b});
      result.epochs_ran = epoch;
      if (has_val && stall >= opts.patience) break;
    }
    if (has_val) {
      std::size_t off = 0;
      for (const auto& r : params) {
        std::copy(best.begin() + off, best.begin() + off + r.size(), r.data);
        off += r.size();
      }
    } else {
      result.best_epoch = result.epochs_ran;
    }
    gens.rating_log = result;
  }
  return gens;
}

std::vector<std::size_t> allocate_histogram(
    const std::vector<std::size_t>& source_counts, std::size_t total) {
  const double source_total = static_cast<double>(
      std::accumulate(source_counts.begin(), source_counts.end(), std::size_t{0}));
  if (source_total <= 0.0) {
    throw ValidationError("allocate_histogram: empty source histogram");
  }
  std::vector<std::size_t> alloc(source_counts.size(), 0);
  std::vector<std::pair<double, std::size_t>> fractions;
  std::size_t assigned = 0;
  for (std::size_t r = 0; r < source_counts.size(); ++r) {
    const double exact = static_cast<double>(total) *
                         static_cast<double>(source_counts[r]) / source_total;
    alloc[r] = static_cast<std::size_t>(std::floor(exact));
    assigned += alloc[r];
    fractions.emplace_back(exact - std::floor(exact), r);
  }
  std::stable_sort(fractions.begin(), fractions.end(),
                   [](const auto& a, const auto& b) {
                     if (a.first != b.first) return a.first > b.first;
                     return a.second < b.second;
                   });
  for (std::size_t n = 0; assigned < total; ++n, ++assigned) {
    alloc[fractions[n % fractions.size()].second] += 1;
  }
  return alloc;
}

CausalDataset simulate_semisynthetic(const RawRatings& raw,
                                     const SimConfig& cfg,
                                     const GeneratorVaes& gens) {
  SimConfig effective = cfg;
  effective.users = raw.users;
  effective.items = raw.items;
  effective.validate();
  if (gens.exposure_vae.items() != raw.items ||
      gens.rating_vae.net.in_dim != raw.items) {
    throw DimensionError("semisynthetic: generator VAEs do not match raw data");
  }
  if (gens.exposure_vae.latent() != effective.latent_dim) {
    throw DimensionError("semisynthetic: latent_dim does not match generators");
  }

  numkit::Rng base(effective.seed);
  const LatentDraws latents = draw_latents(effective, base);

  CausalDataset ds;
  ds.config = effective;
  ds.source_path = raw.path;
  ds.source_rating_histogram = raw.rating_histogram();
  ds.source_exposure_rate = raw.density();
  ds.source_user_ids = raw.user_ids;
  ds.source_item_ids = raw.item_ids;

  const std::size_t cells = raw.users * raw.items;

  // Exposures: rank-threshold the decoder probabilities at the source rate.
  ds.propensity = Matrix(raw.users, raw.items);
  for (std::size_t u = 0; u < raw.users; ++u) {
    const Vector probs = gens.exposure_vae.decode_probs(
        numkit::row_as_vector(latents.confounders, u));
    for (std::size_t i = 0; i < raw.items; ++i) ds.propensity.at(u, i) = probs[i];
  }
  const std::size_t n_expose = static_cast<std::size_t>(
      std::llround(ds.source_exposure_rate * static_cast<double>(cells)));
  ds.exposures = threshold_exposures(ds.propensity, n_expose, ds.repairs);

  {
    std::vector<double> sorted_scores(ds.propensity.data);
    std::sort(sorted_scores.begin(), sorted_scores.end());
    std::size_t duplicates = 0;
    for (std::size_t n = 1; n < sorted_scores.size(); ++n) {
      if (sorted_scores[n] == sorted_scores[n - 1]) ++duplicates;
    }
    if (static_cast<double>(duplicates) > 0.001 * static_cast<double>(cells)) {
      ds.warnings.push_back("exposure scores contain " +
                            std::to_string(duplicates) +
                            " duplicate values; the rank-threshold minimizer "
                            "is not unique");
    }
  }

  // Ratings: quantile-map the rating decoder scores onto the source
  // histogram. Cell order ties are broken by (user, item).
  std::vector<double> rating_scores(cells);
  numkit::Vector pref(effective.latent_dim);
  for (std::size_t u = 0; u < raw.users; ++u) {
    for (std::size_t k = 0; k < effective.latent_dim; ++k) {
      pref[k] = latents.theta.at(u, k) +
                effective.gamma_b * latents.confounders.at(u, k);
    }
    const Vector probs = gens.rating_vae.decode_probs(pref);
    for (std::size_t i = 0; i < raw.items; ++i) {
      rating_scores[u * raw.items + i] = probs[i];
    }
  }
  std::vector<std::uint32_t> order(cells);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&rating_scores](std::uint32_t a, std::uint32_t b) {
              if (rating_scores[a] != rating_scores[b]) {
                return rating_scores[a] < rating_scores[b];
              }
              return a < b;
            });
  const std::vector<std::size_t> alloc =
      allocate_histogram(ds.source_rating_histogram, cells);
  ds.ratings_full = ByteMatrix(raw.users, raw.items);
  std::size_t cursor = 0;
  for (std::size_t r = 0; r < alloc.size(); ++r) {
    for (std::size_t n = 0; n < alloc[r]; ++n, ++cursor) {
      ds.ratings_full.data[order[cursor]] = static_cast<std::uint8_t>(r + 1);
    }
  }

  ds.ratings_obs = mask_ratings(ds.ratings_full, ds.exposures);
  ds.features = project_features(
      noisy_features_input(effective, latents.theta, base),
      effective.feature_dim);
  ds.confounders_true = latents.confounders;
  return ds;
}

CausalDataset simulate_semisynthetic(const RawRatings& raw,
                                     const SimConfig& cfg,
                                     const GeneratorFitOpts& fit_opts) {
  GeneratorFitOpts opts = fit_opts;
  opts.latent_dim = cfg.latent_dim;
  const GeneratorVaes gens = fit_generator_vaes(raw, opts);
  return simulate_semisynthetic(raw, cfg, gens);
}

}  // namespace deconf::datagen
