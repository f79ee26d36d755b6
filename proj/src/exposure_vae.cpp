#include "deconf/exposure_vae.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "deconf/checkpoint.hpp"
#include "deconf/common.hpp"

namespace deconf::exposure {

// ---------------------------------------------------------------------------
// VaeNet
// ---------------------------------------------------------------------------

VaeNet VaeNet::make(std::size_t in_dim, std::size_t latent,
                    std::size_t hidden_width, std::size_t hidden_depth,
                    Rng& rng) {
  if (in_dim == 0 || latent == 0) {
    throw ParameterError("vae: in_dim and latent must be positive");
  }
  const std::size_t width = hidden_width == 0 ? latent : hidden_width;
  VaeNet net;
  net.in_dim = in_dim;
  net.latent = latent;

  std::vector<std::size_t> trunk_dims{in_dim};
  for (std::size_t d = 0; d < hidden_depth; ++d) trunk_dims.push_back(width);
  net.enc_trunk = Mlp::make(trunk_dims, /*tanh_on_output=*/true, rng);

  const std::size_t trunk_out = hidden_depth == 0 ? in_dim : width;
  net.enc_mu = numkit::make_affine(latent, trunk_out, rng);
  net.enc_logvar = numkit::make_affine(latent, trunk_out, rng);

  std::vector<std::size_t> dec_dims{latent};
  for (std::size_t d = 0; d < hidden_depth; ++d) dec_dims.push_back(width);
  dec_dims.push_back(in_dim);
  net.dec = Mlp::make(dec_dims, /*tanh_on_output=*/false, rng);
  return net;
}

VaeNet::Grads VaeNet::zero_grads() const {
  Grads g;
  g.trunk = enc_trunk.zero_grads();
  g.d_mu_w = Matrix::zeros(enc_mu.W.rows, enc_mu.W.cols);
  g.d_mu_b.assign(enc_mu.b.size(), 0.0);
  g.d_logvar_w = Matrix::zeros(enc_logvar.W.rows, enc_logvar.W.cols);
  g.d_logvar_b.assign(enc_logvar.b.size(), 0.0);
  g.dec = dec.zero_grads();
  return g;
}

void VaeNet::encode(const Vector& input, Vector& mu, Vector& logvar,
                    Cache* cache) const {
  const Vector* h = &input;
  Vector trunk_out;
  if (!enc_trunk.layers.empty()) {
    trunk_out = enc_trunk.forward(input, cache ? &cache->trunk : nullptr);
    h = &trunk_out;
  } else if (cache) {
    cache->trunk.input = input;
    cache->trunk.outputs.clear();
  }
  mu = numkit::affine_forward(*h, enc_mu.W, enc_mu.b);
  logvar = numkit::affine_forward(*h, enc_logvar.W, enc_logvar.b);
  if (cache) {
    cache->trunk_out = *h;
    cache->mu = mu;
    cache->logvar = logvar;
  }
}

Vector VaeNet::posterior_mean(const Vector& input) const {
  Vector mu;
  Vector logvar;
  encode(input, mu, logvar);
  return mu;
}

Vector VaeNet::decode_scores(const Vector& z, Mlp::Cache* cache) const {
  return dec.forward(z, cache);
}

void VaeNet::forward(const Vector& input, const Vector& eps,
                     Cache& cache) const {
  if (eps.size() != latent) {
    throw DimensionError("vae forward: eps must have the latent dimension");
  }
  encode(input, cache.mu, cache.logvar, &cache);
  cache.sigma.resize(latent);
  cache.z.resize(latent);
  for (std::size_t k = 0; k < latent; ++k) {
    cache.sigma[k] = std::exp(0.5 * cache.logvar[k]);
    cache.z[k] = cache.mu[k] + cache.sigma[k] * eps[k];
  }
  cache.logits = dec.forward(cache.z, &cache.dec);
}

void VaeNet::backward(const Vector& grad_logits, const Vector& eps,
                      double beta, const Cache& cache, Grads& grads) const {
  // decoder -> z
  const Vector g_z = dec.backward(grad_logits, cache.dec, &grads.dec);

  // z = mu + sigma * eps, sigma = exp(lv / 2)
  // KL = 0.5 * sum(mu^2 + e^lv - lv - 1)
  Vector g_mu(latent);
  Vector g_logvar(latent);
  for (std::size_t k = 0; k < latent; ++k) {
    g_mu[k] = g_z[k] + beta * cache.mu[k];
    const double sigma2 = cache.sigma[k] * cache.sigma[k];
    g_logvar[k] =
        g_z[k] * eps[k] * 0.5 * cache.sigma[k] + beta * 0.5 * (sigma2 - 1.0);
  }

  Vector g_trunk = numkit::affine_backward_acc(g_mu, cache.trunk_out, enc_mu.W,
                                               grads.d_mu_w, grads.d_mu_b);
  const Vector g_trunk_lv = numkit::affine_backward_acc(
      g_logvar, cache.trunk_out, enc_logvar.W, grads.d_logvar_w,
      grads.d_logvar_b);
  for (std::size_t i = 0; i < g_trunk.size(); ++i) g_trunk[i] += g_trunk_lv[i];

  if (!enc_trunk.layers.empty()) {
    enc_trunk.backward(g_trunk, cache.trunk, &grads.trunk);
  }
}

std::vector<TensorRef> VaeNet::param_refs(const std::string& prefix) {
  std::vector<TensorRef> refs;
  numkit::append_tensor_refs(refs, prefix + ".enc_trunk", enc_trunk);
  refs.push_back({prefix + ".enc_mu.w", enc_mu.W.data.data(), enc_mu.W.rows,
                  enc_mu.W.cols});
  refs.push_back({prefix + ".enc_mu.b", enc_mu.b.data(), enc_mu.b.size(), 1});
  refs.push_back({prefix + ".enc_logvar.w", enc_logvar.W.data.data(),
                  enc_logvar.W.rows, enc_logvar.W.cols});
  refs.push_back(
      {prefix + ".enc_logvar.b", enc_logvar.b.data(), enc_logvar.b.size(), 1});
  numkit::append_tensor_refs(refs, prefix + ".dec", dec);
  return refs;
}

std::vector<TensorRef> VaeNet::grad_refs(Grads& grads,
                                         const std::string& prefix) {
  std::vector<TensorRef> refs;
  numkit::append_grad_refs(refs, prefix + ".enc_trunk", grads.trunk);
  refs.push_back({prefix + ".enc_mu.w", grads.d_mu_w.data.data(),
                  grads.d_mu_w.rows, grads.d_mu_w.cols});
  refs.push_back(
      {prefix + ".enc_mu.b", grads.d_mu_b.data(), grads.d_mu_b.size(), 1});
  refs.push_back({prefix + ".enc_logvar.w", grads.d_logvar_w.data.data(),
                  grads.d_logvar_w.rows, grads.d_logvar_w.cols});
  refs.push_back({prefix + ".enc_logvar.b", grads.d_logvar_b.data(),
                  grads.d_logvar_b.size(), 1});
  numkit::append_grad_refs(refs, prefix + ".dec", grads.dec);
  return refs;
}

double gaussian_kl(const Vector& mu, const Vector& logvar) {
  double kl = 0.0;
  for (std::size_t k = 0; k < mu.size(); ++k) {
    kl += 0.5 * (mu[k] * mu[k] + std::exp(logvar[k]) - logvar[k] - 1.0);
  }
  return kl;
}

// ---------------------------------------------------------------------------
// exposure model
// ---------------------------------------------------------------------------

ExposureVae ExposureVae::make(const VaeConfig& cfg, Rng& rng) {
  ExposureVae vae;
  vae.net = VaeNet::make(cfg.items, cfg.latent_dim, cfg.hidden_width,
                         cfg.hidden_depth, rng);
  vae.beta = BetaSchedule{cfg.beta_max, cfg.anneal_epochs};
  return vae;
}

Vector ExposureVae::decode_probs(const Vector& z) const {
  Vector probs = numkit::sigmoid_fw(net.decode_scores(z));
  for (auto& p : probs) p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return probs;
}

Vector bernoulli_item_loglik(const Vector& probs, const Vector& a) {
  if (probs.size() != a.size()) {
    throw DimensionError("bernoulli_item_loglik: size mismatch");
  }
  Vector ll(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    ll[i] = a[i] * std::log(probs[i]) + (1.0 - a[i]) * std::log(1.0 - probs[i]);
  }
  return ll;
}

namespace {

void check_binary(const Vector& a) {
  for (double x : a) {
    if (x != 0.0 && x != 1.0) {
      throw ValidationError("exposure vector must be binary");
    }
  }
}

}  // namespace

ElboResult elbo_with_noise(const ExposureVae& vae, const Vector& a,
                           const Vector& eps, double beta,
                           VaeNet::Grads* grads) {
  if (a.size() != vae.items()) {
    throw DimensionError("elbo: exposure vector has wrong length");
  }
  check_binary(a);

  VaeNet::Cache cache;
  vae.net.forward(a, eps, cache);

  ElboResult result;
  Vector grad_logits(vae.items());
  for (std::size_t i = 0; i < vae.items(); ++i) {
    const double p = numkit::sigmoid(cache.logits[i]);
    const bool clamped = p < kProbClamp || p > 1.0 - kProbClamp;
    const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    result.recon_nll -= a[i] * std::log(pc) + (1.0 - a[i]) * std::log(1.0 - pc);
    grad_logits[i] = clamped ? 0.0 : (p - a[i]);
  }
  result.kl = gaussian_kl(cache.mu, cache.logvar);
  result.loss = result.recon_nll + beta * result.kl;

  if (grads) vae.net.backward(grad_logits, eps, beta, cache, *grads);
  return result;
}

ElboResult elbo(const ExposureVae& vae, const Vector& a, Rng& rng, double beta,
                VaeNet::Grads* grads) {
  const Vector eps = numkit::sample_standard_normal(rng, vae.latent());
  return elbo_with_noise(vae, a, eps, beta, grads);
}

double predictive_check(const ExposureVae& vae, const ByteMatrix& exposures,
                        std::span<const std::size_t> val_users,
                        const std::vector<std::vector<std::size_t>>& holdout) {
  if (val_users.size() != holdout.size()) {
    throw DimensionError("predictive_check: holdout list does not match users");
  }
  double total_ll = 0.0;
  std::size_t total_entries = 0;
  for (std::size_t v = 0; v < val_users.size(); ++v) {
    const std::size_t u = val_users[v];
    Vector a_in = numkit::row_as_vector(exposures, u);
    for (const std::size_t item : holdout[v]) a_in[item] = 0.0;
    const Vector mu = vae.net.posterior_mean(a_in);
    const Vector probs = vae.decode_probs(mu);
    for (const std::size_t item : holdout[v]) {
      // Held-out entries are observed exposures, so truth is 1.
      total_ll += std::log(probs[item]);
      ++total_entries;
    }
  }
  if (total_entries == 0) {
    throw ValidationError("predictive_check: empty holdout mask");
  }
  return total_ll / static_cast<double>(total_entries);
}

Matrix extract_confounders(const ExposureVae& vae,
                           const ByteMatrix& exposures) {
  Matrix z(exposures.rows, vae.latent());
  for (std::size_t u = 0; u < exposures.rows; ++u) {
    const Vector mu = vae.net.posterior_mean(numkit::row_as_vector(exposures, u));
    for (std::size_t k = 0; k < vae.latent(); ++k) z.at(u, k) = mu[k];
  }
  return z;
}

namespace {

std::vector<double> snapshot_params(std::vector<TensorRef>& refs) {
  std::vector<double> flat;
  for (const auto& r : refs) flat.insert(flat.end(), r.data, r.data + r.size());
  return flat;
}

void restore_params(std::vector<TensorRef>& refs,
                    const std::vector<double>& flat) {
  std::size_t off = 0;
  for (const auto& r : refs) {
    std::copy(flat.begin() + off, flat.begin() + off + r.size(), r.data);
    off += r.size();
  }
}

}  // namespace

TrainResult train_exposure(ExposureVae& vae, const ByteMatrix& exposures,
                           std::span<const std::size_t> train_users,
                           std::span<const std::size_t> val_users,
                           const std::vector<std::vector<std::size_t>>& val_holdout,
                           const TrainOpts& opts) {
  if (train_users.empty()) {
    throw ValidationError("train_exposure: need at least one training user");
  }
  const bool has_val = !val_users.empty();

  // Popularity-logit init of the decoder output bias: the untrained model
  // scores held-out exposures at the per-item base rate, which is the
  // meaningful null for the predictive check.
  {
    Vector rate(vae.items(), 0.0);
    for (const std::size_t u : train_users) {
      for (std::size_t i = 0; i < vae.items(); ++i) {
        rate[i] += static_cast<double>(exposures.at(u, i));
      }
    }
    Vector& bias = vae.net.dec.layers.back().b;
    for (std::size_t i = 0; i < vae.items(); ++i) {
      const double p = std::clamp(
          rate[i] / static_cast<double>(train_users.size()), 1e-3, 1.0 - 1e-3);
      bias[i] = std::log(p / (1.0 - p));
    }
  }

  Rng base(opts.seed);
  Rng shuffle_rng = base.split("shuffle");
  Rng noise_rng = base.split("noise");

  auto params = vae.param_refs();
  numkit::AdamState adam;
  adam.lr = opts.lr;

  TrainResult result;
  if (has_val) {
    result.best_val_score =
        predictive_check(vae, exposures, val_users, val_holdout);
    result.log.push_back({0, 0.0, result.best_val_score, 0.0});
  }
  std::vector<double> best_weights = snapshot_params(params);
  std::size_t stall = 0;

  std::vector<std::size_t> order(train_users.begin(), train_users.end());
  VaeNet::Grads grads = vae.net.zero_grads();
  auto grad_refs = vae.grad_refs(grads);

  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    const double beta = vae.beta.at(epoch);
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += opts.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      for (auto& ref : grad_refs) std::fill(ref.data, ref.data + ref.size(), 0.0);

      double batch_loss = 0.0;
      for (std::size_t idx = start; idx < end; ++idx) {
        const Vector a = numkit::row_as_vector(exposures, order[idx]);
        const ElboResult r = elbo(vae, a, noise_rng, beta, &grads);
        batch_loss += r.loss;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& ref : grad_refs) {
        for (std::size_t i = 0; i < ref.size(); ++i) ref.data[i] *= inv;
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("exposure elbo became non-finite at epoch " +
                            std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      numkit::adam_step(params, grad_refs, adam);
      epoch_loss += batch_loss;
    }
    epoch_loss /= static_cast<double>(order.size());

    double val_score = 0.0;
    if (has_val) {
      val_score = predictive_check(vae, exposures, val_users, val_holdout);
      if (val_score > result.best_val_score) {
        result.best_val_score = val_score;
        result.best_epoch = epoch;
        best_weights = snapshot_params(params);
        stall = 0;
      } else {
        ++stall;
      }
    }
    result.log.push_back({epoch, epoch_loss, val_score, beta});
    result.epochs_ran = epoch;
    if (has_val && stall >= opts.patience) break;
  }

  if (has_val) {
    restore_params(params, best_weights);
  } else {
    result.best_epoch = result.epochs_ran;
  }
  return result;
}

void save_exposure_checkpoint(const std::filesystem::path& dir,
                              ExposureVae& vae, const VaeConfig& cfg,
                              const TrainResult& result,
                              const std::string& config_hash) {
  nlohmann::ordered_json manifest;
  manifest["kind"] = "exposure_vae";
  manifest["version"] = kVersion;
  manifest["config_hash"] = config_hash;
  manifest["items"] = cfg.items;
  manifest["latent_dim"] = cfg.latent_dim;
  manifest["hidden_width"] = cfg.hidden_width;
  manifest["hidden_depth"] = cfg.hidden_depth;
  manifest["beta_max"] = cfg.beta_max;
  manifest["anneal_epochs"] = cfg.anneal_epochs;
  manifest["best_epoch"] = result.best_epoch;
  manifest["best_val_score"] = result.best_val_score;
  io::save_checkpoint(dir, vae.param_refs(), std::move(manifest));
}

ExposureVae load_exposure_checkpoint(const std::filesystem::path& dir,
                                     VaeConfig* cfg_out) {
  const auto manifest = io::load_checkpoint_manifest(dir);
  if (manifest.value("kind", "") != "exposure_vae") {
    throw IoError("checkpoint at " + dir.string() + " is not an exposure model");
  }
  VaeConfig cfg;
  cfg.items = manifest.at("items").get<std::size_t>();
  cfg.latent_dim = manifest.at("latent_dim").get<std::size_t>();
  cfg.hidden_width = manifest.at("hidden_width").get<std::size_t>();
  cfg.hidden_depth = manifest.at("hidden_depth").get<std::size_t>();
  cfg.beta_max = manifest.at("beta_max").get<double>();
  cfg.anneal_epochs = manifest.at("anneal_epochs").get<std::size_t>();
  Rng dummy(0);
  ExposureVae vae = ExposureVae::make(cfg, dummy);
  io::load_checkpoint_weights(dir, vae.param_refs());
  if (cfg_out) *cfg_out = cfg;
  return vae;
}

}  // namespace deconf::exposure
