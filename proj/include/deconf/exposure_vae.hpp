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

namespace deconf::exposure {

using numkit::ByteMatrix;
using numkit::Matrix;
using numkit::Mlp;
using numkit::Rng;
using numkit::TensorRef;
using numkit::Vector;

inline constexpr double kProbClamp = 1e-6;

// beta(e) = beta_max * min(1, e / anneal_epochs), nondecreasing in e.
struct BetaSchedule {
  double beta_max = 0.2;
  std::size_t anneal_epochs = 20;

  double at(std::size_t epoch) const {
    if (anneal_epochs == 0) return beta_max;
    const double frac = static_cast<double>(epoch) /
                        static_cast<double>(anneal_epochs);
    return beta_max * (frac < 1.0 ? frac : 1.0);
  }
};

// Shared diagonal-Gaussian VAE skeleton: encoder trunk with tanh hidden
// layers, two affine posterior heads, and an affine-stack decoder emitting
// raw scores of the input dimension. The likelihood lives in the wrapper.
struct VaeNet {
  std::size_t in_dim = 0;
  std::size_t latent = 0;
  Mlp enc_trunk;  // in -> hidden (tanh on output); empty when depth 0
  numkit::Affine enc_mu;
  numkit::Affine enc_logvar;
  Mlp dec;  // latent -> hidden -> in (last layer linear)

  static VaeNet make(std::size_t in_dim, std::size_t latent,
                     std::size_t hidden_width, std::size_t hidden_depth,
                     Rng& rng);

  struct Cache {
    Mlp::Cache trunk;
    Vector trunk_out;
    Vector mu;
    Vector logvar;
    Vector sigma;
    Vector z;
    Mlp::Cache dec;
    Vector logits;
  };

  struct Grads {
    Mlp::Grads trunk;
    Matrix d_mu_w;
    Vector d_mu_b;
    Matrix d_logvar_w;
    Vector d_logvar_b;
    Mlp::Grads dec;
  };

  Grads zero_grads() const;

  void encode(const Vector& input, Vector& mu, Vector& logvar,
              Cache* cache = nullptr) const;
  Vector posterior_mean(const Vector& input) const;
  Vector decode_scores(const Vector& z, Mlp::Cache* cache = nullptr) const;

  // Full reparameterized pass; eps has size latent.
  void forward(const Vector& input, const Vector& eps, Cache& cache) const;

  // Backpropagates d(loss)/d(logits) and the beta-weighted KL term into
  // grads. Returns nothing; input gradients are not needed here.
  void backward(const Vector& grad_logits, const Vector& eps, double beta,
                const Cache& cache, Grads& grads) const;

  std::vector<TensorRef> param_refs(const std::string& prefix = "vae");
  std::vector<TensorRef> grad_refs(Grads& grads,
                                   const std::string& prefix = "vae");
};

double gaussian_kl(const Vector& mu, const Vector& logvar);

// ---------------------------------------------------------------------------
// exposure model proper: factorized Bernoulli likelihood over binary
// exposure vectors
// ---------------------------------------------------------------------------

struct VaeConfig {
  std::size_t items = 0;
  std::size_t latent_dim = 0;
  std::size_t hidden_width = 0;  // 0 -> latent_dim
  std::size_t hidden_depth = 1;
  double beta_max = 0.2;
  std::size_t anneal_epochs = 20;
};

struct ExposureVae {
  VaeNet net;
  BetaSchedule beta;

  static ExposureVae make(const VaeConfig& cfg, Rng& rng);

  std::size_t items() const { return net.in_dim; }
  std::size_t latent() const { return net.latent; }

  // Per-item Bernoulli probabilities, clamped to [1e-6, 1 - 1e-6] so the
  // emitted likelihood always satisfies overlap.
  Vector decode_probs(const Vector& z) const;

  std::vector<TensorRef> param_refs() { return net.param_refs("exposure"); }
  std::vector<TensorRef> grad_refs(VaeNet::Grads& g) {
    return net.grad_refs(g, "exposure");
  }
};

struct ElboResult {
  double loss = 0.0;       // recon_nll + beta * kl
  double recon_nll = 0.0;  // factorized Bernoulli negative log-likelihood
  double kl = 0.0;
};

// Frozen-noise variant used by the gradient oracle; eps is the
// reparameterization draw.
ElboResult elbo_with_noise(const ExposureVae& vae, const Vector& a,
                           const Vector& eps, double beta,
                           VaeNet::Grads* grads);

ElboResult elbo(const ExposureVae& vae, const Vector& a, Rng& rng, double beta,
                VaeNet::Grads* grads);

// Per-item Bernoulli log-likelihoods of a under the decoded probabilities;
// their sum is the joint log-likelihood (factorization contract).
Vector bernoulli_item_loglik(const Vector& probs, const Vector& a);

struct TrainOpts {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
};

struct EpochLog {
  std::size_t epoch = 0;  // 0 = before training
  double train_loss = 0.0;
  double val_score = 0.0;
  double beta = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_score = -std::numeric_limits<double>::infinity();
  std::size_t epochs_ran = 0;
};

// Adam training with per-epoch predictive checks on the validation users;
// returns the weights of the best validation epoch. With no validation
// users the final weights are kept.
TrainResult train_exposure(ExposureVae& vae, const ByteMatrix& exposures,
                           std::span<const std::size_t> train_users,
                           std::span<const std::size_t> val_users,
                           const std::vector<std::vector<std::size_t>>& val_holdout,
                           const TrainOpts& opts);

// Mean held-out log-likelihood: encode each validation user from the
// exposures with held-out entries removed, then score the held-out entries
// under the decoder Bernoulli probabilities.
double predictive_check(const ExposureVae& vae, const ByteMatrix& exposures,
                        std::span<const std::size_t> val_users,
                        const std::vector<std::vector<std::size_t>>& holdout);

// Deterministic posterior means for every user row.
Matrix extract_confounders(const ExposureVae& vae, const ByteMatrix& exposures);

void save_exposure_checkpoint(const std::filesystem::path& dir,
                              ExposureVae& vae, const VaeConfig& cfg,
                              const TrainResult& result,
                              const std::string& config_hash);
ExposureVae load_exposure_checkpoint(const std::filesystem::path& dir,
                                     VaeConfig* cfg_out = nullptr);

}  // namespace deconf::exposure
