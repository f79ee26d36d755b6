#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "deconf/dataset.hpp"
#include "deconf/exposure_vae.hpp"
#include "deconf/rng.hpp"

namespace deconf::datagen {

using numkit::Rng;
using numkit::Vector;

// Fully simulated confounded dataset: c_u ~ N(0, I_K) drives both the
// exposure propensities ReLU(W_a c_u) (top-alpha global thresholding) and
// the Poisson ratings over ReLU(W_r (theta_u + gamma_b c_u)).
CausalDataset simulate_dataset(const SimConfig& cfg);

struct KlDiagnostics {
  double global_kl = 0.0;
  double mean_individual_kl = 0.0;
};

// KL(observed rating histogram || population rating histogram) over rating
// levels 1..5, globally and averaged per user.
KlDiagnostics rating_distribution_kl(const CausalDataset& ds);

// Discrete KL over 1..5 with add-1e-9 smoothing; inputs are raw counts.
double histogram_kl(const std::vector<double>& observed_counts,
                    const std::vector<double>& population_counts);

// Exposed interactions per item.
std::vector<std::size_t> item_popularity(const CausalDataset& ds);

// Gini coefficient of a count vector (0 = uniform).
double gini_coefficient(const std::vector<std::size_t>& counts);

// ---------------------------------------------------------------------------
// semi-synthetic generation from a real rating file
// ---------------------------------------------------------------------------

struct RawRatings {
  std::size_t users = 0;
  std::size_t items = 0;
  ByteMatrix ratings;  // dense, 0 = unobserved
  std::vector<std::string> user_ids;  // dense index -> original id
  std::vector<std::string> item_ids;
  std::vector<std::string> dropped_users;  // ids with no observed ratings
  std::vector<std::string> dropped_items;
  std::string path;

  std::size_t observed_count() const {
    std::size_t n = 0;
    for (const auto v : ratings.data) n += v > 0 ? 1 : 0;
    return n;
  }
  double density() const {
    return static_cast<double>(observed_count()) /
           static_cast<double>(users * items);
  }
  std::vector<std::size_t> rating_histogram() const {
    std::vector<std::size_t> h(5, 0);
    for (const auto v : ratings.data) {
      if (v >= 1 && v <= 5) ++h[v - 1];
    }
    return h;
  }
};

// UTF-8 CSV `user_id,item_id,rating` with ratings 1..5; IDs are remapped to
// dense 0-based indices in first-seen order.
RawRatings load_raw_ratings_csv(const std::filesystem::path& path);

// Multinomial-likelihood VAE over normalized rating mass, used only to fit
// the semi-synthetic rating generator.
struct RatingVae {
  exposure::VaeNet net;

  Vector decode_probs(const Vector& z) const {
    return numkit::softmax_fw(net.decode_scores(z));
  }
};

struct GeneratorVaes {
  exposure::ExposureVae exposure_vae;
  RatingVae rating_vae;
  exposure::TrainResult exposure_log;
  exposure::TrainResult rating_log;
};

struct GeneratorFitOpts {
  std::size_t latent_dim = 16;
  std::size_t hidden_width = 0;
  std::size_t hidden_depth = 1;
  double beta_max = 0.2;
  std::size_t anneal_epochs = 20;
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::size_t patience = 10;
  double val_fraction = 0.15;
  std::uint64_t seed = 1;
};

// Fits the exposure VAE on binarized ratings and the rating VAE on
// normalized rating mass, following the same training protocol as the
// exposure model.
GeneratorVaes fit_generator_vaes(const RawRatings& raw,
                                 const GeneratorFitOpts& opts);

// Multinomial ELBO for the rating VAE (datagen-only; the exposure model
// never exposes this likelihood).
exposure::ElboResult rating_elbo_with_noise(const RatingVae& vae,
                                            const Vector& mass,
                                            const Vector& eps, double beta,
                                            exposure::VaeNet::Grads* grads);

// Semi-synthetic dataset: exposures by rank-thresholding f_exp(c_u) at the
// source exposure rate, ratings by quantile-mapping f_rat(theta_u +
// gamma_b c_u) onto the source rating histogram.
CausalDataset simulate_semisynthetic(const RawRatings& raw,
                                     const SimConfig& cfg,
                                     const GeneratorVaes& gens);

CausalDataset simulate_semisynthetic(const RawRatings& raw,
                                     const SimConfig& cfg,
                                     const GeneratorFitOpts& fit_opts);

// Largest-remainder integer allocation of `total` cells across the source
// histogram proportions.
std::vector<std::size_t> allocate_histogram(
    const std::vector<std::size_t>& source_counts, std::size_t total);

}  // namespace deconf::datagen
