#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "deconf/matrix.hpp"

namespace deconf::datagen {

using numkit::ByteMatrix;
using numkit::Matrix;

struct SimConfig {
  std::size_t users = 2000;
  std::size_t items = 500;
  std::size_t latent_dim = 16;  // K, confounder dimension
  std::size_t feature_dim = 8;  // S
  double gamma_theta = 0.5;     // preference confounding in [0, 1]
  double gamma_b = 2.0;         // basic confounding level, rating branch only
  double exposure_rate = 0.1;   // global alpha in (0, 1)
  double feature_noise = 0.1;   // lambda_u^{-1}, variance of feature noise
  std::uint64_t seed = 1;

  void validate() const;
};

struct RepairEvent {
  std::size_t user = 0;
  std::size_t exposed_item = 0;
  bool removed_other = false;
  std::size_t removed_user = 0;
  std::size_t removed_item = 0;
};

struct CausalDataset {
  ByteMatrix ratings_full;  // population ratings, all entries in 1..5
  ByteMatrix exposures;     // binary
  ByteMatrix ratings_obs;   // ratings_full masked by exposures
  Matrix features;          // U x S
  Matrix confounders_true;  // U x K (diagnostic ground truth)
  Matrix propensity;        // U x I raw propensity scores (diagnostic only,
                            // not serialized)
  SimConfig config;
  std::vector<RepairEvent> repairs;
  std::vector<std::string> warnings;

  // semi-synthetic provenance; empty/zero for fully simulated data
  std::string source_path;
  std::vector<std::size_t> source_rating_histogram;  // counts for r=1..5
  double source_exposure_rate = 0.0;
  std::vector<std::string> source_user_ids;
  std::vector<std::string> source_item_ids;

  std::size_t users() const { return ratings_full.rows; }
  std::size_t items() const { return ratings_full.cols; }

  std::size_t exposure_count() const {
    std::size_t n = 0;
    for (const auto v : exposures.data) n += v;
    return n;
  }
};

nlohmann::ordered_json make_manifest(const CausalDataset& ds,
                                     const std::string& config_hash);

// Bundle layout: manifest.json, ratings_full.csv (dense), ratings_obs.csv +
// exposures.csv (triplets), features.csv + confounders_true.csv (dense with
// header).
void write_bundle(const std::filesystem::path& dir, const CausalDataset& ds,
                  const std::string& config_hash);
CausalDataset load_bundle(const std::filesystem::path& dir);

struct AuditReport {
  bool ok = true;
  std::vector<std::string> violations;
  double exposure_rate = 0.0;
  double exposure_rate_error = 0.0;
  std::vector<std::size_t> rating_histogram;  // observed population counts
};

// Checks the dataset invariants: masking identity, exposure-rate tolerance,
// rating range, per-user coverage, and (for semi-synthetic data) the exact
// histogram match.
AuditReport audit_dataset(const CausalDataset& ds);

}  // namespace deconf::datagen
