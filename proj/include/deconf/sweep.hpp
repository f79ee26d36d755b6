#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deconf/datagen.hpp"
#include "deconf/evaluate.hpp"

namespace deconf::evaluation {

inline constexpr const char* kMethodDeepDeconf = "deep-deconf";
inline constexpr const char* kMethodConcatVae = "concat-vae";
inline constexpr const char* kMethodNoFeatures = "no-features";

struct PipelineOpts {
  std::size_t model_latent = 0;  // 0 -> dataset latent_dim
  std::size_t hidden_depth = 1;
  double beta_max = 0.2;
  std::size_t anneal_epochs = 20;
  std::size_t vae_epochs = 100;
  std::size_t outcome_epochs = 100;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::size_t patience = 10;
  std::array<double, 3> split_ratios{0.7, 0.15, 0.15};
  double holdout_frac = 0.2;
  EvalConfig eval;
};

struct TrainedStack {
  exposure::ExposureVae vae;  // valid only when use_confounder
  outcome::OutcomeNet net;
  exposure::TrainResult vae_log;
  outcome::TrainResult outcome_log;
  SplitSpec split;
};

// One end-to-end pipeline pass on a prepared dataset: split, fit the
// exposure model (when used), extract confounders, fit the outcome model.
TrainedStack train_stack(const datagen::CausalDataset& ds,
                         std::uint64_t cell_seed, const PipelineOpts& opts,
                         bool use_confounder, bool use_features);

MetricsRecord run_pipeline_cell(const datagen::CausalDataset& ds,
                                std::uint64_t cell_seed,
                                const PipelineOpts& opts, bool use_confounder,
                                bool use_features);

struct CellResult {
  double level = 0.0;  // gamma_theta, or feature noise for the noise study
  std::string method;
  std::uint64_t seed = 0;
  MetricsRecord metrics;
};

// Regenerates the dataset per (level, seed) cell — the confounder draw seed
// is shared across methods so comparisons are paired — then trains and
// evaluates every method. jobs > 1 forks worker processes per cell.
std::vector<CellResult> confounding_sweep(const datagen::SimConfig& base,
                                          const std::vector<double>& levels,
                                          const std::vector<std::string>& methods,
                                          const std::vector<std::uint64_t>& seeds,
                                          const PipelineOpts& opts,
                                          std::size_t jobs = 1,
                                          bool verbose = false);

// Feature-noise sensitivity: one confounding level, feature noise varied;
// a negative level denotes the no-features baseline.
std::vector<CellResult> noise_sensitivity_study(
    const datagen::SimConfig& base, const std::vector<double>& noise_levels,
    const std::vector<std::uint64_t>& seeds, const PipelineOpts& opts,
    std::size_t jobs = 1, bool verbose = false);

void write_sweep_csv(const std::filesystem::path& path,
                     const std::vector<CellResult>& cells,
                     const std::string& config_hash);

nlohmann::ordered_json sweep_summary(const std::vector<CellResult>& cells,
                                     const std::string& config_hash,
                                     std::size_t summary_k = 20);

}  // namespace deconf::evaluation
