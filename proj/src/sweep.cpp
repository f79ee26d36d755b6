#include "deconf/sweep.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>

#include "deconf/csv.hpp"

namespace deconf::evaluation {

TrainedStack train_stack(const datagen::CausalDataset& ds,
                         std::uint64_t cell_seed, const PipelineOpts& opts,
                         bool use_confounder, bool use_features) {
  TrainedStack stack;
  stack.split = split_users(ds.exposures, opts.split_ratios, cell_seed,
                            opts.holdout_frac);

  const std::size_t latent =
      opts.model_latent == 0 ? ds.config.latent_dim : opts.model_latent;
  numkit::Rng base(cell_seed);

  numkit::Matrix confounders;
  if (use_confounder) {
    exposure::VaeConfig vcfg;
    vcfg.items = ds.items();
    vcfg.latent_dim = latent;
    vcfg.hidden_depth = opts.hidden_depth;
    vcfg.beta_max = opts.beta_max;
    vcfg.anneal_epochs = opts.anneal_epochs;
    numkit::Rng vae_init = base.split("vae_init");
    stack.vae = exposure::ExposureVae::make(vcfg, vae_init);

    exposure::TrainOpts topts;
    topts.epochs = opts.vae_epochs;
    topts.batch_size = opts.batch_size;
    topts.lr = opts.lr;
    topts.patience = opts.patience;
    topts.seed = base.split("vae_train").seed();
    stack.vae_log = exposure::train_exposure(
        stack.vae, ds.exposures, stack.split.train_users, stack.split.val_users,
        stack.split.val_holdout, topts);
    confounders = exposure::extract_confounders(stack.vae, ds.exposures);
  }

  outcome::OutcomeConfig ocfg;
  ocfg.items = ds.items();
  ocfg.latent_dim = latent;
  ocfg.feature_dim = ds.features.cols;
  ocfg.use_features = use_features;
  ocfg.use_confounder = use_confounder;
  ocfg.hidden_depth = opts.hidden_depth;
  numkit::Rng net_init = base.split("outcome_init");
  stack.net = outcome::OutcomeNet::make(ocfg, net_init);

  outcome::OutcomeTrainData data;
  data.ratings_obs = &ds.ratings_obs;
  data.exposures = &ds.exposures;
  data.features = use_features ? &ds.features : nullptr;
  data.confounders = use_confounder ? &confounders : nullptr;

  outcome::TrainOpts oopts;
  oopts.epochs = opts.outcome_epochs;
  oopts.batch_size = opts.batch_size;
  oopts.lr = opts.lr;
  oopts.patience = opts.patience;
  oopts.seed = base.split("outcome_train").seed();
  stack.outcome_log = outcome::train_outcome(stack.net, data,
                                             stack.split.train_users,
                                             stack.split.val_users,
                                             stack.split.val_holdout, oopts);
  return stack;
}

MetricsRecord run_pipeline_cell(const datagen::CausalDataset& ds,
                                std::uint64_t cell_seed,
                                const PipelineOpts& opts, bool use_confounder,
                                bool use_features) {
  const TrainedStack stack =
      train_stack(ds, cell_seed, opts, use_confounder, use_features);
  return evaluate_unbiased(use_confounder ? &stack.vae : nullptr, stack.net,
                           ds, stack.split, opts.eval);
}

namespace {

struct CellJob {
  datagen::SimConfig cfg;
  double level = 0.0;
  std::string method;
  std::uint64_t seed = 0;
  bool use_confounder = true;
  bool use_features = true;
};

CellResult run_job(const CellJob& job, const PipelineOpts& opts) {
  const datagen::CausalDataset ds = datagen::simulate_dataset(job.cfg);
  CellResult cell;
  cell.level = job.level;
  cell.method = job.method;
  cell.seed = job.seed;
  cell.metrics =
      run_pipeline_cell(ds, job.seed, opts, job.use_confounder, job.use_features);
  return cell;
}

nlohmann::ordered_json cell_to_json(const CellResult& cell) {
  nlohmann::ordered_json j;
  j["level"] = cell.level;
  j["method"] = cell.method;
  j["seed"] = cell.seed;
  j["metrics"] = metrics_to_json(cell.metrics);
  return j;
}

CellResult cell_from_json(const nlohmann::ordered_json& j) {
  CellResult cell;
  cell.level = j.at("level").get<double>();
  cell.method = j.at("method").get<std::string>();
  cell.seed = j.at("seed").get<std::uint64_t>();
  const auto& m = j.at("metrics");
  cell.metrics.seed = m.at("seed").get<std::uint64_t>();
  cell.metrics.evaluated_users = m.at("evaluated_users").get<std::size_t>();
  cell.metrics.skipped_users = m.at("skipped_users").get<std::size_t>();
  for (const auto& row : m.at("metrics")) {
    cell.metrics.ks.push_back(row.at("k").get<std::size_t>());
    cell.metrics.recall_mean.push_back(row.at("recall").get<double>());
    cell.metrics.ndcg_mean.push_back(row.at("ndcg").get<double>());
  }
  return cell;
}

// Runs the cells in worker processes (fork per cell, at most `jobs` live at
// once); each worker writes its result as JSON and exits. Cell seeds are
// fixed up front, so the schedule cannot change the results.
std::vector<CellResult> run_jobs(const std::vector<CellJob>& jobs,
                                 const PipelineOpts& opts, std::size_t n_jobs,
                                 bool verbose) {
  std::vector<CellResult> results(jobs.size());
  if (n_jobs <= 1) {
    for (std::size_t n = 0; n < jobs.size(); ++n) {
      if (verbose) {
        std::cerr << "[sweep] cell " << (n + 1) << "/" << jobs.size()
                  << " level=" << jobs[n].level << " method=" << jobs[n].method
                  << " seed=" << jobs[n].seed << "\n";
      }
      results[n] = run_job(jobs[n], opts);
    }
    return results;
  }

  const auto tmp_dir =
      std::filesystem::temp_directory_path() /
      ("deconf-sweep-" + std::to_string(::getpid()));
  std::filesystem::create_directories(tmp_dir);

  std::map<pid_t, std::size_t> running;
  std::size_t next = 0;
  auto spawn = [&]() {
    const std::size_t n = next++;
    const pid_t pid = ::fork();
    if (pid < 0) throw IoError("fork failed for sweep worker");
    if (pid == 0) {
      int code = 0;
      try {
        const CellResult cell = run_job(jobs[n], opts);
        io::write_text_atomic(tmp_dir / (std::to_string(n) + ".json"),
                              cell_to_json(cell).dump());
      } catch (const std::exception& e) {
        std::fprintf(stderr, "sweep worker %zu failed: %s\n", n, e.what());
        code = 1;
      }
      ::_exit(code);
    }
    running.emplace(pid, n);
  };

  bool failed = false;
  while (next < jobs.size() || !running.empty()) {
    while (next < jobs.size() && running.size() < n_jobs) spawn();
    int status = 0;
    const pid_t pid = ::waitpid(-1, &status, 0);
    if (pid < 0) throw IoError("waitpid failed for sweep worker");
    const auto it = running.find(pid);
    if (it == running.end()) continue;
    if (verbose) {
      std::cerr << "[sweep] finished cell " << (it->second + 1) << "/"
                << jobs.size() << "\n";
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) failed = true;
    running.erase(it);
  }
  if (failed) {
    std::filesystem::remove_all(tmp_dir);
    throw TrainingError("a sweep worker process failed");
  }
  for (std::size_t n = 0; n < jobs.size(); ++n) {
    const auto path = tmp_dir / (std::to_string(n) + ".json");
    results[n] = cell_from_json(nlohmann::ordered_json::parse(io::read_text(path)));
  }
  std::filesystem::remove_all(tmp_dir);
  return results;
}

}  // namespace

std::vector<CellResult> confounding_sweep(const datagen::SimConfig& base,
                                          const std::vector<double>& levels,
                                          const std::vector<std::string>& methods,
                                          const std::vector<std::uint64_t>& seeds,
                                          const PipelineOpts& opts,
                                          std::size_t jobs, bool verbose) {
  if (levels.size() < 1 || seeds.size() < 1 || methods.empty()) {
    throw ParameterError("sweep: need at least one level, method, and seed");
  }
  std::vector<CellJob> cell_jobs;
  for (const double level : levels) {
    for (const std::uint64_t seed : seeds) {
      for (const auto& method : methods) {
        CellJob job;
        job.cfg = base;
        job.cfg.gamma_theta = level;
        job.cfg.seed = seed;
        job.level = level;
        job.method = method;
        job.seed = seed;
        if (method == kMethodDeepDeconf) {
          job.use_confounder = true;
          job.use_features = true;
        } else if (method == kMethodConcatVae) {
          job.use_confounder = false;
          job.use_features = true;
        } else if (method == kMethodNoFeatures) {
          job.use_confounder = true;
          job.use_features = false;
        } else {
          throw ParameterError("sweep: unknown method '" + method + "'");
        }
        cell_jobs.push_back(std::move(job));
      }
    }
  }
  return run_jobs(cell_jobs, opts, jobs, verbose);
}

std::vector<CellResult> noise_sensitivity_study(
    const datagen::SimConfig& base, const std::vector<double>& noise_levels,
    const std::vector<std::uint64_t>& seeds, const PipelineOpts& opts,
    std::size_t jobs, bool verbose) {
  if (noise_levels.empty() || seeds.empty()) {
    throw ParameterError("noise study: need at least one level and seed");
  }
  std::vector<CellJob> cell_jobs;
  for (const double level : noise_levels) {
    const bool no_features = level < 0.0;
    for (const std::uint64_t seed : seeds) {
      CellJob job;
      job.cfg = base;
      job.cfg.feature_noise = no_features ? base.feature_noise : level;
      job.cfg.seed = seed;
      job.level = level;
      job.method = no_features ? kMethodNoFeatures : kMethodDeepDeconf;
      job.seed = seed;
      job.use_confounder = true;
      job.use_features = !no_features;
      cell_jobs.push_back(std::move(job));
    }
  }
  return run_jobs(cell_jobs, opts, jobs, verbose);
}

void write_sweep_csv(const std::filesystem::path& path,
                     const std::vector<CellResult>& cells,
                     const std::string& config_hash) {
  io::AtomicFile file(path);
  auto& out = file.stream();
  out << "# config_hash=" << config_hash << "\n";
  out << "level,method,metric,K,seed,value\n";
  for (const auto& cell : cells) {
    for (std::size_t n = 0; n < cell.metrics.ks.size(); ++n) {
      out << io::format_double(cell.level) << "," << cell.method << ",recall,"
          << cell.metrics.ks[n] << "," << cell.seed << ","
          << io::format_double(cell.metrics.recall_mean[n]) << "\n";
      out << io::format_double(cell.level) << "," << cell.method << ",ndcg,"
          << cell.metrics.ks[n] << "," << cell.seed << ","
          << io::format_double(cell.metrics.ndcg_mean[n]) << "\n";
    }
  }
  file.commit();
}

nlohmann::ordered_json sweep_summary(const std::vector<CellResult>& cells,
                                     const std::string& config_hash,
                                     std::size_t summary_k) {
  // mean per (method, level) at the summary K
  std::map<std::string, std::map<double, std::pair<double, double>>> sums;
  std::map<std::string, std::map<double, std::size_t>> counts;
  for (const auto& cell : cells) {
    const double r = cell.metrics.recall_at(summary_k);
    const double n = cell.metrics.ndcg_at(summary_k);
    auto& acc = sums[cell.method][cell.level];
    acc.first += r;
    acc.second += n;
    counts[cell.method][cell.level] += 1;
  }

  nlohmann::ordered_json summary;
  summary["config_hash"] = config_hash;
  summary["summary_k"] = summary_k;
  auto methods = nlohmann::ordered_json::array();
  for (const auto& [method, by_level] : sums) {
    nlohmann::ordered_json m;
    m["method"] = method;
    auto levels = nlohmann::ordered_json::array();
    double best_recall = -1.0;
    double best_recall_level = 0.0;
    double best_ndcg = -1.0;
    double best_ndcg_level = 0.0;
    for (const auto& [level, acc] : by_level) {
      const double c = static_cast<double>(counts[method][level]);
      const double mean_r = acc.first / c;
      const double mean_n = acc.second / c;
      levels.push_back({{"level", level},
                        {"recall_mean", mean_r},
                        {"ndcg_mean", mean_n},
                        {"cells", counts[method][level]}});
      if (mean_r > best_recall) {
        best_recall = mean_r;
        best_recall_level = level;
      }
      if (mean_n > best_ndcg) {
        best_ndcg = mean_n;
        best_ndcg_level = level;
      }
    }
    m["levels"] = levels;
    m["best_recall_level"] = best_recall_level;
    m["best_ndcg_level"] = best_ndcg_level;
    methods.push_back(m);
  }
  summary["methods"] = methods;
  return summary;
}

}  // namespace deconf::evaluation
