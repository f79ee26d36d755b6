#include "deconf/cli.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "deconf/causal.hpp"
#include "deconf/csv.hpp"
#include "deconf/datagen.hpp"
#include "deconf/evaluate.hpp"
#include "deconf/gradcheck.hpp"
#include "deconf/metrics.hpp"
#include "deconf/pca.hpp"
#include "deconf/sweep.hpp"

namespace deconf::cli {

namespace {

using numkit::Vector;

datagen::SimConfig sim_config_from(const RunConfig& cfg) {
  datagen::SimConfig sim;
  sim.users = static_cast<std::size_t>(cfg.get_int("sim.users", 2000));
  sim.items = static_cast<std::size_t>(cfg.get_int("sim.items", 500));
  sim.latent_dim = static_cast<std::size_t>(cfg.get_int("sim.latent_dim", 16));
  sim.feature_dim = static_cast<std::size_t>(cfg.get_int("sim.feature_dim", 8));
  sim.gamma_theta = cfg.get_double("sim.gamma_theta", 0.5);
  sim.gamma_b = cfg.get_double("sim.gamma_b", 2.0);
  sim.exposure_rate = cfg.get_double("sim.exposure_rate", 0.1);
  sim.feature_noise = cfg.get_double("sim.feature_noise", 0.1);
  sim.seed = cfg.get_u64("seed", 1);
  return sim;
}

exposure::VaeConfig vae_config_from(const RunConfig& cfg, std::size_t items,
                                    std::size_t default_latent) {
  exposure::VaeConfig vcfg;
  vcfg.items = items;
  vcfg.latent_dim = static_cast<std::size_t>(
      cfg.get_int("vae.latent_dim", static_cast<std::int64_t>(default_latent)));
  vcfg.hidden_width = static_cast<std::size_t>(cfg.get_int("vae.hidden_width", 0));
  vcfg.hidden_depth = static_cast<std::size_t>(cfg.get_int("vae.hidden_depth", 1));
  vcfg.beta_max = cfg.get_double("vae.beta_max", 0.2);
  vcfg.anneal_epochs =
      static_cast<std::size_t>(cfg.get_int("vae.anneal_epochs", 20));
  return vcfg;
}

exposure::TrainOpts vae_train_opts_from(const RunConfig& cfg) {
  exposure::TrainOpts opts;
  opts.epochs = static_cast<std::size_t>(cfg.get_int("vae.epochs", 100));
  opts.batch_size = static_cast<std::size_t>(cfg.get_int("vae.batch_size", 256));
  opts.lr = cfg.get_double("vae.lr", 1e-3);
  opts.patience = static_cast<std::size_t>(cfg.get_int("vae.patience", 10));
  opts.seed = numkit::Rng(cfg.get_u64("seed", 1)).split("vae_train").seed();
  return opts;
}

outcome::TrainOpts outcome_train_opts_from(const RunConfig& cfg) {
  outcome::TrainOpts opts;
  opts.epochs = static_cast<std::size_t>(cfg.get_int("outcome.epochs", 100));
  opts.batch_size =
      static_cast<std::size_t>(cfg.get_int("outcome.batch_size", 256));
  opts.lr = cfg.get_double("outcome.lr", 1e-3);
  opts.patience = static_cast<std::size_t>(cfg.get_int("outcome.patience", 10));
  opts.select_k = static_cast<std::size_t>(cfg.get_int("outcome.select_k", 20));
  opts.seed = numkit::Rng(cfg.get_u64("seed", 1)).split("outcome_train").seed();
  return opts;
}

evaluation::EvalConfig eval_config_from(const RunConfig& cfg) {
  evaluation::EvalConfig ecfg;
  ecfg.k_list = cfg.get_size_list("eval.k_list",
                                  {5, 10, 15, 20, 25, 30, 35, 40, 45, 50});
  ecfg.relevance_threshold =
      static_cast<int>(cfg.get_int("eval.relevance_threshold", 4));
  return ecfg;
}

evaluation::SplitSpec split_from(const RunConfig& cfg,
                                 const numkit::ByteMatrix& exposures) {
  const double train = cfg.get_double("split.train", 0.7);
  const double val = cfg.get_double("split.val", 0.15);
  const double test = cfg.get_double("split.test", 0.15);
  std::uint64_t seed = cfg.get_u64("split.seed", 0);
  if (seed == 0) seed = cfg.get_u64("seed", 1);
  return evaluation::split_users(exposures, {train, val, test}, seed,
                                 cfg.get_double("split.holdout", 0.2));
}

evaluation::PipelineOpts pipeline_opts_from(const RunConfig& cfg) {
  evaluation::PipelineOpts opts;
  opts.model_latent = static_cast<std::size_t>(cfg.get_int("vae.latent_dim", 0));
  opts.hidden_depth = static_cast<std::size_t>(cfg.get_int("vae.hidden_depth", 1));
  opts.beta_max = cfg.get_double("vae.beta_max", 0.2);
  opts.anneal_epochs =
      static_cast<std::size_t>(cfg.get_int("vae.anneal_epochs", 20));
  opts.vae_epochs = static_cast<std::size_t>(cfg.get_int("vae.epochs", 100));
  opts.outcome_epochs =
      static_cast<std::size_t>(cfg.get_int("outcome.epochs", 100));
  opts.batch_size = static_cast<std::size_t>(cfg.get_int("vae.batch_size", 256));
  opts.lr = cfg.get_double("vae.lr", 1e-3);
  opts.patience = static_cast<std::size_t>(cfg.get_int("vae.patience", 10));
  opts.split_ratios = {cfg.get_double("split.train", 0.7),
                       cfg.get_double("split.val", 0.15),
                       cfg.get_double("split.test", 0.15)};
  opts.holdout_frac = cfg.get_double("split.holdout", 0.2);
  opts.eval = eval_config_from(cfg);
  return opts;
}

// No output directory may silently mix artifacts from different configs.
void ensure_hash_compatible(const std::filesystem::path& dir,
                            const std::string& hash) {
  for (const char* name : {"manifest.json", "metrics.json", "summary.json"}) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(io::read_text(path));
    } catch (const nlohmann::json::exception&) {
      continue;
    }
    const std::string existing = j.value("config_hash", "");
    if (!existing.empty() && existing != hash) {
      throw ConfigError("output dir " + dir.string() + " holds artifacts for "
                        "config_hash " + existing + ", refusing to overwrite "
                        "with " + hash);
    }
  }
}

nlohmann::ordered_json config_echo_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : cfg.values()) j[k] = v;
  return j;
}

void write_confounders_csv(const std::filesystem::path& path,
                           const numkit::Matrix& z, const std::string& hash) {
  std::vector<std::string> header;
  for (std::size_t k = 0; k < z.cols; ++k) header.push_back("z" + std::to_string(k));
  io::write_dense_csv(path, z, header, "config_hash=" + hash);
}

}  // namespace

void cmd_simulate(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  const datagen::SimConfig sim = sim_config_from(cfg);
  const datagen::CausalDataset ds = datagen::simulate_dataset(sim);
  const auto audit = datagen::audit_dataset(ds);
  if (!audit.ok) {
    throw ValidationError("generated dataset failed its audit: " +
                          audit.violations.front());
  }
  std::filesystem::create_directories(out_dir);
  ensure_hash_compatible(out_dir, cfg.hash());
  datagen::write_bundle(out_dir, ds, cfg.hash());
  std::cout << "wrote bundle to " << out_dir.string() << " (exposure rate "
            << audit.exposure_rate << ", " << ds.repairs.size() << " repairs)\n";
}

void cmd_semisynth(const RunConfig& cfg, const std::filesystem::path& raw_csv,
                   const std::filesystem::path& out_dir) {
  const datagen::RawRatings raw = datagen::load_raw_ratings_csv(raw_csv);
  datagen::SimConfig sim = sim_config_from(cfg);
  sim.users = raw.users;
  sim.items = raw.items;

  datagen::GeneratorFitOpts fit;
  fit.latent_dim = sim.latent_dim;
  fit.hidden_width = static_cast<std::size_t>(cfg.get_int("gen.hidden_width", 0));
  fit.hidden_depth = static_cast<std::size_t>(cfg.get_int("gen.hidden_depth", 1));
  fit.beta_max = cfg.get_double("gen.beta_max", 0.2);
  fit.anneal_epochs =
      static_cast<std::size_t>(cfg.get_int("gen.anneal_epochs", 20));
  fit.epochs = static_cast<std::size_t>(cfg.get_int("gen.epochs", 100));
  fit.batch_size = static_cast<std::size_t>(cfg.get_int("gen.batch_size", 256));
  fit.lr = cfg.get_double("gen.lr", 1e-3);
  fit.patience = static_cast<std::size_t>(cfg.get_int("gen.patience", 10));
  fit.val_fraction = cfg.get_double("gen.val_fraction", 0.15);
  fit.seed = numkit::Rng(sim.seed).split("generator_fit").seed();

  const datagen::CausalDataset ds =
      datagen::simulate_semisynthetic(raw, sim, fit);
  const auto audit = datagen::audit_dataset(ds);
  if (!audit.ok) {
    throw ValidationError("semi-synthetic dataset failed its audit: " +
                          audit.violations.front());
  }
  std::filesystem::create_directories(out_dir);
  ensure_hash_compatible(out_dir, cfg.hash());
  datagen::write_bundle(out_dir, ds, cfg.hash());
  std::cout << "wrote semi-synthetic bundle to " << out_dir.string() << "\n";
}

void cmd_fit_exposure(const RunConfig& cfg,
                      const std::filesystem::path& bundle_dir,
                      const std::filesystem::path& out_dir) {
  const datagen::CausalDataset ds = datagen::load_bundle(bundle_dir);
  const evaluation::SplitSpec split = split_from(cfg, ds.exposures);

  exposure::VaeConfig vcfg =
      vae_config_from(cfg, ds.items(), ds.config.latent_dim);
  numkit::Rng init = numkit::Rng(cfg.get_u64("seed", 1)).split("vae_init");
  exposure::ExposureVae vae = exposure::ExposureVae::make(vcfg, init);

  const exposure::TrainResult result =
      exposure::train_exposure(vae, ds.exposures, split.train_users,
                               split.val_users, split.val_holdout,
                               vae_train_opts_from(cfg));

  std::filesystem::create_directories(out_dir);
  ensure_hash_compatible(out_dir, cfg.hash());
  exposure::save_exposure_checkpoint(out_dir, vae, vcfg, result, cfg.hash());
  const numkit::Matrix z = exposure::extract_confounders(vae, ds.exposures);
  write_confounders_csv(out_dir / "confounders.csv", z, cfg.hash());
  std::cout << "exposure model: best epoch " << result.best_epoch
            << ", held-out log-likelihood " << result.best_val_score << "\n";
}

void cmd_fit_outcome(const RunConfig& cfg,
                     const std::filesystem::path& bundle_dir,
                     const std::filesystem::path& confounders_csv,
                     const std::filesystem::path& out_dir) {
  const datagen::CausalDataset ds = datagen::load_bundle(bundle_dir);
  const evaluation::SplitSpec split = split_from(cfg, ds.exposures);

  outcome::OutcomeConfig ocfg;
  ocfg.items = ds.items();
  ocfg.use_features = cfg.get_bool("outcome.use_features", true);
  ocfg.use_confounder = cfg.get_bool("outcome.use_confounder", true);
  ocfg.feature_dim = ds.features.cols;
  ocfg.hidden_depth =
      static_cast<std::size_t>(cfg.get_int("outcome.hidden_depth", 1));

  numkit::Matrix confounders;
  if (ocfg.use_confounder) {
    confounders = io::read_dense_csv(confounders_csv, /*expect_header=*/true);
    if (confounders.rows != ds.users()) {
      throw ValidationError("confounders file does not cover every user");
    }
    ocfg.latent_dim = confounders.cols;
  } else {
    ocfg.latent_dim = static_cast<std::size_t>(
        cfg.get_int("vae.latent_dim", static_cast<std::int64_t>(ds.config.latent_dim)));
  }

  numkit::Rng init = numkit::Rng(cfg.get_u64("seed", 1)).split("outcome_init");
  outcome::OutcomeNet net = outcome::OutcomeNet::make(ocfg, init);

  outcome::OutcomeTrainData data;
  data.ratings_obs = &ds.ratings_obs;
  data.exposures = &ds.exposures;
  data.features = ocfg.use_features ? &ds.features : nullptr;
  data.confounders = ocfg.use_confounder ? &confounders : nullptr;

  const outcome::TrainResult result =
      outcome::train_outcome(net, data, split.train_users, split.val_users,
                             split.val_holdout, outcome_train_opts_from(cfg));

  std::filesystem::create_directories(out_dir);
  ensure_hash_compatible(out_dir, cfg.hash());
  outcome::save_outcome_checkpoint(out_dir, net, result, cfg.hash());
  std::cout << "outcome model: best epoch " << result.best_epoch << ", val N@"
            << cfg.get_int("outcome.select_k", 20) << " "
            << result.best_val_ndcg << "\n";
}

void cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& bundle_dir,
                  const std::filesystem::path& exposure_ckpt,
                  const std::filesystem::path& outcome_ckpt,
                  const std::filesystem::path& out_dir) {
  const datagen::CausalDataset ds = datagen::load_bundle(bundle_dir);
  const evaluation::SplitSpec split = split_from(cfg, ds.exposures);
  const outcome::OutcomeNet net = outcome::load_outcome_checkpoint(outcome_ckpt);

  exposure::ExposureVae vae;
  const exposure::ExposureVae* vae_ptr = nullptr;
  if (net.cfg.use_confounder) {
    vae = exposure::load_exposure_checkpoint(exposure_ckpt);
    vae_ptr = &vae;
  }

  evaluation::MetricsRecord metrics =
      evaluation::evaluate_unbiased(vae_ptr, net, ds, split, eval_config_from(cfg));
  for (const auto& [k, v] : cfg.values()) metrics.config_echo[k] = v;

  std::filesystem::create_directories(out_dir);
  ensure_hash_compatible(out_dir, cfg.hash());
  nlohmann::ordered_json j = evaluation::metrics_to_json(metrics);
  j["config_hash"] = cfg.hash();
  io::write_text_atomic(out_dir / "metrics.json", j.dump(2) + "\n");

  // Top-K prediction export for the test users.
  const std::size_t rec_k =
      static_cast<std::size_t>(cfg.get_int("outcome.select_k", 20));
  io::AtomicFile rec_file(out_dir / "recommendations.csv");
  auto& out = rec_file.stream();
  out << "# config_hash=" << cfg.hash() << "\n";
  out << "user_id,item_id,score,rank\n";
  for (const std::size_t u : split.test_users) {
    const Vector a_obs = numkit::row_as_vector(ds.exposures, u);
    Vector z;
    if (net.cfg.use_confounder) z = vae.net.posterior_mean(a_obs);
    Vector x;
    if (net.cfg.use_features) x = numkit::row_as_vector(ds.features, u);
    const Vector scores = outcome::predict_ratings(net, x, z, a_obs);
    const outcome::TopK top = outcome::recommend_topk(scores, a_obs, rec_k);
    for (std::size_t r = 0; r < top.items.size(); ++r) {
      out << u << "," << top.items[r] << ","
          << io::format_double(scores[top.items[r]]) << "," << (r + 1) << "\n";
    }
  }
  rec_file.commit();

  std::cout << "R@20 " << metrics.recall_at(20) << ", N@20 "
            << metrics.ndcg_at(20) << " over " << metrics.evaluated_users
            << " test users (" << metrics.skipped_users << " skipped)\n";
}

void cmd_sweep(const RunConfig& cfg, const std::filesystem::path& out_dir,
               std::size_t jobs, bool verbose) {
  const datagen::SimConfig base = sim_config_from(cfg);
  const evaluation::PipelineOpts opts = pipeline_opts_from(cfg);
  const std::vector<std::uint64_t> seeds =
      cfg.get_u64_list("sweep.seeds", {1, 2, 3, 4, 5});
  const std::string kind = cfg.get_str("sweep.kind", "confounding");

  std::vector<evaluation::CellResult> cells;
  if (kind == "confounding") {
    const std::vector<double> levels =
        cfg.get_double_list("sweep.levels", {0.1, 0.3, 0.5, 0.7, 0.9});
    std::vector<std::string> methods;
    std::stringstream ss(cfg.get_str("sweep.methods", "deep-deconf,concat-vae"));
    std::string m;
    while (std::getline(ss, m, ',')) {
      if (!m.empty()) methods.push_back(m);
    }
    cells = evaluation::confounding_sweep(base, levels, methods, seeds, opts,
                                          jobs, verbose);
  } else if (kind == "noise") {
    const std::vector<double> levels =
        cfg.get_double_list("sweep.noise_levels", {0.1, 0.5, 0.9, -1});
    cells = evaluation::noise_sensitivity_study(base, levels, seeds, opts, jobs,
                                                verbose);
  } else {
    throw ConfigError("field 'sweep.kind': expected confounding|noise, got '" +
                      kind + "'");
  }

  std::filesystem::create_directories(out_dir);
  ensure_hash_compatible(out_dir, cfg.hash());
  evaluation::write_sweep_csv(out_dir / "sweep.csv", cells, cfg.hash());
  nlohmann::ordered_json summary = evaluation::sweep_summary(cells, cfg.hash());
  summary["config"] = config_echo_json(cfg);
  io::write_text_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
  std::cout << "wrote " << cells.size() << " sweep cells to "
            << out_dir.string() << "\n";
}

void cmd_jacobian(const RunConfig& cfg,
                  const std::filesystem::path& outcome_ckpt,
                  const std::filesystem::path& bundle_dir,
                  const std::filesystem::path& confounders_csv,
                  const std::filesystem::path& out_dir) {
  const outcome::OutcomeNet net = outcome::load_outcome_checkpoint(outcome_ckpt);
  const std::string mode = cfg.get_str("jacobian.mode", "global");

  causal::JacobianReport report;
  if (mode == "global") {
    report = causal::network_jacobian_global(net);
  } else if (mode == "local") {
    if (bundle_dir.empty()) {
      throw ConfigError("jacobian.mode=local needs --bundle");
    }
    const datagen::CausalDataset ds = datagen::load_bundle(bundle_dir);
    const std::size_t user =
        static_cast<std::size_t>(cfg.get_int("jacobian.user", 0));
    if (user >= ds.users()) {
      throw ValidationError("jacobian.user out of range");
    }
    const Vector a = numkit::row_as_vector(ds.exposures, user);
    Vector z;
    if (net.cfg.use_confounder) {
      if (confounders_csv.empty()) {
        throw ConfigError("jacobian.mode=local needs --confounders");
      }
      const numkit::Matrix zs =
          io::read_dense_csv(confounders_csv, /*expect_header=*/true);
      if (user >= zs.rows) {
        throw ValidationError("jacobian.user missing from confounders file");
      }
      z = numkit::row_as_vector(zs, user);
    }
    Vector x;
    if (net.cfg.use_features) x = numkit::row_as_vector(ds.features, user);
    report = causal::network_jacobian(net, a, z, x, causal::ExpansionMode::local);
  } else {
    throw ConfigError("field 'jacobian.mode': expected global|local");
  }

  std::filesystem::create_directories(out_dir);
  causal::write_jacobian_report(
      out_dir, report, cfg.hash(),
      static_cast<std::size_t>(cfg.get_int("jacobian.top_pairs", 10)));
  std::cout << "wrote jacobian report (" << mode << ") to " << out_dir.string()
            << "\n";
}

// ---------------------------------------------------------------------------
// selfcheck: quick independent oracles for gradients, metrics, and OLS
// ---------------------------------------------------------------------------

namespace {

bool check_gradients(std::ostream& log) {
  const std::size_t items = 8;
  const std::size_t latent = 3;
  const std::size_t features = 2;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    numkit::Rng rng(seed);
    exposure::VaeConfig vcfg;
    vcfg.items = items;
    vcfg.latent_dim = latent;
    exposure::ExposureVae vae = exposure::ExposureVae::make(vcfg, rng);
    Vector a(items, 0.0);
    for (auto& v : a) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    const Vector eps = numkit::sample_standard_normal(rng, latent);

    auto params = vae.param_refs();
    exposure::VaeNet::Grads grads = vae.net.zero_grads();
    elbo_with_noise(vae, a, eps, 0.2, &grads);
    auto grad_refs = vae.grad_refs(grads);

    for (std::size_t t = 0; t < params.size(); ++t) {
      Vector analytic(grad_refs[t].data, grad_refs[t].data + grad_refs[t].size());
      Vector theta(params[t].data, params[t].data + params[t].size());
      const auto f = [&](const Vector& w) {
        std::copy(w.begin(), w.end(), params[t].data);
        const double loss = elbo_with_noise(vae, a, eps, 0.2, nullptr).loss;
        return loss;
      };
      const Vector numeric = numkit::finite_diff_grad(f, theta);
      std::copy(theta.begin(), theta.end(), params[t].data);
      worst = std::max(worst, numkit::max_rel_error(analytic, numeric, 1e-6));
    }

    outcome::OutcomeConfig ocfg;
    ocfg.items = items;
    ocfg.latent_dim = latent;
    ocfg.feature_dim = features;
    outcome::OutcomeNet net = outcome::OutcomeNet::make(ocfg, rng);
    const Vector x = numkit::sample_standard_normal(rng, features);
    const Vector z = numkit::sample_standard_normal(rng, latent);
    Vector a2(items, 0.0);
    a2[1] = 1.0;
    a2[4] = 1.0;
    outcome::RatingTarget target;
    target.mass.assign(items, 0.0);
    target.mass[1] = 0.75;
    target.mass[4] = 0.25;

    auto net_params = net.param_refs();
    numkit::Mlp::Grads ograds = net.net.zero_grads();
    outcome::outcome_loss(net, x, z, a2, target, &ograds);
    auto ograd_refs = net.grad_refs(ograds);
    for (std::size_t t = 0; t < net_params.size(); ++t) {
      Vector analytic(ograd_refs[t].data, ograd_refs[t].data + ograd_refs[t].size());
      Vector theta(net_params[t].data, net_params[t].data + net_params[t].size());
      const auto f = [&](const Vector& w) {
        std::copy(w.begin(), w.end(), net_params[t].data);
        return outcome::outcome_loss(net, x, z, a2, target, nullptr);
      };
      const Vector numeric = numkit::finite_diff_grad(f, theta);
      std::copy(theta.begin(), theta.end(), net_params[t].data);
      worst = std::max(worst, numkit::max_rel_error(analytic, numeric, 1e-6));
    }
  }
  log << "  gradients vs finite differences: max rel err " << worst << "\n";
  return worst < 1e-4;
}

bool check_metrics(std::ostream& log) {
  numkit::Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t items = 5 + rng.uniform_index(45);
    std::vector<std::size_t> ranked(items);
    for (std::size_t i = 0; i < items; ++i) ranked[i] = i;
    rng.shuffle(ranked);
    std::vector<std::size_t> holdout;
    for (std::size_t i = 0; i < items; ++i) {
      if (rng.uniform() < 0.3) holdout.push_back(i);
    }
    if (holdout.empty()) holdout.push_back(rng.uniform_index(items));
    const std::size_t k = 1 + rng.uniform_index(20);

    std::size_t hits = 0;
    double dcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
      const bool hit =
          std::find(holdout.begin(), holdout.end(), ranked[r]) != holdout.end();
      if (hit) {
        ++hits;
        dcg += (std::pow(2.0, 1.0) - 1.0) / std::log2(static_cast<double>(r + 2));
      }
    }
    const double recall_brute =
        static_cast<double>(hits) /
        static_cast<double>(std::min(k, holdout.size()));
    double idcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, holdout.size()); ++r) {
      idcg += 1.0 / std::log2(static_cast<double>(r + 2));
    }
    const double ndcg_brute = dcg / idcg;

    std::vector<std::size_t> holdout_sorted = holdout;
    std::sort(holdout_sorted.begin(), holdout_sorted.end());
    if (evaluation::recall_at_k(ranked, holdout_sorted, k) != recall_brute ||
        std::abs(evaluation::ndcg_at_k(ranked, holdout_sorted, k) - ndcg_brute) >
            1e-12) {
      log << "  metric mismatch on trial " << trial << "\n";
      return false;
    }
  }
  log << "  recall/ndcg match brute force on 200 random instances\n";
  return true;
}

bool check_ols(std::ostream& log) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    numkit::Rng rng(seed);
    causal::OlsStudyConfig cfg;
    cfg.n_users = 2000;
    cfg.with_features = true;
    const causal::OlsVarianceReport rep = causal::ols_variance_study(cfg, rng);
    if (std::abs(rep.w_a_hat - rep.tau_hat) > 1e-10) {
      log << "  OLS identity violated (" << rep.w_a_hat << " vs " << rep.tau_hat
          << ")\n";
      return false;
    }
    if (std::abs(rep.v_hat_closed - rep.v_hat_design) > 1e-10) {
      log << "  OLS variance forms disagree\n";
      return false;
    }
  }
  log << "  OLS identity and variance forms agree on 5 seeds\n";
  return true;
}

bool check_numkit(std::ostream& log) {
  numkit::Rng rng(11);
  const Vector probe = numkit::softmax_fw({1e3, -1e3, 0.0, 5.0});
  double sum = 0.0;
  for (double v : probe) sum += v;
  if (std::abs(sum - 1.0) > 1e-12) {
    log << "  softmax normalization failed\n";
    return false;
  }

  numkit::Matrix data(40, 4);
  for (auto& v : data.data) v = rng.normal();
  const numkit::PcaResult pca = numkit::pca_project(data, 4);
  for (std::size_t j = 1; j < pca.eigenvalues.size(); ++j) {
    if (pca.eigenvalues[j] > pca.eigenvalues[j - 1] + 1e-12) {
      log << "  PCA eigenvalues not sorted\n";
      return false;
    }
  }
  log << "  softmax and PCA sanity hold\n";
  return true;
}

}  // namespace

int cmd_selfcheck(bool verbose) {
  std::ostream& log = std::cout;
  bool ok = true;
  struct Suite {
    const char* name;
    bool (*fn)(std::ostream&);
  };
  const Suite suites[] = {{"gradient oracle", check_gradients},
                          {"ranking metrics", check_metrics},
                          {"ols identities", check_ols},
                          {"numeric kernel", check_numkit}};
  for (const auto& suite : suites) {
    const bool pass = suite.fn(log);
    log << (pass ? "[ok]   " : "[FAIL] ") << suite.name << "\n";
    ok = ok && pass;
  }
  (void)verbose;
  return ok ? 0 : 3;
}

// ---------------------------------------------------------------------------
// argv entry point
// ---------------------------------------------------------------------------

namespace {

RunConfig load_config(const std::string& config_path, std::uint64_t seed_flag,
                      double level_flag) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = RunConfig::from_file(config_path);
  cfg.apply_env_overrides();
  if (seed_flag != 0) cfg.set("seed", std::to_string(seed_flag));
  if (level_flag >= 0.0) cfg.set("sim.gamma_theta", io::format_double(level_flag));
  return cfg;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"deep deconfounded recommender toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string raw_csv;
  std::string bundle_dir;
  std::string confounders_csv;
  std::string exposure_ckpt;
  std::string outcome_ckpt;
  std::uint64_t seed_flag = 0;
  double level_flag = -1.0;
  std::size_t jobs = 1;

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--seed", seed_flag, "override config seed");
    sub->add_option("--level", level_flag, "override sim.gamma_theta");
    auto* opt = sub->add_option("--out", out_dir, "output directory");
    if (needs_out) opt->required();
  };

  auto* simulate = app.add_subcommand("simulate", "generate a simulated bundle");
  add_common(simulate, true);

  auto* semisynth =
      app.add_subcommand("semisynth", "generate a semi-synthetic bundle");
  add_common(semisynth, true);
  semisynth->add_option("--raw", raw_csv, "raw ratings csv")->required();

  auto* fit_exposure =
      app.add_subcommand("fit-exposure", "train the exposure model");
  add_common(fit_exposure, true);
  fit_exposure->add_option("--bundle", bundle_dir, "dataset bundle")->required();

  auto* fit_outcome =
      app.add_subcommand("fit-outcome", "train the outcome model");
  add_common(fit_outcome, true);
  fit_outcome->add_option("--bundle", bundle_dir, "dataset bundle")->required();
  fit_outcome->add_option("--confounders", confounders_csv,
                          "substitute confounders csv");

  auto* evaluate = app.add_subcommand("evaluate", "unbiased test evaluation");
  add_common(evaluate, true);
  evaluate->add_option("--bundle", bundle_dir, "dataset bundle")->required();
  evaluate->add_option("--exposure-model", exposure_ckpt,
                       "exposure checkpoint dir");
  evaluate->add_option("--outcome-model", outcome_ckpt,
                       "outcome checkpoint dir")->required();

  auto* sweep = app.add_subcommand("sweep", "confounding or noise sweep");
  add_common(sweep, true);
  sweep->add_option("--jobs", jobs, "worker processes");

  auto* jacobian =
      app.add_subcommand("jacobian", "export treatment-effect jacobians");
  add_common(jacobian, true);
  jacobian->add_option("--outcome-model", outcome_ckpt,
                       "outcome checkpoint dir")->required();
  jacobian->add_option("--bundle", bundle_dir, "dataset bundle (local mode)");
  jacobian->add_option("--confounders", confounders_csv,
                       "confounders csv (local mode)");

  auto* selfcheck =
      app.add_subcommand("selfcheck", "run the built-in oracle suites");
  (void)selfcheck;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(selfcheck)) return cmd_selfcheck();
    const RunConfig cfg = load_config(config_path, seed_flag, level_flag);
    if (app.got_subcommand(simulate)) {
      cmd_simulate(cfg, out_dir);
    } else if (app.got_subcommand(semisynth)) {
      cmd_semisynth(cfg, raw_csv, out_dir);
    } else if (app.got_subcommand(fit_exposure)) {
      cmd_fit_exposure(cfg, bundle_dir, out_dir);
    } else if (app.got_subcommand(fit_outcome)) {
      cmd_fit_outcome(cfg, bundle_dir, confounders_csv, out_dir);
    } else if (app.got_subcommand(evaluate)) {
      cmd_evaluate(cfg, bundle_dir, exposure_ckpt, outcome_ckpt, out_dir);
    } else if (app.got_subcommand(sweep)) {
      cmd_sweep(cfg, out_dir, jobs);
    } else if (app.got_subcommand(jacobian)) {
      cmd_jacobian(cfg, outcome_ckpt, bundle_dir, confounders_csv, out_dir);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::validation:
      case ErrorKind::config:
        return 1;
      case ErrorKind::io:
        return 2;
      case ErrorKind::numeric:
        return 3;
    }
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace deconf::cli
