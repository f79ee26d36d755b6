#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "deconf/datagen.hpp"
#include "deconf/exposure_vae.hpp"
#include "deconf/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace deconf;
using exposure::ExposureVae;
using exposure::VaeConfig;
using numkit::ByteMatrix;
using numkit::Matrix;
using numkit::Rng;
using numkit::Vector;

namespace {

ExposureVae tiny_vae(std::uint64_t seed, std::size_t items = 8,
                     std::size_t latent = 3) {
  VaeConfig cfg;
  cfg.items = items;
  cfg.latent_dim = latent;
  Rng rng(seed);
  return ExposureVae::make(cfg, rng);
}

void zero_encoder(ExposureVae& vae) {
  for (auto& layer : vae.net.enc_trunk.layers) {
    std::fill(layer.W.data.begin(), layer.W.data.end(), 0.0);
    std::fill(layer.b.begin(), layer.b.end(), 0.0);
  }
  std::fill(vae.net.enc_mu.W.data.begin(), vae.net.enc_mu.W.data.end(), 0.0);
  std::fill(vae.net.enc_mu.b.begin(), vae.net.enc_mu.b.end(), 0.0);
  std::fill(vae.net.enc_logvar.W.data.begin(), vae.net.enc_logvar.W.data.end(),
            0.0);
  std::fill(vae.net.enc_logvar.b.begin(), vae.net.enc_logvar.b.end(), 0.0);
}

void zero_decoder(ExposureVae& vae) {
  for (auto& layer : vae.net.dec.layers) {
    std::fill(layer.W.data.begin(), layer.W.data.end(), 0.0);
    std::fill(layer.b.begin(), layer.b.end(), 0.0);
  }
}

}  // namespace

TEST_CASE("beta schedule anneals linearly and saturates") {
  exposure::BetaSchedule beta{0.2, 20};
  CHECK(beta.at(0) == 0.0);
  CHECK(beta.at(10) == doctest::Approx(0.1));
  CHECK(beta.at(20) == doctest::Approx(0.2));
  CHECK(beta.at(500) == doctest::Approx(0.2));
  for (std::size_t e = 1; e < 50; ++e) CHECK(beta.at(e) >= beta.at(e - 1));
}

TEST_CASE("elbo: standard-normal posterior has zero KL") {
  ExposureVae vae = tiny_vae(1);
  zero_encoder(vae);  // mu = 0, logvar = 0
  const Vector a{1, 0, 0, 1, 0, 0, 0, 1};
  const Vector eps(3, 0.5);
  const auto r = exposure::elbo_with_noise(vae, a, eps, 1.0, nullptr);
  CHECK(r.kl == 0.0);
}

TEST_CASE("elbo: zero logits give I ln 2 reconstruction loss") {
  ExposureVae vae = tiny_vae(2);
  zero_decoder(vae);
  const Vector a{1, 0, 1, 0, 1, 0, 1, 0};
  const Vector eps(3, 0.0);
  const auto r = exposure::elbo_with_noise(vae, a, eps, 0.0, nullptr);
  CHECK(r.recon_nll == doctest::Approx(8.0 * std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("elbo rejects non-binary exposure vectors") {
  ExposureVae vae = tiny_vae(3);
  Vector a(8, 0.0);
  a[2] = 0.5;
  const Vector eps(3, 0.0);
  CHECK_THROWS_AS(exposure::elbo_with_noise(vae, a, eps, 0.2, nullptr),
                  deconf::ValidationError);
}

TEST_CASE("elbo gradients match finite differences with frozen noise") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    ExposureVae vae = tiny_vae(seed);
    Rng rng(seed + 100);
    Vector a(8, 0.0);
    for (auto& v : a) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    const Vector eps = numkit::sample_standard_normal(rng, 3);

    exposure::VaeNet::Grads grads = vae.net.zero_grads();
    exposure::elbo_with_noise(vae, a, eps, 0.2, &grads);

    auto params = vae.param_refs();
    auto grad_refs = vae.grad_refs(grads);
    for (std::size_t t = 0; t < params.size(); ++t) {
      Vector theta(params[t].data, params[t].data + params[t].size());
      const Vector analytic(grad_refs[t].data,
                            grad_refs[t].data + grad_refs[t].size());
      const auto loss = [&](const Vector& probe) {
        std::copy(probe.begin(), probe.end(), params[t].data);
        return exposure::elbo_with_noise(vae, a, eps, 0.2, nullptr).loss;
      };
      const Vector numeric = numkit::finite_diff_grad(loss, theta);
      std::copy(theta.begin(), theta.end(), params[t].data);
      CHECK(numkit::max_rel_error(analytic, numeric, 1e-6) < 1e-4);
    }
  }
}

TEST_CASE("factorization contract: joint likelihood is the per-item product") {
  ExposureVae vae = tiny_vae(5, 10, 4);
  Rng rng(6);
  const Vector z = numkit::sample_standard_normal(rng, 4);
  const Vector probs = vae.decode_probs(z);
  Vector a(10, 0.0);
  for (auto& v : a) v = rng.uniform() < 0.5 ? 1.0 : 0.0;

  const Vector item_ll = exposure::bernoulli_item_loglik(probs, a);
  const double joint_sum = std::accumulate(item_ll.begin(), item_ll.end(), 0.0);

  double joint_product = 1.0;
  for (std::size_t i = 0; i < 10; ++i) {
    joint_product *= a[i] == 1.0 ? probs[i] : 1.0 - probs[i];
  }
  CHECK(std::abs(std::log(joint_product) - joint_sum) < 1e-12);
}

TEST_CASE("overlap: emitted probabilities are clamped away from 0 and 1") {
  ExposureVae vae = tiny_vae(7);
  zero_decoder(vae);
  for (std::size_t i = 0; i < 8; ++i) {
    vae.net.dec.layers.back().b[i] = (i % 2 == 0) ? 1000.0 : -1000.0;
  }
  const Vector probs = vae.decode_probs({0.1, -0.2, 0.3});
  for (const double p : probs) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
    CHECK(p >= exposure::kProbClamp);
    CHECK(p <= 1.0 - exposure::kProbClamp);
  }
}

TEST_CASE("KL term is nonnegative for random posteriors") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector mu = numkit::sample_standard_normal(rng, 6);
    Vector logvar = numkit::sample_standard_normal(rng, 6);
    for (auto& v : logvar) v *= 2.0;
    CHECK(exposure::gaussian_kl(mu, logvar) >= 0.0);
  }
}

namespace {

struct TrainFixture {
  datagen::CausalDataset ds;
  std::vector<std::size_t> train_users;
  std::vector<std::size_t> val_users;
  std::vector<std::vector<std::size_t>> val_holdout;

  explicit TrainFixture(std::size_t users = 500, std::size_t items = 200,
                        double gamma_theta = 0.8, std::uint64_t seed = 13) {
    datagen::SimConfig cfg;
    cfg.users = users;
    cfg.items = items;
    cfg.latent_dim = 8;
    cfg.feature_dim = 4;
    cfg.gamma_theta = gamma_theta;
    cfg.seed = seed;
    ds = datagen::simulate_dataset(cfg);

    Rng rng(seed + 1);
    for (std::size_t u = 0; u < users; ++u) {
      if (u % 5 == 0) {
        std::vector<std::size_t> observed;
        for (std::size_t i = 0; i < items; ++i) {
          if (ds.exposures.at(u, i)) observed.push_back(i);
        }
        if (observed.size() < 2) {
          train_users.push_back(u);
          continue;
        }
        Rng user_rng = rng.split(u);
        user_rng.shuffle(observed);
        const std::size_t hold = std::max<std::size_t>(
            1, static_cast<std::size_t>(
                   std::llround(0.2 * static_cast<double>(observed.size()))));
        val_users.push_back(u);
        val_holdout.emplace_back(
            observed.begin(),
            observed.begin() + std::min(hold, observed.size() - 1));
      } else {
        train_users.push_back(u);
      }
    }
  }
};

}  // namespace

TEST_CASE("train_exposure improves the held-out predictive check") {
  TrainFixture fx;
  VaeConfig cfg;
  cfg.items = fx.ds.items();
  cfg.latent_dim = 8;
  Rng init(21);
  ExposureVae vae = ExposureVae::make(cfg, init);

  exposure::TrainOpts opts;
  opts.epochs = 40;
  opts.batch_size = 64;
  opts.lr = 3e-3;
  opts.patience = 10;
  opts.seed = 77;
  const auto result = exposure::train_exposure(
      vae, fx.ds.exposures, fx.train_users, fx.val_users, fx.val_holdout, opts);

  REQUIRE(!result.log.empty());
  CHECK(result.log[0].epoch == 0);
  CHECK(result.best_val_score > result.log[0].val_score);
  // The returned weights are the best checkpoint.
  CHECK(exposure::predictive_check(vae, fx.ds.exposures, fx.val_users,
                                   fx.val_holdout) ==
        doctest::Approx(result.best_val_score).epsilon(1e-12));
}

TEST_CASE("train_exposure is deterministic under equal seeds") {
  TrainFixture fx(200, 80, 0.7, 4);
  VaeConfig cfg;
  cfg.items = fx.ds.items();
  cfg.latent_dim = 6;

  exposure::TrainOpts opts;
  opts.epochs = 8;
  opts.batch_size = 32;
  opts.seed = 5;

  Rng init_a(9);
  ExposureVae a = ExposureVae::make(cfg, init_a);
  exposure::train_exposure(a, fx.ds.exposures, fx.train_users, fx.val_users,
                           fx.val_holdout, opts);
  Rng init_b(9);
  ExposureVae b = ExposureVae::make(cfg, init_b);
  exposure::train_exposure(b, fx.ds.exposures, fx.train_users, fx.val_users,
                           fx.val_holdout, opts);

  auto pa = a.param_refs();
  auto pb = b.param_refs();
  for (std::size_t t = 0; t < pa.size(); ++t) {
    for (std::size_t i = 0; i < pa[t].size(); ++i) {
      CHECK(pa[t].data[i] == pb[t].data[i]);
    }
  }
}

TEST_CASE("training on all-zero exposures drives probabilities to zero") {
  const std::size_t users = 60;
  const std::size_t items = 20;
  ByteMatrix zeros(users, items);
  std::vector<std::size_t> train_users(users);
  std::iota(train_users.begin(), train_users.end(), 0);

  VaeConfig cfg;
  cfg.items = items;
  cfg.latent_dim = 4;
  Rng init(31);
  ExposureVae vae = ExposureVae::make(cfg, init);

  exposure::TrainOpts opts;
  opts.epochs = 60;
  opts.batch_size = 8;
  opts.lr = 5e-3;
  opts.seed = 1;
  exposure::train_exposure(vae, zeros, train_users, {}, {}, opts);

  const Vector mu = vae.net.posterior_mean(Vector(items, 0.0));
  const Vector probs = vae.decode_probs(mu);
  for (const double p : probs) CHECK(p < 0.05);
}

TEST_CASE("predictive_check bounds: perfect and uninformative decoders") {
  TrainFixture fx(50, 30, 0.5, 2);
  REQUIRE(!fx.val_users.empty());

  VaeConfig cfg;
  cfg.items = fx.ds.items();
  cfg.latent_dim = 4;
  Rng init(3);
  ExposureVae vae = ExposureVae::make(cfg, init);

  SUBCASE("decoder that saturates toward the truth approaches 0 from below") {
    zero_decoder(vae);
    for (auto& b : vae.net.dec.layers.back().b) b = 40.0;
    const double ll = exposure::predictive_check(vae, fx.ds.exposures,
                                                 fx.val_users, fx.val_holdout);
    CHECK(ll < 0.0);
    CHECK(ll > -1e-5);
  }

  SUBCASE("zero-logit decoder scores -ln 2 per entry") {
    zero_decoder(vae);
    const double ll = exposure::predictive_check(vae, fx.ds.exposures,
                                                 fx.val_users, fx.val_holdout);
    CHECK(ll == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
  }

  SUBCASE("empty mask is a validation error") {
    std::vector<std::vector<std::size_t>> empty_masks(fx.val_users.size());
    CHECK_THROWS_AS(exposure::predictive_check(vae, fx.ds.exposures,
                                               fx.val_users, empty_masks),
                    deconf::ValidationError);
  }
}

TEST_CASE("predictive_check beats a permuted-rows control") {
  TrainFixture fx(400, 120, 0.9, 6);
  VaeConfig cfg;
  cfg.items = fx.ds.items();
  cfg.latent_dim = 8;
  Rng init(12);
  ExposureVae vae = ExposureVae::make(cfg, init);

  exposure::TrainOpts opts;
  opts.epochs = 30;
  opts.batch_size = 64;
  opts.lr = 3e-3;
  opts.seed = 8;
  exposure::train_exposure(vae, fx.ds.exposures, fx.train_users, fx.val_users,
                           fx.val_holdout, opts);

  const double matched = exposure::predictive_check(
      vae, fx.ds.exposures, fx.val_users, fx.val_holdout);

  // Rotate the validation users' rows: encode from someone else's history,
  // score your own holdout.
  ByteMatrix permuted = fx.ds.exposures;
  const std::size_t n_val = fx.val_users.size();
  for (std::size_t v = 0; v < n_val; ++v) {
    const std::size_t src = fx.val_users[(v + 1) % n_val];
    for (std::size_t i = 0; i < fx.ds.items(); ++i) {
      permuted.at(fx.val_users[v], i) = fx.ds.exposures.at(src, i);
    }
  }
  const double control = exposure::predictive_check(vae, permuted, fx.val_users,
                                                    fx.val_holdout);
  CHECK(matched > control);
}

TEST_CASE("extract_confounders is deterministic and respects duplicates") {
  TrainFixture fx(80, 40, 0.6, 10);
  VaeConfig cfg;
  cfg.items = fx.ds.items();
  cfg.latent_dim = 5;
  Rng init(2);
  ExposureVae vae = ExposureVae::make(cfg, init);

  const Matrix z1 = exposure::extract_confounders(vae, fx.ds.exposures);
  const Matrix z2 = exposure::extract_confounders(vae, fx.ds.exposures);
  CHECK(z1.data == z2.data);
  CHECK(z1.rows == fx.ds.users());
  CHECK(z1.cols == 5);

  ByteMatrix duplicated = fx.ds.exposures;
  for (std::size_t i = 0; i < fx.ds.items(); ++i) {
    duplicated.at(1, i) = duplicated.at(0, i);
  }
  const Matrix zd = exposure::extract_confounders(vae, duplicated);
  for (std::size_t k = 0; k < 5; ++k) CHECK(zd.at(0, k) == zd.at(1, k));
}

TEST_CASE("substitute confounders track the true confounders under strong "
          "confounding") {
  TrainFixture fx(400, 120, 0.9, 15);
  VaeConfig cfg;
  cfg.items = fx.ds.items();
  cfg.latent_dim = 8;
  Rng init(44);
  ExposureVae vae = ExposureVae::make(cfg, init);

  exposure::TrainOpts opts;
  opts.epochs = 30;
  opts.batch_size = 64;
  opts.lr = 3e-3;
  opts.seed = 16;
  exposure::train_exposure(vae, fx.ds.exposures, fx.train_users, fx.val_users,
                           fx.val_holdout, opts);
  const Matrix z = exposure::extract_confounders(vae, fx.ds.exposures);

  // Random-projection baseline over the same exposures.
  Rng proj_rng(91);
  Matrix proj(fx.ds.items(), 8);
  for (auto& v : proj.data) v = proj_rng.normal();
  Matrix z_rand(fx.ds.users(), 8);
  for (std::size_t u = 0; u < fx.ds.users(); ++u) {
    for (std::size_t k = 0; k < 8; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < fx.ds.items(); ++i) {
        s += static_cast<double>(fx.ds.exposures.at(u, i)) * proj.at(i, k);
      }
      z_rand.at(u, k) = s;
    }
  }

  const double cca_vae =
      oracles::mean_canonical_correlation(z, fx.ds.confounders_true);
  const double cca_rand =
      oracles::mean_canonical_correlation(z_rand, fx.ds.confounders_true);
  MESSAGE("cca vae ", cca_vae, " vs random projection ", cca_rand);
  CHECK(cca_vae > cca_rand);
}

TEST_CASE("exposure checkpoints round trip bit-exactly") {
  TrainFixture fx(60, 25, 0.5, 3);
  VaeConfig cfg;
  cfg.items = fx.ds.items();
  cfg.latent_dim = 4;
  Rng init(5);
  ExposureVae vae = ExposureVae::make(cfg, init);

  const auto dir = std::filesystem::temp_directory_path() / "deconf_vae_ckpt";
  std::filesystem::remove_all(dir);
  exposure::TrainResult result;
  result.best_epoch = 7;
  exposure::save_exposure_checkpoint(dir, vae, cfg, result, "aaaa");

  ExposureVae loaded = exposure::load_exposure_checkpoint(dir);
  auto pa = vae.param_refs();
  auto pb = loaded.param_refs();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t t = 0; t < pa.size(); ++t) {
    for (std::size_t i = 0; i < pa[t].size(); ++i) {
      CHECK(pa[t].data[i] == pb[t].data[i]);
    }
  }
  std::filesystem::remove_all(dir);
}
