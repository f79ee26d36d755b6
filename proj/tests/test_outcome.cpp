#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "deconf/datagen.hpp"
#include "deconf/gradcheck.hpp"
#include "deconf/outcome_net.hpp"
#include "support/oracles.hpp"

using namespace deconf;
using numkit::ByteMatrix;
using numkit::Matrix;
using numkit::Rng;
using numkit::Vector;
using outcome::OutcomeConfig;
using outcome::OutcomeNet;
using outcome::RatingTarget;

namespace {

OutcomeNet tiny_net(std::uint64_t seed, std::size_t items = 8,
                    std::size_t latent = 3, std::size_t features = 2,
                    std::size_t depth = 1) {
  OutcomeConfig cfg;
  cfg.items = items;
  cfg.latent_dim = latent;
  cfg.feature_dim = features;
  cfg.hidden_depth = depth;
  Rng rng(seed);
  return OutcomeNet::make(cfg, rng);
}

// Purely affine net with hand-set weight blocks in the [x | z | a] order.
OutcomeNet linear_net(const Matrix& w_x, const Matrix& w_z, const Matrix& w_a,
                      const Vector& alpha) {
  OutcomeConfig cfg;
  cfg.items = w_a.rows;
  cfg.latent_dim = w_z.cols;
  cfg.feature_dim = w_x.cols;
  cfg.hidden_depth = 0;
  Rng rng(0);
  OutcomeNet net = OutcomeNet::make(cfg, rng);
  auto& layer = net.net.layers.back();
  for (std::size_t i = 0; i < cfg.items; ++i) {
    std::size_t off = 0;
    for (std::size_t j = 0; j < w_x.cols; ++j) layer.W.at(i, off++) = w_x.at(i, j);
    for (std::size_t j = 0; j < w_z.cols; ++j) layer.W.at(i, off++) = w_z.at(i, j);
    for (std::size_t j = 0; j < w_a.cols; ++j) layer.W.at(i, off++) = w_a.at(i, j);
    layer.b[i] = alpha[i];
  }
  return net;
}

}  // namespace

TEST_CASE("rating target normalizes exposed rating mass") {
  const std::uint8_t row[] = {0, 4, 0, 1, 0, 0};
  const RatingTarget t = outcome::make_rating_target(row, 6);
  CHECK(t.mass[1] == doctest::Approx(0.8));
  CHECK(t.mass[3] == doctest::Approx(0.2));
  double sum = 0.0;
  for (double v : t.mass) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));

  const std::uint8_t zeros[] = {0, 0, 0};
  CHECK_THROWS_AS(outcome::make_rating_target(zeros, 3),
                  deconf::ValidationError);
}

TEST_CASE("outcome_loss: uniform target over uniform logits is ln I") {
  OutcomeNet net = tiny_net(1);
  // zero all weights -> logits identical
  for (auto& layer : net.net.layers) {
    std::fill(layer.W.data.begin(), layer.W.data.end(), 0.0);
    std::fill(layer.b.begin(), layer.b.end(), 0.0);
  }
  RatingTarget t;
  t.mass.assign(8, 1.0 / 8.0);
  const Vector x(2, 0.3);
  const Vector z(3, -0.1);
  const Vector a(8, 0.0);
  CHECK(outcome::outcome_loss(net, x, z, a, t, nullptr) ==
        doctest::Approx(std::log(8.0)).epsilon(1e-14));
}

TEST_CASE("outcome_loss: a saturated correct logit drives the loss to zero") {
  OutcomeNet net = tiny_net(2, 8, 3, 2, 0);
  auto& layer = net.net.layers.back();
  std::fill(layer.W.data.begin(), layer.W.data.end(), 0.0);
  std::fill(layer.b.begin(), layer.b.end(), 0.0);
  layer.b[4] = 50.0;  // one-hot target item
  RatingTarget t;
  t.mass.assign(8, 0.0);
  t.mass[4] = 1.0;
  const double loss = outcome::outcome_loss(net, Vector(2, 0.0), Vector(3, 0.0),
                                            Vector(8, 0.0), t, nullptr);
  CHECK(loss >= 0.0);
  CHECK(loss < 1e-12);
}

TEST_CASE("outcome_loss rejects an all-zero target") {
  OutcomeNet net = tiny_net(3);
  RatingTarget t;
  t.mass.assign(8, 0.0);
  CHECK_THROWS_AS(outcome::outcome_loss(net, Vector(2, 0.0), Vector(3, 0.0),
                                        Vector(8, 0.0), t, nullptr),
                  deconf::ValidationError);
}

TEST_CASE("outcome_loss gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    OutcomeNet net = tiny_net(seed);
    Rng rng(seed + 50);
    const Vector x = numkit::sample_standard_normal(rng, 2);
    const Vector z = numkit::sample_standard_normal(rng, 3);
    Vector a(8, 0.0);
    a[rng.uniform_index(8)] = 1.0;
    a[rng.uniform_index(8)] = 1.0;
    RatingTarget t;
    t.mass.assign(8, 0.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      if (a[i] == 1.0) {
        t.mass[i] = 1.0 + rng.uniform_index(4);
        sum += t.mass[i];
      }
    }
    for (auto& v : t.mass) v /= sum;

    numkit::Mlp::Grads grads = net.net.zero_grads();
    outcome::outcome_loss(net, x, z, a, t, &grads);

    auto params = net.param_refs();
    auto grad_refs = net.grad_refs(grads);
    for (std::size_t p = 0; p < params.size(); ++p) {
      Vector theta(params[p].data, params[p].data + params[p].size());
      const Vector analytic(grad_refs[p].data,
                            grad_refs[p].data + grad_refs[p].size());
      const auto loss = [&](const Vector& probe) {
        std::copy(probe.begin(), probe.end(), params[p].data);
        return outcome::outcome_loss(net, x, z, a, t, nullptr);
      };
      const Vector numeric = numkit::finite_diff_grad(loss, theta);
      std::copy(theta.begin(), theta.end(), params[p].data);
      CHECK(numkit::max_rel_error(analytic, numeric, 1e-6) < 1e-4);
    }
  }
}

TEST_CASE("predict_ratings returns a normalized deterministic distribution") {
  OutcomeNet net = tiny_net(4);
  Rng rng(5);
  const Vector x = numkit::sample_standard_normal(rng, 2);
  const Vector z = numkit::sample_standard_normal(rng, 3);
  Vector a(8, 0.0);
  a[1] = 1.0;
  const Vector s1 = outcome::predict_ratings(net, x, z, a);
  const Vector s2 = outcome::predict_ratings(net, x, z, a);
  CHECK(s1 == s2);
  double sum = 0.0;
  for (double v : s1) sum += v;
  CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("a constructed linear net exposes its weight blocks in the logits") {
  Rng rng(6);
  const std::size_t items = 5;
  const Matrix w_x = numkit::sample_normal_matrix(rng, items, 2, 1.0);
  const Matrix w_z = numkit::sample_normal_matrix(rng, items, 3, 1.0);
  const Matrix w_a = numkit::sample_normal_matrix(rng, items, items, 1.0);
  const Vector alpha = numkit::sample_standard_normal(rng, items);
  OutcomeNet net = linear_net(w_x, w_z, w_a, alpha);

  const Vector x = numkit::sample_standard_normal(rng, 2);
  const Vector z = numkit::sample_standard_normal(rng, 3);
  Vector a(items, 0.0);
  a[2] = 1.0;

  const Vector logits = net.forward_logits(x, z, a);
  for (std::size_t i = 0; i < items; ++i) {
    double expect = alpha[i];
    for (std::size_t j = 0; j < 2; ++j) expect += w_x.at(i, j) * x[j];
    for (std::size_t j = 0; j < 3; ++j) expect += w_z.at(i, j) * z[j];
    for (std::size_t j = 0; j < items; ++j) expect += w_a.at(i, j) * a[j];
    CHECK(logits[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("recommend_topk masks, orders, and flags truncation") {
  SUBCASE("only one unexposed item") {
    Vector a(9, 1.0);
    a[7] = 0.0;
    Vector scores(9, 0.1);
    for (std::size_t k = 1; k <= 5; ++k) {
      const auto top = outcome::recommend_topk(scores, a, k);
      CHECK(top.items == std::vector<std::size_t>{7});
      CHECK(top.truncated == (k > 1));
    }
  }
  SUBCASE("equal scores break ties by ascending index") {
    const Vector scores(6, 0.5);
    const Vector a(6, 0.0);
    const auto top = outcome::recommend_topk(scores, a, 4);
    CHECK(top.items == std::vector<std::size_t>{0, 1, 2, 3});
  }
  SUBCASE("random cases match the full-sort oracle") {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t items = 5 + rng.uniform_index(40);
      Vector scores(items);
      for (auto& s : scores) s = rng.uniform();
      // duplicate some scores to exercise tie-breaking
      if (items > 3) scores[1] = scores[3] = scores[0];
      Vector a(items, 0.0);
      for (auto& v : a) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
      const std::size_t k = 1 + rng.uniform_index(items + 3);
      const auto top = outcome::recommend_topk(scores, a, k);
      CHECK(top.items == oracles::topk_brute(scores, a, k));
    }
  }
  SUBCASE("no recommended item is already exposed") {
    Rng rng(18);
    Vector scores(30);
    for (auto& s : scores) s = rng.uniform();
    Vector a(30, 0.0);
    for (auto& v : a) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const auto top = outcome::recommend_topk(scores, a, 10);
    for (const auto i : top.items) CHECK(a[i] == 0.0);
  }
}

TEST_CASE("permuting item wiring permutes the recommendations identically") {
  Rng rng(19);
  const std::size_t items = 7;
  const Matrix w_x = numkit::sample_normal_matrix(rng, items, 2, 1.0);
  const Matrix w_z = numkit::sample_normal_matrix(rng, items, 3, 1.0);
  const Matrix w_a = numkit::sample_normal_matrix(rng, items, items, 1.0);
  const Vector alpha = numkit::sample_standard_normal(rng, items);

  const Vector x = numkit::sample_standard_normal(rng, 2);
  const Vector z = numkit::sample_standard_normal(rng, 3);
  Vector a(items, 0.0);
  a[0] = 1.0;
  a[4] = 1.0;

  // permutation p maps old index -> new index
  std::vector<std::size_t> perm(items);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);

  Matrix w_x_p(items, 2);
  Matrix w_z_p(items, 3);
  Matrix w_a_p(items, items);
  Vector alpha_p(items);
  Vector a_p(items);
  for (std::size_t i = 0; i < items; ++i) {
    for (std::size_t j = 0; j < 2; ++j) w_x_p.at(perm[i], j) = w_x.at(i, j);
    for (std::size_t j = 0; j < 3; ++j) w_z_p.at(perm[i], j) = w_z.at(i, j);
    for (std::size_t j = 0; j < items; ++j) {
      w_a_p.at(perm[i], perm[j]) = w_a.at(i, j);
    }
    alpha_p[perm[i]] = alpha[i];
    a_p[perm[i]] = a[i];
  }

  OutcomeNet net = linear_net(w_x, w_z, w_a, alpha);
  OutcomeNet net_p = linear_net(w_x_p, w_z_p, w_a_p, alpha_p);

  const auto top = outcome::recommend_topk(
      outcome::predict_ratings(net, x, z, a), a, items);
  const auto top_p = outcome::recommend_topk(
      outcome::predict_ratings(net_p, x, z, a_p), a_p, items);

  REQUIRE(top.items.size() == top_p.items.size());
  for (std::size_t r = 0; r < top.items.size(); ++r) {
    CHECK(top_p.items[r] == perm[top.items[r]]);
  }
}

namespace {

struct OutcomeFixture {
  datagen::CausalDataset ds;
  Matrix confounders;
  std::vector<std::size_t> train_users;
  std::vector<std::size_t> val_users;
  std::vector<std::vector<std::size_t>> val_holdout;
  outcome::OutcomeTrainData data;

  explicit OutcomeFixture(std::uint64_t seed = 23) {
    datagen::SimConfig cfg;
    cfg.users = 500;
    cfg.items = 200;
    cfg.latent_dim = 8;
    cfg.feature_dim = 4;
    cfg.gamma_theta = 0.8;
    cfg.seed = seed;
    ds = datagen::simulate_dataset(cfg);
    // Ground-truth confounders stand in for an encoder here; the outcome
    // trainer only needs per-user vectors.
    confounders = ds.confounders_true;

    Rng rng(seed + 2);
    for (std::size_t u = 0; u < cfg.users; ++u) {
      if (u % 5 == 0) {
        std::vector<std::size_t> observed;
        for (std::size_t i = 0; i < cfg.items; ++i) {
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
    data.ratings_obs = &ds.ratings_obs;
    data.exposures = &ds.exposures;
    data.features = &ds.features;
    data.confounders = &confounders;
  }
};

}  // namespace

TEST_CASE("train_outcome: best validation N@20 is at least the initial one") {
  OutcomeFixture fx;
  OutcomeConfig cfg;
  cfg.items = fx.ds.items();
  cfg.latent_dim = 8;
  cfg.feature_dim = 4;
  Rng init(3);
  OutcomeNet net = OutcomeNet::make(cfg, init);

  outcome::TrainOpts opts;
  opts.epochs = 25;
  opts.batch_size = 64;
  opts.lr = 3e-3;
  opts.seed = 7;
  const auto result = outcome::train_outcome(net, fx.data, fx.train_users,
                                             fx.val_users, fx.val_holdout, opts);
  REQUIRE(!result.log.empty());
  CHECK(result.log[0].epoch == 0);
  CHECK(result.best_val_ndcg >= result.log[0].val_ndcg);
}

TEST_CASE("the exposure-only ablation trains under the identical loop") {
  OutcomeFixture fx(29);
  OutcomeConfig cfg;
  cfg.items = fx.ds.items();
  cfg.latent_dim = 8;
  cfg.feature_dim = 4;
  cfg.use_confounder = false;  // exposure branch removed
  Rng init(4);
  OutcomeNet net = OutcomeNet::make(cfg, init);
  CHECK(net.input_dim() == 4 + fx.ds.items());

  outcome::OutcomeTrainData data = fx.data;
  data.confounders = nullptr;

  outcome::TrainOpts opts;
  opts.epochs = 5;
  opts.batch_size = 64;
  opts.seed = 7;
  const auto result = outcome::train_outcome(net, data, fx.train_users,
                                             fx.val_users, fx.val_holdout, opts);
  CHECK(result.epochs_ran >= 1);
}

TEST_CASE("train_outcome is deterministic under equal seeds") {
  OutcomeFixture fx(31);
  OutcomeConfig cfg;
  cfg.items = fx.ds.items();
  cfg.latent_dim = 8;
  cfg.feature_dim = 4;

  outcome::TrainOpts opts;
  opts.epochs = 6;
  opts.batch_size = 64;
  opts.seed = 11;

  Rng init_a(1);
  OutcomeNet a = OutcomeNet::make(cfg, init_a);
  outcome::train_outcome(a, fx.data, fx.train_users, fx.val_users,
                         fx.val_holdout, opts);
  Rng init_b(1);
  OutcomeNet b = OutcomeNet::make(cfg, init_b);
  outcome::train_outcome(b, fx.data, fx.train_users, fx.val_users,
                         fx.val_holdout, opts);

  auto pa = a.param_refs();
  auto pb = b.param_refs();
  for (std::size_t t = 0; t < pa.size(); ++t) {
    for (std::size_t i = 0; i < pa[t].size(); ++i) {
      CHECK(pa[t].data[i] == pb[t].data[i]);
    }
  }
}

TEST_CASE("outcome checkpoints round trip with their configuration") {
  OutcomeConfig cfg;
  cfg.items = 12;
  cfg.latent_dim = 4;
  cfg.feature_dim = 3;
  cfg.use_features = false;
  Rng init(9);
  OutcomeNet net = OutcomeNet::make(cfg, init);

  const auto dir = std::filesystem::temp_directory_path() / "deconf_out_ckpt";
  std::filesystem::remove_all(dir);
  outcome::TrainResult result;
  outcome::save_outcome_checkpoint(dir, net, result, "bbbb");
  OutcomeNet loaded = outcome::load_outcome_checkpoint(dir);
  CHECK(loaded.cfg.use_features == false);
  CHECK(loaded.cfg.items == 12);
  auto pa = net.param_refs();
  auto pb = loaded.param_refs();
  for (std::size_t t = 0; t < pa.size(); ++t) {
    for (std::size_t i = 0; i < pa[t].size(); ++i) {
      CHECK(pa[t].data[i] == pb[t].data[i]);
    }
  }
  std::filesystem::remove_all(dir);
}
