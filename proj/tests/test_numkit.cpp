#include <doctest.h>

#include <cmath>

#include "deconf/adam.hpp"
#include "deconf/gradcheck.hpp"
#include "deconf/layers.hpp"
#include "deconf/pca.hpp"
#include "deconf/rng.hpp"
#include "support/oracles.hpp"

using namespace deconf::numkit;

namespace {

Matrix from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[0].size(); ++j) m.at(i, j) = rows[i][j];
  }
  return m;
}

}  // namespace

TEST_CASE("affine_forward basis vector selects a column") {
  const Matrix w = from_rows({{2, 3}, {4, 5}});
  CHECK(affine_forward({1, 0}, w, {0, 0}) == Vector{2, 4});
}

TEST_CASE("affine_forward zero input returns the bias") {
  const Matrix w = from_rows({{2, 3}, {4, 5}});
  CHECK(affine_forward({0, 0}, w, {7, -1}) == Vector{7, -1});
}

TEST_CASE("affine_forward matches the triple-loop oracle") {
  Rng rng(42);
  Matrix w = sample_normal_matrix(rng, 5, 3, 1.0);
  const Vector x = sample_standard_normal(rng, 3);
  const Vector b = sample_standard_normal(rng, 5);
  const Vector got = affine_forward(x, w, b);
  const Vector want = oracles::matvec_brute(w, x, b);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("affine_forward rejects shape mismatches") {
  const Matrix w = from_rows({{1, 2}, {3, 4}});
  CHECK_THROWS_AS(affine_forward({1, 2, 3}, w, {0, 0}), deconf::DimensionError);
  CHECK_THROWS_AS(affine_forward({1, 2}, w, {0}), deconf::DimensionError);
}

TEST_CASE("affine_backward basis and zero cases") {
  const Matrix w = from_rows({{1, 2}, {3, 4}});
  SUBCASE("grad_out = e1 gives grad_b = e1") {
    const auto g = affine_backward({1, 0}, {0.5, -0.5}, w);
    CHECK(g.grad_b == Vector{1, 0});
  }
  SUBCASE("x = 0 gives grad_W = 0") {
    const auto g = affine_backward({1, 2}, {0, 0}, w);
    for (double v : g.grad_w.data) CHECK(v == 0.0);
  }
}

TEST_CASE("affine_backward matches central finite differences") {
  Rng rng(7);
  const Matrix w = sample_normal_matrix(rng, 4, 3, 1.0);
  const Vector x = sample_standard_normal(rng, 3);
  const Vector b = sample_standard_normal(rng, 4);
  const Vector grad_out = sample_standard_normal(rng, 4);

  const auto g = affine_backward(grad_out, x, w);

  // loss(theta) = grad_out . affine_forward(...)
  const auto loss_wrt_x = [&](const Vector& probe) {
    const Vector y = affine_forward(probe, w, b);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += grad_out[i] * y[i];
    return s;
  };
  CHECK(max_rel_error(g.grad_x, finite_diff_grad(loss_wrt_x, x)) < 1e-6);

  const auto loss_wrt_w = [&](const Vector& flat) {
    Matrix probe = w;
    probe.data = flat;
    const Vector y = affine_forward(x, probe, b);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += grad_out[i] * y[i];
    return s;
  };
  CHECK(max_rel_error(g.grad_w.data, finite_diff_grad(loss_wrt_w, w.data)) <
        1e-6);
}

TEST_CASE("activations: elementwise definitions") {
  CHECK(relu_fw({-1, 2}) == Vector{0, 2});
  const Vector s = softmax_fw({3.3, 3.3, 3.3});
  for (double v : s) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));
}

TEST_CASE("softmax is stable and normalized for large inputs") {
  for (const double scale : {1.0, 10.0, 1e3}) {
    Rng rng(11);
    Vector x = sample_standard_normal(rng, 16);
    for (auto& v : x) v *= scale;
    const Vector y = softmax_fw(x);
    double sum = 0.0;
    for (double v : y) {
      CHECK(std::isfinite(v));
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("activation backward passes match finite differences") {
  Rng rng(13);
  const Vector x = sample_standard_normal(rng, 6);
  const Vector grad_out = sample_standard_normal(rng, 6);

  const auto check_activation = [&](auto fw, auto bw) {
    const Vector y = fw(x);
    const Vector analytic = bw(grad_out, y);
    const auto loss = [&](const Vector& probe) {
      const Vector out = fw(probe);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += grad_out[i] * out[i];
      return s;
    };
    CHECK(max_rel_error(analytic, finite_diff_grad(loss, x)) < 1e-6);
  };
  check_activation(
      [](const Vector& v) { return sigmoid_fw(v); },
      [](const Vector& g, const Vector& y) { return sigmoid_bw(g, y); });
  check_activation(
      [](const Vector& v) { return tanh_fw(v); },
      [](const Vector& g, const Vector& y) { return tanh_bw(g, y); });
  check_activation(
      [](const Vector& v) { return relu_fw(v); },
      [](const Vector& g, const Vector& y) { return relu_bw(g, y); });
}

TEST_CASE("rng: identical seeds give bit-identical streams, splits differ") {
  Rng a(123);
  Rng b(123);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng base(5);
  Rng s1 = base.split("stream-a");
  Rng s2 = base.split("stream-b");
  Rng s1_again = base.split("stream-a");
  CHECK(s1.next_u64() == s1_again.next_u64());
  CHECK(s1.next_u64() != s2.next_u64());
}

TEST_CASE("distribution edge cases") {
  Rng rng(1);
  CHECK(sample_poisson(rng, 0.0) == 0);
  CHECK(sample_bernoulli(rng, 1.0) == 1);
  CHECK(sample_bernoulli(rng, 0.0) == 0);
  CHECK_THROWS_AS(sample_poisson(rng, -1.0), deconf::ParameterError);
  CHECK_THROWS_AS(sample_bernoulli(rng, 1.5), deconf::ParameterError);
}

TEST_CASE("law-of-large-numbers checks for the samplers") {
  Rng rng(2024);
  const std::size_t n = 100000;
  double normal_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) normal_sum += rng.normal();
  CHECK(std::abs(normal_sum / static_cast<double>(n)) < 0.02);

  double poisson_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    poisson_sum += static_cast<double>(sample_poisson(rng, 3.0));
  }
  CHECK(std::abs(poisson_sum / static_cast<double>(n) - 3.0) < 0.05);

  double bern_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    bern_sum += static_cast<double>(sample_bernoulli(rng, 0.3));
  }
  CHECK(std::abs(bern_sum / static_cast<double>(n) - 0.3) < 0.01);
}

namespace {

std::vector<TensorRef> single_param(Vector& w, Vector& g,
                                    std::vector<TensorRef>& grads_out) {
  std::vector<TensorRef> params{{"w", w.data(), w.size(), 1}};
  grads_out = {{"w", g.data(), g.size(), 1}};
  return params;
}

}  // namespace

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  Vector w{1.0, -2.0, 3.0};
  Vector g{0.0, 0.0, 0.0};
  std::vector<TensorRef> grads;
  auto params = single_param(w, g, grads);
  AdamState state;
  adam_step(params, grads, state);
  CHECK(w == Vector{1.0, -2.0, 3.0});
}

TEST_CASE("adam: first step moves by -lr * sign(g)") {
  Vector w{0.0, 0.0};
  Vector g{0.5, -3.0};
  std::vector<TensorRef> grads;
  auto params = single_param(w, g, grads);
  AdamState state;
  adam_step(params, grads, state);
  // With m = v = 0 the bias corrections cancel and the first step is
  // -lr * g / (|g| + eps').
  CHECK(w[0] == doctest::Approx(-state.lr).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(state.lr).epsilon(1e-6));
}

TEST_CASE("adam: descends on f(w) = w^2") {
  Vector w{5.0};
  std::vector<double> values;
  AdamState state;
  state.lr = 0.1;
  for (int step = 0; step < 3; ++step) {
    values.push_back(w[0] * w[0]);
    Vector g{2.0 * w[0]};
    std::vector<TensorRef> grads;
    auto params = single_param(w, g, grads);
    adam_step(params, grads, state);
  }
  values.push_back(w[0] * w[0]);
  for (std::size_t i = 1; i < values.size(); ++i) {
    CHECK(values[i] < values[i - 1]);
  }
}

TEST_CASE("adam: non-finite gradient carries the tensor name") {
  Vector w{1.0};
  Vector g{std::nan("")};
  std::vector<TensorRef> grads;
  auto params = single_param(w, g, grads);
  params[0].name = grads[0].name = "dec.w0";
  AdamState state;
  CHECK_THROWS_WITH_AS(adam_step(params, grads, state),
                       "training error: non-finite gradient in tensor dec.w0",
                       deconf::TrainingError);
}

TEST_CASE("finite_diff_grad basics") {
  const auto constant = [](const Vector&) { return 4.2; };
  for (double v : finite_diff_grad(constant, {1.0, 2.0, 3.0})) CHECK(v == 0.0);

  const auto sum_sq = [](const Vector& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
  };
  const Vector g = finite_diff_grad(sum_sq, {1.0, 2.0});
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("pca: axis-aligned data projects onto the high-variance axis") {
  Rng rng(3);
  Matrix x(400, 2);
  for (std::size_t i = 0; i < x.rows; ++i) {
    x.at(i, 0) = 2.0 * rng.normal();  // variance 4
    x.at(i, 1) = rng.normal();        // variance 1
  }
  const PcaResult pca = pca_project(x, 1);
  CHECK(std::abs(pca.basis.at(0, 0)) > 0.99);
  CHECK(std::abs(pca.basis.at(1, 0)) < 0.15);
  CHECK(pca.eigenvalues[0] == doctest::Approx(4.0).epsilon(0.25));
}

TEST_CASE("pca: full-rank projection reconstructs the centered data") {
  Rng rng(9);
  Matrix x(60, 5);
  for (auto& v : x.data) v = rng.normal() + 3.0;
  const PcaResult pca = pca_project(x, 5);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) {
      double recon = 0.0;
      for (std::size_t s = 0; s < 5; ++s) {
        recon += pca.projected.at(i, s) * pca.basis.at(j, s);
      }
      CHECK(std::abs(recon - (x.at(i, j) - pca.column_means[j])) < 1e-8);
    }
  }
}

TEST_CASE("pca: top eigenvalue matches the power-iteration oracle") {
  Rng rng(17);
  Matrix x(200, 6);
  for (auto& v : x.data) v = rng.normal();

  Vector means(6, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) means[j] += x.at(i, j);
  }
  for (auto& m : means) m /= static_cast<double>(x.rows);
  Matrix cov(6, 6);
  for (std::size_t a = 0; a < 6; ++a) {
    for (std::size_t b = 0; b < 6; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i) {
        s += (x.at(i, a) - means[a]) * (x.at(i, b) - means[b]);
      }
      cov.at(a, b) = s / static_cast<double>(x.rows - 1);
    }
  }

  const PcaResult pca = pca_project(x, 6);
  CHECK(std::abs(pca.eigenvalues[0] - oracles::top_eigenvalue_power(cov)) <
        1e-6);
}

TEST_CASE("pca: eigenvalues descend and the basis is orthonormal") {
  Rng rng(23);
  Matrix x(120, 7);
  for (auto& v : x.data) v = rng.normal();
  const PcaResult pca = pca_project(x, 7);
  for (std::size_t j = 1; j < 7; ++j) {
    CHECK(pca.eigenvalues[j] <= pca.eigenvalues[j - 1] + 1e-12);
  }
  for (std::size_t a = 0; a < 7; ++a) {
    for (std::size_t b = 0; b < 7; ++b) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 7; ++k) {
        dot += pca.basis.at(k, a) * pca.basis.at(k, b);
      }
      CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-8);
    }
  }
}

TEST_CASE("pca rejects bad output dims") {
  Rng rng(1);
  Matrix x(10, 3);
  for (auto& v : x.data) v = rng.normal();
  CHECK_THROWS_AS(pca_project(x, 4), deconf::ParameterError);
}

TEST_CASE("mlp backward matches finite differences over 20 seeds") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Mlp mlp = Mlp::make({5, 4, 3}, false, rng);
    const Vector x = sample_standard_normal(rng, 5);
    const Vector grad_out = sample_standard_normal(rng, 3);

    Mlp::Cache cache;
    mlp.forward(x, &cache);
    Mlp::Grads grads = mlp.zero_grads();
    const Vector grad_in = mlp.backward(grad_out, cache, &grads);

    const auto loss_wrt_input = [&](const Vector& probe) {
      const Vector y = mlp.forward(probe);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += grad_out[i] * y[i];
      return s;
    };
    CHECK(max_rel_error(grad_in, finite_diff_grad(loss_wrt_input, x)) < 1e-4);

    std::vector<TensorRef> params;
    append_tensor_refs(params, "mlp", mlp);
    std::vector<TensorRef> grad_refs;
    append_grad_refs(grad_refs, "mlp", grads);
    for (std::size_t t = 0; t < params.size(); ++t) {
      Vector theta(params[t].data, params[t].data + params[t].size());
      const Vector analytic(grad_refs[t].data,
                            grad_refs[t].data + grad_refs[t].size());
      const auto loss_wrt_param = [&](const Vector& probe) {
        std::copy(probe.begin(), probe.end(), params[t].data);
        const Vector y = mlp.forward(x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += grad_out[i] * y[i];
        return s;
      };
      const Vector numeric = finite_diff_grad(loss_wrt_param, theta);
      std::copy(theta.begin(), theta.end(), params[t].data);
      CHECK(max_rel_error(analytic, numeric) < 1e-4);
    }
  }
}
