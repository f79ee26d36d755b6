#include "deconf/causal.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "deconf/csv.hpp"

namespace deconf::causal {

JacobianReport network_jacobian(const outcome::OutcomeNet& net,
                                const Vector& a, const Vector& z,
                                const Vector& x, ExpansionMode mode) {
  const auto& cfg = net.cfg;
  numkit::require_finite(a, "expansion point a");
  numkit::require_finite(z, "expansion point z");
  numkit::require_finite(x, "expansion point x");

  numkit::Mlp::Cache cache;
  const Vector out_at_point = net.forward_logits(x, z, a, &cache);
  const std::size_t items = cfg.items;
  const std::size_t f_dim = cfg.use_features ? cfg.feature_dim : 0;
  const std::size_t k_dim = cfg.use_confounder ? cfg.latent_dim : 0;

  JacobianReport report;
  report.mode = mode;
  report.at_exposure = a;
  report.at_confounder = z;
  report.at_features = x;
  report.w_exposure = Matrix(items, items);
  report.w_confounder = Matrix(items, k_dim);
  report.w_features = Matrix(items, f_dim);
  report.alpha.resize(items);

  // One reverse sweep per output coordinate; the input gradient is the
  // Jacobian row, split into the [x | z | a] blocks.
  Vector seed(items, 0.0);
  for (std::size_t i = 0; i < items; ++i) {
    seed[i] = 1.0;
    const Vector grad_in = net.net.backward(seed, cache, nullptr);
    seed[i] = 0.0;
    std::size_t off = 0;
    for (std::size_t j = 0; j < f_dim; ++j) {
      report.w_features.at(i, j) = grad_in[off + j];
    }
    off += f_dim;
    for (std::size_t j = 0; j < k_dim; ++j) {
      report.w_confounder.at(i, j) = grad_in[off + j];
    }
    off += k_dim;
    for (std::size_t j = 0; j < items; ++j) {
      report.w_exposure.at(i, j) = grad_in[off + j];
    }
  }

  for (std::size_t i = 0; i < items; ++i) {
    double linear = 0.0;
    for (std::size_t j = 0; j < f_dim; ++j) {
      linear += report.w_features.at(i, j) * x[j];
    }
    for (std::size_t j = 0; j < k_dim; ++j) {
      linear += report.w_confounder.at(i, j) * z[j];
    }
    for (std::size_t j = 0; j < items; ++j) {
      linear += report.w_exposure.at(i, j) * a[j];
    }
    report.alpha[i] = out_at_point[i] - linear;
  }
  return report;
}

JacobianReport network_jacobian_global(const outcome::OutcomeNet& net) {
  const auto& cfg = net.cfg;
  const Vector a(cfg.items, 0.0);
  const Vector z(cfg.use_confounder ? cfg.latent_dim : 0, 0.0);
  const Vector x(cfg.use_features ? cfg.feature_dim : 0, 0.0);
  return network_jacobian(net, a, z, x, ExpansionMode::global);
}

Vector cate_of_exposure(const JacobianReport& report, std::size_t item_j) {
  if (item_j >= report.w_exposure.cols) {
    throw ParameterError("cate_of_exposure: item index out of range");
  }
  Vector effect(report.w_exposure.rows);
  for (std::size_t i = 0; i < report.w_exposure.rows; ++i) {
    effect[i] = report.w_exposure.at(i, item_j);
  }
  return effect;
}

void write_jacobian_report(const std::filesystem::path& dir,
                           const JacobianReport& report,
                           const std::string& config_hash,
                           std::size_t top_pairs) {
  std::filesystem::create_directories(dir);
  const std::string comment = "config_hash=" + config_hash;
  io::write_dense_csv(dir / "w_exposure.csv", report.w_exposure, {}, comment);
  if (report.w_confounder.cols > 0) {
    io::write_dense_csv(dir / "w_confounder.csv", report.w_confounder, {},
                        comment);
  }
  if (report.w_features.cols > 0) {
    io::write_dense_csv(dir / "w_features.csv", report.w_features, {}, comment);
  }
  Matrix alpha_mat(report.alpha.size(), 1);
  for (std::size_t i = 0; i < report.alpha.size(); ++i) {
    alpha_mat.at(i, 0) = report.alpha[i];
  }
  io::write_dense_csv(dir / "alpha.csv", alpha_mat, {"alpha"}, comment);

  struct Pair {
    std::size_t i, j;
    double value;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < report.w_exposure.rows; ++i) {
    for (std::size_t j = 0; j < report.w_exposure.cols; ++j) {
      if (i == j) continue;
      pairs.push_back({i, j, report.w_exposure.at(i, j)});
    }
  }
  const std::size_t take = std::min(top_pairs, pairs.size());
  std::partial_sort(pairs.begin(), pairs.begin() + take, pairs.end(),
                    [](const Pair& a, const Pair& b) {
                      const double ma = std::abs(a.value);
                      const double mb = std::abs(b.value);
                      if (ma != mb) return ma > mb;
                      if (a.i != b.i) return a.i < b.i;
                      return a.j < b.j;
                    });

  nlohmann::ordered_json summary;
  summary["config_hash"] = config_hash;
  summary["mode"] = report.mode == ExpansionMode::global ? "global" : "local";
  summary["items"] = report.w_exposure.rows;
  auto top = nlohmann::ordered_json::array();
  for (std::size_t n = 0; n < take; ++n) {
    top.push_back({{"rated_item", pairs[n].i},
                   {"exposed_item", pairs[n].j},
                   {"effect", pairs[n].value}});
  }
  summary["top_co_recommendation_pairs"] = top;
  io::write_text_atomic(dir / "summary.json", summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// OLS study
// ---------------------------------------------------------------------------

Matrix invert_small_spd(Matrix m, double ridge) {
  if (m.rows != m.cols) throw DimensionError("invert: matrix must be square");
  const std::size_t n = m.rows;
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) += ridge;
  Matrix inv = Matrix::identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(m.at(r, col)) > std::abs(m.at(pivot, col))) pivot = r;
    }
    if (std::abs(m.at(pivot, col)) < 1e-300) {
      throw EvaluationError("singular matrix in OLS solve");
    }
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(m.at(pivot, j), m.at(col, j));
        std::swap(inv.at(pivot, j), inv.at(col, j));
      }
    }
    const double d = m.at(col, col);
    for (std::size_t j = 0; j < n; ++j) {
      m.at(col, j) /= d;
      inv.at(col, j) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = m.at(r, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        m.at(r, j) -= f * m.at(col, j);
        inv.at(r, j) -= f * inv.at(col, j);
      }
    }
  }
  return inv;
}

Vector solve_least_squares(const Matrix& design, const Vector& response,
                           double ridge) {
  if (design.rows != response.size()) {
    throw DimensionError("least squares: row count mismatch");
  }
  const std::size_t p = design.cols;
  Matrix xtx(p, p);
  Vector xty(p, 0.0);
  for (std::size_t r = 0; r < design.rows; ++r) {
    for (std::size_t i = 0; i < p; ++i) {
      const double xi = design.at(r, i);
      xty[i] += xi * response[r];
      for (std::size_t j = i; j < p; ++j) {
        xtx.at(i, j) += xi * design.at(r, j);
      }
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < i; ++j) xtx.at(i, j) = xtx.at(j, i);
  }
  const Matrix inv = invert_small_spd(xtx, ridge);
  Vector beta(p, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < p; ++j) beta[i] += inv.at(i, j) * xty[j];
  }
  return beta;
}

namespace {

struct FitStats {
  Vector beta;
  double s2 = 0.0;      // residual variance with dof correction
  Matrix xtx_inv;       // (X^T X + ridge I)^{-1}
};

FitStats fit_ols(const Matrix& design, const Vector& response, double ridge) {
  FitStats fit;
  fit.beta = solve_least_squares(design, response, ridge);
  const std::size_t n = design.rows;
  const std::size_t p = design.cols;
  double rss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double pred = 0.0;
    for (std::size_t j = 0; j < p; ++j) pred += design.at(r, j) * fit.beta[j];
    const double e = response[r] - pred;
    rss += e * e;
  }
  fit.s2 = rss / static_cast<double>(n - p);

  Matrix xtx(p, p);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = i; j < p; ++j) {
        xtx.at(i, j) += design.at(r, i) * design.at(r, j);
      }
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < i; ++j) xtx.at(i, j) = xtx.at(j, i);
  }
  fit.xtx_inv = invert_small_spd(xtx, ridge);
  return fit;
}

}  // namespace

OlsVarianceReport ols_variance_study(const OlsStudyConfig& cfg, Rng& rng) {
  if (cfg.n_users < 10) {
    throw ParameterError("ols study: need at least 10 users");
  }

  const std::size_t n = cfg.n_users;
  Vector exposure(n);
  Vector feature(n, 0.0);
  Vector response(n);
  std::size_t group1 = 0;
  for (std::size_t u = 0; u < n; ++u) {
    exposure[u] = static_cast<double>(numkit::sample_bernoulli(rng, cfg.exposure_prob));
    group1 += exposure[u] > 0.5 ? 1 : 0;
    if (cfg.with_features) feature[u] = rng.normal();
    const double eps = cfg.noise_sd > 0.0 ? cfg.noise_sd * rng.normal() : 0.0;
    response[u] = cfg.w_z * cfg.z_value + cfg.w_a * exposure[u] +
                  (cfg.with_features ? cfg.w_x * feature[u] : 0.0) + cfg.alpha +
                  eps;
  }
  const std::size_t group0 = n - group1;
  if (group1 == 0 || group0 == 0) {
    throw EvaluationError("ols study: degenerate single-group data");
  }

  OlsVarianceReport report;
  report.group1 = group1;
  report.group0 = group0;
  report.with_features = cfg.with_features;

  double mean1 = 0.0;
  double mean0 = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    if (exposure[u] > 0.5) {
      mean1 += response[u];
    } else {
      mean0 += response[u];
    }
  }
  mean1 /= static_cast<double>(group1);
  mean0 /= static_cast<double>(group0);
  report.tau_hat = mean1 - mean0;

  // No-covariate specification: r ~ [1, a].
  {
    Matrix design(n, 2);
    for (std::size_t u = 0; u < n; ++u) {
      design.at(u, 0) = 1.0;
      design.at(u, 1) = exposure[u];
    }
    const FitStats fit = fit_ols(design, response, 1e-10);
    report.w_a_hat = fit.beta[1];
    report.s2 = fit.s2;
    report.v_hat_closed =
        fit.s2 * (1.0 / static_cast<double>(group1) +
                  1.0 / static_cast<double>(group0));
    report.v_hat_design = fit.s2 * fit.xtx_inv.at(1, 1);
  }

  if (cfg.with_features) {
    Matrix design(n, 3);
    for (std::size_t u = 0; u < n; ++u) {
      design.at(u, 0) = 1.0;
      design.at(u, 1) = exposure[u];
      design.at(u, 2) = feature[u];
    }
    const FitStats fit = fit_ols(design, response, 1e-10);
    report.w_a_hat_with_features = fit.beta[1];
    report.v_hat_with_features = fit.s2 * fit.xtx_inv.at(1, 1);
  }
  return report;
}

}  // namespace deconf::causal
