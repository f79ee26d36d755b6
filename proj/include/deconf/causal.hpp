#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deconf/matrix.hpp"
#include "deconf/outcome_net.hpp"
#include "deconf/rng.hpp"

namespace deconf::causal {

using numkit::Matrix;
using numkit::Rng;
using numkit::Vector;

enum class ExpansionMode { global, local };

// Linearization of the outcome network around an expansion point: the
// Jacobian blocks act as treatment-effect matrices and alpha is the
// zero-recommendation baseline rating vector.
struct JacobianReport {
  ExpansionMode mode = ExpansionMode::global;
  Vector at_exposure;   // a
  Vector at_confounder; // z
  Vector at_features;   // x
  Matrix w_exposure;    // I x I
  Matrix w_confounder;  // I x K (empty when the block is disabled)
  Matrix w_features;    // I x F (empty when the block is disabled)
  Vector alpha;         // I
};

// Jacobians by one reverse sweep per output coordinate; alpha is the network
// output at the expansion point minus the linear terms.
JacobianReport network_jacobian(const outcome::OutcomeNet& net,
                                const Vector& a, const Vector& z,
                                const Vector& x, ExpansionMode mode);

// Global linearization at (0, 0, 0).
JacobianReport network_jacobian_global(const outcome::OutcomeNet& net);

// Column j of W^a: the approximate effect of exposing item j on every
// rating. Exact CATE (and ATE) for an affine net.
Vector cate_of_exposure(const JacobianReport& report, std::size_t item_j);

void write_jacobian_report(const std::filesystem::path& dir,
                           const JacobianReport& report,
                           const std::string& config_hash,
                           std::size_t top_pairs = 10);

// ---------------------------------------------------------------------------
// OLS variance study (scalar potential-outcome model within a confounder
// stratum)
// ---------------------------------------------------------------------------

struct OlsStudyConfig {
  std::size_t n_users = 10000;
  bool with_features = false;   // Eq-6-style data with a pre-treatment x
  double w_z = 0.8;
  double w_a = 1.5;
  double w_x = 1.0;
  double alpha = 2.0;
  double noise_sd = 1.0;
  double exposure_prob = 0.5;
  double z_value = 0.3;  // the stratum's fixed confounder value
};

struct OlsVarianceReport {
  double tau_hat = 0.0;     // mean rating difference, exposed vs unexposed
  std::size_t group1 = 0;   // U^1
  std::size_t group0 = 0;   // U^0
  double s2 = 0.0;          // residual variance, no-covariate fit
  double w_a_hat = 0.0;     // OLS exposure coefficient, no-covariate fit
  double v_hat_closed = 0.0;  // s^2 (1/U^1 + 1/U^0)
  double v_hat_design = 0.0;  // s^2 [(X^T X)^{-1}]_aa
  bool with_features = false;
  double w_a_hat_with_features = 0.0;
  double v_hat_with_features = 0.0;
};

// Simulates r = w_z z + w_a a (+ w_x x) + alpha + eps inside a fixed-z
// stratum and fits OLS by normal equations (ridge 1e-10). The no-covariate
// fit checks the w_a^ols = tau_hat identity and both variance formulas; the
// with-feature fit quantifies the variance reduction.
OlsVarianceReport ols_variance_study(const OlsStudyConfig& cfg, Rng& rng);

// Least squares via normal equations with a small ridge; design is n x p.
Vector solve_least_squares(const Matrix& design, const Vector& response,
                           double ridge = 1e-10);

// Inverse of a small symmetric positive definite matrix (Gauss-Jordan).
Matrix invert_small_spd(Matrix m, double ridge = 0.0);

}  // namespace deconf::causal
