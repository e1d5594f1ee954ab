#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "cap/types.hpp"

namespace cap {

// Two-class Gaussian mixture: y = +1 with probability pi (the minority),
// x | y ~ N(y * mu, sigma_y^2 I).
struct GmmSpec {
  Eigen::VectorXd mu;
  double sigma_plus = 1.0;
  double sigma_minus = 1.0;
  double pi = 0.1;
  int n = 100;

  int dim() const { return static_cast<int>(mu.size()); }
  void validate() const;
};

struct GmmSample {
  Eigen::MatrixXd x;   // n x d
  Eigen::VectorXi y;   // entries in {+1, -1}
};

GmmSample sample_gmm(const GmmSpec& spec, std::uint64_t seed);

// View as a labeled dataset with y=+1 mapped to class 0 and y=-1 to class 1.
LabeledDataset to_dataset(const GmmSample& sample);

struct CsSvmSolution {
  Eigen::VectorXd w;
  double b = 0.0;
  Eigen::VectorXd alpha;
  double kkt_violation = 0.0;
  long iterations = 0;
};

// Hard-margin cost-sensitive SVM: minimize ||w||^2 / 2 subject to
// y_i (w^T x_i + b) >= m_i with margin targets m_i = delta for the minority
// (+1) and 1 otherwise.  Solved in the dual
//   max sum_i m_i alpha_i - ||sum_i alpha_i y_i x_i||^2 / 2,
//   alpha >= 0, sum_i alpha_i y_i = 0
// by pairwise coordinate ascent with second-order partner selection.
// warm_alpha, when given, must be a feasible dual point; margins enter
// the constraints only, so a solution for a nearby delta is a valid start.
// Throws NumericError when the data is not separable (single class,
// duplicate conflicting points, or no convergence within the budget).
CsSvmSolution solve_cssvm(const Eigen::MatrixXd& x, const Eigen::VectorXi& y,
                          double delta, double tol = 1e-10,
                          long max_iters = 2000000,
                          const Eigen::VectorXd* warm_alpha = nullptr);

// Standard normal CDF.
double normal_cdf(double x);

struct BalancedErrorValue {
  double err_plus = 0.0;
  double err_minus = 0.0;
  double balanced = 0.0;
};

// Class-conditional misclassification probabilities of the halfspace
// sign(w^T x + b) under the mixture, in closed form:
//   err_+ = Phi(-(mu^T w + b) / (sigma_+ ||w||))
//   err_- = Phi( (b - mu^T w) / (sigma_- ||w||))
BalancedErrorValue analytic_balanced_error(const Eigen::VectorXd& w, double b,
                                           const GmmSpec& spec);

struct SweepConfig {
  std::vector<double> pis{0.1};
  std::vector<double> sigma_ratios{1.0};  // sigma_plus with sigma_minus = 1
  std::vector<double> deltas;             // empty = 30 log-spaced in [0.5, 8]
  int seeds = 10;
  int n = 100;
  int dim = 200;
  double mu_norm = 2.0;
  int threads = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SweepRow {
  double pi;
  double sigma_ratio;
  double delta;
  double rbal_mean;  // NaN when every seed failed
  double rbal_sd;
  bool is_optimal;
  int failures;
};

std::vector<double> default_delta_grid();

// One dataset per (pi, ratio, seed); every delta is solved on that dataset
// and scored with the analytic balanced error.  Rows aggregate over seeds;
// within each (pi, ratio) block the smallest delta attaining the minimal
// mean is marked optimal.  Non-separable cells are dropped and counted in
// failures.
std::vector<SweepRow> delta_sweep(const SweepConfig& cfg);

}  // namespace cap
