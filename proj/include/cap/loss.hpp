#pragma once

#include <Eigen/Dense>
#include <vector>

#include "cap/cap_map.hpp"

namespace cap {

// Generalized cross entropy with per-class weights omega, additive
// adjustments l and multiplicative adjustments delta:
//
//   loss(f, y) = omega_y * log(1 + sum_{k != y} exp(l_k - l_y)
//                                             * exp(delta_k f_k - delta_y f_y))
//
// evaluated in the numerically stable form omega_y * (LSE(z) - z_y) with
// z_k = l_k + delta_k f_k and max subtraction inside the LSE.
double cap_ce_loss(const Eigen::VectorXd& f, int y, const StrategyVectors& s);

// d loss / d f.
Eigen::VectorXd cap_ce_grad_f(const Eigen::VectorXd& f, int y,
                              const StrategyVectors& s);

struct StrategyGrads {
  Eigen::VectorXd l;
  Eigen::VectorXd delta;
  Eigen::VectorXd omega;
};

// d loss / d (l, delta, omega).
StrategyGrads cap_ce_grad_strategies(const Eigen::VectorXd& f, int y,
                                     const StrategyVectors& s);

// Action of the f-space Hessian of the loss on a direction fdot.
Eigen::VectorXd cap_ce_hess_f_apply(const Eigen::VectorXd& f, int y,
                                    const StrategyVectors& s,
                                    const Eigen::VectorXd& fdot);

// Gradient with respect to (l, delta, omega) of the scalar
// psi = fdot^T (d loss / d f), with fdot held constant.  Used by the
// unrolled hypergradient, which needs this mixed second derivative.
StrategyGrads cap_ce_mixed_vjp(const Eigen::VectorXd& f, int y,
                               const StrategyVectors& s,
                               const Eigen::VectorXd& fdot);

// Plain softmax cross entropy, used for surrogate objectives and baselines.
double softmax_ce_loss(const Eigen::VectorXd& f, int y);
Eigen::VectorXd softmax_ce_grad(const Eigen::VectorXd& f, int y);

Eigen::VectorXd softmax(const Eigen::VectorXd& z);
double log_sum_exp(const Eigen::VectorXd& z);

// Finite label distribution over a handful of contexts.  cond row c holds
// P(y | x_c); the class prior is the context-weighted column sum.
struct DiscreteConditional {
  Eigen::VectorXd context_probs;  // C, sums to one
  Eigen::MatrixXd cond;           // C x K, rows sum to one

  int contexts() const { return static_cast<int>(cond.rows()); }
  int k() const { return static_cast<int>(cond.cols()); }
  Eigen::VectorXd class_prior() const;
  void validate() const;
};

struct BayesOracleConfig {
  double grad_tol = 1e-8;
  int max_iters = 200000;
};

// Minimizes the conditional risk sum_y P(y | x) * loss(f, y) over scores f
// with f_0 pinned to zero, by gradient descent with backtracking line
// search.  The objective is convex in f.  Throws NumericError when the
// gradient norm has not reached grad_tol within max_iters.
Eigen::VectorXd bayes_scores_numeric(const Eigen::VectorXd& cond_row,
                                     const StrategyVectors& s,
                                     const BayesOracleConfig& cfg = {});

struct FisherCheckConfig {
  double tie_tol = 1e-9;
  BayesOracleConfig oracle;
};

struct FisherCheckResult {
  int checked = 0;
  int matched = 0;
  int skipped_ties = 0;
  std::vector<int> mismatched_contexts;
};

// Builds l = log(pi) - log(omega_test) through the attribute table and
// dictionary machinery (two attributes, log basis, weight row [1, -1]),
// then verifies per context that the risk-minimizing scores argmax-agree
// with argmax_y omega_test_y * P(y | x) / pi_y.  Contexts whose target is
// tied within tie_tol are skipped and counted separately.
FisherCheckResult fisher_consistency_check(const DiscreteConditional& dc,
                                           const Eigen::VectorXd& omega_test,
                                           const FisherCheckConfig& cfg = {});

}  // namespace cap
