#include "cap/loss.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cap/errors.hpp"

namespace cap {

namespace {

void check_inputs(const Eigen::VectorXd& f, int y, const StrategyVectors& s) {
  const auto k = f.size();
  if (y < 0 || y >= k) {
    throw ConfigError("label " + std::to_string(y) + " outside [0, " +
                      std::to_string(k) + ")");
  }
  if (!f.allFinite()) throw NumericError("non-finite scores passed to loss");
  if (s.omega.size() != k || s.l.size() != k || s.delta.size() != k) {
    throw ConfigError("strategy vectors do not match score length");
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    if (!(s.omega[i] >= 0.0) || !std::isfinite(s.omega[i]) ||
        !std::isfinite(s.l[i]) || !(s.delta[i] > 0.0) || !(s.delta[i] <= 1.0)) {
      throw ConfigError("invalid strategy vectors: need omega >= 0, finite l, "
                        "delta in (0, 1]");
    }
  }
}

Eigen::VectorXd adjusted_scores(const Eigen::VectorXd& f,
                                const StrategyVectors& s) {
  return s.l + s.delta.cwiseProduct(f);
}

}  // namespace

double log_sum_exp(const Eigen::VectorXd& z) {
  const double zmax = z.maxCoeff();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) acc += std::exp(z[i] - zmax);
  return zmax + std::log(acc);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const double zmax = z.maxCoeff();
  Eigen::VectorXd p = (z.array() - zmax).exp();
  return p / p.sum();
}

double cap_ce_loss(const Eigen::VectorXd& f, int y, const StrategyVectors& s) {
  check_inputs(f, y, s);
  const Eigen::VectorXd z = adjusted_scores(f, s);
  return s.omega[y] * (log_sum_exp(z) - z[y]);
}

Eigen::VectorXd cap_ce_grad_f(const Eigen::VectorXd& f, int y,
                              const StrategyVectors& s) {
  check_inputs(f, y, s);
  const Eigen::VectorXd p = softmax(adjusted_scores(f, s));
  Eigen::VectorXd g = s.omega[y] * p.cwiseProduct(s.delta);
  g[y] -= s.omega[y] * s.delta[y];
  return g;
}

StrategyGrads cap_ce_grad_strategies(const Eigen::VectorXd& f, int y,
                                     const StrategyVectors& s) {
  check_inputs(f, y, s);
  const Eigen::VectorXd z = adjusted_scores(f, s);
  const Eigen::VectorXd p = softmax(z);
  const double base = log_sum_exp(z) - z[y];
  StrategyGrads g;
  g.l = s.omega[y] * p;
  g.l[y] -= s.omega[y];
  g.delta = s.omega[y] * p.cwiseProduct(f);
  g.delta[y] -= s.omega[y] * f[y];
  g.omega = Eigen::VectorXd::Zero(f.size());
  g.omega[y] = base;
  return g;
}

Eigen::VectorXd cap_ce_hess_f_apply(const Eigen::VectorXd& f, int y,
                                    const StrategyVectors& s,
                                    const Eigen::VectorXd& fdot) {
  check_inputs(f, y, s);
  const Eigen::VectorXd p = softmax(adjusted_scores(f, s));
  const Eigen::VectorXd t = s.delta.cwiseProduct(fdot);
  const double pt = p.dot(t);
  // H = omega_y diag(delta) (diag(p) - p p^T) diag(delta).
  return s.omega[y] *
         s.delta.cwiseProduct(p.cwiseProduct(t) - p * pt);
}

StrategyGrads cap_ce_mixed_vjp(const Eigen::VectorXd& f, int y,
                               const StrategyVectors& s,
                               const Eigen::VectorXd& fdot) {
  check_inputs(f, y, s);
  const Eigen::VectorXd p = softmax(adjusted_scores(f, s));
  const double c = p.dot(s.delta.cwiseProduct(fdot));
  const double w = s.omega[y];
  StrategyGrads g;
  // psi = omega_y (sum_k fdot_k delta_k p_k - fdot_y delta_y).
  g.l.resize(f.size());
  g.delta.resize(f.size());
  g.omega = Eigen::VectorXd::Zero(f.size());
  for (Eigen::Index j = 0; j < f.size(); ++j) {
    const double core = p[j] * (s.delta[j] * fdot[j] - c);
    g.l[j] = w * core;
    g.delta[j] = w * (p[j] * fdot[j] + f[j] * core);
  }
  g.delta[y] -= w * fdot[y];
  g.omega[y] = p.dot(s.delta.cwiseProduct(fdot)) - fdot[y] * s.delta[y];
  return g;
}

double softmax_ce_loss(const Eigen::VectorXd& f, int y) {
  if (!f.allFinite()) throw NumericError("non-finite scores passed to loss");
  return log_sum_exp(f) - f[y];
}

Eigen::VectorXd softmax_ce_grad(const Eigen::VectorXd& f, int y) {
  Eigen::VectorXd g = softmax(f);
  g[y] -= 1.0;
  return g;
}

Eigen::VectorXd DiscreteConditional::class_prior() const {
  return cond.transpose() * context_probs;
}

void DiscreteConditional::validate() const {
  if (cond.rows() != context_probs.size()) {
    throw ConfigError("context probabilities do not match conditional rows");
  }
  if (std::abs(context_probs.sum() - 1.0) > 1e-9 ||
      context_probs.minCoeff() < 0.0) {
    throw ConfigError("context probabilities must be a distribution");
  }
  for (Eigen::Index c = 0; c < cond.rows(); ++c) {
    if (std::abs(cond.row(c).sum() - 1.0) > 1e-9 ||
        cond.row(c).minCoeff() < 0.0) {
      throw ConfigError("conditional row " + std::to_string(c) +
                        " is not a distribution");
    }
  }
}

Eigen::VectorXd bayes_scores_numeric(const Eigen::VectorXd& cond_row,
                                     const StrategyVectors& s,
                                     const BayesOracleConfig& cfg) {
  const auto k = cond_row.size();
  if (s.omega.size() != k) {
    throw ConfigError("conditional row does not match strategy length");
  }
  // risk(f) = sum_y cond_row_y * omega_y * (LSE(z) - z_y), z = l + delta.*f.
  const double wsum = cond_row.dot(s.omega);
  const auto risk_and_grad = [&](const Eigen::VectorXd& f, Eigen::VectorXd* g) {
    const Eigen::VectorXd z = s.l + s.delta.cwiseProduct(f);
    const double lse = log_sum_exp(z);
    double r = 0.0;
    for (Eigen::Index y = 0; y < k; ++y) {
      r += cond_row[y] * s.omega[y] * (lse - z[y]);
    }
    if (g) {
      const Eigen::VectorXd p = softmax(z);
      *g = s.delta.cwiseProduct(wsum * p -
                                cond_row.cwiseProduct(s.omega));
      (*g)[0] = 0.0;  // f_0 stays pinned
    }
    return r;
  };

  Eigen::VectorXd f = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd grad(k);
  double risk = risk_and_grad(f, &grad);
  double step = 1.0;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const double gnorm = grad.norm();
    if (gnorm <= cfg.grad_tol) return f;
    // Backtracking line search with a mild growth attempt each iteration.
    step = std::min(step * 2.0, 1e6);
    bool accepted = false;
    for (int half = 0; half < 80; ++half) {
      const Eigen::VectorXd trial = f - step * grad;
      const double trial_risk = risk_and_grad(trial, nullptr);
      if (trial_risk <= risk - 0.5 * step * gnorm * gnorm) {
        // Once the guaranteed decrease drops below the risk's rounding
        // resolution, further iterations cannot move the objective; the
        // iterate is as converged as doubles allow.
        const bool resolvable =
            0.5 * step * gnorm * gnorm >
            std::numeric_limits<double>::epsilon() * (1.0 + std::abs(risk));
        f = trial;
        risk = trial_risk;
        accepted = true;
        if (!resolvable) return f;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      throw NumericError("bayes oracle line search failed at gradient norm " +
                         std::to_string(gnorm));
    }
    risk = risk_and_grad(f, &grad);
  }
  throw NumericError("bayes oracle did not converge: gradient norm " +
                     std::to_string(grad.norm()) + " after " +
                     std::to_string(cfg.max_iters) + " iterations");
}

FisherCheckResult fisher_consistency_check(const DiscreteConditional& dc,
                                           const Eigen::VectorXd& omega_test,
                                           const FisherCheckConfig& cfg) {
  dc.validate();
  const int k = dc.k();
  if (omega_test.size() != k) {
    throw ConfigError("omega_test does not match class count");
  }
  const Eigen::VectorXd pi = dc.class_prior();
  for (Eigen::Index y = 0; y < k; ++y) {
    if (!(pi[y] > 0.0)) {
      throw ConfigError("class prior must be positive for the consistency "
                        "construction");
    }
  }

  // l = log(pi) - log(omega_test) realized through the dictionary map.
  AttributeTable table;
  table.names = {"freq", "weights"};
  table.values.resize(k, 2);
  table.values.col(0) = pi;
  table.values.col(1) = weights_attribute(omega_test);
  const FeatureDictionary dict = build_dictionary(table, BasisSet::log_only());
  CapWeights w = CapWeights::zero(dict.m_total());
  w.w_l << 1.0, -1.0;
  StrategyVectors s = strategies_from_weights(dict, w);
  s.omega.setOnes();
  s.delta.setOnes();

  FisherCheckResult res;
  for (int c = 0; c < dc.contexts(); ++c) {
    const Eigen::VectorXd row = dc.cond.row(c).transpose();
    const Eigen::VectorXd target_score =
        omega_test.cwiseProduct(row).cwiseQuotient(pi);
    int target = 0;
    double best = target_score[0];
    for (int y = 1; y < k; ++y) {
      if (target_score[y] > best) {
        best = target_score[y];
        target = y;
      }
    }
    double second = -std::numeric_limits<double>::infinity();
    for (int y = 0; y < k; ++y) {
      if (y != target) second = std::max(second, target_score[y]);
    }
    if (best - second <= cfg.tie_tol) {
      ++res.skipped_ties;
      continue;
    }
    const Eigen::VectorXd scores = bayes_scores_numeric(row, s, cfg.oracle);
    int pred = 0;
    for (int y = 1; y < k; ++y) {
      if (scores[y] > scores[pred]) pred = y;
    }
    ++res.checked;
    if (pred == target) {
      ++res.matched;
    } else {
      res.mismatched_contexts.push_back(c);
    }
  }
  return res;
}

}  // namespace cap
