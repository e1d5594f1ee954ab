#include "cap/posthoc.hpp"

#include <cmath>
#include <string>

#include "cap/errors.hpp"
#include "cap/reduce.hpp"

namespace cap {

Eigen::MatrixXd adjust_logits(const Eigen::MatrixXd& logits,
                              const StrategyVectors& s, AdjustMode mode) {
  if (s.l.size() != logits.cols() || s.delta.size() != logits.cols()) {
    throw ConfigError("strategy vectors do not match logit width");
  }
  Eigen::MatrixXd out = logits;
  if (mode == AdjustMode::kMultiplicative || mode == AdjustMode::kBoth) {
    out = out * s.delta.asDiagonal();
  }
  if (mode == AdjustMode::kAdditive || mode == AdjustMode::kBoth) {
    out.rowwise() -= s.l.transpose();
  }
  return out;
}

namespace {

struct ValView {
  const Eigen::MatrixXd& logits;
  const std::vector<int>& labels;
  std::vector<std::int64_t> support;
  Eigen::VectorXd fractions;
  int k;
};

ValView make_view(const LogitMatrix& val) {
  val.validate();
  if (!val.labels) {
    throw ConfigError("post-hoc fitting needs labeled validation logits");
  }
  ValView v{val.values, *val.labels, {}, {}, val.k()};
  v.support = class_counts(v.labels, v.k);
  v.fractions.resize(v.k);
  for (int c = 0; c < v.k; ++c) {
    if (v.support[static_cast<std::size_t>(c)] == 0) {
      throw ConfigError("class " + std::to_string(c) +
                        " has no validation samples; per-class losses are "
                        "undefined");
    }
    v.fractions[c] = static_cast<double>(v.support[static_cast<std::size_t>(c)]) /
                     static_cast<double>(v.labels.size());
  }
  return v;
}

// Per-class mean softmax cross entropy of the given scores.
Eigen::VectorXd per_class_ce(const ValView& v, const Eigen::MatrixXd& scores) {
  std::vector<std::vector<double>> buckets(static_cast<std::size_t>(v.k));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    buckets[static_cast<std::size_t>(v.labels[static_cast<std::size_t>(i)])]
        .push_back(softmax_ce_loss(scores.row(i).transpose(),
                                   v.labels[static_cast<std::size_t>(i)]));
  }
  Eigen::VectorXd out(v.k);
  for (int c = 0; c < v.k; ++c) {
    out[c] = pairwise_mean(buckets[static_cast<std::size_t>(c)]);
  }
  return out;
}

double true_objective(const ValView& v, const Eigen::MatrixXd& scores,
                      const ObjectiveSpec& spec) {
  const auto preds = predict_argmax(scores);
  const auto errs = class_conditional_errors(preds, v.labels, v.k);
  return eval_objective(errs, plain_error(preds, v.labels), spec);
}

}  // namespace

PosthocModel fit_posthoc(const LogitMatrix& val, const AttributeTable& attrs,
                         const BasisSet& basis, const PosthocConfig& cfg) {
  if (cfg.steps < 0) throw ConfigError("steps must be non-negative");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
  const ValView v = make_view(val);
  cfg.objective.validate(v.k);
  if (attrs.k() != v.k) {
    throw ConfigError("attribute table classes do not match logit width");
  }

  PosthocModel model;
  model.mode = cfg.mode;
  model.dict = build_dictionary(attrs, basis);
  const int m = model.dict.m_total();
  CapWeights w = CapWeights::zero(m);
  const bool fit_l =
      cfg.mode == AdjustMode::kAdditive || cfg.mode == AdjustMode::kBoth;
  const bool fit_delta =
      cfg.mode == AdjustMode::kMultiplicative || cfg.mode == AdjustMode::kBoth;

  CapWeights best = w;
  double best_obj = 0.0;
  bool have_best = false;

  for (int step = 0; step <= cfg.steps; ++step) {
    StrategyVectors s = strategies_from_weights(model.dict, w);
    s.omega.setOnes();
    const Eigen::MatrixXd adjusted = adjust_logits(v.logits, s, cfg.mode);
    const Eigen::VectorXd losses = per_class_ce(v, adjusted);
    const SurrogateValue surr =
        surrogate_objective(losses, cfg.objective, v.fractions);
    const double obj = true_objective(v, adjusted, cfg.objective);
    model.history.push_back({step, surr.value, obj});
    if (!have_best || obj < best_obj) {
      have_best = true;
      best_obj = obj;
      best = w;
    }
    if (step == cfg.steps) break;

    // d surrogate / d adjusted logits, sample by sample.
    StrategyVectors upstream;
    upstream.omega = Eigen::VectorXd::Zero(v.k);
    upstream.l = Eigen::VectorXd::Zero(v.k);
    upstream.delta = Eigen::VectorXd::Zero(v.k);
    for (Eigen::Index i = 0; i < adjusted.rows(); ++i) {
      const int y = v.labels[static_cast<std::size_t>(i)];
      const double scale =
          surr.grad[y] / static_cast<double>(v.support[static_cast<std::size_t>(y)]);
      const Eigen::VectorXd dadj =
          scale * softmax_ce_grad(adjusted.row(i).transpose(), y);
      if (fit_l) upstream.l -= dadj;
      if (fit_delta) {
        upstream.delta += dadj.cwiseProduct(v.logits.row(i).transpose());
      }
    }
    const CapWeights grad = strategies_vjp(model.dict, w, upstream);
    if (fit_l) w.w_l -= cfg.lr * grad.w_l;
    if (fit_delta) w.w_delta -= cfg.lr * grad.w_delta;
  }

  model.weights = best;
  model.strategies = strategies_from_weights(model.dict, best);
  model.strategies.omega.setOnes();
  model.pretrained_objective = model.history.front().objective;
  model.fitted_objective = best_obj;
  return model;
}

PosthocModel plain_posthoc_baseline(const LogitMatrix& val,
                                    const PosthocConfig& cfg) {
  val.validate();
  return fit_posthoc(val, identity_attribute(val.k()),
                     BasisSet::identity_only(), cfg);
}

LaGridResult la_posthoc_baseline(const LogitMatrix& val,
                                 const Eigen::VectorXd& pi,
                                 const ObjectiveSpec& objective,
                                 std::vector<double> temperature_grid) {
  const ValView v = make_view(val);
  objective.validate(v.k);
  if (pi.size() != v.k) {
    throw ConfigError("class priors do not match logit width");
  }
  if (temperature_grid.empty()) {
    for (int i = 0; i <= 60; ++i) {
      temperature_grid.push_back(0.05 * static_cast<double>(i));
    }
  }
  LaGridResult out;
  bool have_best = false;
  for (double tau : temperature_grid) {
    const StrategyVectors s = la_strategies(pi, tau);
    const double obj = true_objective(
        v, adjust_logits(v.logits, s, AdjustMode::kAdditive), objective);
    out.grid.emplace_back(tau, obj);
    if (!have_best || obj < out.best_objective) {
      have_best = true;
      out.best_objective = obj;
      out.best_tau = tau;
      out.strategies = s;
    }
  }
  return out;
}

StrategyVectors export_strategies(const PosthocModel& model) {
  StrategyVectors s = StrategyVectors::plain(model.strategies.k());
  if (model.mode == AdjustMode::kAdditive || model.mode == AdjustMode::kBoth) {
    s.l = model.strategies.l;
  }
  if (model.mode == AdjustMode::kMultiplicative ||
      model.mode == AdjustMode::kBoth) {
    s.delta = model.strategies.delta;
  }
  return s;
}

}  // namespace cap
