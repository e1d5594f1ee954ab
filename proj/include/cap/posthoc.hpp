#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "cap/cap_map.hpp"
#include "cap/loss.hpp"
#include "cap/objectives.hpp"
#include "cap/types.hpp"

namespace cap {

// Which adjustment acts on the pretrained logits o:
//   additive        o - l
//   multiplicative  delta .* o
//   both            delta .* o - l
enum class AdjustMode { kAdditive, kMultiplicative, kBoth };

Eigen::MatrixXd adjust_logits(const Eigen::MatrixXd& logits,
                              const StrategyVectors& s, AdjustMode mode);

struct PosthocConfig {
  AdjustMode mode = AdjustMode::kAdditive;
  ObjectiveSpec objective;
  int steps = 500;
  double lr = 0.05;
};

struct PosthocHistoryEntry {
  int step;
  double surrogate;
  double objective;  // true 0/1 objective of the adjusted logits
};

struct PosthocModel {
  AdjustMode mode = AdjustMode::kAdditive;
  CapWeights weights;  // best iterate by true objective
  FeatureDictionary dict;
  StrategyVectors strategies;  // derived from the best iterate, omega = 1
  double pretrained_objective = 0.0;
  double fitted_objective = 0.0;
  std::vector<PosthocHistoryEntry> history;
};

// Gradient-descent fit of the active weight rows (w_l for additive, w_delta
// for multiplicative, both for both) against the differentiable surrogate:
// per-class mean softmax cross entropy of the adjusted validation logits,
// aggregated by the target objective formula.  Every step also evaluates
// the true 0/1 objective; the returned model is the best iterate under it,
// so more steps never report a worse objective than the start.
PosthocModel fit_posthoc(const LogitMatrix& val, const AttributeTable& attrs,
                         const BasisSet& basis, const PosthocConfig& cfg);

// fit_posthoc with one-hot attributes and the identity basis: the dictionary
// is the identity, so this is per-class free-parameter tuning.
PosthocModel plain_posthoc_baseline(const LogitMatrix& val,
                                    const PosthocConfig& cfg);

struct LaGridResult {
  double best_tau = 0.0;
  double best_objective = 0.0;
  StrategyVectors strategies;
  std::vector<std::pair<double, double>> grid;  // (tau, objective)
};

// Logit-adjustment baseline: sweeps o - tau * log(pi) over a temperature
// grid and keeps the tau with the best true objective (ties toward the
// smaller tau).  Default grid is 0 to 3 in steps of 0.05.
LaGridResult la_posthoc_baseline(const LogitMatrix& val,
                                 const Eigen::VectorXd& pi,
                                 const ObjectiveSpec& objective,
                                 std::vector<double> temperature_grid = {});

// Training-loss strategies induced by a fitted post-hoc model: the additive
// adjustment carries over as the loss's additive l, the multiplicative one
// as delta; branches the fit never touched stay at their neutral values.
StrategyVectors export_strategies(const PosthocModel& model);

}  // namespace cap
