#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "cap/cap_map.hpp"
#include "cap/loss.hpp"
#include "cap/objectives.hpp"
#include "cap/types.hpp"

namespace cap {

enum class ModelKind { kLinear, kMlp1 };

// Parameter block shared by the model, its gradients and optimizer state.
// Linear models leave w1/b1 empty and read logits = w2 x + b2; the MLP
// computes logits = w2 tanh(w1 x + b1) + b2.
struct ParamBlock {
  Eigen::MatrixXd w1, w2;
  Eigen::VectorXd b1, b2;

  void set_zero();
  void add_scaled(const ParamBlock& other, double scale);
  void scale(double factor);
  double squared_norm() const;
  static ParamBlock zeros_like(const ParamBlock& other);
};

struct ToyModel {
  ModelKind kind = ModelKind::kLinear;
  ParamBlock params;

  static ToyModel init(ModelKind kind, int dim, int num_classes, int hidden,
                       std::uint64_t seed);

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x) const;
  // Rows of the classifier layer, the norm attribute's input.
  const Eigen::MatrixXd& last_layer() const { return params.w2; }
  int num_classes() const { return static_cast<int>(params.w2.rows()); }
};

struct ForwardBackward {
  double mean_loss = 0.0;
  ParamBlock grad;            // mean parameter gradient
  Eigen::MatrixXd grad_l;     // per-sample d loss / d l, one row per sample
  Eigen::MatrixXd grad_delta;
  Eigen::MatrixXd grad_omega;
};

// Mean generalized-CE loss and gradients over a batch.  Per-sample sums use
// a fixed pairwise reduction so results do not depend on work order.
ForwardBackward forward_backward(const ToyModel& model,
                                 const LabeledDataset& batch,
                                 const StrategyVectors& s);

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// Heavy-ball step: v <- momentum v + grad + weight_decay * theta,
// theta <- theta - lr * v.
void inner_step(ToyModel& model, const LabeledDataset& batch,
                const StrategyVectors& s, ParamBlock& velocity,
                const SgdConfig& cfg);

struct HypergradConfig {
  SgdConfig inner;
  int unroll_steps = 1;
  ObjectiveSpec objective;
  bool learn_omega = false;
};

// Validation value after simulating unroll_steps inner SGD steps from the
// current parameters and velocity: the surrogate objective over per-class
// mean plain-CE validation losses.  Pure in (model, velocity, weights).
double unrolled_val_loss(const ToyModel& model, const LabeledDataset& train_batch,
                         const LabeledDataset& val, const FeatureDictionary& dict,
                         const CapWeights& weights, const HypergradConfig& cfg,
                         const ParamBlock& velocity);

// Exact gradient of unrolled_val_loss with respect to the weight rows,
// obtained by reverse-mode differentiation through the simulated steps.
// Rows that are not optimized (w_omega unless learn_omega) come back zero.
CapWeights hypergrad_unrolled(const ToyModel& model,
                              const LabeledDataset& train_batch,
                              const LabeledDataset& val,
                              const FeatureDictionary& dict,
                              const CapWeights& weights,
                              const HypergradConfig& cfg,
                              const ParamBlock& velocity);

// Which attribute columns the search builds.  Frequency comes from training
// counts; difficulty is measured on validation after warm-up, which is also
// when the dictionary is frozen.
struct AttributeRecipe {
  bool freq = true;
  bool diff = false;
  bool identity = false;
  bool noise = false;
  Eigen::VectorXd noise_ratios;
};

struct BilevelConfig {
  ModelKind model = ModelKind::kLinear;
  int hidden = 16;
  int warmup_epochs = 2;
  int total_epochs = 30;
  std::vector<int> lr_decay_epochs = {20, 25};
  double lr_decay_factor = 0.1;
  SgdConfig inner;
  SgdConfig outer{0.05, 0.9, 1e-4};
  int unroll_steps = 1;
  int batch_size = 32;
  bool learn_omega = false;
  std::uint64_t seed = 0;
  double divergence_threshold = 1e6;

  void validate() const;
};

struct EpochTrace {
  int epoch;
  double mean_train_loss;
  double val_objective;
};

struct SearchResult {
  AttributeTable attrs;
  FeatureDictionary dict;
  CapWeights best_weights;
  StrategyVectors best_strategies;
  ToyModel model;  // state at the end of the search
  std::vector<EpochTrace> trace;
  int best_epoch = 0;
};

// Warm-up epochs train the model alone; afterwards every inner batch is
// paired with one outer hypergradient update of the weight rows.  Returns
// the weights whose epoch had the best validation objective.
SearchResult search_phase(const LabeledDataset& train, const LabeledDataset& val,
                          const AttributeRecipe& recipe, const BasisSet& basis,
                          const ObjectiveSpec& objective,
                          const BilevelConfig& cfg);

// Trains a fresh model under fixed strategies with the same schedule.
ToyModel retrain(const LabeledDataset& train, const StrategyVectors& s,
                 const BilevelConfig& cfg, std::uint64_t seed_tag);

}  // namespace cap
