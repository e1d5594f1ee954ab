#include "cap/bilevel.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "cap/errors.hpp"
#include "cap/reduce.hpp"
#include "cap/rng.hpp"

namespace cap {

void ParamBlock::set_zero() {
  w1.setZero();
  w2.setZero();
  b1.setZero();
  b2.setZero();
}

void ParamBlock::add_scaled(const ParamBlock& other, double scale) {
  if (w1.size()) w1 += scale * other.w1;
  w2 += scale * other.w2;
  if (b1.size()) b1 += scale * other.b1;
  b2 += scale * other.b2;
}

void ParamBlock::scale(double factor) {
  w1 *= factor;
  w2 *= factor;
  b1 *= factor;
  b2 *= factor;
}

double ParamBlock::squared_norm() const {
  return w1.squaredNorm() + w2.squaredNorm() + b1.squaredNorm() +
         b2.squaredNorm();
}

ParamBlock ParamBlock::zeros_like(const ParamBlock& other) {
  ParamBlock out;
  out.w1 = Eigen::MatrixXd::Zero(other.w1.rows(), other.w1.cols());
  out.w2 = Eigen::MatrixXd::Zero(other.w2.rows(), other.w2.cols());
  out.b1 = Eigen::VectorXd::Zero(other.b1.size());
  out.b2 = Eigen::VectorXd::Zero(other.b2.size());
  return out;
}

ToyModel ToyModel::init(ModelKind kind, int dim, int num_classes, int hidden,
                        std::uint64_t seed) {
  if (dim < 1 || num_classes < 2) {
    throw ConfigError("model needs dim >= 1 and at least 2 classes");
  }
  if (kind == ModelKind::kMlp1 && hidden < 1) {
    throw ConfigError("mlp1 needs a positive hidden width");
  }
  Rng rng(seed);
  ToyModel model;
  model.kind = kind;
  const auto fill = [&rng](Eigen::MatrixXd& m, int fan_in) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        m(i, j) = rng.normal(0.0, sd);
      }
    }
  };
  if (kind == ModelKind::kLinear) {
    model.params.w2.resize(num_classes, dim);
    fill(model.params.w2, dim);
    model.params.b2 = Eigen::VectorXd::Zero(num_classes);
  } else {
    model.params.w1.resize(hidden, dim);
    fill(model.params.w1, dim);
    model.params.b1 = Eigen::VectorXd::Zero(hidden);
    model.params.w2.resize(num_classes, hidden);
    fill(model.params.w2, hidden);
    model.params.b2 = Eigen::VectorXd::Zero(num_classes);
  }
  return model;
}

Eigen::VectorXd ToyModel::forward(const Eigen::VectorXd& x) const {
  if (kind == ModelKind::kLinear) {
    return params.w2 * x + params.b2;
  }
  const Eigen::VectorXd h = (params.w1 * x + params.b1).array().tanh();
  return params.w2 * h + params.b2;
}

Eigen::MatrixXd ToyModel::forward_batch(const Eigen::MatrixXd& x) const {
  if (kind == ModelKind::kLinear) {
    return (x * params.w2.transpose()).rowwise() + params.b2.transpose();
  }
  const Eigen::MatrixXd h =
      ((x * params.w1.transpose()).rowwise() + params.b1.transpose())
          .array()
          .tanh();
  return (h * params.w2.transpose()).rowwise() + params.b2.transpose();
}

namespace {

struct SampleCache {
  Eigen::VectorXd h;  // hidden activations (empty for linear)
  Eigen::VectorXd f;  // logits
};

SampleCache forward_cached(const ToyModel& model, const Eigen::VectorXd& x) {
  SampleCache c;
  if (model.kind == ModelKind::kLinear) {
    c.f = model.params.w2 * x + model.params.b2;
  } else {
    c.h = (model.params.w1 * x + model.params.b1).array().tanh();
    c.f = model.params.w2 * c.h + model.params.b2;
  }
  return c;
}

// Accumulates the parameter gradient of one sample given d loss / d logits.
void backward_sample(const ToyModel& model, const Eigen::VectorXd& x,
                     const SampleCache& c, const Eigen::VectorXd& df,
                     ParamBlock& grad) {
  if (model.kind == ModelKind::kLinear) {
    grad.w2 += df * x.transpose();
    grad.b2 += df;
    return;
  }
  grad.w2 += df * c.h.transpose();
  grad.b2 += df;
  const Eigen::VectorXd dh = model.params.w2.transpose() * df;
  const Eigen::VectorXd da =
      (1.0 - c.h.array().square()).matrix().cwiseProduct(dh);
  grad.w1 += da * x.transpose();
  grad.b1 += da;
}

// Directional derivative of the logits along a parameter direction.
Eigen::VectorXd jvp_sample(const ToyModel& model, const Eigen::VectorXd& x,
                           const SampleCache& c, const ParamBlock& dir) {
  if (model.kind == ModelKind::kLinear) {
    return dir.w2 * x + dir.b2;
  }
  const Eigen::VectorXd adot = dir.w1 * x + dir.b1;
  const Eigen::VectorXd hdot =
      (1.0 - c.h.array().square()).matrix().cwiseProduct(adot);
  return dir.w2 * c.h + model.params.w2 * hdot + dir.b2;
}

struct DoubleBackward {
  ParamBlock hvp;  // d/d theta of dir^T grad_theta(mean loss)
  StrategyGrads sgrad;  // d/d (l, delta, omega) of the same scalar
};

// Second-order products for the unrolled hypergradient: with psi(theta, s) =
// dir^T grad_theta L(theta, s), returns grad_theta psi and grad_s psi.
// psi decomposes per sample as fdot^T (d loss / d f) with fdot the logit
// JVP along dir, which is what gets differentiated here.
DoubleBackward double_backward(const ToyModel& model,
                               const LabeledDataset& batch,
                               const StrategyVectors& s,
                               const ParamBlock& dir) {
  const int k = model.num_classes();
  DoubleBackward out;
  out.hvp = ParamBlock::zeros_like(model.params);
  out.sgrad.l = Eigen::VectorXd::Zero(k);
  out.sgrad.delta = Eigen::VectorXd::Zero(k);
  out.sgrad.omega = Eigen::VectorXd::Zero(k);
  const auto n = batch.features.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd x = batch.features.row(i).transpose();
    const int y = batch.labels[static_cast<std::size_t>(i)];
    const SampleCache c = forward_cached(model, x);
    const Eigen::VectorXd fdot = jvp_sample(model, x, c, dir);
    const Eigen::VectorXd q = cap_ce_grad_f(c.f, y, s);
    const Eigen::VectorXd fbar = cap_ce_hess_f_apply(c.f, y, s, fdot);
    const StrategyGrads sg = cap_ce_mixed_vjp(c.f, y, s, fdot);
    out.sgrad.l += sg.l;
    out.sgrad.delta += sg.delta;
    out.sgrad.omega += sg.omega;
    if (model.kind == ModelKind::kLinear) {
      out.hvp.w2 += fbar * x.transpose();
      out.hvp.b2 += fbar;
    } else {
      const Eigen::VectorXd adot = dir.w1 * x + dir.b1;
      const Eigen::VectorXd s1 = (1.0 - c.h.array().square()).matrix();
      // fdot = dir.w2 h + w2 (s1 .* adot) + dir.b2 feeds psi = fdot^T q;
      // the theta-adjoint walks back through both the f and the fdot path.
      out.hvp.w2 += q * (s1.cwiseProduct(adot)).transpose();  // from fdot
      out.hvp.w2 += fbar * c.h.transpose();                   // from f
      out.hvp.b2 += fbar;
      const Eigen::VectorXd hbar_fdot = dir.w2.transpose() * q;
      const Eigen::VectorXd hdot_bar = model.params.w2.transpose() * q;
      Eigen::VectorXd hbar = hbar_fdot + model.params.w2.transpose() * fbar;
      hbar -= 2.0 * c.h.cwiseProduct(adot.cwiseProduct(hdot_bar));
      const Eigen::VectorXd abar = s1.cwiseProduct(hbar);
      out.hvp.w1 += abar * x.transpose();
      out.hvp.b1 += abar;
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.hvp.scale(inv);
  out.sgrad.l *= inv;
  out.sgrad.delta *= inv;
  out.sgrad.omega *= inv;
  return out;
}

StrategyVectors effective_strategies(const FeatureDictionary& dict,
                                     const CapWeights& weights,
                                     bool learn_omega) {
  StrategyVectors s = strategies_from_weights(dict, weights);
  if (!learn_omega) s.omega.setOnes();
  return s;
}

// Per-class mean plain-CE loss plus class fractions on a labeled set.
struct ValLosses {
  Eigen::VectorXd per_class;
  Eigen::VectorXd fractions;
};

ValLosses per_class_val_ce(const ToyModel& model, const LabeledDataset& val) {
  const int k = model.num_classes();
  const Eigen::MatrixXd logits = model.forward_batch(val.features);
  std::vector<std::vector<double>> buckets(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = val.labels[static_cast<std::size_t>(i)];
    buckets[static_cast<std::size_t>(y)].push_back(
        softmax_ce_loss(logits.row(i).transpose(), y));
  }
  ValLosses out;
  out.per_class.resize(k);
  out.fractions.resize(k);
  for (int c = 0; c < k; ++c) {
    const auto& b = buckets[static_cast<std::size_t>(c)];
    if (b.empty()) {
      throw ConfigError("class " + std::to_string(c) +
                        " missing from validation batch");
    }
    out.per_class[c] = pairwise_mean(b);
    out.fractions[c] = static_cast<double>(b.size()) /
                       static_cast<double>(val.labels.size());
  }
  return out;
}

// Gradient of the surrogate validation objective with respect to theta.
ParamBlock val_objective_grad(const ToyModel& model, const LabeledDataset& val,
                              const ObjectiveSpec& objective) {
  const ValLosses losses = per_class_val_ce(model, val);
  const SurrogateValue surr =
      surrogate_objective(losses.per_class, objective, losses.fractions);
  const auto counts = class_counts(val.labels, model.num_classes());
  ParamBlock grad = ParamBlock::zeros_like(model.params);
  for (Eigen::Index i = 0; i < val.features.rows(); ++i) {
    const Eigen::VectorXd x = val.features.row(i).transpose();
    const int y = val.labels[static_cast<std::size_t>(i)];
    const SampleCache c = forward_cached(model, x);
    const double scale =
        surr.grad[y] / static_cast<double>(counts[static_cast<std::size_t>(y)]);
    backward_sample(model, x, c, scale * softmax_ce_grad(c.f, y), grad);
  }
  return grad;
}

void apply_sgd(ParamBlock& theta, ParamBlock& velocity, const ParamBlock& grad,
               const SgdConfig& cfg) {
  velocity.scale(cfg.momentum);
  velocity.add_scaled(grad, 1.0);
  velocity.add_scaled(theta, cfg.weight_decay);
  theta.add_scaled(velocity, -cfg.lr);
}

}  // namespace

ForwardBackward forward_backward(const ToyModel& model,
                                 const LabeledDataset& batch,
                                 const StrategyVectors& s) {
  batch.validate();
  const auto n = batch.features.rows();
  if (n == 0) throw ConfigError("empty batch");
  const int k = model.num_classes();
  ForwardBackward out;
  out.grad = ParamBlock::zeros_like(model.params);
  out.grad_l.resize(n, k);
  out.grad_delta.resize(n, k);
  out.grad_omega.resize(n, k);
  std::vector<double> losses(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd x = batch.features.row(i).transpose();
    const int y = batch.labels[static_cast<std::size_t>(i)];
    const SampleCache c = forward_cached(model, x);
    losses[static_cast<std::size_t>(i)] = cap_ce_loss(c.f, y, s);
    backward_sample(model, x, c, cap_ce_grad_f(c.f, y, s), out.grad);
    const StrategyGrads sg = cap_ce_grad_strategies(c.f, y, s);
    out.grad_l.row(i) = sg.l.transpose();
    out.grad_delta.row(i) = sg.delta.transpose();
    out.grad_omega.row(i) = sg.omega.transpose();
  }
  out.mean_loss = pairwise_mean(losses);
  out.grad.scale(1.0 / static_cast<double>(n));
  return out;
}

void inner_step(ToyModel& model, const LabeledDataset& batch,
                const StrategyVectors& s, ParamBlock& velocity,
                const SgdConfig& cfg) {
  const ForwardBackward fb = forward_backward(model, batch, s);
  apply_sgd(model.params, velocity, fb.grad, cfg);
}

double unrolled_val_loss(const ToyModel& model, const LabeledDataset& train_batch,
                         const LabeledDataset& val, const FeatureDictionary& dict,
                         const CapWeights& weights, const HypergradConfig& cfg,
                         const ParamBlock& velocity) {
  if (cfg.unroll_steps < 1) throw ConfigError("unroll_steps must be >= 1");
  const StrategyVectors s =
      effective_strategies(dict, weights, cfg.learn_omega);
  ToyModel sim = model;
  ParamBlock v = velocity;
  for (int t = 0; t < cfg.unroll_steps; ++t) {
    inner_step(sim, train_batch, s, v, cfg.inner);
  }
  const ValLosses losses = per_class_val_ce(sim, val);
  return surrogate_objective(losses.per_class, cfg.objective, losses.fractions)
      .value;
}

CapWeights hypergrad_unrolled(const ToyModel& model,
                              const LabeledDataset& train_batch,
                              const LabeledDataset& val,
                              const FeatureDictionary& dict,
                              const CapWeights& weights,
                              const HypergradConfig& cfg,
                              const ParamBlock& velocity) {
  if (cfg.unroll_steps < 1) throw ConfigError("unroll_steps must be >= 1");
  const StrategyVectors s =
      effective_strategies(dict, weights, cfg.learn_omega);
  const int k = model.num_classes();

  // Forward tape of the simulated steps.
  std::vector<ToyModel> thetas;
  thetas.reserve(static_cast<std::size_t>(cfg.unroll_steps) + 1);
  ToyModel sim = model;
  ParamBlock v = velocity;
  thetas.push_back(sim);
  for (int t = 0; t < cfg.unroll_steps; ++t) {
    inner_step(sim, train_batch, s, v, cfg.inner);
    thetas.push_back(sim);
  }

  // Reverse sweep.  With v_{t+1} = mu v_t + g(theta_t) + wd theta_t and
  // theta_{t+1} = theta_t - lr v_{t+1}, the theta adjoint picks up
  // wd * C + H C through every step, where C is the running v adjoint and
  // H the train-loss Hessian; the weight rows collect the mixed term.
  ParamBlock theta_bar = val_objective_grad(sim, val, cfg.objective);
  ParamBlock c_bar = ParamBlock::zeros_like(model.params);
  StrategyVectors s_bar;
  s_bar.omega = Eigen::VectorXd::Zero(k);
  s_bar.l = Eigen::VectorXd::Zero(k);
  s_bar.delta = Eigen::VectorXd::Zero(k);
  for (int t = cfg.unroll_steps - 1; t >= 0; --t) {
    c_bar.scale(cfg.inner.momentum);
    c_bar.add_scaled(theta_bar, -cfg.inner.lr);
    const DoubleBackward db =
        double_backward(thetas[static_cast<std::size_t>(t)], train_batch, s,
                        c_bar);
    theta_bar.add_scaled(c_bar, cfg.inner.weight_decay);
    theta_bar.add_scaled(db.hvp, 1.0);
    s_bar.l += db.sgrad.l;
    s_bar.delta += db.sgrad.delta;
    s_bar.omega += db.sgrad.omega;
  }

  CapWeights grad = strategies_vjp(dict, weights, s_bar);
  if (!cfg.learn_omega) grad.w_omega.setZero();
  return grad;
}

void BilevelConfig::validate() const {
  if (warmup_epochs < 1 || total_epochs <= warmup_epochs) {
    throw ConfigError("need warmup_epochs >= 1 and total_epochs > warmup");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (unroll_steps < 1) throw ConfigError("unroll_steps must be >= 1");
  if (!(lr_decay_factor > 0.0) || lr_decay_factor > 1.0) {
    throw ConfigError("lr_decay_factor must lie in (0, 1]");
  }
  if (model == ModelKind::kMlp1 && hidden < 1) {
    throw ConfigError("mlp1 needs a positive hidden width");
  }
}

namespace {

double epoch_lr(const BilevelConfig& cfg, int epoch) {
  double lr = cfg.inner.lr;
  for (int e : cfg.lr_decay_epochs) {
    if (epoch >= e) lr *= cfg.lr_decay_factor;
  }
  return lr;
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int stop = std::min(n, start + batch_size);
    batches.emplace_back(idx.begin() + start, idx.begin() + stop);
  }
  return batches;
}

double dataset_objective(const ToyModel& model, const LabeledDataset& ds,
                         const ObjectiveSpec& objective) {
  const auto preds = predict_argmax(model.forward_batch(ds.features));
  const auto errs = class_conditional_errors(preds, ds.labels, ds.num_classes);
  return eval_objective(errs, plain_error(preds, ds.labels), objective);
}

void check_divergence(double loss, double threshold, int epoch) {
  if (!std::isfinite(loss) || loss > threshold) {
    throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                       ": loss " + std::to_string(loss));
  }
}

}  // namespace

SearchResult search_phase(const LabeledDataset& train, const LabeledDataset& val,
                          const AttributeRecipe& recipe, const BasisSet& basis,
                          const ObjectiveSpec& objective,
                          const BilevelConfig& cfg) {
  cfg.validate();
  train.validate();
  val.validate();
  if (train.num_classes != val.num_classes || train.dim() != val.dim()) {
    throw ConfigError("train/val shapes disagree");
  }
  const int k = train.num_classes;
  objective.validate(k);

  SearchResult res;
  ToyModel model = ToyModel::init(cfg.model, train.dim(), k, cfg.hidden,
                                  derive_seed(cfg.seed, 0x11));
  ParamBlock velocity = ParamBlock::zeros_like(model.params);

  // Warm-up strategies: the image of the zero weight vector.
  StrategyVectors warm = StrategyVectors::plain(k);
  warm.delta.setConstant(0.5);

  CapWeights w;
  Eigen::VectorXd vel_l, vel_delta, vel_omega;
  bool dict_ready = false;
  CapWeights best_w;
  double best_obj = 0.0;
  bool have_best = false;

  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    if (epoch == cfg.warmup_epochs) {
      // Freeze the dictionary: frequency from training counts, difficulty
      // from the warmed-up model's validation errors.
      std::vector<std::string> names;
      std::vector<Eigen::VectorXd> cols;
      if (recipe.freq) {
        names.emplace_back("freq");
        cols.push_back(freq_from_counts(class_counts(train.labels, k)));
      }
      if (recipe.diff) {
        const auto preds = predict_argmax(model.forward_batch(val.features));
        names.emplace_back("diff");
        cols.push_back(
            diff_from_errors(class_conditional_errors(preds, val.labels, k)));
      }
      if (recipe.noise) {
        names.emplace_back("noise");
        cols.push_back(noise_attribute(recipe.noise_ratios));
      }
      if (recipe.identity) {
        const AttributeTable id = identity_attribute(k);
        for (int c = 0; c < k; ++c) {
          names.push_back(id.names[static_cast<std::size_t>(c)]);
          cols.push_back(id.values.col(c));
        }
      }
      if (names.empty()) throw ConfigError("attribute recipe is empty");
      res.attrs = AttributeTable::from_columns(names, cols);
      res.dict = build_dictionary(res.attrs, basis);
      w = CapWeights::zero(res.dict.m_total());
      vel_l = Eigen::VectorXd::Zero(res.dict.m_total());
      vel_delta = Eigen::VectorXd::Zero(res.dict.m_total());
      vel_omega = Eigen::VectorXd::Zero(res.dict.m_total());
      dict_ready = true;
      // The zero weight vector is the first candidate.
      best_w = w;
      best_obj = dataset_objective(model, val, objective);
      res.best_epoch = epoch - 1;
      have_best = true;
    }

    Rng shuffle_rng(derive_seed(cfg.seed, 0x100 + static_cast<std::uint64_t>(epoch)));
    const auto batches = epoch_batches(train.n(), cfg.batch_size, shuffle_rng);
    SgdConfig inner_cfg = cfg.inner;
    inner_cfg.lr = epoch_lr(cfg, epoch);
    std::vector<double> batch_losses;
    batch_losses.reserve(batches.size());

    for (const auto& batch_idx : batches) {
      const LabeledDataset batch = subset(train, batch_idx);
      if (!dict_ready) {
        const ForwardBackward fb = forward_backward(model, batch, warm);
        check_divergence(fb.mean_loss, cfg.divergence_threshold, epoch);
        batch_losses.push_back(fb.mean_loss);
        apply_sgd(model.params, velocity, fb.grad, inner_cfg);
        continue;
      }
      HypergradConfig hcfg{inner_cfg, cfg.unroll_steps, objective,
                           cfg.learn_omega};
      const CapWeights hg =
          hypergrad_unrolled(model, batch, val, res.dict, w, hcfg, velocity);
      vel_l = cfg.outer.momentum * vel_l + hg.w_l +
              cfg.outer.weight_decay * w.w_l;
      w.w_l -= cfg.outer.lr * vel_l;
      vel_delta = cfg.outer.momentum * vel_delta + hg.w_delta +
                  cfg.outer.weight_decay * w.w_delta;
      w.w_delta -= cfg.outer.lr * vel_delta;
      if (cfg.learn_omega) {
        vel_omega = cfg.outer.momentum * vel_omega + hg.w_omega +
                    cfg.outer.weight_decay * w.w_omega;
        w.w_omega -= cfg.outer.lr * vel_omega;
      }
      const StrategyVectors s =
          effective_strategies(res.dict, w, cfg.learn_omega);
      const ForwardBackward fb = forward_backward(model, batch, s);
      check_divergence(fb.mean_loss, cfg.divergence_threshold, epoch);
      batch_losses.push_back(fb.mean_loss);
      apply_sgd(model.params, velocity, fb.grad, inner_cfg);
    }

    const double val_obj = dataset_objective(model, val, objective);
    res.trace.push_back({epoch, pairwise_mean(batch_losses), val_obj});
    if (dict_ready && (!have_best || val_obj < best_obj)) {
      have_best = true;
      best_obj = val_obj;
      best_w = w;
      res.best_epoch = epoch;
    }
  }

  res.best_weights = best_w;
  res.best_strategies =
      effective_strategies(res.dict, best_w, cfg.learn_omega);
  res.model = model;
  return res;
}

ToyModel retrain(const LabeledDataset& train, const StrategyVectors& s,
                 const BilevelConfig& cfg, std::uint64_t seed_tag) {
  cfg.validate();
  train.validate();
  s.validate();
  ToyModel model =
      ToyModel::init(cfg.model, train.dim(), train.num_classes, cfg.hidden,
                     derive_seed(cfg.seed, 0x2000 + seed_tag));
  ParamBlock velocity = ParamBlock::zeros_like(model.params);
  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(
        cfg.seed, 0x3000 + seed_tag * 1000 + static_cast<std::uint64_t>(epoch)));
    const auto batches = epoch_batches(train.n(), cfg.batch_size, shuffle_rng);
    SgdConfig inner_cfg = cfg.inner;
    inner_cfg.lr = epoch_lr(cfg, epoch);
    for (const auto& batch_idx : batches) {
      const LabeledDataset batch = subset(train, batch_idx);
      const ForwardBackward fb = forward_backward(model, batch, s);
      check_divergence(fb.mean_loss, cfg.divergence_threshold, epoch);
      apply_sgd(model.params, velocity, fb.grad, inner_cfg);
    }
  }
  return model;
}

}  // namespace cap
