#include "cap/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cap/errors.hpp"

namespace cap {

std::string objective_kind_name(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kPlain: return "plain";
    case ObjectiveKind::kBalanced: return "balanced";
    case ObjectiveKind::kWeighted: return "weighted";
    case ObjectiveKind::kSdevCombo: return "sdev_combo";
    case ObjectiveKind::kCvar: return "cvar";
    case ObjectiveKind::kQuantile: return "quantile";
  }
  throw ConfigError("unknown objective kind");
}

ObjectiveKind objective_kind_from_name(const std::string& name) {
  if (name == "plain") return ObjectiveKind::kPlain;
  if (name == "balanced") return ObjectiveKind::kBalanced;
  if (name == "weighted") return ObjectiveKind::kWeighted;
  if (name == "sdev_combo") return ObjectiveKind::kSdevCombo;
  if (name == "cvar") return ObjectiveKind::kCvar;
  if (name == "quantile") return ObjectiveKind::kQuantile;
  throw ConfigError("unknown objective variant: " + name);
}

void ObjectiveSpec::validate(int num_classes) const {
  switch (kind) {
    case ObjectiveKind::kCvar:
    case ObjectiveKind::kQuantile:
      if (!(a > 0.0) || a > 1.0) {
        throw ConfigError("tail fraction a must lie in (0, 1]");
      }
      break;
    case ObjectiveKind::kSdevCombo:
      if (lambda < 0.0 || lambda > 1.0) {
        throw ConfigError("sdev_combo lambda must lie in [0, 1]");
      }
      break;
    case ObjectiveKind::kWeighted:
      if (weights.size() != num_classes) {
        throw ConfigError("weighted objective needs one weight per class");
      }
      for (Eigen::Index i = 0; i < weights.size(); ++i) {
        if (!(weights[i] > 0.0)) {
          throw ConfigError("weighted objective weights must be positive");
        }
      }
      break;
    default:
      break;
  }
}

int tail_rank(int num_classes, double a) {
  const int r = static_cast<int>(std::ceil(static_cast<double>(num_classes) * a));
  return std::min(std::max(r, 1), num_classes);
}

namespace {

// Class indices ordered worst error first; equal errors keep ascending
// class order so the ranking is deterministic.
std::vector<int> descending_order(const Eigen::VectorXd& v) {
  std::vector<int> idx(static_cast<std::size_t>(v.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return v[a] > v[b]; });
  return idx;
}

double population_sd(const Eigen::VectorXd& v) {
  // A constant vector has zero spread by definition; computing it through
  // the mean could leave rounding residue, so short-circuit.
  if ((v.array() == v[0]).all()) return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().mean());
}

}  // namespace

double eval_objective(const ClassErrorVector& errs, double plain_err,
                      const ObjectiveSpec& spec) {
  const int k = errs.k();
  spec.validate(k);
  for (int c = 0; c < k; ++c) {
    if (!errs.defined(c)) {
      throw ConfigError("class " + std::to_string(c) +
                        " error undefined (no support); objective not "
                        "evaluable");
    }
  }
  const Eigen::VectorXd e = Eigen::Map<const Eigen::VectorXd>(
      errs.errors.data(), static_cast<Eigen::Index>(errs.errors.size()));
  switch (spec.kind) {
    case ObjectiveKind::kPlain:
      return plain_err;
    case ObjectiveKind::kBalanced:
      return e.mean();
    case ObjectiveKind::kWeighted:
      // Elementwise product then the shared sum kernel: uniform weights
      // reduce to the balanced mean bit for bit.
      return (spec.weights.array() * e.array()).sum() / static_cast<double>(k);
    case ObjectiveKind::kSdevCombo:
      return spec.lambda * plain_err + (1.0 - spec.lambda) * population_sd(e);
    case ObjectiveKind::kCvar: {
      const int r = tail_rank(k, spec.a);
      if (r == k) return e.mean();  // full tail is the balanced mean
      const auto order = descending_order(e);
      double acc = 0.0;
      for (int i = 0; i < r; ++i) acc += e[order[static_cast<std::size_t>(i)]];
      return acc / static_cast<double>(r);
    }
    case ObjectiveKind::kQuantile: {
      const int r = tail_rank(k, spec.a);
      const auto order = descending_order(e);
      return e[order[static_cast<std::size_t>(r - 1)]];
    }
  }
  throw ConfigError("unknown objective kind");
}

double error_sdev(const ClassErrorVector& errs) {
  for (int c = 0; c < errs.k(); ++c) {
    if (!errs.defined(c)) {
      throw ConfigError("class error undefined; sdev not evaluable");
    }
  }
  const Eigen::VectorXd e = Eigen::Map<const Eigen::VectorXd>(
      errs.errors.data(), static_cast<Eigen::Index>(errs.errors.size()));
  return population_sd(e);
}

SurrogateValue surrogate_objective(const Eigen::VectorXd& per_class_losses,
                                   const ObjectiveSpec& spec,
                                   const Eigen::VectorXd& class_fractions) {
  const auto k = per_class_losses.size();
  spec.validate(static_cast<int>(k));
  if (class_fractions.size() != k) {
    throw ConfigError("class fractions do not match loss vector");
  }
  const Eigen::VectorXd& loss = per_class_losses;
  SurrogateValue out;
  out.grad = Eigen::VectorXd::Zero(k);
  switch (spec.kind) {
    case ObjectiveKind::kPlain:
      out.value = class_fractions.dot(loss);
      out.grad = class_fractions;
      return out;
    case ObjectiveKind::kBalanced:
      out.value = loss.mean();
      out.grad.setConstant(1.0 / static_cast<double>(k));
      return out;
    case ObjectiveKind::kWeighted:
      out.value =
          (spec.weights.array() * loss.array()).sum() / static_cast<double>(k);
      out.grad = spec.weights / static_cast<double>(k);
      return out;
    case ObjectiveKind::kSdevCombo: {
      const double mean = loss.mean();
      const double sd = population_sd(loss);
      out.value = spec.lambda * class_fractions.dot(loss) +
                  (1.0 - spec.lambda) * sd;
      out.grad = spec.lambda * class_fractions;
      if (sd > 1e-12) {
        out.grad +=
            (1.0 - spec.lambda) / (static_cast<double>(k) * sd) *
            (loss.array() - mean).matrix();
      }
      return out;
    }
    case ObjectiveKind::kCvar: {
      const int r = tail_rank(static_cast<int>(k), spec.a);
      const auto order = descending_order(loss);
      double acc = 0.0;
      for (int i = 0; i < r; ++i) {
        const int cls = order[static_cast<std::size_t>(i)];
        acc += loss[cls];
        out.grad[cls] = 1.0 / static_cast<double>(r);
      }
      out.value = r == static_cast<int>(k) ? loss.mean()
                                           : acc / static_cast<double>(r);
      return out;
    }
    case ObjectiveKind::kQuantile: {
      const int r = tail_rank(static_cast<int>(k), spec.a);
      const auto order = descending_order(loss);
      const int cls = order[static_cast<std::size_t>(r - 1)];
      out.value = loss[cls];
      out.grad[cls] = 1.0;
      return out;
    }
  }
  throw ConfigError("unknown objective kind");
}

}  // namespace cap
