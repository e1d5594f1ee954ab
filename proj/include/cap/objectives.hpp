#pragma once

#include <Eigen/Dense>
#include <string>

#include "cap/types.hpp"

namespace cap {

enum class ObjectiveKind {
  kPlain,
  kBalanced,
  kWeighted,
  kSdevCombo,
  kCvar,
  kQuantile,
};

std::string objective_kind_name(ObjectiveKind kind);
ObjectiveKind objective_kind_from_name(const std::string& name);

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::kBalanced;
  double a = 0.2;           // tail fraction for cvar / quantile
  double lambda = 0.5;      // mix for sdev_combo
  Eigen::VectorXd weights;  // per-class weights for weighted

  void validate(int num_classes) const;
};

// Number of tail classes covered by cvar / quantile: ceil(K * a), in [1, K].
int tail_rank(int num_classes, double a);

// Evaluates the target objective on per-class 0/1 errors.  All class errors
// must be defined; plain_err is the frequency-weighted error of the same
// predictions.
double eval_objective(const ClassErrorVector& errs, double plain_err,
                      const ObjectiveSpec& spec);

// Population standard deviation of the per-class errors.
double error_sdev(const ClassErrorVector& errs);

struct SurrogateValue {
  double value = 0.0;
  Eigen::VectorXd grad;  // d value / d per_class_losses
};

// Differentiable surrogate: the objective formula applied to per-class mean
// validation losses instead of 0/1 errors.  class_fractions supplies the
// per-class sample fractions that the plain component weights by; the
// sdev_combo mix uses it for its plain part as well.
SurrogateValue surrogate_objective(const Eigen::VectorXd& per_class_losses,
                                   const ObjectiveSpec& spec,
                                   const Eigen::VectorXd& class_fractions);

}  // namespace cap
