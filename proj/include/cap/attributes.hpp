#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cap/types.hpp"

namespace cap {

constexpr double kDefaultClampEpsilon = 1e-6;

// Per-class attribute table.  Row k holds the attribute values of class k;
// column j is one named attribute (frequency, difficulty, ...).
struct AttributeTable {
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // K x n
  double clamp_epsilon = kDefaultClampEpsilon;

  int k() const { return static_cast<int>(values.rows()); }
  int n_attrs() const { return static_cast<int>(values.cols()); }

  void validate() const;
  static AttributeTable from_columns(std::vector<std::string> names,
                                     const std::vector<Eigen::VectorXd>& cols,
                                     double clamp_epsilon = kDefaultClampEpsilon);
};

// Class frequencies from sample counts.  Counts must be non-negative with a
// positive total; the result sums to one.
Eigen::VectorXd freq_from_counts(const std::vector<std::int64_t>& counts);

// Difficulty attribute: validation error rates clamped to [eps, 1].  Throws
// when some class error is undefined (zero support).
Eigen::VectorXd diff_from_errors(const ClassErrorVector& errs,
                                 double eps = kDefaultClampEpsilon);

// Per-class norm of last-layer weight rows; zero rows are lifted to eps.
Eigen::VectorXd norm_from_classifier(const Eigen::MatrixXd& last_layer,
                                     double eps = kDefaultClampEpsilon);

// Deployment-time class weights, passed through unchanged (must be > 0).
Eigen::VectorXd weights_attribute(const Eigen::VectorXd& omega_test);

// Label-noise ratios clamped below by eps so log bases stay finite.
Eigen::VectorXd noise_attribute(const Eigen::VectorXd& ratios,
                                double eps = kDefaultClampEpsilon);

// K one-hot attributes; with the identity basis this yields the identity
// dictionary and per-class free parameters.
AttributeTable identity_attribute(int num_classes);

}  // namespace cap
