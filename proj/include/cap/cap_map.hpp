#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cap/attributes.hpp"

namespace cap {

// Scalar basis functions applied elementwise to attribute values.  Identity
// is f(a) = a; the three power bases share one exponent parameter beta.
enum class BasisFn { kLog, kIdentity, kPowBeta, kPow2Beta, kPow4Beta };

constexpr double kDefaultBasisBeta = 0.075;

struct BasisSet {
  std::vector<BasisFn> functions;
  double beta = kDefaultBasisBeta;

  int m() const { return static_cast<int>(functions.size()); }

  void validate() const;
  // log, identity and the three powers beta / 2*beta / 4*beta.
  static BasisSet standard(double beta = kDefaultBasisBeta);
  static BasisSet identity_only();
  static BasisSet log_only();
};

std::string basis_fn_name(BasisFn fn);
BasisFn basis_fn_from_name(const std::string& name);

// Dictionary row k is the basis expansion of class k's attributes:
// all m basis values of attribute 0, then of attribute 1, and so on.
struct FeatureDictionary {
  Eigen::MatrixXd matrix;  // K x (m * n_attrs)
  std::vector<std::string> column_names;

  int k() const { return static_cast<int>(matrix.rows()); }
  int m_total() const { return static_cast<int>(matrix.cols()); }
};

// Inputs to logarithmic bases are clamped to [clamp_epsilon, inf) so the
// dictionary stays finite; other bases see the raw attribute values.
FeatureDictionary build_dictionary(const AttributeTable& attrs,
                                   const BasisSet& basis);

// One weight row per strategy vector, all of length m_total.
struct CapWeights {
  Eigen::VectorXd w_omega;
  Eigen::VectorXd w_l;
  Eigen::VectorXd w_delta;

  static CapWeights zero(int m_total);
};

struct StrategyVectors {
  Eigen::VectorXd omega;  // per-class loss weights
  Eigen::VectorXd l;      // additive adjustments
  Eigen::VectorXd delta;  // multiplicative adjustments

  int k() const { return static_cast<int>(omega.size()); }
  void validate() const;
  static StrategyVectors plain(int num_classes);
};

// Threshold below which the normalized sigmoid for delta degenerates to the
// constant vector 0.5.
constexpr double kDeltaNormEpsilon = 1e-12;

// omega = D w_omega, l = D w_l and
// delta = sigmoid(sqrt(K) * D w_delta / ||D w_delta||), with delta = 0.5
// componentwise when ||D w_delta|| falls below kDeltaNormEpsilon.
StrategyVectors strategies_from_weights(const FeatureDictionary& dict,
                                        const CapWeights& weights);

// Vector-Jacobian product of strategies_from_weights: pulls cotangents on
// (omega, l, delta) back to cotangents on the weight rows.
CapWeights strategies_vjp(const FeatureDictionary& dict,
                          const CapWeights& weights,
                          const StrategyVectors& upstream);

// Logit-adjustment baseline: l = gamma * log(pi), delta = 1, omega = 1.
// flip_sign negates l for comparison against the opposite sign convention
// that also appears in the wild.
StrategyVectors la_strategies(const Eigen::VectorXd& pi, double gamma,
                              bool flip_sign = false);

// Class-dependent temperature baseline: delta = pi^gamma, l = 0, omega = 1.
StrategyVectors cdt_strategies(const Eigen::VectorXd& pi, double gamma);

}  // namespace cap
