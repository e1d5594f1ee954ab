#include "cap/cap_map.hpp"

#include <cmath>

#include "cap/errors.hpp"

namespace cap {

void BasisSet::validate() const {
  if (functions.empty()) throw ConfigError("basis set is empty");
  if (!(beta > 0.0)) throw ConfigError("basis beta must be positive");
}

BasisSet BasisSet::standard(double beta) {
  return BasisSet{{BasisFn::kLog, BasisFn::kIdentity, BasisFn::kPowBeta,
                   BasisFn::kPow2Beta, BasisFn::kPow4Beta},
                  beta};
}

BasisSet BasisSet::identity_only() {
  return BasisSet{{BasisFn::kIdentity}, kDefaultBasisBeta};
}

BasisSet BasisSet::log_only() {
  return BasisSet{{BasisFn::kLog}, kDefaultBasisBeta};
}

std::string basis_fn_name(BasisFn fn) {
  switch (fn) {
    case BasisFn::kLog: return "log";
    case BasisFn::kIdentity: return "identity";
    case BasisFn::kPowBeta: return "pow_beta";
    case BasisFn::kPow2Beta: return "pow_2beta";
    case BasisFn::kPow4Beta: return "pow_4beta";
  }
  throw ConfigError("unknown basis function");
}

BasisFn basis_fn_from_name(const std::string& name) {
  if (name == "log") return BasisFn::kLog;
  if (name == "identity") return BasisFn::kIdentity;
  if (name == "pow_beta") return BasisFn::kPowBeta;
  if (name == "pow_2beta") return BasisFn::kPow2Beta;
  if (name == "pow_4beta") return BasisFn::kPow4Beta;
  throw ConfigError("unknown basis function name: " + name);
}

namespace {

double apply_basis(BasisFn fn, double a, double beta, double clamp_eps) {
  switch (fn) {
    case BasisFn::kLog:
      return std::log(std::max(a, clamp_eps));
    case BasisFn::kIdentity:
      return a;
    case BasisFn::kPowBeta:
      return std::pow(a, beta);
    case BasisFn::kPow2Beta:
      return std::pow(a, 2.0 * beta);
    case BasisFn::kPow4Beta:
      return std::pow(a, 4.0 * beta);
  }
  throw ConfigError("unknown basis function");
}

}  // namespace

FeatureDictionary build_dictionary(const AttributeTable& attrs,
                                   const BasisSet& basis) {
  attrs.validate();
  basis.validate();
  const int k = attrs.k();
  const int n = attrs.n_attrs();
  const int m = basis.m();
  FeatureDictionary dict;
  dict.matrix.resize(k, static_cast<Eigen::Index>(m) * n);
  dict.column_names.reserve(static_cast<std::size_t>(m) * n);
  for (int j = 0; j < n; ++j) {
    for (int b = 0; b < m; ++b) {
      dict.column_names.push_back(attrs.names[static_cast<std::size_t>(j)] +
                                  ":" + basis_fn_name(basis.functions[b]));
    }
  }
  for (int row = 0; row < k; ++row) {
    for (int j = 0; j < n; ++j) {
      for (int b = 0; b < m; ++b) {
        dict.matrix(row, static_cast<Eigen::Index>(j) * m + b) =
            apply_basis(basis.functions[static_cast<std::size_t>(b)],
                        attrs.values(row, j), basis.beta, attrs.clamp_epsilon);
      }
    }
  }
  if (!dict.matrix.allFinite()) {
    throw NumericError("feature dictionary contains non-finite entries");
  }
  return dict;
}

CapWeights CapWeights::zero(int m_total) {
  CapWeights w;
  w.w_omega = Eigen::VectorXd::Zero(m_total);
  w.w_l = Eigen::VectorXd::Zero(m_total);
  w.w_delta = Eigen::VectorXd::Zero(m_total);
  return w;
}

void StrategyVectors::validate() const {
  if (omega.size() != l.size() || omega.size() != delta.size()) {
    throw ConfigError("strategy vectors have inconsistent lengths");
  }
  if (!omega.allFinite() || !l.allFinite() || !delta.allFinite()) {
    throw ConfigError("strategy vectors contain non-finite values");
  }
  for (Eigen::Index i = 0; i < omega.size(); ++i) {
    if (omega[i] < 0.0) throw ConfigError("omega must be non-negative");
    if (delta[i] <= 0.0 || delta[i] > 1.0) {
      throw ConfigError("delta must lie in (0, 1]");
    }
  }
}

StrategyVectors StrategyVectors::plain(int num_classes) {
  StrategyVectors s;
  s.omega = Eigen::VectorXd::Ones(num_classes);
  s.l = Eigen::VectorXd::Zero(num_classes);
  s.delta = Eigen::VectorXd::Ones(num_classes);
  return s;
}

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

StrategyVectors strategies_from_weights(const FeatureDictionary& dict,
                                        const CapWeights& weights) {
  const auto m = dict.matrix.cols();
  if (weights.w_omega.size() != m || weights.w_l.size() != m ||
      weights.w_delta.size() != m) {
    throw ConfigError("weight rows do not match dictionary width");
  }
  StrategyVectors s;
  s.omega = dict.matrix * weights.w_omega;
  s.l = dict.matrix * weights.w_l;
  const Eigen::VectorXd u = dict.matrix * weights.w_delta;
  const double norm = u.norm();
  const auto k = dict.matrix.rows();
  s.delta.resize(k);
  if (norm < kDeltaNormEpsilon) {
    s.delta.setConstant(0.5);
  } else {
    const double scale = std::sqrt(static_cast<double>(k)) / norm;
    for (Eigen::Index i = 0; i < k; ++i) {
      s.delta[i] = sigmoid(scale * u[i]);
    }
  }
  return s;
}

CapWeights strategies_vjp(const FeatureDictionary& dict,
                          const CapWeights& weights,
                          const StrategyVectors& upstream) {
  const Eigen::MatrixXd& d = dict.matrix;
  CapWeights grad;
  grad.w_omega = d.transpose() * upstream.omega;
  grad.w_l = d.transpose() * upstream.l;
  const Eigen::VectorXd u = d * weights.w_delta;
  const double norm = u.norm();
  if (norm < kDeltaNormEpsilon) {
    // Degenerate branch emits the constant 0.5 vector, so no gradient flows.
    grad.w_delta = Eigen::VectorXd::Zero(d.cols());
    return grad;
  }
  const auto k = d.rows();
  const double sqrt_k = std::sqrt(static_cast<double>(k));
  const double scale = sqrt_k / norm;
  // s_i = delta_bar_i * sigmoid'(scale * u_i).
  Eigen::VectorXd s(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double sig = sigmoid(scale * u[i]);
    s[i] = upstream.delta[i] * sig * (1.0 - sig);
  }
  // d(scale * u)/du = (sqrt(K)/||u||) (I - uhat uhat^T).
  const Eigen::VectorXd uhat = u / norm;
  const Eigen::VectorXd ubar = scale * (s - uhat * uhat.dot(s));
  grad.w_delta = d.transpose() * ubar;
  return grad;
}

StrategyVectors la_strategies(const Eigen::VectorXd& pi, double gamma,
                              bool flip_sign) {
  for (Eigen::Index i = 0; i < pi.size(); ++i) {
    if (!(pi[i] > 0.0)) throw ConfigError("class priors must be positive");
  }
  StrategyVectors s = StrategyVectors::plain(static_cast<int>(pi.size()));
  const double sign = flip_sign ? -1.0 : 1.0;
  s.l = sign * gamma * pi.array().log().matrix();
  return s;
}

StrategyVectors cdt_strategies(const Eigen::VectorXd& pi, double gamma) {
  for (Eigen::Index i = 0; i < pi.size(); ++i) {
    if (!(pi[i] > 0.0)) throw ConfigError("class priors must be positive");
  }
  StrategyVectors s = StrategyVectors::plain(static_cast<int>(pi.size()));
  for (Eigen::Index i = 0; i < pi.size(); ++i) {
    s.delta[i] = std::pow(pi[i], gamma);
  }
  return s;
}

}  // namespace cap
