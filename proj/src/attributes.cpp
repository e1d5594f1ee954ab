#include "cap/attributes.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "cap/errors.hpp"

namespace cap {

void AttributeTable::validate() const {
  if (static_cast<int>(names.size()) != n_attrs()) {
    throw ConfigError("attribute table has " + std::to_string(n_attrs()) +
                      " columns but " + std::to_string(names.size()) +
                      " names");
  }
  if (k() < 2) {
    throw ConfigError("attribute table needs at least 2 classes");
  }
  if (clamp_epsilon <= 0.0) {
    throw ConfigError("clamp_epsilon must be positive");
  }
  if (!values.allFinite()) {
    throw ConfigError("attribute table contains non-finite values");
  }
}

AttributeTable AttributeTable::from_columns(
    std::vector<std::string> names, const std::vector<Eigen::VectorXd>& cols,
    double clamp_epsilon) {
  if (names.size() != cols.size() || cols.empty()) {
    throw ConfigError("attribute names/columns mismatch or empty");
  }
  AttributeTable t;
  t.names = std::move(names);
  t.clamp_epsilon = clamp_epsilon;
  const Eigen::Index k = cols.front().size();
  t.values.resize(k, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j].size() != k) {
      throw ConfigError("attribute column " + t.names[j] +
                        " has inconsistent length");
    }
    t.values.col(static_cast<Eigen::Index>(j)) = cols[j];
  }
  t.validate();
  return t;
}

Eigen::VectorXd freq_from_counts(const std::vector<std::int64_t>& counts) {
  std::int64_t total = 0;
  for (auto c : counts) {
    if (c < 0) throw ConfigError("negative class count");
    total += c;
  }
  if (total <= 0) throw ConfigError("class counts sum to zero");
  Eigen::VectorXd pi(static_cast<Eigen::Index>(counts.size()));
  for (std::size_t k = 0; k < counts.size(); ++k) {
    pi[static_cast<Eigen::Index>(k)] =
        static_cast<double>(counts[k]) / static_cast<double>(total);
  }
  return pi;
}

Eigen::VectorXd diff_from_errors(const ClassErrorVector& errs, double eps) {
  Eigen::VectorXd d(errs.k());
  for (int k = 0; k < errs.k(); ++k) {
    if (!errs.defined(k)) {
      throw ConfigError("class " + std::to_string(k) +
                        " error undefined (no support); cannot build "
                        "difficulty attribute");
    }
    d[k] = std::min(1.0, std::max(eps, errs.errors[static_cast<std::size_t>(k)]));
  }
  return d;
}

Eigen::VectorXd norm_from_classifier(const Eigen::MatrixXd& last_layer,
                                     double eps) {
  Eigen::VectorXd norms = last_layer.rowwise().norm();
  for (Eigen::Index k = 0; k < norms.size(); ++k) {
    if (norms[k] < eps) norms[k] = eps;
  }
  return norms;
}

Eigen::VectorXd weights_attribute(const Eigen::VectorXd& omega_test) {
  for (Eigen::Index k = 0; k < omega_test.size(); ++k) {
    if (!(omega_test[k] > 0.0)) {
      throw ConfigError("test-weight attribute must be strictly positive");
    }
  }
  return omega_test;
}

Eigen::VectorXd noise_attribute(const Eigen::VectorXd& ratios, double eps) {
  Eigen::VectorXd r = ratios;
  for (Eigen::Index k = 0; k < r.size(); ++k) {
    if (r[k] < 0.0 || r[k] >= 1.0) {
      throw ConfigError("noise ratios must lie in [0, 1)");
    }
    if (r[k] < eps) r[k] = eps;
  }
  return r;
}

AttributeTable identity_attribute(int num_classes) {
  AttributeTable t;
  t.values = Eigen::MatrixXd::Identity(num_classes, num_classes);
  t.names.reserve(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    t.names.push_back("onehot_" + std::to_string(k));
  }
  return t;
}

}  // namespace cap
