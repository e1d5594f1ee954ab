#include "cap/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cap/errors.hpp"
#include "cap/rng.hpp"

namespace cap {

void LabeledDataset::validate() const {
  if (num_classes < 2) {
    throw ConfigError("dataset needs at least 2 classes, got " +
                      std::to_string(num_classes));
  }
  if (static_cast<int>(labels.size()) != n()) {
    throw ConfigError("dataset has " + std::to_string(n()) + " rows but " +
                      std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ConfigError("label " + std::to_string(labels[i]) + " at row " +
                        std::to_string(i) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
  }
}

void LogitMatrix::validate() const {
  if (labels && static_cast<int>(labels->size()) != n()) {
    throw ConfigError("logit matrix has " + std::to_string(n()) +
                      " rows but " + std::to_string(labels->size()) +
                      " labels");
  }
}

bool ClassErrorVector::all_defined() const {
  return std::all_of(support.begin(), support.end(),
                     [](std::int64_t s) { return s > 0; });
}

std::vector<int> predict_argmax(const Eigen::MatrixXd& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    double best_val = logits(i, 0);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double v = logits(i, j);
      if (!std::isfinite(v)) {
        throw NumericError("non-finite logit in row " + std::to_string(i));
      }
      if (v > best_val) {
        best_val = v;
        best = static_cast<int>(j);
      }
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

ClassErrorVector class_conditional_errors(const std::vector<int>& predictions,
                                          const std::vector<int>& labels,
                                          int num_classes) {
  if (predictions.size() != labels.size()) {
    throw ConfigError("predictions/labels length mismatch");
  }
  ClassErrorVector out;
  out.errors.assign(static_cast<std::size_t>(num_classes), 0.0);
  out.support.assign(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::int64_t> wrong(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ConfigError("label outside class range at row " +
                        std::to_string(i));
    }
    out.support[y] += 1;
    if (predictions[i] != labels[i]) wrong[y] += 1;
  }
  for (int k = 0; k < num_classes; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    if (out.support[uk] > 0) {
      out.errors[uk] = static_cast<double>(wrong[uk]) /
                       static_cast<double>(out.support[uk]);
    }
  }
  return out;
}

double plain_error(const std::vector<int>& predictions,
                   const std::vector<int>& labels) {
  if (predictions.size() != labels.size() || labels.empty()) {
    throw ConfigError("predictions/labels length mismatch or empty");
  }
  std::int64_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] != labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

SplitIndices stratified_split(const std::vector<int>& labels, int num_classes,
                              double val_fraction, std::uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw ConfigError("val_fraction must lie in [0, 1)");
  }
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ConfigError("label outside class range at row " +
                        std::to_string(i));
    }
    by_class[static_cast<std::size_t>(labels[i])].push_back(
        static_cast<int>(i));
  }
  Rng rng(seed);
  SplitIndices out;
  for (int k = 0; k < num_classes; ++k) {
    auto& idx = by_class[static_cast<std::size_t>(k)];
    rng.shuffle(idx);
    const auto n_val = static_cast<std::size_t>(
        std::floor(static_cast<double>(idx.size()) * val_fraction));
    const std::size_t n_train = idx.size() - n_val;
    if (n_train < 1) {
      throw ConfigError("class " + std::to_string(k) +
                        " has no training sample after split");
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < n_val ? out.val_idx : out.train_idx).push_back(idx[i]);
    }
  }
  std::sort(out.train_idx.begin(), out.train_idx.end());
  std::sort(out.val_idx.begin(), out.val_idx.end());
  return out;
}

std::vector<std::int64_t> class_counts(const std::vector<int>& labels,
                                       int num_classes) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw ConfigError("label outside class range");
    }
    counts[static_cast<std::size_t>(y)] += 1;
  }
  return counts;
}

LabeledDataset subset(const LabeledDataset& ds, const std::vector<int>& idx) {
  LabeledDataset out;
  out.num_classes = ds.num_classes;
  out.features.resize(static_cast<Eigen::Index>(idx.size()), ds.features.cols());
  out.labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(idx[i]);
    out.labels[i] = ds.labels[static_cast<std::size_t>(idx[i])];
  }
  return out;
}

}  // namespace cap
