#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

namespace cap {

// Labeled feature matrix.  Rows are samples, labels are class indices in
// [0, num_classes).
struct LabeledDataset {
  Eigen::MatrixXd features;  // N x d
  std::vector<int> labels;   // length N
  int num_classes = 0;

  int n() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }

  // Throws ConfigError when labels are out of range or sizes disagree.
  void validate() const;
};

// Per-sample scores, one column per class.  Labels are optional so the same
// container carries both labeled validation logits and raw model output.
struct LogitMatrix {
  Eigen::MatrixXd values;  // N x K
  std::optional<std::vector<int>> labels;

  int n() const { return static_cast<int>(values.rows()); }
  int k() const { return static_cast<int>(values.cols()); }

  void validate() const;
};

// Class-conditional 0/1 error rates.  errors[k] is meaningful only when
// support[k] > 0; callers must consult defined() instead of relying on the
// placeholder value.
struct ClassErrorVector {
  std::vector<double> errors;
  std::vector<std::int64_t> support;

  int k() const { return static_cast<int>(errors.size()); }
  bool defined(int cls) const { return support[static_cast<std::size_t>(cls)] > 0; }
  bool all_defined() const;
};

struct SplitIndices {
  std::vector<int> train_idx;
  std::vector<int> val_idx;
};

// Argmax decision per row, ties resolved toward the smaller class index.
// Throws NumericError naming the first row that contains a non-finite score.
std::vector<int> predict_argmax(const Eigen::MatrixXd& logits);

ClassErrorVector class_conditional_errors(const std::vector<int>& predictions,
                                          const std::vector<int>& labels,
                                          int num_classes);

// Plain (frequency-weighted) error rate.
double plain_error(const std::vector<int>& predictions,
                   const std::vector<int>& labels);

// Deterministic stratified split: per class, floor(count * val_fraction)
// samples go to validation.  Throws ConfigError if some class ends up with no
// training sample.
SplitIndices stratified_split(const std::vector<int>& labels, int num_classes,
                              double val_fraction, std::uint64_t seed);

std::vector<std::int64_t> class_counts(const std::vector<int>& labels,
                                       int num_classes);

LabeledDataset subset(const LabeledDataset& ds, const std::vector<int>& idx);

}  // namespace cap
