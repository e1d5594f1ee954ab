#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "cap/types.hpp"

namespace cap {

// Long-tailed Gaussian mixture: class k is N(mean_scale * e_k, sigma_k^2 I)
// with geometrically decaying sample counts.
struct LongTailSpec {
  int num_classes = 10;
  int dim = 10;
  int n_max = 100;
  double rho = 100.0;       // imbalance ratio n_max / n_min
  double mean_scale = 1.0;
  Eigen::VectorXd sigma;    // per-class standard deviations; empty = all ones
  std::uint64_t seed = 0;

  void validate() const;
};

// N_k = round(n_max * rho^(-k / (K - 1))), rounded half away from zero and
// floored at one sample.
std::vector<std::int64_t> longtail_counts(int num_classes, int n_max,
                                          double rho);

LabeledDataset make_longtail_gaussian(const LongTailSpec& spec);

// Same mixture with equal per-class counts; used for balanced test sets.
LabeledDataset make_balanced_gaussian(const LongTailSpec& spec, int per_class,
                                      std::uint64_t seed);

struct NoiseSpec {
  Eigen::VectorXd ratios;  // per-class flip probabilities in [0, 1)
  std::uint64_t seed = 0;
};

struct NoiseRecordEntry {
  int index;
  int old_label;
  int new_label;
};

struct NoisyDataset {
  LabeledDataset data;
  std::vector<NoiseRecordEntry> flips;
};

// Flips the label of each class-k sample with probability ratios[k]; the
// replacement is uniform over the other K - 1 classes.
NoisyDataset inject_label_noise(const LabeledDataset& ds,
                                const NoiseSpec& spec);

// Per-class flip ratios drawn uniformly from [0, 0.5).
Eigen::VectorXd random_noise_ratios(int num_classes, std::uint64_t seed);

}  // namespace cap
