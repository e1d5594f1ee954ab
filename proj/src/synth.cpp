#include "cap/synth.hpp"

#include <cmath>
#include <string>

#include "cap/errors.hpp"
#include "cap/rng.hpp"

namespace cap {

void LongTailSpec::validate() const {
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (dim < num_classes) {
    throw ConfigError("dim must be >= num_classes so class means stay "
                      "orthogonal (got dim " + std::to_string(dim) + ", K " +
                      std::to_string(num_classes) + ")");
  }
  if (n_max < 1) throw ConfigError("n_max must be positive");
  if (!(rho >= 1.0)) throw ConfigError("rho must be >= 1");
  if (!(mean_scale > 0.0)) throw ConfigError("mean_scale must be positive");
  if (sigma.size() != 0 && sigma.size() != num_classes) {
    throw ConfigError("sigma must be empty or one entry per class");
  }
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw ConfigError("sigma entries must be positive");
  }
}

std::vector<std::int64_t> longtail_counts(int num_classes, int n_max,
                                          double rho) {
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (!(rho >= 1.0)) throw ConfigError("rho must be >= 1");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    const double frac =
        static_cast<double>(k) / static_cast<double>(num_classes - 1);
    const double raw = static_cast<double>(n_max) * std::pow(rho, -frac);
    counts[static_cast<std::size_t>(k)] =
        std::max<std::int64_t>(1, static_cast<std::int64_t>(std::round(raw)));
  }
  return counts;
}

namespace {

LabeledDataset sample_gaussian_classes(const LongTailSpec& spec,
                                       const std::vector<std::int64_t>& counts,
                                       std::uint64_t seed) {
  std::int64_t total = 0;
  for (auto c : counts) total += c;
  LabeledDataset ds;
  ds.num_classes = spec.num_classes;
  ds.features.resize(total, spec.dim);
  ds.labels.reserve(static_cast<std::size_t>(total));
  Rng rng(seed);
  Eigen::Index row = 0;
  for (int k = 0; k < spec.num_classes; ++k) {
    const double sd = spec.sigma.size() ? spec.sigma[k] : 1.0;
    for (std::int64_t i = 0; i < counts[static_cast<std::size_t>(k)]; ++i) {
      for (int j = 0; j < spec.dim; ++j) {
        const double mean = (j == k) ? spec.mean_scale : 0.0;
        ds.features(row, j) = rng.normal(mean, sd);
      }
      ds.labels.push_back(k);
      ++row;
    }
  }
  return ds;
}

}  // namespace

LabeledDataset make_longtail_gaussian(const LongTailSpec& spec) {
  spec.validate();
  return sample_gaussian_classes(
      spec, longtail_counts(spec.num_classes, spec.n_max, spec.rho), spec.seed);
}

LabeledDataset make_balanced_gaussian(const LongTailSpec& spec, int per_class,
                                      std::uint64_t seed) {
  spec.validate();
  if (per_class < 1) throw ConfigError("per_class must be positive");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(spec.num_classes),
                                   per_class);
  return sample_gaussian_classes(spec, counts, seed);
}

NoisyDataset inject_label_noise(const LabeledDataset& ds,
                                const NoiseSpec& spec) {
  ds.validate();
  if (spec.ratios.size() != ds.num_classes) {
    throw ConfigError("noise ratios must have one entry per class");
  }
  for (Eigen::Index i = 0; i < spec.ratios.size(); ++i) {
    if (spec.ratios[i] < 0.0 || spec.ratios[i] >= 1.0) {
      throw ConfigError("noise ratios must lie in [0, 1)");
    }
  }
  NoisyDataset out;
  out.data = ds;
  Rng rng(spec.seed);
  const int k = ds.num_classes;
  for (std::size_t i = 0; i < out.data.labels.size(); ++i) {
    const int y = out.data.labels[i];
    if (rng.uniform() < spec.ratios[y]) {
      // Uniform over the other K - 1 labels.
      const int draw = static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(k - 1)));
      const int fresh = draw >= y ? draw + 1 : draw;
      out.flips.push_back({static_cast<int>(i), y, fresh});
      out.data.labels[i] = fresh;
    }
  }
  return out;
}

Eigen::VectorXd random_noise_ratios(int num_classes, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd r(num_classes);
  for (int k = 0; k < num_classes; ++k) r[k] = rng.uniform(0.0, 0.5);
  return r;
}

}  // namespace cap
