#include "cap/gmm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>
#include <thread>

#include "cap/errors.hpp"
#include "cap/rng.hpp"

namespace cap {

void GmmSpec::validate() const {
  if (mu.size() < 1) throw ConfigError("mu must be non-empty");
  if (!(mu.norm() > 0.0)) throw ConfigError("mu must be nonzero");
  if (!(sigma_plus > 0.0) || !(sigma_minus > 0.0)) {
    throw ConfigError("sigmas must be positive");
  }
  if (!(pi > 0.0) || pi > 0.5) {
    throw ConfigError("pi must lie in (0, 0.5]");
  }
  if (n < 2) throw ConfigError("need at least 2 samples");
}

GmmSample sample_gmm(const GmmSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  GmmSample s;
  s.x.resize(spec.n, spec.dim());
  s.y.resize(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    const int label = rng.uniform() < spec.pi ? 1 : -1;
    const double sd = label > 0 ? spec.sigma_plus : spec.sigma_minus;
    s.y[i] = label;
    for (int j = 0; j < spec.dim(); ++j) {
      s.x(i, j) = rng.normal(label * spec.mu[j], sd);
    }
  }
  return s;
}

LabeledDataset to_dataset(const GmmSample& sample) {
  LabeledDataset ds;
  ds.features = sample.x;
  ds.num_classes = 2;
  ds.labels.resize(static_cast<std::size_t>(sample.y.size()));
  for (Eigen::Index i = 0; i < sample.y.size(); ++i) {
    ds.labels[static_cast<std::size_t>(i)] = sample.y[i] > 0 ? 0 : 1;
  }
  return ds;
}

CsSvmSolution solve_cssvm(const Eigen::MatrixXd& x, const Eigen::VectorXi& y,
                          double delta, double tol, long max_iters,
                          const Eigen::VectorXd* warm_alpha) {
  const auto n = x.rows();
  if (y.size() != n || n < 2) throw ConfigError("bad problem size");
  if (!(delta > 0.0)) throw ConfigError("delta must be positive");
  if (!(tol > 0.0)) throw ConfigError("tol must be positive");
  bool has_pos = false, has_neg = false;
  Eigen::VectorXd m(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y[i] == 1) {
      has_pos = true;
      m[i] = delta;
    } else if (y[i] == -1) {
      has_neg = true;
      m[i] = 1.0;
    } else {
      throw ConfigError("labels must be +1 or -1");
    }
  }
  if (!has_pos || !has_neg) {
    throw NumericError("single-class sample: hard-margin problem unbounded");
  }

  CsSvmSolution sol;
  if (warm_alpha != nullptr) {
    if (warm_alpha->size() != n || (warm_alpha->array() < 0.0).any()) {
      throw ConfigError("warm start alpha has wrong size or negative entries");
    }
    sol.alpha = *warm_alpha;
  } else {
    sol.alpha = Eigen::VectorXd::Zero(n);
  }

  // Cached Gram matrix keeps each ascent iteration at O(n).
  const Eigen::MatrixXd gram = x * x.transpose();
  const Eigen::VectorXd yd = y.cast<double>();

  // F_i = y_i m_i - w^T x_i.  Optimality: there is a b with F_i <= b for all
  // y_i = +1 and F_i >= b for all y_i = -1, equal on support vectors.
  const auto refresh_f = [&](Eigen::VectorXd& f) {
    f = yd.cwiseProduct(m) - gram * yd.cwiseProduct(sol.alpha);
  };
  Eigen::VectorXd f(n);
  refresh_f(f);

  long it = 0;
  for (; it < max_iters; ++it) {
    if ((it & 0xfff) == 0xfff) refresh_f(f);  // undo incremental drift

    // First index: the largest F whose alpha may still move up.
    int up = -1;
    double f_up = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      if ((y[i] == 1 || sol.alpha[i] > 0.0) && f[i] > f_up) {
        f_up = f[i];
        up = static_cast<int>(i);
      }
    }
    // Partner: among indices that may move down and violate the pairing,
    // maximize the second-order gain (F_up - F_j)^2 / (2 ||x_up - x_j||^2).
    // The plain maximal-violating pair zigzags badly on ill-conditioned
    // Gram matrices; gain-based selection keeps iteration counts practical.
    int low = -1;
    double f_low = std::numeric_limits<double>::infinity();
    double best_gain = 0.0;
    int low_gain = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(y[i] == -1 || sol.alpha[i] > 0.0)) continue;
      if (f[i] < f_low) {
        f_low = f[i];
        low = static_cast<int>(i);
      }
      const double viol = f_up - f[i];
      if (viol > tol) {
        const double eta =
            gram(up, up) + gram(i, i) - 2.0 * gram(up, static_cast<int>(i));
        if (eta > 0.0) {
          const double gain = viol * viol / eta;
          if (gain > best_gain) {
            best_gain = gain;
            low_gain = static_cast<int>(i);
          }
        }
      }
    }
    if (up < 0 || low < 0 || f_up - f_low <= tol) break;
    if (low_gain >= 0) low = low_gain;

    const double denom =
        gram(up, up) + gram(low, low) - 2.0 * gram(up, low);
    if (denom <= 0.0) {
      throw NumericError("conflicting duplicate points: not separable");
    }
    // Ascent step along d alpha_up = y_up s, d alpha_low = -y_low s.
    double s = (f[up] - f[low]) / denom;
    if (y[up] == -1) s = std::min(s, sol.alpha[up]);
    if (y[low] == 1) s = std::min(s, sol.alpha[low]);
    if (!(s > 0.0)) {
      throw NumericError("stalled ascent step: not separable");
    }
    sol.alpha[up] += y[up] * s;
    sol.alpha[low] -= y[low] * s;
    f -= s * (gram.col(up) - gram.col(low));
  }
  if (it >= max_iters) {
    throw NumericError("cs-svm did not converge within " +
                       std::to_string(max_iters) + " iterations");
  }
  sol.iterations = it;
  sol.w = x.transpose() * yd.cwiseProduct(sol.alpha);
  refresh_f(f);

  // Offset from support vectors; F is constant across them at optimality.
  const double sv_eps = 1e-12;
  double f_sum = 0.0;
  int sv_count = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (sol.alpha[i] > sv_eps) {
      f_sum += f[i];
      ++sv_count;
    }
  }
  if (sv_count == 0) {
    throw NumericError("no support vectors found");
  }
  sol.b = f_sum / static_cast<double>(sv_count);

  double viol = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double slack = y[i] * (sol.w.dot(x.row(i)) + sol.b) - m[i];
    viol = std::max(viol, -slack);                     // primal feasibility
    if (sol.alpha[i] > sv_eps) {
      viol = std::max(viol, std::abs(slack));          // complementarity
    }
  }
  sol.kkt_violation = viol;
  return sol;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

BalancedErrorValue analytic_balanced_error(const Eigen::VectorXd& w, double b,
                                           const GmmSpec& spec) {
  spec.validate();
  if (w.size() != spec.mu.size()) {
    throw ConfigError("classifier dimension does not match mu");
  }
  const double wnorm = w.norm();
  if (!(wnorm > 0.0)) {
    throw NumericError("degenerate classifier: ||w|| = 0");
  }
  const double proj = spec.mu.dot(w);
  BalancedErrorValue out;
  out.err_plus = normal_cdf(-(proj + b) / (spec.sigma_plus * wnorm));
  out.err_minus = normal_cdf((b - proj) / (spec.sigma_minus * wnorm));
  out.balanced = 0.5 * (out.err_plus + out.err_minus);
  return out;
}

void SweepConfig::validate() const {
  if (pis.empty() || sigma_ratios.empty()) {
    throw ConfigError("sweep needs at least one pi and one sigma ratio");
  }
  for (double p : pis) {
    if (!(p > 0.0) || p > 0.5) throw ConfigError("pi must lie in (0, 0.5]");
  }
  for (double r : sigma_ratios) {
    if (!(r > 0.0)) throw ConfigError("sigma ratios must be positive");
  }
  for (double d : deltas) {
    if (!(d > 0.0)) throw ConfigError("deltas must be positive");
  }
  if (seeds < 1) throw ConfigError("seeds must be positive");
  if (n < 2 || dim < 1) throw ConfigError("bad sweep problem size");
  if (!(mu_norm > 0.0)) throw ConfigError("mu_norm must be positive");
  if (threads < 1) throw ConfigError("threads must be positive");
}

std::vector<double> default_delta_grid() {
  std::vector<double> grid;
  const double lo = std::log(0.5), hi = std::log(8.0);
  for (int i = 0; i < 30; ++i) {
    grid.push_back(std::exp(lo + (hi - lo) * static_cast<double>(i) / 29.0));
  }
  return grid;
}

std::vector<SweepRow> delta_sweep(const SweepConfig& cfg) {
  cfg.validate();
  const std::vector<double> deltas =
      cfg.deltas.empty() ? default_delta_grid() : cfg.deltas;

  struct Task {
    std::size_t pi_idx, ratio_idx, seed_idx;
  };
  std::vector<Task> tasks;
  for (std::size_t p = 0; p < cfg.pis.size(); ++p) {
    for (std::size_t r = 0; r < cfg.sigma_ratios.size(); ++r) {
      for (std::size_t s = 0; s < static_cast<std::size_t>(cfg.seeds); ++s) {
        tasks.push_back({p, r, s});
      }
    }
  }
  // results[task][delta] = analytic balanced error, NaN on failure.
  std::vector<std::vector<double>> results(tasks.size());
  const auto run_task = [&](std::size_t t) {
    const Task& task = tasks[t];
    GmmSpec spec;
    spec.mu = Eigen::VectorXd::Zero(cfg.dim);
    spec.mu[0] = cfg.mu_norm;
    spec.sigma_minus = 1.0;
    spec.sigma_plus = cfg.sigma_ratios[task.ratio_idx];
    spec.pi = cfg.pis[task.pi_idx];
    spec.n = cfg.n;
    const std::uint64_t cell_seed = derive_seed(
        cfg.seed, (task.pi_idx * cfg.sigma_ratios.size() + task.ratio_idx) *
                          static_cast<std::size_t>(cfg.seeds) +
                      task.seed_idx);
    std::vector<double>& row = results[t];
    row.assign(deltas.size(), std::numeric_limits<double>::quiet_NaN());
    GmmSample sample;
    try {
      sample = sample_gmm(spec, cell_seed);
    } catch (const NumericError&) {
      return;
    }
    Eigen::VectorXd warm;
    bool have_warm = false;
    for (std::size_t d = 0; d < deltas.size(); ++d) {
      try {
        const CsSvmSolution sol =
            solve_cssvm(sample.x, sample.y, deltas[d], 1e-9, 2000000,
                        have_warm ? &warm : nullptr);
        row[d] = analytic_balanced_error(sol.w, sol.b, spec).balanced;
        warm = sol.alpha;
        have_warm = true;
      } catch (const NumericError&) {
        // failure stays NaN and is counted during aggregation
      }
    }
  };

  if (cfg.threads <= 1) {
    for (std::size_t t = 0; t < tasks.size(); ++t) run_task(t);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < cfg.threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t t = next.fetch_add(1); t < tasks.size();
             t = next.fetch_add(1)) {
          run_task(t);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<SweepRow> rows;
  for (std::size_t p = 0; p < cfg.pis.size(); ++p) {
    for (std::size_t r = 0; r < cfg.sigma_ratios.size(); ++r) {
      std::size_t best_idx = 0;
      double best_mean = std::numeric_limits<double>::infinity();
      std::vector<SweepRow> block;
      for (std::size_t d = 0; d < deltas.size(); ++d) {
        double sum = 0.0, sum_sq = 0.0;
        int ok = 0, failures = 0;
        for (std::size_t t = 0; t < tasks.size(); ++t) {
          if (tasks[t].pi_idx != p || tasks[t].ratio_idx != r) continue;
          const double v = results[t][d];
          if (std::isnan(v)) {
            ++failures;
          } else {
            sum += v;
            sum_sq += v * v;
            ++ok;
          }
        }
        SweepRow row;
        row.pi = cfg.pis[p];
        row.sigma_ratio = cfg.sigma_ratios[r];
        row.delta = deltas[d];
        row.failures = failures;
        row.is_optimal = false;
        if (ok > 0) {
          row.rbal_mean = sum / ok;
          const double var =
              std::max(0.0, sum_sq / ok - row.rbal_mean * row.rbal_mean);
          row.rbal_sd = std::sqrt(var);
          if (row.rbal_mean < best_mean) {
            best_mean = row.rbal_mean;
            best_idx = d;
          }
        } else {
          row.rbal_mean = std::numeric_limits<double>::quiet_NaN();
          row.rbal_sd = std::numeric_limits<double>::quiet_NaN();
        }
        block.push_back(row);
      }
      if (std::isfinite(best_mean)) block[best_idx].is_optimal = true;
      rows.insert(rows.end(), block.begin(), block.end());
    }
  }
  return rows;
}

}  // namespace cap
