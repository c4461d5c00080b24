#include "evalsuite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace selfe {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense linear assignment (Jonker-Volgenant): column reduction, augmenting
// row reduction, then shortest augmenting paths. Returns the minimal total
// cost and the row -> column assignment. Row-major cost storage keeps the
// row scans contiguous.
//
// Two floating-point hardenings over the textbook routine: the augmenting
// row reduction takes its dual-update branch only when the update is
// representable (identical points otherwise cycle on a vanishing update),
// and each pass carries a work budget; rows past the budget fall through to
// the augmentation phase, which handles them unconditionally.
double lap_solve(const MatRM& cost, std::vector<int>& rowsol) {
  const int n = static_cast<int>(cost.rows());
  rowsol.assign(static_cast<size_t>(n), -1);
  std::vector<int> colsol(static_cast<size_t>(n), -1);
  std::vector<double> v(static_cast<size_t>(n), 0.0);
  std::vector<int> free_rows(static_cast<size_t>(n), 0), collist(static_cast<size_t>(n), 0),
      matches(static_cast<size_t>(n), 0), pred(static_cast<size_t>(n), 0);
  std::vector<double> d(static_cast<size_t>(n), 0.0);

  // column reduction
  for (int j = n - 1; j >= 0; --j) {
    double min_c = cost(0, j);
    int imin = 0;
    for (int i = 1; i < n; ++i)
      if (cost(i, j) < min_c) { min_c = cost(i, j); imin = i; }
    v[static_cast<size_t>(j)] = min_c;
    if (++matches[static_cast<size_t>(imin)] == 1) {
      rowsol[static_cast<size_t>(imin)] = j;
      colsol[static_cast<size_t>(j)] = imin;
    } else {
      colsol[static_cast<size_t>(j)] = -1;
    }
  }

  // reduction transfer
  int numfree = 0;
  for (int i = 0; i < n; ++i) {
    if (matches[static_cast<size_t>(i)] == 0) {
      free_rows[static_cast<size_t>(numfree++)] = i;
    } else if (matches[static_cast<size_t>(i)] == 1 && n > 1) {
      int j1 = rowsol[static_cast<size_t>(i)];
      double min_r = std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j)
        if (j != j1) min_r = std::min(min_r, cost(i, j) - v[static_cast<size_t>(j)]);
      v[static_cast<size_t>(j1)] -= min_r;
    }
  }

  // augmenting row reduction, two passes
  for (int loop = 0; loop < 2; ++loop) {
    int k = 0;
    int prevnumfree = numfree;
    numfree = 0;
    long budget = 8L * prevnumfree + 16;
    while (k < prevnumfree) {
      if (--budget < 0) break;
      int i = free_rows[static_cast<size_t>(k++)];
      double umin = cost(i, 0) - v[0], usubmin = std::numeric_limits<double>::infinity();
      int j1 = 0, j2 = -1;
      for (int j = 1; j < n; ++j) {
        double h = cost(i, j) - v[static_cast<size_t>(j)];
        if (h < usubmin) {
          if (h >= umin) {
            usubmin = h;
            j2 = j;
          } else {
            usubmin = umin;
            umin = h;
            j2 = j1;
            j1 = j;
          }
        }
      }
      int i0 = colsol[static_cast<size_t>(j1)];
      bool strict = umin < usubmin && v[static_cast<size_t>(j1)] - (usubmin - umin) !=
                                          v[static_cast<size_t>(j1)];
      if (strict) {
        v[static_cast<size_t>(j1)] -= usubmin - umin;
      } else if (i0 >= 0 && j2 >= 0) {
        j1 = j2;
        i0 = colsol[static_cast<size_t>(j1)];
      }
      rowsol[static_cast<size_t>(i)] = j1;
      colsol[static_cast<size_t>(j1)] = i;
      if (i0 >= 0) {
        if (strict) {
          free_rows[static_cast<size_t>(--k)] = i0;
        } else {
          free_rows[static_cast<size_t>(numfree++)] = i0;
        }
      }
    }
    while (k < prevnumfree) free_rows[static_cast<size_t>(numfree++)] = free_rows[static_cast<size_t>(k++)];
  }

  // shortest augmenting paths for the remaining free rows
  for (int f = 0; f < numfree; ++f) {
    int freerow = free_rows[static_cast<size_t>(f)];
    for (int j = 0; j < n; ++j) {
      d[static_cast<size_t>(j)] = cost(freerow, j) - v[static_cast<size_t>(j)];
      pred[static_cast<size_t>(j)] = freerow;
      collist[static_cast<size_t>(j)] = j;
    }
    int low = 0, up = 0, last = -1, endofpath = -1;
    double min_d = 0.0;
    bool unassigned_found = false;
    do {
      if (up == low) {
        last = low - 1;
        min_d = d[static_cast<size_t>(collist[static_cast<size_t>(up++)])];
        for (int k = up; k < n; ++k) {
          int j = collist[static_cast<size_t>(k)];
          double h = d[static_cast<size_t>(j)];
          if (h <= min_d) {
            if (h < min_d) {
              up = low;
              min_d = h;
            }
            collist[static_cast<size_t>(k)] = collist[static_cast<size_t>(up)];
            collist[static_cast<size_t>(up++)] = j;
          }
        }
        for (int k = low; k < up; ++k) {
          int j = collist[static_cast<size_t>(k)];
          if (colsol[static_cast<size_t>(j)] < 0) {
            endofpath = j;
            unassigned_found = true;
            break;
          }
        }
      }
      if (!unassigned_found) {
        int j1 = collist[static_cast<size_t>(low++)];
        int i = colsol[static_cast<size_t>(j1)];
        double h = cost(i, j1) - v[static_cast<size_t>(j1)] - min_d;
        for (int k = up; k < n; ++k) {
          int j = collist[static_cast<size_t>(k)];
          double v2 = cost(i, j) - v[static_cast<size_t>(j)] - h;
          if (v2 < d[static_cast<size_t>(j)]) {
            pred[static_cast<size_t>(j)] = i;
            if (v2 == min_d) {
              if (colsol[static_cast<size_t>(j)] < 0) {
                endofpath = j;
                unassigned_found = true;
                break;
              }
              collist[static_cast<size_t>(k)] = collist[static_cast<size_t>(up)];
              collist[static_cast<size_t>(up++)] = j;
            }
            d[static_cast<size_t>(j)] = v2;
          }
        }
      }
    } while (!unassigned_found);
    for (int k = 0; k <= last; ++k) {
      int j1 = collist[static_cast<size_t>(k)];
      v[static_cast<size_t>(j1)] += d[static_cast<size_t>(j1)] - min_d;
    }
    int i;
    do {
      i = pred[static_cast<size_t>(endofpath)];
      colsol[static_cast<size_t>(endofpath)] = i;
      int j1 = rowsol[static_cast<size_t>(i)];
      rowsol[static_cast<size_t>(i)] = endofpath;
      endofpath = j1;
    } while (i != freerow);
  }

  double total = 0.0;
  for (int i = 0; i < n; ++i) total += cost(i, rowsol[static_cast<size_t>(i)]);
  return total;
}

MatRM pairwise_sq(const MatXd& a, const MatXd& b) {
  VecXd an = a.rowwise().squaredNorm(), bn = b.rowwise().squaredNorm();
  MatRM c = -2.0 * (a * b.transpose());
  c.colwise() += an;
  c.rowwise() += bn.transpose();
  return c.cwiseMax(0.0);
}

W2Info sinkhorn_w2(const MatXd& a, const MatXd& b) {
  const Eigen::Index n = a.rows();
  MatXd c = pairwise_sq(a, b);  // column-major is fine for the scaling loops
  double eps = std::max(0.05 * c.mean(), 1e-9);
  VecXd f = VecXd::Zero(n), g = VecXd::Zero(n);
  const double log_a = -std::log(static_cast<double>(n));
  auto lse_rows = [&](const MatXd& m) {  // log-sum-exp over columns, per row
    VecXd mx = m.rowwise().maxCoeff();
    return (mx.array() + ((m.colwise() - mx).array().exp().rowwise().sum()).log()).matrix().eval();
  };
  double marg_err = 1.0;
  for (int it = 0; it < 500 && marg_err > 1e-9; ++it) {
    MatXd mg = ((-c).rowwise() + g.transpose()) / eps;  // (g_j - C_ij)/eps
    f = eps * (VecXd::Constant(n, log_a) - lse_rows(mg));
    MatXd mf = ((-c).colwise() + f).transpose() / eps;  // (f_i - C_ij)/eps, transposed
    g = eps * (VecXd::Constant(n, log_a) - lse_rows(mf));
    if (it % 10 == 9) {
      MatXd logp = (((-c).colwise() + f).rowwise() + g.transpose()) / eps;
      VecXd row_mass = logp.array().exp().rowwise().sum();
      marg_err = (row_mass.array() - 1.0 / static_cast<double>(n)).abs().maxCoeff();
    }
  }
  MatXd logp = (((-c).colwise() + f).rowwise() + g.transpose()) / eps;
  double cost = (logp.array().exp() * c.array()).sum();
  return W2Info{std::sqrt(std::max(cost, 0.0)), false, eps};
}

}  // namespace

W2Info wasserstein2_info(const MatXd& a, const MatXd& b) {
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("wasserstein2: empty point set");
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("wasserstein2: point sets must have equal shape");
  const Eigen::Index n = a.rows();
  if (a.cols() == 1) {
    std::vector<double> xs(a.col(0).data(), a.col(0).data() + n);
    std::vector<double> ys(b.col(0).data(), b.col(0).data() + n);
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double dd = xs[static_cast<size_t>(i)] - ys[static_cast<size_t>(i)];
      acc += dd * dd;
    }
    return W2Info{std::sqrt(acc / static_cast<double>(n)), true, 0.0};
  }
  if (n > 4096) throw std::invalid_argument("wasserstein2: at most 4096 points");
  if (n <= 1024) {
    MatRM c = pairwise_sq(a, b);
    std::vector<int> rowsol;
    double total = lap_solve(c, rowsol);
    return W2Info{std::sqrt(std::max(total, 0.0) / static_cast<double>(n)), true, 0.0};
  }
  return sinkhorn_w2(a, b);
}

double wasserstein2(const MatXd& a, const MatXd& b) { return wasserstein2_info(a, b).value; }

double energy_distance(const MatXd& a, const MatXd& b) {
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("energy_distance: empty set");
  if (a.cols() != b.cols()) throw std::invalid_argument("energy_distance: dimension mismatch");
  auto mean_cross = [](const MatXd& x, const MatXd& y) {
    return pairwise_sq(x, y).cwiseSqrt().mean();
  };
  double v = 2.0 * mean_cross(a, b) - mean_cross(a, a) - mean_cross(b, b);
  return std::max(v, 0.0);
}

double bootstrap_w2_std(const MatXd& a, const MatXd& b, int resamples, Rng& rng) {
  if (resamples < 2) throw std::invalid_argument("bootstrap_w2_std: need at least 2 resamples");
  const Eigen::Index n = a.rows();
  MatXd ra(n, a.cols()), rb(n, b.cols());
  double mean = 0.0, m2 = 0.0;
  for (int r = 0; r < resamples; ++r) {
    for (Eigen::Index i = 0; i < n; ++i) ra.row(i) = a.row(rng.uniform_int(static_cast<int>(n)));
    for (Eigen::Index i = 0; i < n; ++i) rb.row(i) = b.row(rng.uniform_int(static_cast<int>(n)));
    double w = wasserstein2(ra, rb);
    double delta = w - mean;
    mean += delta / (r + 1);
    m2 += delta * (w - mean);
  }
  return std::sqrt(m2 / (resamples - 1));
}

std::vector<MetricCell> step_sweep(const SamplerFn& model, const std::string& model_name,
                                   const oracle::GmmCond& truth,
                                   const std::vector<int>& conditions,
                                   const std::vector<int>& steps, int n, std::uint64_t seed,
                                   int bootstrap_resamples) {
  std::vector<MetricCell> report;
  Rng root(seed);
  for (int c : conditions) {
    for (size_t si = 0; si < steps.size(); ++si) {
      int k = steps[si];
      std::uint64_t cell_salt = static_cast<std::uint64_t>(c) * 1009u + static_cast<std::uint64_t>(k);
      Rng oracle_rng = root.child(cell_salt * 2);
      Rng boot_rng = root.child(cell_salt * 2 + 1);
      std::uint64_t model_seed = seed ^ (cell_salt * 0x9e3779b97f4a7c15ull);
      auto t0 = std::chrono::steady_clock::now();
      MatXd got = model(c, k, n, model_seed);
      MatXd want = oracle::sample_ground_truth(truth, oracle_rng, n, ConditionToken::cls(c));
      W2Info w2 = wasserstein2_info(got, want);
      MetricCell cell;
      cell.model = model_name;
      cell.condition = c;
      cell.n_steps = k;
      cell.w2 = w2.value;
      cell.exact = w2.exact;
      cell.epsilon = w2.epsilon;
      cell.energy = energy_distance(got, want);
      cell.n = n;
      cell.seed = model_seed;
      cell.w2_floor = bootstrap_resamples > 1
                          ? bootstrap_w2_std(got, want, bootstrap_resamples, boot_rng)
                          : 0.0;
      cell.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      report.push_back(std::move(cell));
    }
  }
  return report;
}

std::vector<MonotonicityVerdict> monotonicity_check(const std::vector<MetricCell>& report,
                                                    double tolerance) {
  std::map<int, std::vector<const MetricCell*>> by_cond;
  for (const auto& c : report) by_cond[c.condition].push_back(&c);
  std::vector<MonotonicityVerdict> verdicts;
  for (auto& [cond, cells] : by_cond) {
    if (cells.size() < 3)
      throw std::invalid_argument("monotonicity_check: need at least 3 step counts");
    std::sort(cells.begin(), cells.end(),
              [](const MetricCell* a, const MetricCell* b) { return a->n_steps < b->n_steps; });
    MonotonicityVerdict v;
    v.condition = cond;
    v.ok = true;
    for (size_t i = 0; i + 1 < cells.size(); ++i) {
      double jump = cells[i + 1]->w2 - cells[i]->w2;
      double noise = std::sqrt(cells[i]->w2_floor * cells[i]->w2_floor +
                               cells[i + 1]->w2_floor * cells[i + 1]->w2_floor);
      double sigma = noise > 0 ? jump / noise : (jump > 0 ? std::numeric_limits<double>::infinity() : 0.0);
      v.worst_jump_sigma = std::max(v.worst_jump_sigma, sigma);
      if (jump > tolerance * noise) v.ok = false;
    }
    verdicts.push_back(v);
  }
  return verdicts;
}

AggregateW2 aggregate_w2(const std::vector<MetricCell>& report, int n_steps) {
  double sum = 0, var = 0;
  int count = 0;
  for (const auto& c : report) {
    if (c.n_steps != n_steps) continue;
    sum += c.w2;
    var += c.w2_floor * c.w2_floor;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("aggregate_w2: no cells at requested step count");
  return AggregateW2{sum / count, std::sqrt(var) / count};
}

}  // namespace selfe
