#pragma once

// Correlation coefficients with significance, LOWESS smoothing, and
// feature-by-rater correlation tables.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "sumfeat/common.hpp"
#include "sumfeat/corpus.hpp"

namespace sumfeat {

class StatsError : public Error {
 public:
  using Error::Error;
};

enum class CorrelationMethod { kPearson, kSpearman, kKendall };

inline constexpr std::array<CorrelationMethod, 3> kAllMethods = {
    CorrelationMethod::kPearson, CorrelationMethod::kSpearman,
    CorrelationMethod::kKendall};

inline std::string_view to_string(CorrelationMethod m) {
  switch (m) {
    case CorrelationMethod::kPearson:
      return "pearson";
    case CorrelationMethod::kSpearman:
      return "spearman";
    case CorrelationMethod::kKendall:
      return "kendall";
  }
  return "unknown";
}

/// Coefficient and two-sided p-value. A correlation with a zero-variance
/// input is undefined: `defined` is false and both numbers are NaN.
struct CorrelationResult {
  CorrelationMethod method = CorrelationMethod::kPearson;
  double coefficient = std::numeric_limits<double>::quiet_NaN();
  double p_value = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;
  bool defined = false;

  bool significant(double alpha = 0.05) const {
    return defined && p_value <= alpha;
  }
};

struct FeatureVector {
  std::string feature_name;
  std::vector<double> values;
};

struct RankStatistics {
  std::vector<double> ranks_x;
  std::vector<double> ranks_y;
  std::vector<double> rank_diffs;
  std::int64_t concordant = 0;
  std::int64_t discordant = 0;
};

namespace stats_detail {

inline void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw StatsError("length mismatch: " + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()));
  }
  if (x.size() < 3) {
    throw StatsError("correlation needs at least 3 pairs, got " +
                     std::to_string(x.size()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw StatsError("non-finite value at index " + std::to_string(i));
    }
  }
}

inline double clamp_unit(double r) { return std::clamp(r, -1.0, 1.0); }

/// Two-sided p-value of a correlation coefficient under the t-distribution
/// with n-2 degrees of freedom.
inline double t_test_p(double r, std::size_t n) {
  if (std::abs(r) >= 1.0) return 0.0;
  const double df = static_cast<double>(n) - 2.0;
  const double t = r * std::sqrt(df / ((1.0 - r) * (1.0 + r)));
  boost::math::students_t dist(df);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return std::clamp(p, 0.0, 1.0);
}

/// Pearson coefficient, or NaN when either side has zero variance.
inline double pearson_coefficient(std::span<const double> x,
                                  std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return clamp_unit(sxy / (std::sqrt(sxx) * std::sqrt(syy)));
}

inline bool all_equal(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double a) { return a == v[0]; });
}

/// Sum over tie groups of t(t-1)/2, t(t-1)(2t+5), t(t-1) and t(t-1)(t-2)
/// for a sorted sequence.
struct TieSums {
  std::int64_t pairs = 0;
  double v_t = 0;
  double t1 = 0;
  double t2 = 0;
};

inline TieSums tie_sums(std::vector<double> sorted) {
  std::sort(sorted.begin(), sorted.end());
  TieSums s;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const auto t = static_cast<std::int64_t>(j - i);
    const auto td = static_cast<double>(t);
    s.pairs += t * (t - 1) / 2;
    s.v_t += td * (td - 1) * (2 * td + 5);
    s.t1 += td * (td - 1);
    s.t2 += td * (td - 1) * (td - 2);
    i = j;
  }
  return s;
}

/// Counts inversions of `v` while merge-sorting it in place.
inline std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf,
                                std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo),
            buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

struct PairCounts {
  std::int64_t total = 0;      // n(n-1)/2
  std::int64_t tied_x = 0;     // pairs tied in x (including joint ties)
  std::int64_t tied_y = 0;     // pairs tied in y (including joint ties)
  std::int64_t tied_xy = 0;    // pairs tied in both
  std::int64_t discordant = 0;
  std::int64_t concordant = 0;
};

/// O(n log n) pair classification: sort by (x, y), then count y inversions.
inline PairCounts pair_counts(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  PairCounts c;
  c.total = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && x[order[j]] == x[order[i]]) ++j;
    const auto t = static_cast<std::int64_t>(j - i);
    c.tied_x += t * (t - 1) / 2;
    std::size_t a = i;
    while (a < j) {
      std::size_t b = a + 1;
      while (b < j && y[order[b]] == y[order[a]]) ++b;
      const auto u = static_cast<std::int64_t>(b - a);
      c.tied_xy += u * (u - 1) / 2;
      a = b;
    }
    i = j;
  }
  std::vector<double> ys(n);
  for (std::size_t k = 0; k < n; ++k) ys[k] = y[order[k]];
  std::vector<double> buf(n);
  c.discordant = merge_count(ys, buf, 0, n);
  // ys is now sorted.
  i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && ys[j] == ys[i]) ++j;
    const auto t = static_cast<std::int64_t>(j - i);
    c.tied_y += t * (t - 1) / 2;
    i = j;
  }
  c.concordant = c.total - c.tied_x - c.tied_y + c.tied_xy - c.discordant;
  return c;
}

}  // namespace stats_detail

/// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // Positions i..j-1 hold equal values; their 1-based mean rank.
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

inline CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
  stats_detail::check_pair(x, y);
  CorrelationResult r;
  r.method = CorrelationMethod::kPearson;
  r.n = x.size();
  const double rho = stats_detail::pearson_coefficient(x, y);
  if (std::isnan(rho)) return r;
  r.defined = true;
  r.coefficient = rho;
  r.p_value = stats_detail::t_test_p(rho, r.n);
  return r;
}

/// Pearson correlation of average ranks; tie-safe.
inline CorrelationResult spearman(std::span<const double> x, std::span<const double> y) {
  stats_detail::check_pair(x, y);
  CorrelationResult r;
  r.method = CorrelationMethod::kSpearman;
  r.n = x.size();
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double rho = stats_detail::pearson_coefficient(rx, ry);
  if (std::isnan(rho)) return r;
  r.defined = true;
  r.coefficient = rho;
  r.p_value = stats_detail::t_test_p(rho, r.n);
  return r;
}

/// The rank-difference shortcut 1 - 6 sum d^2 / (n (n^2 - 1)). Only valid
/// without ties; kept as a cross-check of spearman().
inline double spearman_rank_difference(std::span<const double> x,
                                       std::span<const double> y) {
  stats_detail::check_pair(x, y);
  auto has_ties = [](std::span<const double> v) {
    std::vector<double> s(v.begin(), v.end());
    std::sort(s.begin(), s.end());
    return std::adjacent_find(s.begin(), s.end()) != s.end();
  };
  if (has_ties(x) || has_ties(y)) {
    throw StatsError("rank-difference Spearman formula requires tie-free data");
  }
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  double d2 = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const auto n = static_cast<double>(x.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

/// Kendall's tau-b with a normal-approximation p-value using the
/// tie-corrected variance of C - D.
inline CorrelationResult kendall_tau(std::span<const double> x, std::span<const double> y) {
  stats_detail::check_pair(x, y);
  CorrelationResult r;
  r.method = CorrelationMethod::kKendall;
  r.n = x.size();
  if (stats_detail::all_equal(x) || stats_detail::all_equal(y)) return r;

  const auto c = stats_detail::pair_counts(x, y);
  const auto s = c.concordant - c.discordant;
  const auto untied_x = static_cast<double>(c.total - c.tied_x);
  const auto untied_y = static_cast<double>(c.total - c.tied_y);
  r.defined = true;
  r.coefficient = stats_detail::clamp_unit(static_cast<double>(s) /
                                           std::sqrt(untied_x * untied_y));

  const auto n = static_cast<double>(x.size());
  const auto tx = stats_detail::tie_sums(std::vector<double>(x.begin(), x.end()));
  const auto ty = stats_detail::tie_sums(std::vector<double>(y.begin(), y.end()));
  const double var = (n * (n - 1) * (2 * n + 5) - tx.v_t - ty.v_t) / 18.0 +
                     tx.t1 * ty.t1 / (2.0 * n * (n - 1)) +
                     tx.t2 * ty.t2 / (9.0 * n * (n - 1) * (n - 2));
  const double z = static_cast<double>(s) / std::sqrt(var);
  r.p_value = std::clamp(std::erfc(std::abs(z) / std::sqrt(2.0)), 0.0, 1.0);
  return r;
}

inline CorrelationResult correlate(CorrelationMethod method, std::span<const double> x,
                                   std::span<const double> y) {
  switch (method) {
    case CorrelationMethod::kPearson:
      return pearson(x, y);
    case CorrelationMethod::kSpearman:
      return spearman(x, y);
    case CorrelationMethod::kKendall:
      return kendall_tau(x, y);
  }
  throw StatsError("unknown correlation method");
}

inline RankStatistics rank_statistics(std::span<const double> x, std::span<const double> y) {
  stats_detail::check_pair(x, y);
  RankStatistics rs;
  rs.ranks_x = average_ranks(x);
  rs.ranks_y = average_ranks(y);
  rs.rank_diffs.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    rs.rank_diffs[i] = rs.ranks_x[i] - rs.ranks_y[i];
  }
  const auto c = stats_detail::pair_counts(x, y);
  rs.concordant = c.concordant;
  rs.discordant = c.discordant;
  return rs;
}

// ---------------------------------------------------------------------------
// LOWESS

struct LowessOptions {
  double fraction = 2.0 / 3.0;
  int iterations = 3;
};

namespace stats_detail {

inline double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace stats_detail

/// Locally weighted linear regression with tricube distance weights and
/// `iterations` bisquare robustness passes. Points are sorted internally by
/// (x, y), so the fitted value of each point does not depend on input order.
/// Returns fitted values aligned with the input.
inline std::vector<double> lowess(std::span<const double> x, std::span<const double> y,
                                  double fraction = 2.0 / 3.0, int iterations = 3) {
  const std::size_t n = x.size();
  if (y.size() != n) throw StatsError("lowess: length mismatch");
  if (n < 5) throw StatsError("lowess needs at least 5 points, got " + std::to_string(n));
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw StatsError("lowess fraction must be in (0, 1]");
  }
  if (iterations < 0) throw StatsError("lowess iterations must be >= 0");
  if (fraction * static_cast<double>(n) < 2.0) {
    throw StatsError("lowess window fraction*n must be at least 2");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw StatsError("lowess: non-finite input at index " + std::to_string(i));
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x[order[i]];
    ys[i] = y[order[i]];
  }
  // Fit y - y0 so that a constant response is reproduced exactly.
  const double offset = ys[0];
  for (double& v : ys) v -= offset;

  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-10)), 2, n);
  const double range = xs[n - 1] - xs[0];

  std::vector<double> robust(n, 1.0);
  std::vector<double> fitted(n, 0.0);
  std::size_t left = 0;
  for (int iter = 0; iter <= iterations; ++iter) {
    left = 0;
    for (std::size_t i = 0; i < n; ++i) {
      // Slide the k-point window [left, left+k) towards xs[i].
      while (left + k < n && xs[left + k] - xs[i] < xs[i] - xs[left]) ++left;
      std::size_t lo = left;
      std::size_t hi = left + k;  // exclusive
      const double h = std::max(xs[i] - xs[lo], xs[hi - 1] - xs[i]);
      if (h == 0.0) {
        // All window points sit at xs[i]; use the full block of equal x.
        while (lo > 0 && xs[lo - 1] == xs[i]) --lo;
        while (hi < n && xs[hi] == xs[i]) ++hi;
      }
      double sw = 0.0, sx = 0.0, sy = 0.0;
      std::vector<double> w(hi - lo, 0.0);
      for (std::size_t j = lo; j < hi; ++j) {
        double wt = 1.0;
        if (h > 0.0) {
          const double r = std::abs(xs[j] - xs[i]) / h;
          wt = r < 1.0 ? std::pow(1.0 - r * r * r, 3) : 0.0;
        }
        wt *= robust[j];
        w[j - lo] = wt;
        sw += wt;
        sx += wt * xs[j];
        sy += wt * ys[j];
      }
      if (sw <= 0.0) {
        fitted[i] = ys[i];
        continue;
      }
      const double xbar = sx / sw;
      const double ybar = sy / sw;
      double sxx = 0.0, sxy = 0.0;
      for (std::size_t j = lo; j < hi; ++j) {
        const double dx = xs[j] - xbar;
        sxx += w[j - lo] * dx * dx;
        sxy += w[j - lo] * dx * ys[j];
      }
      if (sxx <= 0.0 || std::sqrt(sxx / sw) <= 1e-7 * range) {
        fitted[i] = ybar;  // degenerate window: local weighted mean
      } else {
        fitted[i] = ybar + (sxy / sxx) * (xs[i] - xbar);
      }
    }
    if (iter == iterations) break;

    std::vector<double> abs_res(n);
    double mean_abs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      abs_res[i] = std::abs(ys[i] - fitted[i]);
      mean_abs += abs_res[i];
    }
    mean_abs /= static_cast<double>(n);
    const double cmad = 6.0 * stats_detail::median(abs_res);
    if (cmad < 1e-7 * mean_abs || cmad == 0.0) break;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = abs_res[i] / cmad;
      robust[i] = u < 1.0 ? (1.0 - u * u) * (1.0 - u * u) : 0.0;
    }
  }

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[order[i]] = fitted[i] + offset;
  return out;
}

/// Groups points into `bins` equal-count bins by ascending (x, y) and
/// returns each bin's mean x and mean y.
inline std::pair<std::vector<double>, std::vector<double>> quantile_bins(
    std::span<const double> x, std::span<const double> y, std::size_t bins) {
  const std::size_t n = x.size();
  if (y.size() != n) throw StatsError("quantile_bins: length mismatch");
  if (bins == 0 || bins > n) throw StatsError("quantile_bins: bins must be in [1, n]");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  std::vector<double> bx, by;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t lo = b * n / bins;
    const std::size_t hi = (b + 1) * n / bins;
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      sx += x[order[i]];
      sy += y[order[i]];
    }
    const auto m = static_cast<double>(hi - lo);
    bx.push_back(sx / m);
    by.push_back(sy / m);
  }
  return {bx, by};
}

// ---------------------------------------------------------------------------
// Correlation tables

/// Feature (rows) by rater (columns) correlations for one method. Rows are
/// ordered by descending coefficient in the `sort_key` column; undefined
/// cells sort last and ties fall back to feature name.
struct CorrelationTable {
  CorrelationMethod method = CorrelationMethod::kPearson;
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<std::vector<CorrelationResult>> cells;  // [row][column]
  std::string sort_key;

  std::size_t column_index(std::string_view rater) const {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (columns[c] == rater) return c;
    }
    throw StatsError("no rater column '" + std::string(rater) + "'");
  }
};

inline CorrelationTable correlation_table(std::span<const FeatureVector> features,
                                          std::span<const RatingVector> ratings,
                                          CorrelationMethod method,
                                          std::string_view sort_key) {
  if (features.empty()) throw StatsError("correlation table without features");
  if (ratings.empty()) throw StatsError("correlation table without raters");
  const std::size_t n = features.front().values.size();
  for (const auto& f : features) {
    if (f.values.size() != n) {
      throw StatsError("feature '" + f.feature_name + "' has " +
                       std::to_string(f.values.size()) + " values, expected " +
                       std::to_string(n));
    }
  }
  CorrelationTable table;
  table.method = method;
  table.sort_key = std::string(sort_key);
  for (const auto& r : ratings) {
    if (r.values.size() != n) {
      throw StatsError("rater '" + r.rater_id + "' has " + std::to_string(r.values.size()) +
                       " values, expected " + std::to_string(n));
    }
    table.columns.push_back(r.rater_id);
  }
  const std::size_t key = table.column_index(sort_key);

  struct Row {
    std::string name;
    std::vector<CorrelationResult> cells;
  };
  std::vector<Row> rows;
  for (const auto& f : features) {
    Row row{f.feature_name, {}};
    // A feature with failed (non-finite) cells yields undefined correlations.
    const bool complete = std::all_of(f.values.begin(), f.values.end(),
                                      [](double v) { return std::isfinite(v); });
    for (const auto& r : ratings) {
      if (complete) {
        row.cells.push_back(correlate(method, f.values, r.values));
      } else {
        CorrelationResult undefined;
        undefined.method = method;
        undefined.n = n;
        row.cells.push_back(undefined);
      }
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [key](const Row& a, const Row& b) {
    const auto& ca = a.cells[key];
    const auto& cb = b.cells[key];
    if (ca.defined != cb.defined) return ca.defined;
    if (ca.defined && ca.coefficient != cb.coefficient) return ca.coefficient > cb.coefficient;
    return a.name < b.name;
  });
  for (auto& row : rows) {
    table.rows.push_back(std::move(row.name));
    table.cells.push_back(std::move(row.cells));
  }
  return table;
}

/// One table per correlation method, in pearson, spearman, kendall order.
inline std::vector<CorrelationTable> correlation_tables(std::span<const FeatureVector> features,
                                                        std::span<const RatingVector> ratings,
                                                        std::string_view sort_key) {
  std::vector<CorrelationTable> out;
  for (auto m : kAllMethods) out.push_back(correlation_table(features, ratings, m, sort_key));
  return out;
}

}  // namespace sumfeat
