#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "cmgeval/error.hpp"

namespace cmgeval {

struct CorrelationResult {
  double coefficient = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

enum class PValueMethod {
  t_approximation,  // two-sided Student t with n-2 dof
  permutation,      // exact, enumerates all n! orderings; n <= 10
};

/// 1-based ranks; tied values share the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw UndefinedCorrelation("undefined correlation: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Two-sided p-value of a correlation coefficient under the t approximation.
inline double correlation_p_value(double rho, std::size_t n) {
  if (n < 3) return 1.0;
  const double dof = static_cast<double>(n - 2);
  const double denom = (1.0 - rho) * (1.0 + rho);
  if (denom <= 0) return 0.0;
  const double t = std::fabs(rho) * std::sqrt(dof / denom);
  boost::math::students_t_distribution<double> dist(dof);
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, t)), 0.0, 1.0);
}

inline double permutation_p_value(std::span<const double> rx, std::span<const double> ry, double rho) {
  const std::size_t n = rx.size();
  if (n > 10) throw UsageError("exact permutation p-value is limited to n <= 10");
  std::vector<double> perm(ry.begin(), ry.end());
  std::sort(perm.begin(), perm.end());
  // Enumerate index permutations so tied ranks are counted with their multiplicity.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> shuffled(n);
  std::size_t hits = 0, total = 0;
  const double threshold = std::fabs(rho) - 1e-12;
  do {
    for (std::size_t i = 0; i < n; ++i) shuffled[i] = perm[idx[i]];
    if (std::fabs(pearson(rx, shuffled)) >= threshold) ++hits;
    ++total;
  } while (std::next_permutation(idx.begin(), idx.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

/// Spearman rank correlation: Pearson correlation of average ranks.
inline CorrelationResult spearman(std::span<const double> x, std::span<const double> y,
                                  PValueMethod method = PValueMethod::t_approximation) {
  if (x.size() != y.size())
    throw DataError("spearman: length mismatch (" + std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
  if (x.size() < 3) throw DataError("spearman: need at least 3 samples, got " + std::to_string(x.size()));
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  CorrelationResult r;
  r.n = x.size();
  r.coefficient = pearson(rx, ry);
  r.p_value = method == PValueMethod::permutation ? permutation_p_value(rx, ry, r.coefficient)
                                                  : correlation_p_value(r.coefficient, r.n);
  return r;
}

struct HistogramBucket {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
};

struct Descriptive {
  double mean = 0.0;
  double median = 0.0;
  std::vector<HistogramBucket> histogram;
};

/// Buckets of `bucket_width` aligned to multiples of the width, covering [min, max].
inline std::vector<HistogramBucket> histogram(std::span<const double> values, double bucket_width,
                                              double lo_edge, double hi_edge) {
  if (!(bucket_width > 0)) throw UsageError("bucket width must be positive");
  const double start = std::floor(lo_edge / bucket_width) * bucket_width;
  const auto count = static_cast<std::size_t>(std::floor((hi_edge - start) / bucket_width)) + 1;
  std::vector<HistogramBucket> buckets(count);
  for (std::size_t i = 0; i < count; ++i) {
    buckets[i].lower = start + bucket_width * static_cast<double>(i);
    buckets[i].upper = buckets[i].lower + bucket_width;
  }
  for (double v : values) {
    auto i = static_cast<std::size_t>(std::floor((v - start) / bucket_width));
    buckets[std::min(i, count - 1)].count++;
  }
  return buckets;
}

inline Descriptive descriptive(std::span<const double> values, double bucket_width = 50.0) {
  if (values.empty()) throw DataError("descriptive statistics of an empty sample");
  Descriptive d;
  d.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  d.median = n % 2 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
  d.histogram = histogram(values, bucket_width, sorted.front(), sorted.back());
  return d;
}

}  // namespace cmgeval
