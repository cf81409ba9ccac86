#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <span>
#include <thread>
#include <vector>

#include "genlab/random.hpp"

namespace genlab {

// ---------------------------------------------------------------------------
// deterministic reductions

// fixed-order pairwise summation; result is independent of how replicates
// were scheduled across workers
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0;
    for (double x : v) s += x;
    return s;
  }
  std::size_t half = v.size() / 2;
  return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

struct mean_se {
  double mean = 0;
  double se = 0;
  std::size_t n = 0;
};

inline mean_se reduce_mean(std::span<const double> values) {
  mean_se r;
  r.n = values.size();
  if (r.n == 0) return r;
  r.mean = pairwise_sum(values) / static_cast<double>(r.n);
  if (r.n > 1) {
    std::vector<double> sq(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      double d = values[i] - r.mean;
      sq[i] = d * d;
    }
    double var = pairwise_sum(sq) / static_cast<double>(r.n - 1);
    r.se = std::sqrt(var / static_cast<double>(r.n));
  }
  return r;
}

// ---------------------------------------------------------------------------
// replicate-parallel driver; each index is processed exactly once and the
// caller stores results by index, so worker count never changes the output

inline void parallel_replicates(std::size_t count, std::size_t workers,
                                const std::function<void(std::size_t)>& body) {
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto run = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      body(i);
    }
  };
  std::vector<std::thread> pool;
  std::size_t spawn = std::min<std::size_t>(workers, count) - 1;
  pool.reserve(spawn);
  for (std::size_t w = 0; w < spawn; ++w) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
}

inline std::size_t default_workers() {
  if (const char* env = std::getenv("GENLAB_WORKERS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov

inline double kolmogorov_tail(double x) {
  // P(sup|B| > x), asymptotic Kolmogorov distribution tail
  if (x <= 0) return 1.0;
  double sum = 0;
  for (int k = 1; k <= 100; ++k) {
    double term = std::exp(-2.0 * k * k * x * x);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-14) break;
  }
  return std::clamp(2 * sum, 0.0, 1.0);
}

// one-sample KS against a CDF with possible atoms; F(x) right-continuous,
// Fm(x) its left limit. samples need not be sorted.
inline double ks_one_sample_stat(std::vector<double> samples,
                                 const std::function<double(double)>& cdf,
                                 const std::function<double(double)>& cdf_left) {
  std::sort(samples.begin(), samples.end());
  std::size_t n = samples.size();
  double d = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double hi = static_cast<double>(i + 1) / static_cast<double>(n);
    double lo = static_cast<double>(i) / static_cast<double>(n);
    d = std::max(d, hi - cdf(samples[i]));
    d = std::max(d, cdf_left(samples[i]) - lo);
  }
  return d;
}

inline double ks_one_sample_pvalue(std::vector<double> samples,
                                   const std::function<double(double)>& cdf,
                                   const std::function<double(double)>& cdf_left) {
  std::size_t n = samples.size();
  double d = ks_one_sample_stat(std::move(samples), cdf, cdf_left);
  double en = std::sqrt(static_cast<double>(n));
  return kolmogorov_tail(d * (en + 0.12 + 0.11 / en));
}

inline double ks_two_sample_stat(std::span<const double> a_sorted,
                                 std::span<const double> b_sorted) {
  std::size_t i = 0, j = 0;
  double d = 0;
  const double na = static_cast<double>(a_sorted.size());
  const double nb = static_cast<double>(b_sorted.size());
  while (i < a_sorted.size() && j < b_sorted.size()) {
    double x = std::min(a_sorted[i], b_sorted[j]);
    while (i < a_sorted.size() && a_sorted[i] <= x) ++i;
    while (j < b_sorted.size() && b_sorted[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

inline double ks_two_sample_pvalue_asymptotic(std::span<const double> a_sorted,
                                              std::span<const double> b_sorted) {
  double na = static_cast<double>(a_sorted.size());
  double nb = static_cast<double>(b_sorted.size());
  double d = ks_two_sample_stat(a_sorted, b_sorted);
  double en = std::sqrt(na * nb / (na + nb));
  return kolmogorov_tail(d * (en + 0.12 + 0.11 / en));
}

// Permutation two-sample KS. Valid in the presence of atoms: an i.i.d.
// jitter far below the data scale is attached to every pooled value once,
// making the statistic continuous while preserving exchangeability, so the
// returned p-value is uniform on {1/(M+1),...,1} under the null.
inline double ks_two_sample_pvalue_permutation(std::span<const double> a, std::span<const double> b,
                                               std::size_t n_perm, rng_stream& rng) {
  std::size_t na = a.size(), nb = b.size();
  std::vector<double> pool(na + nb);
  double scale = 0;
  for (std::size_t i = 0; i < na; ++i) pool[i] = a[i];
  for (std::size_t j = 0; j < nb; ++j) pool[na + j] = b[j];
  for (double v : pool) scale = std::max(scale, std::abs(v));
  if (scale == 0) scale = 1;
  for (auto& v : pool) v += (rng.uniform01() - 0.5) * scale * 1e-11;

  auto stat_for = [&](std::span<const std::uint32_t> idx) {
    std::vector<double> xa, xb;
    xa.reserve(na);
    xb.reserve(nb);
    for (std::size_t i = 0; i < na + nb; ++i)
      (idx[i] < na ? xa : xb).push_back(pool[i]);
    std::sort(xa.begin(), xa.end());
    std::sort(xb.begin(), xb.end());
    return ks_two_sample_stat(xa, xb);
  };

  std::vector<std::uint32_t> labels(na + nb);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint32_t>(i);
  double observed = stat_for(labels);

  std::size_t ge = 0;
  for (std::size_t p = 0; p < n_perm; ++p) {
    for (std::size_t i = labels.size(); i > 1; --i) {
      std::size_t j = rng.uniform_below(i);
      std::swap(labels[i - 1], labels[j]);
    }
    if (stat_for(labels) >= observed) ++ge;
  }
  return static_cast<double>(1 + ge) / static_cast<double>(1 + n_perm);
}

// ---------------------------------------------------------------------------
// Anderson-Darling uniformity of p-values (null: U[0,1]); asymptotic 1%
// critical value for A^2

inline double anderson_darling_uniform(std::vector<double> p) {
  std::sort(p.begin(), p.end());
  std::size_t n = p.size();
  double a2 = -static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = std::clamp(p[i], 1e-12, 1 - 1e-12);
    double v = std::clamp(p[n - 1 - i], 1e-12, 1 - 1e-12);
    a2 -= (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n) *
          (std::log(u) + std::log1p(-v));
  }
  return a2;
}

constexpr double kAndersonDarling1pc = 3.8781;  // asymptotic 1% critical value

// ---------------------------------------------------------------------------
// energy distance two-sample test on R^k with permutation p-value

inline double energy_statistic(std::span<const double> x, std::span<const double> y,
                               std::size_t dim) {
  auto dist = [dim](const double* a, const double* b) {
    double s = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      double t = a[d] - b[d];
      s += t * t;
    }
    return std::sqrt(s);
  };
  std::size_t nx = x.size() / dim, ny = y.size() / dim;
  double dxy = 0, dxx = 0, dyy = 0;
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j) dxy += dist(&x[i * dim], &y[j * dim]);
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = i + 1; j < nx; ++j) dxx += dist(&x[i * dim], &x[j * dim]);
  for (std::size_t i = 0; i < ny; ++i)
    for (std::size_t j = i + 1; j < ny; ++j) dyy += dist(&y[i * dim], &y[j * dim]);
  double exy = dxy / (static_cast<double>(nx) * static_cast<double>(ny));
  double exx = 2 * dxx / (static_cast<double>(nx) * static_cast<double>(nx));
  double eyy = 2 * dyy / (static_cast<double>(ny) * static_cast<double>(ny));
  return 2 * exy - exx - eyy;
}

inline double energy_pvalue_permutation(std::vector<double> x, std::vector<double> y,
                                        std::size_t dim, std::size_t n_perm, rng_stream& rng) {
  std::size_t nx = x.size() / dim, ny = y.size() / dim;
  double observed = energy_statistic(x, y, dim);
  std::vector<double> pool = x;
  pool.insert(pool.end(), y.begin(), y.end());
  std::vector<std::uint32_t> rows(nx + ny);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<std::uint32_t>(i);
  std::size_t ge = 0;
  std::vector<double> px(nx * dim), py(ny * dim);
  for (std::size_t p = 0; p < n_perm; ++p) {
    for (std::size_t i = rows.size(); i > 1; --i) {
      std::size_t j = rng.uniform_below(i);
      std::swap(rows[i - 1], rows[j]);
    }
    for (std::size_t i = 0; i < nx; ++i)
      std::copy_n(&pool[rows[i] * dim], dim, &px[i * dim]);
    for (std::size_t i = 0; i < ny; ++i)
      std::copy_n(&pool[rows[nx + i] * dim], dim, &py[i * dim]);
    if (energy_statistic(px, py, dim) >= observed) ++ge;
  }
  return static_cast<double>(1 + ge) / static_cast<double>(1 + n_perm);
}

// ---------------------------------------------------------------------------
// exact 1-Wasserstein distance between finite atomic laws on R

struct weighted_atoms {
  std::vector<std::pair<double, double>> atoms;  // (value, weight), weights sum to 1

  void add(double value, double weight) { atoms.emplace_back(value, weight); }
  void normalize() {
    double total = 0;
    for (auto& [v, w] : atoms) total += w;
    if (total > 0)
      for (auto& [v, w] : atoms) w /= total;
  }
};

inline double wasserstein1(weighted_atoms p, weighted_atoms q) {
  std::sort(p.atoms.begin(), p.atoms.end());
  std::sort(q.atoms.begin(), q.atoms.end());
  // sweep over the merged grid integrating |F_p - F_q|
  std::size_t i = 0, j = 0;
  double fp = 0, fq = 0, last = 0, w1 = 0;
  bool first = true;
  while (i < p.atoms.size() || j < q.atoms.size()) {
    double x;
    if (j >= q.atoms.size() || (i < p.atoms.size() && p.atoms[i].first <= q.atoms[j].first))
      x = p.atoms[i].first;
    else
      x = q.atoms[j].first;
    if (!first) w1 += std::abs(fp - fq) * (x - last);
    while (i < p.atoms.size() && p.atoms[i].first == x) fp += p.atoms[i++].second;
    while (j < q.atoms.size() && q.atoms[j].first == x) fq += q.atoms[j++].second;
    last = x;
    first = false;
  }
  return w1;
}

}  // namespace genlab
