// Test-side oracles, deliberately independent of the library's algorithms:
// naive single-linkage reconstruction, dense matrix exponentials for small
// continuous-time chains, closed-form laws, and a brute-force isomorphism
// search. Anything asserted as an expected value in the tests is computed
// through one of these.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "genlab/tree.hpp"

namespace oracle {

// naive agglomerative single linkage; returns the reconstructed ultrametric
// (merge height of the clusters containing i and j)
inline std::vector<double> single_linkage_matrix(const std::vector<double>& d, std::size_t n) {
  std::vector<std::vector<std::size_t>> clusters(n);
  for (std::size_t i = 0; i < n; ++i) clusters[i] = {i};
  std::vector<double> out(n * n, 0.0);
  while (clusters.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = 0, bb = 0;
    for (std::size_t a = 0; a < clusters.size(); ++a)
      for (std::size_t b = a + 1; b < clusters.size(); ++b)
        for (std::size_t x : clusters[a])
          for (std::size_t y : clusters[b])
            if (d[x * n + y] < best) {
              best = d[x * n + y];
              ba = a;
              bb = b;
            }
    for (std::size_t x : clusters[ba])
      for (std::size_t y : clusters[bb]) out[x * n + y] = out[y * n + x] = best;
    clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
  }
  return out;
}

// dense matrix exponential (scaling and squaring + Taylor), row-major
inline std::vector<double> expm(std::vector<double> a, std::size_t n, double t = 1.0) {
  for (auto& v : a) v *= t;
  double norm = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < n; ++j) row += std::abs(a[i * n + j]);
    norm = std::max(norm, row);
  }
  int s = 0;
  while (norm > 0.5) {
    norm /= 2;
    ++s;
  }
  double scale = std::ldexp(1.0, -s);
  for (auto& v : a) v *= scale;

  auto matmul = [n](const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> z(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) {
        double xv = x[i * n + k];
        if (xv == 0) continue;
        for (std::size_t j = 0; j < n; ++j) z[i * n + j] += xv * y[k * n + j];
      }
    return z;
  };

  std::vector<double> result(n * n, 0.0), term(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) result[i * n + i] = term[i * n + i] = 1.0;
  for (int k = 1; k <= 40; ++k) {
    term = matmul(term, a);
    double f = 1.0 / k;
    double largest = 0;
    for (std::size_t i = 0; i < n * n; ++i) {
      term[i] *= f;
      result[i] += term[i];
      largest = std::max(largest, std::abs(term[i]));
    }
    if (largest < 1e-19) break;
  }
  for (int i = 0; i < s; ++i) result = matmul(result, result);
  return result;
}

// E[f(X_t)] for the CTMC with generator q (row-major, rows sum to 0)
inline double ctmc_expectation(const std::vector<double>& q, std::size_t n, double t,
                               std::size_t x0, const std::vector<double>& f) {
  auto p = expm(q, n, t);
  double acc = 0;
  for (std::size_t j = 0; j < n; ++j) acc += p[x0 * n + j] * f[j];
  return acc;
}

// mixed CDF of the neutral two-individual pair distance at time t:
// distance 2*min(S, t) with S the time since the last resampling event,
// S ~ Exp(d) truncated with an atom at t
struct moran_pair_cdf {
  double d, t;
  double operator()(double x) const {
    if (x < 0) return 0;
    if (x >= 2 * t) return 1;
    return 1 - std::exp(-d * x / 2);
  }
  double left(double x) const {
    if (x <= 0) return 0;
    if (x > 2 * t) return 1;
    return 1 - std::exp(-d * x / 2);
  }
};

// closed form of the order-2 exponential moment under resampling at rate d:
// E[e^{-lambda r_t}] from a zero-distance start
inline double pair_exponential_moment(double d, double lambda, double t) {
  return (d + 2 * lambda * std::exp(-(d + 2 * lambda) * t)) / (d + 2 * lambda);
}

// brute-force isomorphism of finite spaces (<= 8 leaves): exact bijection
// search after merging zero-distance equal-mark leaves
struct flat_space {
  std::vector<double> dist;  // n x n
  std::vector<double> mass;
  std::vector<genlab::mark> marks;
  std::size_t n = 0;
};

inline flat_space flatten(const genlab::ultrametric_space& u) {
  flat_space f;
  f.n = u.leaf_count();
  f.dist = u.pairwise_matrix();
  f.mass.assign(u.leaf_masses().begin(), u.leaf_masses().end());
  f.marks.assign(u.leaf_marks().begin(), u.leaf_marks().end());
  return f;
}

inline flat_space merge_support(flat_space f) {
  // drop zero masses, then merge zero-distance equal-mark leaves
  flat_space g;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < f.n; ++i)
    if (f.mass[i] > 0) keep.push_back(i);
  std::vector<bool> used(keep.size(), false);
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t a = 0; a < keep.size(); ++a) {
    if (used[a]) continue;
    std::vector<std::size_t> grp = {keep[a]};
    used[a] = true;
    for (std::size_t b = a + 1; b < keep.size(); ++b) {
      if (used[b]) continue;
      if (f.dist[keep[a] * f.n + keep[b]] == 0 && f.marks[keep[a]] == f.marks[keep[b]]) {
        grp.push_back(keep[b]);
        used[b] = true;
      }
    }
    groups.push_back(grp);
  }
  g.n = groups.size();
  g.dist.assign(g.n * g.n, 0.0);
  for (const auto& grp : groups) {
    double m = 0;
    for (std::size_t i : grp) m += f.mass[i];
    g.mass.push_back(m);
    g.marks.push_back(f.marks[grp[0]]);
  }
  for (std::size_t a = 0; a < g.n; ++a)
    for (std::size_t b = 0; b < g.n; ++b)
      if (a != b) g.dist[a * g.n + b] = f.dist[groups[a][0] * f.n + groups[b][0]];
  return g;
}

inline bool isomorphic_bruteforce(const genlab::ultrametric_space& ua,
                                  const genlab::ultrametric_space& ub) {
  flat_space a = merge_support(flatten(ua));
  flat_space b = merge_support(flatten(ub));
  if (a.n != b.n) return false;
  std::vector<std::size_t> perm(a.n);
  std::iota(perm.begin(), perm.end(), 0);
  do {
    bool ok = true;
    for (std::size_t i = 0; i < a.n && ok; ++i) {
      if (a.mass[i] != b.mass[perm[i]] || !(a.marks[i] == b.marks[perm[i]])) ok = false;
      for (std::size_t j = i + 1; j < a.n && ok; ++j)
        if (a.dist[i * a.n + j] != b.dist[perm[i] * b.n + perm[j]]) ok = false;
    }
    if (ok) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}

// finite-K forward oracle for the critical branching order-2 exponential
// moment: linear ODE on (P_m, Y_m) with Y_m = E[sum_{i != j} e^{-lam r}; m],
// solved by matrix exponential; returns the unnormalized with-replacement
// value E[(Y + m)/K^2]
inline double fk_forward_oracle(std::size_t K, double b, double lambda, double t,
                                std::size_t m0_particles, std::size_t cap = 0) {
  if (cap == 0) cap = m0_particles * 4 + 120;
  const std::size_t n = cap + 1;
  std::vector<double> L(4 * n * n, 0.0);
  auto at = [&](std::size_t r, std::size_t c) -> double& { return L[r * 2 * n + c]; };
  const double bk = b * static_cast<double>(K);
  for (std::size_t m = 0; m < n; ++m) {
    double rate = bk * static_cast<double>(m);
    if (rate == 0) continue;
    double up = rate / 2, dn = rate / 2;
    if (m + 1 < n) {
      at(m + 1, m) += up;
      at(n + m + 1, n + m) += up;      // Y carried on split
      at(n + m + 1, n + m) += bk;      // + 2 sum_i R_i * (bk/2) = bk * Y
      at(n + m + 1, m) += bk * static_cast<double>(m);  // + 2 per split * sum_i (bk/2)
    }
    at(m, m) -= up;
    at(n + m, n + m) -= up;
    if (m >= 1) {
      at(m - 1, m) += dn;
      at(n + m - 1, n + m) += dn;
      at(n + m - 1, n + m) -= bk;  // death removes a row: -bk * Y
    }
    at(m, m) -= dn;
    at(n + m, n + m) -= dn;
  }
  for (std::size_t m = 0; m < n; ++m) at(n + m, n + m) += -2 * lambda;

  std::vector<double> v(2 * n, 0.0);
  v[m0_particles] = 1.0;
  v[n + m0_particles] = static_cast<double>(m0_particles) * static_cast<double>(m0_particles - 1);

  auto et = expm(L, 2 * n, t);
  std::vector<double> w(2 * n, 0.0);
  for (std::size_t i = 0; i < 2 * n; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < 2 * n; ++j) acc += et[i * 2 * n + j] * v[j];
    w[i] = acc;
  }
  double ym = 0, em = 0;
  for (std::size_t m = 0; m < n; ++m) {
    ym += w[n + m];
    em += static_cast<double>(m) * w[m];
  }
  double k2 = static_cast<double>(K) * static_cast<double>(K);
  return (ym + em) / k2;
}

// closed-form route to the same finite-K quantity, derived independently:
// E[Phi] = b(1-e^{-2lt})/(2l) + e^{-2lt} + (1/K)(1 - e^{-2lt}) for initial
// mass 1 (m0 = K particles at zero distances)
inline double fk_forward_closed(std::size_t K, double b, double lambda, double t) {
  double decay = std::exp(-2 * lambda * t);
  return b * (1 - decay) / (2 * lambda) + decay + (1 - decay) / static_cast<double>(K);
}

// n = 2 Feynman-Kac dual closed form with trivial unit-mass initial state
inline double fk_dual_closed(double b, double lambda, double t) {
  double decay = std::exp(-2 * lambda * t);
  return b * (1 - decay) / (2 * lambda) + decay;
}

// mean total mass of the logistic branching count chain by matrix
// exponential (states 0..cap particles)
inline double logistic_mean_mass(std::size_t K, double b, double c, double capacity, double t,
                                 std::size_t m0, std::size_t cap) {
  const std::size_t n = cap + 1;
  std::vector<double> q(n * n, 0.0);
  const double bk = b * static_cast<double>(K);
  for (std::size_t m = 1; m < n; ++m) {
    double mass = static_cast<double>(m) / static_cast<double>(K);
    double p_split = std::clamp(0.5 * (1.0 + c * (capacity - mass)), 0.0, 1.0);
    double rate = bk * static_cast<double>(m);
    double up = m + 1 < n ? rate * p_split : 0.0;  // cap chosen so this truncation is negligible
    double dn = rate * (1 - p_split);
    if (m + 1 < n) q[m * n + m + 1] = up;
    q[m * n + m - 1] = dn;
    q[m * n + m] = -(up + dn);
  }
  std::vector<double> f(n);
  for (std::size_t m = 0; m < n; ++m) f[m] = static_cast<double>(m) / static_cast<double>(K);
  return ctmc_expectation(q, n, t, m0, f);
}

// spatial two-site dual oracle: E[e^{-2 lambda min(T_coal, t)}] for two
// blocks walking at rate rho between 2 symmetric sites, coalescing at rate
// d when co-located; states {together, apart, coalesced} with the distance
// growth handled as a killing term on transient states
inline double spatial_pair_moment(double d, double rho, double lambda, double t, bool together) {
  std::vector<double> q = {
      -(2 * rho + d), 2 * rho, d,
      2 * rho, -2 * rho, 0,
      0, 0, 0};
  // tilt transient states by -2 lambda
  q[0 * 3 + 0] += -2 * lambda;
  q[1 * 3 + 1] += -2 * lambda;
  auto p = expm(q, 3, t);
  std::size_t x0 = together ? 0 : 1;
  return p[x0 * 3 + 0] + p[x0 * 3 + 1] + p[x0 * 3 + 2];
}

}  // namespace oracle
