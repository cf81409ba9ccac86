#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "genlab/errors.hpp"
#include "genlab/stats.hpp"
#include "genlab/tree.hpp"

namespace genlab {

// Lower/upper brackets for how far apart two normalized spaces are in the
// Gromov-weak sense.
//   lower: exact 1-Wasserstein distance between the order-2 distance laws
//          (a discrepancy witness: nonzero implies non-isomorphic).
//   upper: minimum over injective leaf matchings of a coupling transport
//          bound on the same quantity, so lower <= upper always holds.
// Matchings are enumerated exhaustively when both spaces have <= 8 leaves
// and greedily (by mass rank) beyond that.
struct bound_pair {
  double lower = 0;
  double upper = 0;
};

namespace detail {

inline weighted_atoms pair_distance_law(const ultrametric_space& u) {
  weighted_atoms law;
  double m = u.total_mass();
  law.add(0.0, sum_sq_masses(u) / (m * m));
  std::vector<std::pair<double, double>> atoms;
  u.merge_mass_atoms(atoms);
  for (const auto& [value, cross] : atoms) law.add(value, cross / (m * m));
  return law;
}

inline double matching_cost(const ultrametric_space& a, const ultrametric_space& b,
                            std::span<const std::size_t> sigma, const std::vector<double>& da,
                            const std::vector<double>& db, double dbar) {
  // sigma maps each leaf of `a` to a distinct leaf of `b`
  const std::size_t la = a.leaf_count(), lb = b.leaf_count();
  const double ma = a.total_mass(), mb = b.total_mass();
  std::vector<double> pi(la);
  double overlap = 0;
  for (std::size_t i = 0; i < la; ++i) {
    pi[i] = std::min(a.leaf_mass(i) / ma, b.leaf_mass(sigma[i]) / mb);
    overlap += pi[i];
  }
  double cost = 0;
  for (std::size_t i = 0; i < la; ++i)
    for (std::size_t j = 0; j < la; ++j) {
      if (i == j) continue;
      cost += pi[i] * pi[j] * std::abs(da[i * la + j] - db[sigma[i] * lb + sigma[j]]);
    }
  cost += (1.0 - overlap * overlap) * dbar;
  return cost;
}

}  // namespace detail

inline bound_pair discrepancy_bounds(const ultrametric_space& a, const ultrametric_space& b) {
  if (a.is_zero() || b.is_zero() || a.total_mass() <= 0 || b.total_mass() <= 0)
    throw empty_space("discrepancy bounds need nonempty spaces");
  if (isomorphic(a, b)) return {0.0, 0.0};

  bound_pair out;
  out.lower = wasserstein1(detail::pair_distance_law(a), detail::pair_distance_law(b));

  // orient so `small` has no more leaves than `big`
  const ultrametric_space& small = a.leaf_count() <= b.leaf_count() ? a : b;
  const ultrametric_space& big = a.leaf_count() <= b.leaf_count() ? b : a;
  const std::size_t ls = small.leaf_count(), lg = big.leaf_count();
  std::vector<double> ds = small.pairwise_matrix();
  std::vector<double> dg = big.pairwise_matrix();
  const double dbar = std::max(small.diameter(), big.diameter());

  double best = dbar;  // the trivial coupling bound
  if (lg <= 8) {
    std::vector<std::size_t> perm(lg);
    for (std::size_t i = 0; i < lg; ++i) perm[i] = i;
    do {
      std::vector<std::size_t> sigma(perm.begin(), perm.begin() + ls);
      best = std::min(best, detail::matching_cost(small, big, sigma, ds, dg, dbar));
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    // greedy: match leaves in decreasing-mass order
    std::vector<std::size_t> os(ls), og(lg);
    for (std::size_t i = 0; i < ls; ++i) os[i] = i;
    for (std::size_t i = 0; i < lg; ++i) og[i] = i;
    std::sort(os.begin(), os.end(),
              [&](std::size_t x, std::size_t y) { return small.leaf_mass(x) > small.leaf_mass(y); });
    std::sort(og.begin(), og.end(),
              [&](std::size_t x, std::size_t y) { return big.leaf_mass(x) > big.leaf_mass(y); });
    std::vector<std::size_t> sigma(ls);
    for (std::size_t i = 0; i < ls; ++i) sigma[os[i]] = og[i];
    best = std::min(best, detail::matching_cost(small, big, sigma, ds, dg, dbar));
  }
  out.upper = best;
  return out;
}

}  // namespace genlab
