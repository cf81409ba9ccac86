#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "genlab/errors.hpp"
#include "genlab/lineage.hpp"
#include "genlab/polynomial.hpp"
#include "genlab/random.hpp"
#include "genlab/tree.hpp"

namespace genlab {

enum class dual_mode : std::uint8_t { plain = 0, feynman_kac = 1, conditioned = 2 };

struct dual_event {
  double time;
  bool merge;          // false: migration step
  std::int32_t a, b;   // merge: surviving and absorbed block; migrate: block, new site
};

struct dual_config {
  std::size_t n = 2;
  double rate = 1.0;  // pairwise coalescence rate d (b for branching duals)
  dual_mode mode = dual_mode::plain;

  std::optional<step_function> mass_path;  // conditioned mode: rate/mass(t), 0 at mass 0
  double mass_path_end = std::numeric_limits<double>::infinity();

  std::size_t n_sites = 1;
  double migration_rate = 0;             // per block
  std::vector<double> migration_kernel;  // row-stochastic n_sites x n_sites
  std::vector<std::int32_t> initial_locations;  // per index; default all 0

  std::uint64_t seed = 1;

  bool spatial() const { return n_sites > 1 || migration_rate > 0; }

  void validate(double horizon) const {
    if (n < 1) throw config_invalid("dual sample size must be >= 1");
    if (rate <= 0 && mode != dual_mode::conditioned)
      throw config_invalid("coalescence rate must be > 0");
    if (mode == dual_mode::conditioned) {
      if (!mass_path || !mass_path->valid())
        throw mass_path_gap("conditioned mode needs a mass path starting at 0");
      if (horizon > mass_path_end)
        throw mass_path_gap("mass path does not cover the requested horizon");
      if (spatial()) throw config_invalid("conditioned mode is non-spatial");
    }
    if (migration_rate > 0) {
      if (migration_kernel.size() != n_sites * n_sites)
        throw invalid_kernel("dual migration kernel size");
      for (std::size_t i = 0; i < n_sites; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < n_sites; ++j) row += migration_kernel[i * n_sites + j];
        if (std::abs(row - 1.0) > 1e-9) throw invalid_kernel("dual migration kernel row sum != 1");
      }
    }
    if (!initial_locations.empty()) {
      if (initial_locations.size() != n) throw config_invalid("initial locations length != n");
      for (auto g : initial_locations)
        if (g < 0 || static_cast<std::size_t>(g) >= n_sites)
          throw config_invalid("initial location out of range");
    }
  }
};

struct coalescent_state {
  std::size_t n = 0;
  double horizon = 0;
  dual_mode mode = dual_mode::plain;
  std::vector<double> pair_time;   // n x n; coalescence time, horizon where never
  std::vector<std::int32_t> block_of;  // final partition labels, 0..n_blocks-1
  std::vector<std::int32_t> block_site;
  std::size_t n_blocks = 0;
  double beta = 0;  // accumulated Feynman-Kac integral
  std::vector<dual_event> events;

  double pair(std::size_t i, std::size_t j) const { return pair_time[i * n + j]; }
  double dual_distance(std::size_t i, std::size_t j) const {
    return 2 * std::min(pair(i, j), horizon);
  }
};

// Distance-matrix-enriched Kingman coalescent: every pair of blocks merges
// at the configured rate (co-located pairs only, in spatial mode; rate/mass
// in conditioned mode), distances grow at speed 2 until coalescence, and
// the Feynman-Kac integral accumulates rate * C(#blocks, 2) exactly
// between jumps.
inline coalescent_state coalescent_run(const dual_config& cfg, double horizon) {
  cfg.validate(horizon);
  rng_stream rng(cfg.seed);
  const std::size_t n = cfg.n;

  coalescent_state st;
  st.n = n;
  st.horizon = horizon;
  st.mode = cfg.mode;
  st.pair_time.assign(n * n, horizon);
  for (std::size_t i = 0; i < n; ++i) st.pair_time[i * n + i] = 0;

  std::vector<std::vector<std::int32_t>> blocks(n);
  std::vector<std::int32_t> site(n, 0);
  for (std::size_t i = 0; i < n; ++i) blocks[i] = {static_cast<std::int32_t>(i)};
  if (!cfg.initial_locations.empty())
    for (std::size_t i = 0; i < n; ++i) site[i] = cfg.initial_locations[i];

  auto colocated_pairs = [&]() {
    if (!cfg.spatial()) {
      double k = static_cast<double>(blocks.size());
      return k * (k - 1) / 2;
    }
    std::vector<std::size_t> per_site(cfg.n_sites, 0);
    for (std::size_t b = 0; b < blocks.size(); ++b) ++per_site[static_cast<std::size_t>(site[b])];
    double c = 0;
    for (auto k : per_site) c += static_cast<double>(k) * (static_cast<double>(k) - 1) / 2;
    return c;
  };

  double t = 0;
  while (blocks.size() > 1 || cfg.migration_rate > 0) {
    const double k = static_cast<double>(blocks.size());
    const double pairs_touching = colocated_pairs();
    const double mig_total = cfg.migration_rate * k;

    double coal_total;
    double step_end = horizon;
    if (cfg.mode == dual_mode::conditioned) {
      const auto& mp = *cfg.mass_path;
      double mass_now = mp.at(t);
      coal_total = mass_now > 0 ? cfg.rate / mass_now * pairs_touching : 0.0;
      auto it = std::upper_bound(mp.times.begin(), mp.times.end(), t);
      if (it != mp.times.end()) step_end = std::min(step_end, *it);
    } else {
      coal_total = cfg.rate * pairs_touching;
    }
    const double lambda = coal_total + mig_total;

    if (lambda <= 0) {
      if (cfg.mode == dual_mode::feynman_kac) st.beta += cfg.rate * pairs_touching * (step_end - t);
      t = step_end;
      if (t >= horizon) break;
      continue;
    }
    double tau = rng.exponential(lambda);
    if (t + tau >= step_end) {
      if (cfg.mode == dual_mode::feynman_kac) st.beta += cfg.rate * pairs_touching * (step_end - t);
      t = step_end;
      if (t >= horizon) break;
      continue;
    }
    if (cfg.mode == dual_mode::feynman_kac) st.beta += cfg.rate * pairs_touching * tau;
    t += tau;

    if (rng.uniform01() * lambda < coal_total) {
      // uniform co-located ordered block pair
      std::size_t a = 0, b = 0;
      if (!cfg.spatial()) {
        a = static_cast<std::size_t>(rng.uniform_below(blocks.size()));
        b = static_cast<std::size_t>(rng.uniform_below(blocks.size() - 1));
        if (b >= a) ++b;
      } else {
        double pick = rng.uniform01() * pairs_touching;
        std::int32_t g = -1;
        std::vector<std::vector<std::size_t>> by_site(cfg.n_sites);
        for (std::size_t bl = 0; bl < blocks.size(); ++bl)
          by_site[static_cast<std::size_t>(site[bl])].push_back(bl);
        for (std::size_t s = 0; s < cfg.n_sites; ++s) {
          double kk = static_cast<double>(by_site[s].size());
          double w = kk * (kk - 1) / 2;
          if (pick < w) {
            g = static_cast<std::int32_t>(s);
            break;
          }
          pick -= w;
        }
        const auto& local = by_site[static_cast<std::size_t>(g)];
        std::size_t ai = static_cast<std::size_t>(rng.uniform_below(local.size()));
        std::size_t bi = static_cast<std::size_t>(rng.uniform_below(local.size() - 1));
        if (bi >= ai) ++bi;
        a = local[ai];
        b = local[bi];
      }
      if (a > b) std::swap(a, b);
      for (std::int32_t x : blocks[a])
        for (std::int32_t y : blocks[b]) {
          st.pair_time[static_cast<std::size_t>(x) * n + static_cast<std::size_t>(y)] = t;
          st.pair_time[static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x)] = t;
        }
      st.events.push_back({t, true, static_cast<std::int32_t>(a), static_cast<std::int32_t>(b)});
      blocks[a].insert(blocks[a].end(), blocks[b].begin(), blocks[b].end());
      blocks.erase(blocks.begin() + static_cast<std::ptrdiff_t>(b));
      site.erase(site.begin() + static_cast<std::ptrdiff_t>(b));
    } else {
      std::size_t bl = static_cast<std::size_t>(rng.uniform_below(blocks.size()));
      double u = rng.uniform01();
      double acc = 0;
      std::int32_t dst = static_cast<std::int32_t>(cfg.n_sites - 1);
      for (std::size_t j = 0; j < cfg.n_sites; ++j) {
        acc += cfg.migration_kernel[static_cast<std::size_t>(site[bl]) * cfg.n_sites + j];
        if (u < acc) {
          dst = static_cast<std::int32_t>(j);
          break;
        }
      }
      site[bl] = dst;
      st.events.push_back({t, false, static_cast<std::int32_t>(bl), dst});
    }
    if (blocks.size() == 1 && cfg.migration_rate <= 0) break;
  }

  st.n_blocks = blocks.size();
  st.block_of.assign(n, -1);
  st.block_site.assign(blocks.size(), 0);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    st.block_site[b] = site[b];
    for (std::int32_t idx : blocks[b]) st.block_of[static_cast<std::size_t>(idx)] = static_cast<std::int32_t>(b);
  }
  return st;
}

struct duality_value_options {
  bool unnormalized = false;      // U_fin convention: weight by mass^{#blocks}
  bool location_fallback = false; // spatial: fall back to the global marginal
};

// Evaluates the duality function: one mass-weighted ancestor draw per block
// (restricted to the block's location in spatial mode), phi applied to the
// matrix of dual distances plus cross-block ancestor distances, times the
// mark factor; exp(beta) in Feynman-Kac mode.
inline double duality_value(const ultrametric_space& initial, const coalescent_state& st,
                            const polynomial_spec& poly, rng_stream& rng,
                            duality_value_options opt = {}) {
  if (poly.order() != st.n) throw order_mismatch("polynomial order != dual sample size");
  if (initial.is_zero() || initial.total_mass() <= 0)
    throw empty_space("duality value needs a nonempty initial space");

  const std::size_t n = st.n;
  std::vector<std::size_t> anc(st.n_blocks);
  for (std::size_t b = 0; b < st.n_blocks; ++b) {
    if (st.block_site.empty() || st.block_site[b] < 0) {
      anc[b] = initial.sample_leaf(rng);
      continue;
    }
    std::int32_t want = st.block_site[b];
    // leaves matching the block's location (unmarked leaves match any site)
    double total = 0;
    for (std::size_t l = 0; l < initial.leaf_count(); ++l) {
      std::int32_t loc = initial.leaf_mark(l).location;
      if (loc < 0 || loc == want) total += initial.leaf_mass(l);
    }
    if (total <= 0) {
      if (!opt.location_fallback)
        throw empty_location("initial measure has no mass at site " + std::to_string(want));
      anc[b] = initial.sample_leaf(rng);
      continue;
    }
    double u = rng.uniform01() * total;
    std::size_t chosen = initial.leaf_count() - 1;
    double acc = 0;
    for (std::size_t l = 0; l < initial.leaf_count(); ++l) {
      std::int32_t loc = initial.leaf_mark(l).location;
      if (loc < 0 || loc == want) {
        acc += initial.leaf_mass(l);
        if (u < acc) {
          chosen = l;
          break;
        }
      }
    }
    anc[b] = chosen;
  }

  std::vector<double> r(poly.pair_count());
  std::size_t p = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      std::size_t bi = static_cast<std::size_t>(st.block_of[i]);
      std::size_t bj = static_cast<std::size_t>(st.block_of[j]);
      double base = bi == bj ? 0.0 : initial.distance(anc[bi], anc[bj]);
      r[p++] = st.dual_distance(i, j) + base;
    }
  double value = poly.kernel(r);

  if (poly.has_mark_factor()) {
    std::vector<mark> mks(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t b = static_cast<std::size_t>(st.block_of[i]);
      std::int32_t loc = st.block_site.empty() ? -1 : st.block_site[b];
      mks[i] = mark{loc, initial.leaf_mark(anc[b]).type};
    }
    value *= poly.mark_factor(mks);
  }

  if (opt.unnormalized)
    value *= std::pow(initial.total_mass(), static_cast<double>(st.n_blocks));
  if (st.mode == dual_mode::feynman_kac) value *= std::exp(st.beta);
  return value;
}

// Kingman n-coalescent tree run to horizon T at pairwise rate `rate`:
// leaves of mass 1/n, pair distance 2*min(coalescence time, T). This is the
// finite-sample stand-in for the entrance law from countably many lines.
inline ultrametric_space entrance_law_tree(std::size_t n_lines, double T, double rate,
                                           rng_stream& rng) {
  if (n_lines < 1) throw config_invalid("entrance law needs >= 1 line");
  const double w = 1.0 / static_cast<double>(n_lines);
  std::vector<tree_node> cluster;
  cluster.reserve(n_lines);
  for (std::size_t i = 0; i < n_lines; ++i) cluster.push_back(tree_node::leaf(w));
  double t = 0;
  while (cluster.size() > 1) {
    double k = static_cast<double>(cluster.size());
    double lambda = rate * k * (k - 1) / 2;
    double tau = rng.exponential(lambda);
    if (t + tau >= T) break;
    t += tau;
    std::size_t a = static_cast<std::size_t>(rng.uniform_below(cluster.size()));
    std::size_t b = static_cast<std::size_t>(rng.uniform_below(cluster.size() - 1));
    if (b >= a) ++b;
    if (a > b) std::swap(a, b);
    std::vector<tree_node> kids;
    kids.push_back(std::move(cluster[a]));
    kids.push_back(std::move(cluster[b]));
    cluster[a] = tree_node::internal(2 * t, std::move(kids));
    cluster.erase(cluster.begin() + static_cast<std::ptrdiff_t>(b));
  }
  if (cluster.size() == 1) return ultrametric_space(std::move(cluster.front()));
  return ultrametric_space(tree_node::internal(2 * T, std::move(cluster)));
}

}  // namespace genlab
