#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "genlab/errors.hpp"
#include "genlab/lineage.hpp"
#include "genlab/random.hpp"
#include "genlab/tree.hpp"

namespace genlab {

enum class event_kind : std::uint8_t { resample = 0, mutate = 1, migrate = 2, select = 3 };

struct moran_event {
  double time;
  event_kind kind;
  std::int32_t a;    // resample/select: copier; mutate/migrate: individual
  std::int32_t b;    // resample/select: replaced individual
  std::int32_t aux;  // mutate: new type; migrate: new site
};

struct moran_config {
  std::size_t n = 2;

  double resampling_rate = 1.0;  // per unordered same-site pair
  std::optional<step_function> resampling_schedule;  // time-dependent override

  double mutation_rate = 0.0;          // per individual
  std::size_t n_types = 1;
  std::vector<double> mutation_kernel;  // row-major n_types x n_types

  double migration_rate = 0.0;          // per individual
  std::size_t n_sites = 1;
  std::vector<double> migration_kernel;  // row-major n_sites x n_sites

  double selection_alpha = 0.0;   // extra ordered-pair rate alpha*chi(type)/n
  std::vector<double> fitness;    // chi per type, in [0,1]

  ultrametric_space initial = ultrametric_space::single_leaf(1.0);
  std::vector<std::int32_t> initial_assignment;  // optional leaf per individual

  bool record_events = false;
  std::uint64_t seed = 1;

  double resampling_rate_at(double t) const {
    return resampling_schedule ? resampling_schedule->at(t) : resampling_rate;
  }

  bool marked_model() const { return n_types > 1 || n_sites > 1 || initial.marked(); }

  void validate() const {
    if (n < 1) throw zero_population("moran model needs n >= 1");
    if (resampling_rate < 0 || mutation_rate < 0 || migration_rate < 0 || selection_alpha < 0)
      throw invalid_kernel("rates must be >= 0");
    if (resampling_schedule && !resampling_schedule->valid())
      throw invalid_kernel("resampling schedule must start at 0 with increasing times");
    if (mutation_rate > 0) check_stochastic(mutation_kernel, n_types, "mutation");
    if (migration_rate > 0) check_stochastic(migration_kernel, n_sites, "migration");
    if (selection_alpha > 0) {
      if (fitness.size() != n_types) throw invalid_kernel("fitness vector size != n_types");
      for (double f : fitness)
        if (f < 0 || f > 1) throw invalid_kernel("fitness values must lie in [0,1]");
    }
    if (initial.is_zero() || initial.total_mass() <= 0)
      throw zero_population("initial space must have positive mass");
    if (!initial_assignment.empty()) {
      if (initial_assignment.size() != n)
        throw invalid_kernel("initial assignment length != n");
      for (auto ix : initial_assignment)
        if (ix < 0 || static_cast<std::size_t>(ix) >= initial.leaf_count())
          throw invalid_kernel("initial assignment leaf out of range");
    }
  }

 private:
  static void check_stochastic(const std::vector<double>& k, std::size_t m, const char* which) {
    if (k.size() != m * m) throw invalid_kernel(std::string(which) + " kernel size");
    for (std::size_t i = 0; i < m; ++i) {
      double row = 0;
      for (std::size_t j = 0; j < m; ++j) {
        if (k[i * m + j] < 0) throw invalid_kernel(std::string(which) + " kernel negative entry");
        row += k[i * m + j];
      }
      if (std::abs(row - 1.0) > 1e-9) throw invalid_kernel(std::string(which) + " kernel row sum != 1");
    }
  }
};

struct moran_state {
  double time = 0;
  std::vector<std::int32_t> type;      // per individual
  std::vector<std::int32_t> site;      // per individual
  std::vector<std::int32_t> initial_type;  // types at t = 0 (event-log replay)
  lineage_forest forest{0};
  std::vector<std::int32_t> ptr;       // lineage pointer per individual
  std::vector<std::int32_t> root_leaf; // founder -> initial-space leaf
  ultrametric_space initial;
  bool marked = false;
  std::vector<moran_event> events;     // present when record_events

  // time of most recent common ancestor; -1 when the pair never coalesced
  // within the run (the pair then consults the initial space)
  double t_mrca(std::size_t i, std::size_t j) const {
    if (i == j) return time;
    return forest.mrca_time(ptr[i], ptr[j]);
  }

  std::vector<double> t_mrca_matrix() const {
    std::size_t n = ptr.size();
    std::vector<double> m(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      m[i * n + i] = time;
      for (std::size_t j = i + 1; j < n; ++j)
        m[i * n + j] = m[j * n + i] = t_mrca(i, j);
    }
    return m;
  }
};

namespace detail {

inline std::int32_t map_type(const mark& mk) { return mk.type < 0 ? 0 : mk.type; }
inline std::int32_t map_site(const mark& mk) { return mk.location < 0 ? 0 : mk.location; }

}  // namespace detail

inline moran_state moran_run(const moran_config& cfg, double horizon) {
  cfg.validate();
  const std::size_t n = cfg.n;
  rng_stream rng(cfg.seed);

  moran_state st;
  st.initial = cfg.initial;
  st.marked = cfg.marked_model();
  st.forest = lineage_forest(n);
  st.ptr.resize(n);
  st.type.resize(n);
  st.site.resize(n);
  st.root_leaf.resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    std::size_t leaf = cfg.initial_assignment.empty()
                           ? cfg.initial.sample_leaf(rng)
                           : static_cast<std::size_t>(cfg.initial_assignment[i]);
    st.root_leaf[i] = static_cast<std::int32_t>(leaf);
    st.ptr[i] = static_cast<std::int32_t>(i);
    const mark mk = cfg.initial.leaf_mark(leaf);
    st.type[i] = detail::map_type(mk);
    st.site[i] = detail::map_site(mk);
    if (st.type[i] >= static_cast<std::int32_t>(cfg.n_types) ||
        st.site[i] >= static_cast<std::int32_t>(cfg.n_sites))
      throw invalid_kernel("initial space marks exceed configured alphabets");
  }
  st.initial_type = st.type;

  // per-site individual lists
  std::vector<std::vector<std::int32_t>> members(cfg.n_sites);
  std::vector<std::int32_t> pos(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos[i] = static_cast<std::int32_t>(members[static_cast<std::size_t>(st.site[i])].size());
    members[static_cast<std::size_t>(st.site[i])].push_back(static_cast<std::int32_t>(i));
  }
  // per-site fitness sums (selection only)
  const bool with_sel = cfg.selection_alpha > 0;
  std::vector<double> fit_sum(cfg.n_sites, 0.0);
  auto chi = [&](std::int32_t ty) { return with_sel ? cfg.fitness[static_cast<std::size_t>(ty)] : 0.0; };
  if (with_sel)
    for (std::size_t i = 0; i < n; ++i) fit_sum[static_cast<std::size_t>(st.site[i])] += chi(st.type[i]);

  auto pair_count = [&]() {
    double c = 0;
    for (const auto& m : members) {
      double k = static_cast<double>(m.size());
      c += k * (k - 1) / 2;
    }
    return c;
  };
  auto sel_weight = [&]() {
    double w = 0;
    for (std::size_t g = 0; g < cfg.n_sites; ++g)
      w += (static_cast<double>(members[g].size()) - 1) * fit_sum[g];
    return w;
  };

  const double mut_total = cfg.mutation_rate * static_cast<double>(n);
  const double mig_total = cfg.migration_rate * static_cast<double>(n);

  double t = 0;
  std::size_t estimate = static_cast<std::size_t>(
      std::min(5e7, (cfg.resampling_rate_at(0) * pair_count() + mut_total + mig_total) * horizon * 1.3 + 64));
  st.events.reserve(cfg.record_events ? estimate : 0);

  auto draw_from_row = [&](const std::vector<double>& kernel, std::size_t m, std::int32_t row) {
    double u = rng.uniform01();
    double acc = 0;
    const double* r = &kernel[static_cast<std::size_t>(row) * m];
    for (std::size_t j = 0; j + 1 < m; ++j) {
      acc += r[j];
      if (u < acc) return static_cast<std::int32_t>(j);
    }
    return static_cast<std::int32_t>(m - 1);
  };

  while (true) {
    const double pc = pair_count();
    const double res_rate_now = cfg.resampling_rate_at(t);
    double res_total = res_rate_now * pc;
    double sel_total = with_sel ? cfg.selection_alpha * sel_weight() / static_cast<double>(n) : 0.0;
    double lambda = res_total + mut_total + mig_total + sel_total;

    // next schedule breakpoint, if any, caps the exponential race
    double boundary = horizon;
    if (cfg.resampling_schedule) {
      const auto& ts = cfg.resampling_schedule->times;
      auto it = std::upper_bound(ts.begin(), ts.end(), t);
      if (it != ts.end()) boundary = std::min(boundary, *it);
    }
    if (lambda <= 0) {
      t = boundary;
      if (t >= horizon) break;
      continue;
    }
    double tau = rng.exponential(lambda);
    if (t + tau >= boundary) {
      t = boundary;
      if (t >= horizon) break;
      continue;
    }
    t += tau;

    double u = rng.uniform01() * lambda;
    if (u < res_total) {
      // site proportional to its pair count, then a uniform ordered pair
      double pick = rng.uniform01() * pc;
      std::size_t g = 0;
      for (; g + 1 < cfg.n_sites; ++g) {
        double k = static_cast<double>(members[g].size());
        double w = k * (k - 1) / 2;
        if (pick < w) break;
        pick -= w;
      }
      auto& mem = members[g];
      std::size_t ai = static_cast<std::size_t>(rng.uniform_below(mem.size()));
      std::size_t bi = static_cast<std::size_t>(rng.uniform_below(mem.size() - 1));
      if (bi >= ai) ++bi;
      std::int32_t a = mem[ai], b = mem[bi];
      std::int32_t node = st.forest.record_birth(st.ptr[a], t);
      st.ptr[a] = st.ptr[b] = node;
      if (with_sel) fit_sum[g] += chi(st.type[a]) - chi(st.type[b]);
      st.type[b] = st.type[a];
      if (cfg.record_events) st.events.push_back({t, event_kind::resample, a, b, -1});
    } else if (u < res_total + mut_total) {
      std::int32_t i = static_cast<std::int32_t>(rng.uniform_below(n));
      std::int32_t ty = draw_from_row(cfg.mutation_kernel, cfg.n_types, st.type[i]);
      if (with_sel)
        fit_sum[static_cast<std::size_t>(st.site[i])] += chi(ty) - chi(st.type[i]);
      st.type[i] = ty;
      if (cfg.record_events) st.events.push_back({t, event_kind::mutate, i, -1, ty});
    } else if (u < res_total + mut_total + mig_total) {
      std::int32_t i = static_cast<std::int32_t>(rng.uniform_below(n));
      std::int32_t dst = draw_from_row(cfg.migration_kernel, cfg.n_sites, st.site[i]);
      std::int32_t src = st.site[i];
      if (dst != src) {
        auto& from = members[static_cast<std::size_t>(src)];
        std::int32_t last = from.back();
        from[static_cast<std::size_t>(pos[i])] = last;
        pos[last] = pos[i];
        from.pop_back();
        auto& to = members[static_cast<std::size_t>(dst)];
        pos[i] = static_cast<std::int32_t>(to.size());
        to.push_back(i);
        st.site[i] = dst;
        if (with_sel) {
          fit_sum[static_cast<std::size_t>(src)] -= chi(st.type[i]);
          fit_sum[static_cast<std::size_t>(dst)] += chi(st.type[i]);
        }
      }
      if (cfg.record_events) st.events.push_back({t, event_kind::migrate, i, -1, dst});
    } else {
      // selection: site by (count-1)*fitness sum, copier by fitness, target uniform
      double pick = rng.uniform01() * sel_weight();
      std::size_t g = 0;
      for (; g + 1 < cfg.n_sites; ++g) {
        double w = (static_cast<double>(members[g].size()) - 1) * fit_sum[g];
        if (pick < w) break;
        pick -= w;
      }
      auto& mem = members[g];
      double cw = rng.uniform01() * fit_sum[g];
      std::size_t ai = 0;
      for (; ai + 1 < mem.size(); ++ai) {
        cw -= chi(st.type[mem[ai]]);
        if (cw < 0) break;
      }
      std::size_t bi = static_cast<std::size_t>(rng.uniform_below(mem.size() - 1));
      if (bi >= ai) ++bi;
      std::int32_t a = mem[ai], b = mem[bi];
      std::int32_t node = st.forest.record_birth(st.ptr[a], t);
      st.ptr[a] = st.ptr[b] = node;
      fit_sum[g] += chi(st.type[a]) - chi(st.type[b]);
      st.type[b] = st.type[a];
      if (cfg.record_events) st.events.push_back({t, event_kind::select, a, b, -1});
    }
  }

  st.time = horizon;
  return st;
}

// Builds the genealogy read-out of a run: leaves are the living individuals
// with mass 1/n and their current marks; in-run coalescence times give the
// distances, and lineages that never met are grafted onto the initial space
// through their founder's assigned leaf.
inline ultrametric_space extract_genealogy(const moran_state& st);

namespace detail {

// shared by moran/branching extraction: graft per-founder components onto
// the initial space using the recorded founder->leaf assignment
inline ultrametric_space graft_components(const ultrametric_space& initial,
                                          std::vector<lineage_forest::component> comps,
                                          std::span<const std::int32_t> root_leaf, double now) {
  std::vector<std::vector<tree_node>> per_leaf(initial.leaf_count());
  for (auto& c : comps)
    per_leaf[static_cast<std::size_t>(root_leaf[static_cast<std::size_t>(c.founder)])].push_back(
        std::move(c.tree));

  std::function<std::optional<tree_node>(const tree_node&, std::size_t&)> build =
      [&](const tree_node& bn, std::size_t& leaf_idx) -> std::optional<tree_node> {
    if (bn.is_leaf()) {
      auto& group = per_leaf[leaf_idx++];
      if (group.empty()) return std::nullopt;
      if (group.size() == 1) return std::move(group.front());
      return tree_node::internal(2 * now, std::move(group));
    }
    std::vector<tree_node> sub;
    for (const auto& k : bn.kids) {
      if (auto r = build(k, leaf_idx)) sub.push_back(std::move(*r));
    }
    if (sub.empty()) return std::nullopt;
    if (sub.size() == 1) return std::move(sub.front());
    return tree_node::internal(bn.value + 2 * now, std::move(sub));
  };
  std::size_t leaf_idx = 0;
  auto built = build(initial.root(), leaf_idx);
  if (!built) return ultrametric_space::zero();
  return ultrametric_space(std::move(*built));
}

}  // namespace detail

inline ultrametric_space extract_genealogy(const moran_state& st) {
  const std::size_t n = st.ptr.size();
  const double w = 1.0 / static_cast<double>(n);
  auto payload = [&](std::size_t i) {
    mark mk;
    if (st.marked) mk = mark{st.site[i], st.type[i]};
    return tree_node::leaf(w, mk);
  };
  auto comps = st.forest.reduce(st.ptr, st.time, payload);
  return detail::graft_components(st.initial, std::move(comps), st.root_leaf, st.time);
}

}  // namespace genlab
