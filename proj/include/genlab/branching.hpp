#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "genlab/errors.hpp"
#include "genlab/lineage.hpp"
#include "genlab/moran.hpp"
#include "genlab/random.hpp"
#include "genlab/tree.hpp"

namespace genlab {

// Critical binary branching particles at mass granularity 1/K: every
// particle fires at rate b*K and then splits or dies with probability 1/2
// each. The logistic drift tilts the split probability linearly in the
// current total mass around the carrying capacity, clamped to [0,1]; the
// large-K limit is the logistic Feller diffusion.
struct branching_config {
  double b = 1.0;
  std::size_t particles_per_unit_mass = 100;  // K

  struct logistic_drift {
    double c = 0;         // tilt per unit of mass excess
    double capacity = 1;  // carrying capacity (mass units)
  };
  std::optional<logistic_drift> drift;

  double initial_mass = 1.0;
  ultrametric_space initial = ultrametric_space::single_leaf(1.0);  // genealogy of founders

  std::size_t particle_budget = 1u << 20;
  bool record_mass_path = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (b < 0) throw invalid_kernel("branching rate must be >= 0");
    if (particles_per_unit_mass < 1) throw invalid_kernel("K must be >= 1");
    if (initial_mass < 0) throw invalid_kernel("initial mass must be >= 0");
    if (drift && (drift->c < 0 || drift->capacity <= 0))
      throw invalid_kernel("logistic drift needs c >= 0 and capacity > 0");
    if (initial_mass > 0 && (initial.is_zero() || initial.total_mass() <= 0))
      throw zero_population("initial space must have positive mass");
  }

  double split_probability(double mass) const {
    if (!drift) return 0.5;
    return std::clamp(0.5 * (1.0 + drift->c * (drift->capacity - mass)), 0.0, 1.0);
  }
};

struct branching_state {
  double time = 0;
  std::size_t k = 1;                     // particles per unit mass
  std::vector<std::int32_t> ptr;         // lineage pointer per living particle
  std::vector<std::int32_t> ptype;       // type per living particle (inherited)
  std::vector<std::int32_t> psite;
  lineage_forest forest{0};
  std::vector<std::int32_t> root_leaf;
  ultrametric_space initial;
  bool marked = false;
  step_function mass_path;  // recorded at event resolution

  double total_mass() const {
    return static_cast<double>(ptr.size()) / static_cast<double>(k);
  }
  bool extinct() const { return ptr.empty(); }
};

inline branching_state branching_run(const branching_config& cfg, double horizon) {
  cfg.validate();
  rng_stream rng(cfg.seed);

  const std::size_t m0 =
      static_cast<std::size_t>(std::llround(cfg.initial_mass * static_cast<double>(cfg.particles_per_unit_mass)));
  branching_state st;
  st.k = cfg.particles_per_unit_mass;
  st.initial = cfg.initial;
  st.marked = cfg.initial.marked();
  st.forest = lineage_forest(m0);
  st.root_leaf.resize(m0);
  st.ptr.resize(m0);
  st.ptype.resize(m0);
  st.psite.resize(m0);
  for (std::size_t i = 0; i < m0; ++i) {
    std::size_t leaf = cfg.initial.sample_leaf(rng);
    st.root_leaf[i] = static_cast<std::int32_t>(leaf);
    st.ptr[i] = static_cast<std::int32_t>(i);
    const mark mk = cfg.initial.leaf_mark(leaf);
    st.ptype[i] = detail::map_type(mk);
    st.psite[i] = detail::map_site(mk);
  }
  if (cfg.record_mass_path) {
    st.mass_path.times.push_back(0.0);
    st.mass_path.values.push_back(st.total_mass());
  }

  const double per_particle = cfg.b * static_cast<double>(cfg.particles_per_unit_mass);
  double t = 0;
  while (!st.ptr.empty()) {
    double lambda = per_particle * static_cast<double>(st.ptr.size());
    if (lambda <= 0) break;
    double tau = rng.exponential(lambda);
    if (t + tau >= horizon) break;
    t += tau;
    std::size_t i = static_cast<std::size_t>(rng.uniform_below(st.ptr.size()));
    double p_split = cfg.split_probability(st.total_mass());
    if (rng.uniform01() < p_split) {
      if (st.ptr.size() + 1 > cfg.particle_budget)
        throw particle_budget_exceeded("particle count exceeded the configured cap");
      std::int32_t node = st.forest.record_birth(st.ptr[i], t);
      st.ptr[i] = node;
      st.ptr.push_back(node);
      st.ptype.push_back(st.ptype[i]);
      st.psite.push_back(st.psite[i]);
    } else {
      st.ptr[i] = st.ptr.back();
      st.ptr.pop_back();
      st.ptype[i] = st.ptype.back();
      st.ptype.pop_back();
      st.psite[i] = st.psite.back();
      st.psite.pop_back();
    }
    if (cfg.record_mass_path) {
      st.mass_path.times.push_back(t);
      st.mass_path.values.push_back(st.total_mass());
    }
  }
  st.time = horizon;
  return st;
}

// Genealogy read-out: total mass m/K plus the normalized genealogy of the
// living particles (uniform leaf mass), grafted onto the initial space.
inline mass_decomposition extract_genealogy(const branching_state& st) {
  if (st.extinct()) return {0.0, std::nullopt};
  const double w = 1.0 / static_cast<double>(st.ptr.size());
  auto payload = [&](std::size_t i) {
    mark mk;
    if (st.marked) mk = mark{st.psite[i], st.ptype[i]};
    return tree_node::leaf(w, mk);
  };
  auto comps = st.forest.reduce(st.ptr, st.time, payload);
  ultrametric_space norm =
      detail::graft_components(st.initial, std::move(comps), st.root_leaf, st.time);
  return {st.total_mass(), std::move(norm)};
}

// unnormalized read-out (leaf masses 1/K, total mass m/K)
inline ultrametric_space extract_genealogy_raw(const branching_state& st) {
  auto d = extract_genealogy(st);
  if (!d.normalized) return ultrametric_space::zero();
  return scale_masses(*d.normalized, d.total_mass);
}

}  // namespace genlab
