#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "genlab/errors.hpp"
#include "genlab/harness.hpp"
#include "genlab/polynomial.hpp"
#include "genlab/random.hpp"
#include "genlab/stats.hpp"
#include "genlab/tree.hpp"

namespace genlab {

// Finite atomic intensity measure on components of diameter <= 2h: the
// sampling side of the Levy-Khintchine picture at truncation level h.
struct levy_measure_spec {
  struct atom {
    double intensity = 1;  // c_i > 0
    ultrametric_space component;
  };
  std::vector<atom> atoms;
  double h = 1;

  void validate() const {
    if (h <= 0) throw config_invalid("truncation level must be > 0");
    for (const auto& a : atoms) {
      if (a.intensity <= 0) throw config_invalid("atom intensity must be > 0");
      if (a.component.is_zero()) throw config_invalid("atom component must be nonzero");
      if (a.component.diameter() > 2 * h)
        throw component_too_tall("atom component diameter exceeds 2h");
    }
  }

  double total_intensity() const {
    double c = 0;
    for (const auto& a : atoms) c += a.intensity;
    return c;
  }
};

// Poisson concatenation: independent counts N_i ~ Poisson(c_i), all copies
// concatenated at level h; the empty draw is the zero element.
inline ultrametric_space poisson_concatenate(const levy_measure_spec& spec, rng_stream& rng) {
  spec.validate();
  std::vector<ultrametric_space> parts;
  for (const auto& a : spec.atoms) {
    std::uint64_t k = rng.poisson(a.intensity);
    for (std::uint64_t c = 0; c < k; ++c) parts.push_back(a.component);
  }
  return concatenate(parts, spec.h);
}

// Additive functionals on which exp(-Phi_h) factorizes over concatenation
// components: order-1 mass functionals theta * mass, and higher-order
// kernels vanishing on the 2h boundary (cross-component tuples then
// contribute zero). The boundary probe rejects anything else.
inline void require_boundary_vanishing(const polynomial_spec& poly, double h) {
  if (poly.order() == 1) return;
  std::vector<double> probe(poly.pair_count(), 0.0);
  for (std::size_t k = 0; k < probe.size(); ++k) {
    std::fill(probe.begin(), probe.end(), 0.0);
    probe[k] = 2 * h;
    if (poly.kernel(probe) != 0)
      throw kernel_not_boundary_vanishing(
          "kernel does not vanish when a pairwise entry sits at 2h");
    // also with the remaining entries strictly inside
    for (std::size_t m = 0; m < probe.size(); ++m)
      if (m != k) probe[m] = h;
    if (poly.kernel(probe) != 0)
      throw kernel_not_boundary_vanishing(
          "kernel does not vanish when a pairwise entry sits at 2h");
  }
}

inline double unnormalized_value(const ultrametric_space& u, const polynomial_spec& poly) {
  if (u.is_zero()) return 0;
  return evaluate_exact(u, poly, {.normalized = false}).value;
}

// Checks -log E[exp(-Phi_h(sample))] against the exact atomic integral
// sum_i c_i (1 - exp(-Phi_h(u_i))).
struct laplace_check_experiment {
  levy_measure_spec spec;
  polynomial_spec poly = polynomial_spec::constant(1, 1.0);
  std::size_t reps = 100000;
  double z = 3.0;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

inline duality_report laplace_check(const laplace_check_experiment& ex) {
  ex.spec.validate();
  require_boundary_vanishing(ex.poly, ex.spec.h);

  duality_report rep;
  rep.experiment = "laplace-check";
  rep.master_seed = ex.seed;
  rep.workers = ex.workers;

  double rhs = 0;
  for (const auto& a : ex.spec.atoms)
    rhs += a.intensity * -std::expm1(-unnormalized_value(a.component, ex.poly));

  std::vector<double> vals(ex.reps);
  parallel_replicates(ex.reps, ex.workers, [&](std::size_t i) {
    rng_stream rng = rng_stream::for_replicate(ex.seed, i);
    ultrametric_space s = poisson_concatenate(ex.spec, rng);
    vals[i] = std::exp(-unnormalized_value(s, ex.poly));
  });
  mean_se lhs = reduce_mean(vals);

  // delta method: se of -log(mean)
  mean_se left{-std::log(lhs.mean), lhs.se / lhs.mean, lhs.n};
  rep.add(detail::two_sided_z("-log Laplace functional vs atomic integral", left,
                              {rhs, 0.0, 1}, ex.z, 0.0));
  return rep;
}

// t-infinite-divisibility splitting: thinning the intensity by 1/n and
// concatenating n independent draws reproduces the law of the direct draw
// (Poisson superposition); KS on total mass and on sampled pair distances
// of nonzero outcomes.
struct split_check_experiment {
  levy_measure_spec spec;
  std::size_t parts = 2;
  std::size_t reps = 10000;
  double level = 0.01;
  std::size_t permutations = 400;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

inline duality_report split_check(const split_check_experiment& ex) {
  ex.spec.validate();
  if (ex.parts < 1) throw config_invalid("split needs >= 1 part");

  duality_report rep;
  rep.experiment = "split-check";
  rep.master_seed = ex.seed;
  rep.workers = ex.workers;

  levy_measure_spec thinned = ex.spec;
  for (auto& a : thinned.atoms) a.intensity /= static_cast<double>(ex.parts);

  std::vector<double> direct_mass(ex.reps), split_mass(ex.reps);
  std::vector<double> direct_pair(ex.reps, -1), split_pair(ex.reps, -1);
  parallel_replicates(ex.reps, ex.workers, [&](std::size_t i) {
    rng_stream r1 = rng_stream::for_replicate(ex.seed, i);
    ultrametric_space d = poisson_concatenate(ex.spec, r1);
    direct_mass[i] = d.total_mass();
    if (!d.is_zero() && d.leaf_count() >= 1) {
      auto s = sample_distance_matrix(d, 2, r1);
      direct_pair[i] = s.at(0, 1);
    }
    rng_stream r2 = rng_stream::for_replicate(ex.seed ^ 0x57175717ULL, i);
    std::vector<ultrametric_space> pieces;
    for (std::size_t k = 0; k < ex.parts; ++k) pieces.push_back(poisson_concatenate(thinned, r2));
    ultrametric_space s = concatenate(pieces, ex.spec.h);
    split_mass[i] = s.total_mass();
    if (!s.is_zero() && s.leaf_count() >= 1) {
      auto smp = sample_distance_matrix(s, 2, r2);
      split_pair[i] = smp.at(0, 1);
    }
  });

  rng_stream prng(ex.seed ^ 0xab12ULL);
  double p_mass = ks_two_sample_pvalue_permutation(direct_mass, split_mass, ex.permutations, prng);
  check_result cm;
  cm.name = "total mass law, direct vs split";
  cm.kind = "ks";
  cm.forward_reps = cm.dual_reps = ex.reps;
  cm.statistic = p_mass;
  cm.threshold = ex.level;
  cm.pass = p_mass >= ex.level;
  rep.add(cm);

  std::vector<double> dp, sp;
  for (double v : direct_pair)
    if (v >= 0) dp.push_back(v);
  for (double v : split_pair)
    if (v >= 0) sp.push_back(v);
  double p_pair = ks_two_sample_pvalue_permutation(dp, sp, ex.permutations, prng);
  check_result cp;
  cp.name = "order-2 distance law on nonzero outcomes, direct vs split";
  cp.kind = "ks";
  cp.forward_reps = dp.size();
  cp.dual_reps = sp.size();
  cp.statistic = p_pair;
  cp.threshold = ex.level;
  cp.pass = p_pair >= ex.level;
  rep.add(cp);
  return rep;
}

}  // namespace genlab
