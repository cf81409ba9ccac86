#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "genlab/branching.hpp"
#include "genlab/coalescent.hpp"
#include "genlab/errors.hpp"
#include "genlab/moran.hpp"
#include "genlab/polynomial.hpp"
#include "genlab/stats.hpp"

namespace genlab {

struct tolerance_policy {
  double z = 3.0;
  double bias = -1;  // negative: use the experiment's default finite-size budget
};

struct check_result {
  std::string name;
  std::string kind;  // "z" | "ks" | "ad" | "count" | "exact"
  double forward = 0, forward_se = 0;
  double dual = 0, dual_se = 0;
  double statistic = 0;  // z score, p-value, A^2 or count, by kind
  double threshold = 0;
  bool pass = false;
  std::size_t forward_reps = 0, dual_reps = 0;
};

struct duality_report {
  std::string experiment;
  std::uint64_t master_seed = 0;
  std::size_t workers = 1;
  std::vector<check_result> checks;
  bool pass = true;

  void add(check_result c) {
    pass = pass && c.pass;
    checks.push_back(std::move(c));
  }
};

namespace detail {

inline check_result two_sided_z(std::string name, mean_se f, mean_se d, double z, double bias) {
  check_result c;
  c.name = std::move(name);
  c.kind = "z";
  c.forward = f.mean;
  c.forward_se = f.se;
  c.dual = d.mean;
  c.dual_se = d.se;
  c.forward_reps = f.n;
  c.dual_reps = d.n;
  double se = std::sqrt(f.se * f.se + d.se * d.se);
  double delta = std::abs(f.mean - d.mean);
  c.statistic = se > 0 ? delta / se : (delta == 0 ? 0 : std::numeric_limits<double>::infinity());
  c.threshold = z;
  c.pass = delta <= z * se + bias;
  return c;
}

inline check_result value_check(std::string name, mean_se got, double want, double z, double bias) {
  mean_se target{want, 0.0, 1};
  auto c = two_sided_z(std::move(name), got, target, z, bias);
  return c;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// moment duality: Moran forward vs enriched Kingman dual on one polynomial

struct moment_duality_experiment {
  moran_config moran;
  dual_config dual;
  polynomial_spec poly = polynomial_spec::exponential(2, 0.5);
  double horizon = 1.0;
  std::size_t forward_reps = 10000, dual_reps = 10000;
  tolerance_policy tol;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

inline duality_report run_moment_duality(const moment_duality_experiment& ex) {
  duality_report rep;
  rep.experiment = "moment-duality";
  rep.master_seed = ex.seed;
  rep.workers = ex.workers;
  if (ex.poly.order() != ex.dual.n)
    throw order_mismatch("polynomial order != dual sample size");
  if (ex.dual.mode != dual_mode::plain && !ex.dual.spatial())
    throw config_invalid("moment duality uses the plain or spatial dual");

  const double bias = ex.tol.bias >= 0 ? ex.tol.bias : 10.0 / static_cast<double>(ex.moran.n);

  // deterministic one-point case: order-1 polynomials without marks are
  // constants on normalized states, so both sides coincide exactly
  if (ex.poly.order() == 1 && !ex.poly.has_mark_factor()) {
    double c0 = ex.poly.kernel({});
    check_result c;
    c.name = "order-1 constant";
    c.kind = "exact";
    c.forward = c.dual = c0;
    c.pass = true;
    rep.add(c);
    return rep;
  }

  mass_decomposition init = decompose(ex.moran.initial);
  const ultrametric_space initial_hat = *init.normalized;

  std::vector<double> fwd(ex.forward_reps);
  const bool exact_ok =
      std::pow(static_cast<double>(ex.moran.n), static_cast<double>(ex.poly.order())) <= 1e7;
  parallel_replicates(ex.forward_reps, ex.workers, [&](std::size_t i) {
    moran_config local = ex.moran;
    local.seed = rng_stream::for_replicate(ex.seed, i).next();
    moran_state run = moran_run(local, ex.horizon);
    ultrametric_space g = extract_genealogy(run);
    if (exact_ok) {
      fwd[i] = evaluate_exact(g, ex.poly).value;
    } else {
      rng_stream eval_rng = rng_stream::for_replicate(ex.seed ^ 0xeaa1ULL, i);
      fwd[i] = evaluate_monte_carlo(g, ex.poly, 2048, eval_rng).value;
    }
  });

  std::vector<double> dua(ex.dual_reps);
  parallel_replicates(ex.dual_reps, ex.workers, [&](std::size_t i) {
    dual_config local = ex.dual;
    local.seed = rng_stream::for_replicate(ex.seed ^ 0xd0a1ULL, i).next();
    coalescent_state st = coalescent_run(local, ex.horizon);
    rng_stream vrng = rng_stream::for_replicate(ex.seed ^ 0xa2c3ULL, i);
    dua[i] = duality_value(initial_hat, st, ex.poly, vrng);
  });

  rep.add(detail::two_sided_z("E[Phi(U_t)] forward vs dual", reduce_mean(fwd), reduce_mean(dua),
                              ex.tol.z, bias));
  return rep;
}

// ---------------------------------------------------------------------------
// Feynman-Kac duality: critical branching forward vs weighted Kingman dual,
// unnormalized polynomials

struct fk_duality_experiment {
  branching_config branching;
  polynomial_spec poly = polynomial_spec::exponential(2, 0.5);
  double horizon = 0.5;
  std::size_t forward_reps = 10000, dual_reps = 10000;
  tolerance_policy tol;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

inline duality_report run_fk_duality(const fk_duality_experiment& ex) {
  duality_report rep;
  rep.experiment = "fk-duality";
  rep.master_seed = ex.seed;
  rep.workers = ex.workers;
  if (ex.branching.drift) throw config_invalid("the weighted dual covers critical branching only");
  const double bias =
      ex.tol.bias >= 0 ? ex.tol.bias : 10.0 / static_cast<double>(ex.branching.particles_per_unit_mass);
  const std::size_t n = ex.poly.order();

  std::vector<double> fwd(ex.forward_reps);
  parallel_replicates(ex.forward_reps, ex.workers, [&](std::size_t i) {
    branching_config local = ex.branching;
    local.record_mass_path = false;
    local.seed = rng_stream::for_replicate(ex.seed, i).next();
    branching_state run = branching_run(local, ex.horizon);
    if (n == 1) {
      fwd[i] = ex.poly.kernel({}) * run.total_mass();
      return;
    }
    ultrametric_space g = extract_genealogy_raw(run);
    if (g.is_zero()) {
      fwd[i] = 0;
      return;
    }
    fwd[i] = evaluate_exact(g, ex.poly, {.normalized = false}).value;
  });

  ultrametric_space initial_fin =
      scale_masses(*decompose(ex.branching.initial).normalized, ex.branching.initial_mass);

  mean_se dual_est;
  std::vector<double> dua;
  if (n == 1) {
    // a single line never coalesces and carries no weight: H = phi * mass_0
    dual_est = {ex.poly.kernel({}) * ex.branching.initial_mass, 0.0, 1};
  } else {
    dua.resize(ex.dual_reps);
    parallel_replicates(ex.dual_reps, ex.workers, [&](std::size_t i) {
      dual_config local;
      local.n = n;
      local.rate = ex.branching.b;
      local.mode = dual_mode::feynman_kac;
      local.seed = rng_stream::for_replicate(ex.seed ^ 0xd0a1ULL, i).next();
      coalescent_state st = coalescent_run(local, ex.horizon);
      rng_stream vrng = rng_stream::for_replicate(ex.seed ^ 0xa2c3ULL, i);
      dua[i] = duality_value(initial_fin, st, ex.poly, vrng, {.unnormalized = true});
    });
    dual_est = reduce_mean(dua);
  }

  rep.add(detail::two_sided_z("E[Phi(U_t)] forward vs FK dual", reduce_mean(fwd), dual_est,
                              ex.tol.z, bias));
  return rep;
}

// ---------------------------------------------------------------------------
// equilibrium: long-run neutral Moran vs the Kingman entrance law

struct equilibrium_experiment {
  moran_config moran;
  double horizon = 20.0;
  std::vector<double> lambdas = {0.25, 0.5, 1.0};
  std::size_t forward_reps = 2000, dual_reps = 4000;
  std::size_t entrance_lines = 500;
  std::size_t triples_per_rep = 8;
  tolerance_policy tol;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

inline duality_report run_equilibrium_check(const equilibrium_experiment& ex) {
  duality_report rep;
  rep.experiment = "equilibrium";
  rep.master_seed = ex.seed;
  rep.workers = ex.workers;
  if (ex.moran.selection_alpha != 0 || ex.moran.n_sites != 1 || ex.moran.mutation_rate != 0)
    throw config_invalid("the equilibrium check runs the neutral single-site model");
  const double d = ex.moran.resampling_rate;
  const double bias = ex.tol.bias >= 0 ? ex.tol.bias : 10.0 / static_cast<double>(ex.moran.n);

  auto pair_poly = polynomial_spec::custom(2, [](std::span<const double> r) { return r[0]; });
  auto median_poly = polynomial_spec::custom(3, [](std::span<const double> r) {
    double a = r[0], b = r[1], c = r[2];
    return std::max(std::min(a, b), std::min(std::max(a, b), c));
  });

  const std::size_t n_lam = ex.lambdas.size();
  std::vector<double> f_pair(ex.forward_reps), f_median(ex.forward_reps);
  std::vector<std::vector<double>> f_exp(n_lam, std::vector<double>(ex.forward_reps));
  parallel_replicates(ex.forward_reps, ex.workers, [&](std::size_t i) {
    moran_config local = ex.moran;
    local.seed = rng_stream::for_replicate(ex.seed, i).next();
    moran_state run = moran_run(local, ex.horizon);
    ultrametric_space g = extract_genealogy(run);
    f_pair[i] = evaluate_exact(g, pair_poly).value;
    for (std::size_t l = 0; l < n_lam; ++l)
      f_exp[l][i] = evaluate_exact(g, polynomial_spec::exponential(2, ex.lambdas[l])).value;
    rng_stream mrng = rng_stream::for_replicate(ex.seed ^ 0x3e3eULL, i);
    f_median[i] = evaluate_monte_carlo(g, median_poly, ex.triples_per_rep, mrng).value;
  });

  std::vector<double> e_median(ex.dual_reps);
  parallel_replicates(ex.dual_reps, ex.workers, [&](std::size_t i) {
    rng_stream rng = rng_stream::for_replicate(ex.seed ^ 0xe117ULL, i);
    ultrametric_space tree = entrance_law_tree(ex.entrance_lines, ex.horizon, d, rng);
    e_median[i] = evaluate_monte_carlo(tree, median_poly, ex.triples_per_rep, rng).value;
  });

  rep.add(detail::value_check("mean pair distance vs 2/d", reduce_mean(f_pair), 2.0 / d, ex.tol.z,
                              bias));
  for (std::size_t l = 0; l < n_lam; ++l) {
    double lam = ex.lambdas[l];
    rep.add(detail::value_check("E[exp(-" + std::to_string(lam) + " r)] vs d/(d+2l)",
                                reduce_mean(f_exp[l]), d / (d + 2 * lam), ex.tol.z, bias));
  }
  rep.add(detail::two_sided_z("median pair distance, order 3, vs entrance law",
                              reduce_mean(f_median), reduce_mean(e_median), ex.tol.z, bias));
  return rep;
}

// ---------------------------------------------------------------------------
// strong duality: law of the time-T state vs initial grafted with the
// entrance law, tested on order-2 (KS) and order-3 (energy) samples

struct strong_duality_experiment {
  moran_config moran;
  double horizon = 1.0;
  std::size_t samples = 10000;  // per side
  std::size_t entrance_lines = 1000;
  double level = 0.01;
  std::size_t permutations = 400;
  std::size_t energy_sub = 1500;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

inline duality_report run_strong_duality_check(const strong_duality_experiment& ex) {
  duality_report rep;
  rep.experiment = "strong-duality";
  rep.master_seed = ex.seed;
  rep.workers = ex.workers;
  if (ex.moran.selection_alpha != 0 || ex.moran.n_sites != 1 || ex.moran.mutation_rate != 0)
    throw config_invalid("strong duality runs the neutral single-site model");

  mass_decomposition init = decompose(ex.moran.initial);
  const ultrametric_space initial_hat = *init.normalized;
  const double T = ex.horizon;
  const double d = ex.moran.resampling_rate;

  // forward: one ordered-distinct pair and one triple per independent run
  std::vector<double> f_pairs(ex.samples);
  std::vector<double> f_triples(ex.samples * 3);
  parallel_replicates(ex.samples, ex.workers, [&](std::size_t i) {
    moran_config local = ex.moran;
    local.seed = rng_stream::for_replicate(ex.seed, i).next();
    moran_state run = moran_run(local, T);
    rng_stream srng = rng_stream::for_replicate(ex.seed ^ 0x5a5aULL, i);
    auto dist = [&](std::size_t a, std::size_t b) {
      double tm = run.t_mrca(a, b);
      if (tm >= 0) return 2 * (T - tm);
      std::size_t ra = static_cast<std::size_t>(run.forest.root_of(run.ptr[a]));
      std::size_t rb = static_cast<std::size_t>(run.forest.root_of(run.ptr[b]));
      return 2 * T + initial_hat.distance(static_cast<std::size_t>(run.root_leaf[ra]),
                                          static_cast<std::size_t>(run.root_leaf[rb]));
    };
    std::size_t a = static_cast<std::size_t>(srng.uniform_below(local.n));
    std::size_t b = static_cast<std::size_t>(srng.uniform_below(local.n - 1));
    if (b >= a) ++b;
    f_pairs[i] = dist(a, b);
    std::size_t t0 = static_cast<std::size_t>(srng.uniform_below(local.n));
    std::size_t t1 = static_cast<std::size_t>(srng.uniform_below(local.n - 1));
    if (t1 >= t0) ++t1;
    std::size_t t2 = static_cast<std::size_t>(srng.uniform_below(local.n - 2));
    if (t2 >= std::min(t0, t1)) ++t2;
    if (t2 >= std::max(t0, t1)) ++t2;
    double tr[3] = {dist(t0, t1), dist(t0, t2), dist(t1, t2)};
    std::sort(tr, tr + 3);
    std::copy(tr, tr + 3, &f_triples[i * 3]);
  });

  // dual: fresh grafted entrance-law tree per sample
  std::vector<double> d_pairs(ex.samples);
  std::vector<double> d_triples(ex.samples * 3);
  parallel_replicates(ex.samples, ex.workers, [&](std::size_t i) {
    rng_stream rng = rng_stream::for_replicate(ex.seed ^ 0x7171ULL, i);
    ultrametric_space tree = entrance_law_tree(ex.entrance_lines, T, d, rng);
    ultrametric_space grafted = graft(initial_hat, tree, T, rng);
    auto draw_distinct = [&](std::size_t k, std::size_t forbidden1, std::size_t forbidden2) {
      (void)k;
      for (;;) {
        std::size_t x = grafted.sample_leaf(rng);
        if (x != forbidden1 && x != forbidden2) return x;
      }
    };
    std::size_t a = grafted.sample_leaf(rng);
    std::size_t b = draw_distinct(0, a, a);
    d_pairs[i] = grafted.distance(a, b);
    std::size_t u0 = grafted.sample_leaf(rng);
    std::size_t u1 = draw_distinct(1, u0, u0);
    std::size_t u2 = draw_distinct(2, u0, u1);
    double tr[3] = {grafted.distance(u0, u1), grafted.distance(u0, u2), grafted.distance(u1, u2)};
    std::sort(tr, tr + 3);
    std::copy(tr, tr + 3, &d_triples[i * 3]);
  });

  rng_stream prng(ex.seed ^ 0xbeefULL);
  double p_ks = ks_two_sample_pvalue_permutation(f_pairs, d_pairs, ex.permutations, prng);
  check_result ks;
  ks.name = "order-2 pair distance law, forward vs grafted entrance law";
  ks.kind = "ks";
  ks.forward_reps = ks.dual_reps = ex.samples;
  ks.statistic = p_ks;
  ks.threshold = ex.level;
  ks.pass = p_ks >= ex.level;
  rep.add(ks);

  std::size_t m = std::min(ex.energy_sub, ex.samples);
  std::vector<double> fx(f_triples.begin(), f_triples.begin() + static_cast<std::ptrdiff_t>(3 * m));
  std::vector<double> dx(d_triples.begin(), d_triples.begin() + static_cast<std::ptrdiff_t>(3 * m));
  double p_en = energy_pvalue_permutation(fx, dx, 3, 200, prng);
  check_result en;
  en.name = "order-3 sorted distance triples, energy test";
  en.kind = "ks";
  en.forward_reps = en.dual_reps = m;
  en.statistic = p_en;
  en.threshold = ex.level;
  en.pass = p_en >= ex.level;
  rep.add(en);
  return rep;
}

// ---------------------------------------------------------------------------
// conditioned duality: per shared total-mass path, the conditioned forward
// dynamics (time-inhomogeneous resampling at rate b/mass) vs the grafted
// conditioned dual; per-path KS at the given level plus aggregate p-value
// uniformity. Per-path failures at the nominal rate are expected; the count
// threshold is the 99.9% binomial envelope.

struct conditioned_duality_experiment {
  branching_config branching;
  double horizon = 0.5;
  std::size_t paths = 200;
  std::size_t samples_per_side = 300;
  std::size_t forward_n = 100;
  double level = 0.01;
  std::size_t permutations = 999;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
};

inline duality_report run_conditioned_duality(const conditioned_duality_experiment& ex) {
  duality_report rep;
  rep.experiment = "conditioned-duality";
  rep.master_seed = ex.seed;
  rep.workers = ex.workers;

  std::vector<double> pvals(ex.paths, -1);  // -1: extinct path, skipped
  parallel_replicates(ex.paths, ex.workers, [&](std::size_t p) {
    branching_config bl = ex.branching;
    bl.record_mass_path = true;
    bl.seed = rng_stream::for_replicate(ex.seed, p).next();
    branching_state run = branching_run(bl, ex.horizon);
    if (run.extinct()) return;
    const step_function& mass = run.mass_path;

    // conditioned forward: Moran resampling at rate b/mass(t)
    step_function sched;
    sched.times = mass.times;
    sched.values.resize(mass.values.size());
    for (std::size_t i = 0; i < mass.values.size(); ++i)
      sched.values[i] = mass.values[i] > 0 ? ex.branching.b / mass.values[i] : 0.0;

    std::vector<double> fwd(ex.samples_per_side), dua(ex.samples_per_side);
    for (std::size_t s = 0; s < ex.samples_per_side; ++s) {
      moran_config mc;
      mc.n = ex.forward_n;
      mc.resampling_rate = 0;
      mc.resampling_schedule = sched;
      mc.seed = rng_stream::for_replicate(ex.seed ^ (0x1000 + p), s).next();
      moran_state ms = moran_run(mc, ex.horizon);
      rng_stream srng = rng_stream::for_replicate(ex.seed ^ (0x2000 + p), s);
      std::size_t a = static_cast<std::size_t>(srng.uniform_below(mc.n));
      std::size_t b = static_cast<std::size_t>(srng.uniform_below(mc.n - 1));
      if (b >= a) ++b;
      double tm = ms.t_mrca(a, b);
      fwd[s] = tm >= 0 ? 2 * (ex.horizon - tm) : 2 * ex.horizon;

      dual_config dc;
      dc.n = 2;
      dc.rate = ex.branching.b;
      dc.mode = dual_mode::conditioned;
      dc.mass_path = mass;
      dc.mass_path_end = ex.horizon;
      dc.seed = rng_stream::for_replicate(ex.seed ^ (0x3000 + p), s).next();
      coalescent_state cs = coalescent_run(dc, ex.horizon);
      dua[s] = cs.dual_distance(0, 1);
    }
    rng_stream prng = rng_stream::for_replicate(ex.seed ^ 0x4000, p);
    pvals[p] = ks_two_sample_pvalue_permutation(fwd, dua, ex.permutations, prng);
  });

  std::vector<double> kept;
  for (double p : pvals)
    if (p >= 0) kept.push_back(p);
  std::size_t rejected = 0;
  for (double p : kept)
    if (p < ex.level) ++rejected;

  // binomial envelope at roughly the 99.9% quantile of Bin(paths, level)
  double mean_rej = static_cast<double>(kept.size()) * ex.level;
  double envelope = mean_rej + 3.1 * std::sqrt(mean_rej * (1 - ex.level)) + 1;

  check_result cnt;
  cnt.name = "per-path KS rejections at the nominal level";
  cnt.kind = "count";
  cnt.forward_reps = kept.size();
  cnt.statistic = static_cast<double>(rejected);
  cnt.threshold = envelope;
  cnt.pass = static_cast<double>(rejected) <= envelope;
  rep.add(cnt);

  double a2 = anderson_darling_uniform(kept);
  check_result ad;
  ad.name = "p-value uniformity (Anderson-Darling)";
  ad.kind = "ad";
  ad.forward_reps = kept.size();
  ad.statistic = a2;
  ad.threshold = kAndersonDarling1pc;
  ad.pass = a2 < kAndersonDarling1pc;
  rep.add(ad);
  return rep;
}

}  // namespace genlab
