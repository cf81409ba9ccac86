#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "genlab/errors.hpp"
#include "genlab/moran.hpp"
#include "genlab/polynomial.hpp"
#include "genlab/stats.hpp"

namespace genlab {

// Radon-Nikodym reweighting between neutral and selective path laws.
// The pair fitness kernel chi'(a,b) acts on genetic types; the default
// derived from the model fitness chi is chi'(a,b) = chi(a), which generates
// the standard selection drift when used in the exponential tilt.
enum class compensator_kind : std::uint8_t { neutral = 0, selective = 1 };

struct girsanov_config {
  double alpha = 0;          // selection coefficient of the target law
  double gamma = 1;          // tilt normalization; defaults to the resampling rate
  std::size_t n_types = 2;
  std::vector<double> fitness;    // chi per type, in [0,1]
  std::vector<double> chi_pair;   // optional chi'(a,b) row-major; empty = chi(a)
  compensator_kind compensator = compensator_kind::neutral;

  double chi(std::size_t a) const { return fitness[a]; }
  double chip(std::size_t a, std::size_t b) const {
    return chi_pair.empty() ? fitness[a] : chi_pair[a * n_types + b];
  }

  void validate() const {
    if (alpha < 0) throw parameter_mismatch("alpha must be >= 0");
    if (gamma <= 0) throw parameter_mismatch("gamma must be > 0");
    if (fitness.size() != n_types) throw parameter_mismatch("fitness size != n_types");
    for (double f : fitness)
      if (f < 0 || f > 1) throw parameter_mismatch("fitness must lie in [0,1]");
    if (!chi_pair.empty() && chi_pair.size() != n_types * n_types)
      throw parameter_mismatch("chi' kernel size != n_types^2");
  }
};

struct path_weight_result {
  double martingale = 0;           // M_T
  double quadratic_variation = 0;  // [M]_T
  double weight = 1;               // exp(M_T - [M]_T / 2)
};

// Psi(U) = (alpha/gamma) <nu x nu, chi'> as an exact order-2 marked polynomial
inline double psi(const ultrametric_space& space, const girsanov_config& cfg) {
  cfg.validate();
  if (space.is_zero() || space.total_mass() <= 0) throw empty_space("psi needs a nonempty space");
  auto poly = polynomial_spec::constant(2, 1.0).with_mark_factor(
      [&cfg](std::span<const mark> m) {
        auto a = static_cast<std::size_t>(m[0].type < 0 ? 0 : m[0].type);
        auto b = static_cast<std::size_t>(m[1].type < 0 ? 0 : m[1].type);
        return cfg.chip(a, b);
      });
  return cfg.alpha / cfg.gamma * evaluate_exact(space, poly).value;
}

namespace detail {

// per-state aggregates of the type frequency vector p
struct psi_terms {
  double q = 0;        // <p x p, chi'>
  double q_sq = 0;     // <p x p, chi'^2>
  double diag = 0;     // <p, chi'(a,a)>
  double mut = 0;      // sum_k <p x p, beta_k chi' - chi'>
  double selg = 0;     // <p x p, chi'(ab)(chi_a + chi_b)> - 2 <p x p, chi'><p, chi>
};

inline psi_terms compute_terms(std::span<const std::int64_t> counts, double n,
                               const girsanov_config& g, const moran_config& model) {
  psi_terms t;
  const std::size_t T = g.n_types;
  std::vector<double> p(T);
  for (std::size_t a = 0; a < T; ++a) p[a] = static_cast<double>(counts[a]) / n;
  double mean_fit = 0;
  for (std::size_t a = 0; a < T; ++a) mean_fit += p[a] * g.chi(a);
  double cross_fit = 0;
  for (std::size_t a = 0; a < T; ++a) {
    t.diag += p[a] * g.chip(a, a);
    for (std::size_t b = 0; b < T; ++b) {
      double c = g.chip(a, b);
      double w = p[a] * p[b];
      t.q += w * c;
      t.q_sq += w * c * c;
      cross_fit += w * c * (g.chi(a) + g.chi(b));
    }
  }
  t.selg = cross_fit - 2 * t.q * mean_fit;
  if (model.mutation_rate > 0) {
    for (std::size_t a = 0; a < T; ++a)
      for (std::size_t b = 0; b < T; ++b) {
        double w = p[a] * p[b];
        if (w == 0) continue;
        double ka = 0, kb = 0;
        for (std::size_t v = 0; v < T; ++v) {
          ka += model.mutation_kernel[a * T + v] * g.chip(v, b);
          kb += model.mutation_kernel[b * T + v] * g.chip(a, v);
        }
        t.mut += w * (ka - g.chip(a, b)) + w * (kb - g.chip(a, b));
      }
  }
  return t;
}

}  // namespace detail

// The exponential-martingale path weight exp(M_T - [M]_T/2) evaluated
// exactly along a recorded neutral path: the compensator integrand changes
// only at events, so all time integrals are exact sums. Single-site models
// only (the tilt kernel acts on types).
inline path_weight_result path_weight(const moran_config& model, const moran_state& run,
                                      const girsanov_config& cfg) {
  cfg.validate();
  if (model.n_sites != 1) throw parameter_mismatch("path reweighting is single-site");
  if (model.selection_alpha != 0)
    throw parameter_mismatch("path weight consumes neutral logs (alpha = 0 in the model)");
  if (cfg.n_types != model.n_types) throw parameter_mismatch("type alphabet mismatch");
  if (run.initial_type.size() != model.n) throw log_gap("run lacks initial types");

  const double n = static_cast<double>(model.n);
  const double ag = cfg.alpha / cfg.gamma;
  const double d = model.resampling_rate;
  const double theta = model.mutation_rate;

  std::vector<std::int64_t> counts(cfg.n_types, 0);
  for (auto ty : run.initial_type) ++counts[static_cast<std::size_t>(ty)];
  std::vector<std::int32_t> type = run.initial_type;

  auto omega_psi = [&](const detail::psi_terms& t) {
    double v = ag * (d * (t.diag - t.q) + theta * t.mut);
    if (cfg.compensator == compensator_kind::selective) v += ag * cfg.alpha * t.selg;
    return v;
  };

  detail::psi_terms terms = detail::compute_terms(counts, n, cfg, model);
  const double psi0 = ag * terms.q;
  double comp_integral = 0, var_integral = 0;
  double t_prev = 0;

  for (const auto& e : run.events) {
    if (e.time < t_prev) throw log_gap("event log times are not increasing");
    double dt = e.time - t_prev;
    comp_integral += omega_psi(terms) * dt;
    var_integral += (terms.q_sq - terms.q * terms.q) * dt;
    t_prev = e.time;
    switch (e.kind) {
      case event_kind::resample: {
        auto old_t = type[static_cast<std::size_t>(e.b)];
        auto new_t = type[static_cast<std::size_t>(e.a)];
        --counts[static_cast<std::size_t>(old_t)];
        ++counts[static_cast<std::size_t>(new_t)];
        type[static_cast<std::size_t>(e.b)] = new_t;
        break;
      }
      case event_kind::mutate: {
        auto old_t = type[static_cast<std::size_t>(e.a)];
        --counts[static_cast<std::size_t>(old_t)];
        ++counts[static_cast<std::size_t>(e.aux)];
        type[static_cast<std::size_t>(e.a)] = e.aux;
        break;
      }
      case event_kind::migrate:
        break;
      case event_kind::select:
        throw parameter_mismatch("selection events in a neutral log");
    }
    terms = detail::compute_terms(counts, n, cfg, model);
  }
  if (run.time < t_prev) throw log_gap("event log extends past the run horizon");
  double dt = run.time - t_prev;
  comp_integral += omega_psi(terms) * dt;
  var_integral += (terms.q_sq - terms.q * terms.q) * dt;

  path_weight_result out;
  const double psi_T = ag * terms.q;
  out.martingale = psi_T - psi0 - comp_integral;
  out.quadratic_variation = cfg.alpha * cfg.alpha / cfg.gamma * var_integral;
  out.weight = std::exp(out.martingale - 0.5 * out.quadratic_variation);
  return out;
}

// Exact finite-n jump-process Radon-Nikodym derivative between the
// selective and neutral Moran path laws: one bounded factor per copy event
// (from the copier's fitness) and an exactly integrated rate compensator.
// Used as the small-population validation route; the exponential-martingale
// weight above is its large-n limit.
inline double exact_jump_weight(const moran_config& model, const moran_state& run,
                                const girsanov_config& cfg) {
  cfg.validate();
  if (model.n_sites != 1) throw parameter_mismatch("path reweighting is single-site");
  if (model.selection_alpha != 0)
    throw parameter_mismatch("exact jump weight consumes neutral logs");
  if (model.resampling_rate <= 0)
    throw parameter_mismatch("exact jump weight needs a positive resampling rate");
  const double n = static_cast<double>(model.n);
  const double d = model.resampling_rate;

  std::vector<std::int32_t> type = run.initial_type;
  double fit_total = 0;
  for (auto ty : type) fit_total += cfg.chi(static_cast<std::size_t>(ty));

  double log_w = 0;
  double t_prev = 0;
  for (const auto& e : run.events) {
    // compensator: sum over ordered same-site pairs of alpha*chi(copier)/n
    log_w -= cfg.alpha * (n - 1) / n * fit_total * (e.time - t_prev);
    t_prev = e.time;
    switch (e.kind) {
      case event_kind::resample: {
        double chi_copier = cfg.chi(static_cast<std::size_t>(type[static_cast<std::size_t>(e.a)]));
        log_w += std::log1p(2 * cfg.alpha * chi_copier / (d * n));
        auto old_t = type[static_cast<std::size_t>(e.b)];
        auto new_t = type[static_cast<std::size_t>(e.a)];
        fit_total += cfg.chi(static_cast<std::size_t>(new_t)) - cfg.chi(static_cast<std::size_t>(old_t));
        type[static_cast<std::size_t>(e.b)] = new_t;
        break;
      }
      case event_kind::mutate: {
        auto old_t = type[static_cast<std::size_t>(e.a)];
        fit_total +=
            cfg.chi(static_cast<std::size_t>(e.aux)) - cfg.chi(static_cast<std::size_t>(old_t));
        type[static_cast<std::size_t>(e.a)] = e.aux;
        break;
      }
      case event_kind::migrate:
        break;
      case event_kind::select:
        throw parameter_mismatch("selection events in a neutral log");
    }
  }
  log_w -= cfg.alpha * (n - 1) / n * fit_total * (run.time - t_prev);
  return std::exp(log_w);
}

enum class weight_kind : std::uint8_t { limit_formula = 0, exact_jump = 1 };

struct reweight_result {
  double value = 0;
  double se = 0;
  double mean_weight = 0;
  double mean_weight_se = 0;
  double ess = 0;
  std::size_t replicates = 0;
};

// importance-sampling estimate E_selective[F] ~ mean of F * weight over
// neutral replicates
template <class Statistic>
reweight_result reweighted_expectation(const moran_config& neutral_model, double horizon,
                                       const girsanov_config& cfg, std::size_t replicates,
                                       std::uint64_t master_seed, std::size_t workers,
                                       Statistic statistic,
                                       weight_kind kind = weight_kind::limit_formula,
                                       std::size_t ess_floor = 100) {
  moran_config model = neutral_model;
  model.record_events = true;
  model.selection_alpha = 0;

  std::vector<double> wf(replicates), w(replicates);
  parallel_replicates(replicates, workers, [&](std::size_t i) {
    moran_config local = model;
    local.seed = rng_stream::for_replicate(master_seed, i).next();
    moran_state run = moran_run(local, horizon);
    double weight = kind == weight_kind::limit_formula ? path_weight(local, run, cfg).weight
                                                       : exact_jump_weight(local, run, cfg);
    w[i] = weight;
    wf[i] = weight * statistic(run);
  });

  reweight_result out;
  out.replicates = replicates;
  auto mw = reduce_mean(w);
  auto mwf = reduce_mean(wf);
  out.mean_weight = mw.mean;
  out.mean_weight_se = mw.se;
  out.value = mwf.mean;
  out.se = mwf.se;
  double sum = 0, sumsq = 0;
  for (double x : w) {
    sum += x;
    sumsq += x * x;
  }
  out.ess = sumsq > 0 ? sum * sum / sumsq : 0;
  if (out.ess < static_cast<double>(ess_floor))
    throw ess_too_low("effective sample size " + std::to_string(out.ess) + " below floor");
  return out;
}

struct selective_comparison {
  reweight_result reweighted;
  mean_se direct;
  double z = 0;
  double bias_budget = 0;
  bool pass = false;
};

// importance-sampled estimate under the neutral law vs a direct selective
// simulation of the same statistic
template <class Statistic>
selective_comparison compare_with_selective(const moran_config& neutral_model, double horizon,
                                            const girsanov_config& cfg, std::size_t replicates,
                                            std::uint64_t master_seed, std::size_t workers,
                                            Statistic statistic, double z_threshold = 3.0,
                                            weight_kind kind = weight_kind::limit_formula) {
  selective_comparison out;
  out.reweighted = reweighted_expectation(neutral_model, horizon, cfg, replicates, master_seed,
                                          workers, statistic, kind);

  moran_config sel = neutral_model;
  sel.record_events = false;
  sel.selection_alpha = cfg.alpha;
  sel.fitness = cfg.fitness;
  std::vector<double> vals(replicates);
  parallel_replicates(replicates, workers, [&](std::size_t i) {
    moran_config local = sel;
    local.seed = rng_stream::for_replicate(master_seed ^ 0x51e5a1d3ULL, i).next();
    vals[i] = statistic(moran_run(local, horizon));
  });
  out.direct = reduce_mean(vals);

  out.bias_budget =
      kind == weight_kind::limit_formula ? 10.0 / static_cast<double>(neutral_model.n) : 0.0;
  double se = std::sqrt(out.reweighted.se * out.reweighted.se + out.direct.se * out.direct.se);
  double delta = std::abs(out.reweighted.value - out.direct.mean);
  out.z = se > 0 ? delta / se : 0;
  out.pass = delta <= z_threshold * se + out.bias_budget;
  return out;
}

}  // namespace genlab
