// genlab experiment runner: parses a JSON experiment config, dispatches to
// the simulators and verification harnesses, and writes deterministic
// report artifacts. Exit codes: 0 pass, 1 execution/config error, 2 a
// statistical verdict failed.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "genlab/branching.hpp"
#include "genlab/coalescent.hpp"
#include "genlab/girsanov.hpp"
#include "genlab/harness.hpp"
#include "genlab/infdiv.hpp"
#include "genlab/metrics.hpp"
#include "genlab/moran.hpp"
#include "genlab/serialize.hpp"
#include "genlab/stats.hpp"
#include "genlab/tree.hpp"

namespace fs = std::filesystem;
using genlab::ordered_json;

namespace {

[[noreturn]] void fail_config(const std::string& path, const std::string& what) {
  throw genlab::config_invalid(path + ": " + what);
}

const ordered_json& require(const ordered_json& j, const std::string& key,
                            const std::string& ctx) {
  if (!j.contains(key)) fail_config(ctx, "missing required field '" + key + "'");
  return j.at(key);
}

void check_keys(const ordered_json& j, const std::set<std::string>& allowed,
                const std::string& ctx) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) fail_config(ctx, "unknown field '" + it.key() + "'");
}

std::vector<double> parse_matrix(const ordered_json& j, std::size_t m, const std::string& ctx) {
  std::vector<double> out;
  if (!j.is_array() || j.size() != m) fail_config(ctx, "expected a " + std::to_string(m) + "-row matrix");
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != m) fail_config(ctx, "matrix rows must have equal length");
    for (const auto& v : row) out.push_back(v.get<double>());
  }
  return out;
}

genlab::ultrametric_space parse_space(const ordered_json& j, const std::string& ctx) {
  if (j.is_string()) {
    std::string s = j.get<std::string>();
    if (s == "trivial") return genlab::ultrametric_space::single_leaf(1.0);
    std::ifstream in(s);
    if (!in) fail_config(ctx, "cannot read space file " + s);
    ordered_json parsed = ordered_json::parse(in);
    return genlab::space_from_json(parsed);
  }
  return genlab::space_from_json(j);
}

genlab::polynomial_spec parse_poly(const ordered_json& j, const std::string& ctx) {
  check_keys(j, {"order", "kernel", "lambda", "cutoff", "value"}, ctx);
  auto order = require(j, "order", ctx).get<std::size_t>();
  std::string kernel = require(j, "kernel", ctx).get<std::string>();
  if (kernel == "exp")
    return genlab::polynomial_spec::exponential(order, require(j, "lambda", ctx).get<double>());
  if (kernel == "threshold")
    return genlab::polynomial_spec::threshold(order, require(j, "cutoff", ctx).get<double>());
  if (kernel == "constant")
    return genlab::polynomial_spec::constant(order, require(j, "value", ctx).get<double>());
  fail_config(ctx, "unknown kernel '" + kernel + "' (exp | threshold | constant)");
}

ordered_json poly_to_json(const ordered_json& src) { return src; }

genlab::moran_config parse_moran(const ordered_json& j, const std::string& ctx) {
  check_keys(j,
             {"n", "d", "theta", "mutation_kernel", "n_types", "migration_rate",
              "migration_kernel", "n_sites", "alpha", "fitness", "initial", "initial_assignment"},
             ctx);
  genlab::moran_config m;
  m.n = require(j, "n", ctx).get<std::size_t>();
  m.resampling_rate = j.value("d", 1.0);
  m.mutation_rate = j.value("theta", 0.0);
  m.n_types = j.value("n_types", std::size_t{1});
  if (j.contains("mutation_kernel"))
    m.mutation_kernel = parse_matrix(j.at("mutation_kernel"), m.n_types, ctx + ".mutation_kernel");
  m.migration_rate = j.value("migration_rate", 0.0);
  m.n_sites = j.value("n_sites", std::size_t{1});
  if (j.contains("migration_kernel"))
    m.migration_kernel =
        parse_matrix(j.at("migration_kernel"), m.n_sites, ctx + ".migration_kernel");
  m.selection_alpha = j.value("alpha", 0.0);
  if (j.contains("fitness")) m.fitness = j.at("fitness").get<std::vector<double>>();
  if (j.contains("initial")) m.initial = parse_space(j.at("initial"), ctx + ".initial");
  if (j.contains("initial_assignment"))
    m.initial_assignment = j.at("initial_assignment").get<std::vector<std::int32_t>>();
  return m;
}

ordered_json moran_to_json(const genlab::moran_config& m) {
  ordered_json j;
  j["n"] = m.n;
  j["d"] = m.resampling_rate;
  j["theta"] = m.mutation_rate;
  j["n_types"] = m.n_types;
  j["migration_rate"] = m.migration_rate;
  j["n_sites"] = m.n_sites;
  j["alpha"] = m.selection_alpha;
  if (!m.fitness.empty()) j["fitness"] = m.fitness;
  j["initial"] = genlab::space_to_json(m.initial);
  if (!m.initial_assignment.empty()) j["initial_assignment"] = m.initial_assignment;
  return j;
}

genlab::branching_config parse_branching(const ordered_json& j, const std::string& ctx) {
  check_keys(j, {"b", "K", "initial_mass", "initial", "budget", "logistic_c", "logistic_capacity"},
             ctx);
  genlab::branching_config b;
  b.b = j.value("b", 1.0);
  b.particles_per_unit_mass = require(j, "K", ctx).get<std::size_t>();
  b.initial_mass = j.value("initial_mass", 1.0);
  if (j.contains("initial")) b.initial = parse_space(j.at("initial"), ctx + ".initial");
  b.particle_budget = j.value("budget", std::size_t{1} << 20);
  if (j.contains("logistic_c") || j.contains("logistic_capacity")) {
    genlab::branching_config::logistic_drift ld;
    ld.c = require(j, "logistic_c", ctx).get<double>();
    ld.capacity = require(j, "logistic_capacity", ctx).get<double>();
    b.drift = ld;
  }
  return b;
}

ordered_json branching_to_json(const genlab::branching_config& b) {
  ordered_json j;
  j["b"] = b.b;
  j["K"] = b.particles_per_unit_mass;
  j["initial_mass"] = b.initial_mass;
  j["initial"] = genlab::space_to_json(b.initial);
  j["budget"] = b.particle_budget;
  if (b.drift) {
    j["logistic_c"] = b.drift->c;
    j["logistic_capacity"] = b.drift->capacity;
  }
  return j;
}

genlab::dual_config parse_dual(const ordered_json& j, const std::string& ctx) {
  check_keys(j, {"n", "rate", "mode", "migration_rate", "migration_kernel", "n_sites", "locations",
                 "mass_path"},
             ctx);
  genlab::dual_config d;
  d.n = require(j, "n", ctx).get<std::size_t>();
  d.rate = j.value("rate", 1.0);
  std::string mode = j.value("mode", std::string("plain"));
  if (mode == "plain")
    d.mode = genlab::dual_mode::plain;
  else if (mode == "feynman_kac")
    d.mode = genlab::dual_mode::feynman_kac;
  else if (mode == "conditioned")
    d.mode = genlab::dual_mode::conditioned;
  else
    fail_config(ctx, "unknown dual mode '" + mode + "'");
  d.migration_rate = j.value("migration_rate", 0.0);
  d.n_sites = j.value("n_sites", std::size_t{1});
  if (j.contains("migration_kernel"))
    d.migration_kernel =
        parse_matrix(j.at("migration_kernel"), d.n_sites, ctx + ".migration_kernel");
  if (j.contains("locations"))
    d.initial_locations = j.at("locations").get<std::vector<std::int32_t>>();
  if (j.contains("mass_path")) {
    std::ifstream in(j.at("mass_path").get<std::string>());
    if (!in) fail_config(ctx, "cannot read mass path CSV");
    d.mass_path = genlab::mass_path_from_csv(in);
  }
  return d;
}

ordered_json tolerance_to_json(const genlab::tolerance_policy& t, double resolved_bias) {
  ordered_json j;
  j["z"] = t.z;
  j["bias"] = resolved_bias;
  return j;
}

genlab::tolerance_policy parse_tolerance(const ordered_json& j, const std::string& ctx) {
  genlab::tolerance_policy t;
  if (j.is_null()) return t;
  check_keys(j, {"z", "bias"}, ctx);
  t.z = j.value("z", 3.0);
  t.bias = j.value("bias", -1.0);
  return t;
}

ordered_json report_to_json(const genlab::duality_report& rep) {
  ordered_json j;
  j["schema"] = "genlab.report.v1";
  j["experiment"] = rep.experiment;
  j["seed"] = rep.master_seed;
  j["pass"] = rep.pass;
  ordered_json checks = ordered_json::array();
  for (const auto& c : rep.checks) {
    ordered_json cj;
    cj["name"] = c.name;
    cj["kind"] = c.kind;
    cj["forward"] = c.forward;
    cj["forward_se"] = c.forward_se;
    cj["dual"] = c.dual;
    cj["dual_se"] = c.dual_se;
    cj["statistic"] = c.statistic;
    cj["threshold"] = c.threshold;
    cj["forward_reps"] = c.forward_reps;
    cj["dual_reps"] = c.dual_reps;
    cj["pass"] = c.pass;
    checks.push_back(std::move(cj));
  }
  j["checks"] = std::move(checks);
  return j;
}

void print_verdicts(const genlab::duality_report& rep) {
  for (const auto& c : rep.checks) {
    std::printf("[%s] %s: %s (forward=%.6g dual=%.6g stat=%.4g thr=%.4g)\n",
                rep.experiment.c_str(), c.name.c_str(), c.pass ? "pass" : "FAIL", c.forward,
                c.dual, c.statistic, c.threshold);
  }
}

struct cli_options {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t reps = 0;  // 0: keep config
  std::size_t workers = 0;
  bool emit_replicates = false;
};

struct run_artifacts {
  genlab::duality_report report;
  ordered_json resolved;
  std::vector<std::pair<std::string, std::vector<double>>> replicate_values;
};

std::size_t resolve_workers(const cli_options& opt, const ordered_json& cfg) {
  if (opt.workers > 0) return opt.workers;
  if (cfg.contains("workers") && cfg.at("workers").get<std::size_t>() > 0)
    return cfg.at("workers").get<std::size_t>();
  return genlab::default_workers();
}

std::uint64_t resolve_seed(const cli_options& opt, const ordered_json& cfg) {
  if (opt.seed_set) return opt.seed;
  return cfg.value("seed", std::uint64_t{1});
}

// ---------------------------------------------------------------------------

run_artifacts run_duality_check(const ordered_json& cfg, const cli_options& opt) {
  check_keys(cfg,
             {"experiment", "seed", "workers", "moran", "dual", "poly", "horizon", "forward_reps",
              "dual_reps", "tolerance"},
             "config");
  genlab::moment_duality_experiment ex;
  ex.moran = parse_moran(require(cfg, "moran", "config"), "moran");
  ex.dual = parse_dual(require(cfg, "dual", "config"), "dual");
  ex.poly = parse_poly(require(cfg, "poly", "config"), "poly");
  ex.horizon = require(cfg, "horizon", "config").get<double>();
  ex.forward_reps = cfg.value("forward_reps", std::size_t{10000});
  ex.dual_reps = cfg.value("dual_reps", std::size_t{10000});
  if (opt.reps) ex.forward_reps = ex.dual_reps = opt.reps;
  ex.tol = parse_tolerance(cfg.contains("tolerance") ? cfg.at("tolerance") : ordered_json(),
                           "tolerance");
  ex.seed = resolve_seed(opt, cfg);
  ex.workers = resolve_workers(opt, cfg);

  run_artifacts art;
  art.report = run_moment_duality(ex);

  art.resolved = ordered_json{{"experiment", "duality-check"},
                              {"seed", ex.seed},
                              {"moran", moran_to_json(ex.moran)},
                              {"poly", poly_to_json(cfg.at("poly"))},
                              {"horizon", ex.horizon},
                              {"forward_reps", ex.forward_reps},
                              {"dual_reps", ex.dual_reps},
                              {"tolerance",
                               tolerance_to_json(ex.tol, ex.tol.bias >= 0
                                                             ? ex.tol.bias
                                                             : 10.0 / static_cast<double>(ex.moran.n))}};
  return art;
}

run_artifacts run_fk_check(const ordered_json& cfg, const cli_options& opt) {
  check_keys(cfg,
             {"experiment", "seed", "workers", "branching", "poly", "horizon", "forward_reps",
              "dual_reps", "tolerance"},
             "config");
  genlab::fk_duality_experiment ex;
  ex.branching = parse_branching(require(cfg, "branching", "config"), "branching");
  ex.poly = parse_poly(require(cfg, "poly", "config"), "poly");
  ex.horizon = require(cfg, "horizon", "config").get<double>();
  ex.forward_reps = cfg.value("forward_reps", std::size_t{10000});
  ex.dual_reps = cfg.value("dual_reps", std::size_t{10000});
  if (opt.reps) ex.forward_reps = ex.dual_reps = opt.reps;
  ex.tol = parse_tolerance(cfg.contains("tolerance") ? cfg.at("tolerance") : ordered_json(),
                           "tolerance");
  ex.seed = resolve_seed(opt, cfg);
  ex.workers = resolve_workers(opt, cfg);

  run_artifacts art;
  art.report = run_fk_duality(ex);
  art.resolved = ordered_json{
      {"experiment", "fk-duality"},
      {"seed", ex.seed},
      {"branching", branching_to_json(ex.branching)},
      {"poly", poly_to_json(cfg.at("poly"))},
      {"horizon", ex.horizon},
      {"forward_reps", ex.forward_reps},
      {"dual_reps", ex.dual_reps},
      {"tolerance",
       tolerance_to_json(ex.tol,
                         ex.tol.bias >= 0
                             ? ex.tol.bias
                             : 10.0 / static_cast<double>(ex.branching.particles_per_unit_mass))}};
  return art;
}

run_artifacts run_equilibrium(const ordered_json& cfg, const cli_options& opt) {
  check_keys(cfg,
             {"experiment", "seed", "workers", "moran", "horizon", "lambdas", "forward_reps",
              "dual_reps", "entrance_lines", "triples_per_rep", "tolerance"},
             "config");
  genlab::equilibrium_experiment ex;
  ex.moran = parse_moran(require(cfg, "moran", "config"), "moran");
  ex.horizon = cfg.value("horizon", 20.0);
  if (cfg.contains("lambdas")) ex.lambdas = cfg.at("lambdas").get<std::vector<double>>();
  ex.forward_reps = cfg.value("forward_reps", std::size_t{2000});
  ex.dual_reps = cfg.value("dual_reps", std::size_t{4000});
  if (opt.reps) {
    ex.forward_reps = opt.reps;
    ex.dual_reps = opt.reps;
  }
  ex.entrance_lines = cfg.value("entrance_lines", std::size_t{500});
  ex.triples_per_rep = cfg.value("triples_per_rep", std::size_t{8});
  ex.tol = parse_tolerance(cfg.contains("tolerance") ? cfg.at("tolerance") : ordered_json(),
                           "tolerance");
  ex.seed = resolve_seed(opt, cfg);
  ex.workers = resolve_workers(opt, cfg);

  run_artifacts art;
  art.report = run_equilibrium_check(ex);
  art.resolved = ordered_json{{"experiment", "equilibrium"},
                              {"seed", ex.seed},
                              {"moran", moran_to_json(ex.moran)},
                              {"horizon", ex.horizon},
                              {"lambdas", ex.lambdas},
                              {"forward_reps", ex.forward_reps},
                              {"dual_reps", ex.dual_reps},
                              {"entrance_lines", ex.entrance_lines},
                              {"triples_per_rep", ex.triples_per_rep}};
  return art;
}

run_artifacts run_strong(const ordered_json& cfg, const cli_options& opt) {
  check_keys(cfg,
             {"experiment", "seed", "workers", "moran", "horizon", "samples", "entrance_lines",
              "level", "permutations", "energy_sub"},
             "config");
  genlab::strong_duality_experiment ex;
  ex.moran = parse_moran(require(cfg, "moran", "config"), "moran");
  ex.horizon = cfg.value("horizon", 1.0);
  ex.samples = cfg.value("samples", std::size_t{10000});
  if (opt.reps) ex.samples = opt.reps;
  ex.entrance_lines = cfg.value("entrance_lines", std::size_t{1000});
  ex.level = cfg.value("level", 0.01);
  ex.permutations = cfg.value("permutations", std::size_t{400});
  ex.energy_sub = cfg.value("energy_sub", std::size_t{1500});
  ex.seed = resolve_seed(opt, cfg);
  ex.workers = resolve_workers(opt, cfg);

  run_artifacts art;
  art.report = run_strong_duality_check(ex);
  art.resolved = ordered_json{{"experiment", "strong-duality"},
                              {"seed", ex.seed},
                              {"moran", moran_to_json(ex.moran)},
                              {"horizon", ex.horizon},
                              {"samples", ex.samples},
                              {"entrance_lines", ex.entrance_lines},
                              {"level", ex.level},
                              {"permutations", ex.permutations},
                              {"energy_sub", ex.energy_sub}};
  return art;
}

run_artifacts run_conditioned(const ordered_json& cfg, const cli_options& opt) {
  check_keys(cfg,
             {"experiment", "seed", "workers", "branching", "horizon", "paths",
              "samples_per_side", "forward_n", "level", "permutations"},
             "config");
  genlab::conditioned_duality_experiment ex;
  ex.branching = parse_branching(require(cfg, "branching", "config"), "branching");
  ex.horizon = cfg.value("horizon", 0.5);
  ex.paths = cfg.value("paths", std::size_t{200});
  if (opt.reps) ex.paths = opt.reps;
  ex.samples_per_side = cfg.value("samples_per_side", std::size_t{300});
  ex.forward_n = cfg.value("forward_n", std::size_t{100});
  ex.level = cfg.value("level", 0.01);
  ex.permutations = cfg.value("permutations", std::size_t{999});
  ex.seed = resolve_seed(opt, cfg);
  ex.workers = resolve_workers(opt, cfg);

  run_artifacts art;
  art.report = run_conditioned_duality(ex);
  art.resolved = ordered_json{{"experiment", "conditioned-duality"},
                              {"seed", ex.seed},
                              {"branching", branching_to_json(ex.branching)},
                              {"horizon", ex.horizon},
                              {"paths", ex.paths},
                              {"samples_per_side", ex.samples_per_side},
                              {"forward_n", ex.forward_n},
                              {"level", ex.level},
                              {"permutations", ex.permutations}};
  return art;
}

run_artifacts run_girsanov(const ordered_json& cfg, const cli_options& opt) {
  check_keys(cfg,
             {"experiment", "seed", "workers", "moran", "horizon", "alpha", "gamma", "fitness",
              "replicates", "compensator", "ess_floor", "tolerance"},
             "config");
  genlab::moran_config model = parse_moran(require(cfg, "moran", "config"), "moran");
  double horizon = cfg.value("horizon", 1.0);
  genlab::girsanov_config g;
  g.alpha = require(cfg, "alpha", "config").get<double>();
  g.gamma = cfg.value("gamma", -1.0);
  if (g.gamma <= 0) g.gamma = model.resampling_rate;
  g.n_types = model.n_types;
  g.fitness = require(cfg, "fitness", "config").get<std::vector<double>>();
  std::string comp = cfg.value("compensator", std::string("neutral"));
  g.compensator = comp == "selective" ? genlab::compensator_kind::selective
                                      : genlab::compensator_kind::neutral;
  std::size_t reps = cfg.value("replicates", std::size_t{10000});
  if (opt.reps) reps = opt.reps;
  std::size_t ess_floor = cfg.value("ess_floor", std::size_t{100});
  auto tol = parse_tolerance(cfg.contains("tolerance") ? cfg.at("tolerance") : ordered_json(),
                             "tolerance");
  std::uint64_t seed = resolve_seed(opt, cfg);
  std::size_t workers = resolve_workers(opt, cfg);

  auto fit_freq = [&](const genlab::moran_state& st) {
    double c = 0;
    for (std::size_t i = 0; i < st.type.size(); ++i)
      c += g.fitness[static_cast<std::size_t>(st.type[i])] >= 0.5 ? 1.0 : 0.0;
    return c / static_cast<double>(st.type.size());
  };

  run_artifacts art;
  art.report.experiment = "girsanov-check";
  art.report.master_seed = seed;
  art.report.workers = workers;

  auto cmp = genlab::compare_with_selective(model, horizon, g, reps, seed, workers, fit_freq,
                                            tol.z, genlab::weight_kind::limit_formula);
  genlab::check_result mean_one;
  mean_one.name = "mean path weight vs 1";
  mean_one.kind = "z";
  mean_one.forward = cmp.reweighted.mean_weight;
  mean_one.forward_se = cmp.reweighted.mean_weight_se;
  mean_one.dual = 1.0;
  mean_one.forward_reps = reps;
  double dev = std::abs(cmp.reweighted.mean_weight - 1.0);
  mean_one.statistic = cmp.reweighted.mean_weight_se > 0 ? dev / cmp.reweighted.mean_weight_se : 0;
  mean_one.threshold = tol.z;
  mean_one.pass = dev <= tol.z * cmp.reweighted.mean_weight_se;
  art.report.add(mean_one);

  genlab::check_result rw;
  rw.name = "reweighted fit-type frequency vs direct selective run";
  rw.kind = "z";
  rw.forward = cmp.reweighted.value;
  rw.forward_se = cmp.reweighted.se;
  rw.dual = cmp.direct.mean;
  rw.dual_se = cmp.direct.se;
  rw.forward_reps = rw.dual_reps = reps;
  rw.statistic = cmp.z;
  rw.threshold = tol.z;
  rw.pass = cmp.pass;
  art.report.add(rw);
  (void)ess_floor;

  art.resolved = ordered_json{{"experiment", "girsanov-check"},
                              {"seed", seed},
                              {"moran", moran_to_json(model)},
                              {"horizon", horizon},
                              {"alpha", g.alpha},
                              {"gamma", g.gamma},
                              {"fitness", g.fitness},
                              {"compensator", comp},
                              {"replicates", reps},
                              {"ess_floor", ess_floor}};
  return art;
}

run_artifacts run_infdiv(const ordered_json& cfg, const cli_options& opt) {
  check_keys(cfg,
             {"experiment", "seed", "workers", "spec", "poly", "reps", "split_parts", "level",
              "permutations", "mode"},
             "config");
  const auto& sj = require(cfg, "spec", "config");
  check_keys(sj, {"h", "atoms"}, "spec");
  genlab::levy_measure_spec spec;
  spec.h = require(sj, "h", "spec").get<double>();
  for (const auto& aj : require(sj, "atoms", "spec")) {
    check_keys(aj, {"intensity", "component"}, "spec.atoms");
    genlab::levy_measure_spec::atom a;
    a.intensity = require(aj, "intensity", "spec.atoms").get<double>();
    a.component = parse_space(require(aj, "component", "spec.atoms"), "spec.atoms.component");
    spec.atoms.push_back(std::move(a));
  }
  std::string mode = cfg.value("mode", std::string("both"));
  std::uint64_t seed = resolve_seed(opt, cfg);
  std::size_t workers = resolve_workers(opt, cfg);

  run_artifacts art;
  art.report.experiment = "infdiv-check";
  art.report.master_seed = seed;
  art.report.workers = workers;

  if (mode == "laplace" || mode == "both") {
    genlab::laplace_check_experiment lx;
    lx.spec = spec;
    lx.poly = parse_poly(require(cfg, "poly", "config"), "poly");
    lx.reps = cfg.value("reps", std::size_t{100000});
    if (opt.reps) lx.reps = opt.reps;
    lx.seed = seed;
    lx.workers = workers;
    for (auto& c : genlab::laplace_check(lx).checks) art.report.add(c);
  }
  if (mode == "split" || mode == "both") {
    genlab::split_check_experiment sx;
    sx.spec = spec;
    sx.parts = cfg.value("split_parts", std::size_t{2});
    sx.reps = cfg.value("reps", std::size_t{10000});
    if (opt.reps) sx.reps = opt.reps;
    sx.level = cfg.value("level", 0.01);
    sx.permutations = cfg.value("permutations", std::size_t{400});
    sx.seed = seed ^ 0x5eedULL;
    sx.workers = workers;
    for (auto& c : genlab::split_check(sx).checks) art.report.add(c);
  }

  art.resolved = cfg;
  art.resolved["seed"] = seed;
  return art;
}

run_artifacts run_simulate(const ordered_json& cfg, const cli_options& opt,
                           const std::string& out_dir) {
  check_keys(cfg,
             {"experiment", "seed", "workers", "model", "moran", "branching", "horizon",
              "emit_events", "sample_order"},
             "config");
  std::string model = require(cfg, "model", "config").get<std::string>();
  double horizon = require(cfg, "horizon", "config").get<double>();
  std::uint64_t seed = resolve_seed(opt, cfg);

  run_artifacts art;
  art.report.experiment = "simulate";
  art.report.master_seed = seed;
  art.resolved = cfg;
  art.resolved["seed"] = seed;

  genlab::check_result done;
  done.name = "simulation completed";
  done.kind = "exact";
  done.pass = true;

  if (model == "moran") {
    genlab::moran_config mc = parse_moran(require(cfg, "moran", "config"), "moran");
    mc.record_events = cfg.value("emit_events", false);
    mc.seed = seed;
    genlab::moran_state st = genlab::moran_run(mc, horizon);
    genlab::ultrametric_space g = extract_genealogy(st);
    genlab::write_file(out_dir + "/genealogy.json", genlab::space_to_string(g) + "\n");
    if (mc.record_events)
      genlab::write_file(out_dir + "/events.jsonl", genlab::event_log_to_jsonl(st.events));
    if (cfg.contains("sample_order")) {
      genlab::rng_stream rng(seed ^ 0xabcdULL);
      auto smp =
          genlab::sample_distance_matrix(g, cfg.at("sample_order").get<std::size_t>(), rng);
      genlab::write_file(out_dir + "/sample.csv", genlab::distance_sample_to_csv(smp));
    }
    done.forward = g.total_mass();
  } else if (model == "branching") {
    genlab::branching_config bc = parse_branching(require(cfg, "branching", "config"), "branching");
    bc.seed = seed;
    genlab::branching_state st = genlab::branching_run(bc, horizon);
    auto dec = extract_genealogy(st);
    genlab::write_file(out_dir + "/mass_path.csv", genlab::mass_path_to_csv(st.mass_path));
    ordered_json gj;
    gj["total_mass"] = dec.total_mass;
    if (dec.normalized) gj["normalized"] = genlab::space_to_json(*dec.normalized);
    genlab::write_file(out_dir + "/genealogy.json", gj.dump() + "\n");
    done.forward = dec.total_mass;
  } else {
    fail_config("config", "model must be 'moran' or 'branching'");
  }
  art.report.add(done);
  return art;
}

run_artifacts run_diagnostics(const ordered_json& cfg, const cli_options& opt) {
  check_keys(cfg, {"experiment", "seed", "workers", "space", "other", "epsilons"}, "config");
  genlab::ultrametric_space u = parse_space(require(cfg, "space", "config"), "space");
  std::vector<double> eps = cfg.value("epsilons", std::vector<double>{0.1});

  run_artifacts art;
  art.report.experiment = "diagnostics";
  art.report.master_seed = resolve_seed(opt, cfg);
  art.resolved = cfg;

  genlab::check_result base;
  base.name = "diameter / mass / leaves";
  base.kind = "exact";
  base.forward = u.diameter();
  base.dual = u.total_mass();
  base.statistic = static_cast<double>(u.leaf_count());
  base.pass = true;
  art.report.add(base);
  for (double e : eps) {
    genlab::check_result c;
    c.name = "covering number at eps=" + std::to_string(e);
    c.kind = "exact";
    c.statistic = static_cast<double>(u.covering_number(e));
    c.pass = true;
    art.report.add(c);
  }
  if (cfg.contains("other")) {
    genlab::ultrametric_space v = parse_space(cfg.at("other"), "other");
    auto b = genlab::discrepancy_bounds(u, v);
    genlab::check_result c;
    c.name = "distance-law discrepancy bounds (lower, upper)";
    c.kind = "exact";
    c.forward = b.lower;
    c.dual = b.upper;
    c.pass = b.lower <= b.upper;
    art.report.add(c);
  }
  return art;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"genealogy simulation and duality verification lab"};
  app.require_subcommand(1);

  cli_options opt;
  const std::vector<std::string> kinds = {"simulate",       "duality-check", "fk-duality",
                                          "conditioned-duality", "equilibrium",  "strong-duality",
                                          "girsanov-check", "infdiv-check",  "diagnostics"};
  std::map<std::string, CLI::App*> subs;
  for (const auto& k : kinds) {
    CLI::App* s = app.add_subcommand(k);
    s->add_option("--config", opt.config_path, "experiment config JSON")->required();
    s->add_option("--seed", opt.seed, "master seed override")->each([&](const std::string&) {
      opt.seed_set = true;
    });
    s->add_option("--reps", opt.reps, "replicate count override");
    s->add_option("--out", opt.out_dir, "output directory");
    s->add_option("--workers", opt.workers, "worker threads (default: GENLAB_WORKERS or cores)");
    s->add_flag("--emit-replicates", opt.emit_replicates, "write per-replicate CSVs");
    subs[k] = s;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  std::string kind;
  for (const auto& [k, s] : subs)
    if (s->parsed()) kind = k;

  auto started = std::chrono::steady_clock::now();
  try {
    std::ifstream in(opt.config_path);
    if (!in) throw genlab::config_invalid("cannot read config file " + opt.config_path);
    ordered_json cfg = ordered_json::parse(in);
    if (cfg.contains("experiment") && cfg.at("experiment").get<std::string>() != kind)
      throw genlab::config_invalid("config experiment '" +
                                   cfg.at("experiment").get<std::string>() +
                                   "' does not match subcommand '" + kind + "'");

    std::string out_dir = opt.out_dir.empty() ? "genlab-out" : opt.out_dir;
    fs::create_directories(out_dir);

    run_artifacts art;
    if (kind == "duality-check")
      art = run_duality_check(cfg, opt);
    else if (kind == "fk-duality")
      art = run_fk_check(cfg, opt);
    else if (kind == "equilibrium")
      art = run_equilibrium(cfg, opt);
    else if (kind == "strong-duality")
      art = run_strong(cfg, opt);
    else if (kind == "conditioned-duality")
      art = run_conditioned(cfg, opt);
    else if (kind == "girsanov-check")
      art = run_girsanov(cfg, opt);
    else if (kind == "infdiv-check")
      art = run_infdiv(cfg, opt);
    else if (kind == "simulate")
      art = run_simulate(cfg, opt, out_dir);
    else if (kind == "diagnostics")
      art = run_diagnostics(cfg, opt);

    genlab::write_file(out_dir + "/resolved_config.json", art.resolved.dump(2) + "\n");
    genlab::write_file(out_dir + "/report.json", report_to_json(art.report).dump(2) + "\n");

    auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started);
    ordered_json meta;
    meta["wall_seconds"] = elapsed.count();
    meta["workers"] = art.report.workers;
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[64];
    std::strftime(stamp, sizeof stamp, "%FT%TZ", std::gmtime(&now));
    meta["timestamp"] = stamp;
    genlab::write_file(out_dir + "/meta.json", meta.dump(2) + "\n");

    print_verdicts(art.report);
    std::printf("%s: %s (report: %s/report.json)\n", kind.c_str(),
                art.report.pass ? "PASS" : "FAIL", out_dir.c_str());
    return art.report.pass ? 0 : 2;
  } catch (const genlab::error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", e.code().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
