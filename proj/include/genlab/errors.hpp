#pragma once

#include <stdexcept>
#include <string>

namespace genlab {

// Base class for all library errors. `code()` returns a stable identifier
// that the CLI maps to module-qualified error strings.
class error : public std::runtime_error {
 public:
  error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

#define GENLAB_DEFINE_ERROR(name, code_str)                      \
  class name : public error {                                    \
   public:                                                       \
    explicit name(const std::string& what) : error(code_str, what) {} \
  }

// genealogy core
GENLAB_DEFINE_ERROR(not_ultrametric, "core.NotUltrametric");
GENLAB_DEFINE_ERROR(negative_mass, "core.NegativeMass");
GENLAB_DEFINE_ERROR(dimension_mismatch, "core.DimensionMismatch");
GENLAB_DEFINE_ERROR(empty_space, "core.EmptySpace");
GENLAB_DEFINE_ERROR(budget_exceeded, "core.BudgetExceeded");
GENLAB_DEFINE_ERROR(component_too_tall, "core.ComponentTooTall");
GENLAB_DEFINE_ERROR(top_too_tall, "core.TopTooTall");
GENLAB_DEFINE_ERROR(empty_base, "core.EmptyBase");
GENLAB_DEFINE_ERROR(non_monotone_map, "core.NonMonotoneMap");

// forward simulators
GENLAB_DEFINE_ERROR(invalid_kernel, "sim.InvalidKernel");
GENLAB_DEFINE_ERROR(zero_population, "sim.ZeroPopulation");
GENLAB_DEFINE_ERROR(particle_budget_exceeded, "sim.ParticleBudgetExceeded");
GENLAB_DEFINE_ERROR(inconsistent_ancestry, "sim.InconsistentAncestry");

// dual simulators
GENLAB_DEFINE_ERROR(mass_path_gap, "dual.MassPathGap");
GENLAB_DEFINE_ERROR(order_mismatch, "dual.OrderMismatch");
GENLAB_DEFINE_ERROR(empty_location, "dual.EmptyLocation");

// girsanov
GENLAB_DEFINE_ERROR(log_gap, "girsanov.LogGap");
GENLAB_DEFINE_ERROR(parameter_mismatch, "girsanov.ParameterMismatch");
GENLAB_DEFINE_ERROR(ess_too_low, "girsanov.EffectiveSampleSizeTooLow");

// infdiv
GENLAB_DEFINE_ERROR(kernel_not_boundary_vanishing, "infdiv.KernelNotBoundaryVanishing");

// cli / config
GENLAB_DEFINE_ERROR(config_invalid, "cli.ConfigInvalid");

#undef GENLAB_DEFINE_ERROR

}  // namespace genlab
