#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "genlab/errors.hpp"
#include "genlab/random.hpp"
#include "genlab/tree.hpp"

namespace genlab {

// Test function Phi^{n,phi,xi}: the mean of phi(sampled distance matrix)
// times xi(sampled marks) under n independent mass-weighted leaf draws.
// Distance arguments use the condensed upper-triangle order r_{k<l}.
class polynomial_spec {
 public:
  using distance_kernel = std::function<double(std::span<const double>)>;
  using mark_kernel = std::function<double(std::span<const mark>)>;

  static polynomial_spec constant(std::size_t order, double c) {
    polynomial_spec p(order);
    p.kind_ = kind::constant;
    p.scalar_ = c;
    return p;
  }

  // phi(r) = exp(-lambda * sum r_{kl})
  static polynomial_spec exponential(std::size_t order, double lambda) {
    if (lambda < 0) throw config_invalid("exponential kernel needs lambda >= 0");
    polynomial_spec p(order);
    p.kind_ = kind::exponential;
    p.scalar_ = lambda;
    return p;
  }

  // phi(r) = exp(-sum lambda_{kl} r_{kl}) with a per-pair coefficient vector
  static polynomial_spec exponential_matrix(std::size_t order, std::vector<double> lambdas) {
    polynomial_spec p(order);
    if (lambdas.size() != p.pair_count()) throw dimension_mismatch("lambda vector size");
    for (double l : lambdas)
      if (l < 0) throw config_invalid("exponential kernel needs lambda >= 0");
    p.kind_ = kind::exponential_matrix;
    p.coeffs_ = std::move(lambdas);
    return p;
  }

  // phi(r) = prod 1[r_{kl} <= c]
  static polynomial_spec threshold(std::size_t order, double c) {
    polynomial_spec p(order);
    p.kind_ = kind::threshold;
    p.scalar_ = c;
    return p;
  }

  static polynomial_spec threshold_matrix(std::size_t order, std::vector<double> cutoffs) {
    polynomial_spec p(order);
    if (cutoffs.size() != p.pair_count()) throw dimension_mismatch("cutoff vector size");
    p.kind_ = kind::threshold_matrix;
    p.coeffs_ = std::move(cutoffs);
    return p;
  }

  static polynomial_spec custom(std::size_t order, distance_kernel k) {
    polynomial_spec p(order);
    p.kind_ = kind::custom;
    p.custom_ = std::move(k);
    return p;
  }

  polynomial_spec& with_mark_factor(mark_kernel xi) {
    mark_ = std::move(xi);
    return *this;
  }

  std::size_t order() const { return order_; }
  std::size_t pair_count() const { return order_ * (order_ - 1) / 2; }
  bool has_mark_factor() const { return static_cast<bool>(mark_); }

  double kernel(std::span<const double> r) const {
    switch (kind_) {
      case kind::constant:
        return scalar_;
      case kind::exponential: {
        double sum = 0;
        for (double v : r) sum += v;
        return std::exp(-scalar_ * sum);
      }
      case kind::exponential_matrix: {
        double sum = 0;
        for (std::size_t i = 0; i < r.size(); ++i) sum += coeffs_[i] * r[i];
        return std::exp(-sum);
      }
      case kind::threshold: {
        for (double v : r)
          if (v > scalar_) return 0;
        return 1;
      }
      case kind::threshold_matrix: {
        for (std::size_t i = 0; i < r.size(); ++i)
          if (r[i] > coeffs_[i]) return 0;
        return 1;
      }
      case kind::custom:
        return custom_(r);
    }
    return 0;
  }

  // pair kernel shortcut for order 2
  double kernel1(double r) const {
    const double arr[1] = {r};
    return kernel(std::span<const double>(arr, 1));
  }

  double mark_factor(std::span<const mark> m) const { return mark_ ? mark_(m) : 1.0; }

 private:
  explicit polynomial_spec(std::size_t order) : order_(order) {
    if (order == 0) throw config_invalid("polynomial order must be >= 1");
  }
  enum class kind { constant, exponential, exponential_matrix, threshold, threshold_matrix, custom };
  std::size_t order_;
  kind kind_ = kind::constant;
  double scalar_ = 1.0;
  std::vector<double> coeffs_;
  distance_kernel custom_;
  mark_kernel mark_;
};

struct evaluation {
  double value = 0;
  double std_error = 0;
};

struct eval_options {
  bool normalized = true;       // divide by total_mass^n (U_1 convention)
  double exact_budget = 1e7;     // max ordered tuples in exact mode
};

namespace detail {

// exact order-2 value for a pure distance kernel in O(#nodes):
// sum over internal nodes of phi(value) * (ordered cross mass), plus the
// diagonal phi(0) * sum m_i^2
inline double exact_order2_unmarked(const ultrametric_space& u, const polynomial_spec& poly) {
  double acc = poly.kernel1(0.0) * sum_sq_masses(u);
  std::vector<std::pair<double, double>> atoms;
  u.merge_mass_atoms(atoms);
  for (const auto& [value, cross] : atoms) acc += poly.kernel1(value) * cross;
  return acc;
}

}  // namespace detail

inline evaluation evaluate_exact(const ultrametric_space& u, const polynomial_spec& poly,
                                 eval_options opt = {}) {
  const std::size_t n = poly.order();
  if (opt.normalized && (u.is_zero() || u.total_mass() <= 0))
    throw empty_space("normalized evaluation needs positive mass");
  if (u.is_zero()) return {0.0, 0.0};

  const std::size_t L = u.leaf_count();
  double tuples = std::pow(static_cast<double>(L), static_cast<double>(n));
  if (tuples > opt.exact_budget)
    throw budget_exceeded("exact evaluation would need " + std::to_string(tuples) + " tuples");

  const double mass_norm = opt.normalized ? u.total_mass() : 1.0;

  if (n == 1) {
    double acc = 0;
    const double phi = poly.kernel({});
    for (std::size_t i = 0; i < L; ++i) {
      const mark mk[1] = {u.leaf_mark(i)};
      acc += u.leaf_mass(i) * poly.mark_factor(std::span<const mark>(mk, 1));
    }
    return {phi * acc / mass_norm, 0.0};
  }

  if (n == 2 && !poly.has_mark_factor()) {
    double v = detail::exact_order2_unmarked(u, poly);
    return {v / (mass_norm * mass_norm), 0.0};
  }

  // dense matrix when affordable, per-pair tree walks otherwise
  std::vector<double> dense;
  if (static_cast<double>(L) * static_cast<double>(L) <= 1.2e7) dense = u.pairwise_matrix();
  auto dist = [&](std::size_t i, std::size_t j) {
    return dense.empty() ? u.distance(i, j) : dense[i * L + j];
  };

  std::vector<std::size_t> ix(n, 0);
  std::vector<double> r(poly.pair_count());
  std::vector<mark> mks(n);
  double acc = 0;
  for (;;) {
    double w = 1;
    for (std::size_t k = 0; k < n; ++k) w *= u.leaf_mass(ix[k]);
    if (w != 0) {
      std::size_t p = 0;
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) r[p++] = dist(ix[a], ix[b]);
      double val = poly.kernel(r);
      if (poly.has_mark_factor()) {
        for (std::size_t a = 0; a < n; ++a) mks[a] = u.leaf_mark(ix[a]);
        val *= poly.mark_factor(mks);
      }
      acc += w * val;
    }
    std::size_t k = 0;
    while (k < n && ++ix[k] == L) ix[k++] = 0;
    if (k == n) break;
  }
  return {acc / std::pow(mass_norm, static_cast<double>(n)), 0.0};
}

inline evaluation evaluate_monte_carlo(const ultrametric_space& u, const polynomial_spec& poly,
                                       std::size_t reps, rng_stream& rng, eval_options opt = {}) {
  const std::size_t n = poly.order();
  if (u.is_zero() || u.total_mass() <= 0) {
    if (opt.normalized) throw empty_space("normalized evaluation needs positive mass");
    return {0.0, 0.0};
  }
  const double scale = opt.normalized ? 1.0 : std::pow(u.total_mass(), static_cast<double>(n));
  std::vector<std::size_t> ix(n);
  std::vector<double> r(poly.pair_count());
  std::vector<mark> mks(n);
  double sum = 0, sumsq = 0;
  for (std::size_t rep = 0; rep < reps; ++rep) {
    for (std::size_t k = 0; k < n; ++k) ix[k] = u.sample_leaf(rng);
    std::size_t p = 0;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) r[p++] = u.distance(ix[a], ix[b]);
    double val = poly.kernel(r);
    if (poly.has_mark_factor()) {
      for (std::size_t a = 0; a < n; ++a) mks[a] = u.leaf_mark(ix[a]);
      val *= poly.mark_factor(mks);
    }
    val *= scale;
    sum += val;
    sumsq += val * val;
  }
  double mean = sum / static_cast<double>(reps);
  double var = std::max(0.0, sumsq / static_cast<double>(reps) - mean * mean);
  double se = reps > 1 ? std::sqrt(var / static_cast<double>(reps - 1)) : 0.0;
  return {mean, se};
}

}  // namespace genlab
