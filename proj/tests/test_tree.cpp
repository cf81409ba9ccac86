#include <catch2/catch_amalgamated.hpp>

#include "genlab/metrics.hpp"
#include "genlab/polynomial.hpp"
#include "genlab/tree.hpp"
#include "oracles.hpp"

using namespace genlab;

namespace {

ultrametric_space two_leaf(double dist, double m1 = 0.5, double m2 = 0.5) {
  std::vector<tree_node> kids;
  kids.push_back(tree_node::leaf(m1));
  kids.push_back(tree_node::leaf(m2));
  return ultrametric_space(tree_node::internal(dist, std::move(kids)));
}

// random dendrogram over `leaves` leaves: repeatedly join random groups at
// increasing heights
ultrametric_space random_space(rng_stream& rng, std::size_t leaves, bool marked = false,
                               std::int32_t n_sites = 2, std::int32_t n_types = 2) {
  std::vector<tree_node> nodes;
  for (std::size_t i = 0; i < leaves; ++i) {
    mark mk;
    if (marked)
      mk = mark{static_cast<std::int32_t>(rng.uniform_below(static_cast<std::uint64_t>(n_sites))),
                static_cast<std::int32_t>(rng.uniform_below(static_cast<std::uint64_t>(n_types)))};
    nodes.push_back(tree_node::leaf(0.1 + rng.uniform01(), mk));
  }
  double height = 0;
  while (nodes.size() > 1) {
    height += 0.2 + rng.uniform01();
    std::size_t take = 2 + rng.uniform_below(std::min<std::uint64_t>(nodes.size() - 1, 3));
    std::vector<tree_node> group;
    for (std::size_t k = 0; k < take && nodes.size() > 0; ++k) {
      std::size_t i = rng.uniform_below(nodes.size());
      group.push_back(std::move(nodes[i]));
      nodes.erase(nodes.begin() + static_cast<std::ptrdiff_t>(i));
    }
    nodes.push_back(tree_node::internal(height, std::move(group)));
  }
  return ultrametric_space(std::move(nodes.front()));
}

}  // namespace

TEST_CASE("single leaf and zero element basics") {
  auto u = ultrametric_space::single_leaf(1.0);
  CHECK(u.total_mass() == 1.0);
  CHECK(u.leaf_count() == 1);
  CHECK(u.diameter() == 0.0);

  auto z = ultrametric_space::zero();
  CHECK(z.is_zero());
  CHECK(z.total_mass() == 0.0);
  auto d = decompose(z);
  CHECK(d.total_mass == 0.0);
  CHECK(!d.normalized);
}

TEST_CASE("from_distance_matrix identity cases") {
  std::vector<double> one = {0.0};
  std::vector<double> mass1 = {1.0};
  auto u = ultrametric_space::from_distance_matrix(one, 1, mass1);
  CHECK(u.leaf_count() == 1);
  CHECK(u.total_mass() == 1.0);
  CHECK(u.diameter() == 0.0);

  std::vector<double> two = {0, 6, 6, 0};
  std::vector<double> mass2 = {0.5, 0.5};
  auto v = ultrametric_space::from_distance_matrix(two, 2, mass2);
  CHECK(v.leaf_count() == 2);
  CHECK(v.diameter() == 6.0);
  CHECK(v.distance(0, 1) == 6.0);
}

TEST_CASE("from_distance_matrix round trip matches single-linkage oracle") {
  rng_stream rng(2024);
  for (int rep = 0; rep < 200; ++rep) {
    auto u = random_space(rng, 6);
    auto d = u.pairwise_matrix();
    std::vector<double> masses(u.leaf_masses().begin(), u.leaf_masses().end());
    auto rebuilt = ultrametric_space::from_distance_matrix(d, u.leaf_count(), masses);
    auto oracle_matrix = oracle::single_linkage_matrix(d, u.leaf_count());
    // oracle reconstruction must agree entrywise with the input (it is
    // ultrametric), and the rebuilt space must reproduce it exactly
    CHECK(oracle_matrix == d);
    CHECK(isomorphic(rebuilt, u));
  }
}

TEST_CASE("from_distance_matrix rejects violations") {
  // 1-2 close, 2-3 close, 1-3 far: violates max-of-two-sides
  std::vector<double> bad = {0, 1, 5, 1, 0, 1, 5, 1, 0};
  std::vector<double> m = {1, 1, 1};
  CHECK_THROWS_AS(ultrametric_space::from_distance_matrix(bad, 3, m), not_ultrametric);

  std::vector<double> asym = {0, 1, 2, 0};
  std::vector<double> m2 = {1, 1};
  CHECK_THROWS_AS(ultrametric_space::from_distance_matrix(asym, 2, m2), not_ultrametric);

  std::vector<double> two = {0, 6, 6, 0};
  std::vector<double> neg = {-1.0, 1.0};
  CHECK_THROWS_AS(ultrametric_space::from_distance_matrix(two, 2, neg), negative_mass);
  std::vector<double> short_mass = {1.0};
  CHECK_THROWS_AS(ultrametric_space::from_distance_matrix(two, 2, short_mass),
                  dimension_mismatch);
}

TEST_CASE("sampled matrices are ultrametric and marks ride along") {
  rng_stream rng(7);
  auto u = random_space(rng, 9, true);
  auto s = sample_distance_matrix(u, 5, rng);
  CHECK(s.order == 5);
  CHECK(matrix_is_ultrametric(s.distances, 5));
  CHECK(s.marks.size() == 5);

  auto single = ultrametric_space::single_leaf(2.0);
  auto s2 = sample_distance_matrix(single, 3, rng);
  for (double v : s2.distances) CHECK(v == 0.0);

  CHECK_THROWS_AS(sample_distance_matrix(ultrametric_space::zero(), 2, rng), empty_space);
}

TEST_CASE("two-leaf sampling frequency matches the binomial oracle") {
  rng_stream rng(99);
  auto u = two_leaf(6.0);
  std::size_t hits = 0;
  const std::size_t reps = 100000;
  for (std::size_t i = 0; i < reps; ++i) {
    auto s = sample_distance_matrix(u, 2, rng);
    if (s.at(0, 1) == 6.0) hits++;
  }
  // off-diagonal is 6 iff the two draws differ: probability 1/2
  double p_hat = static_cast<double>(hits) / reps;
  double se = std::sqrt(0.25 / reps);
  CHECK(std::abs(p_hat - 0.5) < 3 * se);
}

TEST_CASE("truncation caps distances at 2h") {
  auto u = two_leaf(6.0);
  auto t = truncate(u, 2.0);
  CHECK(t.diameter() == 4.0);
  CHECK(t.total_mass() == 1.0);

  auto same = truncate(u, 3.5);
  CHECK(isomorphic(same, u));

  rng_stream rng(5);
  for (int rep = 0; rep < 1000; ++rep) {
    auto w = random_space(rng, 6);
    double h = 0.3 * w.diameter() * rng.uniform01() + 0.1;
    double hp = h * rng.uniform01();
    CHECK(truncate(truncate(w, h), hp).canonical_hash() == truncate(w, hp).canonical_hash());
  }
}

TEST_CASE("concatenation: identity, masses, forced two-leaf form") {
  auto a = ultrametric_space::single_leaf(0.3);
  auto b = ultrametric_space::single_leaf(0.7);
  auto joined = concatenate(a, b, 3.0);
  CHECK(joined.leaf_count() == 2);
  CHECK(joined.diameter() == 6.0);
  CHECK(joined.total_mass() == Catch::Approx(1.0));

  auto with_zero = concatenate(a, ultrametric_space::zero(), 3.0);
  CHECK(isomorphic(with_zero, a));

  auto too_tall = two_leaf(8.0);
  CHECK_THROWS_AS(concatenate(too_tall, a, 3.0), component_too_tall);
}

TEST_CASE("concatenation laws: commutative, associative, consistent with truncation") {
  rng_stream rng(11);
  for (int rep = 0; rep < 1000; ++rep) {
    auto u = random_space(rng, 4);
    auto v = random_space(rng, 3);
    auto w = random_space(rng, 5);
    double h = std::max({u.diameter(), v.diameter(), w.diameter()}) / 2 + 0.25;

    CHECK(concatenate(u, v, h).canonical_hash() == concatenate(v, u, h).canonical_hash());
    CHECK(concatenate(concatenate(u, v, h), w, h).canonical_hash() ==
          concatenate(u, concatenate(v, w, h), h).canonical_hash());

    double hp = h * (0.15 + 0.8 * rng.uniform01());
    auto lhs = truncate(concatenate(u, v, h), hp);
    auto rhs = concatenate(truncate(u, hp), truncate(v, hp), hp);
    CHECK(lhs.canonical_hash() == rhs.canonical_hash());
  }
}

TEST_CASE("graft: coalesced top ignores the base; single-leaf base adds exactly 2t") {
  rng_stream rng(13);
  auto base = two_leaf(10.0);

  auto top_coalesced = two_leaf(1.0);  // diameter 1 < 2t for t = 1
  auto g = graft(base, top_coalesced, 1.0, rng);
  CHECK(isomorphic(g, top_coalesced));

  // two lines never coalesced: top = two leaves at exactly 2t
  auto top_lines = two_leaf(2.0);
  auto single = ultrametric_space::single_leaf(1.0);
  auto g2 = graft(single, top_lines, 1.0, rng);
  CHECK(g2.diameter() == 2.0);

  CHECK_THROWS_AS(graft(ultrametric_space::zero(), top_lines, 1.0, rng), empty_base);
  CHECK_THROWS_AS(graft(base, two_leaf(3.0), 1.0, rng), top_too_tall);
}

TEST_CASE("graft on a two-leaf base follows the binomial oracle") {
  rng_stream rng(17);
  auto base = two_leaf(10.0);
  auto top_lines = two_leaf(2.0);  // two never-coalesced lines at t = 1
  std::size_t same = 0;
  const std::size_t reps = 100000;
  for (std::size_t i = 0; i < reps; ++i) {
    auto g = graft(base, top_lines, 1.0, rng);
    double dist = g.distance(0, 1);
    // ancestors equal: 2t = 2; different: 2t + 10 = 12
    REQUIRE((dist == 2.0 || dist == 12.0));
    if (dist == 2.0) ++same;
  }
  double p_hat = static_cast<double>(same) / reps;
  double se = std::sqrt(0.25 / reps);
  CHECK(std::abs(p_hat - 0.5) < 3 * se);
}

TEST_CASE("metric transform: identity, bounded map, validation") {
  auto u = two_leaf(3.0);
  auto id = metric_transform(u, [](double r) { return r; });
  CHECK(isomorphic(id, u));

  auto m = metric_transform(u, bounded_metric_map);
  CHECK(m.diameter() == Catch::Approx(-std::expm1(-3.0)));

  CHECK_THROWS_AS(metric_transform(u, [](double r) { return r + 1; }), non_monotone_map);
  CHECK_THROWS_AS(metric_transform(u, [](double r) { return -r; }), non_monotone_map);

  rng_stream rng(23);
  for (int rep = 0; rep < 1000; ++rep) {
    auto w = random_space(rng, 7);
    auto t = metric_transform(w, bounded_metric_map);
    auto d = t.pairwise_matrix();
    CHECK(matrix_is_ultrametric(d, t.leaf_count()));
    CHECK(t.diameter() < 1.0);
  }
}

TEST_CASE("canonical form: relabeling, hashing, zero-distance merge") {
  // relabeled copy: same children in a different order
  std::vector<tree_node> k1;
  k1.push_back(tree_node::leaf(0.25));
  k1.push_back(tree_node::leaf(0.75));
  std::vector<tree_node> k2;
  k2.push_back(tree_node::leaf(0.75));
  k2.push_back(tree_node::leaf(0.25));
  auto a = ultrametric_space(tree_node::internal(4.0, std::move(k1)));
  auto b = ultrametric_space(tree_node::internal(4.0, std::move(k2)));
  CHECK(isomorphic(a, b));
  CHECK(a.canonical_bytes() == b.canonical_bytes());

  CHECK(!isomorphic(two_leaf(4.0), two_leaf(6.0)));

  // two zero-distance leaves with equal marks merge into one leaf
  std::vector<tree_node> k3;
  k3.push_back(tree_node::leaf(0.3));
  k3.push_back(tree_node::leaf(0.5));
  tree_node zero_pair = tree_node::internal(0.0, std::move(k3));
  std::vector<tree_node> k4;
  k4.push_back(std::move(zero_pair));
  k4.push_back(tree_node::leaf(0.2));
  auto merged = ultrametric_space(tree_node::internal(5.0, std::move(k4)));
  std::vector<tree_node> k5;
  k5.push_back(tree_node::leaf(0.8));
  k5.push_back(tree_node::leaf(0.2));
  auto expected = ultrametric_space(tree_node::internal(5.0, std::move(k5)));
  CHECK(isomorphic(merged, expected));
  CHECK(oracle::isomorphic_bruteforce(merged, expected));

  // with different marks they stay distinct
  std::vector<tree_node> k6;
  k6.push_back(tree_node::leaf(0.3, mark{0, 0}));
  k6.push_back(tree_node::leaf(0.5, mark{0, 1}));
  auto marked = ultrametric_space(tree_node::internal(0.0, std::move(k6)));
  CHECK(marked.leaf_count() == 2);
}

TEST_CASE("canonical hash equality agrees with brute-force isomorphism") {
  rng_stream rng(31);
  std::size_t agreements = 0;
  for (int rep = 0; rep < 300; ++rep) {
    auto u = random_space(rng, 4, rep % 2 == 1);
    auto v = random_space(rng, 4, rep % 2 == 1);
    bool fast = isomorphic(u, v);
    bool slow = oracle::isomorphic_bruteforce(u, v);
    CHECK(fast == slow);
    if (fast == slow) ++agreements;

    // a relabeled copy must always match
    auto d = u.pairwise_matrix();
    std::vector<double> masses(u.leaf_masses().begin(), u.leaf_masses().end());
    std::vector<mark> marks(u.leaf_marks().begin(), u.leaf_marks().end());
    auto copy = ultrametric_space::from_distance_matrix(d, u.leaf_count(), masses, marks);
    CHECK(isomorphic(copy, u));
  }
  REQUIRE(agreements == 300);
}

TEST_CASE("canonicalization is idempotent at the byte level") {
  rng_stream rng(37);
  for (int rep = 0; rep < 100; ++rep) {
    auto u = random_space(rng, 6, true);
    ultrametric_space again(u.root());
    CHECK(u.canonical_bytes() == again.canonical_bytes());
  }
}

TEST_CASE("diameter, covering number and mass on fixtures") {
  auto u = two_leaf(5.0);
  CHECK(u.diameter() == 5.0);
  CHECK(u.covering_number(0.1) == 2);
  CHECK(u.covering_number(6.0) == 1);
  CHECK_THROWS_AS(ultrametric_space::zero().covering_number(0.1), empty_space);

  // three balls at scale 1, two needed for 80% of mass at eps = 0.2
  std::vector<tree_node> kids;
  kids.push_back(tree_node::leaf(0.5));
  kids.push_back(tree_node::leaf(0.3));
  kids.push_back(tree_node::leaf(0.2));
  auto w = ultrametric_space(tree_node::internal(1.0, std::move(kids)));
  CHECK(w.covering_number(0.2) == 2);   // 0.5 + 0.3 >= 0.8
  CHECK(w.covering_number(0.01) == 3);  // needs 99%
  CHECK(w.covering_number(1.0) == 1);   // one ball of radius 1 covers all
}

TEST_CASE("decompose/compose round trip and scaling") {
  rng_stream rng(41);
  for (int rep = 0; rep < 200; ++rep) {
    auto u = random_space(rng, 5);
    auto d = decompose(u);
    CHECK(d.total_mass == Catch::Approx(u.total_mass()));
    CHECK(d.normalized->total_mass() == Catch::Approx(1.0));
    auto back = compose(d);
    CHECK(back.canonical_hash() == u.canonical_hash());

    auto scaled = scale_masses(u, 3.0);
    auto d2 = decompose(scaled);
    CHECK(d2.total_mass == Catch::Approx(3.0 * u.total_mass()));
    CHECK(isomorphic(*d2.normalized, *d.normalized));
  }
}

TEST_CASE("polynomials of order <= 4 separate small non-isomorphic spaces") {
  rng_stream rng(43);
  std::size_t tested = 0;
  for (int rep = 0; rep < 400 && tested < 50; ++rep) {
    auto u = *decompose(random_space(rng, 1 + rng.uniform_below(4))).normalized;
    auto v = *decompose(random_space(rng, 1 + rng.uniform_below(4))).normalized;
    if (isomorphic(u, v)) continue;
    ++tested;

    // candidate thresholds: midpoints between consecutive distinct distances
    std::vector<double> vals = {0.0};
    for (auto* s : {&u, &v}) {
      auto m = s->pairwise_matrix();
      for (double x : m) vals.push_back(x);
    }
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    std::vector<double> cuts;
    for (std::size_t i = 0; i + 1 < vals.size(); ++i) cuts.push_back((vals[i] + vals[i + 1]) / 2);
    cuts.push_back(vals.back() + 1);

    bool separated = false;
    for (std::size_t order = 2; order <= 4 && !separated; ++order) {
      for (double c : cuts) {
        auto poly = polynomial_spec::threshold(order, c);
        double fu = evaluate_exact(u, poly).value;
        double fv = evaluate_exact(v, poly).value;
        if (std::abs(fu - fv) > 1e-12) {
          separated = true;
          break;
        }
      }
    }
    CHECK(separated);
  }
  REQUIRE(tested == 50);
}

TEST_CASE("discrepancy bounds: examples and ordering") {
  auto a = two_leaf(4.0);
  auto b = two_leaf(6.0);
  auto bounds = discrepancy_bounds(a, b);
  CHECK(bounds.lower == Catch::Approx(1.0));  // mass 1/2 moves distance 2
  CHECK(bounds.upper >= bounds.lower);

  auto self = discrepancy_bounds(a, a);
  CHECK(self.lower == 0.0);
  CHECK(self.upper == 0.0);

  rng_stream rng(47);
  for (int rep = 0; rep < 1000; ++rep) {
    auto u = random_space(rng, 2 + rng.uniform_below(5));
    auto v = random_space(rng, 2 + rng.uniform_below(5));
    auto bd = discrepancy_bounds(u, v);
    CHECK(bd.lower <= bd.upper + 1e-12);
  }
}
