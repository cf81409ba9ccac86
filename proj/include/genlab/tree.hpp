#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genlab/errors.hpp"
#include "genlab/random.hpp"

namespace genlab {

// Mark carried by a leaf: (location, genetic type). -1 means unmarked.
struct mark {
  std::int32_t location = -1;
  std::int32_t type = -1;
  friend bool operator==(const mark&, const mark&) = default;
};

// Dendrogram node. Internal nodes carry the merge value (the pairwise
// distance realized between leaves of different children); leaves carry a
// mass and a mark. `mass` on internal nodes caches the subtree mass.
struct tree_node {
  double value = 0;
  double mass = 0;
  mark mk{};
  std::vector<tree_node> kids;

  bool is_leaf() const { return kids.empty(); }

  static tree_node leaf(double mass, mark mk = {}) {
    tree_node n;
    n.mass = mass;
    n.mk = mk;
    return n;
  }
  static tree_node internal(double value, std::vector<tree_node> kids) {
    tree_node n;
    n.value = value;
    n.kids = std::move(kids);
    return n;
  }
};

namespace detail {

inline void append_u32(std::string& s, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  s.append(buf, 4);
}
inline void append_f64(std::string& s, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  char buf[8];
  std::memcpy(buf, &bits, 8);
  s.append(buf, 8);
}

// Canonicalizes a subtree in place and returns its byte serialization, used
// both as the sort key for sibling ordering and as the hash preimage.
// Steps: recurse, splice children whose merge value equals the parent's,
// drop zero-mass leaves and empty internals, contract single-child chains,
// merge equal-mark leaves at zero-distance nodes, then sort children by
// (subtree mass descending, serialization ascending).
inline std::string canonicalize(tree_node& n) {
  if (n.is_leaf()) {
    std::string s;
    s.push_back('L');
    append_f64(s, n.mass);
    append_u32(s, static_cast<std::uint32_t>(n.mk.location));
    append_u32(s, static_cast<std::uint32_t>(n.mk.type));
    return s;
  }
  std::vector<tree_node> flat;
  flat.reserve(n.kids.size());
  std::vector<tree_node> pending(std::make_move_iterator(n.kids.begin()),
                                 std::make_move_iterator(n.kids.end()));
  while (!pending.empty()) {
    tree_node k = std::move(pending.back());
    pending.pop_back();
    if (!k.is_leaf() && k.value == n.value) {
      for (auto& g : k.kids) pending.push_back(std::move(g));
    } else {
      flat.push_back(std::move(k));
    }
  }
  n.kids = std::move(flat);

  std::vector<std::string> serials;
  serials.reserve(n.kids.size());
  std::vector<tree_node> kept;
  kept.reserve(n.kids.size());
  for (auto& k : n.kids) {
    std::string s = canonicalize(k);
    if (k.is_leaf() && k.mass == 0) continue;  // outside supp(mu)
    if (!k.is_leaf() && k.kids.empty()) continue;
    kept.push_back(std::move(k));
    serials.push_back(std::move(s));
  }
  n.kids = std::move(kept);

  if (n.value == 0 && !n.kids.empty()) {
    // children are all leaves here (a child internal node would need a
    // negative merge value); merge equal marks
    std::vector<tree_node> merged;
    for (auto& k : n.kids) {
      auto it = std::find_if(merged.begin(), merged.end(),
                             [&](const tree_node& m) { return m.mk == k.mk; });
      if (it == merged.end())
        merged.push_back(k);
      else
        it->mass += k.mass;
    }
    n.kids = std::move(merged);
    serials.clear();
    for (auto& k : n.kids) serials.push_back(canonicalize(k));
  }

  if (n.kids.size() == 1) {
    tree_node only = std::move(n.kids.front());
    n = std::move(only);
    return canonicalize(n);
  }

  n.mass = 0;
  for (const auto& k : n.kids) n.mass += k.mass;

  std::vector<std::size_t> order(n.kids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (n.kids[a].mass != n.kids[b].mass) return n.kids[a].mass > n.kids[b].mass;
    return serials[a] < serials[b];
  });
  std::vector<tree_node> sorted;
  sorted.reserve(order.size());
  std::string out;
  out.push_back('I');
  append_f64(out, n.value);
  append_u32(out, static_cast<std::uint32_t>(order.size()));
  for (std::size_t idx : order) {
    sorted.push_back(std::move(n.kids[idx]));
    out += serials[idx];
  }
  n.kids = std::move(sorted);
  return out;
}

inline void validate(const tree_node& n, double parent_value, bool is_root) {
  if (!std::isfinite(n.value) || !std::isfinite(n.mass))
    throw not_ultrametric("non-finite value in dendrogram");
  if (n.is_leaf()) {
    if (n.mass < 0) throw negative_mass("leaf mass < 0");
    return;
  }
  if (n.value < 0) throw not_ultrametric("negative merge value");
  if (!is_root && n.value >= parent_value)
    throw not_ultrametric("merge values must strictly increase toward the root");
  if (n.kids.size() < 2) throw not_ultrametric("internal node with < 2 children");
  for (const auto& k : n.kids) validate(k, n.value, false);
}

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// A finite (marked) ultrametric measure space in canonical dendrogram form.
// Immutable after construction; all operations return new spaces. The zero
// element (total mass 0, no genealogy) is the default-constructed value.
class ultrametric_space {
 public:
  ultrametric_space() = default;

  explicit ultrametric_space(tree_node root) {
    serial_ = detail::canonicalize(root);
    if (root.is_leaf() && root.mass == 0) {
      *this = ultrametric_space();
      return;
    }
    if (!root.is_leaf() && root.kids.empty()) {
      *this = ultrametric_space();
      return;
    }
    detail::validate(root, 0, true);
    root_ = std::move(root);
    zero_ = false;
    flatten();
  }

  static ultrametric_space zero() { return ultrametric_space(); }

  static ultrametric_space single_leaf(double mass, mark mk = {}) {
    return ultrametric_space(tree_node::leaf(mass, mk));
  }

  // Reconstructs the canonical dendrogram of an ultrametric matrix by
  // merging clusters level by level (single linkage is exact here). The
  // round trip is verified entrywise during clustering; any mismatch means
  // the input violated the ultrametric three-point condition.
  static ultrametric_space from_distance_matrix(std::span<const double> dist, std::size_t n,
                                                std::span<const double> masses,
                                                std::span<const mark> marks = {}) {
    if (masses.size() != n || dist.size() != n * n)
      throw dimension_mismatch("distance matrix / mass vector size mismatch");
    if (!marks.empty() && marks.size() != n)
      throw dimension_mismatch("marks length must equal matrix order");
    for (std::size_t i = 0; i < n; ++i) {
      if (masses[i] < 0) throw negative_mass("mass < 0");
      if (dist[i * n + i] != 0) throw not_ultrametric("nonzero diagonal");
      for (std::size_t j = 0; j < n; ++j) {
        double v = dist[i * n + j];
        if (!std::isfinite(v) || v < 0) throw not_ultrametric("invalid distance entry");
        if (v != dist[j * n + i]) throw not_ultrametric("asymmetric matrix");
      }
    }
    if (n == 0) return zero();

    struct edge {
      double d;
      std::uint32_t i, j;
    };
    std::vector<edge> edges;
    edges.reserve(n * (n - 1) / 2);
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t j = i + 1; j < n; ++j)
        edges.push_back({dist[i * n + j], i, j});
    std::sort(edges.begin(), edges.end(), [](const edge& a, const edge& b) { return a.d < b.d; });

    std::vector<std::uint32_t> parent(n);
    for (std::uint32_t i = 0; i < n; ++i) parent[i] = i;
    auto find = [&](std::uint32_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    std::vector<tree_node> cluster(n);
    std::vector<std::vector<std::uint32_t>> members(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      cluster[i] = tree_node::leaf(masses[i], marks.empty() ? mark{} : marks[i]);
      members[i] = {i};
    }

    for (const auto& e : edges) {
      std::uint32_t a = find(e.i), b = find(e.j);
      if (a == b) continue;
      // the tree realizes distance e.d for every cross pair of the two
      // components; exact entrywise agreement with the input is required
      for (std::uint32_t x : members[a])
        for (std::uint32_t y : members[b])
          if (dist[x * n + y] != e.d)
            throw not_ultrametric("triple (" + std::to_string(x) + "," + std::to_string(y) + "," +
                                  std::to_string(e.i) +
                                  ") violates the max-of-two-sides rule");
      tree_node& ca = cluster[a];
      tree_node& cb = cluster[b];
      bool a_at = !ca.is_leaf() && ca.value == e.d;
      bool b_at = !cb.is_leaf() && cb.value == e.d;
      tree_node joined;
      if (a_at && b_at) {
        joined = std::move(ca);
        for (auto& k : cb.kids) joined.kids.push_back(std::move(k));
      } else if (a_at) {
        joined = std::move(ca);
        joined.kids.push_back(std::move(cb));
      } else if (b_at) {
        joined = std::move(cb);
        joined.kids.push_back(std::move(ca));
      } else {
        std::vector<tree_node> kids;
        kids.push_back(std::move(ca));
        kids.push_back(std::move(cb));
        joined = tree_node::internal(e.d, std::move(kids));
      }
      if (members[a].size() < members[b].size()) members[a].swap(members[b]);
      members[a].insert(members[a].end(), members[b].begin(), members[b].end());
      members[b].clear();
      parent[b] = a;
      cluster[a] = std::move(joined);
    }
    return ultrametric_space(std::move(cluster[find(0)]));
  }

  bool is_zero() const { return zero_; }
  double total_mass() const { return zero_ ? 0.0 : root_.mass; }
  std::size_t leaf_count() const { return leaf_mass_.size(); }
  bool marked() const { return marked_; }

  double diameter() const {
    if (zero_ || root_.is_leaf()) return 0;
    return root_.value;
  }

  const tree_node& root() const { return root_; }
  std::span<const double> leaf_masses() const { return leaf_mass_; }
  std::span<const mark> leaf_marks() const { return leaf_mark_; }
  double leaf_mass(std::size_t i) const { return leaf_mass_[i]; }
  const mark& leaf_mark(std::size_t i) const { return leaf_mark_[i]; }

  // pairwise leaf distance; O(tree depth)
  double distance(std::size_t i, std::size_t j) const {
    if (i == j) return 0;
    std::int32_t a = leaf_parent_[i], b = leaf_parent_[j];
    while (a != b) {
      if (int_depth_[a] >= int_depth_[b])
        a = int_parent_[a];
      else
        b = int_parent_[b];
    }
    return int_value_[a];
  }

  // dense leaf-by-leaf matrix (row major)
  std::vector<double> pairwise_matrix() const {
    std::size_t L = leaf_count();
    std::vector<double> m(L * L, 0.0);
    for (std::size_t v = 0; v < int_value_.size(); ++v) {
      const auto& blocks = int_child_ranges_[v];
      for (std::size_t c1 = 0; c1 < blocks.size(); ++c1)
        for (std::size_t c2 = c1 + 1; c2 < blocks.size(); ++c2)
          for (std::uint32_t i = blocks[c1].first; i < blocks[c1].second; ++i)
            for (std::uint32_t j = blocks[c2].first; j < blocks[c2].second; ++j)
              m[i * L + j] = m[j * L + i] = int_value_[v];
    }
    return m;
  }

  // leaf index drawn proportionally to leaf masses
  std::size_t sample_leaf(rng_stream& rng) const {
    if (zero_) throw empty_space("cannot sample from the zero space");
    double u = rng.uniform01() * leaf_cum_.back();
    auto it = std::upper_bound(leaf_cum_.begin(), leaf_cum_.end(), u);
    std::size_t i = static_cast<std::size_t>(it - leaf_cum_.begin());
    return std::min(i, leaf_count() - 1);
  }

  const std::string& canonical_bytes() const { return serial_; }
  std::uint64_t canonical_hash() const { return detail::fnv1a(serial_); }

  // Appends, for each internal node, the pair (merge value, ordered cross
  // mass), i.e. the raw-mass weight of ordered leaf pairs whose distance is
  // realized at that node. Together with the diagonal atom (0, sum m_i^2)
  // this is the unnormalized order-2 distance law.
  void merge_mass_atoms(std::vector<std::pair<double, double>>& out) const {
    out.clear();
    for (std::size_t v = 0; v < int_value_.size(); ++v) {
      double total = 0, sq = 0;
      for (const auto& [lo, hi] : int_child_ranges_[v]) {
        double m = subrange_mass(lo, hi);
        total += m;
        sq += m * m;
      }
      out.emplace_back(int_value_[v], total * total - sq);
    }
  }

  // essential-sup distances vs level eps: minimal number of closed eps-balls
  // (subtrees cut at level eps) whose union carries normalized mass >= 1-eps
  std::size_t covering_number(double eps) const {
    if (zero_ || total_mass() <= 0) throw empty_space("covering_number needs positive mass");
    if (eps <= 0) throw empty_space("covering_number needs eps > 0");
    std::vector<double> ball_mass;
    collect_balls(root_, eps, ball_mass);
    std::sort(ball_mass.begin(), ball_mass.end(), std::greater<>());
    double need = (1.0 - eps) * total_mass();
    double acc = 0;
    std::size_t k = 0;
    while (acc < need && k < ball_mass.size()) acc += ball_mass[k++];
    return std::max<std::size_t>(k, 1);
  }

 private:
  friend ultrametric_space scale_masses(const ultrametric_space&, double);

  double subrange_mass(std::uint32_t lo, std::uint32_t hi) const {
    if (lo >= hi) return 0;
    double below = lo == 0 ? 0.0 : leaf_cum_[lo - 1];
    return leaf_cum_[hi - 1] - below;
  }

  void collect_balls(const tree_node& n, double eps, std::vector<double>& out) const {
    if (n.is_leaf() || n.value <= eps) {
      out.push_back(n.mass);
      return;
    }
    for (const auto& k : n.kids) collect_balls(k, eps, out);
  }

  void flatten() {
    leaf_mass_.clear();
    leaf_mark_.clear();
    leaf_parent_.clear();
    leaf_cum_.clear();
    int_value_.clear();
    int_parent_.clear();
    int_depth_.clear();
    int_child_ranges_.clear();
    marked_ = false;
    if (zero_) return;
    dfs(root_, -1, 0);
    double acc = 0;
    leaf_cum_.reserve(leaf_mass_.size());
    for (double m : leaf_mass_) {
      acc += m;
      leaf_cum_.push_back(acc);
    }
  }

  void dfs(const tree_node& n, std::int32_t parent, std::int32_t depth) {
    if (n.is_leaf()) {
      leaf_mass_.push_back(n.mass);
      leaf_mark_.push_back(n.mk);
      leaf_parent_.push_back(parent);
      if (n.mk.location >= 0 || n.mk.type >= 0) marked_ = true;
      return;
    }
    std::int32_t me = static_cast<std::int32_t>(int_value_.size());
    int_value_.push_back(n.value);
    int_parent_.push_back(parent);
    int_depth_.push_back(depth);
    int_child_ranges_.emplace_back();
    for (const auto& k : n.kids) {
      std::uint32_t lo = static_cast<std::uint32_t>(leaf_mass_.size());
      dfs(k, me, depth + 1);
      std::uint32_t hi = static_cast<std::uint32_t>(leaf_mass_.size());
      int_child_ranges_[me].emplace_back(lo, hi);
    }
  }

  tree_node root_{};
  bool zero_ = true;
  bool marked_ = false;
  std::string serial_ = "Z";
  std::vector<double> leaf_mass_, leaf_cum_;
  std::vector<mark> leaf_mark_;
  std::vector<std::int32_t> leaf_parent_;
  std::vector<double> int_value_;
  std::vector<std::int32_t> int_parent_, int_depth_;
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> int_child_ranges_;
};

inline bool isomorphic(const ultrametric_space& a, const ultrametric_space& b) {
  return a.canonical_bytes() == b.canonical_bytes();
}

inline double sum_sq_masses(const ultrametric_space& u) {
  double s = 0;
  for (double m : u.leaf_masses()) s += m * m;
  return s;
}

inline ultrametric_space scale_masses(const ultrametric_space& u, double factor) {
  if (u.is_zero() || factor == 0) return ultrametric_space::zero();
  tree_node copy = u.root();
  std::function<void(tree_node&)> scale = [&](tree_node& n) {
    if (n.is_leaf()) {
      n.mass *= factor;
      return;
    }
    for (auto& k : n.kids) scale(k);
  };
  scale(copy);
  return ultrametric_space(std::move(copy));
}

// total mass / normalized genealogy split
struct mass_decomposition {
  double total_mass = 0;
  std::optional<ultrametric_space> normalized;  // absent at mass 0 by default
};

inline mass_decomposition decompose(const ultrametric_space& u) {
  if (u.is_zero() || u.total_mass() <= 0) return {0.0, std::nullopt};
  return {u.total_mass(), scale_masses(u, 1.0 / u.total_mass())};
}

inline ultrametric_space compose(const mass_decomposition& d) {
  if (d.total_mass <= 0 || !d.normalized) return ultrametric_space::zero();
  return scale_masses(*d.normalized, d.total_mass);
}

// caps all pairwise distances at 2h (the h-tree-top)
inline ultrametric_space truncate(const ultrametric_space& u, double h) {
  if (h < 0) throw not_ultrametric("truncation level must be >= 0");
  if (u.is_zero()) return u;
  double cap = 2 * h;
  if (u.diameter() <= cap) return u;
  std::vector<tree_node> tops;
  std::function<void(const tree_node&)> cut = [&](const tree_node& n) {
    if (n.is_leaf() || n.value <= cap) {
      tops.push_back(n);
      return;
    }
    for (const auto& k : n.kids) cut(k);
  };
  cut(u.root());
  return ultrametric_space(tree_node::internal(cap, std::move(tops)));
}

// disjoint union with cross-component distance exactly 2h; masses add
inline ultrametric_space concatenate(std::span<const ultrametric_space> components, double h) {
  if (h <= 0) throw component_too_tall("concatenation level must be > 0");
  std::vector<tree_node> kids;
  for (const auto& c : components) {
    if (c.is_zero()) continue;
    if (c.diameter() > 2 * h)
      throw component_too_tall("component diameter exceeds 2h");
    kids.push_back(c.root());
  }
  if (kids.empty()) return ultrametric_space::zero();
  if (kids.size() == 1) return ultrametric_space(std::move(kids.front()));
  return ultrametric_space(tree_node::internal(2 * h, std::move(kids)));
}

inline ultrametric_space concatenate(const ultrametric_space& a, const ultrametric_space& b,
                                     double h) {
  const ultrametric_space arr[2] = {a, b};
  return concatenate(std::span<const ultrametric_space>(arr, 2), h);
}

// Grafts `top` (the outcome of evolving for time t, diameter <= 2t) onto
// `base`: each depth-t ancestor line of `top` draws an independent
// mass-weighted ancestor in `base`, and pairs not coalesced within `top`
// get distance 2t + r_base(ancestor, ancestor').
inline ultrametric_space graft(const ultrametric_space& base, const ultrametric_space& top,
                               double t, rng_stream& rng) {
  if (base.is_zero() || base.total_mass() <= 0)
    throw empty_base("graft needs a base with positive mass");
  if (top.is_zero()) return top;
  if (top.diameter() > 2 * t) throw top_too_tall("top diameter exceeds 2t");

  std::vector<tree_node> lines;
  if (top.root().is_leaf() || top.root().value < 2 * t) {
    lines.push_back(top.root());
  } else {
    for (const auto& k : top.root().kids) lines.push_back(k);
  }

  // ancestor assignment: one base leaf per line
  std::vector<std::vector<tree_node>> per_leaf(base.leaf_count());
  for (auto& line : lines) {
    per_leaf[base.sample_leaf(rng)].push_back(std::move(line));
  }

  // walk the base dendrogram, attaching line groups at sampled leaves and
  // shifting base merge values by 2t
  std::function<std::optional<tree_node>(const tree_node&, std::size_t&)> build =
      [&](const tree_node& bn, std::size_t& leaf_idx) -> std::optional<tree_node> {
    if (bn.is_leaf()) {
      auto& group = per_leaf[leaf_idx++];
      if (group.empty()) return std::nullopt;
      if (group.size() == 1) return std::move(group.front());
      return tree_node::internal(2 * t, std::move(group));
    }
    std::vector<tree_node> sub;
    for (const auto& k : bn.kids) {
      if (auto r = build(k, leaf_idx)) sub.push_back(std::move(*r));
    }
    if (sub.empty()) return std::nullopt;
    if (sub.size() == 1) return std::move(sub.front());
    return tree_node::internal(bn.value + 2 * t, std::move(sub));
  };
  std::size_t leaf_idx = 0;
  auto result = build(base.root(), leaf_idx);
  return ultrametric_space(std::move(*result));
}

// transforms all merge values by a nondecreasing map fixing zero;
// ultrametricity is preserved by monotone maps
inline ultrametric_space metric_transform(const ultrametric_space& u,
                                          const std::function<double(double)>& f) {
  if (f(0.0) != 0.0) throw non_monotone_map("map must fix 0");
  if (u.is_zero()) return u;
  tree_node copy = u.root();
  std::function<void(tree_node&, double)> apply = [&](tree_node& n, double parent_orig) {
    if (n.is_leaf()) return;
    double orig = n.value;
    double mapped = f(orig);
    if (!(mapped >= 0) || !std::isfinite(mapped))
      throw non_monotone_map("map produced an invalid value");
    if (parent_orig >= 0 && orig < parent_orig && mapped > f(parent_orig))
      throw non_monotone_map("map is not nondecreasing");
    n.value = mapped;
    for (auto& k : n.kids) apply(k, orig);
  };
  apply(copy, -1);
  return ultrametric_space(std::move(copy));
}

inline double bounded_metric_map(double r) { return -std::expm1(-r); }

// order-n sample of the distance matrix distribution (marks included when
// the space is marked)
struct distance_matrix_sample {
  std::size_t order = 0;
  std::vector<double> distances;  // row-major order x order
  std::vector<mark> marks;        // empty when unmarked

  double at(std::size_t i, std::size_t j) const { return distances[i * order + j]; }
};

inline distance_matrix_sample sample_distance_matrix(const ultrametric_space& u, std::size_t n,
                                                     rng_stream& rng) {
  if (u.is_zero() || u.total_mass() <= 0) throw empty_space("cannot sample the zero space");
  distance_matrix_sample s;
  s.order = n;
  std::vector<std::size_t> ix(n);
  for (std::size_t k = 0; k < n; ++k) ix[k] = u.sample_leaf(rng);
  s.distances.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      s.distances[i * n + j] = s.distances[j * n + i] = u.distance(ix[i], ix[j]);
  if (u.marked()) {
    s.marks.reserve(n);
    for (std::size_t k = 0; k < n; ++k) s.marks.push_back(u.leaf_mark(ix[k]));
  }
  return s;
}

// exact ultrametric triple check (used by validation paths and tests)
inline bool matrix_is_ultrametric(std::span<const double> d, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k)
        if (d[i * n + k] > std::max(d[i * n + j], d[j * n + k])) return false;
  return true;
}

}  // namespace genlab
