#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "genlab/errors.hpp"
#include "genlab/tree.hpp"

namespace genlab {

// Append-only ancestry forest. One root node per founder (time 0) and one
// node per birth event; a birth points both participants at the new node,
// so recording an event is O(1) and the pairwise MRCA of two individuals is
// the lowest common node of their current pointers. Parents always have
// smaller ids than children, which the reduction below exploits.
class lineage_forest {
 public:
  explicit lineage_forest(std::size_t founders) {
    times_.reserve(founders * 4);
    parents_.reserve(founders * 4);
    for (std::size_t i = 0; i < founders; ++i) {
      times_.push_back(0.0);
      parents_.push_back(-1);
    }
    founders_ = static_cast<std::int32_t>(founders);
  }

  std::int32_t founders() const { return founders_; }
  std::size_t size() const { return times_.size(); }
  double time_of(std::int32_t node) const { return times_[static_cast<std::size_t>(node)]; }
  std::int32_t parent_of(std::int32_t node) const {
    return parents_[static_cast<std::size_t>(node)];
  }

  std::int32_t record_birth(std::int32_t copier_node, double time) {
    std::int32_t id = static_cast<std::int32_t>(times_.size());
    times_.push_back(time);
    parents_.push_back(copier_node);
    return id;
  }

  // founder id of a lineage (roots are the first `founders_` nodes)
  std::int32_t root_of(std::int32_t node) const {
    while (parents_[static_cast<std::size_t>(node)] != -1)
      node = parents_[static_cast<std::size_t>(node)];
    return node;
  }

  // time of the most recent common ancestor node, or -1 if the lineages
  // never met within the run
  double mrca_time(std::int32_t a, std::int32_t b) const {
    while (a != b) {
      if (a > b)
        a = parents_[static_cast<std::size_t>(a)];
      else
        b = parents_[static_cast<std::size_t>(b)];
      if (a == -1 || b == -1) return -1;
    }
    return times_[static_cast<std::size_t>(a)];
  }

  // One dendrogram subtree per founder whose descendants are alive, with
  // merge values 2*(now - event time) and leaves produced by the caller
  // (mass and mark of the living individual). Unary chains are contracted.
  struct component {
    std::int32_t founder = -1;
    tree_node tree;
  };

  std::vector<component> reduce(std::span<const std::int32_t> ptrs, double now,
                                const std::function<tree_node(std::size_t)>& leaf_payload) const {
    std::vector<std::uint8_t> visited(times_.size(), 0);
    std::vector<std::int32_t> marked;
    marked.reserve(ptrs.size() * 8);
    for (std::int32_t p : ptrs) {
      std::int32_t cur = p;
      while (cur != -1 && !visited[static_cast<std::size_t>(cur)]) {
        visited[static_cast<std::size_t>(cur)] = 1;
        marked.push_back(cur);
        cur = parents_[static_cast<std::size_t>(cur)];
      }
    }
    std::sort(marked.begin(), marked.end(), std::greater<>());

    auto slot = [&](std::int32_t id) {
      auto it = std::lower_bound(marked.begin(), marked.end(), id, std::greater<>());
      return static_cast<std::size_t>(it - marked.begin());
    };

    // subtrees pending at each marked node, filled children-before-parents
    std::vector<std::vector<tree_node>> pending(marked.size());
    for (std::size_t i = 0; i < ptrs.size(); ++i)
      pending[slot(ptrs[i])].push_back(leaf_payload(i));

    std::vector<component> out;
    for (std::size_t s = 0; s < marked.size(); ++s) {
      std::int32_t id = marked[s];
      auto& here = pending[s];
      if (here.empty()) throw inconsistent_ancestry("marked lineage node with no descendants");
      tree_node sub;
      if (here.size() == 1) {
        sub = std::move(here.front());
      } else {
        sub = tree_node::internal(2 * (now - times_[static_cast<std::size_t>(id)]),
                                  std::move(here));
      }
      std::int32_t par = parents_[static_cast<std::size_t>(id)];
      if (par == -1) {
        out.push_back({id, std::move(sub)});
      } else {
        pending[slot(par)].push_back(std::move(sub));
      }
    }
    // components come out in descending founder id; flip for stable reading
    std::reverse(out.begin(), out.end());
    return out;
  }

 private:
  std::vector<double> times_;
  std::vector<std::int32_t> parents_;
  std::int32_t founders_ = 0;
};

// Piecewise-constant right-continuous function of time, used for recorded
// total-mass paths and time-dependent rate schedules.
struct step_function {
  std::vector<double> times;   // 0 = times[0] < times[1] < ...
  std::vector<double> values;  // values[i] on [times[i], times[i+1])

  static step_function constant(double v) { return {{0.0}, {v}}; }

  bool valid() const {
    if (times.empty() || times.size() != values.size() || times[0] != 0) return false;
    for (std::size_t i = 1; i < times.size(); ++i)
      if (times[i] <= times[i - 1]) return false;
    return true;
  }

  double at(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    std::size_t i = static_cast<std::size_t>(it - times.begin());
    return values[i == 0 ? 0 : i - 1];
  }

  // exact integral over [a, b]
  double integral(double a, double b) const {
    if (b <= a) return 0;
    double acc = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      double lo = std::max(a, times[i]);
      double hi = i + 1 < times.size() ? std::min(b, times[i + 1]) : b;
      if (hi > lo) acc += values[i] * (hi - lo);
    }
    return acc;
  }

  double end_time_covered(double horizon) const { return horizon; }
};

}  // namespace genlab
