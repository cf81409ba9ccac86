#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "genlab/errors.hpp"
#include "genlab/moran.hpp"
#include "genlab/tree.hpp"

namespace genlab {

using ordered_json = nlohmann::ordered_json;

// Space schema: {"total_mass": m, "tree": node} with
//   leaf      {"mass": m[, "location": g][, "type": i]}
//   internal  {"merge_value": v, "children": [node...]}
// The zero element is {"total_mass": 0.0}. Canonical form makes the emitted
// bytes stable across runs for the same logical space.

namespace detail {

inline ordered_json node_to_json(const tree_node& n) {
  ordered_json j;
  if (n.is_leaf()) {
    j["mass"] = n.mass;
    if (n.mk.location >= 0) j["location"] = n.mk.location;
    if (n.mk.type >= 0) j["type"] = n.mk.type;
    return j;
  }
  j["merge_value"] = n.value;
  ordered_json kids = ordered_json::array();
  for (const auto& k : n.kids) kids.push_back(node_to_json(k));
  j["children"] = std::move(kids);
  return j;
}

inline tree_node node_from_json(const ordered_json& j) {
  if (j.contains("children")) {
    if (!j.contains("merge_value")) throw config_invalid("internal node needs merge_value");
    std::vector<tree_node> kids;
    for (const auto& k : j.at("children")) kids.push_back(node_from_json(k));
    return tree_node::internal(j.at("merge_value").get<double>(), std::move(kids));
  }
  if (!j.contains("mass")) throw config_invalid("leaf node needs mass");
  mark mk;
  if (j.contains("location")) mk.location = j.at("location").get<std::int32_t>();
  if (j.contains("type")) mk.type = j.at("type").get<std::int32_t>();
  return tree_node::leaf(j.at("mass").get<double>(), mk);
}

}  // namespace detail

inline ordered_json space_to_json(const ultrametric_space& u) {
  ordered_json j;
  j["total_mass"] = u.total_mass();
  if (!u.is_zero()) j["tree"] = detail::node_to_json(u.root());
  return j;
}

inline ultrametric_space space_from_json(const ordered_json& j) {
  if (!j.contains("tree")) return ultrametric_space::zero();
  return ultrametric_space(detail::node_from_json(j.at("tree")));
}

inline std::string space_to_string(const ultrametric_space& u) { return space_to_json(u).dump(); }

inline ultrametric_space space_from_string(const std::string& s) {
  return space_from_json(ordered_json::parse(s));
}

// distance-matrix sample as (row, col, value) triplets over i < j
inline std::string distance_sample_to_csv(const distance_matrix_sample& s) {
  std::ostringstream out;
  out << "i,j,value\n";
  for (std::size_t i = 0; i < s.order; ++i)
    for (std::size_t j = i + 1; j < s.order; ++j) {
      out << i << ',' << j << ',';
      char buf[32];
      auto r = std::snprintf(buf, sizeof buf, "%.17g", s.at(i, j));
      out.write(buf, r);
      out << '\n';
    }
  return out.str();
}

// (time, total_mass) rows, right-continuous step interpretation
inline std::string mass_path_to_csv(const step_function& p) {
  std::ostringstream out;
  out << "time,total_mass\n";
  for (std::size_t i = 0; i < p.times.size(); ++i) {
    char buf[64];
    auto r = std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.times[i], p.values[i]);
    out.write(buf, r);
  }
  return out.str();
}

inline step_function mass_path_from_csv(std::istream& in) {
  step_function p;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.find("time") != std::string::npos) continue;
    }
    auto comma = line.find(',');
    if (comma == std::string::npos) throw config_invalid("mass path CSV needs time,mass rows");
    p.times.push_back(std::stod(line.substr(0, comma)));
    p.values.push_back(std::stod(line.substr(comma + 1)));
  }
  if (!p.valid()) throw mass_path_gap("mass path CSV must start at time 0 with increasing times");
  return p;
}

// event logs as JSON lines
inline std::string event_log_to_jsonl(const std::vector<moran_event>& events) {
  std::ostringstream out;
  for (const auto& e : events) {
    ordered_json j;
    j["t"] = e.time;
    switch (e.kind) {
      case event_kind::resample:
        j["kind"] = "resample";
        j["a"] = e.a;
        j["b"] = e.b;
        break;
      case event_kind::select:
        j["kind"] = "select";
        j["a"] = e.a;
        j["b"] = e.b;
        break;
      case event_kind::mutate:
        j["kind"] = "mutate";
        j["a"] = e.a;
        j["type"] = e.aux;
        break;
      case event_kind::migrate:
        j["kind"] = "migrate";
        j["a"] = e.a;
        j["site"] = e.aux;
        break;
    }
    out << j.dump() << '\n';
  }
  return out.str();
}

inline std::vector<moran_event> event_log_from_jsonl(std::istream& in) {
  std::vector<moran_event> events;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line);
    moran_event e{};
    e.time = j.at("t").get<double>();
    std::string kind = j.at("kind").get<std::string>();
    e.a = j.at("a").get<std::int32_t>();
    e.b = -1;
    e.aux = -1;
    if (kind == "resample") {
      e.kind = event_kind::resample;
      e.b = j.at("b").get<std::int32_t>();
    } else if (kind == "select") {
      e.kind = event_kind::select;
      e.b = j.at("b").get<std::int32_t>();
    } else if (kind == "mutate") {
      e.kind = event_kind::mutate;
      e.aux = j.at("type").get<std::int32_t>();
    } else if (kind == "migrate") {
      e.kind = event_kind::migrate;
      e.aux = j.at("site").get<std::int32_t>();
    } else {
      throw config_invalid("unknown event kind: " + kind);
    }
    events.push_back(e);
  }
  return events;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw config_invalid("cannot open for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace genlab
