#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "reluforge/common.hpp"
#include "reluforge/geometry.hpp"
#include "reluforge/memorize.hpp"

namespace reluforge {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(trim(tok));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_number(const std::string& tok, std::size_t row) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError("row " + std::to_string(row) + ": bad number '" + tok +
                     "'");
  }
}

inline bool indexed_name(const std::string& tok, char prefix, int expect) {
  if (tok.size() < 2 || tok[0] != prefix) return false;
  for (std::size_t i = 1; i < tok.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(tok[i]))) return false;
  return std::stoi(tok.substr(1)) == expect;
}

inline bool all_class_labels(const Vec& labels) {
  for (double v : labels)
    if (!(v >= 0.0) || v != std::floor(v) || v > 1e9) return false;
  return true;
}

}  // namespace detail

// CSV datasets use a header of x1..xd followed by either a single `label`
// column or y1..ym columns. Scalar labels become class labels when every
// value is a non-negative integer, unless the caller wants them signed.
inline LabeledDataset parse_dataset_csv(std::istream& in, bool force_real) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty dataset file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> head = detail::split_csv_line(line);

  std::size_t d = 0;
  while (d < head.size() && detail::indexed_name(head[d], 'x', int(d) + 1))
    ++d;
  if (d == 0) throw ParseError("header must start with x1");
  std::size_t m = 0;
  bool vector_labels = false;
  if (d + 1 == head.size() && head[d] == "label") {
    m = 1;
  } else {
    while (d + m < head.size() &&
           detail::indexed_name(head[d + m], 'y', int(m) + 1))
      ++m;
    if (m == 0 || d + m != head.size())
      throw ParseError("header must end with `label` or y1..ym");
    vector_labels = true;
  }

  LabeledDataset ds;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> toks = detail::split_csv_line(line);
    if (toks.size() != d + m)
      throw ParseError("row " + std::to_string(row) + ": expected " +
                       std::to_string(d + m) + " columns, got " +
                       std::to_string(toks.size()));
    Vec x(d);
    for (std::size_t k = 0; k < d; ++k)
      x[k] = detail::parse_number(toks[k], row);
    ds.points.push_back(std::move(x));
    if (vector_labels) {
      Vec y(m);
      for (std::size_t k = 0; k < m; ++k)
        y[k] = detail::parse_number(toks[d + k], row);
      ds.vector_labels.push_back(std::move(y));
    } else {
      ds.labels.push_back(detail::parse_number(toks[d], row));
    }
  }
  if (ds.points.empty()) throw ParseError("dataset has no rows");

  if (vector_labels)
    ds.kind = LabelKind::Vector;
  else if (!force_real && detail::all_class_labels(ds.labels))
    ds.kind = LabelKind::Class;
  else
    ds.kind = LabelKind::Real;
  return ds;
}

// JSON datasets carry a `points` array of arrays and a `labels` array that
// holds numbers (scalar labels) or arrays (vector labels).
inline LabeledDataset parse_dataset_json(std::istream& in, bool force_real) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseError(std::string("bad json: ") + e.what());
  }
  if (!j.contains("points") || !j.contains("labels"))
    throw ParseError("json dataset needs `points` and `labels`");
  LabeledDataset ds;
  for (const auto& row : j["points"]) {
    Vec x;
    for (const auto& v : row) x.push_back(v.get<double>());
    ds.points.push_back(std::move(x));
  }
  if (ds.points.empty()) throw ParseError("dataset has no rows");
  const auto& labels = j["labels"];
  if (!labels.is_array() || labels.empty())
    throw ParseError("dataset has no labels");
  if (labels.front().is_array()) {
    for (const auto& row : labels) {
      Vec y;
      for (const auto& v : row) y.push_back(v.get<double>());
      ds.vector_labels.push_back(std::move(y));
    }
    ds.kind = LabelKind::Vector;
  } else {
    for (const auto& v : labels) ds.labels.push_back(v.get<double>());
    ds.kind = !force_real && detail::all_class_labels(ds.labels)
                  ? LabelKind::Class
                  : LabelKind::Real;
  }
  return ds;
}

inline LabeledDataset load_dataset(const std::string& path, bool force_real) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  const bool json = path.size() > 5 && path.substr(path.size() - 5) == ".json";
  LabeledDataset ds = json ? parse_dataset_json(in, force_real)
                           : parse_dataset_csv(in, force_real);
  validate_dataset(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Network files: json with flat row-major weights. nlohmann keeps keys
// sorted and prints shortest round-trip doubles, so saving is deterministic
// and loading recovers every coefficient bit for bit.
// ---------------------------------------------------------------------------

struct NetworkStage {
  std::string name;
  std::size_t first = 0, last = 0;
};

struct NetworkMeta {
  std::string construction;
  std::uint64_t seed = 0;
  std::vector<NetworkStage> stages;
};

inline nlohmann::json network_to_json(const Network& net,
                                      const NetworkMeta& meta) {
  nlohmann::json j;
  j["input_dim"] = net.input_dim;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : net.layers) {
    nlohmann::json jl;
    jl["w"] = l.W.data;
    jl["b"] = l.b;
    if (l.post) jl["a"] = l.post->data;
    j["layers"].push_back(std::move(jl));
  }
  nlohmann::json jm;
  jm["construction"] = meta.construction;
  jm["seed"] = meta.seed;
  jm["stages"] = nlohmann::json::array();
  for (const auto& s : meta.stages) {
    nlohmann::json js;
    js["name"] = s.name;
    js["first"] = s.first;
    js["last"] = s.last;
    jm["stages"].push_back(std::move(js));
  }
  j["meta"] = std::move(jm);
  return j;
}

inline std::pair<Network, NetworkMeta> network_from_json(
    const nlohmann::json& j) {
  Network net;
  NetworkMeta meta;
  if (!j.contains("input_dim") || !j.contains("layers"))
    throw ParseError("network json needs `input_dim` and `layers`");
  net.input_dim = j["input_dim"].get<std::size_t>();
  std::size_t in_dim = net.input_dim;
  for (const auto& jl : j["layers"]) {
    Layer l;
    l.b = jl["b"].get<Vec>();
    const Vec w = jl["w"].get<Vec>();
    const std::size_t neurons = l.b.size();
    if (neurons == 0 || w.size() != neurons * in_dim)
      throw ParseError("layer weight size does not match shape");
    l.W = Mat(neurons, in_dim);
    l.W.data = w;
    if (jl.contains("a")) {
      const Vec a = jl["a"].get<Vec>();
      if (a.empty() || a.size() % neurons != 0)
        throw ParseError("layer post size does not match shape");
      Mat post(a.size() / neurons, neurons);
      post.data = a;
      l.post = std::move(post);
    }
    in_dim = l.out_dim();
    net.layers.push_back(std::move(l));
  }
  if (j.contains("meta")) {
    const auto& jm = j["meta"];
    if (jm.contains("construction"))
      meta.construction = jm["construction"].get<std::string>();
    if (jm.contains("seed")) meta.seed = jm["seed"].get<std::uint64_t>();
    if (jm.contains("stages"))
      for (const auto& js : jm["stages"])
        meta.stages.push_back({js["name"].get<std::string>(),
                               js["first"].get<std::size_t>(),
                               js["last"].get<std::size_t>()});
  }
  net.validate();
  return {std::move(net), std::move(meta)};
}

inline void save_network(const std::string& path, const Network& net,
                         const NetworkMeta& meta) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << network_to_json(net, meta).dump(2) << "\n";
}

inline std::pair<Network, NetworkMeta> load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseError(std::string("bad json: ") + e.what());
  }
  return network_from_json(j);
}

// Stage snapshot as csv: point_id,label,x1..xk with full double precision.
inline void write_stage_csv(const std::string& path,
                            const std::vector<Vec>& positions,
                            const Vec& labels) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  const std::size_t width = positions.empty() ? 0 : positions.front().size();
  out << "point_id,label";
  for (std::size_t k = 1; k <= width; ++k) out << ",x" << k;
  out << "\n";
  char buf[40];
  for (std::size_t i = 0; i < positions.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", i < labels.size() ? labels[i] : 0.0);
    out << i << "," << buf;
    for (double v : positions[i]) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << "," << buf;
    }
    out << "\n";
  }
}

}  // namespace reluforge
