#pragma once

// Text serialization: matrices as CSV with shortest round-trip decimals,
// layer and optimizer checkpoints as a JSON header next to CSV payloads.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "lte/error.hpp"
#include "lte/layers.hpp"
#include "lte/matrix.hpp"
#include "lte/optim.hpp"

namespace lte {

/// Shortest decimal that parses back to exactly `v`. NaN becomes the empty string.
inline std::string format_double(double v) {
  if (std::isnan(v)) return {};
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw NumericError("format_double: conversion failed");
  return std::string(buf, end);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size())
    throw ContractViolation("parse_double: malformed number '" + std::string(s) + "'");
  return v;
}

inline void write_matrix_csv(std::ostream& os, const Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

inline Matrix read_matrix_csv(std::istream& is) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t count = 0;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      const std::string_view cell(line.data() + start, (comma == std::string::npos ? line.size() : comma) - start);
      values.push_back(parse_double(cell));
      ++count;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (rows == 0) cols = count;
    if (count != cols) {
      throw ContractViolation("read_matrix_csv: row " + std::to_string(rows) + " has " + std::to_string(count) +
                              " entries, expected " + std::to_string(cols));
    }
    ++rows;
  }
  if (rows == 0) return {};
  return Matrix(rows, cols, std::move(values));
}

inline void save_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_matrix_csv(os, m);
}

inline Matrix load_matrix(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_matrix_csv(is);
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
}

inline nlohmann::ordered_json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::ordered_json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.filename().string(), e.what());
  }
}

// Layer checkpoint layout inside `dir`:
//   layer.json        shapes, alpha, r, N
//   W.csv, A<h>.csv, B<h>.csv

inline void save_layer(const std::filesystem::path& dir, const LoraLinear& layer) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json meta;
  meta["out_features"] = layer.out_features();
  meta["in_features"] = layer.in_features();
  meta["rank"] = layer.rank();
  meta["alpha"] = layer.alpha();
  meta["heads"] = layer.num_heads();
  write_json(dir / "layer.json", meta);
  save_matrix(dir / "W.csv", layer.weight());
  for (std::size_t h = 0; h < layer.num_heads(); ++h) {
    save_matrix(dir / ("A" + std::to_string(h) + ".csv"), layer.head(h).A);
    save_matrix(dir / ("B" + std::to_string(h) + ".csv"), layer.head(h).B);
  }
}

inline LoraLinear load_layer(const std::filesystem::path& dir) {
  const auto meta = read_json(dir / "layer.json");
  const auto heads = meta.at("heads").get<std::size_t>();
  LoraLinear layer(load_matrix(dir / "W.csv"), heads, meta.at("rank").get<std::size_t>(),
                   meta.at("alpha").get<double>());
  if (layer.out_features() != meta.at("out_features").get<std::size_t>() ||
      layer.in_features() != meta.at("in_features").get<std::size_t>()) {
    throw ContractViolation("load_layer: W.csv shape disagrees with layer.json");
  }
  for (std::size_t h = 0; h < heads; ++h) {
    layer.set_head(h, {load_matrix(dir / ("A" + std::to_string(h) + ".csv")),
                       load_matrix(dir / ("B" + std::to_string(h) + ".csv"))});
  }
  return layer;
}

inline void save_adam_state(const std::filesystem::path& dir, const std::string& name, const AdamState& st) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json meta;
  meta["step_count"] = st.step_count;
  write_json(dir / (name + ".json"), meta);
  save_matrix(dir / (name + "_m.csv"), st.m);
  save_matrix(dir / (name + "_v.csv"), st.v);
}

inline AdamState load_adam_state(const std::filesystem::path& dir, const std::string& name) {
  AdamState st;
  st.step_count = read_json(dir / (name + ".json")).at("step_count").get<std::size_t>();
  st.m = load_matrix(dir / (name + "_m.csv"));
  st.v = load_matrix(dir / (name + "_v.csv"));
  return st;
}

}  // namespace lte
