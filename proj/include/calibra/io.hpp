#pragma once

// JSON/JSONL file helpers and the dataset ingestion format.

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibra/core_types.hpp"

namespace calibra {

using json = nlohmann::json;

namespace io {

inline std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::vector<json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

inline void write_jsonl(const std::string& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  for (const auto& row : rows) out << row.dump() << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

inline void write_json(const std::string& path, const json& value) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  out << value.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  out << text;
}

}  // namespace io

inline json to_json(const PairwiseSample& s) {
  json j;
  j["id"] = s.id;
  j["instruction"] = s.instruction;
  j["content_1"] = s.content_1;
  j["content_2"] = s.content_2;
  j["gold_label"] = s.gold_label ? json(std::string(to_string(*s.gold_label))) : json(nullptr);
  j["category"] = s.category ? json(*s.category) : json(nullptr);
  return j;
}

inline PairwiseSample sample_from_json(const json& j) {
  PairwiseSample s;
  try {
    s.id = j.at("id").get<std::string>();
    s.instruction = j.at("instruction").get<std::string>();
    s.content_1 = j.at("content_1").get<std::string>();
    s.content_2 = j.at("content_2").get<std::string>();
    if (j.contains("gold_label") && !j["gold_label"].is_null()) {
      s.gold_label = parse_gold_label(j["gold_label"].get<std::string>());
    }
    if (j.contains("category") && !j["category"].is_null()) s.category = j["category"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed sample: ") + e.what());
  }
  s.validate();
  return s;
}

inline std::vector<PairwiseSample> load_samples(const std::string& path) {
  std::vector<PairwiseSample> samples;
  std::unordered_set<std::string> seen;
  for (const auto& row : io::read_jsonl(path)) {
    auto s = sample_from_json(row);
    if (!seen.insert(s.id).second) throw Error(ErrorCode::InvalidArgument, "duplicate sample id '" + s.id + "'");
    samples.push_back(std::move(s));
  }
  return samples;
}

inline void save_samples(const std::string& path, const std::vector<PairwiseSample>& samples) {
  std::vector<json> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(to_json(s));
  io::write_jsonl(path, rows);
}

}  // namespace calibra
