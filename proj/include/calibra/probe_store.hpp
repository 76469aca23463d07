#pragma once

// One judge observation per (sample, combination) and the JSONL probe store.

#include <algorithm>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <vector>

#include "calibra/core_types.hpp"
#include "calibra/io.hpp"

namespace calibra {

struct ProbeRecord {
  std::string sample_id;
  CombinationId combination = CombinationId::X0;
  std::string template_name;
  TokenPair token_pair;
  /// As returned by the judge; only kept in memory.
  std::map<std::string, double> raw_logprobs;
  double logprob_t1 = 0.0;
  double logprob_t2 = 0.0;
  ProbabilityPair normalized;
  std::string model_name;
  bool floored = false;
  std::string timestamp;
  std::string cache_key;
};

inline bool probe_order(const ProbeRecord& a, const ProbeRecord& b) {
  return std::tie(a.sample_id, a.combination) < std::tie(b.sample_id, b.combination);
}

inline json to_json(const ProbeRecord& r) {
  return json{{"sample_id", r.sample_id},
              {"combination", std::string(to_string(r.combination))},
              {"template", r.template_name},
              {"t1", r.token_pair.t1},
              {"t2", r.token_pair.t2},
              {"logprob_t1", r.logprob_t1},
              {"logprob_t2", r.logprob_t2},
              {"p_t1", r.normalized.p_t1},
              {"model", r.model_name},
              {"floored", r.floored},
              {"cache_key", r.cache_key}};
}

inline ProbeRecord probe_from_json(const json& j) {
  ProbeRecord r;
  try {
    r.sample_id = j.at("sample_id").get<std::string>();
    r.combination = parse_combination(j.at("combination").get<std::string>());
    r.template_name = j.at("template").get<std::string>();
    r.token_pair = TokenPair(j.at("t1").get<std::string>(), j.at("t2").get<std::string>());
    r.logprob_t1 = j.at("logprob_t1").get<double>();
    r.logprob_t2 = j.at("logprob_t2").get<double>();
    const double p = j.at("p_t1").get<double>();
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::ParseError, "p_t1 outside [0,1] for '" + r.sample_id + "'");
    r.normalized = ProbabilityPair::from_t1(p);
    r.model_name = j.at("model").get<std::string>();
    r.floored = j.at("floored").get<bool>();
    r.cache_key = j.at("cache_key").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed probe record: ") + e.what());
  }
  return r;
}

/// Probe records keyed by cache key. Concurrent lookups, exclusive inserts.
class ProbeStore {
 public:
  ProbeStore() = default;
  explicit ProbeStore(std::vector<ProbeRecord> records) {
    for (auto& r : records) insert(std::move(r));
  }

  std::optional<ProbeRecord> find(const std::string& cache_key) const {
    std::shared_lock lock(mutex_);
    auto it = by_key_.find(cache_key);
    if (it == by_key_.end()) return std::nullopt;
    return it->second;
  }

  void insert(ProbeRecord record) {
    std::unique_lock lock(mutex_);
    const auto key = record.cache_key;
    by_key_.insert_or_assign(key, std::move(record));
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return by_key_.size();
  }

  /// Snapshot ordered by (sample_id, combination), ties broken by cache key.
  std::vector<ProbeRecord> records() const {
    std::shared_lock lock(mutex_);
    std::vector<ProbeRecord> out;
    out.reserve(by_key_.size());
    for (const auto& [key, r] : by_key_) out.push_back(r);
    std::stable_sort(out.begin(), out.end(), probe_order);
    return out;
  }

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, ProbeRecord> by_key_;
};

inline std::vector<ProbeRecord> load_probes(const std::string& path) {
  std::vector<ProbeRecord> out;
  for (const auto& row : io::read_jsonl(path)) out.push_back(probe_from_json(row));
  return out;
}

inline void save_probes(const std::string& path, std::vector<ProbeRecord> records) {
  std::stable_sort(records.begin(), records.end(), probe_order);
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(to_json(r));
  io::write_jsonl(path, rows);
}

}  // namespace calibra
