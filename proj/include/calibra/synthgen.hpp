#pragma once

// Synthetic biased-judge datasets with known ground truth.
//
// Each sample gets a ground-truth probability q that content o1 wins. Under a
// combination the unbiased t1 probability is q when t1 labels o1 and 1 - q
// otherwise; the judge's token prior on t1 is then composed in, and optional
// logit noise is added. Position plays no role, so the only systematic
// inconsistency is the injected token bias.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "calibra/core_types.hpp"
#include "calibra/io.hpp"
#include "calibra/probe_store.hpp"
#include "calibra/random.hpp"

namespace calibra::synth {

enum class BiasKind { Multiplicative, LogitAdditive };

inline std::string_view to_string(BiasKind kind) {
  return kind == BiasKind::Multiplicative ? "multiplicative" : "logit-additive";
}

inline BiasKind parse_bias_kind(std::string_view text) {
  if (text == "multiplicative") return BiasKind::Multiplicative;
  if (text == "logit-additive") return BiasKind::LogitAdditive;
  throw Error(ErrorCode::ParseError, "unknown bias model '" + std::string(text) + "'");
}

struct BiasModel {
  BiasKind kind = BiasKind::Multiplicative;
  double prior_t1 = 0.5;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

struct SyntheticTruth {
  std::string sample_id;
  double debiased_p_o1 = 0.5;
  GoldLabel gold_label = GoldLabel::Tie;
};

struct SyntheticDataset {
  std::vector<PairwiseSample> samples;
  std::vector<ProbeRecord> probes;
  std::vector<SyntheticTruth> truths;
};

inline constexpr double kTruthLow = 0.05;
inline constexpr double kTruthHigh = 0.95;

inline double logit(double p) { return std::log(p) - std::log1p(-p); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Observed t1 probability given the unbiased t1 probability, before noise.
inline double compose(BiasKind kind, double prior_t1, double debiased_t1) {
  switch (kind) {
    case BiasKind::Multiplicative: {
      const double a = prior_t1 * debiased_t1;
      const double b = (1.0 - prior_t1) * (1.0 - debiased_t1);
      return a / (a + b);
    }
    case BiasKind::LogitAdditive:
      return sigmoid(logit(prior_t1) + logit(debiased_t1));
  }
  return debiased_t1;
}

inline std::string synthetic_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth-%05zu", index);
  return buf;
}

inline SyntheticDataset generate(std::size_t n, const BiasModel& bias, bool include_x3 = false) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "n must be at least 1");
  if (!(bias.prior_t1 > 0.0 && bias.prior_t1 < 1.0)) {
    throw Error(ErrorCode::InvalidPrior, "prior_t1 must lie strictly inside (0,1)");
  }
  if (!(bias.noise_sigma >= 0.0) || !std::isfinite(bias.noise_sigma)) {
    throw Error(ErrorCode::InvalidArgument, "noise sigma must be non-negative");
  }

  SyntheticDataset data;
  SeededRng rng(bias.seed);
  const TokenPair tokens("A", "B");
  const std::string model_name = "synthetic-" + std::string(to_string(bias.kind));
  std::vector<CombinationId> combinations(kEstimationCombinations.begin(), kEstimationCombinations.end());
  if (include_x3) combinations.push_back(CombinationId::X3);

  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = synthetic_id(i);
    const double q = rng.uniform(kTruthLow, kTruthHigh);

    PairwiseSample sample;
    sample.id = id;
    sample.instruction = "Synthetic instruction " + std::to_string(i);
    sample.content_1 = "Synthetic response " + std::to_string(i) + "a";
    sample.content_2 = "Synthetic response " + std::to_string(i) + "b";
    sample.gold_label = q > 0.5 ? GoldLabel::First : (q < 0.5 ? GoldLabel::Second : GoldLabel::Tie);
    data.samples.push_back(sample);
    data.truths.push_back({id, q, *sample.gold_label});

    for (auto combination : combinations) {
      const double debiased_t1 = token_to_content(combination, TokenIndex::T1) == Content::O1 ? q : 1.0 - q;
      double observed = compose(bias.kind, bias.prior_t1, debiased_t1);
      if (bias.noise_sigma > 0.0) observed = sigmoid(logit(observed) + bias.noise_sigma * rng.normal());

      ProbeRecord r;
      r.sample_id = id;
      r.combination = combination;
      r.template_name = "synthetic";
      r.token_pair = tokens;
      r.logprob_t1 = std::log(observed);
      r.logprob_t2 = std::log1p(-observed);
      r.normalized = ProbabilityPair::from_t1(observed);
      r.model_name = model_name;
      r.cache_key = id + "/" + std::string(to_string(combination));
      data.probes.push_back(std::move(r));
    }
  }
  return data;
}

inline json to_json(const SyntheticTruth& t) {
  return json{{"sample_id", t.sample_id},
              {"debiased_p_o1", t.debiased_p_o1},
              {"gold_label", std::string(to_string(t.gold_label))}};
}

inline SyntheticTruth truth_from_json(const json& j) {
  try {
    return {j.at("sample_id").get<std::string>(), j.at("debiased_p_o1").get<double>(),
            parse_gold_label(j.at("gold_label").get<std::string>())};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed truth record: ") + e.what());
  }
}

inline void save_truths(const std::string& path, const std::vector<SyntheticTruth>& truths) {
  std::vector<json> rows;
  for (const auto& t : truths) rows.push_back(to_json(t));
  io::write_jsonl(path, rows);
}

inline std::vector<SyntheticTruth> load_truths(const std::string& path) {
  std::vector<SyntheticTruth> out;
  for (const auto& row : io::read_jsonl(path)) out.push_back(truth_from_json(row));
  return out;
}

}  // namespace calibra::synth
