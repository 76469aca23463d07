#pragma once

// End-to-end calibration workflow: estimation-set assembly, curve fitting,
// debiasing of probe records, and the raw and Pride baselines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "calibra/core_types.hpp"
#include "calibra/io.hpp"
#include "calibra/isotonic.hpp"
#include "calibra/noa.hpp"
#include "calibra/probe_store.hpp"
#include "calibra/random.hpp"

namespace calibra::pipeline {

using isotonic::CalibrationCurve;

enum class Method { Raw, Pride, CalibraEval };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::Raw: return "raw";
    case Method::Pride: return "pride";
    case Method::CalibraEval: return "calibraeval";
  }
  return "raw";
}

inline Method parse_method(std::string_view text) {
  if (text == "raw") return Method::Raw;
  if (text == "pride") return Method::Pride;
  if (text == "calibraeval") return Method::CalibraEval;
  throw Error(ErrorCode::ParseError, "unknown method '" + std::string(text) + "'");
}

struct EstimationSet {
  std::vector<ObservedTriple> triples;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::size_t source_count = 0;
  TokenPair tokens;
};

/// Groups probes by sample and combination; duplicate observations are rejected.
inline std::map<std::string, std::map<CombinationId, const ProbeRecord*>> index_probes(
    const std::vector<ProbeRecord>& probes) {
  std::map<std::string, std::map<CombinationId, const ProbeRecord*>> by_sample;
  for (const auto& p : probes) {
    auto [it, inserted] = by_sample[p.sample_id].emplace(p.combination, &p);
    if (!inserted) {
      throw Error(ErrorCode::InvalidArgument, "duplicate probe for sample '" + p.sample_id + "' combination " +
                                                  std::string(to_string(p.combination)));
    }
  }
  return by_sample;
}

/// Draws round(fraction * samples) samples without replacement (seeded) and
/// builds their X0/X1/X2 triples, ordered by sample id.
inline EstimationSet assemble_estimation_set(const std::vector<ProbeRecord>& probes, double fraction = 1.0,
                                             std::uint64_t seed = 0) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorCode::InvalidArgument, "fraction must lie in (0,1]");
  const auto by_sample = index_probes(probes);
  if (by_sample.empty()) throw Error(ErrorCode::EmptyEstimationSet, "probe store is empty");

  EstimationSet set;
  set.fraction = fraction;
  set.seed = seed;
  set.source_count = by_sample.size();
  set.tokens = probes.front().token_pair;

  std::vector<std::string> ids;
  ids.reserve(by_sample.size());
  for (const auto& [id, _] : by_sample) ids.push_back(id);
  if (fraction < 1.0) {
    const auto wanted = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size()))));
    SeededRng rng(seed);
    rng.shuffle(ids);
    ids.resize(wanted);
    std::sort(ids.begin(), ids.end());
  }

  std::vector<std::string> missing;
  for (const auto& id : ids) {
    const auto& combos = by_sample.at(id);
    const bool complete = std::all_of(kEstimationCombinations.begin(), kEstimationCombinations.end(),
                                      [&](CombinationId c) { return combos.count(c) > 0; });
    if (!complete) {
      missing.push_back(id);
      continue;
    }
    for (auto c : kEstimationCombinations) {
      if (!(combos.at(c)->token_pair == set.tokens)) {
        throw Error(ErrorCode::InvalidArgument, "probe store mixes option token pairs");
      }
    }
    set.triples.push_back({id, combos.at(CombinationId::X0)->normalized.p_t1,
                           combos.at(CombinationId::X1)->normalized.p_t1,
                           combos.at(CombinationId::X2)->normalized.p_t1});
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw Error(ErrorCode::MissingCombination, "samples lacking one of x0/x1/x2: " + list);
  }
  return set;
}

struct CalibrationResult {
  CalibrationCurve curve;
  noa::FitDiagnostics diagnostics;
};

namespace detail {

inline CalibrationResult fit_curve(const std::vector<ObservedTriple>& triples, const noa::NoaConfig& config,
                                   const std::string& token, double fraction) {
  auto fitted = noa::fit(triples, config);
  isotonic::CurveMeta meta;
  meta.estimation_size = triples.size();
  meta.fraction = fraction;
  meta.diagnostics = noa::to_json(fitted.diagnostics);
  auto curve = isotonic::build_curve(fitted.knots, fitted.params, std::nullopt, token, std::move(meta));
  return {std::move(curve), std::move(fitted.diagnostics)};
}

}  // namespace detail

/// Fits the t1 calibration curve on the estimation set.
inline CalibrationResult calibrate(const EstimationSet& estimation, const noa::NoaConfig& config) {
  if (estimation.triples.empty()) throw Error(ErrorCode::EmptyEstimationSet, "estimation set is empty");
  return detail::fit_curve(estimation.triples, config, estimation.tokens.t1, estimation.fraction);
}

/// Fits an independent t2 curve on the t2 probabilities of the same triples.
inline CalibrationResult calibrate_t2(const EstimationSet& estimation, const noa::NoaConfig& config) {
  if (estimation.triples.empty()) throw Error(ErrorCode::EmptyEstimationSet, "estimation set is empty");
  std::vector<ObservedTriple> mirrored;
  mirrored.reserve(estimation.triples.size());
  for (const auto& t : estimation.triples) mirrored.push_back({t.sample_id, 1.0 - t.s0, 1.0 - t.s1, 1.0 - t.s2});
  return detail::fit_curve(mirrored, config, estimation.tokens.t2, estimation.fraction);
}

struct DebiasedPrediction {
  std::string sample_id;
  CombinationId combination = CombinationId::X0;
  ProbabilityPair raw;
  ProbabilityPair calibrated;
  Verdict verdict;
};

inline DebiasedPrediction make_prediction(const ProbeRecord& probe, double calibrated_t1, bool calibrated) {
  DebiasedPrediction out;
  out.sample_id = probe.sample_id;
  out.combination = probe.combination;
  out.raw = probe.normalized;
  out.calibrated = ProbabilityPair::from_t1(calibrated_t1);
  out.verdict = make_verdict(probe.sample_id, probe.combination, calibrated_t1, calibrated);
  return out;
}

inline DebiasedPrediction apply_raw(const ProbeRecord& probe) {
  return make_prediction(probe, probe.normalized.p_t1, false);
}

/// Debias with the t1 curve. Without a t2 curve the t2 side is the complement;
/// with one, both mapped values are renormalized.
inline DebiasedPrediction apply(const CalibrationCurve& curve, const ProbeRecord& probe,
                                const CalibrationCurve* curve_t2 = nullptr) {
  const double mapped_t1 = curve.evaluate(probe.normalized.p_t1);
  double p = mapped_t1;
  if (curve_t2 != nullptr) {
    const double mapped_t2 = curve_t2->evaluate(probe.normalized.p_t2);
    const double total = mapped_t1 + mapped_t2;
    p = total > 0.0 ? mapped_t1 / total : 0.5;
  }
  return make_prediction(probe, p, true);
}

struct PridePrior {
  double prior_t1 = 0.5;
  double prior_t2 = 0.5;
};

inline constexpr double kPriorFloor = 1e-6;

inline PridePrior pride_prior(std::span<const ObservedTriple> triples) {
  if (triples.empty()) throw Error(ErrorCode::EmptyEstimationSet, "cannot estimate a prior from no triples");
  double total = 0.0;
  for (const auto& t : triples) total += t.s0 + t.s1 + t.s2;
  double mean = total / (3.0 * static_cast<double>(triples.size()));
  if (mean < kPriorFloor || mean > 1.0 - kPriorFloor) {
    warn("Pride prior " + std::to_string(mean) + " is degenerate; clamping");
    mean = std::clamp(mean, kPriorFloor, 1.0 - kPriorFloor);
  }
  return {mean, 1.0 - mean};
}

inline PridePrior pride_prior(const EstimationSet& estimation) { return pride_prior(estimation.triples); }

/// Priors per category, plus the global prior under the empty key for samples
/// without a category.
inline std::map<std::string, PridePrior> pride_priors_by_category(
    const EstimationSet& estimation, const std::map<std::string, std::string>& category_of) {
  std::map<std::string, std::vector<ObservedTriple>> grouped;
  for (const auto& t : estimation.triples) {
    auto it = category_of.find(t.sample_id);
    if (it != category_of.end()) grouped[it->second].push_back(t);
  }
  std::map<std::string, PridePrior> priors;
  priors[""] = pride_prior(estimation);
  for (const auto& [category, triples] : grouped) priors[category] = pride_prior(triples);
  return priors;
}

inline DebiasedPrediction pride_apply(const PridePrior& prior, const ProbeRecord& probe) {
  if (!(prior.prior_t1 > 0.0 && prior.prior_t2 > 0.0)) {
    throw Error(ErrorCode::InvalidPrior, "Pride prior must be strictly inside (0,1)");
  }
  const double a = probe.normalized.p_t1 / prior.prior_t1;
  const double b = probe.normalized.p_t2 / prior.prior_t2;
  return make_prediction(probe, a / (a + b), true);
}

// ---------------------------------------------------------------------------
// Verdict file rows.

struct VerdictRow {
  std::string sample_id;
  CombinationId combination = CombinationId::X0;
  double raw_p_t1 = 0.5;
  double calibrated_p_t1 = 0.5;
  ChosenContent verdict = ChosenContent::Tie;
  Method method = Method::Raw;
};

inline VerdictRow to_row(const DebiasedPrediction& p, Method method) {
  return {p.sample_id, p.combination, p.raw.p_t1, p.calibrated.p_t1, p.verdict.chosen_content, method};
}

inline json to_json(const VerdictRow& r) {
  return json{{"sample_id", r.sample_id},
              {"combination", std::string(to_string(r.combination))},
              {"raw_p_t1", r.raw_p_t1},
              {"calibrated_p_t1", r.calibrated_p_t1},
              {"verdict", std::string(to_string(r.verdict))},
              {"method", std::string(to_string(r.method))}};
}

inline VerdictRow verdict_row_from_json(const json& j) {
  try {
    VerdictRow r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.combination = parse_combination(j.at("combination").get<std::string>());
    r.raw_p_t1 = j.at("raw_p_t1").get<double>();
    r.calibrated_p_t1 = j.at("calibrated_p_t1").get<double>();
    r.verdict = parse_chosen_content(j.at("verdict").get<std::string>());
    r.method = parse_method(j.at("method").get<std::string>());
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed verdict row: ") + e.what());
  }
}

inline Verdict to_verdict(const VerdictRow& r) {
  Verdict v;
  v.sample_id = r.sample_id;
  v.combination = r.combination;
  v.chosen_content = r.verdict;
  v.p_chosen = r.verdict == ChosenContent::Tie ? 0.5 : std::max(r.calibrated_p_t1, 1.0 - r.calibrated_p_t1);
  v.calibrated = r.method != Method::Raw;
  return v;
}

inline void save_verdicts(const std::string& path, const std::vector<VerdictRow>& rows) {
  std::vector<json> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(to_json(r));
  io::write_jsonl(path, out);
}

inline std::vector<VerdictRow> load_verdicts(const std::string& path) {
  std::vector<VerdictRow> out;
  for (const auto& row : io::read_jsonl(path)) out.push_back(verdict_row_from_json(row));
  return out;
}

}  // namespace calibra::pipeline
