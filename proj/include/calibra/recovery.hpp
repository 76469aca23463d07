#pragma once

// How well a set of debiased predictions recovers the synthetic ground truth.

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "calibra/pipeline.hpp"
#include "calibra/synthgen.hpp"

namespace calibra::synth {

struct RecoveryReport {
  /// Mean |p(o1) - truth| over all predictions.
  double mean_abs_error = 0.0;
  /// Fraction of predictions whose verdict matches the gold label.
  double gold_agreement = 0.0;
  /// Fraction of samples with one verdict across all their combinations.
  double consistency_rate = 0.0;
  std::size_t n_samples = 0;
};

/// Calibrated probability that content o1 wins.
inline double content_probability(const pipeline::DebiasedPrediction& p) {
  return token_to_content(p.combination, TokenIndex::T1) == Content::O1 ? p.calibrated.p_t1 : p.calibrated.p_t2;
}

inline RecoveryReport score_recovery(const std::vector<SyntheticTruth>& truths,
                                     const std::vector<pipeline::DebiasedPrediction>& predictions) {
  std::map<std::string, const SyntheticTruth*> by_id;
  for (const auto& t : truths) by_id[t.sample_id] = &t;
  std::map<std::string, std::set<ChosenContent>> verdicts;
  for (const auto& p : predictions) {
    if (!by_id.count(p.sample_id)) throw Error(ErrorCode::IdMismatch, "prediction for unknown sample '" + p.sample_id + "'");
    verdicts[p.sample_id].insert(p.verdict.chosen_content);
  }
  for (const auto& [id, _] : by_id) {
    if (!verdicts.count(id)) throw Error(ErrorCode::IdMismatch, "no prediction for sample '" + id + "'");
  }
  if (predictions.empty()) throw Error(ErrorCode::IdMismatch, "no predictions");

  RecoveryReport out;
  double abs_error = 0.0;
  double agree = 0.0;
  for (const auto& p : predictions) {
    const auto& truth = *by_id.at(p.sample_id);
    abs_error += std::abs(content_probability(p) - truth.debiased_p_o1);
    if (matches_gold(p.verdict.chosen_content, truth.gold_label)) agree += 1.0;
  }
  double consistent = 0.0;
  for (const auto& [id, set] : verdicts) consistent += set.size() == 1 ? 1.0 : 0.0;
  out.n_samples = verdicts.size();
  out.mean_abs_error = abs_error / static_cast<double>(predictions.size());
  out.gold_agreement = agree / static_cast<double>(predictions.size());
  out.consistency_rate = consistent / static_cast<double>(verdicts.size());
  return out;
}

}  // namespace calibra::synth
