#pragma once

// Shared data model: samples, option tokens, the four token/position
// combinations, two-way probability pairs and verdicts.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "calibra/error.hpp"

namespace calibra {

enum class GoldLabel { First, Second, Tie };
enum class Content { O1, O2 };
enum class ChosenContent { O1, O2, Tie };
enum class TokenIndex { T1, T2 };

/// X0 = [(t1,o1);(t2,o2)]   X1 = [(t2,o2);(t1,o1)]
/// X2 = [(t1,o2);(t2,o1)]   X3 = [(t2,o1);(t1,o2)]
enum class CombinationId : std::uint8_t { X0 = 0, X1 = 1, X2 = 2, X3 = 3 };

inline constexpr std::array<CombinationId, 3> kEstimationCombinations = {
    CombinationId::X0, CombinationId::X1, CombinationId::X2};
inline constexpr std::array<CombinationId, 4> kAllCombinations = {
    CombinationId::X0, CombinationId::X1, CombinationId::X2, CombinationId::X3};

struct PairwiseSample {
  std::string id;
  std::string instruction;
  std::string content_1;
  std::string content_2;
  std::optional<GoldLabel> gold_label;
  std::optional<std::string> category;

  void validate() const {
    if (id.empty()) throw Error(ErrorCode::InvalidArgument, "sample id is empty");
    if (content_1.empty() || content_2.empty()) {
      throw Error(ErrorCode::InvalidArgument, "sample '" + id + "' has an empty content");
    }
  }
};

struct TokenPair {
  std::string t1 = "A";
  std::string t2 = "B";

  TokenPair() = default;
  TokenPair(std::string first, std::string second) : t1(std::move(first)), t2(std::move(second)) {
    if (t1.empty() || t2.empty()) throw Error(ErrorCode::InvalidArgument, "option tokens must be non-empty");
    if (t1 == t2) throw Error(ErrorCode::InvalidArgument, "option tokens must differ: '" + t1 + "'");
  }

  const std::string& operator[](TokenIndex index) const { return index == TokenIndex::T1 ? t1 : t2; }
  friend bool operator==(const TokenPair&, const TokenPair&) = default;
};

/// Two-way normalized probability over the option tokens.
struct ProbabilityPair {
  double p_t1 = 0.5;
  double p_t2 = 0.5;

  static ProbabilityPair from_t1(double p) { return {p, 1.0 - p}; }
  friend bool operator==(const ProbabilityPair&, const ProbabilityPair&) = default;
};

/// Normalized t1 probabilities under X0, X1 and X2 for one sample.
struct ObservedTriple {
  std::string sample_id;
  double s0 = 0.0;
  double s1 = 0.0;
  double s2 = 0.0;

  double operator[](std::size_t j) const { return j == 0 ? s0 : (j == 1 ? s1 : s2); }
};

struct Verdict {
  std::string sample_id;
  CombinationId combination = CombinationId::X0;
  ChosenContent chosen_content = ChosenContent::Tie;
  double p_chosen = 0.5;
  bool calibrated = false;
};

/// The content that `token` labels under `combination`.
constexpr Content token_to_content(CombinationId combination, TokenIndex token) {
  const bool t1_labels_o1 = combination == CombinationId::X0 || combination == CombinationId::X1;
  const bool is_t1 = token == TokenIndex::T1;
  return (t1_labels_o1 == is_t1) ? Content::O1 : Content::O2;
}

/// Content shown in the first prompt slot.
constexpr Content first_position_content(CombinationId combination) {
  return (combination == CombinationId::X0 || combination == CombinationId::X3) ? Content::O1 : Content::O2;
}

/// Token used as the label of the first prompt slot.
constexpr TokenIndex first_position_token(CombinationId combination) {
  return (combination == CombinationId::X0 || combination == CombinationId::X2) ? TokenIndex::T1
                                                                              : TokenIndex::T2;
}

inline ProbabilityPair normalize_pair(double raw_t1, double raw_t2) {
  if (!std::isfinite(raw_t1) || !std::isfinite(raw_t2) || raw_t1 < 0.0 || raw_t2 < 0.0) {
    throw Error(ErrorCode::DegenerateInput, "raw option probabilities must be finite and non-negative");
  }
  const double total = raw_t1 + raw_t2;
  if (total <= 0.0) throw Error(ErrorCode::DegenerateInput, "both raw option probabilities are zero");
  const double p = raw_t1 / total;
  return {p, 1.0 - p};
}

/// Two-way softmax over a pair of log-probabilities.
inline ProbabilityPair normalize_logprobs(double logprob_t1, double logprob_t2) {
  if (std::isnan(logprob_t1) || std::isnan(logprob_t2) ||
      (std::isinf(logprob_t1) && std::isinf(logprob_t2))) {
    throw Error(ErrorCode::DegenerateInput, "log-probabilities are not usable");
  }
  const double p = 1.0 / (1.0 + std::exp(logprob_t2 - logprob_t1));
  return {p, 1.0 - p};
}

/// Verdict from a (possibly calibrated) t1 probability; exactly 0.5 is a tie.
inline Verdict make_verdict(std::string sample_id, CombinationId combination, double p_t1, bool calibrated) {
  Verdict v;
  v.sample_id = std::move(sample_id);
  v.combination = combination;
  v.calibrated = calibrated;
  if (p_t1 > 0.5) {
    v.chosen_content = token_to_content(combination, TokenIndex::T1) == Content::O1 ? ChosenContent::O1
                                                                                   : ChosenContent::O2;
    v.p_chosen = p_t1;
  } else if (p_t1 < 0.5) {
    v.chosen_content = token_to_content(combination, TokenIndex::T2) == Content::O1 ? ChosenContent::O1
                                                                                   : ChosenContent::O2;
    v.p_chosen = 1.0 - p_t1;
  } else {
    v.chosen_content = ChosenContent::Tie;
    v.p_chosen = 0.5;
  }
  return v;
}

/// Whether a content verdict picks the gold content; ties never match.
constexpr bool matches_gold(ChosenContent chosen, GoldLabel gold) {
  return (gold == GoldLabel::First && chosen == ChosenContent::O1) ||
         (gold == GoldLabel::Second && chosen == ChosenContent::O2);
}

// ---------------------------------------------------------------------------
// String forms used by the file formats.

inline std::string_view to_string(CombinationId c) {
  static constexpr std::array<std::string_view, 4> names = {"x0", "x1", "x2", "x3"};
  return names[static_cast<std::size_t>(c)];
}

inline CombinationId parse_combination(std::string_view text) {
  if (text == "x0" || text == "X0") return CombinationId::X0;
  if (text == "x1" || text == "X1") return CombinationId::X1;
  if (text == "x2" || text == "X2") return CombinationId::X2;
  if (text == "x3" || text == "X3") return CombinationId::X3;
  throw Error(ErrorCode::ParseError, "unknown combination '" + std::string(text) + "'");
}

inline std::string_view to_string(GoldLabel g) {
  switch (g) {
    case GoldLabel::First: return "first";
    case GoldLabel::Second: return "second";
    case GoldLabel::Tie: return "tie";
  }
  return "tie";
}

inline GoldLabel parse_gold_label(std::string_view text) {
  if (text == "first") return GoldLabel::First;
  if (text == "second") return GoldLabel::Second;
  if (text == "tie") return GoldLabel::Tie;
  throw Error(ErrorCode::ParseError, "unknown gold label '" + std::string(text) + "'");
}

inline std::string_view to_string(ChosenContent c) {
  switch (c) {
    case ChosenContent::O1: return "o1";
    case ChosenContent::O2: return "o2";
    case ChosenContent::Tie: return "tie";
  }
  return "tie";
}

inline ChosenContent parse_chosen_content(std::string_view text) {
  if (text == "o1") return ChosenContent::O1;
  if (text == "o2") return ChosenContent::O2;
  if (text == "tie") return ChosenContent::Tie;
  throw Error(ErrorCode::ParseError, "unknown verdict '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Warnings go through a replaceable sink so tests can capture them.

using WarningSink = std::function<void(std::string_view)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](std::string_view message) { std::cerr << "warning: " << message << '\n'; };
  return sink;
}

inline void warn(std::string_view message) {
  if (warning_sink()) warning_sink()(message);
}

}  // namespace calibra
