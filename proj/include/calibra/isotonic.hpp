#pragma once

// Weighted isotonic regression (pool adjacent violators) and the continuous,
// piecewise-linear calibration curve built from the optimized discrete map.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibra/core_types.hpp"
#include "calibra/noa.hpp"

namespace calibra::isotonic {

struct IsotonicProblem {
  std::vector<double> x;
  std::vector<double> targets;
  std::vector<double> weights;
};

/// Non-decreasing sequence minimizing sum w_i (target_i - out_i)^2.
inline std::vector<double> pava(std::span<const double> targets, std::span<const double> weights) {
  if (targets.size() != weights.size()) throw Error(ErrorCode::LengthMismatch, "targets and weights differ in length");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!std::isfinite(targets[i]) || !std::isfinite(weights[i])) {
      throw Error(ErrorCode::InvalidArgument, "isotonic inputs must be finite");
    }
    if (weights[i] < 0.0) throw Error(ErrorCode::InvalidArgument, "isotonic weights must be non-negative");
  }

  struct Block {
    double value;
    double weight;
    std::size_t count;
  };
  std::vector<Block> blocks;
  blocks.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    blocks.push_back({targets[i], weights[i], 1});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].value > blocks.back().value) {
      Block top = blocks.back();
      blocks.pop_back();
      Block& prev = blocks.back();
      const double w = prev.weight + top.weight;
      // Zero-weight blocks carry no information; pool them by plain average.
      prev.value = w > 0.0 ? (prev.value * prev.weight + top.value * top.weight) / w
                           : (prev.value * static_cast<double>(prev.count) + top.value * static_cast<double>(top.count)) /
                                 static_cast<double>(prev.count + top.count);
      prev.weight = w;
      prev.count += top.count;
    }
  }

  std::vector<double> out;
  out.reserve(targets.size());
  for (const auto& b : blocks) out.insert(out.end(), b.count, b.value);
  return out;
}

inline std::vector<double> pava(const IsotonicProblem& problem) {
  if (problem.x.size() != problem.targets.size()) {
    throw Error(ErrorCode::LengthMismatch, "x and targets differ in length");
  }
  return pava(problem.targets, problem.weights);
}

struct CurveMeta {
  std::size_t estimation_size = 0;
  double fraction = 1.0;
  std::optional<nlohmann::json> diagnostics;
};

/// Monotone piecewise-linear map over [0, 1] for one option token.
class CalibrationCurve {
 public:
  CalibrationCurve() = default;
  CalibrationCurve(std::vector<double> knot_x, std::vector<double> knot_y, std::string token, CurveMeta meta = {})
      : knot_x_(std::move(knot_x)), knot_y_(std::move(knot_y)), token_(std::move(token)), meta_(std::move(meta)) {
    validate();
  }

  const std::vector<double>& knot_x() const { return knot_x_; }
  const std::vector<double>& knot_y() const { return knot_y_; }
  const std::string& token() const { return token_; }
  const CurveMeta& meta() const { return meta_; }

  double evaluate(double p) const {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::OutOfDomain, "probability " + std::to_string(p) + " outside [0,1]");
    auto it = std::lower_bound(knot_x_.begin(), knot_x_.end(), p);
    const auto hi = static_cast<std::size_t>(it - knot_x_.begin());
    if (knot_x_[hi] == p) return knot_y_[hi];
    const std::size_t lo = hi - 1;
    const double t = (p - knot_x_[lo]) / (knot_x_[hi] - knot_x_[lo]);
    const double y = knot_y_[lo] + t * (knot_y_[hi] - knot_y_[lo]);
    return std::clamp(y, knot_y_[lo], knot_y_[hi]);
  }

  double operator()(double p) const { return evaluate(p); }

 private:
  void validate() const {
    if (knot_x_.size() != knot_y_.size()) throw Error(ErrorCode::LengthMismatch, "curve knot arrays differ in length");
    if (knot_x_.size() < 2) throw Error(ErrorCode::InvalidArgument, "curve needs at least two knots");
    if (knot_x_.front() != 0.0 || knot_x_.back() != 1.0) {
      throw Error(ErrorCode::InvalidArgument, "curve knots must start at 0 and end at 1");
    }
    for (std::size_t i = 0; i < knot_x_.size(); ++i) {
      if (i > 0 && !(knot_x_[i] > knot_x_[i - 1])) {
        throw Error(ErrorCode::InvalidArgument, "curve knot_x must be strictly increasing");
      }
      if (i > 0 && knot_y_[i] < knot_y_[i - 1]) throw Error(ErrorCode::InvalidArgument, "curve knot_y must be non-decreasing");
      if (!(knot_y_[i] >= 0.0 && knot_y_[i] <= 1.0)) throw Error(ErrorCode::InvalidArgument, "curve knot_y outside [0,1]");
    }
  }

  std::vector<double> knot_x_;
  std::vector<double> knot_y_;
  std::string token_;
  CurveMeta meta_;
};

/// Evaluates the discrete map at every knot and fits the monotone curve through
/// it. Uniform weights when none are given; supplied weights are renormalized
/// to sum to 1.
inline CalibrationCurve build_curve(const noa::KnotSequence& knots, const noa::NoaParameters& params,
                                    std::optional<std::vector<double>> weights = std::nullopt,
                                    std::string token = "A", CurveMeta meta = {}) {
  IsotonicProblem problem;
  problem.x = knots.values();
  problem.targets = noa::discrete_map_all(knots, params);
  const std::size_t n = problem.x.size();
  if (weights) {
    if (weights->size() != n) throw Error(ErrorCode::LengthMismatch, "weights must align with knots");
    const double total = std::accumulate(weights->begin(), weights->end(), 0.0);
    if (!(total > 0.0)) throw Error(ErrorCode::InvalidArgument, "weights must have a positive sum");
    if (std::abs(total - 1.0) > 1e-9) {
      warn("isotonic weights sum to " + std::to_string(total) + "; renormalizing to 1");
    }
    problem.weights = *weights;
    for (auto& w : problem.weights) w /= total;
  } else {
    problem.weights.assign(n, 1.0 / static_cast<double>(n));
  }
  auto fitted = pava(problem);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(fitted[i] - problem.targets[i]) > 1e-12) {
      warn("isotonic pass modified the discrete map at knot " + std::to_string(i));
      break;
    }
  }
  return CalibrationCurve(std::move(problem.x), std::move(fitted), std::move(token), std::move(meta));
}

// Floats are written in the shortest form that parses back to the same double.
inline nlohmann::json to_json(const CalibrationCurve& curve) {
  nlohmann::json meta{{"estimation_size", curve.meta().estimation_size}, {"fraction", curve.meta().fraction}};
  if (curve.meta().diagnostics) meta["diagnostics"] = *curve.meta().diagnostics;
  return nlohmann::json{{"token", curve.token()}, {"knot_x", curve.knot_x()}, {"knot_y", curve.knot_y()}, {"meta", meta}};
}

inline CalibrationCurve curve_from_json(const nlohmann::json& j) {
  try {
    CurveMeta meta;
    if (j.contains("meta") && j["meta"].is_object()) {
      const auto& m = j["meta"];
      meta.estimation_size = m.value("estimation_size", std::size_t{0});
      meta.fraction = m.value("fraction", 1.0);
      if (m.contains("diagnostics")) meta.diagnostics = m["diagnostics"];
    }
    return CalibrationCurve(j.at("knot_x").get<std::vector<double>>(), j.at("knot_y").get<std::vector<double>>(),
                            j.at("token").get<std::string>(), std::move(meta));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed curve: ") + e.what());
  }
}

}  // namespace calibra::isotonic
