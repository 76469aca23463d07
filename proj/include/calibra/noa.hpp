#pragma once

// Non-parametric order-preserving calibration optimizer.
//
// The calibration map is defined only at the knots (the sorted distinct
// observed probabilities plus the boundaries 0 and 1) and parameterized by a
// cumulative softmax:
//
//   g(z_k) = sum_{i<=k} exp(d_i) / sum_{i<=M} exp(d_i)
//
// which is strictly increasing in k for any d. The parameters are fitted by
// batched gradient descent on the label-free consistency loss over triples
// (s0, s1, s2) observed under X0, X1 and X2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibra/core_types.hpp"
#include "calibra/random.hpp"

namespace calibra::noa {

enum class Objective { Full, SwapTokensOnly, SwapPositionsOnly };
enum class Normalization { PerBatch, PerEpoch };
enum class StopReason { Epsilon, MaxIterations };

inline std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::Full: return "full";
    case Objective::SwapTokensOnly: return "swap-tokens";
    case Objective::SwapPositionsOnly: return "swap-positions";
  }
  return "full";
}

inline Objective parse_objective(std::string_view text) {
  if (text == "full") return Objective::Full;
  if (text == "swap-tokens") return Objective::SwapTokensOnly;
  if (text == "swap-positions") return Objective::SwapPositionsOnly;
  throw Error(ErrorCode::ParseError, "unknown objective '" + std::string(text) + "'");
}

inline std::string_view to_string(StopReason r) {
  return r == StopReason::Epsilon ? "epsilon" : "max_iterations";
}

struct NoaConfig {
  double lambda = 0.5;
  double learning_rate = 10.0;
  std::size_t batch_size = 32;
  double epsilon = 0.001;
  std::size_t max_iterations = 10000;
  Objective objective = Objective::Full;
  Normalization normalization = Normalization::PerBatch;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::InvalidArgument, "lambda must be >= 0");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw Error(ErrorCode::InvalidArgument, "learning rate must be > 0");
    }
    if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be positive");
    if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be > 0");
    if (max_iterations == 0) throw Error(ErrorCode::InvalidArgument, "max_iterations must be positive");
  }
};

/// Sorted distinct knot values z_0 = 0 < ... < z_M = 1.
class KnotSequence {
 public:
  using SlotKey = std::pair<std::string, int>;

  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  /// Index of the last knot.
  std::size_t M() const { return values_.size() - 1; }
  std::size_t interior_count() const { return values_.size() - 2; }
  const std::map<SlotKey, std::size_t>& sample_index_map() const { return slots_; }

  /// Exact-match lookup of a registered value.
  std::optional<std::size_t> index_of(double value) const {
    auto it = std::lower_bound(values_.begin(), values_.end(), value);
    if (it == values_.end() || *it != value) return std::nullopt;
    return static_cast<std::size_t>(it - values_.begin());
  }

  std::size_t require_index(double value) const {
    auto idx = index_of(value);
    if (!idx) throw Error(ErrorCode::UnregisteredValue, "value " + std::to_string(value) + " is not a knot");
    return *idx;
  }

  friend KnotSequence build_knots(std::span<const ObservedTriple> triples);

 private:
  std::vector<double> values_;
  std::map<SlotKey, std::size_t> slots_;
};

inline KnotSequence build_knots(std::span<const ObservedTriple> triples) {
  if (triples.empty()) throw Error(ErrorCode::EmptyEstimationSet, "no triples to build knots from");
  KnotSequence knots;
  knots.values_.reserve(3 * triples.size() + 2);
  knots.values_.push_back(0.0);
  knots.values_.push_back(1.0);
  for (const auto& t : triples) {
    for (std::size_t j = 0; j < 3; ++j) {
      const double s = t[j];
      if (!(s >= 0.0 && s <= 1.0)) {
        throw Error(ErrorCode::OutOfDomain, "observed value for '" + t.sample_id + "' outside [0,1]");
      }
      knots.values_.push_back(s);
    }
  }
  std::sort(knots.values_.begin(), knots.values_.end());
  knots.values_.erase(std::unique(knots.values_.begin(), knots.values_.end()), knots.values_.end());
  for (const auto& t : triples) {
    for (int j = 0; j < 3; ++j) knots.slots_[{t.sample_id, j}] = knots.require_index(t[static_cast<std::size_t>(j)]);
  }
  return knots;
}

struct NoaParameters {
  std::vector<double> d;

  /// Initialization d_k = z_k.
  static NoaParameters from_knots(const KnotSequence& knots) { return {knots.values()}; }

  double sum() const { return std::accumulate(d.begin(), d.end(), 0.0); }

  void center() {
    const double mean = sum() / static_cast<double>(d.size());
    for (auto& v : d) v -= mean;
  }
};

/// Normalized softmax weights p_i = exp(d_i) / sum exp(d) and their running sums g_k.
struct MapState {
  std::vector<double> weights;
  std::vector<double> cumulative;
};

inline MapState evaluate_map(std::span<const double> d) {
  MapState state;
  const std::size_t n = d.size();
  state.weights.resize(n);
  state.cumulative.resize(n);
  const double peak = *std::max_element(d.begin(), d.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    state.weights[i] = std::exp(d[i] - peak);
    total += state.weights[i];
  }
  double running = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    state.weights[i] /= total;
    running += state.weights[i];
    state.cumulative[i] = running;
  }
  // The last cumulative value is 1 by definition; pin it against rounding.
  state.cumulative[n - 1] = 1.0;
  return state;
}

inline double discrete_map(const KnotSequence& knots, const NoaParameters& params, std::size_t k) {
  if (params.d.size() != knots.size()) throw Error(ErrorCode::LengthMismatch, "parameter/knot size mismatch");
  if (k >= knots.size()) throw Error(ErrorCode::OutOfDomain, "knot index out of range");
  return evaluate_map(params.d).cumulative[k];
}

inline std::vector<double> discrete_map_all(const KnotSequence& knots, const NoaParameters& params) {
  if (params.d.size() != knots.size()) throw Error(ErrorCode::LengthMismatch, "parameter/knot size mismatch");
  return evaluate_map(params.d).cumulative;
}

namespace detail {

struct TripleIndex {
  std::size_t i0, i1, i2;
};

inline std::vector<TripleIndex> index_batch(std::span<const ObservedTriple> batch, const KnotSequence& knots) {
  std::vector<TripleIndex> out;
  out.reserve(batch.size());
  for (const auto& t : batch) {
    out.push_back({knots.require_index(t.s0), knots.require_index(t.s1), knots.require_index(t.s2)});
  }
  return out;
}

inline double term_loss(Objective objective, double lambda, double g0, double g1, double g2) {
  const double tokens = g0 + g2 - 1.0;
  const double positions = g0 - g1;
  switch (objective) {
    case Objective::Full: return tokens * tokens + positions * positions - lambda * (g0 - g2) * (g0 - g2);
    case Objective::SwapTokensOnly: return tokens * tokens - lambda * (g0 - g2) * (g0 - g2);
    case Objective::SwapPositionsOnly: return positions * positions - lambda * (g0 - 0.5) * (g0 - 0.5);
  }
  return 0.0;
}

/// dL/dg(s0), dL/dg(s1), dL/dg(s2) for one triple.
inline std::array<double, 3> term_partials(Objective objective, double lambda, double g0, double g1, double g2) {
  const double tokens = 2.0 * (g0 + g2 - 1.0);
  const double positions = 2.0 * (g0 - g1);
  switch (objective) {
    case Objective::Full: {
      const double spread = 2.0 * lambda * (g0 - g2);
      return {tokens + positions - spread, -positions, tokens + spread};
    }
    case Objective::SwapTokensOnly: {
      const double spread = 2.0 * lambda * (g0 - g2);
      return {tokens - spread, 0.0, tokens + spread};
    }
    case Objective::SwapPositionsOnly:
      return {positions - 2.0 * lambda * (g0 - 0.5), -positions, 0.0};
  }
  return {0.0, 0.0, 0.0};
}

inline double loss_indexed(std::span<const TripleIndex> batch, const MapState& map, const NoaConfig& config) {
  double total = 0.0;
  for (const auto& t : batch) {
    total += term_loss(config.objective, config.lambda, map.cumulative[t.i0], map.cumulative[t.i1],
                       map.cumulative[t.i2]);
  }
  return total;
}

// With p the softmax weights, dg(z_j)/dd_k = p_k * ([k <= j] - g(z_j)). Summing
// over the batch with per-knot coefficients a_j gives
//   dL/dd_k = p_k * (sum_{j >= k} a_j - sum_j a_j g(z_j)),
// a suffix sum, so the full gradient costs O(M + batch).
inline std::vector<double> gradient_indexed(std::span<const TripleIndex> batch, const MapState& map,
                                            const NoaConfig& config) {
  const std::size_t n = map.weights.size();
  std::vector<double> coeff(n, 0.0);
  double weighted = 0.0;
  for (const auto& t : batch) {
    const double g0 = map.cumulative[t.i0];
    const double g1 = map.cumulative[t.i1];
    const double g2 = map.cumulative[t.i2];
    const auto c = term_partials(config.objective, config.lambda, g0, g1, g2);
    coeff[t.i0] += c[0];
    coeff[t.i1] += c[1];
    coeff[t.i2] += c[2];
    weighted += c[0] * g0 + c[1] * g1 + c[2] * g2;
  }
  std::vector<double> grad(n);
  double suffix = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    suffix += coeff[k];
    grad[k] = map.weights[k] * (suffix - weighted);
  }
  return grad;
}

}  // namespace detail

inline double loss(std::span<const ObservedTriple> batch, const KnotSequence& knots, const NoaParameters& params,
                   const NoaConfig& config) {
  if (params.d.size() != knots.size()) throw Error(ErrorCode::LengthMismatch, "parameter/knot size mismatch");
  const auto indexed = detail::index_batch(batch, knots);
  return detail::loss_indexed(indexed, evaluate_map(params.d), config);
}

/// Analytic dL/dd_k over the batch, for every knot k.
inline std::vector<double> gradient(std::span<const ObservedTriple> batch, const KnotSequence& knots,
                                    const NoaParameters& params, const NoaConfig& config) {
  if (params.d.size() != knots.size()) throw Error(ErrorCode::LengthMismatch, "parameter/knot size mismatch");
  const auto indexed = detail::index_batch(batch, knots);
  return detail::gradient_indexed(indexed, evaluate_map(params.d), config);
}

/// Mean squared residual of the two consistency terms, without the regularizer.
struct ConsistencyTerms {
  double swap_tokens = 0.0;     // mean [g(s0) + g(s2) - 1]^2
  double swap_positions = 0.0;  // mean [g(s0) - g(s1)]^2
  double combined() const { return swap_tokens + swap_positions; }
};

inline ConsistencyTerms consistency_terms(std::span<const ObservedTriple> triples, const KnotSequence& knots,
                                          const NoaParameters& params) {
  ConsistencyTerms terms;
  if (triples.empty()) return terms;
  const auto map = evaluate_map(params.d);
  for (const auto& t : triples) {
    const double g0 = map.cumulative[knots.require_index(t.s0)];
    const double g1 = map.cumulative[knots.require_index(t.s1)];
    const double g2 = map.cumulative[knots.require_index(t.s2)];
    terms.swap_tokens += (g0 + g2 - 1.0) * (g0 + g2 - 1.0);
    terms.swap_positions += (g0 - g1) * (g0 - g1);
  }
  terms.swap_tokens /= static_cast<double>(triples.size());
  terms.swap_positions /= static_cast<double>(triples.size());
  return terms;
}

struct FitDiagnostics {
  std::size_t iterations = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  StopReason stop_reason = StopReason::MaxIterations;
  NoaConfig config;
  /// Full-set loss after every pass; first entry is the initial loss.
  std::vector<double> loss_trace;
  /// Sum of d after every pass.
  std::vector<double> param_sum_trace;
};

inline nlohmann::json to_json(const FitDiagnostics& diag) {
  return nlohmann::json{{"iterations", diag.iterations},
                        {"final_loss", diag.final_loss},
                        {"stop_reason", std::string(to_string(diag.stop_reason))},
                        {"objective", std::string(to_string(diag.config.objective))},
                        {"lambda", diag.config.lambda},
                        {"learning_rate", diag.config.learning_rate},
                        {"batch_size", diag.config.batch_size},
                        {"seed", diag.config.seed}};
}

struct FitResult {
  KnotSequence knots;
  NoaParameters params;
  FitDiagnostics diagnostics;
};

/// Batched gradient descent from d_k = z_k. One iteration is one shuffled
/// pass over the triples; parameters are re-centred to zero sum after every
/// batch step (or once per pass with Normalization::PerEpoch). Stops once the
/// pass changes the parameters by less than epsilon in L1 norm.
inline FitResult fit(std::span<const ObservedTriple> triples, const NoaConfig& config) {
  config.validate();
  if (triples.empty()) throw Error(ErrorCode::EmptyEstimationSet, "estimation set is empty");

  FitResult result{build_knots(triples), {}, {}};
  auto& knots = result.knots;
  auto& params = result.params;
  auto& diag = result.diagnostics;
  params = NoaParameters::from_knots(knots);
  diag.config = config;

  const auto indexed = detail::index_batch(triples, knots);
  std::vector<std::size_t> order(indexed.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng rng(config.seed);
  std::vector<detail::TripleIndex> batch;
  batch.reserve(config.batch_size);

  auto full_loss = [&] { return detail::loss_indexed(indexed, evaluate_map(params.d), config); };
  auto check_finite = [](double value, std::size_t iteration) {
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::NonFiniteLoss,
                  "non-finite loss/gradient at iteration " + std::to_string(iteration) +
                      "; the learning rate is likely too large");
    }
  };

  diag.initial_loss = full_loss();
  check_finite(diag.initial_loss, 0);
  diag.loss_trace.push_back(diag.initial_loss);

  std::vector<double> previous;
  for (std::size_t iteration = 1; iteration <= config.max_iterations; ++iteration) {
    previous = params.d;
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(indexed[order[i]]);
      const auto grad = detail::gradient_indexed(batch, evaluate_map(params.d), config);
      for (std::size_t k = 0; k < grad.size(); ++k) {
        check_finite(grad[k], iteration);
        params.d[k] -= config.learning_rate * grad[k];
      }
      if (config.normalization == Normalization::PerBatch) params.center();
    }
    if (config.normalization == Normalization::PerEpoch) params.center();

    const double current = full_loss();
    check_finite(current, iteration);
    diag.loss_trace.push_back(current);
    diag.param_sum_trace.push_back(params.sum());
    diag.iterations = iteration;
    diag.final_loss = current;

    double change = 0.0;
    for (std::size_t k = 0; k < params.d.size(); ++k) change += std::abs(params.d[k] - previous[k]);
    if (change < config.epsilon) {
      diag.stop_reason = StopReason::Epsilon;
      return result;
    }
  }
  diag.stop_reason = StopReason::MaxIterations;
  return result;
}

}  // namespace calibra::noa
