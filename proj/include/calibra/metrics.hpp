#pragma once

// Consistency metrics across swapped combinations (Fleiss' kappa, ICC) and
// reference-based metrics against gold labels (recall spread, accuracy).

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibra/core_types.hpp"

namespace calibra::metrics {

enum class IccMode { Paper2k, Paper3k, Standard2k, Standard3k };
enum class IccFamily { Paper, Standard };

inline std::string_view to_string(IccFamily f) { return f == IccFamily::Paper ? "paper" : "standard"; }

inline IccFamily parse_icc_family(std::string_view text) {
  if (text == "paper") return IccFamily::Paper;
  if (text == "standard") return IccFamily::Standard;
  throw Error(ErrorCode::ParseError, "unknown ICC mode '" + std::string(text) + "'");
}

/// Subjects x raters grid of content verdicts. Ties are kept as a third
/// category for kappa and encoded as 0.5 in the numeric view.
class RaterMatrix {
 public:
  RaterMatrix(std::vector<std::string> subjects, std::vector<CombinationId> raters,
              std::vector<std::vector<ChosenContent>> ratings)
      : subjects_(std::move(subjects)), raters_(std::move(raters)), ratings_(std::move(ratings)) {
    if (subjects_.size() < 2) throw Error(ErrorCode::InvalidArgument, "rater matrix needs at least two subjects");
    if (raters_.size() < 2) throw Error(ErrorCode::InvalidArgument, "rater matrix needs at least two raters");
    if (ratings_.size() != subjects_.size()) throw Error(ErrorCode::LengthMismatch, "one rating row per subject");
    for (const auto& row : ratings_) {
      if (row.size() != raters_.size()) throw Error(ErrorCode::LengthMismatch, "incomplete rating row");
    }
  }

  std::size_t n_subjects() const { return subjects_.size(); }
  std::size_t n_raters() const { return raters_.size(); }
  const std::vector<std::string>& subjects() const { return subjects_; }
  const std::vector<CombinationId>& raters() const { return raters_; }
  const std::vector<std::vector<ChosenContent>>& ratings() const { return ratings_; }

  static double numeric(ChosenContent c) {
    switch (c) {
      case ChosenContent::O1: return 1.0;
      case ChosenContent::O2: return 0.0;
      case ChosenContent::Tie: return 0.5;
    }
    return 0.5;
  }

  std::vector<std::vector<double>> numeric_view() const {
    std::vector<std::vector<double>> out(ratings_.size());
    for (std::size_t i = 0; i < ratings_.size(); ++i) {
      out[i].reserve(ratings_[i].size());
      for (auto c : ratings_[i]) out[i].push_back(numeric(c));
    }
    return out;
  }

 private:
  std::vector<std::string> subjects_;
  std::vector<CombinationId> raters_;
  std::vector<std::vector<ChosenContent>> ratings_;
};

inline double fleiss_kappa(const RaterMatrix& matrix) {
  const auto n = static_cast<double>(matrix.n_subjects());
  const auto k = static_cast<double>(matrix.n_raters());
  std::array<double, 3> totals{};
  double observed = 0.0;
  for (const auto& row : matrix.ratings()) {
    std::array<double, 3> counts{};
    for (auto c : row) counts[static_cast<std::size_t>(c)] += 1.0;
    double agree = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      agree += counts[c] * (counts[c] - 1.0);
      totals[c] += counts[c];
    }
    observed += agree / (k * (k - 1.0));
  }
  observed /= n;
  double expected = 0.0;
  for (double t : totals) expected += (t / (n * k)) * (t / (n * k));

  if (std::abs(1.0 - expected) < 1e-15) {
    if (std::abs(1.0 - observed) < 1e-15) return 1.0;
    throw Error(ErrorCode::DegenerateAgreement, "chance agreement is 1; kappa undefined");
  }
  return (observed - expected) / (1.0 - expected);
}

/// One-way and two-way ANOVA mean squares of the numeric view.
struct VarianceDecomposition {
  double between_subjects = 0.0;  // MS_B
  double within_subjects = 0.0;   // MS_W
  double between_raters = 0.0;    // MS_J
  double residual = 0.0;          // MS_E
};

inline VarianceDecomposition decompose(const std::vector<std::vector<double>>& x) {
  const std::size_t n = x.size();
  const std::size_t k = x.front().size();
  std::vector<double> row_mean(n, 0.0);
  std::vector<double> col_mean(k, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      row_mean[i] += x[i][j];
      col_mean[j] += x[i][j];
      grand += x[i][j];
    }
  }
  for (auto& m : row_mean) m /= static_cast<double>(k);
  for (auto& m : col_mean) m /= static_cast<double>(n);
  grand /= static_cast<double>(n * k);

  double ss_rows = 0.0, ss_cols = 0.0, ss_within = 0.0, ss_error = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss_rows += (row_mean[i] - grand) * (row_mean[i] - grand);
  for (std::size_t j = 0; j < k; ++j) ss_cols += (col_mean[j] - grand) * (col_mean[j] - grand);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      ss_within += (x[i][j] - row_mean[i]) * (x[i][j] - row_mean[i]);
      const double e = x[i][j] - row_mean[i] - col_mean[j] + grand;
      ss_error += e * e;
    }
  }
  const auto dn = static_cast<double>(n);
  const auto dk = static_cast<double>(k);
  VarianceDecomposition v;
  v.between_subjects = dk * ss_rows / (dn - 1.0);
  v.within_subjects = ss_within / (dn * (dk - 1.0));
  v.between_raters = dn * ss_cols / (dk - 1.0);
  v.residual = ss_error / ((dn - 1.0) * (dk - 1.0));
  return v;
}

/// Paper modes: (B - W) / (B + (k-1) W) and (B - W) / (B + k W) with B, W the
/// between- and within-subject mean squares. Standard modes: Shrout-Fleiss
/// ICC(2,k) and ICC(3,k) from the two-way ANOVA.
inline double icc(const RaterMatrix& matrix, IccMode mode) {
  const auto v = decompose(matrix.numeric_view());
  const auto k = static_cast<double>(matrix.n_raters());
  const auto n = static_cast<double>(matrix.n_subjects());
  const double b = v.between_subjects;
  const double w = v.within_subjects;
  if (b + w == 0.0) throw Error(ErrorCode::ZeroVariance, "all ratings identical; ICC undefined");
  switch (mode) {
    case IccMode::Paper2k: return (b - w) / (b + (k - 1.0) * w);
    case IccMode::Paper3k: return (b - w) / (b + k * w);
    case IccMode::Standard2k: {
      const double denom = b + (v.between_raters - v.residual) / n;
      if (denom == 0.0) throw Error(ErrorCode::ZeroVariance, "ICC(2,k) denominator vanishes");
      return (b - v.residual) / denom;
    }
    case IccMode::Standard3k:
      if (b == 0.0) throw Error(ErrorCode::ZeroVariance, "no between-subject variance");
      return (b - v.residual) / b;
  }
  return 0.0;
}

/// A verdict paired with the gold label of its sample.
struct LabeledVerdict {
  Verdict verdict;
  GoldLabel gold = GoldLabel::Tie;
};

/// Sample standard deviation of the First/Second recalls; tie-labelled
/// samples are excluded first.
inline double rstd(const std::vector<LabeledVerdict>& verdicts) {
  std::array<double, 2> hits{};
  std::array<double, 2> totals{};
  for (const auto& lv : verdicts) {
    if (lv.gold == GoldLabel::Tie) continue;
    const std::size_t cls = lv.gold == GoldLabel::First ? 0 : 1;
    totals[cls] += 1.0;
    if (matches_gold(lv.verdict.chosen_content, lv.gold)) hits[cls] += 1.0;
  }
  if (totals[0] == 0.0 || totals[1] == 0.0) {
    throw Error(ErrorCode::MissingClass, "recall spread needs both gold classes");
  }
  const std::array<double, 2> recalls = {hits[0] / totals[0], hits[1] / totals[1]};
  const double mean = (recalls[0] + recalls[1]) / 2.0;
  double ss = 0.0;
  for (double r : recalls) ss += (r - mean) * (r - mean);
  return std::sqrt(ss / (recalls.size() - 1.0));
}

/// Fraction of non-tie-labelled verdicts that pick the gold content; predicted
/// ties count as wrong.
inline double accuracy(const std::vector<LabeledVerdict>& verdicts) {
  double correct = 0.0;
  double total = 0.0;
  for (const auto& lv : verdicts) {
    if (lv.gold == GoldLabel::Tie) continue;
    total += 1.0;
    if (matches_gold(lv.verdict.chosen_content, lv.gold)) correct += 1.0;
  }
  if (total == 0.0) throw Error(ErrorCode::NoLabeledSamples, "no labelled samples after excluding ties");
  return correct / total;
}

struct ConsistencyReport {
  std::string method;
  double kappa = 0.0;
  double icc_2k = 0.0;
  double icc_3k = 0.0;
  std::optional<double> rstd;
  std::optional<double> accuracy;
  std::size_t n_subjects = 0;
  std::size_t n_excluded_ties = 0;
  IccFamily icc_mode = IccFamily::Paper;
};

inline nlohmann::json to_json(const ConsistencyReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return nlohmann::json{{"method", r.method},
                        {"kappa", r.kappa},
                        {"icc_2k", r.icc_2k},
                        {"icc_3k", r.icc_3k},
                        {"rstd", opt(r.rstd)},
                        {"accuracy", opt(r.accuracy)},
                        {"n_subjects", r.n_subjects},
                        {"n_excluded_ties", r.n_excluded_ties},
                        {"icc_mode", std::string(to_string(r.icc_mode))}};
}

struct ReportOptions {
  std::vector<CombinationId> raters{kEstimationCombinations.begin(), kEstimationCombinations.end()};
  IccFamily icc_mode = IccFamily::Paper;
};

inline RaterMatrix build_matrix(const std::vector<Verdict>& verdicts, const std::vector<CombinationId>& raters) {
  std::map<std::string, std::map<CombinationId, ChosenContent>> grid;
  for (const auto& v : verdicts) {
    if (std::find(raters.begin(), raters.end(), v.combination) == raters.end()) continue;
    if (!grid[v.sample_id].emplace(v.combination, v.chosen_content).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate verdict for subject '" + v.sample_id + "' combination " +
                                                  std::string(to_string(v.combination)));
    }
  }
  std::vector<std::string> subjects;
  std::vector<std::vector<ChosenContent>> ratings;
  for (const auto& [id, row] : grid) {
    std::vector<ChosenContent> cells;
    for (auto r : raters) {
      auto it = row.find(r);
      if (it == row.end()) {
        throw Error(ErrorCode::MissingCombination,
                    "subject '" + id + "' has no verdict for " + std::string(to_string(r)));
      }
      cells.push_back(it->second);
    }
    subjects.push_back(id);
    ratings.push_back(std::move(cells));
  }
  return RaterMatrix(std::move(subjects), raters, std::move(ratings));
}

/// All metrics for one method's verdicts. Reference-based metrics are computed
/// per rater combination and averaged.
inline ConsistencyReport report(const std::string& method, const std::vector<Verdict>& verdicts,
                                const std::map<std::string, GoldLabel>* gold, const ReportOptions& options = {}) {
  try {
    const auto matrix = build_matrix(verdicts, options.raters);
    ConsistencyReport out;
    out.method = method;
    out.icc_mode = options.icc_mode;
    out.n_subjects = matrix.n_subjects();
    out.kappa = fleiss_kappa(matrix);
    if (options.icc_mode == IccFamily::Paper) {
      out.icc_2k = icc(matrix, IccMode::Paper2k);
      out.icc_3k = icc(matrix, IccMode::Paper3k);
    } else {
      out.icc_2k = icc(matrix, IccMode::Standard2k);
      out.icc_3k = icc(matrix, IccMode::Standard3k);
    }
    if (gold != nullptr) {
      for (const auto& id : matrix.subjects()) {
        auto it = gold->find(id);
        if (it == gold->end()) throw Error(ErrorCode::IdMismatch, "no gold label for subject '" + id + "'");
        if (it->second == GoldLabel::Tie) ++out.n_excluded_ties;
      }
      double rstd_sum = 0.0;
      double acc_sum = 0.0;
      for (auto rater : options.raters) {
        std::vector<LabeledVerdict> labeled;
        for (const auto& v : verdicts) {
          if (v.combination != rater) continue;
          auto it = gold->find(v.sample_id);
          if (it == gold->end()) continue;
          labeled.push_back({v, it->second});
        }
        rstd_sum += rstd(labeled);
        acc_sum += accuracy(labeled);
      }
      out.rstd = rstd_sum / static_cast<double>(options.raters.size());
      out.accuracy = acc_sum / static_cast<double>(options.raters.size());
    }
    return out;
  } catch (const Error& e) {
    throw Error(e.code(), "method '" + method + "': " + e.what());
  }
}

/// Fixed-width table, two decimals, in percent like the usual reporting tables.
inline std::string format_table(const std::vector<ConsistencyReport>& reports) {
  std::ostringstream out;
  auto cell = [&](std::optional<double> v) {
    char buf[32];
    if (v) {
      std::snprintf(buf, sizeof buf, "%10.2f", *v * 100.0);
    } else {
      std::snprintf(buf, sizeof buf, "%10s", "-");
    }
    out << buf;
  };
  const std::string icc_note = reports.empty() ? "paper" : std::string(to_string(reports.front().icc_mode));
  char head[160];
  std::snprintf(head, sizeof head, "%-14s%10s%10s%10s%10s%10s%10s\n", "Method", "Kappa", "ICC(2,k)", "ICC(3,k)",
                "RStd", "Acc.", "N");
  out << head;
  for (const auto& r : reports) {
    char name[32];
    std::snprintf(name, sizeof name, "%-14s", r.method.c_str());
    out << name;
    cell(r.kappa);
    cell(r.icc_2k);
    cell(r.icc_3k);
    cell(r.rstd);
    cell(r.accuracy);
    char n[16];
    std::snprintf(n, sizeof n, "%10zu", r.n_subjects);
    out << n << '\n';
  }
  out << "(values in %; ICC mode: " << icc_note << ")\n";
  return out.str();
}

}  // namespace calibra::metrics
