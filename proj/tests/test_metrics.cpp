#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "calibra/metrics.hpp"

using namespace calibra;
using namespace calibra::metrics;

namespace {

constexpr auto O1 = ChosenContent::O1;
constexpr auto O2 = ChosenContent::O2;
constexpr auto TIE = ChosenContent::Tie;

RaterMatrix matrix_of(const std::vector<std::vector<ChosenContent>>& rows) {
  std::vector<std::string> subjects;
  for (std::size_t i = 0; i < rows.size(); ++i) subjects.push_back("s" + std::to_string(i));
  std::vector<CombinationId> raters;
  for (std::size_t j = 0; j < rows.front().size(); ++j) raters.push_back(static_cast<CombinationId>(j));
  return RaterMatrix(subjects, raters, rows);
}

// 4 x 3 grid whose numeric view is [[1,1,1],[1,1,0],[0,1,0],[0,0,0]].
RaterMatrix fixture() { return matrix_of({{O1, O1, O1}, {O1, O1, O2}, {O2, O1, O2}, {O2, O2, O2}}); }

LabeledVerdict lv(ChosenContent chosen, GoldLabel gold) {
  Verdict v;
  v.chosen_content = chosen;
  return {v, gold};
}

std::vector<LabeledVerdict> with_recalls(int first_hits, int first_total, int second_hits, int second_total) {
  std::vector<LabeledVerdict> out;
  for (int i = 0; i < first_total; ++i) out.push_back(lv(i < first_hits ? O1 : O2, GoldLabel::First));
  for (int i = 0; i < second_total; ++i) out.push_back(lv(i < second_hits ? O2 : O1, GoldLabel::Second));
  return out;
}

Verdict verdict(const std::string& id, CombinationId c, ChosenContent chosen) {
  Verdict v;
  v.sample_id = id;
  v.combination = c;
  v.chosen_content = chosen;
  return v;
}

}  // namespace

TEST(FleissKappa, Examples) {
  EXPECT_DOUBLE_EQ(fleiss_kappa(matrix_of({{O1, O1, O1}, {O2, O2, O2}, {O1, O1, O1}, {O2, O2, O2}})), 1.0);
  EXPECT_NEAR(fleiss_kappa(matrix_of({{O1, O1, O2}, {O2, O2, O1}})), -1.0 / 3.0, 1e-15);
  // P_o = 2/3, P_e = 1/2.
  EXPECT_NEAR(fleiss_kappa(fixture()), 1.0 / 3.0, 1e-15);
}

TEST(FleissKappa, DegenerateChanceAgreement) {
  // One category everywhere: P_o = P_e = 1, returned as perfect agreement.
  EXPECT_EQ(fleiss_kappa(matrix_of({{O1, O1, O1}, {O1, O1, O1}})), 1.0);
}

TEST(FleissKappa, TiesAreAThirdCategory) {
  // Counts per subject (O1, O2, Tie): (1,1,1), (3,0,0). P_o = (0 + 1) / 2,
  // marginals (4/6, 1/6, 1/6) -> P_e = 18/36.
  EXPECT_NEAR(fleiss_kappa(matrix_of({{O1, O2, TIE}, {O1, O1, O1}})), 0.0, 1e-15);
}

TEST(RaterMatrix, Validation) {
  EXPECT_THROW(matrix_of({{O1, O1}}), Error);
  EXPECT_THROW(matrix_of({{O1}, {O2}}), Error);
  EXPECT_THROW(RaterMatrix({"a", "b"}, {CombinationId::X0, CombinationId::X1}, {{O1, O1}, {O1}}), Error);
}

TEST(Icc, FixtureMatchesIndependentDecomposition) {
  const auto m = fixture();
  const auto v = decompose(m.numeric_view());
  EXPECT_NEAR(v.between_subjects, 0.5555555555555556, 1e-12);
  EXPECT_NEAR(v.within_subjects, 0.16666666666666669, 1e-12);
  EXPECT_NEAR(icc(m, IccMode::Paper2k), 0.4375, 1e-12);
  EXPECT_NEAR(icc(m, IccMode::Paper3k), 7.0 / 19.0, 1e-12);
  EXPECT_NEAR(icc(m, IccMode::Standard2k), 0.7142857142857144, 1e-12);
  EXPECT_NEAR(icc(m, IccMode::Standard3k), 0.7500000000000001, 1e-12);
}

TEST(Icc, PerfectAgreementIsOneInEveryMode) {
  const auto m = matrix_of({{O1, O1, O1}, {O2, O2, O2}, {O1, O1, O1}});
  for (auto mode : {IccMode::Paper2k, IccMode::Paper3k, IccMode::Standard2k, IccMode::Standard3k}) {
    EXPECT_NEAR(icc(m, mode), 1.0, 1e-15);
  }
}

TEST(Icc, EqualBetweenAndWithinGivesZero) {
  // Between = within = 1/4.
  const auto m = matrix_of({{O1, O1}, {O1, O2}});
  const auto v = decompose(m.numeric_view());
  ASSERT_NEAR(v.between_subjects, v.within_subjects, 1e-15);
  EXPECT_NEAR(icc(m, IccMode::Paper2k), 0.0, 1e-15);
  EXPECT_NEAR(icc(m, IccMode::Paper3k), 0.0, 1e-15);
}

TEST(Icc, ZeroVariance) {
  try {
    icc(matrix_of({{O1, O1}, {O1, O1}}), IccMode::Paper2k);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroVariance);
  }
}

TEST(Metrics, PermutationInvariance) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> pick(0, 2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<ChosenContent>> rows(8, std::vector<ChosenContent>(3));
    for (auto& r : rows)
      for (auto& c : r) c = static_cast<ChosenContent>(pick(rng) == 2 ? 2 : pick(rng) % 2);
    rows[0] = {O1, O1, O1};
    rows[1] = {O2, O2, O1};
    auto shuffled = rows;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::vector<std::size_t> perm{0, 1, 2};
    std::shuffle(perm.begin(), perm.end(), rng);
    for (auto& r : shuffled) r = {r[perm[0]], r[perm[1]], r[perm[2]]};
    const auto a = matrix_of(rows);
    const auto b = matrix_of(shuffled);
    EXPECT_NEAR(fleiss_kappa(a), fleiss_kappa(b), 1e-12);
    for (auto mode : {IccMode::Paper2k, IccMode::Paper3k, IccMode::Standard2k, IccMode::Standard3k}) {
      EXPECT_NEAR(icc(a, mode), icc(b, mode), 1e-12);
    }
    const double k = fleiss_kappa(a);
    EXPECT_GE(k, -1.0);
    EXPECT_LE(k, 1.0);
  }
}

TEST(Rstd, Examples) {
  EXPECT_NEAR(rstd(with_recalls(4, 5, 3, 5)), 0.14142135623730953, 1e-12);
  EXPECT_EQ(rstd(with_recalls(3, 4, 6, 8)), 0.0);
  try {
    rstd({lv(O1, GoldLabel::Tie), lv(O2, GoldLabel::Tie)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingClass);
  }
}

TEST(Accuracy, Examples) {
  EXPECT_EQ(accuracy(with_recalls(3, 3, 2, 2)), 1.0);
  EXPECT_NEAR(accuracy(with_recalls(3, 3, 2, 3)), 5.0 / 6.0, 1e-15);
  auto with_tie = with_recalls(2, 2, 2, 2);
  with_tie.push_back(lv(TIE, GoldLabel::First));
  with_tie.push_back(lv(O1, GoldLabel::Tie));
  EXPECT_NEAR(accuracy(with_tie), 0.8, 1e-15);
  EXPECT_THROW(accuracy({lv(O1, GoldLabel::Tie)}), Error);
  EXPECT_THROW(accuracy({}), Error);
}

TEST(Report, IdenticalVerdictsArePerfect) {
  std::vector<Verdict> verdicts;
  std::map<std::string, GoldLabel> gold;
  for (int i = 0; i < 6; ++i) {
    const auto id = "s" + std::to_string(i);
    const auto chosen = i % 2 == 0 ? O1 : O2;
    for (auto c : kEstimationCombinations) verdicts.push_back(verdict(id, c, chosen));
    gold[id] = i == 5 ? GoldLabel::Tie : (i % 2 == 0 ? GoldLabel::First : GoldLabel::Second);
  }
  const auto r = report("raw", verdicts, &gold);
  EXPECT_EQ(r.kappa, 1.0);
  EXPECT_NEAR(r.icc_2k, 1.0, 1e-15);
  EXPECT_NEAR(r.icc_3k, 1.0, 1e-15);
  EXPECT_EQ(r.n_subjects, 6u);
  EXPECT_EQ(r.n_excluded_ties, 1u);
  EXPECT_EQ(*r.accuracy, 1.0);
  EXPECT_EQ(*r.rstd, 0.0);

  const auto no_gold = report("raw", verdicts, nullptr);
  EXPECT_FALSE(no_gold.rstd.has_value());
  EXPECT_FALSE(no_gold.accuracy.has_value());
  const auto j = to_json(no_gold);
  EXPECT_TRUE(j["rstd"].is_null());
  EXPECT_EQ(j["icc_mode"], "paper");
}

TEST(Report, AveragesReferenceMetricsOverRaters) {
  // X0 is always right, X1 always picks O1, X2 always picks O2.
  std::vector<Verdict> verdicts;
  std::map<std::string, GoldLabel> gold;
  for (int i = 0; i < 4; ++i) {
    const auto id = "s" + std::to_string(i);
    const bool first = i < 2;
    gold[id] = first ? GoldLabel::First : GoldLabel::Second;
    verdicts.push_back(verdict(id, CombinationId::X0, first ? O1 : O2));
    verdicts.push_back(verdict(id, CombinationId::X1, O1));
    verdicts.push_back(verdict(id, CombinationId::X2, O2));
  }
  const auto r = report("raw", verdicts, &gold);
  // Accuracies 1, 0.5, 0.5. Recalls (1,1), (1,0), (0,1): rstd 0, sqrt(0.5), sqrt(0.5).
  EXPECT_NEAR(*r.accuracy, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(*r.rstd, 2.0 * std::sqrt(0.5) / 3.0, 1e-15);
}

TEST(Report, MissingCombinationNamesSubject) {
  std::vector<Verdict> verdicts{verdict("alpha", CombinationId::X0, O1), verdict("alpha", CombinationId::X1, O1),
                                verdict("alpha", CombinationId::X2, O1), verdict("beta", CombinationId::X0, O2),
                                verdict("beta", CombinationId::X1, O2)};
  try {
    report("calibraeval", verdicts, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingCombination);
    const std::string what = e.what();
    EXPECT_NE(what.find("beta"), std::string::npos);
    EXPECT_NE(what.find("calibraeval"), std::string::npos);
  }
}

TEST(Report, StandardModeAndTable) {
  std::vector<Verdict> verdicts;
  const std::vector<std::vector<ChosenContent>> rows{{O1, O1, O1}, {O1, O1, O2}, {O2, O1, O2}, {O2, O2, O2}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      verdicts.push_back(verdict("s" + std::to_string(i), static_cast<CombinationId>(j), rows[i][j]));
    }
  }
  ReportOptions opts;
  opts.icc_mode = IccFamily::Standard;
  const auto r = report("raw", verdicts, nullptr, opts);
  EXPECT_NEAR(r.icc_2k, 0.7142857142857144, 1e-12);
  EXPECT_NEAR(r.icc_3k, 0.7500000000000001, 1e-12);
  const auto table = format_table({r});
  EXPECT_NE(table.find("raw"), std::string::npos);
  EXPECT_NE(table.find("33.33"), std::string::npos);
  EXPECT_NE(table.find("71.43"), std::string::npos);
}
