#include <gtest/gtest.h>

#include <algorithm>

#include "fedsn/adaptation.hpp"
#include "fixtures.hpp"

using namespace fedsn;

namespace {

// Single-level net: stem {full3, full3}, bottleneck {full3, full3}, width 1.
SupernetConfig rig_config() {
  SupernetConfig c;
  c.levels = 1;
  c.width = 1;
  c.stem = {Candidate::full(3), Candidate::full(3)};
  c.encoder = {};
  c.decoder = {};
  c.bottleneck = {{Candidate::full(3), Candidate::full(3)}};
  return c;
}

void set_center(Field<double>& w, double v) {
  w.fill(0);
  w[4] = v;  // centre of a 1x1x3x3 kernel
}

// Only path (1, 0) carries the image through: stem/c1 thresholds the input,
// bott/c0 passes it on, the other two candidates output zeros.
SupernetModel<double> rigged_model() {
  auto m = SupernetModel<double>::build(rig_config(), 0);
  auto& p = m.parameters();
  set_center(p.at("stem/c0/w"), 0.0);
  set_center(p.at("stem/c1/w"), 1.0);
  p.at("stem/c1/b")[0] = -0.5;
  set_center(p.at("bott.0/c0/w"), 1.0);
  set_center(p.at("bott.0/c1/w"), 0.0);
  auto& hw = p.at("head/w");
  hw[0] = 0.0;
  hw[1] = 20.0;
  p.at("head/b")[0] = 0.0;
  p.at("head/b")[1] = -1.0;
  return m;
}

std::vector<Case<double>> clean_cases(std::size_t n, std::uint64_t seed) {
  SiteProfile p;
  p.id = "rig";
  p.noise_sigma = 0.0;
  p.size_min = 2.5;
  p.size_max = 5.0;
  p.case_count = n;
  return generate_site<double>(p, Shape{16, 16}, seed);
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

TEST(AdaptExhaustive, SinglePathNet) {
  SupernetConfig c = rig_config();
  c.stem.resize(1);
  c.bottleneck[0].resize(1);
  const auto m = SupernetModel<double>::build(c, 1);
  const auto cases = clean_cases(4, 1);
  const auto r = adapt_exhaustive(m, cases, all_indices(4));
  EXPECT_EQ(r.searched, m.default_path());
  EXPECT_EQ(r.evaluated.size(), 1u);
}

TEST(AdaptExhaustive, FindsRiggedOptimum) {
  const auto m = rigged_model();
  const auto cases = clean_cases(6, 2);
  const auto val = all_indices(6);
  const auto r = adapt_exhaustive(m, cases, val);
  EXPECT_EQ(r.searched, (PathSpec{{1, 0}}));
  // Direct evaluation of all four paths confirms (1, 0) is strictly best.
  const double best = evaluate(m, PathSpec{{1, 0}}, cases, val).loss;
  for (const PathSpec& p : {PathSpec{{0, 0}}, PathSpec{{0, 1}}, PathSpec{{1, 1}}}) {
    EXPECT_GT(evaluate(m, p, cases, val).loss, best) << p.to_string();
  }
  EXPECT_FALSE(r.kept_default);
  EXPECT_EQ(r.chosen, (PathSpec{{1, 0}}));
  EXPECT_GT(r.chosen_dice, 0.9);
}

TEST(AdaptExhaustive, BudgetAndEmptySplitRejected) {
  const auto m = SupernetModel<double>::build(full_supernet_config(2, 2), 1);
  const auto cases = clean_cases(2, 1);
  try {
    adapt_exhaustive(m, cases, all_indices(2));
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("110592"), std::string::npos);
  }
  EXPECT_THROW(adapt_exhaustive(rigged_model(), cases, {}), std::invalid_argument);
  EXPECT_THROW(adapt_gradient(rigged_model(), cases, {}), std::invalid_argument);
}

TEST(AdaptExhaustive, StableUnderReorderingAndThreads) {
  const auto m = SupernetModel<double>::build(desk_supernet_config(3), 5);
  const auto cases = fedsn::testing::site_cases(0, 8, 3);
  std::vector<std::size_t> val{0, 1, 2, 3, 4};
  const auto a = adapt_exhaustive(m, cases, val);
  std::reverse(val.begin(), val.end());
  const auto b = adapt_exhaustive(m, cases, val, 4096, {}, 3);
  ASSERT_EQ(a.evaluated.size(), 64u);
  EXPECT_EQ(a.searched, b.searched);
  for (std::size_t i = 0; i < a.evaluated.size(); ++i) {
    EXPECT_EQ(a.evaluated[i].loss, b.evaluated[i].loss);
    EXPECT_EQ(a.evaluated[i].path, m.path_from_index(i));
  }
}

TEST(AdaptGradient, SelectsTheOnlyWorkingCandidates) {
  const auto m = rigged_model();
  const auto cases = clean_cases(6, 3);
  const auto r = adapt_gradient(m, cases, all_indices(6));
  EXPECT_EQ(r.searched, (PathSpec{{1, 0}}));
  EXPECT_EQ(r.trajectory.size(), 6u);
  EXPECT_EQ(r.chosen, r.searched);
}

TEST(AdaptGradient, IdenticalCandidatesKeepDefault) {
  auto m = rigged_model();
  auto& p = m.parameters();
  for (const char* slot : {"stem", "bott.0"}) {
    const auto w = p.at(std::string(slot) + "/c1/w").values();
    std::copy(w.begin(), w.end(), p.at(std::string(slot) + "/c0/w").values().begin());
    p.at(std::string(slot) + "/c0/b")[0] = p.at(std::string(slot) + "/c1/b")[0];
  }
  const auto cases = clean_cases(4, 4);
  const auto g = adapt_gradient(m, cases, all_indices(4));
  EXPECT_EQ(g.chosen, m.default_path());
  EXPECT_TRUE(g.kept_default);
  const auto e = adapt_exhaustive(m, cases, all_indices(4));
  EXPECT_EQ(e.searched, m.default_path());
}

TEST(AdaptGradient, FreezesWeightsAndNeverRegresses) {
  const auto m = SupernetModel<double>::build(desk_supernet_config(3), 7);
  const auto before = m.parameters().detached();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto cases = fedsn::testing::site_cases(seed, 8, seed);
    const std::vector<std::size_t> val{0, 1, 2, 3};
    AdaptConfig<double> cfg;
    cfg.seed = seed;
    const auto g = adapt_gradient(m, cases, val, cfg);
    const auto e = adapt_exhaustive(m, cases, val);
    EXPECT_GE(g.chosen_dice, g.default_dice);
    EXPECT_GE(e.chosen_dice, e.default_dice);
    // The exhaustive search dominates the relaxation on its own objective,
    // and its table contains a path at least as good in Dice.
    EXPECT_LE(e.searched_loss, g.searched_loss);
    double best_dice = 0;
    for (const auto& s : e.evaluated) best_dice = std::max(best_dice, s.dice);
    EXPECT_GE(best_dice, g.chosen_dice);
    const auto j = to_json(g);
    EXPECT_EQ(j.at("chosen_path").get<std::vector<std::size_t>>(), g.chosen.choices);
  }
  EXPECT_TRUE(m.parameters().same_values(before));
}
