#include <cmath>

#include "helpers.hpp"

using namespace oodcal;
using testing_util::iota_scores;
using testing_util::scores;

namespace {

std::size_t flagged(const ScoreVector& s, const ThresholdModel& m) {
  const auto d = decide(s, m);
  return static_cast<std::size_t>(std::count(d.begin(), d.end(), Decision::ood));
}

// Random scores with activated classes; `distinct` draws continuous values,
// otherwise values come from a small integer grid so ties are common.
ScoreVector random_scores(std::mt19937_64& gen, std::size_t n, std::size_t k, bool distinct) {
  std::normal_distribution<double> nd;
  ScoreVector s{{}, std::vector<std::size_t>{}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = gen() % k;
    s.scores.push_back(distinct ? nd(gen) + static_cast<double>(c) : static_cast<double>(gen() % 7));
    s.activated->push_back(c);
  }
  return s;
}

}  // namespace

TEST(Cutoff, OneToHundred) {
  const auto s = scores(iota_scores(1, 100));
  const auto m = fit_threshold_one(s, 0.95);
  EXPECT_EQ(m.tau(), 96.0);
  EXPECT_EQ(flagged(s, m), 5u);
}

TEST(Cutoff, TenScoresIsInfinite) {
  const auto s = scores(iota_scores(1, 10));
  const auto m = fit_threshold_one(s, 0.95);
  EXPECT_TRUE(std::isinf(m.tau()));
  EXPECT_EQ(flagged(s, m), 0u);
}

TEST(Cutoff, TiesAdvancePastTheMthValue) {
  EXPECT_TRUE(std::isinf(tpr_beta_cutoff(std::vector<double>(10, 3.0), 0.5)));
  EXPECT_EQ(tpr_beta_cutoff({1, 2, 2, 2, 5}, 0.4), 5.0);
  // beta * n that is an integer up to rounding
  EXPECT_EQ(tpr_beta_cutoff(iota_scores(1, 100), 0.55), 56.0);
}

TEST(Cutoff, Errors) {
  EXPECT_OODCAL_ERROR(tpr_beta_cutoff({}, 0.9), ErrorCode::EmptyScores);
  for (double b : {0.0, 1.0, -0.1, 1.5, std::nan("")}) EXPECT_OODCAL_ERROR(tpr_beta_cutoff({1.0}, b), ErrorCode::BetaOutOfRange);
}

TEST(Multi, TwoClassesHundredEach) {
  auto v = iota_scores(1, 200);
  std::vector<std::size_t> act(200, 0);
  std::fill(act.begin() + 100, act.end(), 1);
  const auto m = fit_threshold_multi(scores(v, act), 0.95, 2);
  EXPECT_EQ(m.taus, (std::vector<double>{96, 196}));
  EXPECT_EQ(m.fit_counts, (std::vector<std::size_t>{100, 100}));
}

TEST(Multi, EmptyClassGetsInfinity) {
  const auto m = fit_threshold_multi(scores(iota_scores(1, 100), std::vector<std::size_t>(100, 0)), 0.95, 3);
  EXPECT_EQ(m.taus[0], 96.0);
  EXPECT_TRUE(std::isinf(m.taus[1]));
  EXPECT_TRUE(std::isinf(m.taus[2]));
  EXPECT_EQ(m.empty_classes(), (std::vector<std::size_t>{1, 2}));
}

TEST(Multi, SingleClassEqualsOne) {
  std::mt19937_64 gen(2);
  for (int t = 0; t < 50; ++t) {
    auto s = random_scores(gen, 1 + gen() % 300, 1, t % 2);
    const double beta = 0.5 + 0.49 * static_cast<double>(gen() % 100) / 100.0;
    EXPECT_EQ(fit_threshold_multi(s, beta, 1).taus, fit_threshold_one(s, beta).taus);
  }
}

TEST(Multi, Errors) {
  EXPECT_OODCAL_ERROR(fit_threshold_multi(scores({1, 2}), 0.9, 2), ErrorCode::MissingActivated);
  EXPECT_OODCAL_ERROR(fit_threshold_multi(scores({1, 2}, {0, 2}), 0.9, 2), ErrorCode::ClassIndexOutOfRange);
  EXPECT_OODCAL_ERROR(fit_threshold_multi(scores({1, 2}, {0, 1}), 1.2, 2), ErrorCode::BetaOutOfRange);
}

TEST(One, FitCounts) {
  EXPECT_EQ(fit_threshold_one(scores({1, 2, 3}), 0.9).fit_counts, (std::vector<std::size_t>{3}));
  EXPECT_EQ(fit_threshold_one(scores({1, 2, 3}, {1, 1, 0}), 0.9, 2).fit_counts, (std::vector<std::size_t>{1, 2}));
}

TEST(Decide, InclusiveBoundary) {
  ThresholdModel m{Scheme::one, 0.95, {5.0}, {1}};
  EXPECT_EQ(decide(scores({5.0, 4.999}), m), (std::vector<Decision>{Decision::ood, Decision::id}));
}

TEST(Decide, InfiniteThresholdNeverFlags) {
  ThresholdModel m{Scheme::multi, 0.95, {kInf, 0.0}, {0, 1}};
  const auto d = decide(scores({1e308, 1e308}, {0, 1}), m);
  EXPECT_EQ(d[0], Decision::id);
  EXPECT_EQ(d[1], Decision::ood);
}

TEST(Decide, MultiWithEqualTausCollapsesToOne) {
  std::mt19937_64 gen(4);
  const auto s = random_scores(gen, 500, 5, true);
  const ThresholdModel one{Scheme::one, 0.9, {0.7}, {500}};
  const ThresholdModel multi{Scheme::multi, 0.9, std::vector<double>(5, 0.7), std::vector<std::size_t>(5, 100)};
  EXPECT_EQ(decide(s, one), decide(s, multi));
}

TEST(Decide, Errors) {
  ThresholdModel multi{Scheme::multi, 0.9, {1.0, 2.0}, {1, 1}};
  EXPECT_OODCAL_ERROR(decide(scores({1.0}), multi), ErrorCode::MissingActivated);
  EXPECT_OODCAL_ERROR(decide(scores({1.0}, {2}), multi), ErrorCode::ClassIndexOutOfRange);
}

TEST(Property, FittingSetGuaranteeAndTightness) {
  std::mt19937_64 gen(10);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 1 + gen() % 6;
    const bool distinct = t % 2 == 0;
    const auto s = random_scores(gen, 1 + gen() % 800, k, distinct);
    const double beta = 0.5 + 0.499 * static_cast<double>(gen() % 1000) / 1000.0;
    const auto one = fit_threshold_one(s, beta);
    EXPECT_LE(static_cast<double>(flagged(s, one)), (1 - beta) * static_cast<double>(s.size()) + 1e-9);
    const auto multi = fit_threshold_multi(s, beta, k);
    const auto d = decide(s, multi);
    std::vector<double> n(k, 0), f(k, 0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      n[(*s.activated)[i]] += 1;
      f[(*s.activated)[i]] += d[i] == Decision::ood;
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (n[j] == 0) continue;
      EXPECT_LE(f[j] / n[j], 1 - beta + 1e-9);
      if (distinct && n[j] >= 1 / (1 - beta)) {
        EXPECT_GE(f[j] / n[j], 1 - beta - 1 / n[j] - 1e-9);
      }
    }
  }
}

TEST(Property, DuplicationInvariance) {
  std::mt19937_64 gen(11);
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 1 + gen() % 5;
    const auto s = random_scores(gen, 50 + gen() % 200, k, t % 2);
    const auto model = fit_threshold(s, t % 3 ? Scheme::multi : Scheme::one, 0.9, k);
    const auto before = decide(s, model);
    ScoreVector dup = s;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (auto c = gen() % 4; c > 0; --c) {
        dup.scores.push_back(s.scores[i]);
        dup.activated->push_back((*s.activated)[i]);
      }
    const auto after = decide(dup, model);
    EXPECT_TRUE(std::equal(before.begin(), before.end(), after.begin()));
  }
}

TEST(Property, RaisingBetaNeverFlagsMore) {
  std::mt19937_64 gen(12);
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 1 + gen() % 4;
    const auto s = random_scores(gen, 1 + gen() % 400, k, t % 2);
    std::size_t prev_one = s.size() + 1, prev_multi = s.size() + 1;
    for (double beta = 0.05; beta < 0.99; beta += 0.07) {
      const auto f1 = flagged(s, fit_threshold_one(s, beta));
      const auto fm = flagged(s, fit_threshold_multi(s, beta, k));
      EXPECT_LE(f1, prev_one);
      EXPECT_LE(fm, prev_multi);
      prev_one = f1;
      prev_multi = fm;
    }
  }
}

TEST(Property, SchemeCollapseOnIdenticalClassDistributions) {
  std::mt19937_64 gen(13);
  std::normal_distribution<double> nd;
  const std::size_t k = 4, per = 2000;
  ScoreVector s{{}, std::vector<std::size_t>{}};
  for (std::size_t i = 0; i < k * per; ++i) {
    s.scores.push_back(nd(gen));
    s.activated->push_back(i % k);
  }
  const auto one = fit_threshold_one(s, 0.95), multi = fit_threshold_multi(s, 0.95, k);
  const auto d1 = decide(s, one), dm = decide(s, multi);
  for (std::size_t j = 0; j < k; ++j) {
    double a = 0, b = 0;
    for (std::size_t i = j; i < s.size(); i += k) {
      a += d1[i] == Decision::ood;
      b += dm[i] == Decision::ood;
    }
    // per-class flagged fractions agree up to sampling noise of the ONE split across classes
    EXPECT_NEAR(a / per, b / per, 0.02);
    EXPECT_NEAR(b / per, 0.05, 1.0 / per + 1e-12);
  }
}

TEST(MultiplicityFitter, MatchesFitOnMaterializedCopies) {
  std::mt19937_64 gen(14);
  for (int t = 0; t < 300; ++t) {
    const std::size_t k = 1 + gen() % 5;
    const auto s = random_scores(gen, 1 + gen() % 120, k, t % 2);
    const auto scheme = t % 2 ? Scheme::multi : Scheme::one;
    const double beta = 0.5 + 0.49 * static_cast<double>(gen() % 100) / 100.0;
    std::vector<std::uint32_t> copies(s.size());
    ScoreVector expanded{{}, std::vector<std::size_t>{}};
    for (std::size_t i = 0; i < s.size(); ++i) {
      copies[i] = static_cast<std::uint32_t>(gen() % 4);
      for (std::uint32_t c = 0; c < copies[i]; ++c) {
        expanded.scores.push_back(s.scores[i]);
        expanded.activated->push_back((*s.activated)[i]);
      }
    }
    const MultiplicityFitter fitter(s, scheme, beta, k);
    if (expanded.empty()) {
      if (scheme == Scheme::one) {
        EXPECT_OODCAL_ERROR(fitter.fit(copies), ErrorCode::EmptyScores);
      }
      continue;
    }
    EXPECT_EQ(fitter.fit(copies), fit_threshold(expanded, scheme, beta, k));
  }
}

TEST(ThresholdJson, RoundTripWithInfinity) {
  const ThresholdModel m{Scheme::multi, 0.95, {1.5, kInf, -0.25}, {10, 0, 3}};
  const auto j = threshold_to_json(m);
  EXPECT_EQ(j.dump(), R"({"scheme":"multi","beta":0.95,"taus":[1.5,"inf",-0.25],"fit_counts":[10,0,3]})");
  EXPECT_EQ(threshold_from_json(nlohmann::json::parse(j.dump())), m);
}

TEST(ThresholdJson, Rejects) {
  EXPECT_OODCAL_ERROR(threshold_from_json(nlohmann::json::parse(R"({"scheme":"one","beta":1.5,"taus":[1],"fit_counts":[1]})")),
                      ErrorCode::BetaOutOfRange);
  EXPECT_OODCAL_ERROR(threshold_from_json(nlohmann::json::parse(R"({"scheme":"two","beta":0.5,"taus":[1],"fit_counts":[1]})")),
                      ErrorCode::InvalidArgument);
}
