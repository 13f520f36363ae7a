#include "helpers.hpp"
#include "oodcal/synthetic.hpp"
#include "oracles.hpp"

using namespace oodcal;

namespace {

std::vector<double> normal_sample(std::mt19937_64& gen, std::size_t n, double mean, double sd) {
  std::normal_distribution<double> nd(mean, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(gen);
  return v;
}

// Integer-valued samples so ties are common.
std::vector<double> tied_sample(std::mt19937_64& gen, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(gen() % 7);
  return v;
}

}  // namespace

TEST(Wasserstein, Examples) {
  EXPECT_DOUBLE_EQ(wasserstein_1d(std::vector<double>{0, 2}, std::vector<double>{1, 3}), 1.0);
  EXPECT_DOUBLE_EQ(wasserstein_1d(std::vector<double>{0}, std::vector<double>{5}), 5.0);
  EXPECT_EQ(wasserstein_1d(std::vector<double>{1, 4, 2}, std::vector<double>{2, 1, 4}), 0.0);
  EXPECT_DOUBLE_EQ(wasserstein_1d(std::vector<double>{0, 0, 0, 1}, std::vector<double>{0, 1, 1, 1}), 0.5);
  EXPECT_OODCAL_ERROR(wasserstein_1d(std::vector<double>{}, std::vector<double>{1}), ErrorCode::EmptyInput);
}

TEST(Wasserstein, MatchesQuantileOracle) {
  std::mt19937_64 gen(21);
  for (int t = 0; t < 100; ++t) {
    const std::size_t na = 1 + gen() % 120, nb = 1 + gen() % 120;
    const auto a = t % 2 ? tied_sample(gen, na) : normal_sample(gen, na, 0, 1);
    const auto b = t % 2 ? tied_sample(gen, nb) : normal_sample(gen, nb, 0.5, 2);
    EXPECT_NEAR(wasserstein_1d(a, b), oracle::wasserstein_quantile(a, b), 1e-9);
  }
}

TEST(Energy, Examples) {
  EXPECT_DOUBLE_EQ(energy_distance(std::vector<double>{0}, std::vector<double>{1}), std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(energy_distance(std::vector<double>{0}, std::vector<double>{4}), 2 * std::sqrt(2.0));
  EXPECT_EQ(energy_distance(std::vector<double>{3, 1, 2}, std::vector<double>{1, 2, 3}), 0.0);
  // 2E|X-Y| = 2, E|X-X'| = 1 over ordered pairs with self-pairs, E|Y-Y'| = 0
  EXPECT_DOUBLE_EQ(energy_distance(std::vector<double>{0, 2}, std::vector<double>{1}), 1.0);
}

TEST(Energy, MatchesPairwiseOracle) {
  std::mt19937_64 gen(22);
  for (int t = 0; t < 100; ++t) {
    const std::size_t na = 1 + gen() % 150, nb = 1 + gen() % 150;
    const auto a = t % 2 ? tied_sample(gen, na) : normal_sample(gen, na, 0, 1);
    const auto b = t % 2 ? tied_sample(gen, nb) : normal_sample(gen, nb, 1, 3);
    EXPECT_NEAR(energy_distance(a, b), oracle::energy_distance(a, b), 1e-9);
  }
}

TEST(Distances, MetricProperties) {
  std::mt19937_64 gen(23);
  for (int t = 0; t < 40; ++t) {
    const auto a = normal_sample(gen, 1 + gen() % 60, 0, 1);
    const auto b = normal_sample(gen, 1 + gen() % 60, 1, 2);
    const auto c = normal_sample(gen, 1 + gen() % 60, -1, 0.5);
    for (auto d : {&wasserstein_1d, &energy_distance}) {
      EXPECT_NEAR(d(a, b), d(b, a), 1e-12);
      EXPECT_LE(d(a, c), d(a, b) + d(b, c) + 1e-12);
      EXPECT_GE(d(a, b), 0.0);

      auto perm = a;
      std::shuffle(perm.begin(), perm.end(), gen);
      auto dup = b;
      dup.insert(dup.end(), b.begin(), b.end());
      EXPECT_NEAR(d(perm, dup), d(a, b), 1e-12);
    }
    // shifting one sample moves W1 by |s|; shifting both changes nothing
    const double s = 2.5;
    auto shifted = a;
    for (auto& x : shifted) x += s;
    EXPECT_NEAR(wasserstein_1d(a, shifted), s, 1e-12);
    auto both_a = a, both_b = b;
    for (auto& x : both_a) x += s;
    for (auto& x : both_b) x += s;
    EXPECT_NEAR(energy_distance(both_a, both_b), energy_distance(a, b), 1e-9);
  }
}

TEST(Pearson, ExamplesAndErrors) {
  EXPECT_DOUBLE_EQ(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}), 1.0);
  EXPECT_DOUBLE_EQ(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}), -1.0);
  EXPECT_NEAR(pearson(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}), 0.8, 1e-15);
  EXPECT_OODCAL_ERROR(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), ErrorCode::ConstantInput);
  EXPECT_OODCAL_ERROR(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), ErrorCode::LengthMismatch);
  EXPECT_OODCAL_ERROR(pearson(std::vector<double>{1}, std::vector<double>{1}), ErrorCode::LengthMismatch);
}

TEST(Pearson, MatchesOracle) {
  std::mt19937_64 gen(24);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + gen() % 200;
    const auto x = normal_sample(gen, n, 3, 2);
    auto y = normal_sample(gen, n, 0, 1);
    for (std::size_t i = 0; i < n; ++i) y[i] += 0.3 * static_cast<double>(t % 5) * x[i];
    EXPECT_NEAR(pearson(x, y), oracle::pearson(x, y), 1e-12);
  }
}

TEST(Spearman, TiesAndOracle) {
  EXPECT_EQ(average_ranks(std::vector<double>{10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
  EXPECT_DOUBLE_EQ(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 8, 27, 64}), 1.0);
  std::mt19937_64 gen(25);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 3 + gen() % 100;
    const auto x = tied_sample(gen, n), y = tied_sample(gen, n);
    try {
      EXPECT_NEAR(spearman(x, y), oracle::spearman(x, y), 1e-12);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ConstantInput);
    }
  }
}

TEST(DistanceTable, OrderAndIdentity) {
  const std::vector<double> id{0, 1, 2, 3};
  const auto table = distance_table(id, {{"same", id}, {"far", {10, 11, 12, 13}}, {"near", {1, 2, 3, 4}}});
  ASSERT_EQ(table.size(), 3u);
  EXPECT_EQ(table[0].ood_set, "same");
  EXPECT_EQ(table[0].wasserstein, 0.0);
  EXPECT_EQ(table[0].energy, 0.0);
  EXPECT_EQ(table[1].ood_set, "far");
  EXPECT_DOUBLE_EQ(table[1].wasserstein, 10.0);
  EXPECT_DOUBLE_EQ(table[2].wasserstein, 1.0);
  EXPECT_GT(table[1].energy, table[2].energy);
  EXPECT_OODCAL_ERROR(distance_table(std::vector<double>{}, {}), ErrorCode::EmptyInput);
}

TEST(DistanceTable, MonotoneInShift) {
  std::mt19937_64 gen(26);
  const auto id = normal_sample(gen, 300, 0, 1);
  const auto base = normal_sample(gen, 300, 0, 1);
  std::vector<NamedSample> sets;
  for (double s : {0.5, 1.0, 2.0, 4.0}) {
    auto v = base;
    for (auto& x : v) x -= s;
    sets.push_back({std::to_string(s), v});
  }
  const auto table = distance_table(id, sets);
  for (std::size_t i = 1; i < table.size(); ++i) {
    EXPECT_GT(table[i].wasserstein, table[i - 1].wasserstein);
    EXPECT_GT(table[i].energy, table[i - 1].energy);
  }
}

TEST(Correlate, MonotoneConstruction) {
  // harder sets sit closer to the ID sample
  const std::vector<OodSetRate> rates{{"a", 0.9}, {"b", 0.5}, {"c", 0.1}};
  const std::vector<DistancePair> dist{{"a", 1.0, 0.2}, {"b", 3.0, 0.6}, {"c", 5.0, 1.0}};
  const auto r = correlate_difficulty(rates, dist);
  EXPECT_DOUBLE_EQ(r.wasserstein_r, -1.0);
  EXPECT_DOUBLE_EQ(r.energy_r, -1.0);
}

TEST(Correlate, Errors) {
  const std::vector<OodSetRate> rates{{"a", 0.9}, {"b", 0.5}};
  EXPECT_OODCAL_ERROR(correlate_difficulty(rates, {{"a", 1, 1}, {"x", 2, 2}}), ErrorCode::SetNameMismatch);
  EXPECT_OODCAL_ERROR(correlate_difficulty(rates, {{"a", 1, 1}}), ErrorCode::SetNameMismatch);
  EXPECT_OODCAL_ERROR(correlate_difficulty(rates, {{"a", 1, 1}, {"b", 1, 2}}), ErrorCode::ConstantInput);
}

namespace {

struct BlobData {
  LogitDataset fit, valid_id;
  std::vector<LogitDataset> ood;
};

BlobData blobs() {
  const std::vector<std::vector<double>> centers{{0, 0}, {6, 0}, {0, 6}};
  return {synthetic::feature_blobs(centers, 40, 1.0, 1, DatasetKind::in_distribution, "fit"),
          synthetic::feature_blobs(centers, 30, 1.0, 2, DatasetKind::in_distribution, "vid"),
          {synthetic::feature_blobs({{3, 3}}, 50, 1.5, 3, DatasetKind::out_of_distribution, "mid"),
           synthetic::feature_blobs({{40, 40}}, 50, 1.0, 4, DatasetKind::out_of_distribution, "far")}};
}

}  // namespace

TEST(GridSearch, KnnRowsMatchDirectEvaluation) {
  const auto d = blobs();
  GridSpec g;
  g.k = {1, 5};
  g.metric = {Metric::euclidean, Metric::manhattan, Metric::chebyshev};
  g.aggregation = {Aggregation::mean, Aggregation::largest};
  const auto res = grid_search(g, d.fit, d.valid_id, d.ood, 0.9, Scheme::one);
  ASSERT_EQ(res.rows.size(), 12u);
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    const auto& row = res.rows[i];
    EXPECT_EQ(row.config, i);
    const auto det = fit_knn(d.fit, row.params["k"].get<std::size_t>(),
                             parse_metric(row.params["metric"].get<std::string>()),
                             parse_aggregation(row.params["aggregation"].get<std::string>()));
    const auto id_s = score_dataset(det, d.valid_id);
    const auto model = fit_threshold(id_s, Scheme::one, 0.9, 3);
    double mean = 0;
    for (const auto& o : d.ood) mean += missed_detection_rate(score_dataset(det, o), model);
    EXPECT_DOUBLE_EQ(row.mean_missed_detection, mean / 2);
    EXPECT_DOUBLE_EQ(row.min_tpr, 1.0 - false_alarm_rate(id_s, model));
  }
  EXPECT_EQ(res.rows[0].params["k"], 1);
  EXPECT_EQ(res.rows[1].params["aggregation"], "largest");
  EXPECT_EQ(res.rows[2].params["metric"], "manhattan");
}

TEST(GridSearch, BestFollowsRateThenTprThenOrder) {
  const auto d = blobs();
  GridSpec g;
  g.k = {1, 3, 10};
  g.metric = {Metric::euclidean, Metric::braycurtis};
  g.aggregation = {Aggregation::mean, Aggregation::median, Aggregation::largest};
  const auto res = grid_search(g, d.fit, d.valid_id, d.ood, 0.95, Scheme::one);
  std::size_t best = 0;
  for (std::size_t i = 1; i < res.rows.size(); ++i) {
    const auto &c = res.rows[i], &b = res.rows[best];
    if (std::tie(c.mean_missed_detection, b.min_tpr) < std::tie(b.mean_missed_detection, c.min_tpr)) best = i;
  }
  EXPECT_EQ(res.best, best);
}

TEST(GridSearch, SeparableSetWinsWithZeroRate) {
  auto d = blobs();
  d.ood.erase(d.ood.begin());
  GridSpec g;
  g.k = {2};
  g.metric = {Metric::euclidean};
  g.aggregation = {Aggregation::mean};
  const auto res = grid_search(g, d.fit, d.valid_id, d.ood, 0.95, Scheme::one);
  ASSERT_EQ(res.rows.size(), 1u);
  EXPECT_EQ(res.best, 0u);
  EXPECT_EQ(res.rows[0].mean_missed_detection, 0.0);
}

TEST(GridSearch, TemperatureFamilyAndMulti) {
  const auto id = synthetic::id_logits({}, 60, 5);
  const auto fit = synthetic::id_logits({}, 10, 6);
  const std::vector<LogitDataset> ood{synthetic::ood_logits(10, 200, 9, 2, 7)};
  GridSpec g;
  g.family = GridFamily::energy;
  g.temperature = {0.5, 1, 10};
  const auto res = grid_search(g, fit, id, ood, 0.9, Scheme::multi);
  ASSERT_EQ(res.rows.size(), 3u);
  for (const auto& row : res.rows) {
    const EnergyDetector det{row.params["temperature"].get<double>()};
    const auto s = score_dataset(det, id);
    const auto model = fit_threshold(s, Scheme::multi, 0.9, 10);
    EXPECT_DOUBLE_EQ(row.mean_missed_detection, missed_detection_rate(score_dataset(det, ood[0]), model));
    EXPECT_DOUBLE_EQ(row.min_tpr, *per_class_tpr(s, model, 10).min);
  }
  const auto again = grid_search(g, fit, id, ood, 0.9, Scheme::multi);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(again.rows[i].mean_missed_detection, res.rows[i].mean_missed_detection);
}

TEST(GridSearch, Errors) {
  const auto d = blobs();
  GridSpec g;
  g.k = {500};
  g.metric = {Metric::euclidean};
  g.aggregation = {Aggregation::mean};
  EXPECT_OODCAL_ERROR(grid_search(g, d.fit, d.valid_id, d.ood, 0.9, Scheme::one), ErrorCode::KExceedsReferenceSize);
  g.k = {};
  EXPECT_OODCAL_ERROR(grid_search(g, d.fit, d.valid_id, d.ood, 0.9, Scheme::one), ErrorCode::InvalidArgument);
  g.k = {1};
  EXPECT_OODCAL_ERROR(grid_search(g, d.fit, d.valid_id, {}, 0.9, Scheme::one), ErrorCode::EmptyInput);
  EXPECT_OODCAL_ERROR(grid_search(g, d.fit, d.valid_id, d.ood, 1.0, Scheme::one), ErrorCode::BetaOutOfRange);
}

TEST(GridSearch, FromJson) {
  const auto g = grid_from_json(nlohmann::json::parse(
      R"({"detector": "knn", "k": [1, 2], "metric": ["euclidean", "minkowski"], "aggregation": ["median"], "p": 3})"));
  EXPECT_EQ(g.size(), 4u);
  EXPECT_EQ(g.p, 3.0);
  EXPECT_EQ(grid_from_json(nlohmann::json::parse(R"({"detector": "max-softmax", "temperature": [1]})")).family,
            GridFamily::max_softmax);
  EXPECT_OODCAL_ERROR(grid_from_json(nlohmann::json::parse(R"({"detector": "knn", "k": [1]})")),
                      ErrorCode::InvalidArgument);
  EXPECT_OODCAL_ERROR(grid_from_json(nlohmann::json::parse(R"({"detector": "svm"})")), ErrorCode::InvalidArgument);
  EXPECT_OODCAL_ERROR(grid_from_json(nlohmann::json::parse(R"({"detector": "energy", "temperature": []})")),
                      ErrorCode::InvalidArgument);
}
