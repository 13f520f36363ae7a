#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "oodcal/calibrate.hpp"
#include "oodcal/dataset.hpp"
#include "oodcal/error.hpp"
#include "oodcal/evaluate.hpp"
#include "oodcal/scores.hpp"

namespace oodcal {

// ---------------------------------------------------------------------------
// One-dimensional distances between empirical distributions
// ---------------------------------------------------------------------------

namespace detail {

// Integral over t of |F_a(t) - F_b(t)|^power for the empirical CDFs, by a
// single sweep over the merged sorted samples.
inline double cdf_gap_integral(std::span<const double> a, std::span<const double> b, int power) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyInput, "distance between empty samples");
  std::vector<double> as(a.begin(), a.end()), bs(b.begin(), b.end());
  std::sort(as.begin(), as.end());
  std::sort(bs.begin(), bs.end());
  const double na = static_cast<double>(as.size()), nb = static_cast<double>(bs.size());
  std::size_t i = 0, j = 0;
  double prev = std::min(as.front(), bs.front());
  double total = 0.0;
  while (i < as.size() || j < bs.size()) {
    const double x = (j == bs.size() || (i < as.size() && as[i] <= bs[j])) ? as[i] : bs[j];
    const double gap = std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb);
    total += (power == 1 ? gap : gap * gap) * (x - prev);
    while (i < as.size() && as[i] == x) ++i;
    while (j < bs.size() && bs[j] == x) ++j;
    prev = x;
  }
  return total;
}

}  // namespace detail

/// 1-Wasserstein distance: integral of |F_a - F_b|.
inline double wasserstein_1d(std::span<const double> a, std::span<const double> b) {
  return detail::cdf_gap_integral(a, b, 1);
}

/// Energy distance D = sqrt(2E|X-Y| - E|X-X'| - E|Y-Y'|), expectations over
/// all ordered pairs (self-pairs included). Evaluated through the identity
/// D^2 = 2 * integral (F_a - F_b)^2, which is O(n log n).
inline double energy_distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(std::max(0.0, 2.0 * detail::cdf_gap_integral(a, b, 2)));
}

// ---------------------------------------------------------------------------
// Correlation
// ---------------------------------------------------------------------------

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "pearson inputs differ in length");
  if (x.size() < 2) throw Error(ErrorCode::LengthMismatch, "pearson needs at least 2 pairs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::ConstantInput, "pearson of a constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Ranks starting at 1; ties share their average rank.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return x[l] < x[r]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "spearman inputs differ in length");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

// ---------------------------------------------------------------------------
// Distance tables
// ---------------------------------------------------------------------------

struct DistancePair {
  std::string ood_set;
  double wasserstein = 0.0;
  double energy = 0.0;
};

struct NamedSample {
  std::string name;
  std::vector<double> values;
};

/// Distances between the ID score sample and each OoD score sample (callers
/// pass max-logit scores), in input order.
inline std::vector<DistancePair> distance_table(std::span<const double> id_scores, const std::vector<NamedSample>& ood) {
  if (id_scores.empty()) throw Error(ErrorCode::EmptyInput, "empty ID score sample");
  std::vector<DistancePair> out;
  out.reserve(ood.size());
  for (const auto& set : ood)
    out.push_back({set.name, wasserstein_1d(id_scores, set.values), energy_distance(id_scores, set.values)});
  return out;
}

struct DifficultyCorrelation {
  double wasserstein_r = 0.0;
  double energy_r = 0.0;
};

/// Pearson r between missed-detection rates and each distance column. Set
/// names must line up position by position.
inline DifficultyCorrelation correlate_difficulty(const std::vector<OodSetRate>& rates,
                                                  const std::vector<DistancePair>& distances) {
  if (rates.size() != distances.size())
    throw Error(ErrorCode::SetNameMismatch, "rates and distances cover different numbers of OoD sets");
  std::vector<double> r, w, e;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (rates[i].name != distances[i].ood_set)
      throw Error(ErrorCode::SetNameMismatch, "'" + rates[i].name + "' vs '" + distances[i].ood_set + "'", i);
    r.push_back(rates[i].missed_detection_rate);
    w.push_back(distances[i].wasserstein);
    e.push_back(distances[i].energy);
  }
  return {pearson(r, w), pearson(r, e)};
}

// ---------------------------------------------------------------------------
// Best-case hyperparameter grid search
// ---------------------------------------------------------------------------

enum class GridFamily { knn, energy, max_softmax };

struct GridSpec {
  GridFamily family = GridFamily::knn;
  std::vector<std::size_t> k;
  std::vector<Metric> metric;
  std::vector<Aggregation> aggregation;
  double p = 2.0;
  std::vector<double> temperature;

  std::size_t size() const {
    return family == GridFamily::knn ? k.size() * metric.size() * aggregation.size() : temperature.size();
  }

  void validate() const {
    if (family == GridFamily::knn) {
      if (k.empty() || metric.empty() || aggregation.empty())
        throw Error(ErrorCode::InvalidArgument, "knn grid needs non-empty k, metric and aggregation lists");
      for (auto kk : k)
        if (kk < 1) throw Error(ErrorCode::InvalidArgument, "grid k must be >= 1");
    } else if (temperature.empty()) {
      throw Error(ErrorCode::InvalidArgument, "grid needs a non-empty temperature list");
    }
  }
};

/// {"detector": "knn", "k": [...], "metric": [...], "aggregation": [...], "p": 2}
/// or {"detector": "energy"|"max-softmax", "temperature": [...]}.
inline GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g;
  try {
    const auto family = j.at("detector").get<std::string>();
    if (family == "knn") {
      g.family = GridFamily::knn;
      g.k = j.at("k").get<std::vector<std::size_t>>();
      for (const auto& m : j.at("metric")) g.metric.push_back(parse_metric(m.get<std::string>()));
      for (const auto& a : j.at("aggregation")) g.aggregation.push_back(parse_aggregation(a.get<std::string>()));
      g.p = j.value("p", 2.0);
    } else if (family == "energy" || family == "max-softmax") {
      g.family = family == "energy" ? GridFamily::energy : GridFamily::max_softmax;
      g.temperature = j.at("temperature").get<std::vector<double>>();
    } else {
      throw Error(ErrorCode::InvalidArgument, "grid detector must be knn, energy or max-softmax");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad grid file: ") + e.what());
  }
  g.validate();
  return g;
}

struct GridRow {
  std::size_t config = 0;  // declaration order
  nlohmann::ordered_json params;
  double mean_missed_detection = 0.0;
  double min_tpr = 0.0;
};

struct GridResult {
  std::vector<GridRow> rows;  // declaration order
  std::size_t best = 0;       // index into rows
};

namespace detail {

// Per query row: its k_max smallest reference distances, ascending.
inline std::vector<std::vector<double>> nearest_distances(const LogitDataset& queries, const KnnDetector& ref,
                                                          std::size_t k_max) {
  std::vector<std::vector<double>> out(queries.size());
  std::vector<double> d(ref.reference_size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& x = queries[q].values;
    if (x.size() != ref.dim) throw Error(ErrorCode::DimensionMismatch, "query width differs from reference", q + 1);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = distance(x, ref.reference_row(i), ref.metric, ref.p);
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k_max), d.end());
    out[q].assign(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k_max));
  }
  return out;
}

inline ScoreVector knn_scores_from_cache(const std::vector<std::vector<double>>& cache, const LogitDataset& ds,
                                         std::size_t k, Aggregation aggregation) {
  ScoreVector sv;
  sv.scores.reserve(cache.size());
  std::vector<double> tmp;
  for (const auto& row : cache) {
    tmp.assign(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k));
    sv.scores.push_back(aggregate_k_smallest(tmp, k, aggregation));
  }
  if (ds.column_kind() == ColumnKind::logits) {
    sv.activated.emplace();
    for (const auto& r : ds.rows()) sv.activated->push_back(argmax_class(r.values));
  }
  return sv;
}

inline GridRow evaluate_config(std::size_t config, nlohmann::ordered_json params, const ScoreVector& id_scores,
                               const std::vector<ScoreVector>& ood_scores, Scheme scheme, double beta,
                               std::size_t num_classes) {
  const auto model = fit_threshold(id_scores, scheme, beta, num_classes);
  GridRow row{config, std::move(params), 0.0, 0.0};
  for (const auto& o : ood_scores) row.mean_missed_detection += missed_detection_rate(o, model);
  row.mean_missed_detection /= static_cast<double>(ood_scores.size());
  if (id_scores.activated) {
    const auto t = per_class_tpr(id_scores, model, num_classes);
    row.min_tpr = t.min.value_or(0.0);
  } else {
    row.min_tpr = 1.0 - false_alarm_rate(id_scores, model);
  }
  return row;
}

}  // namespace detail

/// Exhaustive best-case search: every configuration is fitted on `fit_data`,
/// thresholded on `valid_id` and ranked by mean missed detection over
/// `valid_ood` (ties: higher min per-class TPR, then declaration order).
inline GridResult grid_search(const GridSpec& grid, const LogitDataset& fit_data, const LogitDataset& valid_id,
                              const std::vector<LogitDataset>& valid_ood, double beta, Scheme scheme) {
  grid.validate();
  check_beta(beta);
  if (fit_data.empty() || valid_id.empty() || valid_ood.empty())
    throw Error(ErrorCode::EmptyInput, "grid search needs non-empty fit, ID and OoD data");
  for (const auto& o : valid_ood)
    if (o.empty()) throw Error(ErrorCode::EmptyInput, "OoD validation set '" + o.name() + "' is empty");
  const std::size_t num_classes = valid_id.num_classes();

  GridResult result;
  if (grid.family == GridFamily::knn) {
    const auto k_max = *std::max_element(grid.k.begin(), grid.k.end());
    if (k_max > fit_data.size())
      throw Error(ErrorCode::KExceedsReferenceSize, "grid k exceeds the fit set size");
    // distances depend only on the metric; reuse them across k and aggregation
    std::vector<std::vector<std::vector<double>>> id_cache(grid.metric.size());
    std::vector<std::vector<std::vector<std::vector<double>>>> ood_cache(grid.metric.size());
    for (std::size_t m = 0; m < grid.metric.size(); ++m) {
      const auto ref = fit_knn(fit_data, k_max, grid.metric[m], Aggregation::largest, grid.p);
      id_cache[m] = detail::nearest_distances(valid_id, ref, k_max);
      for (const auto& o : valid_ood) ood_cache[m].push_back(detail::nearest_distances(o, ref, k_max));
    }
    std::size_t config = 0;
    for (auto k : grid.k)
      for (std::size_t m = 0; m < grid.metric.size(); ++m)
        for (auto agg : grid.aggregation) {
          nlohmann::ordered_json params;
          params["k"] = k;
          params["metric"] = std::string(to_string(grid.metric[m]));
          params["aggregation"] = std::string(to_string(agg));
          const auto id_scores = detail::knn_scores_from_cache(id_cache[m], valid_id, k, agg);
          std::vector<ScoreVector> ood_scores;
          for (std::size_t o = 0; o < valid_ood.size(); ++o)
            ood_scores.push_back(detail::knn_scores_from_cache(ood_cache[m][o], valid_ood[o], k, agg));
          result.rows.push_back(
              detail::evaluate_config(config++, std::move(params), id_scores, ood_scores, scheme, beta, num_classes));
        }
  } else {
    for (std::size_t c = 0; c < grid.temperature.size(); ++c) {
      const double t = grid.temperature[c];
      DetectorModel model = grid.family == GridFamily::energy ? DetectorModel{EnergyDetector{t}}
                                                              : DetectorModel{MaxSoftmaxDetector{t}};
      nlohmann::ordered_json params;
      params["temperature"] = t;
      const auto id_scores = score_dataset(model, valid_id);
      std::vector<ScoreVector> ood_scores;
      for (const auto& o : valid_ood) ood_scores.push_back(score_dataset(model, o));
      result.rows.push_back(
          detail::evaluate_config(c, std::move(params), id_scores, ood_scores, scheme, beta, num_classes));
    }
  }

  for (std::size_t i = 1; i < result.rows.size(); ++i) {
    const auto& cand = result.rows[i];
    const auto& best = result.rows[result.best];
    if (cand.mean_missed_detection < best.mean_missed_detection ||
        (cand.mean_missed_detection == best.mean_missed_detection && cand.min_tpr > best.min_tpr))
      result.best = i;
  }
  return result;
}

}  // namespace oodcal
