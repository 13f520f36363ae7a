#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oodcal/calibrate.hpp"
#include "oodcal/dataset.hpp"
#include "oodcal/error.hpp"
#include "oodcal/scores.hpp"

namespace oodcal {

/// Per-activated-class acceptance rates. Classes with no samples have an
/// undefined TPR and are left out of the summary statistics.
struct ClassTpr {
  std::vector<std::optional<double>> tpr;
  std::vector<std::size_t> counts;
  std::vector<std::size_t> accepted;
  std::optional<double> min, max, std;  // population std over defined classes

  std::vector<std::size_t> undefined_classes() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < tpr.size(); ++j)
      if (!tpr[j]) out.push_back(j);
    return out;
  }

  std::vector<double> defined() const {
    std::vector<double> out;
    for (const auto& t : tpr)
      if (t) out.push_back(*t);
    return out;
  }
};

inline double population_std(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

inline void summarize(ClassTpr& t) {
  const auto d = t.defined();
  if (d.empty()) {
    t.min = t.max = t.std = std::nullopt;
    return;
  }
  t.min = *std::min_element(d.begin(), d.end());
  t.max = *std::max_element(d.begin(), d.end());
  t.std = population_std(d);
}

/// Groups samples by activated class. `num_classes` of 0 means "take it
/// from the model".
inline ClassTpr per_class_tpr(const ScoreVector& id_scores, const ThresholdModel& model, std::size_t num_classes = 0) {
  if (!id_scores.activated) throw Error(ErrorCode::MissingActivated, "per-class TPR needs activated classes");
  const std::size_t k = num_classes > 0 ? num_classes : model.num_classes();
  const auto decisions = decide(id_scores, model);
  ClassTpr out;
  out.counts.assign(k, 0);
  out.accepted.assign(k, 0);
  const auto& act = *id_scores.activated;
  for (std::size_t i = 0; i < act.size(); ++i) {
    if (act[i] >= k) throw Error(ErrorCode::ClassIndexOutOfRange, "activated class " + std::to_string(act[i]), i);
    ++out.counts[act[i]];
    if (decisions[i] == Decision::id) ++out.accepted[act[i]];
  }
  out.tpr.resize(k);
  for (std::size_t j = 0; j < k; ++j)
    if (out.counts[j] > 0) out.tpr[j] = static_cast<double>(out.accepted[j]) / static_cast<double>(out.counts[j]);
  summarize(out);
  return out;
}

/// Fraction of OoD samples accepted as ID.
inline double missed_detection_rate(const ScoreVector& ood_scores, const ThresholdModel& model) {
  if (ood_scores.empty()) throw Error(ErrorCode::EmptyScores, "missed-detection rate of an empty OoD set");
  const auto decisions = decide(ood_scores, model);
  const auto missed = std::count(decisions.begin(), decisions.end(), Decision::id);
  return static_cast<double>(missed) / static_cast<double>(decisions.size());
}

/// Fraction of ID samples flagged as OoD.
inline double false_alarm_rate(const ScoreVector& id_scores, const ThresholdModel& model) {
  if (id_scores.empty()) throw Error(ErrorCode::EmptyScores, "false-alarm rate of an empty set");
  const auto decisions = decide(id_scores, model);
  const auto flagged = std::count(decisions.begin(), decisions.end(), Decision::ood);
  return static_cast<double>(flagged) / static_cast<double>(decisions.size());
}

struct NamedScores {
  std::string name;
  ScoreVector scores;
};

struct OodSetRate {
  std::string name;
  double missed_detection_rate = 0.0;
};

struct EvaluationReport {
  std::string detector;
  Scheme scheme = Scheme::one;
  double beta = 0.95;
  ClassTpr tpr;
  std::vector<OodSetRate> per_ood_set;
  std::optional<double> mean_missed_detection;  // unweighted over sets
};

inline EvaluationReport build_report(std::string detector, const ThresholdModel& model, const ScoreVector& id_scores,
                                     const std::vector<NamedScores>& ood_sets, std::size_t num_classes = 0) {
  EvaluationReport r;
  r.detector = std::move(detector);
  r.scheme = model.scheme;
  r.beta = model.beta;
  r.tpr = per_class_tpr(id_scores, model, num_classes);
  double total = 0.0;
  for (const auto& set : ood_sets) {
    const double rate = missed_detection_rate(set.scores, model);
    r.per_ood_set.push_back({set.name, rate});
    total += rate;
  }
  if (!ood_sets.empty()) r.mean_missed_detection = total / static_cast<double>(ood_sets.size());
  return r;
}

inline double round4(double x) { return std::round(x * 1e4) / 1e4; }

inline nlohmann::ordered_json report_to_json(const EvaluationReport& r) {
  auto opt = [](const std::optional<double>& x) -> nlohmann::ordered_json {
    return x ? nlohmann::ordered_json(round4(*x)) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["detector"] = r.detector;
  j["scheme"] = std::string(to_string(r.scheme));
  j["beta"] = r.beta;
  auto tprs = nlohmann::ordered_json::array();
  for (const auto& t : r.tpr.tpr) tprs.push_back(opt(t));
  j["per_class_tpr"] = std::move(tprs);
  j["per_class_count"] = r.tpr.counts;
  j["undefined_tpr_classes"] = r.tpr.undefined_classes();
  j["tpr_min"] = opt(r.tpr.min);
  j["tpr_max"] = opt(r.tpr.max);
  j["tpr_std"] = opt(r.tpr.std);
  auto sets = nlohmann::ordered_json::array();
  for (const auto& s : r.per_ood_set) {
    nlohmann::ordered_json e;
    e["name"] = s.name;
    e["missed_detection_rate"] = round4(s.missed_detection_rate);
    sets.push_back(std::move(e));
  }
  j["per_ood_set"] = std::move(sets);
  if (r.mean_missed_detection) j["mean_missed_detection"] = round4(*r.mean_missed_detection);
  return j;
}

/// `class,tpr` rows; undefined TPRs are left empty.
inline void write_tpr_csv(std::ostream& out, const EvaluationReport& r) {
  std::string buf = "class,tpr\n";
  for (std::size_t j = 0; j < r.tpr.tpr.size(); ++j) {
    buf += std::to_string(j) + ",";
    if (r.tpr.tpr[j]) detail::append_real(buf, *r.tpr.tpr[j]);
    buf += '\n';
  }
  out << buf;
}

inline void write_rates_csv(std::ostream& out, const EvaluationReport& r) {
  std::string buf = "ood_set,missed_detection_rate\n";
  for (const auto& s : r.per_ood_set) {
    buf += s.name + ",";
    detail::append_real(buf, s.missed_detection_rate);
    buf += '\n';
  }
  out << buf;
}

}  // namespace oodcal
