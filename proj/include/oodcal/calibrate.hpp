#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "oodcal/error.hpp"
#include "oodcal/scores.hpp"

namespace oodcal {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Scheme { one, multi };

inline std::string_view to_string(Scheme s) { return s == Scheme::one ? "one" : "multi"; }

inline Scheme parse_scheme(std::string_view s) {
  if (s == "one") return Scheme::one;
  if (s == "multi") return Scheme::multi;
  throw Error(ErrorCode::InvalidArgument, "scheme must be 'one' or 'multi'");
}

enum class Decision : unsigned char { id, ood };

/// Fitted TPR-beta cutoffs. ONE holds a single tau; MULTI one tau per
/// activated class (+inf = never flag). fit_counts are per-class validation
/// counts when activated classes were known, otherwise a single total.
struct ThresholdModel {
  Scheme scheme = Scheme::one;
  double beta = 0.95;
  std::vector<double> taus;
  std::vector<std::size_t> fit_counts;

  double tau() const { return taus.at(0); }
  std::size_t num_classes() const noexcept { return scheme == Scheme::multi ? taus.size() : fit_counts.size(); }

  /// Classes that had no validation samples (MULTI only).
  std::vector<std::size_t> empty_classes() const {
    std::vector<std::size_t> out;
    if (scheme != Scheme::multi) return out;
    for (std::size_t j = 0; j < fit_counts.size(); ++j)
      if (fit_counts[j] == 0) out.push_back(j);
    return out;
  }

  friend bool operator==(const ThresholdModel&, const ThresholdModel&) = default;
};

inline void check_beta(double beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw Error(ErrorCode::BetaOutOfRange, "beta must lie in (0, 1)");
}

/// Order-statistic cutoff: with m = ceil(beta * n), tau is the smallest value
/// strictly above the m-th smallest score (ties advance past), or +inf. At
/// most n - m of the fitting scores satisfy S >= tau.
namespace detail {

inline std::uint64_t cutoff_rank(std::uint64_t n, double beta) {
  const double target = beta * static_cast<double>(n);
  // shave relative rounding so e.g. 0.55 * 100 is 55, not 55.000000000000007
  return static_cast<std::uint64_t>(std::ceil(target - target * 1e-12));
}

}  // namespace detail

inline double tpr_beta_cutoff(std::vector<double> values, double beta) {
  check_beta(beta);
  if (values.empty()) throw Error(ErrorCode::EmptyScores, "cannot fit a threshold on zero scores");
  const auto n = values.size();
  const auto m = static_cast<std::size_t>(detail::cutoff_rank(n, beta));
  if (m >= n) return kInf;
  auto mth = values.begin() + static_cast<std::ptrdiff_t>(m - 1);
  std::nth_element(values.begin(), mth, values.end());
  const double v = *mth;
  double tau = kInf;
  for (auto it = mth + 1; it != values.end(); ++it)
    if (*it > v && *it < tau) tau = *it;
  return tau;
}

namespace detail {

inline std::vector<std::size_t> activated_counts(const std::vector<std::size_t>& activated, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < activated.size(); ++i) {
    if (activated[i] >= num_classes)
      throw Error(ErrorCode::ClassIndexOutOfRange, "activated class " + std::to_string(activated[i]), i);
    ++counts[activated[i]];
  }
  return counts;
}

}  // namespace detail

/// Single global cutoff. Passing num_classes (with activated classes present)
/// records per-class fit counts.
inline ThresholdModel fit_threshold_one(const ScoreVector& scores, double beta, std::size_t num_classes = 0) {
  check_beta(beta);
  ThresholdModel model{Scheme::one, beta, {tpr_beta_cutoff(scores.scores, beta)}, {}};
  if (num_classes > 0 && scores.activated)
    model.fit_counts = detail::activated_counts(*scores.activated, num_classes);
  else
    model.fit_counts = {scores.size()};
  return model;
}

/// Per-activated-class cutoffs; an empty partition gets +inf.
inline ThresholdModel fit_threshold_multi(const ScoreVector& scores, double beta, std::size_t num_classes) {
  check_beta(beta);
  if (!scores.activated) throw Error(ErrorCode::MissingActivated, "MULTI needs activated classes (logit data)");
  if (num_classes < 1) throw Error(ErrorCode::InvalidArgument, "num_classes must be positive");
  const auto& act = *scores.activated;
  ThresholdModel model{Scheme::multi, beta, std::vector<double>(num_classes, kInf),
                       detail::activated_counts(act, num_classes)};
  std::vector<std::vector<double>> parts(num_classes);
  for (std::size_t j = 0; j < num_classes; ++j) parts[j].reserve(model.fit_counts[j]);
  for (std::size_t i = 0; i < act.size(); ++i) parts[act[i]].push_back(scores.scores[i]);
  for (std::size_t j = 0; j < num_classes; ++j)
    if (!parts[j].empty()) model.taus[j] = tpr_beta_cutoff(std::move(parts[j]), beta);
  return model;
}

inline ThresholdModel fit_threshold(const ScoreVector& scores, Scheme scheme, double beta, std::size_t num_classes) {
  return scheme == Scheme::one ? fit_threshold_one(scores, beta, num_classes)
                               : fit_threshold_multi(scores, beta, num_classes);
}

/// Threshold that applies to a sample activating `activated_class`.
inline double threshold_for(const ThresholdModel& model, std::size_t activated_class) {
  if (model.scheme == Scheme::one) return model.tau();
  if (activated_class >= model.taus.size())
    throw Error(ErrorCode::ClassIndexOutOfRange, "activated class " + std::to_string(activated_class));
  return model.taus[activated_class];
}

/// Inclusive boundary: ood iff S >= tau (tau of the activated class under MULTI).
inline std::vector<Decision> decide(const ScoreVector& scores, const ThresholdModel& model) {
  std::vector<Decision> out(scores.size());
  if (model.scheme == Scheme::one) {
    const double tau = model.tau();
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores.scores[i] >= tau ? Decision::ood : Decision::id;
    return out;
  }
  if (!scores.activated) throw Error(ErrorCode::MissingActivated, "MULTI decisions need activated classes");
  const auto& act = *scores.activated;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (act[i] >= model.taus.size())
      throw Error(ErrorCode::ClassIndexOutOfRange, "activated class " + std::to_string(act[i]), i);
    out[i] = scores.scores[i] >= model.taus[act[i]] ? Decision::ood : Decision::id;
  }
  return out;
}

/// Fits thresholds on a resample of a fixed base set, given as per-row integer
/// multiplicities, without materializing the copies. fit(copies) equals
/// fit_threshold on the expanded scores.
class MultiplicityFitter {
 public:
  MultiplicityFitter(const ScoreVector& base, Scheme scheme, double beta, std::size_t num_classes)
      : scheme_(scheme), beta_(beta), k_(num_classes), scores_(base.scores) {
    check_beta(beta);
    if (base.activated) {
      if (num_classes > 0) detail::activated_counts(*base.activated, num_classes);
      activated_ = *base.activated;
    }
    std::size_t groups = 1;
    if (scheme == Scheme::multi) {
      if (!base.activated) throw Error(ErrorCode::MissingActivated, "MULTI needs activated classes (logit data)");
      if (num_classes < 1) throw Error(ErrorCode::InvalidArgument, "num_classes must be positive");
      groups = num_classes;
    }
    order_.resize(groups);
    for (std::size_t i = 0; i < scores_.size(); ++i) order_[groups == 1 ? 0 : activated_[i]].push_back(i);
    for (auto& g : order_)
      std::stable_sort(g.begin(), g.end(), [&](std::size_t a, std::size_t b) { return scores_[a] < scores_[b]; });
  }

  std::size_t size() const noexcept { return scores_.size(); }

  ThresholdModel fit(std::span<const std::uint32_t> copies) const {
    if (copies.size() != scores_.size())
      throw Error(ErrorCode::LengthMismatch, "copies must have one entry per base score");
    ThresholdModel model{scheme_, beta_, std::vector<double>(order_.size(), kInf), {}};
    for (std::size_t g = 0; g < order_.size(); ++g) {
      const auto t = cutoff(order_[g], copies);
      if (!t && scheme_ == Scheme::one) throw Error(ErrorCode::EmptyScores, "cannot fit a threshold on zero scores");
      if (t) model.taus[g] = *t;
    }
    if (k_ > 0 && !activated_.empty()) {
      model.fit_counts.assign(k_, 0);
      for (std::size_t i = 0; i < copies.size(); ++i) model.fit_counts[activated_[i]] += copies[i];
    } else {
      model.fit_counts = {std::accumulate(copies.begin(), copies.end(), std::size_t{0})};
    }
    return model;
  }

 private:
  // nullopt for an empty group
  std::optional<double> cutoff(const std::vector<std::size_t>& sorted, std::span<const std::uint32_t> copies) const {
    std::uint64_t n = 0;
    for (auto i : sorted) n += copies[i];
    if (n == 0) return std::nullopt;
    const auto m = detail::cutoff_rank(n, beta_);
    if (m >= n) return kInf;
    std::uint64_t cum = 0;
    std::size_t pos = 0;
    while (cum + copies[sorted[pos]] < m) cum += copies[sorted[pos++]];
    const double v = scores_[sorted[pos]];
    for (++pos; pos < sorted.size(); ++pos)
      if (copies[sorted[pos]] > 0 && scores_[sorted[pos]] > v) return scores_[sorted[pos]];
    return kInf;
  }

  Scheme scheme_;
  double beta_;
  std::size_t k_;
  std::vector<double> scores_;
  std::vector<std::size_t> activated_;
  std::vector<std::vector<std::size_t>> order_;
};

// ---------------------------------------------------------------------------
// JSON: {"scheme", "beta", "taus" (+inf as "inf"), "fit_counts"}
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json threshold_to_json(const ThresholdModel& m) {
  nlohmann::ordered_json j;
  j["scheme"] = std::string(to_string(m.scheme));
  j["beta"] = m.beta;
  auto taus = nlohmann::ordered_json::array();
  for (double t : m.taus) {
    if (std::isinf(t) && t > 0) taus.push_back("inf");
    else taus.push_back(t);
  }
  j["taus"] = std::move(taus);
  j["fit_counts"] = m.fit_counts;
  return j;
}

inline ThresholdModel threshold_from_json(const nlohmann::json& j) {
  ThresholdModel m;
  try {
    m.scheme = parse_scheme(j.at("scheme").get<std::string>());
    m.beta = j.at("beta").get<double>();
    for (const auto& t : j.at("taus")) {
      if (t.is_string()) {
        if (t.get<std::string>() != "inf") throw Error(ErrorCode::InvalidArgument, "threshold strings must be \"inf\"");
        m.taus.push_back(kInf);
      } else {
        m.taus.push_back(t.get<double>());
      }
    }
    m.fit_counts = j.at("fit_counts").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad threshold model: ") + e.what());
  }
  check_beta(m.beta);
  if (m.taus.empty()) throw Error(ErrorCode::InvalidArgument, "threshold model has no taus");
  if (m.scheme == Scheme::one && m.taus.size() != 1)
    throw Error(ErrorCode::InvalidArgument, "scheme one takes exactly one tau");
  if (m.scheme == Scheme::multi && m.fit_counts.size() != m.taus.size())
    throw Error(ErrorCode::InvalidArgument, "fit_counts and taus lengths differ");
  for (double t : m.taus)
    if (std::isnan(t)) throw Error(ErrorCode::InvalidArgument, "NaN threshold");
  return m;
}

}  // namespace oodcal
