#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "oodcal/analyze.hpp"
#include "oodcal/calibrate.hpp"
#include "oodcal/dataset.hpp"
#include "oodcal/error.hpp"
#include "oodcal/evaluate.hpp"
#include "oodcal/parallel.hpp"
#include "oodcal/rng.hpp"
#include "oodcal/scores.hpp"

namespace oodcal {

/// A point of the probability simplex.
struct SimplexSample {
  std::vector<double> p;
};

/// Uniform draw from the (K-1)-simplex: normalized unit exponentials.
inline SimplexSample sample_simplex(std::size_t k, Rng& rng) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "simplex dimension must be >= 1");
  if (k == 1) return {{1.0}};
  std::vector<double> x(k);
  double sum = 0.0;
  do {
    sum = 0.0;
    for (auto& xi : x) sum += (xi = rng.exponential());
  } while (sum == 0.0);
  for (auto& xi : x) xi /= sum;
  return {std::move(x)};
}

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

struct ShiftPayload {
  std::vector<double> p_train, p_test;
  double delta_p = 0.0;
  double false_alarm_rate = 0.0;
};

struct OversamplePayload {
  std::vector<double> gammas;
  std::vector<std::optional<double>> per_class_tpr;
};

struct SweepPayload {
  double delta_tau = 0.0;
  std::vector<OodSetRate> per_ood_rates;
};

struct TrialRecord {
  std::size_t trial_index = 0;
  std::uint64_t seed = 0;
  std::variant<ShiftPayload, OversamplePayload, SweepPayload> payload;

  const ShiftPayload& shift() const { return std::get<ShiftPayload>(payload); }
  const OversamplePayload& oversample() const { return std::get<OversamplePayload>(payload); }
  const SweepPayload& sweep() const { return std::get<SweepPayload>(payload); }
};

namespace detail {

inline ScoreVector expand(const ScoreVector& base, std::span<const std::uint32_t> copies) {
  ScoreVector out;
  if (base.activated) out.activated.emplace();
  for (std::size_t i = 0; i < copies.size(); ++i)
    for (std::uint32_t c = 0; c < copies[i]; ++c) {
      out.scores.push_back(base.scores[i]);
      if (base.activated) out.activated->push_back((*base.activated)[i]);
    }
  return out;
}

}  // namespace detail

struct LabelShiftOptions {
  double valid_fraction = 0.5;
  bool same_marginals = false;  // force p_test = p_train
  std::size_t threads = 0;
};

/// Label-shift Monte-Carlo. The ID data are split once (stratified) into a
/// validation and a test half. Trial t draws p_train and p_test uniformly
/// from the simplex, resamples each half by true label to its original size
/// under the respective marginal, fits thresholds on the resampled
/// validation half and records the false-alarm rate on the resampled test
/// half.
inline std::vector<TrialRecord> simulate_label_shift(const LogitDataset& id_data, const DetectorModel& detector,
                                                     Scheme scheme, double beta, std::size_t n_trials,
                                                     std::uint64_t master_seed, const LabelShiftOptions& opt = {}) {
  check_beta(beta);
  if (n_trials < 1) throw Error(ErrorCode::InvalidArgument, "n_trials must be >= 1");
  if (!id_data.labeled()) throw Error(ErrorCode::UnlabeledDataset, "label-shift simulation needs labels");
  const std::size_t k = id_data.num_classes();
  const auto [test, valid] = split_dataset(id_data, opt.valid_fraction, derive_seed(master_seed, ~std::uint64_t{0}));
  const auto valid_scores = score_dataset(detector, valid);
  const auto test_scores = score_dataset(detector, test);
  const auto valid_labels = valid.labels(), test_labels = test.labels();
  const detail::ClassResampler valid_rs(valid_labels, k), test_rs(test_labels, k);
  const MultiplicityFitter fitter(valid_scores, scheme, beta, k);

  auto weights_for = [k](const std::vector<double>& p, const detail::ClassResampler& rs, std::size_t total) {
    std::vector<double> w(k, 0.0);
    for (std::size_t c = 0; c < k; ++c)
      if (rs.class_size(c) > 0) w[c] = p[c] * static_cast<double>(total) / static_cast<double>(rs.class_size(c));
    return w;
  };

  std::vector<TrialRecord> records(n_trials);
  parallel_for(n_trials, opt.threads, [&](std::size_t t) {
    const auto seed = derive_seed(master_seed, t);
    Rng rng(seed);
    ShiftPayload pl;
    pl.p_train = sample_simplex(k, rng).p;
    pl.p_test = opt.same_marginals ? pl.p_train : sample_simplex(k, rng).p;
    pl.delta_p = l2_distance(pl.p_train, pl.p_test);

    std::vector<std::uint32_t> copies;
    std::vector<std::size_t> scratch;
    valid_rs.copies(weights_for(pl.p_train, valid_rs, valid.size()), rng, copies, scratch);
    const auto model = fitter.fit(copies);

    test_rs.copies(weights_for(pl.p_test, test_rs, test.size()), rng, copies, scratch);
    const auto decisions = decide(test_scores, model);
    std::uint64_t flagged = 0, total = 0;
    for (std::size_t i = 0; i < copies.size(); ++i) {
      total += copies[i];
      if (decisions[i] == Decision::ood) flagged += copies[i];
    }
    if (total == 0) throw Error(ErrorCode::EmptyScores, "resampled test half is empty");
    pl.false_alarm_rate = static_cast<double>(flagged) / static_cast<double>(total);
    records[t] = {t, seed, std::move(pl)};
  });
  return records;
}

struct OversampleOptions {
  std::size_t n_trials = 1000;
  double gamma_lo = 1.0;
  double gamma_hi = 10.0;
  std::size_t threads = 0;
};

/// Oversampling study: each trial draws gamma_i ~ U[lo, hi] per true class,
/// duplicate-resamples the ID test data and evaluates per-activated-class TPR
/// under the fixed threshold model.
inline std::vector<TrialRecord> simulate_oversampling(const LogitDataset& id_test, const ThresholdModel& model,
                                                      const DetectorModel& detector, std::uint64_t master_seed,
                                                      const OversampleOptions& opt = {}) {
  if (!id_test.labeled()) throw Error(ErrorCode::UnlabeledDataset, "oversampling needs labels");
  if (!(opt.gamma_lo >= 0.0) || !(opt.gamma_hi >= opt.gamma_lo) || !std::isfinite(opt.gamma_hi))
    throw Error(ErrorCode::InvalidArgument, "gamma range must satisfy 0 <= lo <= hi");
  if (opt.gamma_hi == 0.0) throw Error(ErrorCode::InvalidArgument, "gamma range [0, 0] removes every sample");
  const std::size_t k = id_test.num_classes();
  const auto scores = score_dataset(detector, id_test);
  if (!scores.activated) throw Error(ErrorCode::MissingActivated, "oversampling evaluates per activated class");
  const auto decisions = decide(scores, model);
  const auto labels = id_test.labels();
  const detail::ClassResampler rs(labels, k);
  const auto& act = *scores.activated;
  for (std::size_t i = 0; i < act.size(); ++i)
    if (act[i] >= k) throw Error(ErrorCode::ClassIndexOutOfRange, "activated class " + std::to_string(act[i]), i);

  std::vector<TrialRecord> records(opt.n_trials);
  parallel_for(opt.n_trials, opt.threads, [&](std::size_t t) {
    const auto seed = derive_seed(master_seed, t);
    Rng rng(seed);
    OversamplePayload pl;
    pl.gammas.resize(k);
    for (auto& g : pl.gammas) g = opt.gamma_lo == opt.gamma_hi ? opt.gamma_lo : rng.uniform(opt.gamma_lo, opt.gamma_hi);
    std::vector<std::uint32_t> copies;
    std::vector<std::size_t> scratch;
    rs.copies(pl.gammas, rng, copies, scratch);
    std::vector<std::uint64_t> count(k, 0), accepted(k, 0);
    for (std::size_t i = 0; i < copies.size(); ++i) {
      count[act[i]] += copies[i];
      if (decisions[i] == Decision::id) accepted[act[i]] += copies[i];
    }
    pl.per_class_tpr.resize(k);
    for (std::size_t j = 0; j < k; ++j)
      if (count[j] > 0) pl.per_class_tpr[j] = static_cast<double>(accepted[j]) / static_cast<double>(count[j]);
    records[t] = {t, seed, std::move(pl)};
  });
  return records;
}

struct SweepResult {
  double delta_tau_lo = 0.0, delta_tau_hi = 0.0;
  std::vector<TrialRecord> points;
  std::vector<OodSetRate> one_reference;    // unperturbed ONE
  std::vector<OodSetRate> multi_reference;  // unperturbed MULTI
};

/// Threshold-perturbation sweep: n_points evenly spaced offsets spanning
/// delta * [-|tau_one - min_j tau_j|, |max_j tau_j - tau_one|] (endpoints
/// included, infinite tau_j ignored), each applied to the ONE threshold.
inline SweepResult perturbation_sweep(const ThresholdModel& one, const ThresholdModel& multi,
                                      const std::vector<NamedScores>& ood_sets, double delta = 0.5,
                                      std::size_t n_points = 50) {
  if (one.scheme != Scheme::one || multi.scheme != Scheme::multi)
    throw Error(ErrorCode::InvalidArgument, "sweep needs a ONE and a MULTI threshold model");
  if (!(delta >= 0.0 && delta <= 1.0)) throw Error(ErrorCode::InvalidArgument, "delta must lie in [0, 1]");
  if (n_points < 1) throw Error(ErrorCode::InvalidArgument, "n_points must be >= 1");
  const double tau_one = one.tau();
  double lo_tau = kInf, hi_tau = -kInf;
  for (double t : multi.taus)
    if (std::isfinite(t)) {
      lo_tau = std::min(lo_tau, t);
      hi_tau = std::max(hi_tau, t);
    }
  if (!std::isfinite(lo_tau) || !std::isfinite(tau_one))
    throw Error(ErrorCode::AllThresholdsInfinite, "sweep needs a finite ONE threshold and a finite MULTI threshold");

  SweepResult out;
  out.delta_tau_lo = -delta * std::abs(tau_one - lo_tau);
  out.delta_tau_hi = delta * std::abs(hi_tau - tau_one);
  for (const auto& s : ood_sets) {
    out.one_reference.push_back({s.name, missed_detection_rate(s.scores, one)});
    out.multi_reference.push_back({s.name, missed_detection_rate(s.scores, multi)});
  }
  for (std::size_t i = 0; i < n_points; ++i) {
    double dt = out.delta_tau_lo;
    if (i + 1 == n_points && n_points > 1) dt = out.delta_tau_hi;
    else if (i > 0) dt = out.delta_tau_lo + (out.delta_tau_hi - out.delta_tau_lo) * static_cast<double>(i) /
                                                static_cast<double>(n_points - 1);
    ThresholdModel perturbed = one;
    perturbed.taus[0] = tau_one + dt;
    SweepPayload pl{dt, {}};
    for (const auto& s : ood_sets) pl.per_ood_rates.push_back({s.name, missed_detection_rate(s.scores, perturbed)});
    out.points.push_back({i, 0, std::move(pl)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export: trial CSVs and JSON summaries
// ---------------------------------------------------------------------------

inline constexpr double kHistogramBinWidth = 0.005;

/// Counts over [0, 1] in bins of width 0.005; 1.0 falls in the last bin.
inline std::vector<std::uint64_t> rate_histogram(std::span<const double> rates) {
  const auto bins = static_cast<std::size_t>(std::llround(1.0 / kHistogramBinWidth));
  std::vector<std::uint64_t> h(bins, 0);
  for (double r : rates) {
    auto b = static_cast<std::size_t>(std::floor(std::clamp(r, 0.0, 1.0) / kHistogramBinWidth));
    ++h[std::min(b, bins - 1)];
  }
  return h;
}

inline nlohmann::ordered_json dispersion_json(std::span<const double> xs) {
  nlohmann::ordered_json j;
  j["count"] = xs.size();
  if (xs.empty()) return j;
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  // a constant sample reports exactly zero spread despite rounding in the mean
  if (*lo == *hi) mean = *lo, ss = 0.0;
  j["mean"] = mean;
  j["std"] = std::sqrt(ss / static_cast<double>(xs.size()));
  j["min"] = *lo;
  j["max"] = *hi;
  return j;
}

inline nlohmann::ordered_json histogram_json(std::span<const double> rates) {
  nlohmann::ordered_json j;
  j["bin_width"] = kHistogramBinWidth;
  j["range"] = {0.0, 1.0};
  j["counts"] = rate_histogram(rates);
  return j;
}

inline void write_shift_csv(std::ostream& out, const std::vector<TrialRecord>& records) {
  std::string buf = "trial,delta_p,far\n";
  for (const auto& r : records) {
    buf += std::to_string(r.trial_index) + ",";
    detail::append_real(buf, r.shift().delta_p);
    buf += ',';
    detail::append_real(buf, r.shift().false_alarm_rate);
    buf += '\n';
  }
  out << buf;
}

inline nlohmann::ordered_json shift_summary(const std::vector<TrialRecord>& records, Scheme scheme, double beta,
                                            std::uint64_t master_seed) {
  std::vector<double> far, dp, dev;
  for (const auto& r : records) {
    far.push_back(r.shift().false_alarm_rate);
    dp.push_back(r.shift().delta_p);
    dev.push_back(std::abs(r.shift().false_alarm_rate - (1.0 - beta)));
  }
  nlohmann::ordered_json j;
  j["study"] = "label_shift";
  j["scheme"] = std::string(to_string(scheme));
  j["beta"] = beta;
  j["seed"] = master_seed;
  j["trials"] = records.size();
  j["resampling"] = "per true class, to the original half size; floor(w) full copies plus a without-replacement remainder";
  j["false_alarm_rate"] = dispersion_json(far);
  j["delta_p"] = dispersion_json(dp);
  try {
    j["spearman_delta_p_vs_far_deviation"] = spearman(dp, dev);
  } catch (const Error&) {
    j["spearman_delta_p_vs_far_deviation"] = nullptr;
  }
  j["histogram"] = histogram_json(far);
  return j;
}

inline void write_oversample_csv(std::ostream& out, const std::vector<TrialRecord>& records) {
  std::string buf = "trial,class,tpr\n";
  for (const auto& r : records) {
    const auto& tpr = r.oversample().per_class_tpr;
    for (std::size_t j = 0; j < tpr.size(); ++j) {
      buf += std::to_string(r.trial_index) + "," + std::to_string(j) + ",";
      if (tpr[j]) detail::append_real(buf, *tpr[j]);
      buf += '\n';
    }
  }
  out << buf;
}

inline nlohmann::ordered_json oversample_summary(const std::vector<TrialRecord>& records, const OversampleOptions& opt,
                                                 std::uint64_t master_seed) {
  nlohmann::ordered_json j;
  j["study"] = "oversampling";
  j["seed"] = master_seed;
  j["trials"] = records.size();
  j["gamma_range"] = {opt.gamma_lo, opt.gamma_hi};
  std::size_t k = records.empty() ? 0 : records.front().oversample().per_class_tpr.size();
  auto classes = nlohmann::ordered_json::array();
  std::vector<double> all;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> xs;
    for (const auto& r : records)
      if (const auto& t = r.oversample().per_class_tpr[c]) xs.push_back(*t);
    all.insert(all.end(), xs.begin(), xs.end());
    auto e = dispersion_json(xs);
    e["class"] = c;
    e["histogram"] = histogram_json(xs);
    classes.push_back(std::move(e));
  }
  j["tpr"] = dispersion_json(all);
  j["per_class"] = std::move(classes);
  return j;
}

inline void write_sweep_csv(std::ostream& out, const SweepResult& sweep) {
  std::string buf = "point,delta_tau,ood_set,rate\n";
  for (const auto& p : sweep.points)
    for (const auto& r : p.sweep().per_ood_rates) {
      buf += std::to_string(p.trial_index) + ",";
      detail::append_real(buf, p.sweep().delta_tau);
      buf += "," + r.name + ",";
      detail::append_real(buf, r.missed_detection_rate);
      buf += '\n';
    }
  out << buf;
}

inline nlohmann::ordered_json sweep_summary(const SweepResult& sweep, double delta) {
  nlohmann::ordered_json j;
  j["study"] = "threshold_perturbation";
  j["delta"] = delta;
  j["points"] = sweep.points.size();
  j["delta_tau_range"] = {sweep.delta_tau_lo, sweep.delta_tau_hi};
  auto sets = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < sweep.one_reference.size(); ++s) {
    std::vector<double> rates;
    for (const auto& p : sweep.points) rates.push_back(p.sweep().per_ood_rates[s].missed_detection_rate);
    nlohmann::ordered_json e;
    e["ood_set"] = sweep.one_reference[s].name;
    e["one_unperturbed"] = sweep.one_reference[s].missed_detection_rate;
    e["multi_reference"] = sweep.multi_reference[s].missed_detection_rate;
    e["perturbed_one"] = dispersion_json(rates);
    e["histogram"] = histogram_json(rates);
    sets.push_back(std::move(e));
  }
  j["per_ood_set"] = std::move(sets);
  return j;
}

}  // namespace oodcal
