// oodcal: fit, evaluate and stress-test ONE/MULTI OoD thresholds on logit dumps.
//
// Exit codes: 0 success, 2 usage/config error, 3 data/model error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "oodcal/oodcal.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// `--config file.json`: top-level keys set global options, nested objects
/// address subcommands, e.g. {"beta": 0.9, "simulate": {"shift": {"trials": 100}}}.
class ConfigJSON : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> out;
    collect(j, "", {}, out);
    return out;
  }

 private:
  static std::string scalar(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

  static void collect(const json& j, const std::string& name, std::vector<std::string> prefix,
                      std::vector<CLI::ConfigItem>& out) {
    if (j.is_object()) {
      if (!name.empty()) prefix.push_back(name);
      for (auto it = j.begin(); it != j.end(); ++it) collect(*it, it.key(), prefix, out);
      return;
    }
    CLI::ConfigItem item;
    item.name = name;
    item.parents = std::move(prefix);
    if (j.is_array()) {
      for (const auto& v : j) item.inputs.push_back(scalar(v));
    } else {
      item.inputs = {scalar(j)};
    }
    out.push_back(std::move(item));
  }
};

// ---------------------------------------------------------------------------
// I/O helpers
// ---------------------------------------------------------------------------

/// "data.csv" (manifest data.json beside it) or "data.csv:manifest.json".
oodcal::LogitDataset load(const std::string& ref) {
  std::string csv = ref, manifest;
  if (auto pos = ref.rfind(':'); pos != std::string::npos) {
    csv = ref.substr(0, pos);
    manifest = ref.substr(pos + 1);
  } else {
    manifest = fs::path(csv).replace_extension(".json").string();
  }
  if (!fs::exists(csv)) throw ConfigError("dataset not found: " + csv);
  if (!fs::exists(manifest)) throw ConfigError("manifest not found: " + manifest);
  return oodcal::load_dataset(csv, manifest);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw oodcal::Error(oodcal::ErrorCode::InvalidArgument, path + ": " + e.what());
  }
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw oodcal::Error(oodcal::ErrorCode::Io, "cannot write " + path);
  out << content;
}

template <typename Writer>
std::string render(Writer&& w) {
  std::ostringstream s;
  w(s);
  return s.str();
}

/// Scores with activated classes. Feature datasets have no activated logit;
/// their per-class grouping falls back to the true label when present.
oodcal::ScoreVector score(const oodcal::DetectorModel& det, const oodcal::LogitDataset& ds) {
  auto sv = oodcal::score_dataset(det, ds);
  if (!sv.activated && ds.labeled()) {
    sv.activated.emplace();
    for (int l : ds.labels()) sv.activated->push_back(static_cast<std::size_t>(l));
  }
  return sv;
}

// ---------------------------------------------------------------------------
// Options
// ---------------------------------------------------------------------------

struct Globals {
  std::uint64_t seed = 0;
  double beta = 0.95;
  std::string scheme = "one";
  std::string detector = "max-logit";
  double temperature = 1.0;
  std::size_t threads = 0;

  void check() const {
    if (!(beta > 0.0 && beta < 1.0)) {
      std::string msg = "BetaOutOfRange: beta must lie in (0, 1), got ";
      oodcal::detail::append_real(msg, beta);
      throw ConfigError(msg);
    }
    if (!(temperature > 0.0)) throw ConfigError("NonPositiveTemperature: temperature must be positive");
  }
  oodcal::Scheme scheme_value() const { return oodcal::parse_scheme(scheme); }
};

struct DetectorFit {
  std::size_t k = 5;
  std::string metric = "euclidean";
  std::string aggregation = "largest";
  double p = 2.0;
  double eps_scale = 1e-6;
};

oodcal::DetectorModel fit_detector(const Globals& g, const DetectorFit& f, const oodcal::LogitDataset& train) {
  if (g.detector == "max-logit") return oodcal::MaxLogitDetector{};
  if (g.detector == "max-softmax") return oodcal::MaxSoftmaxDetector{g.temperature};
  if (g.detector == "energy") return oodcal::EnergyDetector{g.temperature};
  if (g.detector == "mahalanobis") return oodcal::fit_mahalanobis(train, f.eps_scale);
  return oodcal::fit_knn(train, f.k, oodcal::parse_metric(f.metric), oodcal::parse_aggregation(f.aggregation), f.p);
}

/// A saved model if given, otherwise a parameter-free scorer from --detector.
oodcal::DetectorModel scorer(const Globals& g, const std::string& model_path) {
  if (!model_path.empty()) return oodcal::detector_from_json(read_json(model_path));
  if (g.detector == "mahalanobis" || g.detector == "knn")
    throw ConfigError(g.detector + " must be fitted first; pass --detector-model");
  return fit_detector(g, {}, {});
}

oodcal::ThresholdModel read_thresholds(const std::string& path) { return oodcal::threshold_from_json(read_json(path)); }

void check_classes(const oodcal::ThresholdModel& m, const oodcal::LogitDataset& ds) {
  // a ONE model fitted without class information records a single count
  const bool known = m.scheme == oodcal::Scheme::multi || m.fit_counts.size() > 1;
  if (known && m.num_classes() != ds.num_classes())
    throw oodcal::Error(oodcal::ErrorCode::DimensionMismatch,
                        "threshold model has K=" + std::to_string(m.num_classes()) + " but '" + ds.name() + "' has K=" +
                            std::to_string(ds.num_classes()));
}

void check_same_k(const oodcal::LogitDataset& id, const oodcal::LogitDataset& other) {
  if (id.num_columns() != other.num_columns() || id.num_classes() != other.num_classes())
    throw oodcal::Error(oodcal::ErrorCode::DimensionMismatch,
                        "'" + other.name() + "' does not match the shape of '" + id.name() + "'");
}

std::vector<oodcal::NamedScores> score_ood(const oodcal::DetectorModel& det, const oodcal::LogitDataset& id,
                                           const std::vector<std::string>& refs) {
  std::vector<oodcal::NamedScores> out;
  for (const auto& r : refs) {
    const auto ds = load(r);
    check_same_k(id, ds);
    out.push_back({ds.name(), score(det, ds)});
  }
  return out;
}

/// Minimal reader for the small CSV tables this tool emits itself.
std::vector<std::map<std::string, std::string>> read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw oodcal::Error(oodcal::ErrorCode::MalformedHeader, path + " is empty");
  std::vector<std::string> header;
  for (auto h : oodcal::detail::split_commas(line)) header.emplace_back(oodcal::detail::trim(h));
  std::vector<std::map<std::string, std::string>> rows;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (oodcal::detail::trim(line).empty()) continue;
    ++n;
    const auto f = oodcal::detail::split_commas(line);
    if (f.size() != header.size())
      throw oodcal::Error(oodcal::ErrorCode::ColumnCountMismatch, path, n);
    auto& row = rows.emplace_back();
    for (std::size_t i = 0; i < f.size(); ++i) row[header[i]] = std::string(f[i]);
  }
  return rows;
}

double table_real(const std::map<std::string, std::string>& row, const std::string& key, std::size_t n) {
  auto it = row.find(key);
  if (it == row.end()) throw oodcal::Error(oodcal::ErrorCode::MalformedHeader, "missing column " + key);
  return oodcal::detail::parse_real(it->second, n);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct FitArgs {
  std::string id;
  double valid_fraction = 0.5;
  bool no_split = false;
  std::string out_detector = "detector.json";
  std::string out_thresholds = "thresholds.json";
  DetectorFit det;
};

int run_fit(const Globals& g, const FitArgs& a) {
  if (!a.no_split && !(a.valid_fraction > 0.0 && a.valid_fraction < 1.0))
    throw ConfigError("valid-fraction must lie in (0, 1)");
  const auto ds = load(a.id);
  oodcal::LogitDataset train = ds, valid = ds;
  if (!a.no_split) std::tie(train, valid) = oodcal::split_dataset(ds, a.valid_fraction, g.seed);
  const auto det = fit_detector(g, a.det, train);
  const auto sv = score(det, valid);
  const auto model = oodcal::fit_threshold(sv, g.scheme_value(), g.beta, ds.num_classes());
  for (auto c : model.empty_classes())
    std::cerr << "warning: class " << c << " has no validation samples; its threshold is +inf\n";
  write_file(a.out_detector, oodcal::detector_to_json(det).dump(2) + "\n");
  write_file(a.out_thresholds, oodcal::threshold_to_json(model).dump(2) + "\n");
  std::cout << "class,fit_count\n";
  for (std::size_t c = 0; c < model.fit_counts.size(); ++c) std::cout << c << "," << model.fit_counts[c] << "\n";
  return 0;
}

struct EvalArgs {
  std::string detector_model;
  std::vector<std::string> thresholds;
  std::string id;
  std::vector<std::string> ood;
  std::string csv_dir;
};

int run_eval(const Globals& g, const EvalArgs& a) {
  const auto det = scorer(g, a.detector_model);
  const auto id = load(a.id);
  const auto id_scores = score(det, id);
  const auto ood = score_ood(det, id, a.ood);
  if (!a.csv_dir.empty()) fs::create_directories(a.csv_dir);
  auto reports = ordered_json::array();
  std::map<std::string, int> seen;
  for (const auto& path : a.thresholds) {
    const auto model = read_thresholds(path);
    check_classes(model, id);
    const auto report = oodcal::build_report(oodcal::detector_name(det), model, id_scores, ood, id.num_classes());
    reports.push_back(oodcal::report_to_json(report));
    if (!a.csv_dir.empty()) {
      std::string stem{oodcal::to_string(model.scheme)};
      if (int n = seen[stem]++; n > 0) stem += "_" + std::to_string(n);
      write_file((fs::path(a.csv_dir) / (stem + "_tpr.csv")).string(),
                 render([&](std::ostream& o) { oodcal::write_tpr_csv(o, report); }));
      write_file((fs::path(a.csv_dir) / (stem + "_rates.csv")).string(),
                 render([&](std::ostream& o) { oodcal::write_rates_csv(o, report); }));
    }
  }
  std::cout << reports.dump(2) << "\n";
  return 0;
}

struct ShiftArgs {
  std::string id, detector_model, csv;
  std::size_t trials = 10000;
  double valid_fraction = 0.5;
  bool same_marginals = false;
};

int run_shift(const Globals& g, const ShiftArgs& a) {
  if (!(a.valid_fraction > 0.0 && a.valid_fraction < 1.0)) throw ConfigError("valid-fraction must lie in (0, 1)");
  if (a.trials < 1) throw ConfigError("trials must be >= 1");
  const auto det = scorer(g, a.detector_model);
  const auto id = load(a.id);
  oodcal::LabelShiftOptions opt{a.valid_fraction, a.same_marginals, g.threads};
  const auto records = oodcal::simulate_label_shift(id, det, g.scheme_value(), g.beta, a.trials, g.seed, opt);
  write_file(a.csv, render([&](std::ostream& o) { oodcal::write_shift_csv(o, records); }));
  auto summary = oodcal::shift_summary(records, g.scheme_value(), g.beta, g.seed);
  summary["detector"] = oodcal::detector_name(det);
  summary["valid_fraction"] = a.valid_fraction;
  std::cout << summary.dump(2) << "\n";
  return 0;
}

struct OversampleArgs {
  std::string id, detector_model, thresholds, csv;
  std::size_t trials = 1000;
  std::vector<double> gamma{1.0, 10.0};
};

int run_oversample(const Globals& g, const OversampleArgs& a) {
  if (a.gamma.size() != 2 || !(a.gamma[0] >= 0.0) || !(a.gamma[1] >= a.gamma[0]) || a.gamma[1] == 0.0)
    throw ConfigError("gamma takes two values 0 <= lo <= hi, hi > 0");
  const auto det = scorer(g, a.detector_model);
  const auto id = load(a.id);
  const auto model = read_thresholds(a.thresholds);
  check_classes(model, id);
  oodcal::OversampleOptions opt{a.trials, a.gamma[0], a.gamma[1], g.threads};
  const auto records = oodcal::simulate_oversampling(id, model, det, g.seed, opt);
  write_file(a.csv, render([&](std::ostream& o) { oodcal::write_oversample_csv(o, records); }));
  auto summary = oodcal::oversample_summary(records, opt, g.seed);
  summary["scheme"] = std::string(oodcal::to_string(model.scheme));
  std::cout << summary.dump(2) << "\n";
  return 0;
}

struct SweepArgs {
  std::string detector_model, thresholds_one, thresholds_multi, id, csv;
  std::vector<std::string> ood;
  double delta = 0.5;
  std::size_t points = 50;
};

int run_sweep(const Globals& g, const SweepArgs& a) {
  if (!(a.delta >= 0.0 && a.delta <= 1.0)) throw ConfigError("delta must lie in [0, 1]");
  if (a.points < 1) throw ConfigError("points must be >= 1");
  const auto det = scorer(g, a.detector_model);
  const auto one = read_thresholds(a.thresholds_one);
  const auto multi = read_thresholds(a.thresholds_multi);
  const auto id = load(a.id);
  check_classes(multi, id);
  const auto ood = score_ood(det, id, a.ood);
  const auto sweep = oodcal::perturbation_sweep(one, multi, ood, a.delta, a.points);
  write_file(a.csv, render([&](std::ostream& o) { oodcal::write_sweep_csv(o, sweep); }));
  std::cout << oodcal::sweep_summary(sweep, a.delta).dump(2) << "\n";
  return 0;
}

struct DistancesArgs {
  std::string id, detector_model, csv;
  std::vector<std::string> ood, thresholds;
};

int run_distances(const Globals& g, const DistancesArgs& a) {
  const auto id = load(a.id);
  const oodcal::DetectorModel max_logit = oodcal::MaxLogitDetector{};
  const auto id_ml = oodcal::score_dataset(max_logit, id).scores;
  std::vector<oodcal::NamedSample> samples;
  std::vector<oodcal::LogitDataset> sets;
  for (const auto& r : a.ood) {
    sets.push_back(load(r));
    check_same_k(id, sets.back());
    samples.push_back({sets.back().name(), oodcal::score_dataset(max_logit, sets.back()).scores});
  }
  const auto table = oodcal::distance_table(id_ml, samples);

  std::vector<std::string> rate_cols;
  std::vector<std::vector<double>> rates;  // [threshold file][set]
  if (!a.thresholds.empty()) {
    const auto det = scorer(g, a.detector_model);
    const auto id_scores = score(det, id);
    for (const auto& path : a.thresholds) {
      const auto model = read_thresholds(path);
      check_classes(model, id);
      rate_cols.push_back("missed_" + std::string(oodcal::to_string(model.scheme)));
      auto& col = rates.emplace_back();
      for (const auto& s : sets) col.push_back(oodcal::missed_detection_rate(score(det, s), model));
    }
  }
  std::string out = "ood_set";
  for (const auto& c : rate_cols) out += "," + c;
  out += ",wasserstein,energy\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    out += table[i].ood_set;
    for (const auto& col : rates) {
      out += ",";
      oodcal::detail::append_real(out, col[i]);
    }
    out += ",";
    oodcal::detail::append_real(out, table[i].wasserstein);
    out += ",";
    oodcal::detail::append_real(out, table[i].energy);
    out += "\n";
  }
  if (a.csv.empty()) std::cout << out;
  else write_file(a.csv, out);
  return 0;
}

struct CorrelateArgs {
  std::string rates, distances, rate_column = "missed_detection_rate", label, csv;
};

int run_correlate(const Globals& g, const CorrelateArgs& a) {
  std::vector<oodcal::OodSetRate> rates;
  std::size_t n = 0;
  for (const auto& row : read_table(a.rates)) rates.push_back({row.at("ood_set"), table_real(row, a.rate_column, ++n)});
  std::vector<oodcal::DistancePair> dist;
  n = 0;
  for (const auto& row : read_table(a.distances)) {
    ++n;
    dist.push_back({row.at("ood_set"), table_real(row, "wasserstein", n), table_real(row, "energy", n)});
  }
  const auto r = oodcal::correlate_difficulty(rates, dist);
  std::string out = "detector,scheme,wasserstein_r,energy_r\n";
  out += (a.label.empty() ? g.detector : a.label) + "," + g.scheme + ",";
  oodcal::detail::append_real(out, r.wasserstein_r);
  out += ",";
  oodcal::detail::append_real(out, r.energy_r);
  out += "\n";
  if (a.csv.empty()) std::cout << out;
  else write_file(a.csv, out);
  return 0;
}

struct GridArgs {
  std::string grid, fit, valid_id, csv;
  std::vector<std::string> valid_ood;
};

int run_gridsearch(const Globals& g, const GridArgs& a) {
  const auto spec = oodcal::grid_from_json(read_json(a.grid));
  const auto fit = load(a.fit);
  const auto vid = load(a.valid_id);
  std::vector<oodcal::LogitDataset> vood;
  for (const auto& r : a.valid_ood) {
    vood.push_back(load(r));
    check_same_k(vid, vood.back());
  }
  const auto result = oodcal::grid_search(spec, fit, vid, vood, g.beta, g.scheme_value());
  ordered_json j;
  j["analysis"] = "best-case: hyperparameters selected on validation data drawn from the test distribution";
  j["scheme"] = g.scheme;
  j["beta"] = g.beta;
  auto rows = ordered_json::array();
  for (const auto& r : result.rows) {
    ordered_json e;
    e["config"] = r.config;
    e["params"] = r.params;
    e["mean_missed_detection"] = r.mean_missed_detection;
    e["min_tpr"] = r.min_tpr;
    rows.push_back(std::move(e));
  }
  j["best"] = rows.at(result.best);
  j["rows"] = std::move(rows);
  if (!a.csv.empty()) {
    std::string out = "config";
    for (const auto& [key, _] : result.rows.front().params.items()) out += "," + key;
    out += ",mean_missed_detection,min_tpr,best\n";
    for (std::size_t i = 0; i < result.rows.size(); ++i) {
      const auto& r = result.rows[i];
      out += std::to_string(r.config);
      for (const auto& [_, v] : r.params.items()) out += "," + (v.is_string() ? v.get<std::string>() : v.dump());
      out += ",";
      oodcal::detail::append_real(out, r.mean_missed_detection);
      out += ",";
      oodcal::detail::append_real(out, r.min_tpr);
      out += i == result.best ? ",1\n" : ",0\n";
    }
    write_file(a.csv, out);
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int classify(const oodcal::Error& e) {
  switch (e.code()) {
    case oodcal::ErrorCode::BetaOutOfRange:
    case oodcal::ErrorCode::NonPositiveTemperature:
      return kExitConfig;
    default:
      return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibrate and stress-test OoD detection thresholds on classifier logit dumps"};
  app.config_formatter(std::make_shared<ConfigJSON>());
  app.set_config("--config", "", "JSON file with option values");
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Master RNG seed");
  app.add_option("--beta", g.beta, "Target TPR (ID acceptance rate)");
  app.add_option("--scheme", g.scheme, "Thresholding scheme")->check(CLI::IsMember({"one", "multi"}));
  app.add_option("--detector", g.detector, "Score function")
      ->check(CLI::IsMember({"max-logit", "max-softmax", "energy", "mahalanobis", "knn"}));
  app.add_option("--temperature,-T", g.temperature, "Temperature for energy and max-softmax");
  app.add_option("--threads", g.threads, "Worker threads for simulations (0 = all cores)");

  auto existing = CLI::ExistingFile;

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a detector and TPR-beta thresholds on ID data");
  fit_cmd->add_option("--id", fit.id, "ID dataset (csv[:manifest])")->required();
  fit_cmd->add_option("--valid-fraction", fit.valid_fraction, "Fraction of --id used to fit thresholds");
  fit_cmd->add_flag("--no-split", fit.no_split, "Use all of --id for both detector and thresholds");
  fit_cmd->add_option("--out-detector", fit.out_detector, "Detector model output");
  fit_cmd->add_option("--out-thresholds", fit.out_thresholds, "Threshold model output");
  fit_cmd->add_option("--k", fit.det.k, "k-NN neighbours");
  fit_cmd->add_option("--metric", fit.det.metric, "k-NN metric")
      ->check(CLI::IsMember({"euclidean", "manhattan", "chebyshev", "minkowski", "braycurtis"}));
  fit_cmd->add_option("--aggregation", fit.det.aggregation, "k-NN aggregation")
      ->check(CLI::IsMember({"mean", "largest", "median"}));
  fit_cmd->add_option("--p", fit.det.p, "Minkowski exponent");
  fit_cmd->add_option("--eps-scale", fit.det.eps_scale, "Mahalanobis ridge scale");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Per-class TPR and missed-detection report");
  eval_cmd->add_option("--detector-model", eval.detector_model, "Fitted detector JSON")->check(existing);
  eval_cmd->add_option("--thresholds", eval.thresholds, "Threshold model JSON (repeatable)")->required()->check(existing);
  eval_cmd->add_option("--id", eval.id, "ID test dataset")->required();
  eval_cmd->add_option("--ood", eval.ood, "OoD dataset (repeatable)");
  eval_cmd->add_option("--csv-dir", eval.csv_dir, "Also write per-class TPR and per-set rate CSVs here");

  auto* sim_cmd = app.add_subcommand("simulate", "Robustness studies");
  sim_cmd->require_subcommand(1);
  ShiftArgs shift;
  auto* shift_cmd = sim_cmd->add_subcommand("shift", "Label-shift Monte-Carlo");
  shift_cmd->add_option("--id", shift.id, "Labeled ID dataset")->required();
  shift_cmd->add_option("--detector-model", shift.detector_model, "Fitted detector JSON")->check(existing);
  shift_cmd->add_option("--trials", shift.trials, "Number of trials");
  shift_cmd->add_option("--valid-fraction", shift.valid_fraction, "Validation share of the ID data");
  shift_cmd->add_flag("--same-marginals", shift.same_marginals, "Use p_test = p_train");
  shift_cmd->add_option("--csv", shift.csv, "Trial CSV output")->required();

  OversampleArgs over;
  auto* over_cmd = sim_cmd->add_subcommand("oversample", "Class-oversampling TPR study");
  over_cmd->add_option("--id", over.id, "Labeled ID test dataset")->required();
  over_cmd->add_option("--detector-model", over.detector_model, "Fitted detector JSON")->check(existing);
  over_cmd->add_option("--thresholds", over.thresholds, "Threshold model JSON")->required()->check(existing);
  over_cmd->add_option("--trials", over.trials, "Number of trials");
  over_cmd->add_option("--gamma", over.gamma, "Oversampling factor range lo hi")->expected(2);
  over_cmd->add_option("--csv", over.csv, "Trial CSV output")->required();

  SweepArgs sweep;
  auto* sweep_cmd = sim_cmd->add_subcommand("sweep", "ONE threshold perturbation sweep");
  sweep_cmd->add_option("--detector-model", sweep.detector_model, "Fitted detector JSON")->check(existing);
  sweep_cmd->add_option("--thresholds-one", sweep.thresholds_one, "ONE threshold JSON")->required()->check(existing);
  sweep_cmd->add_option("--thresholds-multi", sweep.thresholds_multi, "MULTI threshold JSON")->required()->check(existing);
  sweep_cmd->add_option("--id", sweep.id, "ID dataset (shape reference)")->required();
  sweep_cmd->add_option("--ood", sweep.ood, "OoD dataset (repeatable)")->required();
  sweep_cmd->add_option("--delta", sweep.delta, "Perturbation strength in [0, 1]");
  sweep_cmd->add_option("--points", sweep.points, "Number of perturbation values");
  sweep_cmd->add_option("--csv", sweep.csv, "Sweep CSV output")->required();

  auto* an_cmd = app.add_subcommand("analyze", "Distances, correlations and grid search");
  an_cmd->require_subcommand(1);
  DistancesArgs dist;
  auto* dist_cmd = an_cmd->add_subcommand("distances", "Wasserstein/energy distances of max-logit scores");
  dist_cmd->add_option("--id", dist.id, "ID test dataset")->required();
  dist_cmd->add_option("--ood", dist.ood, "OoD dataset (repeatable)")->required();
  dist_cmd->add_option("--thresholds", dist.thresholds, "Add missed-detection columns (repeatable)")->check(existing);
  dist_cmd->add_option("--detector-model", dist.detector_model, "Detector for the rate columns")->check(existing);
  dist_cmd->add_option("--csv", dist.csv, "Output CSV (default stdout)");

  CorrelateArgs corr;
  auto* corr_cmd = an_cmd->add_subcommand("correlate", "Pearson r between missed detection and distances");
  corr_cmd->add_option("--rates", corr.rates, "CSV with ood_set and a rate column")->required()->check(existing);
  corr_cmd->add_option("--rate-column", corr.rate_column, "Name of the rate column");
  corr_cmd->add_option("--distances", corr.distances, "CSV from analyze distances")->required()->check(existing);
  corr_cmd->add_option("--label", corr.label, "Detector label for the output row");
  corr_cmd->add_option("--csv", corr.csv, "Output CSV (default stdout)");

  GridArgs grid;
  auto* grid_cmd = an_cmd->add_subcommand("gridsearch", "Best-case hyperparameter grid search");
  grid_cmd->add_option("--grid", grid.grid, "Grid JSON")->required()->check(existing);
  grid_cmd->add_option("--fit", grid.fit, "Detector fitting data")->required();
  grid_cmd->add_option("--valid-id", grid.valid_id, "ID validation data")->required();
  grid_cmd->add_option("--valid-ood", grid.valid_ood, "OoD validation data (repeatable)")->required();
  grid_cmd->add_option("--csv", grid.csv, "Result table CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    g.check();
    if (*fit_cmd) return run_fit(g, fit);
    if (*eval_cmd) return run_eval(g, eval);
    if (*shift_cmd) return run_shift(g, shift);
    if (*over_cmd) return run_oversample(g, over);
    if (*sweep_cmd) return run_sweep(g, sweep);
    if (*dist_cmd) return run_distances(g, dist);
    if (*corr_cmd) return run_correlate(g, corr);
    if (*grid_cmd) return run_gridsearch(g, grid);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const oodcal::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}
