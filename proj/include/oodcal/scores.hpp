#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <json.hpp>

#include "oodcal/dataset.hpp"
#include "oodcal/error.hpp"

namespace oodcal {

// All scores follow "larger = more OoD".

/// Index of the first occurrence of the maximum entry.
inline std::size_t argmax_class(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorCode::EmptyVector, "argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

inline double max_logit_score(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorCode::EmptyVector, "max-logit of empty vector");
  return -*std::max_element(logits.begin(), logits.end());
}

namespace detail {

inline void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw Error(ErrorCode::NonPositiveTemperature, "T must be positive and finite");
}

// sum_{j != argmax} exp((l_j - max) / T), i.e. the softmax denominator minus one.
inline double shifted_tail_sum(std::span<const double> logits, double temperature, std::size_t top) {
  const double m = logits[top];
  double tail = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j)
    if (j != top) tail += std::exp((logits[j] - m) / temperature);
  return tail;
}

}  // namespace detail

/// -max_j softmax(l / T)_j, in [-1, -1/K].
inline double max_softmax_score(std::span<const double> logits, double temperature = 1.0) {
  const auto top = argmax_class(logits);
  detail::check_temperature(temperature);
  return -1.0 / (1.0 + detail::shifted_tail_sum(logits, temperature, top));
}

/// -T * logsumexp(l / T) via the shifted form; never overflows.
inline double energy_score(std::span<const double> logits, double temperature = 1.0) {
  const auto top = argmax_class(logits);
  detail::check_temperature(temperature);
  return -(logits[top] + temperature * std::log1p(detail::shifted_tail_sum(logits, temperature, top)));
}

// ---------------------------------------------------------------------------
// Detector models
// ---------------------------------------------------------------------------

enum class Metric { euclidean, manhattan, chebyshev, minkowski, braycurtis };
enum class Aggregation { mean, largest, median };

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::euclidean: return "euclidean";
    case Metric::manhattan: return "manhattan";
    case Metric::chebyshev: return "chebyshev";
    case Metric::minkowski: return "minkowski";
    case Metric::braycurtis: return "braycurtis";
  }
  return "?";
}

inline std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::mean: return "mean";
    case Aggregation::largest: return "largest";
    case Aggregation::median: return "median";
  }
  return "?";
}

inline Metric parse_metric(std::string_view s) {
  for (auto m : {Metric::euclidean, Metric::manhattan, Metric::chebyshev, Metric::minkowski, Metric::braycurtis})
    if (s == to_string(m)) return m;
  throw Error(ErrorCode::InvalidArgument, "unknown metric '" + std::string(s) + "'");
}

inline Aggregation parse_aggregation(std::string_view s) {
  for (auto a : {Aggregation::mean, Aggregation::largest, Aggregation::median})
    if (s == to_string(a)) return a;
  throw Error(ErrorCode::InvalidArgument, "unknown aggregation '" + std::string(s) + "'");
}

struct MaxLogitDetector {};

struct MaxSoftmaxDetector {
  double temperature = 1.0;
};

struct EnergyDetector {
  double temperature = 1.0;
};

/// Class-conditional Gaussians with a tied covariance.
struct MahalanobisDetector {
  Eigen::MatrixXd class_means;               // K x D
  Eigen::MatrixXd tied_covariance_inverse;   // D x D, symmetric positive definite
  double regularization = 0.0;               // the ridge eps actually added
};

/// Exact k-nearest-neighbour distance to a reference set.
struct KnnDetector {
  std::size_t dim = 0;
  std::vector<double> reference;  // N x dim, row-major
  std::size_t k = 1;
  Metric metric = Metric::euclidean;
  double p = 2.0;  // minkowski exponent
  Aggregation aggregation = Aggregation::largest;

  std::size_t reference_size() const noexcept { return dim == 0 ? 0 : reference.size() / dim; }
  std::span<const double> reference_row(std::size_t i) const { return {reference.data() + i * dim, dim}; }
};

using DetectorModel =
    std::variant<MaxLogitDetector, MaxSoftmaxDetector, EnergyDetector, MahalanobisDetector, KnnDetector>;

inline bool needs_logits(const DetectorModel& m) { return m.index() <= 2; }

/// Input width a fitted detector expects; nullopt for the logit scorers.
inline std::optional<std::size_t> input_dim(const DetectorModel& m) {
  if (auto* mh = std::get_if<MahalanobisDetector>(&m)) return static_cast<std::size_t>(mh->class_means.cols());
  if (auto* kn = std::get_if<KnnDetector>(&m)) return kn->dim;
  return std::nullopt;
}

inline std::string detector_name(const DetectorModel& m) {
  return std::visit(
      [](const auto& d) -> std::string {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, MaxLogitDetector>) return "max-logit";
        else if constexpr (std::is_same_v<T, MaxSoftmaxDetector>) return "max-softmax";
        else if constexpr (std::is_same_v<T, EnergyDetector>) return "energy";
        else if constexpr (std::is_same_v<T, MahalanobisDetector>) return "mahalanobis";
        else return "knn";
      },
      m);
}

// ---------------------------------------------------------------------------
// Mahalanobis
// ---------------------------------------------------------------------------

/// Per-class means and the 1/N tied covariance, before regularization.
struct GaussianFit {
  Eigen::MatrixXd class_means;
  Eigen::MatrixXd tied_covariance;
};

inline GaussianFit tied_gaussian_moments(const LogitDataset& ds) {
  if (!ds.labeled()) throw Error(ErrorCode::UnlabeledDataset, "Mahalanobis fitting needs labels");
  const auto k = static_cast<Eigen::Index>(ds.num_classes());
  const auto d = static_cast<Eigen::Index>(ds.num_columns());
  std::vector<std::size_t> counts(ds.num_classes(), 0);
  GaussianFit fit{Eigen::MatrixXd::Zero(k, d), Eigen::MatrixXd::Zero(d, d)};
  for (const auto& row : ds.rows()) {
    const auto c = static_cast<std::size_t>(*row.label);
    ++counts[c];
    fit.class_means.row(static_cast<Eigen::Index>(c)) += Eigen::Map<const Eigen::RowVectorXd>(row.values.data(), d);
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < 2) throw Error(ErrorCode::ClassTooSmall, "Mahalanobis fit needs >= 2 samples per class", c);
    fit.class_means.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(counts[c]);
  }
  Eigen::VectorXd centered(d);
  for (const auto& row : ds.rows()) {
    centered = Eigen::Map<const Eigen::VectorXd>(row.values.data(), d) -
               fit.class_means.row(*row.label).transpose();
    fit.tied_covariance.selfadjointView<Eigen::Lower>().rankUpdate(centered);
  }
  fit.tied_covariance = fit.tied_covariance.selfadjointView<Eigen::Lower>();
  fit.tied_covariance /= static_cast<double>(ds.size());
  return fit;
}

/// Ridge is eps = eps_scale * trace(S) / D; a zero-trace covariance falls
/// back to eps = eps_scale so the degenerate fit becomes eps * I.
inline MahalanobisDetector fit_mahalanobis(const LogitDataset& features, double eps_scale = 1e-6) {
  if (!(eps_scale >= 0.0) || !std::isfinite(eps_scale))
    throw Error(ErrorCode::InvalidArgument, "eps_scale must be finite and >= 0");
  auto fit = tied_gaussian_moments(features);
  const auto d = fit.tied_covariance.rows();
  const double trace = fit.tied_covariance.trace();
  const double eps = trace > 0.0 ? eps_scale * trace / static_cast<double>(d) : eps_scale;
  Eigen::MatrixXd regularized = fit.tied_covariance;
  regularized.diagonal().array() += eps;
  Eigen::LLT<Eigen::MatrixXd> llt(regularized);
  if (llt.info() != Eigen::Success || (llt.matrixL().toDenseMatrix().diagonal().array() <= 0.0).any())
    throw Error(ErrorCode::SingularCovariance, "regularized tied covariance is not positive definite");
  Eigen::MatrixXd inverse = llt.solve(Eigen::MatrixXd::Identity(d, d));
  inverse = 0.5 * (inverse + inverse.transpose());
  return {std::move(fit.class_means), std::move(inverse), eps};
}

/// Smallest squared Mahalanobis distance to any class mean.
inline double mahalanobis_score(const MahalanobisDetector& model, std::span<const double> x) {
  const auto d = model.class_means.cols();
  if (static_cast<Eigen::Index>(x.size()) != d)
    throw Error(ErrorCode::DimensionMismatch,
                "expected " + std::to_string(d) + " features, got " + std::to_string(x.size()));
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), d);
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd diff(d);
  for (Eigen::Index j = 0; j < model.class_means.rows(); ++j) {
    diff = xv - model.class_means.row(j).transpose();
    best = std::min(best, diff.dot(model.tied_covariance_inverse * diff));
  }
  return best;
}

// ---------------------------------------------------------------------------
// k-NN
// ---------------------------------------------------------------------------

inline double distance(std::span<const double> u, std::span<const double> v, Metric metric, double p = 2.0) {
  if (u.size() != v.size()) throw Error(ErrorCode::DimensionMismatch, "distance between vectors of different length");
  double acc = 0.0;
  switch (metric) {
    case Metric::euclidean:
      for (std::size_t i = 0; i < u.size(); ++i) acc += (u[i] - v[i]) * (u[i] - v[i]);
      return std::sqrt(acc);
    case Metric::manhattan:
      for (std::size_t i = 0; i < u.size(); ++i) acc += std::abs(u[i] - v[i]);
      return acc;
    case Metric::chebyshev:
      for (std::size_t i = 0; i < u.size(); ++i) acc = std::max(acc, std::abs(u[i] - v[i]));
      return acc;
    case Metric::minkowski:
      for (std::size_t i = 0; i < u.size(); ++i) acc += std::pow(std::abs(u[i] - v[i]), p);
      return std::pow(acc, 1.0 / p);
    case Metric::braycurtis: {
      double den = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) {
        acc += std::abs(u[i] - v[i]);
        den += std::abs(u[i] + v[i]);
      }
      // 0/0 (both zero vectors) is distance 0; x/0 with x > 0 saturates at 1
      if (den == 0.0) return acc == 0.0 ? 0.0 : 1.0;
      return acc / den;
    }
  }
  return acc;
}

/// Aggregates the k smallest of `dists` (which is reordered).
inline double aggregate_k_smallest(std::vector<double>& dists, std::size_t k, Aggregation aggregation) {
  std::partial_sort(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(k), dists.end());
  switch (aggregation) {
    case Aggregation::largest:
      return dists[k - 1];
    case Aggregation::mean: {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += dists[i];
      return s / static_cast<double>(k);
    }
    case Aggregation::median:
      return k % 2 == 1 ? dists[k / 2] : 0.5 * (dists[k / 2 - 1] + dists[k / 2]);
  }
  return dists[k - 1];
}

inline KnnDetector fit_knn(const LogitDataset& reference, std::size_t k, Metric metric,
                           Aggregation aggregation, double p = 2.0) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (k > reference.size())
    throw Error(ErrorCode::KExceedsReferenceSize,
                "k=" + std::to_string(k) + " but reference has " + std::to_string(reference.size()) + " rows");
  if (metric == Metric::minkowski && !(p >= 1.0)) throw Error(ErrorCode::InvalidArgument, "minkowski p must be >= 1");
  KnnDetector model;
  model.dim = reference.num_columns();
  model.reference.reserve(reference.size() * model.dim);
  for (const auto& row : reference.rows()) model.reference.insert(model.reference.end(), row.values.begin(), row.values.end());
  model.k = k;
  model.metric = metric;
  model.p = p;
  model.aggregation = aggregation;
  return model;
}

inline double knn_score(const KnnDetector& model, std::span<const double> x) {
  if (x.size() != model.dim)
    throw Error(ErrorCode::DimensionMismatch,
                "expected " + std::to_string(model.dim) + " features, got " + std::to_string(x.size()));
  const auto n = model.reference_size();
  if (model.k < 1 || model.k > n) throw Error(ErrorCode::KExceedsReferenceSize, "k exceeds reference size");
  std::vector<double> dists(n);
  for (std::size_t i = 0; i < n; ++i) dists[i] = distance(x, model.reference_row(i), model.metric, model.p);
  return aggregate_k_smallest(dists, model.k, model.aggregation);
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

inline double score_row(const DetectorModel& model, std::span<const double> row) {
  return std::visit(
      [&](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, MaxLogitDetector>) return max_logit_score(row);
        else if constexpr (std::is_same_v<T, MaxSoftmaxDetector>) return max_softmax_score(row, d.temperature);
        else if constexpr (std::is_same_v<T, EnergyDetector>) return energy_score(row, d.temperature);
        else if constexpr (std::is_same_v<T, MahalanobisDetector>) return mahalanobis_score(d, row);
        else return knn_score(d, row);
      },
      model);
}

/// One score per sample plus the activated class (argmax) when the columns
/// are logits.
struct ScoreVector {
  std::vector<double> scores;
  std::optional<std::vector<std::size_t>> activated;

  std::size_t size() const noexcept { return scores.size(); }
  bool empty() const noexcept { return scores.empty(); }
};

inline ScoreVector score_dataset(const DetectorModel& model, const LogitDataset& ds) {
  if (needs_logits(model) && ds.column_kind() != ColumnKind::logits)
    throw Error(ErrorCode::IncompatibleDataset, detector_name(model) + " needs a logit dataset");
  if (auto dim = input_dim(model); dim && *dim != ds.num_columns())
    throw Error(ErrorCode::DimensionMismatch, "detector expects " + std::to_string(*dim) + " columns, dataset '" +
                                                  ds.name() + "' has " + std::to_string(ds.num_columns()));
  ScoreVector out;
  out.scores.reserve(ds.size());
  const bool logits = ds.column_kind() == ColumnKind::logits;
  if (logits) out.activated.emplace().reserve(ds.size());
  for (const auto& row : ds.rows()) {
    out.scores.push_back(score_row(model, row.values));
    if (logits) out.activated->push_back(argmax_class(row.values));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json matrix_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto r = nlohmann::ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& r = j.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(r.size()) != cols) throw Error(ErrorCode::InvalidArgument, "ragged matrix in model file");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = r.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

}  // namespace detail

inline nlohmann::ordered_json detector_to_json(const DetectorModel& model) {
  nlohmann::ordered_json j;
  j["kind"] = detector_name(model);
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, MaxSoftmaxDetector> || std::is_same_v<T, EnergyDetector>) {
          j["temperature"] = d.temperature;
        } else if constexpr (std::is_same_v<T, MahalanobisDetector>) {
          j["regularization"] = d.regularization;
          j["class_means"] = detail::matrix_json(d.class_means);
          j["tied_covariance_inverse"] = detail::matrix_json(d.tied_covariance_inverse);
        } else if constexpr (std::is_same_v<T, KnnDetector>) {
          j["k"] = d.k;
          j["metric"] = std::string(to_string(d.metric));
          j["p"] = d.p;
          j["aggregation"] = std::string(to_string(d.aggregation));
          j["dim"] = d.dim;
          auto ref = nlohmann::ordered_json::array();
          for (std::size_t i = 0; i < d.reference_size(); ++i) {
            const auto r = d.reference_row(i);
            ref.push_back(std::vector<double>(r.begin(), r.end()));
          }
          j["reference"] = std::move(ref);
        }
      },
      model);
  return j;
}

inline DetectorModel detector_from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "max-logit") return MaxLogitDetector{};
    if (kind == "max-softmax" || kind == "energy") {
      const double t = j.value("temperature", 1.0);
      detail::check_temperature(t);
      if (kind == "energy") return EnergyDetector{t};
      return MaxSoftmaxDetector{t};
    }
    if (kind == "mahalanobis") {
      MahalanobisDetector m;
      m.regularization = j.value("regularization", 0.0);
      m.class_means = detail::matrix_from_json(j.at("class_means"));
      m.tied_covariance_inverse = detail::matrix_from_json(j.at("tied_covariance_inverse"));
      const auto d = m.class_means.cols();
      if (m.class_means.rows() < 1 || m.tied_covariance_inverse.rows() != d || m.tied_covariance_inverse.cols() != d)
        throw Error(ErrorCode::DimensionMismatch, "inconsistent Mahalanobis model shapes");
      return m;
    }
    if (kind == "knn") {
      KnnDetector m;
      m.k = j.at("k").get<std::size_t>();
      m.metric = parse_metric(j.at("metric").get<std::string>());
      m.p = j.value("p", 2.0);
      m.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
      m.dim = j.at("dim").get<std::size_t>();
      for (const auto& row : j.at("reference")) {
        if (row.size() != m.dim) throw Error(ErrorCode::DimensionMismatch, "reference row width differs from dim");
        for (const auto& v : row) m.reference.push_back(v.get<double>());
      }
      if (m.k < 1 || m.k > m.reference_size()) throw Error(ErrorCode::KExceedsReferenceSize, "k exceeds reference size");
      return m;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown detector kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad detector model: ") + e.what());
  }
}

}  // namespace oodcal
