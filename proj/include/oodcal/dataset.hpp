#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "oodcal/error.hpp"
#include "oodcal/rng.hpp"

namespace oodcal {

enum class DatasetKind { in_distribution, out_of_distribution };
enum class ColumnKind { logits, features };

/// Round half away from zero. Every count derived from a fraction goes
/// through here.
inline std::int64_t round_count(double x) { return std::llround(x); }

struct SampleRow {
  std::string id;
  std::optional<int> label;
  std::vector<double> values;

  friend bool operator==(const SampleRow&, const SampleRow&) = default;
};

struct DatasetInfo {
  std::string name;
  DatasetKind kind = DatasetKind::in_distribution;
  std::size_t num_classes = 0;
  std::size_t num_columns = 0;
  ColumnKind column_kind = ColumnKind::logits;

  friend bool operator==(const DatasetInfo&, const DatasetInfo&) = default;
};

namespace detail {

inline bool valid_id(std::string_view id) {
  return !id.empty() && id.find_first_of(",\"\r\n") == std::string_view::npos;
}

// Checks one row against the dataset invariants. `row_number` is 1-based.
inline void validate_row(const DatasetInfo& info, const SampleRow& row, std::size_t row_number,
                         std::unordered_set<std::string>& seen_ids) {
  if (!valid_id(row.id)) throw Error(ErrorCode::MalformedValue, "bad sample id", row_number);
  if (row.values.size() != info.num_columns)
    throw Error(ErrorCode::ColumnCountMismatch,
                "expected " + std::to_string(info.num_columns) + " values, got " +
                    std::to_string(row.values.size()),
                row_number);
  for (double v : row.values)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "", row_number);
  if (row.label && info.kind == DatasetKind::in_distribution &&
      (*row.label < 0 || static_cast<std::size_t>(*row.label) >= info.num_classes))
    throw Error(ErrorCode::LabelOutOfRange,
                "label " + std::to_string(*row.label) + " outside [0, " +
                    std::to_string(info.num_classes) + ")",
                row_number);
  if (!seen_ids.insert(row.id).second)
    throw Error(ErrorCode::DuplicateId, "id '" + row.id + "'", row_number);
}

}  // namespace detail

/// Immutable table of samples with a K-dimensional logit (or D-dimensional
/// feature) vector per row. Construction validates every invariant.
class LogitDataset {
 public:
  LogitDataset() = default;

  LogitDataset(DatasetInfo info, std::vector<SampleRow> rows)
      : info_(std::move(info)), rows_(std::move(rows)) {
    if (info_.num_columns == 0)
      throw Error(ErrorCode::InvalidArgument, "num_columns must be positive");
    if (info_.column_kind == ColumnKind::logits && info_.num_classes != info_.num_columns)
      throw Error(ErrorCode::InvalidArgument, "logit datasets need num_classes == num_columns");
    std::unordered_set<std::string> seen;
    seen.reserve(rows_.size());
    for (std::size_t i = 0; i < rows_.size(); ++i) detail::validate_row(info_, rows_[i], i + 1, seen);
  }

  const DatasetInfo& info() const noexcept { return info_; }
  const std::string& name() const noexcept { return info_.name; }
  DatasetKind kind() const noexcept { return info_.kind; }
  std::size_t num_classes() const noexcept { return info_.num_classes; }
  std::size_t num_columns() const noexcept { return info_.num_columns; }
  ColumnKind column_kind() const noexcept { return info_.column_kind; }
  const std::vector<SampleRow>& rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  const SampleRow& operator[](std::size_t i) const { return rows_[i]; }

  /// True when every row carries a label.
  bool labeled() const noexcept {
    return std::all_of(rows_.begin(), rows_.end(), [](const SampleRow& r) { return r.label.has_value(); });
  }

  /// Labels with -1 standing in for a missing label.
  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(rows_.size());
    for (const auto& r : rows_) out.push_back(r.label.value_or(-1));
    return out;
  }

  friend bool operator==(const LogitDataset&, const LogitDataset&) = default;

 private:
  DatasetInfo info_;
  std::vector<SampleRow> rows_;
};

/// Per-class non-negative weights (oversampling factors or label marginals).
struct ClassWeights {
  std::vector<double> weights;

  void validate(std::size_t num_classes) const {
    if (weights.size() != num_classes)
      throw Error(ErrorCode::InvalidArgument, "expected " + std::to_string(num_classes) + " class weights");
    bool any_positive = false;
    for (double w : weights) {
      if (!std::isfinite(w) || w < 0.0) throw Error(ErrorCode::InvalidArgument, "class weights must be finite and >= 0");
      any_positive = any_positive || w > 0.0;
    }
    if (!any_positive) throw Error(ErrorCode::InvalidArgument, "at least one class weight must be positive");
  }
};

// ---------------------------------------------------------------------------
// Manifest and CSV I/O
// ---------------------------------------------------------------------------

inline std::string_view to_string(DatasetKind k) { return k == DatasetKind::in_distribution ? "id" : "ood"; }
inline std::string_view to_string(ColumnKind k) { return k == ColumnKind::logits ? "logits" : "features"; }

/// Parses `{"name", "kind": "id"|"ood", "num_classes", "column_kind"}`.
/// `num_columns` is optional; it defaults to num_classes for logits and is
/// otherwise taken from the CSV header (left 0 here).
inline DatasetInfo parse_manifest(const nlohmann::json& j) {
  auto fail = [](const std::string& what) { return Error(ErrorCode::MalformedManifest, what); };
  if (!j.is_object()) throw fail("manifest must be a JSON object");
  DatasetInfo info;
  try {
    info.name = j.at("name").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "id") info.kind = DatasetKind::in_distribution;
    else if (kind == "ood") info.kind = DatasetKind::out_of_distribution;
    else throw fail("kind must be \"id\" or \"ood\"");
    const auto k = j.at("num_classes").get<std::int64_t>();
    if (k < 1) throw fail("num_classes must be positive");
    info.num_classes = static_cast<std::size_t>(k);
    const auto ck = j.at("column_kind").get<std::string>();
    if (ck == "logits") info.column_kind = ColumnKind::logits;
    else if (ck == "features") info.column_kind = ColumnKind::features;
    else throw fail("column_kind must be \"logits\" or \"features\"");
    if (j.contains("num_columns")) {
      const auto d = j.at("num_columns").get<std::int64_t>();
      if (d < 1) throw fail("num_columns must be positive");
      info.num_columns = static_cast<std::size_t>(d);
    } else if (info.column_kind == ColumnKind::logits) {
      info.num_columns = info.num_classes;
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
  return info;
}

inline nlohmann::ordered_json manifest_json(const DatasetInfo& info) {
  nlohmann::ordered_json j;
  j["name"] = info.name;
  j["kind"] = std::string(to_string(info.kind));
  j["num_classes"] = info.num_classes;
  j["column_kind"] = std::string(to_string(info.column_kind));
  j["num_columns"] = info.num_columns;
  return j;
}

inline DatasetInfo read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open manifest " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedManifest, e.what());
  }
  return parse_manifest(j);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

inline double parse_real(std::string_view tok, std::size_t row_number) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec == std::errc::result_out_of_range) throw Error(ErrorCode::NonFiniteValue, "value out of range", row_number);
  if (ec != std::errc{} || ptr != tok.data() + tok.size() || tok.empty())
    throw Error(ErrorCode::MalformedValue, "cannot parse '" + std::string(tok) + "'", row_number);
  return v;
}

inline std::optional<int> parse_label(std::string_view tok, std::size_t row_number) {
  if (tok.empty()) return std::nullopt;
  int v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec == std::errc::result_out_of_range) throw Error(ErrorCode::LabelOutOfRange, "", row_number);
  if (ec != std::errc{} || ptr != tok.data() + tok.size())
    throw Error(ErrorCode::MalformedValue, "cannot parse label '" + std::string(tok) + "'", row_number);
  return v;
}

inline void append_real(std::string& out, double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

}  // namespace detail

/// Reads the canonical CSV (`id,label,c0,...,c{N-1}`) against a manifest.
inline LogitDataset read_dataset_csv(std::istream& in, DatasetInfo info) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MalformedHeader, "empty file");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const auto header = detail::split_commas(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label")
    throw Error(ErrorCode::MalformedHeader, "header must start with id,label,c0");
  const std::size_t columns = header.size() - 2;
  for (std::size_t c = 0; c < columns; ++c)
    if (header[c + 2] != "c" + std::to_string(c))
      throw Error(ErrorCode::MalformedHeader, "column " + std::to_string(c + 2) + " must be named c" + std::to_string(c));
  if (info.num_columns == 0) info.num_columns = columns;
  if (columns != info.num_columns)
    throw Error(ErrorCode::MalformedHeader, "header has " + std::to_string(columns) + " value columns, manifest declares " +
                                                std::to_string(info.num_columns));

  std::vector<SampleRow> rows;
  std::unordered_set<std::string> seen;
  std::size_t row_number = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row_number;
    const auto tok = detail::split_commas(line);
    if (tok.size() != columns + 2)
      throw Error(ErrorCode::ColumnCountMismatch,
                  "expected " + std::to_string(columns + 2) + " fields, got " + std::to_string(tok.size()), row_number);
    SampleRow row;
    row.id = std::string(tok[0]);
    row.label = detail::parse_label(tok[1], row_number);
    row.values.reserve(columns);
    for (std::size_t c = 0; c < columns; ++c) row.values.push_back(detail::parse_real(tok[c + 2], row_number));
    detail::validate_row(info, row, row_number, seen);
    rows.push_back(std::move(row));
  }
  return LogitDataset(std::move(info), std::move(rows));
}

inline LogitDataset load_dataset(const std::string& csv_path, const std::string& manifest_path) {
  auto info = read_manifest(manifest_path);
  std::ifstream in(csv_path);
  if (!in) throw Error(ErrorCode::Io, "cannot open dataset " + csv_path);
  return read_dataset_csv(in, std::move(info));
}

/// Writes shortest round-trip decimals, so load(save(ds)) == ds bit-exactly.
inline void write_dataset_csv(std::ostream& out, const LogitDataset& ds) {
  std::string buf = "id,label";
  for (std::size_t c = 0; c < ds.num_columns(); ++c) buf += ",c" + std::to_string(c);
  buf += '\n';
  out << buf;
  for (const auto& row : ds.rows()) {
    buf.clear();
    buf += row.id;
    buf += ',';
    if (row.label) buf += std::to_string(*row.label);
    for (double v : row.values) {
      buf += ',';
      detail::append_real(buf, v);
    }
    buf += '\n';
    out << buf;
  }
}

inline void save_dataset(const LogitDataset& ds, const std::string& csv_path, const std::string& manifest_path) {
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw Error(ErrorCode::Io, "cannot write " + csv_path);
  write_dataset_csv(csv, ds);
  std::ofstream man(manifest_path, std::ios::binary);
  if (!man) throw Error(ErrorCode::Io, "cannot write " + manifest_path);
  man << manifest_json(ds.info()).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Splitting and resampling
// ---------------------------------------------------------------------------

namespace detail {

inline LogitDataset subset(const LogitDataset& ds, std::span<const std::size_t> indices) {
  std::vector<SampleRow> rows;
  rows.reserve(indices.size());
  for (auto i : indices) rows.push_back(ds[i]);
  return LogitDataset(ds.info(), std::move(rows));
}

}  // namespace detail

/// Stratified split by label (unlabeled rows form one stratum). Each stratum
/// sends round(valid_fraction * n) rows to the validation side; both sides
/// keep the input's row order.
inline std::pair<LogitDataset, LogitDataset> split_dataset(const LogitDataset& ds, double valid_fraction,
                                                           std::uint64_t seed) {
  if (!(valid_fraction > 0.0 && valid_fraction < 1.0))
    throw Error(ErrorCode::InvalidArgument, "valid_fraction must lie in (0, 1)");
  if (ds.size() < 2) throw Error(ErrorCode::ClassTooSmall, "dataset needs at least 2 rows");

  std::vector<std::vector<std::size_t>> strata(ds.num_classes() + 1);  // last slot: unlabeled
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& label = ds[i].label;
    const bool in_range = label && *label >= 0 && static_cast<std::size_t>(*label) < ds.num_classes();
    strata[in_range ? static_cast<std::size_t>(*label) : ds.num_classes()].push_back(i);
  }

  Rng rng(seed);
  std::vector<char> to_valid(ds.size(), 0);
  for (std::size_t s = 0; s < strata.size(); ++s) {
    auto& members = strata[s];
    if (members.empty()) continue;
    const auto n_valid = round_count(valid_fraction * static_cast<double>(members.size()));
    if (n_valid < 1 || n_valid >= static_cast<std::int64_t>(members.size())) {
      if (s == ds.num_classes()) throw Error(ErrorCode::ClassTooSmall, "unlabeled stratum too small to split");
      throw Error(ErrorCode::ClassTooSmall, "class cannot supply a sample to both sides", s);
    }
    rng.shuffle(std::span<std::size_t>(members));
    for (std::int64_t k = 0; k < n_valid; ++k) to_valid[members[static_cast<std::size_t>(k)]] = 1;
  }

  std::vector<std::size_t> train_idx, valid_idx;
  for (std::size_t i = 0; i < ds.size(); ++i) (to_valid[i] ? valid_idx : train_idx).push_back(i);
  return {detail::subset(ds, train_idx), detail::subset(ds, valid_idx)};
}

namespace detail {

/// Class membership computed once, reused by every resampling trial.
class ClassResampler {
 public:
  ClassResampler(std::span<const int> labels, std::size_t num_classes) : members_(num_classes), size_(labels.size()) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
        throw Error(ErrorCode::UnlabeledDataset, "row without a usable label", i + 1);
      members_[static_cast<std::size_t>(labels[i])].push_back(i);
    }
  }

  std::size_t class_size(std::size_t c) const { return members_[c].size(); }

    void copies(std::span<const double> weights, Rng& rng, std::vector<std::uint32_t>& out,
              std::vector<std::size_t>& scratch) const {
    out.assign(size_, 0);
    for (std::size_t c = 0; c < members_.size(); ++c) {
      const auto& m = members_[c];
      if (m.empty()) continue;
      const auto n = static_cast<std::int64_t>(m.size());
      const std::int64_t total = std::max<std::int64_t>(0, round_count(weights[c] * static_cast<double>(n)));
      const auto full = static_cast<std::uint32_t>(total / n);
      const auto rest = static_cast<std::size_t>(total % n);
      for (auto i : m) out[i] = full;
      if (rest == 0) continue;
      scratch.assign(m.begin(), m.end());
      for (std::size_t k = 0; k < rest; ++k) {
        const auto j = k + static_cast<std::size_t>(rng.below(scratch.size() - k));
        std::swap(scratch[k], scratch[j]);
        ++out[scratch[k]];
      }
    }
  }

 private:
  std::vector<std::vector<std::size_t>> members_;
  std::size_t size_;
};

}  // namespace detail

/// Copy count per row after class resampling. Class i keeps round(w_i * n_i)
/// rows: floor(total / n_i) full copies of every member, plus the remainder
/// drawn without replacement. Integer weights therefore duplicate exactly and
/// weight 1 is the identity.
inline std::vector<std::uint32_t> resample_copy_counts(std::span<const int> labels, std::size_t num_classes,
                                                       std::span<const double> weights, Rng& rng) {
  std::vector<std::uint32_t> copies;
  std::vector<std::size_t> scratch;
  detail::ClassResampler(labels, num_classes).copies(weights, rng, copies, scratch);
  return copies;
}

inline LogitDataset resample_by_class(const LogitDataset& ds, const ClassWeights& w, std::uint64_t seed) {
  if (!ds.labeled()) throw Error(ErrorCode::UnlabeledDataset, "class resampling needs labels");
  w.validate(ds.num_classes());
  Rng rng(seed);
  const auto labels = ds.labels();
  const auto copies = resample_copy_counts(labels, ds.num_classes(), w.weights, rng);
  std::vector<SampleRow> rows;
  rows.reserve(std::accumulate(copies.begin(), copies.end(), std::size_t{0}));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::uint32_t c = 0; c < copies[i]; ++c) {
      rows.push_back(ds[i]);
      if (c > 0) rows.back().id += "#" + std::to_string(c);
    }
  }
  return LogitDataset(ds.info(), std::move(rows));
}

}  // namespace oodcal
