#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "oodcal/dataset.hpp"
#include "oodcal/rng.hpp"

namespace oodcal::synthetic {

/// Logit generator where class j's activated (maximum) logit follows
/// Normal(mean(j), sd(j)) and the remaining entries are Normal(0, 1), capped
/// below the activated one so argmax always equals the class.
struct LogitSpec {
  std::size_t num_classes = 10;
  std::function<double(std::size_t)> mean = [](std::size_t j) { return 10.0 + static_cast<double>(j); };
  std::function<double(std::size_t)> sd = [](std::size_t j) { return 1.0 + 0.3 * static_cast<double>(j); };
};

inline std::vector<double> logit_row(const LogitSpec& spec, std::size_t cls, double top, Rng& rng) {
  std::vector<double> row(spec.num_classes);
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i == cls) {
      row[i] = top;
    } else {
      row[i] = std::min(rng.normal(), top - 0.5);
    }
  }
  return row;
}

/// `per_class` labeled rows for every class, classes interleaved.
inline LogitDataset id_logits(const LogitSpec& spec, std::size_t per_class, std::uint64_t seed,
                              const std::string& name = "synthetic-id", const std::string& id_prefix = "s") {
  Rng rng(seed);
  std::vector<SampleRow> rows;
  rows.reserve(per_class * spec.num_classes);
  for (std::size_t n = 0; n < per_class; ++n)
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      const double top = rng.normal(spec.mean(c), spec.sd(c));
      rows.push_back({id_prefix + std::to_string(rows.size()), static_cast<int>(c), logit_row(spec, c, top, rng)});
    }
  return LogitDataset({name, DatasetKind::in_distribution, spec.num_classes, spec.num_classes, ColumnKind::logits},
                      std::move(rows));
}

/// Unlabeled OoD rows: uniformly random activated class, activated logit
/// Normal(mean, sd).
inline LogitDataset ood_logits(std::size_t num_classes, std::size_t n, double mean, double sd, std::uint64_t seed,
                               const std::string& name = "synthetic-ood") {
  Rng rng(seed);
  LogitSpec spec;
  spec.num_classes = num_classes;
  std::vector<SampleRow> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(rng.below(num_classes));
    const double top = rng.normal(mean, sd);
    rows.push_back({"o" + std::to_string(i), std::nullopt, logit_row(spec, c, top, rng)});
  }
  return LogitDataset({name, DatasetKind::out_of_distribution, num_classes, num_classes, ColumnKind::logits},
                      std::move(rows));
}

/// Labeled Gaussian feature blobs: class c centred at `centers[c]`,
/// isotropic with standard deviation `sd`.
inline LogitDataset feature_blobs(const std::vector<std::vector<double>>& centers, std::size_t per_class, double sd,
                                  std::uint64_t seed, DatasetKind kind = DatasetKind::in_distribution,
                                  const std::string& name = "blobs") {
  Rng rng(seed);
  const std::size_t d = centers.at(0).size();
  std::vector<SampleRow> rows;
  for (std::size_t n = 0; n < per_class; ++n)
    for (std::size_t c = 0; c < centers.size(); ++c) {
      std::vector<double> x(d);
      for (std::size_t i = 0; i < d; ++i) x[i] = centers[c][i] + sd * rng.normal();
      std::optional<int> label;
      if (kind == DatasetKind::in_distribution) label = static_cast<int>(c);
      rows.push_back({"f" + std::to_string(rows.size()), label, std::move(x)});
    }
  return LogitDataset({name, kind, centers.size(), d, ColumnKind::features}, std::move(rows));
}

}  // namespace oodcal::synthetic
