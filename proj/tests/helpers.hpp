#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "oodcal/oodcal.hpp"

#define EXPECT_OODCAL_ERROR(stmt, expected_code)                                     \
  do {                                                                               \
    try {                                                                            \
      stmt;                                                                          \
      ADD_FAILURE() << "no exception from " #stmt;                                   \
    } catch (const oodcal::Error& e) {                                               \
      EXPECT_EQ(oodcal::to_string(e.code()), oodcal::to_string(expected_code)) << e.what(); \
    }                                                                                \
  } while (0)

namespace testing_util {

inline oodcal::LogitDataset logits(const std::vector<std::vector<double>>& rows, std::vector<int> labels = {},
                                   std::string name = "t",
                                   oodcal::DatasetKind kind = oodcal::DatasetKind::in_distribution) {
  const std::size_t k = rows.at(0).size();
  std::vector<oodcal::SampleRow> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::optional<int> label;
    if (!labels.empty()) label = labels[i];
    out.push_back({"r" + std::to_string(i), label, rows[i]});
  }
  return {{std::move(name), kind, k, k, oodcal::ColumnKind::logits}, std::move(out)};
}

inline oodcal::LogitDataset features(const std::vector<std::vector<double>>& rows, std::vector<int> labels,
                                     std::size_t num_classes) {
  std::vector<oodcal::SampleRow> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::optional<int> label;
    if (!labels.empty()) label = labels[i];
    out.push_back({"f" + std::to_string(i), label, rows[i]});
  }
  const auto kind = labels.empty() ? oodcal::DatasetKind::out_of_distribution : oodcal::DatasetKind::in_distribution;
  return {{"feat", kind, num_classes, rows.at(0).size(), oodcal::ColumnKind::features}, std::move(out)};
}

inline oodcal::ScoreVector scores(std::vector<double> s, std::vector<std::size_t> activated = {}) {
  oodcal::ScoreVector v{std::move(s), std::nullopt};
  if (!activated.empty()) v.activated = std::move(activated);
  return v;
}

inline std::vector<double> iota_scores(double from, double to) {
  std::vector<double> s;
  for (double x = from; x <= to; x += 1.0) s.push_back(x);
  return s;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("oodcal_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace testing_util
