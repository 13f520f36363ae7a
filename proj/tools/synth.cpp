// oodcal-synth: write synthetic logit datasets (CSV + manifest) for demos and tests.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "oodcal/oodcal.hpp"
#include "oodcal/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic logit datasets"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::size_t classes = 10;
  std::string out, manifest, name;
  app.add_option("--seed", seed, "RNG seed");
  app.add_option("--classes,-K", classes, "Number of classes")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "CSV output path")->required();
  app.add_option("--manifest", manifest, "Manifest path (default: CSV path with .json)");
  app.add_option("--name", name, "Dataset name");
  app.fallthrough();

  std::size_t per_class = 1000;
  double mean_base = 10.0, mean_step = 1.0, sd_base = 1.0, sd_step = 0.3;
  auto* id_cmd = app.add_subcommand("id", "Labeled ID logits; class j top logit ~ N(base + j*step, sd_base + j*sd_step)");
  id_cmd->add_option("--per-class", per_class, "Rows per class");
  id_cmd->add_option("--mean-base", mean_base);
  id_cmd->add_option("--mean-step", mean_step);
  id_cmd->add_option("--sd-base", sd_base);
  id_cmd->add_option("--sd-step", sd_step);

  std::size_t n = 1000;
  double mean = 8.0, sd = 2.0;
  auto* ood_cmd = app.add_subcommand("ood", "Unlabeled OoD logits with top logit ~ N(mean, sd)");
  ood_cmd->add_option("--n", n, "Number of rows");
  ood_cmd->add_option("--mean", mean);
  ood_cmd->add_option("--sd", sd);

  CLI11_PARSE(app, argc, argv);
  if (manifest.empty()) manifest = std::filesystem::path(out).replace_extension(".json").string();

  try {
    oodcal::LogitDataset ds;
    if (*id_cmd) {
      oodcal::synthetic::LogitSpec spec;
      spec.num_classes = classes;
      spec.mean = [=](std::size_t j) { return mean_base + mean_step * static_cast<double>(j); };
      spec.sd = [=](std::size_t j) { return sd_base + sd_step * static_cast<double>(j); };
      ds = oodcal::synthetic::id_logits(spec, per_class, seed, name.empty() ? "synthetic-id" : name);
    } else {
      ds = oodcal::synthetic::ood_logits(classes, n, mean, sd, seed, name.empty() ? "synthetic-ood" : name);
    }
    oodcal::save_dataset(ds, out, manifest);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
