// Command-line front end: synth | rates | decompose | masks | train.
//
// Exit codes: 0 success, 1 invalid configuration or failed verification,
// 2 runtime failure (diverged run, I/O error).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "omgd/omgd.hpp"

namespace {

// Builds the merged configuration for commands that accept preset + file +
// flag layers (later layers win key-by-key).
omgd::ConfigMap merge_layers(const std::string& preset, const std::string& config_file,
                             const std::vector<std::string>& sets) {
  omgd::ConfigMap merged;
  if (!preset.empty()) merged = omgd::preset_by_name(preset);
  if (!config_file.empty()) {
    std::ifstream is(config_file);
    if (!is) throw omgd::ConfigError("cannot open config file: " + config_file);
    omgd::merge_config(merged, omgd::parse_config_text(is));
  }
  if (!sets.empty()) {
    omgd::ConfigMap flags;
    for (const std::string& item : sets) {
      // --set section.key=value
      const auto dot = item.find('.');
      const auto eq = item.find('=');
      if (dot == std::string::npos || eq == std::string::npos || dot > eq) {
        throw omgd::ConfigError("--set expects section.key=value, got: " + item);
      }
      flags[item.substr(0, dot)][item.substr(dot + 1, eq - dot - 1)] = item.substr(eq + 1);
    }
    omgd::merge_config(merged, flags);
  }
  if (merged.empty()) {
    throw omgd::ConfigError("no configuration given (use --preset, --config, or --set)");
  }
  return merged;
}

std::vector<std::string> collect_trace_files(const std::vector<std::string>& files,
                                             const std::string& dir) {
  std::vector<std::string> all = files;
  if (!dir.empty()) {
    const std::filesystem::path root = omgd::resolve_out_dir(dir);
    if (!std::filesystem::is_directory(root)) {
      throw omgd::ConfigError("rates: not a directory: " + root.string());
    }
    std::vector<std::string> found;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
      if (entry.is_regular_file() && entry.path().extension() == ".csv") {
        // summary/period files and partial runs are not fit material
        const std::string name = entry.path().filename().string();
        if (name == "summary.csv" || name.find("_periods") != std::string::npos) continue;
        found.push_back(entry.path().string());
      }
    }
    std::sort(found.begin(), found.end());
    all.insert(all.end(), found.begin(), found.end());
  }
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked-gradient experiment harness"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(omgd::version_string));

  std::string preset, config_file;
  std::vector<std::string> sets;

  auto add_config_options = [&](CLI::App* cmd) {
    cmd->add_option("--preset", preset, "built-in preset: figure2, lemma-suite, lisa-ablation");
    cmd->add_option("--config", config_file, "INI config file");
    cmd->add_option("--set", sets, "override, repeatable: section.key=value");
  };

  CLI::App* synth = app.add_subcommand(
      "synth", "run estimators on a synthetic least-squares instance");
  add_config_options(synth);

  CLI::App* train = app.add_subcommand("train", "layer-subset training ablation grid");
  add_config_options(train);

  std::string decompose_out;
  CLI::App* decompose = app.add_subcommand(
      "decompose", "run one estimator with the error split recorded");
  add_config_options(decompose);
  decompose->add_option("--out", decompose_out, "write the trace CSV here");

  std::vector<std::string> rate_files;
  std::string rate_dir, rate_column = "theta_err", rate_out;
  std::int64_t rate_lo = 0, rate_hi = 0;
  CLI::App* rates = app.add_subcommand("rates", "fit log-log slopes from trace CSVs");
  rates->add_option("files", rate_files, "trace CSV files");
  rates->add_option("--dir", rate_dir, "read every run CSV in this directory");
  rates->add_option("--column", rate_column,
                    "theta_err, grad_norm, subopt, decay, reshuffle, compress");
  rates->add_option("--window-lo", rate_lo, "fit window start step (0: last/100)");
  rates->add_option("--window-hi", rate_hi, "fit window end step (0: last checkpoint)");
  rates->add_option("--out", rate_out, "write JSON here instead of stdout");

  int masks_d = 0, masks_m = 0;
  std::uint64_t masks_seed = 0;
  std::vector<int> masks_pinned;
  std::string masks_out, masks_check;
  CLI::App* masks = app.add_subcommand("masks", "generate or verify a coordinate partition");
  masks->add_option("--d", masks_d, "dimension");
  masks->add_option("--masks", masks_m, "number of masks per cycle");
  masks->add_option("--pinned", masks_pinned, "coordinates active in every mask")
      ->delimiter(',');
  masks->add_option("--seed", masks_seed, "generation seed");
  masks->add_option("--out", masks_out, "write the mask set here");
  masks->add_option("--check", masks_check, "verify a previously written mask-set file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      return omgd::cmd_synth(merge_layers(preset, config_file, sets), std::cout);
    }
    if (train->parsed()) {
      return omgd::cmd_train(merge_layers(preset, config_file, sets), std::cout);
    }
    if (decompose->parsed()) {
      return omgd::cmd_decompose(merge_layers(preset, config_file, sets), decompose_out,
                                 std::cout);
    }
    if (rates->parsed()) {
      return omgd::cmd_rates(collect_trace_files(rate_files, rate_dir), rate_column,
                             rate_lo, rate_hi, rate_out, std::cout);
    }
    if (masks->parsed()) {
      if (!masks_check.empty()) return omgd::cmd_masks_check(masks_check, std::cout);
      if (masks_d < 1 || masks_m < 1) {
        throw omgd::ConfigError("masks: need --d >= 1 and --masks >= 1 (or --check FILE)");
      }
      return omgd::cmd_masks_generate(masks_d, masks_m, masks_pinned, masks_seed,
                                      masks_out, std::cout);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
