// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Argument parsing and exit-code mapping for the fitv2 executable.

#pragma once

#include <CLI11.hpp>

#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fitv2/cli/commands.hpp"
#include "fitv2/cli/run_config.hpp"

namespace fitv2 {

// Runs one command line. Returns the process exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Flexible diffusion transformer toolkit", "fitv2"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  CommandOptions opt;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Run configuration file (key = value)");
  app.add_option("--seed", seed, "Root seed (overrides the config)");
  app.add_option("--out", out_dir, "Output directory (overrides the config)");
  app.add_flag("--deterministic", opt.deterministic, "Single-threaded, fixed-step reproducibility mode");
  app.add_option("--set", overrides, "Extra key=value settings applied after the config file")->take_all();

  auto* train = app.add_subcommand("train", "Train a model; resumes from <out>/checkpoint when present");
  auto* sample = app.add_subcommand("sample", "Generate images from a checkpoint");
  auto* adapt = app.add_subcommand("adapt", "Parameter-efficient post-training at a larger token budget");
  auto* eval = app.add_subcommand("eval", "Per-resolution validation loss and sample statistics");
  auto* report = app.add_subcommand("report", "Parameter and FLOP table for the presets and the configured model");

  std::optional<int> height, width, count, label;
  sample->add_option("--from", opt.from, "Checkpoint directory")->required();
  sample->add_option("--height", height, "Image height in pixels");
  sample->add_option("--width", width, "Image width in pixels");
  sample->add_option("-n,--count", count, "Number of images");
  sample->add_option("--class", label, "Class id for every image (default cycles through classes)");

  adapt->add_option("--from", opt.from, "Checkpoint directory")->required();
  adapt->add_option("--lmax", opt.lmax, "New token budget")->required();
  adapt->add_option("--steps", opt.steps, "Post-training steps")->required();

  std::optional<std::string> data_dir, resolutions;
  eval->add_option("--from", opt.from, "Checkpoint directory")->required();
  eval->add_option("--data", data_dir, "Dataset directory (overrides data.dir)");
  eval->add_option("--resolutions", resolutions, "Comma-separated HxW list (overrides eval.resolutions)");
  (void)train;
  (void)report;

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return static_cast<int>(ExitCode::config_error);
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) apply_config_text(cfg, read_text_file(config_path), config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, std::string(trim(kv.substr(0, eq))), std::string(trim(kv.substr(eq + 1))), "--set");
    }
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.out = *out_dir;
    if (height) cfg.sample_height = *height;
    if (width) cfg.sample_width = *width;
    if (count) cfg.sample_count = *count;
    if (label) cfg.sample_class = *label;
    if (data_dir) cfg.data_dir = *data_dir;
    if (resolutions) cfg.eval_resolutions = *resolutions;
    cfg.validate();
    if (opt.deterministic) Eigen::setNbThreads(1);

    if (*train) return cmd_train(cfg, opt, out);
    if (*sample) return cmd_sample(cfg, opt, out);
    if (*adapt) return cmd_adapt(cfg, opt, out);
    if (*eval) return cmd_eval(cfg, opt, out);
    return cmd_report(cfg, opt, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::data_error);
  }
}

}  // namespace fitv2
