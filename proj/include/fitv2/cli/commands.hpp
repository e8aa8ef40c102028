// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// The train, sample, adapt, eval and report commands. Each takes a validated
// RunConfig, writes its artifacts under cfg.out and logs to `log`.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fitv2/adapt.hpp"
#include "fitv2/blocks.hpp"
#include "fitv2/cli/run_config.hpp"
#include "fitv2/flow.hpp"
#include "fitv2/metrics.hpp"
#include "fitv2/pipeline.hpp"

namespace fitv2 {

namespace fs = std::filesystem;

struct CommandOptions {
  bool deterministic = false;
  std::string from;   // checkpoint directory (sample, adapt, eval)
  int lmax = 0;       // adapt
  long steps = 0;     // adapt
};

inline void persist_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "run.config", std::ios::trunc);
  out << format_run_config(cfg);
  if (!out) throw DataError("cannot write " + (dir / "run.config").string());
}

// Lines "key: checkpoint A, run B" for every resume-sensitive key that
// differs. Model fields are compared even when the checkpoint carries no run
// configuration.
inline std::vector<std::string> resume_diff(const Checkpoint& ck, const RunConfig& cfg) {
  std::vector<std::string> out;
  const auto stored = config_fields(ck.config);
  const auto wanted = config_fields(cfg.model);
  for (const auto& [k, v] : stored) {
    if (wanted.at(k) != v) out.push_back("model." + k + ": checkpoint " + v + ", run " + wanted.at(k));
  }
  for (const auto& [k, v] : config_values(cfg)) {
    if (!is_resume_sensitive(k) || k.rfind("model.", 0) == 0 || k == "rope.base") continue;
    auto it = ck.meta.find("run." + k);
    if (it != ck.meta.end() && it->second != v) out.push_back(k + ": checkpoint " + it->second + ", run " + v);
  }
  return out;
}

inline void save_run_checkpoint(const fs::path& dir, Checkpoint ck, const RunConfig& cfg) {
  for (const auto& [k, v] : config_values(cfg)) {
    if (is_resume_sensitive(k)) ck.meta["run." + k] = v;
  }
  save_checkpoint(dir, ck);
}

inline std::string csv_row(const LossRecord& r) {
  return std::to_string(r.step) + "," + format_double(r.loss) + "," + format_double(r.lr) + "\n";
}

// Keeps the header and rows with step < `upto` of an existing loss trace.
inline std::string truncated_trace(const fs::path& path, long upto) {
  std::string kept = "step,loss,lr\n";
  std::ifstream in(path);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stol(line.substr(0, line.find(','))) < upto) kept += line + "\n";
  }
  return kept;
}

inline std::vector<ImageSample> prepared_training_set(const RunConfig& cfg, int max_tokens, int target_size,
                                                      std::ostream& log) {
  const auto raw = open_dataset(cfg.data_dir);
  auto policy = cfg.preprocess_policy(max_tokens);
  policy.target_size = target_size;
  auto prepared = prepare_dataset(raw, policy, cfg.seed);
  for (const auto& w : prepared.warnings) log << "warning: " << w << "\n";
  if (prepared.samples.empty()) throw DataError("dataset " + cfg.data_dir + " has no usable samples");
  log << "dataset " << cfg.data_dir << ": " << prepared.samples.size() << " samples (crop " << prepared.counters.coin_crop
      << ", resize " << prepared.counters.coin_resize + prepared.counters.resize_only << ", skipped "
      << prepared.counters.skipped << ")\n";
  return std::move(prepared.samples);
}

inline int cmd_train(const RunConfig& cfg, const CommandOptions&, std::ostream& log) {
  const fs::path out = cfg.out;
  const fs::path ckdir = out / "checkpoint";
  const auto data = prepared_training_set(cfg, cfg.model.max_tokens, cfg.target_size, log);
  fs::create_directories(out);

  TrainState<float> st(cfg.model, cfg.seed);
  std::string trace_text = "step,loss,lr\n";
  if (fs::exists(ckdir / "manifest")) {
    const auto ck = load_checkpoint(ckdir);
    const auto diff = resume_diff(ck, cfg);
    if (!diff.empty()) {
      std::string msg = "refusing to resume " + ckdir.string() + ": configuration differs";
      for (const auto& d : diff) msg += "\n  " + d;
      throw ConfigError(msg);
    }
    st = from_checkpoint<float>(ck);
    trace_text = truncated_trace(out / "loss.csv", st.step);
    log << "resuming from step " << st.step << "\n";
  }
  persist_config(cfg, out);
  std::ofstream trace(out / "loss.csv", std::ios::trunc);
  trace << trace_text;

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  auto record = [&](const LossRecord& r) { trace << csv_row(r); };
  bool saved = false;
  while (st.step < tc.steps) {
    auto part = train_loop<float>(st, data, tc, cfg.checkpoint_every, record);
    trace.flush();
    save_run_checkpoint(ckdir, to_checkpoint(st), cfg);
    saved = true;
    log << "step " << st.step << " loss " << part.back().loss << "\n";
  }
  if (!saved) save_run_checkpoint(ckdir, to_checkpoint(st), cfg);
  if (!trace) throw DataError("cannot write " + (out / "loss.csv").string());
  return 0;
}

// Loads the checkpoint weights used for generation (EMA unless disabled).
inline Model<float> load_generator(const std::string& from, bool ema) {
  if (from.empty()) throw ConfigError("--from <checkpoint> is required");
  auto st = from_checkpoint<float>(load_checkpoint(from));
  Model<float> m(st.model.config(), 0);
  m.load_values(ema ? st.ema : st.model);
  return m;
}

inline std::pair<int, int> token_grid(const ModelConfig& mc, int height, int width, const std::string& what) {
  if (height % mc.patch != 0 || width % mc.patch != 0) {
    throw ConfigError(what + ": " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not a multiple of the patch size " + std::to_string(mc.patch));
  }
  return {height / mc.patch, width / mc.patch};
}

inline RopeTable generation_rope(const ModelConfig& mc, const RunConfig& cfg, int gh, int gw, std::ostream& log) {
  if (gh * gw > mc.max_tokens && cfg.rope_method == RopeMethod::none) {
    log << "warning: grid " << gh << "x" << gw << " (" << gh * gw << " tokens) exceeds the training budget of "
        << mc.max_tokens << " with rope.method = none; extrapolating directly\n";
  }
  return RopeTable::build(rope_config_for(mc, cfg, cfg.rope_method), gh, gw, cfg.attn_scale);
}

inline void check_solver(const RunConfig& cfg, const CommandOptions& opt) {
  if (opt.deterministic && cfg.ode.method == OdeMethod::adaptive) {
    throw ConfigError("--deterministic requires a fixed-step solver (flow.ode = euler or rk4)");
  }
}

inline int cmd_sample(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  check_solver(cfg, opt);
  auto model = load_generator(opt.from, cfg.sample_ema);
  const auto& mc = model.config();
  const auto [gh, gw] = token_grid(mc, cfg.sample_height, cfg.sample_width, "sample");
  if (cfg.sample_class >= mc.num_classes) throw ConfigError("sample.class exceeds the checkpoint's class count");
  const auto rope = generation_rope(mc, cfg, gh, gw, log);

  SampleSpec spec{gh, gw, {}, cfg.cfg_scale, cfg.ode};
  for (int i = 0; i < cfg.sample_count; ++i) spec.labels.push_back(cfg.sample_class >= 0 ? cfg.sample_class : i % mc.num_classes);
  auto rng = step_rng(cfg.seed, 0, 0x5a3u);
  const auto res = ode_sample(model, spec, rope, rng);

  const fs::path dir = fs::path(cfg.out) / "samples";
  std::vector<ImageSample> samples;
  for (std::size_t i = 0; i < res.images.size(); ++i) {
    samples.push_back({res.images[i], spec.labels[i], cfg.sample_height, cfg.sample_width});
  }
  save_dataset(dir, samples);
  if (cfg.sample_ppm) {
    for (std::size_t i = 0; i < samples.size(); ++i) write_ppm(dir / (sample_id(i) + ".ppm"), samples[i].image);
  }
  const auto& f = rope.factors();
  std::ofstream meta(dir / "metadata", std::ios::trunc);
  meta << "checkpoint = " << opt.from << "\n"
       << "weights = " << (cfg.sample_ema ? "ema" : "live") << "\n"
       << "height = " << cfg.sample_height << "\nwidth = " << cfg.sample_width << "\n"
       << "grid_h = " << gh << "\ngrid_w = " << gw << "\ntokens = " << gh * gw << "\n"
       << "max_tokens = " << mc.max_tokens << "\n"
       << "method = " << to_string(rope.method()) << "\n"
       << "s = " << format_double(f.s) << "\ns_h = " << format_double(f.s_h) << "\ns_w = " << format_double(f.s_w) << "\n"
       << "s_attn = " << format_double(rope.attention_scale()) << "\n"
       << "magnitude = " << format_double(rope.magnitude()) << "\n"
       << "ode = " << to_string(cfg.ode.method) << "\nsteps = " << cfg.ode.steps << "\n"
       << "cfg = " << format_double(cfg.cfg_scale) << "\nseed = " << cfg.seed << "\n"
       << "evaluations = " << res.stats.evaluations << "\n";
  if (!meta) throw DataError("cannot write " + (dir / "metadata").string());
  persist_config(cfg, cfg.out);
  log << "wrote " << samples.size() << " samples to " << dir.string() << " (method " << to_string(rope.method())
      << ", s_attn " << rope.attention_scale() << ")\n";
  return 0;
}

inline int cmd_adapt(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  if (opt.from.empty()) throw ConfigError("adapt: --from <checkpoint> is required");
  if (opt.steps < 0) throw ConfigError("adapt: --steps must be >= 0");
  auto st = from_checkpoint<float>(load_checkpoint(opt.from));
  const auto& mc = st.model.config();
  if (opt.lmax <= mc.max_tokens) {
    throw ConfigError("adapt: --lmax " + std::to_string(opt.lmax) + " must exceed the checkpoint budget " +
                      std::to_string(mc.max_tokens));
  }
  const fs::path out = cfg.out;
  fs::create_directories(out);
  const auto plan = build_freeze_plan(st.model);
  const auto report = plan.report();
  std::ofstream(out / "freeze_plan.txt", std::ios::trunc) << report;
  log << report;

  const int side = static_cast<int>(std::floor(std::sqrt(static_cast<double>(opt.lmax))));
  RunConfig data_cfg = cfg;
  data_cfg.model.patch = mc.patch;
  const auto data = prepared_training_set(data_cfg, opt.lmax, side * mc.patch, log);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  std::ofstream trace(out / "adapt_loss.csv", std::ios::trunc);
  trace << "step,loss,lr\n";
  const auto records = posttrain(st, plan, data, opt.lmax, opt.steps, tc, [&](const LossRecord& r) { trace << csv_row(r); });
  auto ck = to_checkpoint(st);
  ck.meta["adapt.lmax"] = std::to_string(opt.lmax);
  ck.meta["adapt.steps"] = std::to_string(opt.steps);
  ck.meta["adapt.from"] = opt.from;
  save_run_checkpoint(out / "checkpoint", ck, cfg);
  persist_config(cfg, out);
  if (!records.empty()) log << "post-trained " << records.size() << " steps, last loss " << records.back().loss << "\n";
  return 0;
}

// "HxW,HxW,..."
inline std::vector<std::pair<int, int>> parse_grid_list(const std::string& text) {
  std::vector<std::pair<int, int>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = std::string(trim(item));
    const auto x = t.find('x');
    if (x == std::string::npos) throw ConfigError("eval.resolutions: expected HxW, got '" + t + "'");
    const int h = static_cast<int>(parse_int(t.substr(0, x), "eval.resolutions"));
    const int w = static_cast<int>(parse_int(t.substr(x + 1), "eval.resolutions"));
    if (h < 1 || w < 1) throw ConfigError("eval.resolutions: sizes must be positive in '" + t + "'");
    out.push_back({h, w});
  }
  if (out.empty()) throw ConfigError("eval.resolutions is empty");
  return out;
}

struct EvalRow {
  std::string resolution;
  std::string metric;
  double value = 0.0;
};

inline int cmd_eval(const RunConfig& cfg, const CommandOptions& opt, std::ostream& log) {
  check_solver(cfg, opt);
  auto model = load_generator(opt.from, true);
  const auto& mc = model.config();
  auto raw = open_dataset(cfg.data_dir);
  if (raw.size() > static_cast<std::size_t>(cfg.eval_max_samples)) raw.resize(cfg.eval_max_samples);
  std::vector<EvalRow> rows;
  for (auto [h, w] : parse_grid_list(cfg.eval_resolutions)) {
    const auto [gh, gw] = token_grid(mc, h, w, "eval");
    const std::string res = std::to_string(h) + "x" + std::to_string(w);
    std::vector<ImageSample> resized;
    std::map<int, std::vector<Image>> refs;
    for (const auto& s : raw) {
      if (s.image.channels != mc.in_channels) throw DataError("eval: dataset channel count differs from the model");
      if (s.label < 0 || s.label >= mc.num_classes) throw DataError("eval: label " + std::to_string(s.label) + " out of range");
      ImageSample r{resize_bilinear(s.image, h, w), s.label, s.source_h, s.source_w};
      refs[s.label].push_back(r.image);
      resized.push_back(std::move(r));
    }
    const auto rope = generation_rope(mc, cfg, gh, gw, log);
    const int budget = std::max(mc.max_tokens, gh * gw);
    rows.push_back({res, "val_loss", evaluate_loss(model, resized, cfg.eval_t_points, cfg.seed, 16, &rope, budget)});

    double stats = 0.0;
    std::vector<Image> all_gen, all_ref;
    auto rng = step_rng(cfg.seed, h * 1000 + w, 0xe7a1u);
    for (const auto& [label, images] : refs) {
      SampleSpec spec{gh, gw, std::vector<int>(cfg.eval_samples_per_class, label), cfg.cfg_scale, cfg.ode};
      auto gen = ode_sample(model, spec, rope, rng).images;
      stats += stats_distance(channel_stats(gen), channel_stats(images));
      all_gen.insert(all_gen.end(), gen.begin(), gen.end());
      all_ref.insert(all_ref.end(), images.begin(), images.end());
    }
    rows.push_back({res, "class_stats_distance", stats / static_cast<double>(refs.size())});
    const int dh = std::min(cfg.eval_downsample, h), dw = std::min(cfg.eval_downsample, w);
    rows.push_back({res, "energy_distance",
                    energy_distance(downsample_points(all_gen, dh, dw), downsample_points(all_ref, dh, dw))});
  }
  const fs::path out = cfg.out;
  fs::create_directories(out);
  std::ofstream csv(out / "eval.csv", std::ios::trunc);
  csv << "resolution,metric,value\n";
  for (const auto& r : rows) {
    csv << r.resolution << "," << r.metric << "," << format_double(r.value) << "\n";
    log << std::left << std::setw(8) << r.resolution << std::setw(22) << r.metric << r.value << "\n";
  }
  if (!csv) throw DataError("cannot write " + (out / "eval.csv").string());
  persist_config(cfg, out);
  return 0;
}

struct ReportRow {
  std::string name;
  ModelConfig config;
  std::int64_t params = 0;
  double gflops = 0.0;
};

inline std::vector<ReportRow> report_rows(const ModelConfig& custom) {
  std::vector<ReportRow> rows;
  auto add = [&](const std::string& name, const ModelConfig& c) {
    rows.push_back({name, c, count_parameters(c).total, estimate_flops(c, c.max_tokens).total / 1e9});
  };
  for (const char* name : {"B", "XL", "3B"}) add(name, *model_preset(name));
  add("custom", custom);
  return rows;
}

inline int cmd_report(const RunConfig& cfg, const CommandOptions&, std::ostream& log) {
  log << std::left << std::setw(8) << "model" << std::right << std::setw(7) << "layers" << std::setw(7) << "hidden"
      << std::setw(6) << "heads" << std::setw(7) << "tokens" << std::setw(15) << "params" << std::setw(12) << "GFLOPs"
      << "\n";
  for (const auto& r : report_rows(cfg.model)) {
    log << std::left << std::setw(8) << r.name << std::right << std::setw(7) << r.config.layers << std::setw(7)
        << r.config.hidden << std::setw(6) << r.config.heads << std::setw(7) << r.config.max_tokens << std::setw(15)
        << r.params << std::setw(12) << std::fixed << std::setprecision(4) << r.gflops << std::defaultfloat << "\n";
  }
  return 0;
}

}  // namespace fitv2
