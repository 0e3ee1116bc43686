// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: dataset synthesis, training, evaluation,
// inference and gradient checks.

#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "cmta/checkpoint.hpp"
#include "cmta/errors.hpp"
#include "cmta/gradcheck.hpp"
#include "cmta/image.hpp"
#include "cmta/synth.hpp"
#include "cmta/train.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Event-guided multi-frame video deblurring"};
  app.require_subcommand(1);

  cmta::SynthOptions synth;
  std::string sharp_dir, synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Blur frames, events and manifest from sharp sequences");
  synth_cmd->add_option("--sharp-dir", sharp_dir, "Root with <seq>/sharp/%06d.png")->required();
  synth_cmd->add_option("--out", synth_out, "Output dataset root")->required();
  synth_cmd->add_option("--window", synth.window, "Sharp frames per blur frame")->capture_default_str();
  synth_cmd->add_option("--stride", synth.stride, "Frames between window starts (default: window)");
  synth_cmd->add_option("--P", synth.P, "Neighbours on each side")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Threshold seed")->capture_default_str();
  synth_cmd->add_option("--fps", synth.fps, "Sharp frame rate")->capture_default_str();
  synth_cmd->add_option("--threshold-mu", synth.threshold_mu)->capture_default_str();
  synth_cmd->add_option("--threshold-sigma", synth.threshold_sigma)->capture_default_str();
  synth_cmd->add_flag("--gamma", synth.gamma, "Average in linear light");

  std::string demo_out;
  int demo_frames = 35, demo_size = 48;
  std::uint64_t demo_seed = 0;
  auto* demo_cmd = app.add_subcommand("make-demo", "Render a synthetic sharp sequence");
  demo_cmd->add_option("--out", demo_out, "Sequence directory (sharp/ is created inside)")->required();
  demo_cmd->add_option("--frames", demo_frames)->capture_default_str();
  demo_cmd->add_option("--size", demo_size, "Height and width")->capture_default_str();
  demo_cmd->add_option("--seed", demo_seed)->capture_default_str();

  std::string config_path, train_data, train_out, log_path;
  int steps = 1;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", config_path, "key=value config file");
  train_cmd->add_option("--data", train_data, "Dataset root")->required();
  train_cmd->add_option("--steps", steps)->required();
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--log", log_path, "Loss log (default: <out>.log)");

  std::string ckpt_path, eval_data, report_path;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM report");
  eval_cmd->add_option("--ckpt", ckpt_path)->required();
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--report", report_path, "Report file (default: stdout)");

  std::string sample_dir, infer_out;
  auto* infer_cmd = app.add_subcommand("infer", "Deblur the middle frame of a sample directory");
  infer_cmd->add_option("--ckpt", ckpt_path)->required();
  infer_cmd->add_option("--sample", sample_dir, "Directory with blur/*.png and events/*.evt")->required();
  infer_cmd->add_option("--out", infer_out, "Output PNG")->required();

  std::string block;
  double eps = 1e-5, tol = 1e-3;
  int size = 4;
  std::uint64_t gc_seed = 0;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check of one block");
  gc_cmd->add_option("--block", block)->required()->check(CLI::IsMember(cmta::gradcheck_blocks()));
  gc_cmd->add_option("--eps", eps)->capture_default_str();
  gc_cmd->add_option("--size", size, "Spatial size")->capture_default_str();
  gc_cmd->add_option("--seed", gc_seed)->capture_default_str();
  gc_cmd->add_option("--tol", tol, "Exit status 1 above this error")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) {
      if (synth_cmd->count("--stride") == 0) synth.stride = synth.window;
      const auto index = cmta::build_dataset(sharp_dir, synth_out, synth);
      std::printf("%zu sequences, %zu samples -> %s\n", index.sequences.size(), index.samples.size(),
                  (fs::path(synth_out) / "index.json").c_str());
    } else if (*demo_cmd) {
      cmta::write_sharp_sequence(cmta::render_moving_texture(demo_size, demo_size, demo_frames, demo_seed), demo_out);
    } else if (*train_cmd) {
      const auto config = config_path.empty() ? cmta::ConfigFile{} : cmta::read_config(config_path);
      const auto data = cmta::load_dataset(train_data);
      cmta::CmtaModel model(config.model);
      std::ofstream log(log_path.empty() ? train_out + ".log" : log_path);
      if (!log) throw cmta::IoError("cannot write training log");
      cmta::TrainOptions options;
      options.steps = steps;
      options.settings = config.train;
      options.checkpoint_path = train_out;
      options.log = &log;
      const auto state = cmta::train(model, data, options);
      std::printf("step %lld loss %.6f (running %.6f) -> %s\n", static_cast<long long>(state.step),
                  state.losses.back(), state.running_loss, train_out.c_str());
    } else if (*eval_cmd) {
      const auto model = cmta::model_from_checkpoint(cmta::load_checkpoint(ckpt_path));
      const auto data = cmta::load_dataset(eval_data);
      const auto text = cmta::evaluate(model, data).format();
      if (report_path.empty()) {
        std::fputs(text.c_str(), stdout);
      } else {
        std::ofstream os(report_path);
        if (!(os << text)) throw cmta::IoError("cannot write report " + report_path);
      }
    } else if (*infer_cmd) {
      const auto model = cmta::model_from_checkpoint(cmta::load_checkpoint(ckpt_path));
      const auto sample = cmta::load_sample_dir(sample_dir, model.config().P);
      cmta::write_png(cmta::infer(model, sample), infer_out);
    } else if (*gc_cmd) {
      const auto r = cmta::gradient_check_block(block, size, eps, gc_seed);
      std::printf("%s max_rel_error %.3e over %lld entries (worst %s)\n", block.c_str(), r.max_rel_error,
                  static_cast<long long>(r.checked), r.worst.c_str());
      return r.max_rel_error < tol ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
