// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmta/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "cmta/checkpoint.hpp"
#include "cmta/errors.hpp"
#include "cmta/image.hpp"

namespace cmta {

namespace fs = std::filesystem;

SampleData load_sample(const DatasetIndex& index, const fs::path& root, std::size_t i) {
  const auto& entry = index.samples.at(i);
  const fs::path dir = root / entry.sequence;
  SampleData s;
  s.id = entry.id;
  std::vector<std::string> missing;
  auto need = [&](const fs::path& p) {
    if (!fs::exists(p)) missing.push_back(p.string());
    return p;
  };
  std::vector<fs::path> blur, events;
  for (int w : entry.windows) {
    blur.push_back(need(dir / "blur" / frame_name(w, "png")));
    events.push_back(need(dir / "events" / frame_name(w, "evt")));
  }
  const auto sharp = need(dir / "sharp" / frame_name(entry.target_frame, "png"));
  if (!missing.empty()) {
    std::string msg = "missing dataset files:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw IoError(msg);
  }
  for (std::size_t k = 0; k < blur.size(); ++k) {
    s.blur.push_back(read_png(blur[k]));
    s.events.push_back(read_events(events[k]));
    s.events.back().window.frame_index = entry.windows[k];
  }
  s.sharp = read_png(sharp);
  return s;
}

std::vector<SampleData> load_dataset(const fs::path& root) {
  const auto index = read_manifest(root / "index.json");
  std::vector<SampleData> out;
  for (std::size_t i = 0; i < index.samples.size(); ++i) out.push_back(load_sample(index, root, i));
  return out;
}

SampleData load_sample_dir(const fs::path& dir, int P) {
  auto list = [&](const fs::path& sub, const char* ext) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir / sub)) throw IoError("missing directory " + (dir / sub).string());
    for (const auto& e : fs::directory_iterator(dir / sub))
      if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
  };
  const auto blur = list("blur", ".png");
  const auto events = list("events", ".evt");
  if (blur.empty() || blur.size() != events.size())
    throw IoError("sample directory " + dir.string() + " needs equal, non-zero numbers of blur and event files");
  const int count = static_cast<int>(blur.size());
  SampleData s;
  s.id = dir.filename().string();
  for (int k : neighbourhood(count / 2, P, count)) {
    s.blur.push_back(read_png(blur[static_cast<std::size_t>(k)]));
    s.events.push_back(read_events(events[static_cast<std::size_t>(k)]));
    s.events.back().window.frame_index = k;
  }
  return s;
}

SampleData crop_sample(const SampleData& s, int y, int x, int height, int width) {
  SampleData out;
  out.id = s.id;
  for (const auto& b : s.blur) out.blur.push_back(crop(b, y, x, height, width));
  for (const auto& e : s.events) {
    EventStream c;
    c.window = e.window;
    c.height = height;
    c.width = width;
    for (const auto& ev : e.events)
      if (ev.x >= x && ev.x < x + width && ev.y >= y && ev.y < y + height)
        c.events.push_back({ev.t, ev.x - x, ev.y - y, ev.p});
    out.events.push_back(std::move(c));
  }
  if (!s.sharp.empty()) out.sharp = crop(s.sharp, y, x, height, width);
  return out;
}

SampleData flip_sample(const SampleData& s) {
  SampleData out;
  out.id = s.id;
  for (const auto& b : s.blur) out.blur.push_back(flip_horizontal(b));
  for (const auto& e : s.events) {
    EventStream f = e;
    for (auto& ev : f.events) ev.x = e.width - 1 - ev.x;
    out.events.push_back(std::move(f));
  }
  if (!s.sharp.empty()) out.sharp = flip_horizontal(s.sharp);
  return out;
}

Adam::Adam(std::vector<Var> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    const Tensor& g = params_[i].grad();
    Tensor& w = params_[i].mutable_value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::int64_t k = 0; k < w.numel(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
    }
  }
}

double cosine_lr(std::int64_t step, std::int64_t total, double lr, double lr_min) {
  if (total <= 0) return lr;
  const double progress = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

double train_step_loss(const CmtaModel& model, const SampleData& sample) {
  const auto out = model.forward(sample.blur, sample.events);
  const Var loss = ops::l1_loss(out.sharp, Var(sample.sharp));
  loss.backward();
  return loss.value()[0];
}

TrainState train(CmtaModel& model, std::span<const SampleData> samples, const TrainOptions& options) {
  if (options.steps < 1) throw ArgumentError("training needs at least one step");
  if (samples.empty()) throw ArgumentError("training needs at least one sample");
  const auto& cfg = options.settings;
  if (cfg.crop < 4) throw ArgumentError("crop must be at least 4");

  std::mt19937_64 rng(cfg.seed);
  Adam adam(model.store().parameters());
  TrainState state;
  state.seed = cfg.seed;
  state.checkpoint_path = options.checkpoint_path;

  for (int step = 0; step < options.steps; ++step) {
    const auto& full = samples[static_cast<std::size_t>(rng() % samples.size())];
    const int h = static_cast<int>(full.sharp.height()), w = static_cast<int>(full.sharp.width());
    const int ch = std::min(cfg.crop, h) / 4 * 4, cw = std::min(cfg.crop, w) / 4 * 4;
    if (ch < 4 || cw < 4) throw ShapeError("sample " + full.id + " is smaller than 4x4");
    const int y0 = static_cast<int>(rng() % static_cast<std::uint64_t>(h - ch + 1));
    const int x0 = static_cast<int>(rng() % static_cast<std::uint64_t>(w - cw + 1));
    SampleData sample = crop_sample(full, y0, x0, ch, cw);
    const bool flip = cfg.flip && (rng() & 1u);
    if (flip) sample = flip_sample(sample);

    model.store().zero_grad();
    const double loss = train_step_loss(model, sample);
    if (!std::isfinite(loss))
      throw NonFiniteError("non-finite loss " + std::to_string(loss) + " at step " + std::to_string(step) +
                           " on sample " + full.id);
    const double lr = cosine_lr(step, options.steps, cfg.lr, cfg.lr_min);
    adam.step(lr);

    state.step = step + 1;
    state.lr = lr;
    state.running_loss = step == 0 ? loss : 0.9 * state.running_loss + 0.1 * loss;
    state.losses.push_back(loss);
    if (options.log) *options.log << state.step << ' ' << loss << ' ' << lr << '\n';
    if (!options.checkpoint_path.empty() && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0)
      save_checkpoint(make_checkpoint(model, state.step), options.checkpoint_path);
  }
  if (!options.checkpoint_path.empty()) save_checkpoint(make_checkpoint(model, state.step), options.checkpoint_path);
  return state;
}

Tensor pad_replicate(const Tensor& image, int multiple) {
  require_chw(image, "pad_replicate");
  const auto h = image.height(), w = image.width();
  const auto ph = (h + multiple - 1) / multiple * multiple, pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return image;
  Tensor out({image.channels(), ph, pw});
  for (std::int64_t c = 0; c < image.channels(); ++c)
    for (std::int64_t y = 0; y < ph; ++y)
      for (std::int64_t x = 0; x < pw; ++x) out.at(c, y, x) = image.at(c, std::min(y, h - 1), std::min(x, w - 1));
  return out;
}

Tensor infer(const CmtaModel& model, const SampleData& sample) {
  if (sample.blur.empty()) throw ArgumentError("infer: empty sample");
  NoGradGuard no_grad;
  const auto h = sample.blur[0].height(), w = sample.blur[0].width();
  std::vector<Tensor> frames;
  std::vector<EventStream> events = sample.events;
  for (const auto& b : sample.blur) frames.push_back(pad_replicate(b, 4));
  for (auto& e : events) {
    e.height = static_cast<int>(frames[0].height());
    e.width = static_cast<int>(frames[0].width());
  }
  const auto out = model.forward(frames, events);
  return clamp01(crop(out.sharp.value(), 0, 0, h, w));
}

MetricsReport evaluate(const CmtaModel& model, std::span<const SampleData> samples) {
  MetricsReport report;
  for (const auto& s : samples) {
    const Tensor pred = infer(model, s);
    const Tensor& blur = s.blur[s.blur.size() / 2];
    report.rows.push_back({s.id, psnr(pred, s.sharp), ssim(pred, s.sharp), psnr(blur, s.sharp), ssim(blur, s.sharp)});
  }
  report.finalize();
  return report;
}

}  // namespace cmta
