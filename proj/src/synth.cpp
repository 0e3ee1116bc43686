// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmta/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "cmta/errors.hpp"
#include "cmta/image.hpp"
#include "json.hpp"

namespace cmta {

namespace fs = std::filesystem;

Tensor synthesize_blur(std::span<const Tensor> frames, bool use_gamma) {
  if (frames.empty()) throw ArgumentError("synthesize_blur needs at least one frame");
  Tensor acc(frames[0].shape());
  for (const auto& f : frames) {
    if (f.shape() != acc.shape())
      throw ShapeError("synthesize_blur: frame shapes differ " + shape_str(acc.shape()) + " vs " + shape_str(f.shape()));
    for (std::int64_t i = 0; i < f.numel(); ++i) acc[i] += use_gamma ? std::pow(f[i], kDisplayGamma) : f[i];
  }
  const double inv = 1.0 / static_cast<double>(frames.size());
  for (auto& v : acc.values()) {
    v *= inv;
    if (use_gamma) v = std::pow(v, 1.0 / kDisplayGamma);
  }
  return acc;
}

ThresholdField sample_threshold_field(int height, int width, double mu, double sigma, std::uint64_t seed) {
  if (height < 1 || width < 1) throw ArgumentError("threshold field needs positive dimensions");
  if (!(sigma >= 0.0)) throw ArgumentError("threshold sigma must be non-negative");
  ThresholdField field{Tensor({height, width})};
  if (sigma == 0.0) {
    field.c.fill(std::max(mu, 0.01));
    return field;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(mu, sigma);
  for (auto& v : field.c.values()) v = std::max(dist(rng), 0.01);
  return field;
}

Tensor log_luminance(const Tensor& image) {
  require_chw(image, "log_luminance");
  if (image.channels() != 3) throw ShapeError("log_luminance expects an RGB image");
  Tensor out({image.height(), image.width()});
  for (std::int64_t y = 0; y < image.height(); ++y)
    for (std::int64_t x = 0; x < image.width(); ++x) {
      const double lin = 0.299 * std::pow(image.at(0, y, x), kDisplayGamma) +
                         0.587 * std::pow(image.at(1, y, x), kDisplayGamma) +
                         0.114 * std::pow(image.at(2, y, x), kDisplayGamma);
      out[y * image.width() + x] = std::log(lin + kLogEps);
    }
  return out;
}

void emit_crossings(double t_start, double t_end, double l_start, double l_end, double base, double threshold,
                    std::int64_t& level, std::int32_t x, std::int32_t y, std::vector<Event>& out) {
  if (l_end == l_start) return;
  const double span = t_end - t_start;
  const double dl = l_end - l_start;
  const double offset = base - l_start;
  // Crossing of reference level `k`, measured from the segment start.
  auto rise = [&](std::int64_t k) { return offset + static_cast<double>(k) * threshold; };
  auto crossing_time = [&](double d) { return std::clamp(t_start + d / dl * span, t_start, t_end); };
  if (dl > 0.0) {
    for (double d = rise(level + 1); d <= dl; d = rise(level + 1)) {
      out.push_back({crossing_time(d), x, y, 1});
      ++level;
    }
  } else {
    for (double d = rise(level - 1); d >= dl; d = rise(level - 1)) {
      out.push_back({crossing_time(d), x, y, -1});
      --level;
    }
  }
}

EventStream simulate_events(const SharpSequence& seq, const ThresholdField& thresholds, const ExposureWindow& window) {
  if (seq.frames.size() < 2) throw RangeError("event simulation needs at least two frames");
  if (!(seq.fps > 0.0)) throw ArgumentError("fps must be positive");
  if (!(window.duration() > 0.0)) throw InvalidWindowError("exposure window has non-positive duration");
  const double slack = 1e-9 / seq.fps;
  if (window.t_start < -slack || window.t_end > seq.duration() + slack)
    throw RangeError("exposure window [" + std::to_string(window.t_start) + ", " + std::to_string(window.t_end) +
                     "] not covered by the sequence");

  const auto height = seq.frames[0].height(), width = seq.frames[0].width();
  if (thresholds.c.shape() != Shape{height, width}) throw ShapeError("threshold field does not match frame size");

  // Knots: window ends plus every frame time strictly inside.
  const auto n = seq.frames.size();
  auto frame_at = [&](double t) {
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(0.0, std::floor(t * seq.fps))), 0, n - 2);
  };
  std::vector<double> knots{window.t_start};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = seq.time_of(i);
    if (t > window.t_start && t < window.t_end) knots.push_back(t);
  }
  knots.push_back(window.t_end);

  std::vector<Tensor> log_l(n);
  const std::size_t first = frame_at(window.t_start), last = std::min(n - 1, frame_at(window.t_end) + 1);
  for (std::size_t i = first; i <= last; ++i) log_l[i] = log_luminance(seq.frames[i]);

  // Log luminance of every pixel at each knot.
  std::vector<Tensor> knot_values;
  knot_values.reserve(knots.size());
  for (double t : knots) {
    const std::size_t i = frame_at(t);
    const double frac = std::clamp(t * seq.fps - static_cast<double>(i), 0.0, 1.0);
    if (frac == 0.0) {
      knot_values.push_back(log_l[i]);
    } else if (frac == 1.0) {
      knot_values.push_back(log_l[i + 1]);
    } else {
      knot_values.push_back(log_l[i] * (1.0 - frac) + log_l[i + 1] * frac);
    }
  }

  EventStream stream;
  stream.window = window;
  stream.height = static_cast<int>(height);
  stream.width = static_cast<int>(width);
  for (std::int64_t y = 0; y < height; ++y)
    for (std::int64_t x = 0; x < width; ++x) {
      const auto px = y * width + x;
      const double base = knot_values[0][px];
      const double c = thresholds.c[px];
      std::int64_t level = 0;
      for (std::size_t k = 0; k + 1 < knots.size(); ++k)
        emit_crossings(knots[k], knots[k + 1], knot_values[k][px], knot_values[k + 1][px], base, c, level,
                       static_cast<std::int32_t>(x), static_cast<std::int32_t>(y), stream.events);
    }
  std::stable_sort(stream.events.begin(), stream.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  return stream;
}

SharpSequence render_moving_texture(int height, int width, int frames, std::uint64_t seed, double vx, double vy,
                                    double fps) {
  if (height < 1 || width < 1 || frames < 1) throw ArgumentError("render_moving_texture: bad size");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  struct Blob {
    double cx, cy, sigma;
    double amp[3];
  };
  const int n_blobs = std::max(6, height * width / 96);
  std::vector<Blob> blobs(static_cast<std::size_t>(n_blobs));
  for (auto& b : blobs) {
    b.cx = u01(rng) * width;
    b.cy = u01(rng) * height;
    b.sigma = 1.5 + 3.5 * u01(rng);
    for (double& a : b.amp) a = 0.9 * u01(rng) - 0.3;
  }
  const double fx = 2.0 * std::numbers::pi * (1.0 + std::floor(3.0 * u01(rng))) / width;
  const double fy = 2.0 * std::numbers::pi * (1.0 + std::floor(3.0 * u01(rng))) / height;

  // Shortest signed distance on a periodic axis.
  auto wrap = [](double d, double period) { return d - period * std::round(d / period); };

  SharpSequence seq;
  seq.fps = fps;
  for (int f = 0; f < frames; ++f) {
    Tensor img({3, height, width});
    const double ox = vx * f, oy = vy * f;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double sx = x - ox, sy = y - oy;
        double v[3] = {0.35, 0.35, 0.35};
        const double stripes = 0.08 * std::sin(fx * sx) * std::cos(fy * sy);
        for (double& c : v) c += stripes;
        for (const auto& b : blobs) {
          const double dx = wrap(sx - b.cx, width), dy = wrap(sy - b.cy, height);
          const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
          for (int c = 0; c < 3; ++c) v[c] += b.amp[c] * g;
        }
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(v[c], 0.02, 0.98);
      }
    seq.frames.push_back(std::move(img));
  }
  return seq;
}

int count_windows(int frames, int window, int stride) {
  if (window < 1 || stride < 1) throw ArgumentError("window and stride must be positive");
  if (frames < window) return 0;
  return (frames - window) / stride + 1;
}

int count_samples(int frames, int P, int window, int stride) {
  if (P < 0) throw ArgumentError("P must be non-negative");
  if (frames < window)
    throw RangeError(std::to_string(frames) + " frames cannot fill a blur window of " + std::to_string(window));
  const int windows = count_windows(frames, window, stride);
  const int samples = windows - 2 * P;
  if (samples < 1)
    throw RangeError(std::to_string(windows) + " blur windows are too few for 2P+1 = " + std::to_string(2 * P + 1));
  return samples;
}

std::vector<int> neighbourhood(int center, int P, int count) {
  if (count < 1) throw ArgumentError("neighbourhood: empty sequence");
  if (center < 0 || center >= count) throw RangeError("neighbourhood: centre outside the sequence");
  std::vector<int> out;
  for (int k = center - P; k <= center + P; ++k) out.push_back(std::clamp(k, 0, count - 1));
  return out;
}

std::string frame_name(int index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.%s", index, ext);
  return buf;
}

void write_sharp_sequence(const SharpSequence& seq, const fs::path& dir) {
  fs::create_directories(dir / "sharp");
  for (std::size_t i = 0; i < seq.frames.size(); ++i)
    write_png(seq.frames[i], dir / "sharp" / frame_name(static_cast<int>(i), "png"));
}

namespace {

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<std::string, fs::path>> discover_sequences(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("sharp directory not found: " + root.string());
  std::vector<std::pair<std::string, fs::path>> out;
  if (fs::is_directory(root / "sharp")) {
    out.emplace_back(fs::absolute(root).lexically_normal().filename().string(), root);
    if (out.back().first.empty()) out.back().first = "seq";
    return out;
  }
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::is_directory(entry.path() / "sharp"))
      out.emplace_back(entry.path().filename().string(), entry.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no <seq>/sharp/ directories under " + root.string());
  return out;
}

}  // namespace

DatasetIndex build_dataset(const fs::path& sharp_root, const fs::path& out_root, const SynthOptions& options) {
  if (options.P < 0) throw ArgumentError("P must be non-negative");
  if (options.window < 2) throw ArgumentError("blur window must span at least two sharp frames");
  if (options.stride < options.window) throw ArgumentError("stride shorter than the window would overlap exposures");
  if (!(options.fps > 0.0)) throw ArgumentError("fps must be positive");

  DatasetIndex index;
  index.P = options.P;
  index.window = options.window;
  index.stride = options.stride;
  index.fps = options.fps;
  index.seed = options.seed;
  index.threshold_mu = options.threshold_mu;
  index.threshold_sigma = options.threshold_sigma;

  const auto sequences = discover_sequences(sharp_root);
  fs::create_directories(out_root);
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& [name, src] = sequences[s];
    const auto pngs = sorted_pngs(src / "sharp");
    const int n_frames = static_cast<int>(pngs.size());
    if (n_frames < options.window)
      throw RangeError("sequence " + name + ": " + std::to_string(n_frames) + " frames cannot fill a blur window of " +
                       std::to_string(options.window));
    const int n_windows = count_windows(n_frames, options.window, options.stride);
    const bool short_sequence = n_windows < 2 * options.P + 1;
    const int n_samples = short_sequence ? 1 : n_windows - 2 * options.P;

    SharpSequence seq;
    seq.fps = options.fps;
    for (const auto& p : pngs) seq.frames.push_back(read_png(p));
    const int h = static_cast<int>(seq.frames[0].height()), w = static_cast<int>(seq.frames[0].width());
    for (const auto& f : seq.frames)
      if (f.height() != h || f.width() != w) throw ShapeError("sequence " + name + " has frames of differing size");

    const fs::path dst = out_root / name;
    fs::create_directories(dst / "sharp");
    fs::create_directories(dst / "blur");
    fs::create_directories(dst / "events");
    if (!fs::exists(dst / "sharp") || !fs::equivalent(src / "sharp", dst / "sharp")) {
      for (int i = 0; i < n_frames; ++i)
        fs::copy_file(pngs[static_cast<std::size_t>(i)], dst / "sharp" / frame_name(i, "png"),
                      fs::copy_options::overwrite_existing);
    }

    const auto thresholds = sample_threshold_field(h, w, options.threshold_mu, options.threshold_sigma,
                                                   options.seed + 0x9E3779B97F4A7C15ULL * (s + 1));
    std::vector<ExposureWindow> windows;
    for (int j = 0; j < n_windows; ++j) {
      const int f0 = j * options.stride, f1 = f0 + options.window - 1;
      const ExposureWindow win{seq.time_of(static_cast<std::size_t>(f0)), seq.time_of(static_cast<std::size_t>(f1)), j};
      windows.push_back(win);
      const std::span<const Tensor> frames(seq.frames.data() + f0, static_cast<std::size_t>(options.window));
      write_png(synthesize_blur(frames, options.gamma), dst / "blur" / frame_name(j, "png"));
      write_events(simulate_events(seq, thresholds, win), dst / "events" / frame_name(j, "evt"));
    }

    index.sequences.push_back({name, n_frames, h, w, n_windows});
    for (int i = 0; i < n_samples; ++i) {
      SampleEntry entry;
      const int center = short_sequence ? n_windows / 2 : i + options.P;
      entry.sequence = name;
      entry.id = name + "_" + frame_name(center, "").substr(0, 6);
      for (int j : neighbourhood(center, options.P, n_windows)) {
        entry.windows.push_back(j);
        entry.times.push_back(windows[static_cast<std::size_t>(j)]);
      }
      entry.target_frame = center * options.stride + options.window / 2;
      index.samples.push_back(std::move(entry));
    }
  }
  write_manifest(index, out_root / "index.json");
  return index;
}

std::string manifest_json(const DatasetIndex& index) {
  nlohmann::ordered_json j;
  j["format"] = "cmta-dataset-v1";
  j["P"] = index.P;
  j["window"] = index.window;
  j["stride"] = index.stride;
  j["fps"] = index.fps;
  j["seed"] = index.seed;
  j["threshold_mu"] = index.threshold_mu;
  j["threshold_sigma"] = index.threshold_sigma;
  j["sequences"] = nlohmann::ordered_json::array();
  for (const auto& s : index.sequences)
    j["sequences"].push_back({{"name", s.name},
                              {"num_frames", s.num_frames},
                              {"height", s.height},
                              {"width", s.width},
                              {"num_windows", s.num_windows}});
  j["samples"] = nlohmann::ordered_json::array();
  for (const auto& s : index.samples) {
    auto times = nlohmann::ordered_json::array();
    for (const auto& w : s.times) times.push_back({w.t_start, w.t_end});
    j["samples"].push_back({{"id", s.id},
                            {"sequence", s.sequence},
                            {"windows", s.windows},
                            {"target_frame", s.target_frame},
                            {"window_times", times}});
  }
  return j.dump(2) + "\n";
}

void write_manifest(const DatasetIndex& index, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << manifest_json(index);
}

DatasetIndex read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    DatasetIndex index;
    if (j.at("format").get<std::string>() != "cmta-dataset-v1") throw ParseError("unknown manifest format", 0);
    index.P = j.at("P").get<int>();
    index.window = j.at("window").get<int>();
    index.stride = j.at("stride").get<int>();
    index.fps = j.at("fps").get<double>();
    index.seed = j.at("seed").get<std::uint64_t>();
    index.threshold_mu = j.at("threshold_mu").get<double>();
    index.threshold_sigma = j.at("threshold_sigma").get<double>();
    for (const auto& s : j.at("sequences"))
      index.sequences.push_back({s.at("name").get<std::string>(), s.at("num_frames").get<int>(),
                                 s.at("height").get<int>(), s.at("width").get<int>(), s.at("num_windows").get<int>()});
    for (const auto& s : j.at("samples")) {
      SampleEntry e;
      e.id = s.at("id").get<std::string>();
      e.sequence = s.at("sequence").get<std::string>();
      e.windows = s.at("windows").get<std::vector<int>>();
      e.target_frame = s.at("target_frame").get<int>();
      const auto& times = s.at("window_times");
      for (std::size_t k = 0; k < times.size(); ++k)
        e.times.push_back({times[k].at(0).get<double>(), times[k].at(1).get<double>(), e.windows.at(k)});
      index.samples.push_back(std::move(e));
    }
    return index;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest ") + path.string() + ": " + e.what(), 0);
  }
}

}  // namespace cmta
