// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmta/events.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "cmta/errors.hpp"

namespace cmta {

std::int64_t EventStream::net_polarity() const {
  std::int64_t s = 0;
  for (const auto& e : events) s += e.p;
  return s;
}

void validate(const EventStream& stream) {
  if (!(stream.window.duration() > 0.0)) throw InvalidWindowError("exposure window has non-positive duration");
  double last = stream.window.t_start;
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const auto& e = stream.events[i];
    if (e.p != 1 && e.p != -1) throw ArgumentError("event " + std::to_string(i) + ": polarity must be +1 or -1");
    if (e.x < 0 || e.x >= stream.width || e.y < 0 || e.y >= stream.height)
      throw BoundsError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + ", " + std::to_string(e.y) +
                        ") outside " + std::to_string(stream.height) + "x" + std::to_string(stream.width));
    if (e.t < stream.window.t_start || e.t > stream.window.t_end)
      throw RangeError("event " + std::to_string(i) + " time outside its exposure window");
    if (e.t < last) throw OrderingError("event " + std::to_string(i) + " is out of time order");
    last = e.t;
  }
}

VoxelGrid build_voxel_grid(const EventStream& stream, int bins, int height, int width, VoxelOptions options) {
  if (bins < 1) throw ArgumentError("voxel grid needs at least one bin");
  if (height < 1 || width < 1) throw ArgumentError("voxel grid needs positive spatial size");
  const double duration = stream.window.duration();
  if (!(duration > 0.0)) throw InvalidWindowError("exposure window has non-positive duration");

  VoxelGrid grid{Tensor({bins, height, width})};
  const double scale = static_cast<double>(bins - 1) / duration;
  for (const auto& e : stream.events) {
    if (e.x < 0 || e.x >= width || e.y < 0 || e.y >= height)
      throw BoundsError("event at (" + std::to_string(e.x) + ", " + std::to_string(e.y) + ") outside " +
                        std::to_string(height) + "x" + std::to_string(width));
    if (e.t < stream.window.t_start || e.t > stream.window.t_end)
      throw RangeError("event time outside its exposure window");
    const double ts = std::clamp((e.t - stream.window.t_start) * scale, 0.0, static_cast<double>(bins - 1));
    const int lower = std::min(static_cast<int>(std::floor(ts)), bins - 1);
    const double frac = ts - lower;
    grid.data.at(lower, e.y, e.x) += (1.0 - frac) * e.p;
    if (frac > 0.0 && lower + 1 < bins) grid.data.at(lower + 1, e.y, e.x) += frac * e.p;
  }
  if (options.normalize) {
    const double m = grid.data.abs_max();
    if (m > 0.0) grid.data *= 1.0 / m;
  }
  return grid;
}

std::vector<Tensor> partition_voxel_grid(const VoxelGrid& grid, int n_parts) {
  if (n_parts < 1) throw ArgumentError("partition count must be positive");
  const int bins = grid.bins();
  if (bins % n_parts != 0)
    throw DivisibilityError(std::to_string(n_parts) + " parts do not divide " + std::to_string(bins) + " bins");
  const int per = bins / n_parts;
  std::vector<Tensor> parts;
  parts.reserve(static_cast<std::size_t>(n_parts));
  for (int i = 0; i < n_parts; ++i) parts.push_back(slice_channels(grid.data, i * per, (i + 1) * per));
  return parts;
}

Tensor pair_exposure_grids(const VoxelGrid& grid_m, const VoxelGrid& grid_m_plus_1) {
  if (grid_m.data.shape() != grid_m_plus_1.data.shape())
    throw ShapeError("cannot pair voxel grids " + shape_str(grid_m.data.shape()) + " and " +
                     shape_str(grid_m_plus_1.data.shape()));
  const Tensor parts[] = {grid_m.data, grid_m_plus_1.data};
  return concat_channels(parts);
}

std::string format_seconds(double t) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), t, std::chars_format::fixed);
  std::string s(buf, res.ptr);
  auto dot = s.find('.');
  if (dot == std::string::npos) {
    s += '.';
    dot = s.size() - 1;
  }
  const auto decimals = s.size() - dot - 1;
  if (decimals < 6) s.append(6 - decimals, '0');
  return s;
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const auto start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

template <typename T>
T header_field(std::string_view token, std::string_view key) {
  T value{};
  if (token.substr(0, key.size()) != key || !parse_number(token.substr(key.size()), value))
    throw ParseError("malformed header field, expected " + std::string(key) + "<value>", 1);
  return value;
}

}  // namespace

EventStream parse_events(std::string_view text) {
  EventStream stream;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool have_header = false;
  double last_t = 0.0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const auto line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    const auto tok = split_ws(line);
    if (!have_header) {
      if (tok.size() != 7 || tok[0] != "#" || tok[1] != "events" || tok[2] != "v1")
        throw ParseError("expected header '# events v1 H=<int> W=<int> t0=<float> t1=<float>'", line_no);
      stream.height = header_field<int>(tok[3], "H=");
      stream.width = header_field<int>(tok[4], "W=");
      stream.window.t_start = header_field<double>(tok[5], "t0=");
      stream.window.t_end = header_field<double>(tok[6], "t1=");
      if (stream.height < 1 || stream.width < 1) throw ParseError("sensor size must be positive", line_no);
      if (!(stream.window.t_end > stream.window.t_start))
        throw ParseError("t1 must be greater than t0", line_no);
      last_t = stream.window.t_start;
      have_header = true;
      continue;
    }
    if (tok.empty()) continue;
    if (tok.size() != 4) throw ParseError("expected 't x y p', got " + std::to_string(tok.size()) + " fields", line_no);
    Event e;
    int p = 0;
    if (!parse_number(tok[0], e.t) || !parse_number(tok[1], e.x) || !parse_number(tok[2], e.y) ||
        !parse_number(tok[3], p))
      throw ParseError("non-numeric field", line_no);
    if (p != 1 && p != -1) throw ParseError("polarity must be +1 or -1, got " + std::string(tok[3]), line_no);
    e.p = static_cast<std::int8_t>(p);
    if (e.x < 0 || e.x >= stream.width || e.y < 0 || e.y >= stream.height)
      throw ParseError("coordinates outside the sensor", line_no);
    if (e.t < stream.window.t_start || e.t > stream.window.t_end)
      throw ParseError("timestamp outside [t0, t1]", line_no);
    if (e.t < last_t) throw OrderingError("line " + std::to_string(line_no) + ": timestamps are not sorted");
    last_t = e.t;
    stream.events.push_back(e);
  }
  if (!have_header) throw ParseError("missing header", 1);
  return stream;
}

std::string format_events(const EventStream& stream) {
  validate(stream);
  std::string out = "# events v1 H=" + std::to_string(stream.height) + " W=" + std::to_string(stream.width) +
                    " t0=" + format_seconds(stream.window.t_start) + " t1=" + format_seconds(stream.window.t_end) + "\n";
  out.reserve(out.size() + stream.events.size() * 24);
  for (const auto& e : stream.events) {
    out += format_seconds(e.t);
    out += ' ';
    out += std::to_string(e.x);
    out += ' ';
    out += std::to_string(e.y);
    out += e.p > 0 ? " 1\n" : " -1\n";
  }
  return out;
}

EventStream read_events(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open event file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_events(ss.str());
}

void write_events(const EventStream& stream, const std::filesystem::path& path) {
  const auto text = format_events(stream);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write event file " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace cmta
