// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmta/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cmta/errors.hpp"
#include "cmta/events.hpp"

namespace cmta {

void CMTAConfig::validate() const {
  if (P < 1) throw ArgumentError("P must be at least 1");
  if (voxel_bins < 1) throw ArgumentError("voxel_bins must be positive");
  if (crife_iterations < 1) throw ArgumentError("crife_iterations must be positive");
  if (voxel_bins % crife_iterations != 0)
    throw DivisibilityError("crife_iterations (" + std::to_string(crife_iterations) + ") must divide voxel_bins (" +
                            std::to_string(voxel_bins) + ")");
  if (base_channels < 2 || base_channels % 2) throw ArgumentError("base_channels must be even and >= 2");
  if (scales != 3) throw ArgumentError("scales must be 3");
  if (dynamic_kernel < 1 || dynamic_kernel % 2 == 0) throw ArgumentError("dynamic_kernel must be odd");
  if (event_channels < 1) throw ArgumentError("event_channels must be positive");
}

bool CMTAConfig::architecture_equals(const CMTAConfig& o) const {
  // P and init_seed do not change the parameter set.
  return voxel_bins == o.voxel_bins && crife_iterations == o.crife_iterations && base_channels == o.base_channels &&
         scales == o.scales && dynamic_kernel == o.dynamic_kernel && event_channels == o.event_channels &&
         enable_crife == o.enable_crife && enable_ecitfa == o.enable_ecitfa &&
         normalize_attention == o.normalize_attention;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_value(std::string_view key, std::string_view v, std::size_t line) {
  T out{};
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ParseError("bad value '" + std::string(v) + "' for " + std::string(key), line);
  return out;
}

bool parse_bool(std::string_view key, std::string_view v, std::size_t line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("bad boolean '" + std::string(v) + "' for " + std::string(key), line);
}

}  // namespace

ConfigFile parse_config(std::string_view text) {
  ConfigFile cfg;
  auto& m = cfg.model;
  auto& t = cfg.train;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    auto line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key=value", line_no);
    const auto key = trim(line.substr(0, eq));
    const auto val = trim(line.substr(eq + 1));

    if (key == "P") m.P = parse_value<int>(key, val, line_no);
    else if (key == "voxel_bins") m.voxel_bins = parse_value<int>(key, val, line_no);
    else if (key == "crife_iterations") m.crife_iterations = parse_value<int>(key, val, line_no);
    else if (key == "base_channels") m.base_channels = parse_value<int>(key, val, line_no);
    else if (key == "scales") m.scales = parse_value<int>(key, val, line_no);
    else if (key == "dynamic_kernel") m.dynamic_kernel = parse_value<int>(key, val, line_no);
    else if (key == "event_channels") m.event_channels = parse_value<int>(key, val, line_no);
    else if (key == "enable_crife") m.enable_crife = parse_bool(key, val, line_no);
    else if (key == "enable_ecitfa") m.enable_ecitfa = parse_bool(key, val, line_no);
    else if (key == "normalize_attention") m.normalize_attention = parse_bool(key, val, line_no);
    else if (key == "init_seed") m.init_seed = parse_value<std::uint64_t>(key, val, line_no);
    else if (key == "lr") t.lr = parse_value<double>(key, val, line_no);
    else if (key == "lr_min") t.lr_min = parse_value<double>(key, val, line_no);
    else if (key == "crop") t.crop = parse_value<int>(key, val, line_no);
    else if (key == "flip") t.flip = parse_bool(key, val, line_no);
    else if (key == "seed") t.seed = parse_value<std::uint64_t>(key, val, line_no);
    else if (key == "checkpoint_every") t.checkpoint_every = parse_value<int>(key, val, line_no);
    else throw ParseError("unknown key '" + std::string(key) + "'", line_no);
  }
  m.validate();
  return cfg;
}

ConfigFile read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const CMTAConfig& m) {
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "P=" << m.P << "\n"
     << "voxel_bins=" << m.voxel_bins << "\n"
     << "crife_iterations=" << m.crife_iterations << "\n"
     << "base_channels=" << m.base_channels << "\n"
     << "scales=" << m.scales << "\n"
     << "dynamic_kernel=" << m.dynamic_kernel << "\n"
     << "event_channels=" << m.event_channels << "\n"
     << "enable_crife=" << b(m.enable_crife) << "\n"
     << "enable_ecitfa=" << b(m.enable_ecitfa) << "\n"
     << "normalize_attention=" << b(m.normalize_attention) << "\n"
     << "init_seed=" << m.init_seed << "\n";
  return os.str();
}

std::string format_config(const ConfigFile& c) {
  std::ostringstream os;
  os << format_config(c.model) << "lr=" << format_seconds(c.train.lr) << "\n"
     << "lr_min=" << format_seconds(c.train.lr_min) << "\n"
     << "crop=" << c.train.crop << "\n"
     << "flip=" << (c.train.flip ? "true" : "false") << "\n"
     << "seed=" << c.train.seed << "\n"
     << "checkpoint_every=" << c.train.checkpoint_every << "\n";
  return os.str();
}

}  // namespace cmta
