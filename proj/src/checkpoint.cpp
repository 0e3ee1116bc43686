// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmta/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "cmta/errors.hpp"

namespace cmta {

namespace {

constexpr char kMagic[8] = {'C', 'M', 'T', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated checkpoint " + path.string());
  return v;
}

std::string get_string(std::istream& is, const std::filesystem::path& path) {
  const auto n = get<std::uint64_t>(is, path);
  if (n > (1u << 20)) throw IoError("corrupt checkpoint " + path.string());
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("truncated checkpoint " + path.string());
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + tmp.string());
    os.write(kMagic, sizeof(kMagic));
    put(os, kVersion);
    const auto cfg = format_config(ckpt.config);
    put<std::uint64_t>(os, cfg.size());
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    put<std::int64_t>(os, ckpt.step);
    put<std::uint64_t>(os, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
      put<std::uint64_t>(os, name.size());
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
      for (auto d : t.shape()) put<std::int64_t>(os, d);
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError(path.string() + " is not a checkpoint");
  if (get<std::uint32_t>(is, path) != kVersion) throw IoError("unsupported checkpoint version in " + path.string());
  Checkpoint ckpt;
  ckpt.config = parse_config(get_string(is, path)).model;
  ckpt.step = get<std::int64_t>(is, path);
  const auto count = get<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = get_string(is, path);
    const auto ndim = get<std::uint32_t>(is, path);
    if (ndim > 8) throw IoError("corrupt checkpoint " + path.string());
    Shape shape(ndim);
    for (auto& d : shape) d = get<std::int64_t>(is, path);
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double))))
      throw IoError("truncated checkpoint " + path.string());
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

Checkpoint make_checkpoint(const CmtaModel& model, std::int64_t step) {
  return Checkpoint{model.config(), step, model.state()};
}

CmtaModel model_from_checkpoint(const Checkpoint& ckpt) {
  CmtaModel model(ckpt.config);
  model.load_state(ckpt.tensors);
  return model;
}

void restore(CmtaModel& model, const Checkpoint& ckpt) {
  if (!model.config().architecture_equals(ckpt.config))
    throw ArgumentError("checkpoint architecture does not match the model configuration");
  model.load_state(ckpt.tensors);
}

}  // namespace cmta
