#pragma once

// Binary checkpoints: magic + version, step counter, RNG state, config
// snapshot, then every parameter tensor (name, shape, raw doubles). Saves are
// write-then-rename; reloads restore values bit-identically.

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "promalign/errors.hpp"
#include "promalign/params.hpp"
#include "promalign/tensor.hpp"

namespace promalign {

inline constexpr std::array<char, 8> kCheckpointMagic = {'P', 'M', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  std::uint64_t step = 0;
  std::string rng_state;
  std::string config_json;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

namespace detail {

inline void write_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}
inline void write_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), 8);
}
inline void write_string(std::ofstream& f, const std::string& s) {
  write_u64(f, s.size());
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (!f.good()) throw InputError("checkpoint " + path + " is truncated");
  return v;
}
inline std::uint64_t read_u64(std::ifstream& f, const std::string& path) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 8);
  if (!f.good()) throw InputError("checkpoint " + path + " is truncated");
  return v;
}
inline std::string read_string(std::ifstream& f, const std::string& path) {
  std::uint64_t n = read_u64(f, path);
  std::string s(n, '\0');
  f.read(s.data(), static_cast<std::streamsize>(n));
  if (!f.good()) throw InputError("checkpoint " + path + " is truncated");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            const std::string& config_json, std::uint64_t step,
                            const std::string& rng_state) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f.good()) throw IoError("cannot open " + tmp + " for writing");
    f.write(kCheckpointMagic.data(), 8);
    detail::write_u32(f, kCheckpointVersion);
    detail::write_u64(f, step);
    detail::write_string(f, rng_state);
    detail::write_string(f, config_json);
    detail::write_u64(f, params.entries().size());
    for (const auto& [name, v] : params.entries()) {
      detail::write_string(f, name);
      detail::write_u64(f, v.value().rows());
      detail::write_u64(f, v.value().cols());
      f.write(reinterpret_cast<const char*>(v.value().data().data()),
              static_cast<std::streamsize>(v.value().size() * sizeof(double)));
    }
    if (!f.good()) throw IoError("write failure in checkpoint " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot rename " + tmp + " to " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw IoError("cannot open checkpoint " + path);
  std::array<char, 8> magic{};
  f.read(magic.data(), 8);
  if (!f.good() || magic != kCheckpointMagic)
    throw InputError("checkpoint " + path + " has a bad header");
  std::uint32_t version = detail::read_u32(f, path);
  if (version != kCheckpointVersion)
    throw InputError("checkpoint " + path + " has unsupported version " +
                     std::to_string(version));
  CheckpointData data;
  data.step = detail::read_u64(f, path);
  data.rng_state = detail::read_string(f, path);
  data.config_json = detail::read_string(f, path);
  std::uint64_t count = detail::read_u64(f, path);
  data.tensors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = detail::read_string(f, path);
    std::uint64_t rows = detail::read_u64(f, path);
    std::uint64_t cols = detail::read_u64(f, path);
    Tensor t(rows, cols);
    f.read(reinterpret_cast<char*>(t.data().data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f.good()) throw InputError("checkpoint " + path + " is truncated");
    data.tensors.emplace_back(std::move(name), std::move(t));
  }
  return data;
}

struct CheckpointApplyReport {
  std::size_t loaded = 0;
  std::size_t ignored_in_checkpoint = 0;  // tensors the model does not have
  std::size_t left_initialized = 0;       // model tensors the checkpoint lacks
};

// strict=true (resume/eval): the tensor sets must match exactly.
// strict=false (warm start): the intersection loads; shape conflicts are
// always errors.
inline CheckpointApplyReport apply_checkpoint(const CheckpointData& data, ParamStore& params,
                                              bool strict) {
  CheckpointApplyReport report;
  std::vector<bool> filled(params.entries().size(), false);
  for (const auto& [name, tensor] : data.tensors) {
    if (!params.has(name)) {
      if (strict)
        throw ConfigError("checkpoint tensor " + name + " has no matching model parameter");
      ++report.ignored_in_checkpoint;
      continue;
    }
    Var v = params.find(name);
    if (!v.value().same_shape(tensor))
      throw ConfigError("checkpoint tensor " + name + " has shape " +
                        std::to_string(tensor.rows()) + "x" + std::to_string(tensor.cols()) +
                        ", model expects " + std::to_string(v.value().rows()) + "x" +
                        std::to_string(v.value().cols()));
    v.mutable_value() = tensor;
    ++report.loaded;
    for (std::size_t i = 0; i < params.entries().size(); ++i)
      if (params.entries()[i].first == name) filled[i] = true;
  }
  for (std::size_t i = 0; i < filled.size(); ++i) {
    if (filled[i]) continue;
    if (strict)
      throw ConfigError("model parameter " + params.entries()[i].first +
                        " is missing from the checkpoint");
    ++report.left_initialized;
  }
  if (!strict && (report.ignored_in_checkpoint || report.left_initialized))
    warn("warm start: loaded " + std::to_string(report.loaded) + " tensors, ignored " +
         std::to_string(report.ignored_in_checkpoint) + " from the checkpoint, kept " +
         std::to_string(report.left_initialized) + " at their initialization");
  return report;
}

}  // namespace promalign
