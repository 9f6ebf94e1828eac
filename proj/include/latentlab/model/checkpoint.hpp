#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "json.hpp"
#include "latentlab/model/weights.hpp"

namespace latentlab::model {

// File layout:
//   [16 bytes]  magic "LATENTLAB-CKPT01"
//   [8 bytes]   manifest length L, little-endian u64
//   [L bytes]   JSON manifest {format_version, config, tensors:[{name, shape, offset, bytes}], blob_bytes}
//   [blob]      every tensor as little-endian IEEE-754 doubles, offsets relative to blob start

inline constexpr std::array<char, 16> kCheckpointMagic = {'L', 'A', 'T', 'E', 'N', 'T', 'L', 'A',
                                                          'B', '-', 'C', 'K', 'P', 'T', '0', '1'};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class MalformedHeaderError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ManifestMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedBlobError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const Weights& w, const ModelConfig& c) {
  check_weights(w, c);
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::uint64_t bytes = w[i].size() * sizeof(double);
    tensors.push_back({{"name", w.names[i]}, {"shape", w[i].shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  const nlohmann::json manifest = {
      {"format_version", 1}, {"config", to_json(c)}, {"tensors", tensors}, {"blob_bytes", offset}};
  const std::string mtext = manifest.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u64(out, mtext.size());
  out += mtext;
  out.reserve(out.size() + offset);
  for (const Tensor& t : w.tensors) {
    for (double v : t.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline std::pair<Weights, ModelConfig> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw MalformedHeaderError("checkpoint: missing or wrong magic header");
  }
  const std::uint64_t mlen = detail::get_u64(bytes.data() + 16);
  if (mlen > bytes.size() - 24) throw MalformedHeaderError("checkpoint: manifest length exceeds file size");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(24, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw MalformedHeaderError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }
  ModelConfig c;
  std::uint64_t blob_bytes = 0;
  nlohmann::json tensors;
  try {
    if (manifest.at("format_version").get<int>() != 1) throw MalformedHeaderError("checkpoint: unsupported format version");
    c = model_config_from_json(manifest.at("config"));
    blob_bytes = manifest.at("blob_bytes").get<std::uint64_t>();
    tensors = manifest.at("tensors");
  } catch (const nlohmann::json::exception& e) {
    throw MalformedHeaderError(std::string("checkpoint: manifest missing fields: ") + e.what());
  } catch (const ConfigError& e) {
    throw MalformedHeaderError(std::string("checkpoint: bad config: ") + e.what());
  }
  const auto expected = weight_manifest(c);
  if (!tensors.is_array() || tensors.size() != expected.size()) {
    throw ManifestMismatchError("checkpoint: manifest lists " + std::to_string(tensors.size()) + " tensors, config implies " +
                                std::to_string(expected.size()));
  }
  const std::uint64_t blob_start = 24 + mlen;
  const std::uint64_t available = bytes.size() - blob_start;
  Weights w;
  std::uint64_t running = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& e = tensors[i];
    std::string name;
    num::Shape shape;
    std::uint64_t offset = 0;
    std::uint64_t nbytes = 0;
    try {
      name = e.at("name").get<std::string>();
      shape = e.at("shape").get<num::Shape>();
      offset = e.at("offset").get<std::uint64_t>();
      nbytes = e.at("bytes").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw MalformedHeaderError(std::string("checkpoint: bad tensor entry: ") + ex.what());
    }
    if (name != expected[i].first || shape != expected[i].second || nbytes != num::shape_numel(shape) * sizeof(double) ||
        offset != running) {
      throw ManifestMismatchError("checkpoint: tensor entry " + std::to_string(i) + " (" + name +
                                  ") disagrees with the config layout");
    }
    running += nbytes;
    if (offset + nbytes > available) {
      throw TruncatedBlobError("checkpoint: blob ends before tensor " + name);
    }
    std::vector<double> data(num::shape_numel(shape));
    const char* p = bytes.data() + blob_start + offset;
    for (std::size_t k = 0; k < data.size(); ++k) data[k] = std::bit_cast<double>(detail::get_u64(p + 8 * k));
    w.names.push_back(name);
    w.tensors.emplace_back(shape, std::move(data));
  }
  if (running != blob_bytes) throw ManifestMismatchError("checkpoint: blob_bytes disagrees with tensor entries");
  if (available < blob_bytes) throw TruncatedBlobError("checkpoint: blob shorter than declared");
  if (available > blob_bytes) throw ManifestMismatchError("checkpoint: trailing bytes after blob");
  return {std::move(w), c};
}

inline void save_checkpoint(const Weights& w, const ModelConfig& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
  const std::string bytes = encode_checkpoint(w, c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

inline std::pair<Weights, ModelConfig> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace latentlab::model
