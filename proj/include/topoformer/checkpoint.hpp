#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "topoformer/errors.hpp"
#include "topoformer/models.hpp"

namespace topoformer {

// Checkpoint file layout: 8-byte magic, u64 little-endian manifest length,
// manifest JSON, then the payload of little-endian 64-bit floats in
// parameter declaration order. The manifest records variant, config,
// per-tensor name/shape/offset and an FNV-1a checksum of the payload.

constexpr char kCheckpointMagic[8] = {'T', 'O', 'P', 'O', 'C', 'K', 'P', '1'};
constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::uint64_t fnv1a(const unsigned char* bytes, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace detail

struct Checkpoint {
  std::unique_ptr<Model> model;
  json manifest;
};

/// Serializes all parameters plus a manifest. `extra` is merged into the
/// manifest top level (used for normalization stats and the run echo).
inline void save_checkpoint(const Model& model, const std::string& path,
                            const json& extra = json::object()) {
  const auto params = model.parameters();
  json tensors = json::array();
  std::string payload;
  std::size_t offset = 0;
  for (const auto& p : params) {
    tensors.push_back(json{{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
    for (double v : p.tensor.data()) {
      detail::put_u64_le(payload, std::bit_cast<std::uint64_t>(v));
    }
    offset += p.tensor.size();
  }
  json manifest = extra;
  manifest["format_version"] = kCheckpointVersion;
  manifest["variant"] = model.name();
  manifest["config"] = model.config_json();
  manifest["tensors"] = tensors;
  manifest["payload_checksum"] = detail::hex64(
      detail::fnv1a(reinterpret_cast<const unsigned char*>(payload.data()), payload.size()));

  const std::string manifest_str = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint file for writing: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  std::string len;
  detail::put_u64_le(len, manifest_str.size());
  out.write(len.data(), static_cast<std::streamsize>(len.size()));
  out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("short write while saving checkpoint: " + path);
}

/// Rebuilds the model named by the manifest and restores its parameters.
inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 16 ||
      !std::equal(kCheckpointMagic, kCheckpointMagic + 8, bytes.begin())) {
    throw FormatError("not a checkpoint file: " + path);
  }
  const std::uint64_t manifest_len = detail::get_u64_le(bytes.data() + 8);
  if (16 + manifest_len > bytes.size()) {
    throw IntegrityError("checkpoint manifest truncated: " + path);
  }
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + 16, bytes.begin() + 16 + manifest_len);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  if (manifest.at("format_version").get<int>() != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint format version " +
                      manifest.at("format_version").dump() + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }

  const unsigned char* payload = bytes.data() + 16 + manifest_len;
  const std::size_t payload_bytes = bytes.size() - 16 - manifest_len;

  auto model = build_model(variant_from_string(manifest.at("variant").get<std::string>()),
                           manifest.at("config"), /*seed=*/0);
  auto params = model->parameters();
  const json& tensors = manifest.at("tensors");
  if (tensors.size() != params.size()) {
    throw FormatError("checkpoint lists " + std::to_string(tensors.size()) +
                      " tensors but config " + manifest.at("config").dump() + " builds " +
                      std::to_string(params.size()));
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& t = tensors[i];
    const Shape shape = t.at("shape").get<Shape>();
    if (t.at("name").get<std::string>() != params[i].name || shape != params[i].tensor.shape()) {
      throw FormatError("checkpoint tensor " + t.at("name").get<std::string>() + " " +
                        shape_str(shape) + " does not match model tensor " + params[i].name +
                        " " + shape_str(params[i].tensor.shape()) + " built from config " +
                        manifest.at("config").dump());
    }
    if (t.at("offset").get<std::size_t>() != total) {
      throw FormatError("checkpoint tensor offsets are inconsistent at " + params[i].name);
    }
    total += params[i].tensor.size();
  }
  if (payload_bytes != total * 8) {
    throw IntegrityError("checkpoint payload has " + std::to_string(payload_bytes) +
                         " bytes, expected " + std::to_string(total * 8) + " (truncated?)");
  }
  const std::string checksum = detail::hex64(detail::fnv1a(payload, payload_bytes));
  if (checksum != manifest.at("payload_checksum").get<std::string>()) {
    throw IntegrityError("checkpoint payload checksum mismatch: stored " +
                         manifest.at("payload_checksum").get<std::string>() + ", computed " +
                         checksum);
  }
  std::size_t pos = 0;
  for (auto& p : params) {
    for (double& v : p.tensor.data()) {
      v = std::bit_cast<double>(detail::get_u64_le(payload + pos));
      pos += 8;
    }
  }
  return {std::move(model), std::move(manifest)};
}

/// Load that additionally requires the checkpoint to match an expected
/// variant/config pair.
inline Checkpoint load_checkpoint(const std::string& path, Variant expected_variant,
                                  const json& expected_config) {
  Checkpoint c = load_checkpoint(path);
  if (c.model->variant() != expected_variant || c.manifest.at("config") != expected_config) {
    throw FormatError("checkpoint holds " + c.manifest.at("variant").get<std::string>() + " " +
                      c.manifest.at("config").dump() + " but caller expected " +
                      variant_name(expected_variant) + " " + expected_config.dump());
  }
  return c;
}

}  // namespace topoformer
