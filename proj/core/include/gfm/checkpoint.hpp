#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "gfm/encoder.hpp"

namespace gfm {

// Container layout: u64 little-endian header length, UTF-8 JSON header
// {"format", "version", "config", "tensors": {name: {dtype, shape, offset}}},
// then raw little-endian float32 blobs (row-major); offsets are relative to
// the first byte after the header.
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json config;
  std::map<std::string, Tensor<float>> tensors;
};

void save_container(const std::filesystem::path& path, const Checkpoint& checkpoint);
// Throws checkpoint-io (unreadable), corrupt-container (truncated/malformed),
// version-mismatch (newer format).
Checkpoint load_container(const std::filesystem::path& path);

// Encoder-only checkpoint: config["encoder"] plus tensors "encoder.*".
template <typename T>
void save_encoder(const std::filesystem::path& path, const Encoder<T>& encoder, nlohmann::json extra = {});

// Loads stages 1..max_stage (0 = all) of a saved encoder.
template <typename T>
Encoder<T> load_encoder(const std::filesystem::path& path, int max_stage = 0);
template <typename T>
Encoder<T> encoder_from_checkpoint(const Checkpoint& checkpoint, int max_stage = 0);

}  // namespace gfm
