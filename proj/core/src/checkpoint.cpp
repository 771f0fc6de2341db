#include "gfm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "gfm/error.hpp"

namespace gfm {
namespace {

constexpr const char* kFormat = "gfm-checkpoint";

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_container(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json header;
  header["format"] = kFormat;
  header["version"] = kCheckpointVersion;
  header["config"] = checkpoint.config;
  nlohmann::json dir = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : checkpoint.tensors) {
    dir[name] = {{"dtype", "float32"}, {"shape", t.shape}, {"offset", offset}};
    offset += t.numel() * 4;
  }
  header["tensors"] = dir;
  const std::string text = header.dump();

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(static_cast<bool>(os), Errc::checkpoint_io, "cannot open " + path.string() + " for writing");
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<unsigned char> buf;
  for (const auto& [name, t] : checkpoint.tensors) {
    buf.resize(t.numel() * 4);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(t.data[i]);
      for (int k = 0; k < 4; ++k) buf[i * 4 + k] = static_cast<unsigned char>(bits >> (8 * k));
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  check(static_cast<bool>(os), Errc::checkpoint_io, "write failed for " + path.string());
}

Checkpoint load_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  check(static_cast<bool>(is), Errc::checkpoint_io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  check(bytes.size() >= 8, Errc::corrupt_container, path.string() + ": shorter than the header length field");
  const std::uint64_t header_len = get_u64(bytes.data());
  check(header_len <= bytes.size() - 8, Errc::corrupt_container, path.string() + ": header exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::corrupt_container, path.string() + ": header is not valid JSON (" + e.what() + ")");
  }
  check(header.is_object() && header.contains("version") && header["version"].is_number_integer(),
        Errc::corrupt_container, path.string() + ": missing version field");
  const int version = header["version"].get<int>();
  check(version <= kCheckpointVersion && version >= 1, Errc::version_mismatch,
        path.string() + ": container version " + std::to_string(version) + ", supported " +
            std::to_string(kCheckpointVersion));
  check(header.value("format", std::string{}) == kFormat && header.contains("tensors"), Errc::corrupt_container,
        path.string() + ": not a checkpoint container");

  Checkpoint out;
  out.config = header.value("config", nlohmann::json::object());
  const std::size_t blob_start = 8 + header_len;
  const std::size_t blob_size = bytes.size() - blob_start;
  try {
    for (const auto& [name, entry] : header["tensors"].items()) {
      check(entry.at("dtype").get<std::string>() == "float32", Errc::corrupt_container, name + ": unsupported dtype");
      Tensor<float> t(entry.at("shape").get<Shape>());
      const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      check(offset <= blob_size && t.numel() * 4 <= blob_size - offset, Errc::corrupt_container,
            path.string() + ": tensor " + name + " extends past end of file");
      const unsigned char* src = bytes.data() + blob_start + offset;
      for (std::size_t i = 0; i < t.numel(); ++i) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(src[i * 4 + k]) << (8 * k);
        t.data[i] = std::bit_cast<float>(bits);
      }
      out.tensors.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::corrupt_container, path.string() + ": malformed tensor directory (" + e.what() + ")");
  }
  return out;
}

template <typename T>
void save_encoder(const std::filesystem::path& path, const Encoder<T>& encoder, nlohmann::json extra) {
  Checkpoint ck;
  ck.config = extra.is_object() ? std::move(extra) : nlohmann::json::object();
  ck.config["encoder"] = encoder.config();
  ck.config["stages"] = encoder.built_stages();
  ck.tensors = encoder.params().export_float("encoder.");
  save_container(path, ck);
}

template <typename T>
Encoder<T> encoder_from_checkpoint(const Checkpoint& checkpoint, int max_stage) {
  check(checkpoint.config.contains("encoder"), Errc::corrupt_container, "checkpoint has no encoder config");
  EncoderConfig cfg;
  try {
    cfg = checkpoint.config["encoder"].get<EncoderConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::corrupt_container, std::string("bad encoder config: ") + e.what());
  }
  const int saved = checkpoint.config.value("stages", cfg.num_stages());
  check(max_stage <= saved, Errc::invalid_config,
        "checkpoint holds " + std::to_string(saved) + " stages, requested " + std::to_string(max_stage));
  Encoder<T> enc(cfg, 0, max_stage == 0 ? saved : max_stage);
  import_float(enc.params(), checkpoint.tensors, "encoder.", true);
  return enc;
}

template <typename T>
Encoder<T> load_encoder(const std::filesystem::path& path, int max_stage) {
  return encoder_from_checkpoint<T>(load_container(path), max_stage);
}

template void save_encoder<float>(const std::filesystem::path&, const Encoder<float>&, nlohmann::json);
template void save_encoder<double>(const std::filesystem::path&, const Encoder<double>&, nlohmann::json);
template Encoder<float> load_encoder<float>(const std::filesystem::path&, int);
template Encoder<double> load_encoder<double>(const std::filesystem::path&, int);
template Encoder<float> encoder_from_checkpoint<float>(const Checkpoint&, int);
template Encoder<double> encoder_from_checkpoint<double>(const Checkpoint&, int);

}  // namespace gfm
