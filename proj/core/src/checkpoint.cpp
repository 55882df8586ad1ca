#include "xfer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "xfer/error.hpp"

namespace xfer {

static_assert(std::endian::native == std::endian::little, "checkpoint payload is written in host order");

namespace {

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  require(pos + sizeof(T) <= in.size(), ErrorKind::kCorruption, "checkpoint truncated in header");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

nlohmann::json manifest_json(const Parameters& params, const CheckpointManifest& manifest) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& e : params.entries()) tensors.push_back({{"name", e.name}, {"shape", e.value.shape()}});
  return nlohmann::json{{"format", "xfer-checkpoint"},
                        {"config", manifest.config},
                        {"vocab_hash", manifest.vocab_hash},
                        {"provenance", manifest.provenance},
                        {"tensors", std::move(tensors)}};
}

}  // namespace

std::string encode_checkpoint(const Parameters& params, const CheckpointManifest& manifest) {
  const std::string json = manifest_json(params, manifest).dump();
  std::string out;
  out.reserve(16 + json.size() + params.element_count() * sizeof(double));
  out.append(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, json.size());
  out += json;
  for (const auto& e : params.entries()) {
    out.append(reinterpret_cast<const char*>(e.value.data().data()), e.value.size() * sizeof(double));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  require(bytes.size() >= 4 && std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0, ErrorKind::kFormat,
          "not a checkpoint (bad magic)");
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(bytes, pos);
  require(version == kCheckpointVersion, ErrorKind::kFormat, "unsupported checkpoint version " + std::to_string(version));
  const auto length = take<std::uint64_t>(bytes, pos);
  require(length <= bytes.size() - pos, ErrorKind::kCorruption, "manifest length exceeds file size");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(pos, length));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kCorruption, std::string("unreadable manifest: ") + e.what());
  }
  pos += length;

  Checkpoint ck;
  try {
    ck.manifest.config = manifest.at("config").get<ModelConfig>();
    ck.manifest.vocab_hash = manifest.at("vocab_hash").get<std::string>();
    ck.manifest.provenance = manifest.at("provenance");
    std::size_t expected = 0;
    for (const auto& t : manifest.at("tensors")) expected += shape_size(t.at("shape").get<Shape>());
    require(bytes.size() - pos == expected * sizeof(double), ErrorKind::kCorruption,
            "payload holds " + std::to_string((bytes.size() - pos) / sizeof(double)) + " values, manifest declares " +
                std::to_string(expected));
    for (const auto& t : manifest.at("tensors")) {
      Shape shape = t.at("shape").get<Shape>();
      std::vector<double> data(shape_size(shape));
      std::memcpy(data.data(), bytes.data() + pos, data.size() * sizeof(double));
      pos += data.size() * sizeof(double);
      ck.params.add(t.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kCorruption, std::string("malformed manifest: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Parameters& params, const CheckpointManifest& manifest) {
  const std::string bytes = encode_checkpoint(params, manifest);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint load_checkpoint_for(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  require(ck.manifest.config.same_encoder(expected), ErrorKind::kCompatibility,
          "checkpoint " + path.string() + " architecture " + nlohmann::json(ck.manifest.config).dump() +
              " does not match " + nlohmann::json(expected).dump());
  return ck;
}

}  // namespace xfer
