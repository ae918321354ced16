#pragma once

#include "paerpr/tensor.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace paerpr {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts unsupported");

// Archive layout:
//   bytes 0..7    magic "PAERPR01"
//   bytes 8..11   header length (u32 LE)
//   header        JSON: { tensor name: {"shape":[...], "dtype":"f32", "offset":N} }
//   payload       raw little-endian float32 values; offsets are relative to the
//                 payload start and count bytes
inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'E', 'R', 'P', 'R', '0', '1'};

enum class CheckpointErrc {
  io_error,
  bad_magic,
  truncated,
  bad_header,
  bad_dtype,
  shape_mismatch,
  unknown_tensor,
  missing_tensor,
};

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  CheckpointErrc code() const { return code_; }

 private:
  CheckpointErrc code_;
};

inline void save_checkpoint(const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                            const std::string& path) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) {
    if (!by_name.emplace(name, t).second)
      throw CheckpointError(CheckpointErrc::bad_header, "duplicate tensor name: " + name);
  }
  nlohmann::json header;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : by_name) {
    header[name] = {{"shape", t->shape}, {"dtype", "f32"}, {"offset", offset}};
    offset += t->size() * sizeof(float);
  }
  std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrc::io_error, "cannot open for write: " + path);
  out.write(kCheckpointMagic, 8);
  std::uint32_t hlen = static_cast<std::uint32_t>(header_str.size());
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  std::vector<float> buf;
  for (const auto& [name, t] : by_name) {
    buf.resize(t->size());
    for (std::size_t i = 0; i < t->size(); ++i) buf[i] = static_cast<float>(t->data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw CheckpointError(CheckpointErrc::io_error, "write failed: " + path);
}

struct ArchiveEntry {
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

inline std::map<std::string, ArchiveEntry> load_checkpoint_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrc::io_error, "cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw CheckpointError(CheckpointErrc::truncated, "archive shorter than preamble");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw CheckpointError(CheckpointErrc::bad_magic, "bad magic in " + path);
  std::uint32_t hlen;
  std::memcpy(&hlen, bytes.data() + 8, 4);
  if (12 + static_cast<std::size_t>(hlen) > bytes.size())
    throw CheckpointError(CheckpointErrc::truncated, "header extends past EOF");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrc::bad_header, std::string("header parse: ") + e.what());
  }
  if (!header.is_object()) throw CheckpointError(CheckpointErrc::bad_header, "header is not an object");
  const char* payload = bytes.data() + 12 + hlen;
  std::size_t payload_size = bytes.size() - 12 - hlen;

  std::map<std::string, ArchiveEntry> out;
  for (const auto& [name, meta] : header.items()) {
    if (!meta.contains("shape") || !meta.contains("dtype") || !meta.contains("offset"))
      throw CheckpointError(CheckpointErrc::bad_header, "entry missing fields: " + name);
    if (meta["dtype"] != "f32")
      throw CheckpointError(CheckpointErrc::bad_dtype,
                            "unsupported dtype for " + name + ": " + meta["dtype"].dump());
    ArchiveEntry e;
    e.shape = meta["shape"].get<std::vector<std::size_t>>();
    std::size_t count = Tensor::count(e.shape);
    std::uint64_t off = meta["offset"].get<std::uint64_t>();
    if (off + count * sizeof(float) > payload_size)
      throw CheckpointError(CheckpointErrc::truncated, "payload truncated for tensor " + name);
    e.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      float f;
      std::memcpy(&f, payload + off + i * sizeof(float), sizeof(float));
      e.data[i] = static_cast<double>(f);
    }
    out.emplace(name, std::move(e));
  }
  return out;
}

inline void load_checkpoint_into(const std::vector<std::pair<std::string, Tensor*>>& targets,
                                 const std::string& path) {
  auto archive = load_checkpoint_raw(path);
  std::map<std::string, Tensor*> wanted;
  for (const auto& [name, t] : targets) wanted.emplace(name, t);

  std::string unknown;
  for (const auto& [name, e] : archive)
    if (!wanted.count(name)) unknown += (unknown.empty() ? "" : ", ") + name;
  if (!unknown.empty())
    throw CheckpointError(CheckpointErrc::unknown_tensor, "archive has unknown tensors: " + unknown);

  std::string missing;
  for (const auto& [name, t] : wanted)
    if (!archive.count(name)) missing += (missing.empty() ? "" : ", ") + name;
  if (!missing.empty())
    throw CheckpointError(CheckpointErrc::missing_tensor, "archive lacks tensors: " + missing);

  for (auto& [name, e] : archive) {
    Tensor* dst = wanted[name];
    if (e.shape != dst->shape)
      throw CheckpointError(CheckpointErrc::shape_mismatch,
                            "shape mismatch for " + name + ": archive " +
                                shape_str(Tensor(e.shape)) + " vs model " + shape_str(*dst));
    dst->data = std::move(e.data);
  }
}

template <typename Model>
void save_model(Model& model, const std::string& path) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (auto& [name, t] : model.named_tensors()) tensors.emplace_back(name, t);
  save_checkpoint(tensors, path);
}

template <typename Model>
void load_model(Model& model, const std::string& path) {
  load_checkpoint_into(model.named_tensors(), path);
}

}  // namespace paerpr
