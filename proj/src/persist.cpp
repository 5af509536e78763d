#include "sslora/persist.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

namespace sslora {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'S', 'L', 'W'};

}  // namespace

std::vector<std::uint8_t> write_container(const TensorContainer& c) {
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    const std::uint64_t length = t.bytes.size();
    header[name] = {{"shape", t.shape},
                    {"dtype", dtype_name(t.dtype)},
                    {"offset", offset},
                    {"length", length}};
    offset += length;
  }
  const std::string htext = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + htext.size() + offset);
  out.insert(out.end(), kMagic, kMagic + 4);
  detail::put_u32_le(out, kContainerVersion);
  detail::put_u64_le(out, htext.size());
  out.insert(out.end(), htext.begin(), htext.end());
  for (const auto& [name, t] : c.tensors)
    out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  return out;
}

TensorContainer read_container(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4)
    throw PersistError(PersistCode::truncated_header, "file shorter than magic");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw PersistError(PersistCode::bad_magic, "not a tensor container");
  if (bytes.size() < 16)
    throw PersistError(PersistCode::truncated_header, "file shorter than fixed header");
  const std::uint32_t version = detail::get_u32_le(bytes.data() + 4);
  if (version != kContainerVersion)
    throw PersistError(PersistCode::bad_version,
                       "unsupported version " + std::to_string(version));
  const std::uint64_t hlen = detail::get_u64_le(bytes.data() + 8);
  if (16 + hlen > bytes.size())
    throw PersistError(PersistCode::truncated_header, "declared header exceeds file");

  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + hlen);
  } catch (const json::exception& e) {
    throw PersistError(PersistCode::bad_header, e.what());
  }
  if (!header.is_object())
    throw PersistError(PersistCode::bad_header, "header is not a JSON object");

  const std::uint64_t payload_size = bytes.size() - 16 - hlen;
  const std::uint8_t* payload = bytes.data() + 16 + hlen;

  TensorContainer c;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> extents;
  for (const auto& [name, meta] : header.items()) {
    Tensor t;
    try {
      t.shape = meta.at("shape").get<std::vector<std::int64_t>>();
      t.dtype = dtype_from_name(meta.at("dtype").get<std::string>());
      const auto offset = meta.at("offset").get<std::uint64_t>();
      const auto length = meta.at("length").get<std::uint64_t>();
      for (auto d : t.shape)
        if (d < 0) throw PersistError(PersistCode::bad_header, "negative dimension");
      if (t.element_count() * dtype_size(t.dtype) != length)
        throw PersistError(PersistCode::shape_mismatch,
                           "tensor '" + name + "': shape does not match byte length");
      if (offset + length > payload_size || offset + length < offset)
        throw PersistError(PersistCode::truncated_payload,
                           "tensor '" + name + "' extends past end of payload");
      t.bytes.assign(payload + offset, payload + offset + length);
      extents.emplace_back(offset, length);
    } catch (const json::exception& e) {
      throw PersistError(PersistCode::bad_header,
                         "tensor '" + name + "': " + e.what());
    }
    c.tensors[name] = std::move(t);
  }

  std::sort(extents.begin(), extents.end());
  for (std::size_t i = 1; i < extents.size(); ++i) {
    if (extents[i - 1].first + extents[i - 1].second > extents[i].first)
      throw PersistError(PersistCode::overlap, "overlapping tensor extents");
  }
  return c;
}

namespace {

void write_bytes_atomic(const std::string& path, const void* data, std::size_t size) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw PersistError(PersistCode::io, "cannot open " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw PersistError(PersistCode::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw PersistError(PersistCode::io, "rename to " + path + ": " + ec.message());
  }
}

}  // namespace

void save_container(const TensorContainer& c, const std::string& path) {
  const std::vector<std::uint8_t> bytes = write_container(c);
  write_bytes_atomic(path, bytes.data(), bytes.size());
}

TensorContainer load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistError(PersistCode::io, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return read_container(bytes);
}

void write_text_atomic(const std::string& path, const std::string& text) {
  write_bytes_atomic(path, text.data(), text.size());
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistError(PersistCode::io, "cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace sslora
