#pragma once

#include <bit>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sslora/errors.hpp"
#include "sslora/linalg.hpp"

namespace sslora {

// Tensor container file layout:
//   magic "SSLW" | u32 version (LE) | u64 header length (LE) |
//   UTF-8 JSON header { name: {shape, dtype, offset, length} } | payload
// Offsets are relative to the payload start; payload is packed little-endian,
// row-major, with no gaps between tensors.

inline constexpr std::uint32_t kContainerVersion = 1;

enum class Dtype { f32, f64 };

inline std::size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

inline Dtype dtype_from_name(const std::string& s) {
  if (s == "f32") return Dtype::f32;
  if (s == "f64") return Dtype::f64;
  throw PersistError(PersistCode::bad_dtype, "unknown dtype '" + s + "'");
}

struct Tensor {
  std::vector<std::int64_t> shape;
  Dtype dtype = Dtype::f64;
  std::vector<std::uint8_t> bytes;  // little-endian, row-major

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    return shape.empty() ? 0 : n;
  }

  bool operator==(const Tensor&) const = default;
};

namespace detail {

inline void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint32_t get_u32_le(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

struct TensorContainer {
  std::map<std::string, Tensor> tensors;

  bool contains(const std::string& name) const { return tensors.count(name) > 0; }

  /// Store a matrix; float stores as f32, double as f64.
  template <class S>
  void put(const std::string& name, const MatrixX<S>& m) {
    Tensor t;
    t.shape = {m.rows(), m.cols()};
    t.dtype = sizeof(S) == 4 ? Dtype::f32 : Dtype::f64;
    t.bytes.reserve(m.size() * dtype_size(t.dtype));
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) {
        if (t.dtype == Dtype::f32) {
          const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m(i, j)));
          detail::put_u32_le(t.bytes, bits);
        } else {
          const auto bits = std::bit_cast<std::uint64_t>(static_cast<double>(m(i, j)));
          detail::put_u64_le(t.bytes, bits);
        }
      }
    }
    tensors[name] = std::move(t);
  }

  /// Fetch a 2-D tensor as a matrix of S, converting dtype if needed.
  template <class S>
  MatrixX<S> get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw PersistError(PersistCode::unknown_tensor, "missing tensor '" + name + "'");
    const Tensor& t = it->second;
    if (t.shape.size() != 2)
      throw PersistError(PersistCode::shape_mismatch,
                         "tensor '" + name + "' is not 2-D");
    MatrixX<S> m(t.shape[0], t.shape[1]);
    const std::uint8_t* p = t.bytes.data();
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) {
        double v;
        if (t.dtype == Dtype::f32) {
          v = std::bit_cast<float>(detail::get_u32_le(p));
          p += 4;
        } else {
          v = std::bit_cast<double>(detail::get_u64_le(p));
          p += 8;
        }
        m(i, j) = static_cast<S>(v);
      }
    }
    return m;
  }

  bool operator==(const TensorContainer&) const = default;
};

std::vector<std::uint8_t> write_container(const TensorContainer& c);
TensorContainer read_container(const std::vector<std::uint8_t>& bytes);

/// Atomic file IO (write-temp-then-rename).
void save_container(const TensorContainer& c, const std::string& path);
TensorContainer load_container(const std::string& path);
void write_text_atomic(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace sslora
