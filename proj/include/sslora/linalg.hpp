#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "sslora/errors.hpp"

namespace sslora {

template <class S> using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S> using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

template <class S>
bool all_finite(const MatrixX<S>& m) {
  return m.allFinite();
}

template <class S>
void require_finite(const MatrixX<S>& m, const char* what) {
  if (!m.allFinite())
    throw DimensionError(std::string(what) + ": non-finite entries");
}

// Thin wrappers over Eigen expressions. They exist to turn shape mismatches
// into exceptions instead of asserts; internal code is free to use Eigen
// operators directly once shapes are established.

template <class S>
MatrixX<S> matmul(const MatrixX<S>& a, const MatrixX<S>& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " * " + std::to_string(b.rows()) +
                         "x" + std::to_string(b.cols()));
  return a * b;
}

template <class S>
MatrixX<S> transpose(const MatrixX<S>& m) {
  return m.transpose();
}

template <class S>
MatrixX<S> add(const MatrixX<S>& a, const MatrixX<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("add: shape mismatch");
  return a + b;
}

template <class S>
MatrixX<S> sub(const MatrixX<S>& a, const MatrixX<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("sub: shape mismatch");
  return a - b;
}

template <class S>
MatrixX<S> scale(const MatrixX<S>& m, S c) {
  return c * m;
}

template <class S>
S frobenius_norm(const MatrixX<S>& m) {
  return m.norm();
}

/// Thin SVD of w: w = U * diag(sigma) * Vt, sigma descending.
template <class S>
struct SvdResult {
  MatrixX<S> U;       // d x min(d,d')
  VectorX<S> sigma;   // min(d,d'), descending, non-negative
  MatrixX<S> Vt;      // min(d,d') x d'
};

/// Column-sign convention: the largest-magnitude entry of each U column is
/// made non-negative (first such entry on ties), with the matching Vt row
/// flipped. Removes the sign ambiguity so decompositions are reproducible.
template <class S>
void fix_svd_signs(MatrixX<S>& u, MatrixX<S>& vt) {
  for (Index j = 0; j < u.cols(); ++j) {
    Index imax = 0;
    S amax = S(-1);
    for (Index i = 0; i < u.rows(); ++i) {
      const S a = std::abs(u(i, j));
      if (a > amax) {
        amax = a;
        imax = i;
      }
    }
    if (u(imax, j) < S(0)) {
      u.col(j) = -u.col(j);
      if (j < vt.rows()) vt.row(j) = -vt.row(j);
    }
  }
}

template <class S>
SvdResult<S> svd(const MatrixX<S>& w) {
  require_finite(w, "svd");
  Eigen::JacobiSVD<MatrixX<S>> solver(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success)
    throw NumericalError("svd: no convergence", 2 * w.rows() * w.cols());
  SvdResult<S> r;
  r.U = solver.matrixU();
  r.sigma = solver.singularValues();
  r.Vt = solver.matrixV().transpose();
  fix_svd_signs(r.U, r.Vt);
  return r;
}

/// Deterministic random stream. mt19937_64 is fully pinned by the standard;
/// uniform/gaussian transforms are hand-rolled so the stream does not depend
/// on the standard library implementation.
class RandomSource {
public:
  explicit RandomSource(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) { return engine_() % n; }

  /// Standard normal via Box-Muller (cosine branch; two uniforms per draw).
  double gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

private:
  std::mt19937_64 engine_;
};

inline RandomSource seeded_rng(std::uint64_t seed) { return RandomSource(seed); }

/// splitmix64 mix of (seed, stream): independent substreams from one seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// rows x cols matrix of N(0, std^2) entries, filled row by row.
template <class S>
MatrixX<S> gaussian_matrix(RandomSource& rng, Index rows, Index cols, double std_dev) {
  if (std_dev <= 0.0) throw DimensionError("gaussian_matrix: std must be > 0");
  MatrixX<S> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      m(i, j) = static_cast<S>(std_dev * rng.gaussian());
  return m;
}

/// Fisher-Yates with a pinned draw sequence (std::shuffle is unspecified).
template <class T>
void deterministic_shuffle(std::vector<T>& v, RandomSource& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_index(i));
    std::swap(v[i - 1], v[j]);
  }
}

/// FNV-1a over the row-major 64-bit pattern of a matrix; used for the
/// frozen-base fingerprint.
template <class S>
std::uint64_t fnv1a64(const MatrixX<S>& m, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      std::uint64_t bits;
      const double v = static_cast<double>(m(i, j));
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffULL;
        h *= 0x100000001b3ULL;
      }
    }
  return h;
}

}  // namespace sslora
