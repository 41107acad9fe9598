#pragma once

// FIR memory block. A hidden sequence H (D x T, one column per time step)
// is filtered by learnable taps a_0..a_N:
//
//   h~_t = f( sum_{i=0}^{min(N,t)} a_i * h_{t-i} )
//
// Two equivalent routes are provided: the tapped-delay loop, and the
// product H·M with M the upper-banded Toeplitz matrix M[s][s+i] = a_i.
// A mini-batch of K sentences uses the block-diagonal diag(M_1..M_K) so
// memory never crosses a sentence boundary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsmn/linalg.hpp"

namespace fsmn {

enum class Activation { identity, relu };

inline Matrix activate(Matrix x, Activation act) {
  return act == Activation::relu ? relu(std::move(x)) : x;
}

/// Blocks longer than this are multiplied band-wise instead of densely.
inline constexpr std::size_t kDefaultDenseCap = 512;

class FilterCoeffs {
 public:
  explicit FilterCoeffs(std::vector<double> taps) : taps_(std::move(taps)) {
    if (taps_.empty()) throw std::invalid_argument("FilterCoeffs: at least one tap required");
    for (std::size_t i = 0; i < taps_.size(); ++i) {
      if (!std::isfinite(taps_[i])) {
        throw std::invalid_argument("FilterCoeffs: tap " + std::to_string(i) +
                                    " is not finite");
      }
    }
  }

  /// Identity filter of the given order: a = [1, 0, ..., 0].
  static FilterCoeffs identity(std::size_t order) {
    std::vector<double> t(order + 1, 0.0);
    t[0] = 1.0;
    return FilterCoeffs(std::move(t));
  }

  std::size_t order() const { return taps_.size() - 1; }
  std::size_t size() const { return taps_.size(); }
  double operator[](std::size_t i) const { return taps_[i]; }
  std::span<const double> taps() const { return taps_; }

 private:
  std::vector<double> taps_;
};

/// T x T banded matrix for one sentence. Stored implicitly by its taps.
class MemoryMatrix {
 public:
  MemoryMatrix(FilterCoeffs taps, std::size_t length)
      : taps_(std::move(taps)), length_(length) {}

  std::size_t length() const { return length_; }
  const FilterCoeffs& taps() const { return taps_; }
  std::size_t band_width() const {
    return std::min(taps_.order(), length_ - 1) + 1;
  }

  double operator()(std::size_t row, std::size_t col) const {
    if (col < row) return 0.0;
    const std::size_t lag = col - row;
    return lag <= taps_.order() ? taps_[lag] : 0.0;
  }

  Matrix dense() const {
    Matrix m(length_, length_);
    const std::size_t band = band_width();
    for (std::size_t r = 0; r < length_; ++r)
      for (std::size_t i = 0; i < band && r + i < length_; ++i) m(r, r + i) = taps_[i];
    return m;
  }

 private:
  FilterCoeffs taps_;
  std::size_t length_;
};

inline MemoryMatrix build_memory_matrix(const FilterCoeffs& a, std::size_t length) {
  if (length == 0) throw std::invalid_argument("build_memory_matrix: length must be >= 1");
  return MemoryMatrix(a, length);
}

/// Block-diagonal memory for a batch of sentences laid side by side.
class BlockDiagMemory {
 public:
  BlockDiagMemory(const FilterCoeffs& a, std::span<const std::size_t> lengths) {
    if (lengths.empty()) throw std::invalid_argument("build_block_diagonal: no sentences");
    blocks_.reserve(lengths.size());
    offsets_.reserve(lengths.size());
    for (std::size_t k = 0; k < lengths.size(); ++k) {
      if (lengths[k] == 0) {
        throw std::invalid_argument("build_block_diagonal: sentence " + std::to_string(k) +
                                    " has zero length");
      }
      offsets_.push_back(total_);
      blocks_.emplace_back(a, lengths[k]);
      total_ += lengths[k];
    }
  }

  std::size_t total_length() const { return total_; }
  std::size_t block_count() const { return blocks_.size(); }
  const MemoryMatrix& block(std::size_t k) const { return blocks_[k]; }
  std::size_t offset(std::size_t k) const { return offsets_[k]; }
  const FilterCoeffs& taps() const { return blocks_.front().taps(); }

  Matrix dense() const {
    Matrix m(total_, total_);
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
      const Matrix b = blocks_[k].dense();
      for (std::size_t r = 0; r < b.rows(); ++r)
        for (std::size_t c = 0; c < b.cols(); ++c) m(offsets_[k] + r, offsets_[k] + c) = b(r, c);
    }
    return m;
  }

 private:
  std::vector<MemoryMatrix> blocks_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

inline BlockDiagMemory build_block_diagonal(const FilterCoeffs& a,
                                            std::span<const std::size_t> lengths) {
  return BlockDiagMemory(a, lengths);
}

namespace detail {

inline Matrix column_slice(const Matrix& h, std::size_t begin, std::size_t count) {
  Matrix out(h.rows(), count);
  for (std::size_t d = 0; d < h.rows(); ++d)
    std::copy_n(h.row(d) + begin, count, out.row(d));
  return out;
}

inline void write_columns(Matrix& dst, std::size_t begin, const Matrix& src) {
  for (std::size_t d = 0; d < src.rows(); ++d)
    std::copy_n(src.row(d), src.cols(), dst.row(d) + begin);
}

/// H·M evaluated along the band only: out[d][t] = sum_i a_i H[d][t-i].
inline Matrix banded_product(const Matrix& h, const FilterCoeffs& a) {
  const std::size_t steps = h.cols();
  Matrix out(h.rows(), steps);
  const std::size_t band = std::min(a.order(), steps - 1) + 1;
  for (std::size_t d = 0; d < h.rows(); ++d) {
    const double* hd = h.row(d);
    double* od = out.row(d);
    for (std::size_t i = 0; i < band; ++i) {
      const double ai = a[i];
      for (std::size_t t = i; t < steps; ++t) od[t] += ai * hd[t - i];
    }
  }
  return out;
}

}  // namespace detail

/// Tapped-delay evaluation, zero history before the first column.
inline Matrix fir_forward_naive(const Matrix& h, const FilterCoeffs& a, Activation act) {
  if (h.rows() == 0 || h.cols() == 0) throw ShapeError("fir_forward_naive: empty input");
  Matrix out(h.rows(), h.cols());
  for (std::size_t t = 0; t < h.cols(); ++t) {
    for (std::size_t d = 0; d < h.rows(); ++d) {
      double acc = 0.0;
      for (std::size_t i = 0; i <= a.order() && i <= t; ++i) acc += a[i] * h(d, t - i);
      out(d, t) = acc;
    }
  }
  return activate(std::move(out), act);
}

/// Pre-activation H·M. Dense product up to `dense_cap` columns, band-wise above.
inline Matrix memory_product(const Matrix& h, const MemoryMatrix& m,
                             std::size_t dense_cap = kDefaultDenseCap) {
  if (h.cols() != m.length()) {
    throw ShapeError("fir_forward_matrix: input has " + std::to_string(h.cols()) +
                     " steps but memory matrix has length " + std::to_string(m.length()));
  }
  if (h.rows() == 0) throw ShapeError("fir_forward_matrix: empty input");
  if (m.length() <= dense_cap) return matmul(h, m.dense());
  return detail::banded_product(h, m.taps());
}

inline Matrix fir_forward_matrix(const Matrix& h, const MemoryMatrix& m, Activation act,
                                 std::size_t dense_cap = kDefaultDenseCap) {
  return activate(memory_product(h, m, dense_cap), act);
}

/// Pre-activation H̄·M̄ for a batch, applied block by block.
inline Matrix memory_product(const Matrix& h, const BlockDiagMemory& m,
                             std::size_t dense_cap = kDefaultDenseCap) {
  if (h.cols() != m.total_length()) {
    throw ShapeError("fir_forward_matrix: input has " + std::to_string(h.cols()) +
                     " steps but batch memory spans " + std::to_string(m.total_length()));
  }
  if (m.block_count() == 1) return memory_product(h, m.block(0), dense_cap);
  Matrix out(h.rows(), h.cols());
  for (std::size_t k = 0; k < m.block_count(); ++k) {
    const auto& blk = m.block(k);
    const Matrix part =
        memory_product(detail::column_slice(h, m.offset(k), blk.length()), blk, dense_cap);
    detail::write_columns(out, m.offset(k), part);
  }
  return out;
}

inline Matrix fir_forward_matrix(const Matrix& h, const BlockDiagMemory& m, Activation act,
                                 std::size_t dense_cap = kDefaultDenseCap) {
  return activate(memory_product(h, m, dense_cap), act);
}

struct FirGradients {
  Matrix d_input;
  std::vector<double> d_taps;
};

/// Backward through Z = H·M. `g_pre` is dL/dZ. The tap gradient is the sum of
/// dL/dM = Hᵀ·G along each superdiagonal, since every entry on diagonal i is a_i.
inline FirGradients fir_backward(const Matrix& h, const Matrix& g_pre, const MemoryMatrix& m,
                                 std::size_t dense_cap = kDefaultDenseCap) {
  detail::require_same_shape(h, g_pre, "fir_backward");
  if (h.cols() != m.length()) {
    throw ShapeError("fir_backward: input has " + std::to_string(h.cols()) +
                     " steps but memory matrix has length " + std::to_string(m.length()));
  }
  const std::size_t steps = m.length();
  const std::size_t band = m.band_width();
  FirGradients out{Matrix(), std::vector<double>(m.taps().size(), 0.0)};

  if (steps <= dense_cap) {
    const Matrix dense = m.dense();
    out.d_input = matmul_bt(g_pre, dense);
    const Matrix d_m = matmul_at(h, g_pre);
    for (std::size_t i = 0; i < band; ++i) {
      double acc = 0.0;
      for (std::size_t t = i; t < steps; ++t) acc += d_m(t - i, t);
      out.d_taps[i] = acc;
    }
    return out;
  }

  out.d_input = Matrix(h.rows(), steps);
  for (std::size_t d = 0; d < h.rows(); ++d) {
    const double* hd = h.row(d);
    const double* gd = g_pre.row(d);
    double* dd = out.d_input.row(d);
    for (std::size_t i = 0; i < band; ++i) {
      const double ai = m.taps()[i];
      double acc = 0.0;
      for (std::size_t t = i; t < steps; ++t) {
        dd[t - i] += ai * gd[t];
        acc += hd[t - i] * gd[t];
      }
      out.d_taps[i] += acc;
    }
  }
  return out;
}

/// Batched backward; tap gradients are summed over blocks in order.
inline FirGradients fir_backward(const Matrix& h, const Matrix& g_pre, const BlockDiagMemory& m,
                                 std::size_t dense_cap = kDefaultDenseCap) {
  detail::require_same_shape(h, g_pre, "fir_backward");
  if (h.cols() != m.total_length()) {
    throw ShapeError("fir_backward: input has " + std::to_string(h.cols()) +
                     " steps but batch memory spans " + std::to_string(m.total_length()));
  }
  if (m.block_count() == 1) return fir_backward(h, g_pre, m.block(0), dense_cap);
  FirGradients out{Matrix(h.rows(), h.cols()), std::vector<double>(m.taps().size(), 0.0)};
  for (std::size_t k = 0; k < m.block_count(); ++k) {
    const auto& blk = m.block(k);
    const std::size_t off = m.offset(k);
    auto part = fir_backward(detail::column_slice(h, off, blk.length()),
                             detail::column_slice(g_pre, off, blk.length()), blk, dense_cap);
    detail::write_columns(out.d_input, off, part.d_input);
    for (std::size_t i = 0; i < out.d_taps.size(); ++i) out.d_taps[i] += part.d_taps[i];
  }
  return out;
}

/// First-order recurrent (IIR) block h~_t = f(h_t + W·h~_{t-1}), h~_{-1} = 0.
/// Comparison baseline only; it is not trainable here.
inline Matrix iir_forward(const Matrix& h, const Matrix& w, Activation act) {
  if (w.rows() != h.rows() || w.cols() != h.rows()) {
    throw ShapeError("iir_forward: recurrent weight " + w.shape() + " does not match state size " +
                     std::to_string(h.rows()));
  }
  if (h.cols() == 0) throw ShapeError("iir_forward: empty input");
  const std::size_t dim = h.rows();
  Matrix out(dim, h.cols());
  std::vector<double> prev(dim, 0.0), cur(dim);
  for (std::size_t t = 0; t < h.cols(); ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      double acc = h(i, t);
      const double* wi = w.row(i);
      for (std::size_t j = 0; j < dim; ++j) acc += wi[j] * prev[j];
      cur[i] = act == Activation::relu ? std::max(acc, 0.0) : acc;
      out(i, t) = cur[i];
    }
    prev.swap(cur);
  }
  return out;
}

}  // namespace fsmn
