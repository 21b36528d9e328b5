// Minimal dense linear algebra and a counter-based, splittable random stream.
//
// Everything here is 64-bit IEEE double with a fixed evaluation order, so any
// computation built on top is bit-reproducible for a fixed seed.

#ifndef SILENTGRAD_NDCORE_HPP
#define SILENTGRAD_NDCORE_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace silentgrad {

using DenseVector = std::vector<double>;

// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  static DenseMatrix identity(std::size_t n);

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const DenseMatrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// y = W v; throws std::invalid_argument on dimension mismatch.
DenseVector matvec(const DenseMatrix& w, const DenseVector& v);

// y = W^T v.
DenseVector matvec_transpose(const DenseMatrix& w, const DenseVector& v);

double dot(const DenseVector& a, const DenseVector& b);

// Counter-based PRNG (Philox4x32-10). Streams derived via split() are
// pairwise independent and reproducible: split is a pure function of the
// parent stream's identity and the child id, not of how much the parent
// has already consumed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  RngStream split(std::uint64_t child_id) const;

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // Uniform on [0, 1), 53-bit resolution.
  double next_uniform();

  // Standard normal via Box-Muller (second variate cached).
  double next_gauss();

 private:
  RngStream(std::uint64_t material, int /*tag*/);

  void refill();

  std::uint64_t material_;          // stream identity, drives key and split
  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  int block_pos_ = 4;               // 4 == block exhausted
  bool has_cached_gauss_ = false;
  double cached_gauss_ = 0.0;
};

// n i.i.d. standard normal draws from the stream.
DenseVector gauss_sample(RngStream& rng, std::size_t n);

// In-place Fisher-Yates shuffle driven by the stream.
void shuffle_indices(std::vector<std::size_t>& idx, RngStream& rng);

namespace detail {
// Raw Philox4x32-10 block function, exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);
}  // namespace detail

}  // namespace silentgrad

#endif  // SILENTGRAD_NDCORE_HPP
