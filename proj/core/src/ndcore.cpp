#include "silentgrad/ndcore.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace silentgrad {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseVector matvec(const DenseMatrix& w, const DenseVector& v) {
  if (w.cols() != v.size()) {
    throw std::invalid_argument("matvec: matrix has " + std::to_string(w.cols()) +
                                " cols but vector has " + std::to_string(v.size()) +
                                " entries");
  }
  DenseVector out(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) acc += w(r, c) * v[c];
    out[r] = acc;
  }
  return out;
}

DenseVector matvec_transpose(const DenseMatrix& w, const DenseVector& v) {
  if (w.rows() != v.size()) {
    throw std::invalid_argument("matvec_transpose: matrix has " +
                                std::to_string(w.rows()) + " rows but vector has " +
                                std::to_string(v.size()) + " entries");
  }
  DenseVector out(w.cols(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double vr = v[r];
    for (std::size_t c = 0; c < w.cols(); ++c) out[c] += w(r, c) * vr;
  }
  return out;
}

double dot(const DenseVector& a, const DenseVector& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("dot: length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline std::uint32_t mulhi32(std::uint32_t a, std::uint32_t b) {
  return static_cast<std::uint32_t>((static_cast<std::uint64_t>(a) * b) >> 32);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

namespace detail {

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    const std::uint32_t lo0 = kPhiloxM0 * counter[0];
    const std::uint32_t hi0 = mulhi32(kPhiloxM0, counter[0]);
    const std::uint32_t lo1 = kPhiloxM1 * counter[2];
    const std::uint32_t hi1 = mulhi32(kPhiloxM1, counter[2]);
    counter = {hi1 ^ counter[1] ^ key[0], lo1, hi0 ^ counter[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return counter;
}

}  // namespace detail

RngStream::RngStream(std::uint64_t seed) : RngStream(splitmix64(seed), 0) {}

RngStream::RngStream(std::uint64_t material, int)
    : material_(material),
      key_{static_cast<std::uint32_t>(material), static_cast<std::uint32_t>(material >> 32)},
      counter_{0, 0, 0, 0} {}

RngStream RngStream::split(std::uint64_t child_id) const {
  // Distinct (parent material, child id) pairs map to distinct Philox keys.
  return RngStream(splitmix64(material_ ^ splitmix64(child_id + 1)), 0);
}

void RngStream::refill() {
  block_ = detail::philox4x32_10(counter_, key_);
  block_pos_ = 0;
  // 128-bit counter increment.
  for (int i = 0; i < 4; ++i) {
    if (++counter_[i] != 0) break;
  }
}

std::uint32_t RngStream::next_u32() {
  if (block_pos_ >= 4) refill();
  return block_[block_pos_++];
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t lo = next_u32();
  const std::uint64_t hi = next_u32();
  return (hi << 32) | lo;
}

double RngStream::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_gauss() {
  if (has_cached_gauss_) {
    has_cached_gauss_ = false;
    return cached_gauss_;
  }
  // u1 in (0, 1] keeps the log finite.
  const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  const double u2 = next_uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_gauss_ = radius * std::sin(angle);
  has_cached_gauss_ = true;
  return radius * std::cos(angle);
}

DenseVector gauss_sample(RngStream& rng, std::size_t n) {
  DenseVector out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = rng.next_gauss();
  return out;
}

void shuffle_indices(std::vector<std::size_t>& idx, RngStream& rng) {
  if (idx.size() < 2) return;
  for (std::size_t i = idx.size() - 1; i > 0; --i) {
    // Unbiased bounded draw by rejection.
    const std::uint64_t bound = i + 1;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t r;
    do {
      r = rng.next_u64();
    } while (r >= limit);
    std::swap(idx[i], idx[r % bound]);
  }
}

}  // namespace silentgrad
