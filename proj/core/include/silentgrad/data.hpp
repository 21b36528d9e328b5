// Dataset ingestion: IDX image files, uniform dequantization, a seeded 8x8
// stroke corpus, and synthetic linear-Gaussian data.

#ifndef SILENTGRAD_DATA_HPP
#define SILENTGRAD_DATA_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "silentgrad/ndcore.hpp"

namespace silentgrad {

// Quantized datasets hold pixels x_int / 256 in [0, 255/256] and go through
// uniform dequantization plus the log(256) correction; continuous datasets
// skip both.
enum class PixelSpace { QuantizedU8, Continuous };

struct Dataset {
  std::vector<DenseVector> items;
  std::size_t width = 0;
  std::size_t height = 0;
  PixelSpace space = PixelSpace::Continuous;
  std::string source;

  std::size_t size() const { return items.size(); }
  std::size_t dim() const { return items.empty() ? 0 : items.front().size(); }
};

struct IdxError : std::runtime_error {
  enum class Code { Io, BadMagic, Truncated, DimOverflow };
  Code code;
  IdxError(Code c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

// IDX image file (magic 0x00000803, big-endian dims); pixels u8 -> u8/256.
Dataset load_idx_images(const std::string& path);

// IDX label file (magic 0x00000801); parsed for completeness, unused by training.
std::vector<std::uint8_t> load_idx_labels(const std::string& path);

// Writes a QuantizedU8 dataset back to IDX (pixels u8 = round(x * 256)).
void save_idx_images(const std::string& path, const Dataset& data);

// y = x + u with u ~ U[0, 1/256), elementwise; outputs stay in [0, 1).
DenseVector dequantize(const DenseVector& item, RngStream& rng);
DenseVector dequantize_with(const DenseVector& item, const DenseVector& noise);

// Seeded 8x8 stroke corpus (digit-like blobs), quantized to u8.
Dataset make_blobs8x8(std::size_t n, RngStream& rng);

struct SyntheticSpec {
  std::size_t latent_dim = 8;
  std::size_t data_dim = 16;
  std::uint64_t matrix_seed = 0;
  double noise_scale = 0.1;
};

struct SyntheticData {
  Dataset data;
  std::vector<DenseVector> latents;  // the ground-truth z* per item
  DenseMatrix mixing;
};

// x = A z* + eps with z* ~ N(0, I), eps ~ N(0, noise^2 I); A seeded.
SyntheticData make_synthetic(const SyntheticSpec& spec, std::size_t n, RngStream& rng);
SyntheticData synthetic_from_matrix(const DenseMatrix& mixing, double noise_scale,
                                    std::size_t n, RngStream& rng);

}  // namespace silentgrad

#endif  // SILENTGRAD_DATA_HPP
