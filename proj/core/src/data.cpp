#include "silentgrad/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace silentgrad {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803u;
constexpr std::uint32_t kLabelMagic = 0x00000801u;

std::uint32_t read_be_u32(std::ifstream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw IdxError(IdxError::Code::Truncated, "idx: truncated header");
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_be_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char buf[4] = {
      static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
      static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace

Dataset load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Code::Io, "idx: cannot open " + path);
  const std::uint32_t magic = read_be_u32(in);
  if (magic != kImageMagic) {
    throw IdxError(IdxError::Code::BadMagic,
                   "idx: expected image magic 0x00000803 in " + path);
  }
  const std::uint32_t count = read_be_u32(in);
  const std::uint32_t rows = read_be_u32(in);
  const std::uint32_t cols = read_be_u32(in);
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096 ||
      std::uint64_t(count) * rows * cols > (std::uint64_t(1) << 32)) {
    throw IdxError(IdxError::Code::DimOverflow, "idx: implausible dimensions in " + path);
  }
  const std::size_t pixels = std::size_t(rows) * cols;
  Dataset data;
  data.width = cols;
  data.height = rows;
  data.space = PixelSpace::QuantizedU8;
  data.source = path;
  std::vector<unsigned char> raw(pixels);
  for (std::uint32_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels));
    if (!in) throw IdxError(IdxError::Code::Truncated, "idx: truncated pixel data");
    DenseVector item(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      item[p] = static_cast<double>(raw[p]) / 256.0;
    }
    data.items.push_back(std::move(item));
  }
  return data;
}

std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Code::Io, "idx: cannot open " + path);
  const std::uint32_t magic = read_be_u32(in);
  if (magic != kLabelMagic) {
    throw IdxError(IdxError::Code::BadMagic,
                   "idx: expected label magic 0x00000801 in " + path);
  }
  const std::uint32_t count = read_be_u32(in);
  std::vector<std::uint8_t> labels(count);
  in.read(reinterpret_cast<char*>(labels.data()), count);
  if (!in) throw IdxError(IdxError::Code::Truncated, "idx: truncated label data");
  return labels;
}

void save_idx_images(const std::string& path, const Dataset& data) {
  if (data.space != PixelSpace::QuantizedU8) {
    throw std::invalid_argument("save_idx_images: dataset is not quantized");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IdxError(IdxError::Code::Io, "idx: cannot open " + path + " for writing");
  write_be_u32(out, kImageMagic);
  write_be_u32(out, static_cast<std::uint32_t>(data.size()));
  write_be_u32(out, static_cast<std::uint32_t>(data.height));
  write_be_u32(out, static_cast<std::uint32_t>(data.width));
  std::vector<unsigned char> raw(data.dim());
  for (const DenseVector& item : data.items) {
    for (std::size_t p = 0; p < item.size(); ++p) {
      raw[p] = static_cast<unsigned char>(std::lround(item[p] * 256.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size()));
  }
  if (!out) throw IdxError(IdxError::Code::Io, "idx: write failed for " + path);
}

DenseVector dequantize_with(const DenseVector& item, const DenseVector& noise) {
  if (item.size() != noise.size()) {
    throw std::invalid_argument("dequantize: noise length mismatch");
  }
  DenseVector y(item.size());
  for (std::size_t i = 0; i < item.size(); ++i) y[i] = item[i] + noise[i];
  return y;
}

DenseVector dequantize(const DenseVector& item, RngStream& rng) {
  DenseVector noise(item.size());
  for (double& u : noise) u = rng.next_uniform() / 256.0;
  return dequantize_with(item, noise);
}

Dataset make_blobs8x8(std::size_t n, RngStream& rng) {
  constexpr std::size_t kSide = 8;
  Dataset data;
  data.width = kSide;
  data.height = kSide;
  data.space = PixelSpace::QuantizedU8;
  data.source = "blobs8x8";
  for (std::size_t item = 0; item < n; ++item) {
    std::vector<double> canvas(kSide * kSide, 0.0);
    const int strokes = 2 + static_cast<int>(rng.next_uniform() * 3.0);
    for (int s = 0; s < strokes; ++s) {
      const double x0 = rng.next_uniform() * (kSide - 1);
      const double y0 = rng.next_uniform() * (kSide - 1);
      const double x1 = rng.next_uniform() * (kSide - 1);
      const double y1 = rng.next_uniform() * (kSide - 1);
      const double thickness = 0.6 + 0.8 * rng.next_uniform();
      const double brightness = 0.5 + 0.5 * rng.next_uniform();
      // Distance-to-segment falloff rendering.
      for (std::size_t py = 0; py < kSide; ++py) {
        for (std::size_t px = 0; px < kSide; ++px) {
          const double dx = x1 - x0, dy = y1 - y0;
          const double len2 = dx * dx + dy * dy;
          double t = len2 > 0.0 ? ((px - x0) * dx + (py - y0) * dy) / len2 : 0.0;
          t = std::clamp(t, 0.0, 1.0);
          const double cx = x0 + t * dx, cy = y0 + t * dy;
          const double dist2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
          const double v = brightness * std::exp(-dist2 / (2.0 * thickness * thickness));
          canvas[py * kSide + px] = std::max(canvas[py * kSide + px], v);
        }
      }
    }
    DenseVector item_vec(kSide * kSide);
    for (std::size_t p = 0; p < canvas.size(); ++p) {
      const auto u8 = static_cast<unsigned>(std::clamp(canvas[p], 0.0, 1.0) * 255.0);
      item_vec[p] = static_cast<double>(u8) / 256.0;
    }
    data.items.push_back(std::move(item_vec));
  }
  return data;
}

SyntheticData synthetic_from_matrix(const DenseMatrix& mixing, double noise_scale,
                                    std::size_t n, RngStream& rng) {
  if (noise_scale < 0.0) {
    throw std::invalid_argument("synthetic_from_matrix: negative noise scale");
  }
  SyntheticData out;
  out.mixing = mixing;
  out.data.space = PixelSpace::Continuous;
  out.data.source = "synthetic";
  const std::size_t d = mixing.cols();
  const std::size_t k = mixing.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const DenseVector z = gauss_sample(rng, d);
    DenseVector x = matvec(mixing, z);
    if (noise_scale > 0.0) {
      for (std::size_t j = 0; j < k; ++j) x[j] += noise_scale * rng.next_gauss();
    }
    out.latents.push_back(z);
    out.data.items.push_back(std::move(x));
  }
  return out;
}

SyntheticData make_synthetic(const SyntheticSpec& spec, std::size_t n, RngStream& rng) {
  if (spec.latent_dim > spec.data_dim) {
    throw std::invalid_argument("make_synthetic: latent_dim exceeds data_dim");
  }
  RngStream matrix_rng(spec.matrix_seed);
  DenseMatrix mixing(spec.data_dim, spec.latent_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
  for (double& w : mixing.data()) w = scale * matrix_rng.next_gauss();
  return synthetic_from_matrix(mixing, spec.noise_scale, n, rng);
}

}  // namespace silentgrad
