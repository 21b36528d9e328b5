#include "silentgrad/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace silentgrad {

Mlp Mlp::create(const std::vector<std::size_t>& dims, HeadKind head, RngStream& rng) {
  if (dims.size() < 2) {
    throw std::invalid_argument("Mlp::create: need at least input and output dims");
  }
  Mlp net;
  net.head = head;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    AffineLayer layer;
    layer.w = DenseMatrix(dims[l + 1], dims[l]);
    layer.b = DenseVector(dims[l + 1], 0.0);
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[l]));
    for (double& w : layer.w.data()) w = limit * (2.0 * rng.next_uniform() - 1.0);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (const AffineLayer& l : layers) n += l.w.size() + l.b.size();
  return n;
}

DenseVector mlp_forward(const Mlp& net, const DenseVector& x, MlpTape* tape) {
  if (x.size() != net.input_dim()) {
    throw std::invalid_argument("mlp_forward: input has " + std::to_string(x.size()) +
                                " entries, expected " + std::to_string(net.input_dim()));
  }
  if (tape) {
    tape->input = x;
    tape->hidden.clear();
  }
  DenseVector h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    DenseVector y = matvec(net.layers[l].w, h);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += net.layers[l].b[i];
    if (l + 1 < net.layers.size()) {
      for (double& v : y) v = v > 0.0 ? v : 0.0;  // ReLU
      if (tape) tape->hidden.push_back(y);
    }
    h = std::move(y);
  }
  return h;
}

MlpGrads MlpGrads::zeros_like(const Mlp& net) {
  MlpGrads g;
  for (const AffineLayer& l : net.layers) {
    g.layers.push_back({DenseMatrix(l.w.rows(), l.w.cols()), DenseVector(l.b.size(), 0.0)});
  }
  g.wrt_input.assign(net.input_dim(), 0.0);
  return g;
}

void MlpGrads::accumulate(const MlpGrads& other) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t i = 0; i < layers[l].w.size(); ++i) {
      layers[l].w.data()[i] += other.layers[l].w.data()[i];
    }
    for (std::size_t i = 0; i < layers[l].b.size(); ++i) {
      layers[l].b[i] += other.layers[l].b[i];
    }
  }
  for (std::size_t i = 0; i < wrt_input.size(); ++i) wrt_input[i] += other.wrt_input[i];
}

void MlpGrads::scale(double s) {
  for (AffineLayer& l : layers) {
    for (double& v : l.w.data()) v *= s;
    for (double& v : l.b) v *= s;
  }
  for (double& v : wrt_input) v *= s;
}

MlpGrads mlp_backward(const Mlp& net, const MlpTape& tape, const DenseVector& upstream) {
  if (upstream.size() != net.output_dim()) {
    throw std::invalid_argument("mlp_backward: upstream gradient length mismatch");
  }
  MlpGrads grads = MlpGrads::zeros_like(net);
  DenseVector delta = upstream;
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const DenseVector& in = l == 0 ? tape.input : tape.hidden[l - 1];
    AffineLayer& g = grads.layers[l];
    for (std::size_t r = 0; r < g.w.rows(); ++r) {
      const double dr = delta[r];
      g.b[r] = dr;
      for (std::size_t c = 0; c < g.w.cols(); ++c) g.w(r, c) = dr * in[c];
    }
    DenseVector next = matvec_transpose(net.layers[l].w, delta);
    if (l > 0) {
      // ReLU mask from the stored activation (>0 iff the unit fired).
      for (std::size_t i = 0; i < next.size(); ++i) {
        if (tape.hidden[l - 1][i] <= 0.0) next[i] = 0.0;
      }
    }
    delta = std::move(next);
  }
  grads.wrt_input = std::move(delta);
  return grads;
}

DenseVector flatten_params(const Mlp& net) {
  DenseVector flat;
  flat.reserve(net.param_count());
  for (const AffineLayer& l : net.layers) {
    flat.insert(flat.end(), l.w.data().begin(), l.w.data().end());
    flat.insert(flat.end(), l.b.begin(), l.b.end());
  }
  return flat;
}

void unflatten_params(Mlp& net, const DenseVector& flat) {
  if (flat.size() != net.param_count()) {
    throw std::invalid_argument("unflatten_params: size mismatch");
  }
  std::size_t pos = 0;
  for (AffineLayer& l : net.layers) {
    std::copy(flat.begin() + pos, flat.begin() + pos + l.w.size(), l.w.data().begin());
    pos += l.w.size();
    std::copy(flat.begin() + pos, flat.begin() + pos + l.b.size(), l.b.begin());
    pos += l.b.size();
  }
}

DenseVector flatten_grads(const MlpGrads& grads) {
  DenseVector flat;
  for (const AffineLayer& l : grads.layers) {
    flat.insert(flat.end(), l.w.data().begin(), l.w.data().end());
    flat.insert(flat.end(), l.b.begin(), l.b.end());
  }
  return flat;
}

AdamW::AdamW(std::size_t n_params, AdamWConfig cfg)
    : cfg_(cfg), m_(n_params, 0.0), v_(n_params, 0.0) {}

void AdamW::step(DenseVector& params, const DenseVector& grads) {
  if (params.size() != grads.size() || params.size() != m_.size()) {
    throw std::invalid_argument("AdamW::step: size mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    const double m_hat = m_[i] / bc1;
    const double v_hat = v_[i] / bc2;
    params[i] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) +
                            cfg_.weight_decay * params[i]);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'G', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ofstream& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.write(buf, 4);
}

std::uint32_t read_u32(std::ifstream& in) {
  char buf[4];
  in.read(buf, 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v;
  std::memcpy(&v, buf, 4);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const TensorMap& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(tensor.rows()));
    write_u32(out, static_cast<std::uint32_t>(tensor.cols()));
    out.write(reinterpret_cast<const char*>(tensor.data().data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

TensorMap load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const std::uint32_t count = read_u32(in);
  TensorMap tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rows = read_u32(in);
    const std::uint32_t cols = read_u32(in);
    DenseMatrix tensor(rows, cols);
    in.read(reinterpret_cast<char*>(tensor.data().data()),
            static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor data in " + path);
    tensors.emplace(std::move(name), std::move(tensor));
  }
  return tensors;
}

void pack_mlp(TensorMap& out, const std::string& prefix, const Mlp& net) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    out[base + ".w"] = net.layers[l].w;
    DenseMatrix b(net.layers[l].b.size(), 1);
    b.data() = net.layers[l].b;
    out[base + ".b"] = std::move(b);
  }
}

void unpack_mlp(const TensorMap& in, const std::string& prefix, Mlp& net) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    const auto wi = in.find(base + ".w");
    const auto bi = in.find(base + ".b");
    if (wi == in.end() || bi == in.end()) {
      throw std::runtime_error("checkpoint: missing tensors for " + base);
    }
    if (!wi->second.same_shape(net.layers[l].w) ||
        bi->second.size() != net.layers[l].b.size()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + base);
    }
    net.layers[l].w = wi->second;
    net.layers[l].b = bi->second.data();
  }
}

}  // namespace silentgrad
