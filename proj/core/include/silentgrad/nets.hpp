// Small fully-connected networks with exact hand-rolled backpropagation,
// the AdamW optimizer, and a binary named-tensor checkpoint format.

#ifndef SILENTGRAD_NETS_HPP
#define SILENTGRAD_NETS_HPP

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "silentgrad/ndcore.hpp"

namespace silentgrad {

enum class HeadKind { GaussianStats, BernoulliLogits, DecoderMean };

struct AffineLayer {
  DenseMatrix w;  // out x in
  DenseVector b;
};

// Affine layers with ReLU between them; the final layer is a linear head.
struct Mlp {
  std::vector<AffineLayer> layers;
  HeadKind head = HeadKind::DecoderMean;

  // dims = {input, hidden..., output}; He-style uniform fan-in init, seeded.
  static Mlp create(const std::vector<std::size_t>& dims, HeadKind head, RngStream& rng);

  std::size_t input_dim() const { return layers.front().w.cols(); }
  std::size_t output_dim() const { return layers.back().w.rows(); }
  std::size_t param_count() const;
};

struct MlpTape {
  DenseVector input;
  std::vector<DenseVector> hidden;  // post-ReLU activations per hidden layer
};

// Output plus the activation tape needed by mlp_backward.
DenseVector mlp_forward(const Mlp& net, const DenseVector& x, MlpTape* tape = nullptr);

struct MlpGrads {
  std::vector<AffineLayer> layers;  // same shapes as the net
  DenseVector wrt_input;

  static MlpGrads zeros_like(const Mlp& net);
  void accumulate(const MlpGrads& other);
  void scale(double s);
};

// Exact gradients of <upstream, output> with respect to all parameters and
// the input.
MlpGrads mlp_backward(const Mlp& net, const MlpTape& tape, const DenseVector& upstream);

// Flat parameter/gradient views (row-major weights then bias, layer order).
DenseVector flatten_params(const Mlp& net);
void unflatten_params(Mlp& net, const DenseVector& flat);
DenseVector flatten_grads(const MlpGrads& grads);

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam over a flat parameter vector.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::size_t n_params, AdamWConfig cfg);

  void step(DenseVector& params, const DenseVector& grads);

  std::size_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  DenseVector m_;
  DenseVector v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary container of named row-major f64 tensors.
// Round-trips are bit-exact. Layout (little-endian):
//   magic "SGCKPT01" | u32 count | per tensor: u32 name_len, name bytes,
//   u32 rows, u32 cols, rows*cols f64.
// Vectors are stored as rows x 1.
// ---------------------------------------------------------------------------

using TensorMap = std::map<std::string, DenseMatrix>;

void save_checkpoint(const std::string& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::string& path);

// Mlp <-> tensor map under a name prefix ("prefix.l<i>.w" / "prefix.l<i>.b").
void pack_mlp(TensorMap& out, const std::string& prefix, const Mlp& net);
void unpack_mlp(const TensorMap& in, const std::string& prefix, Mlp& net);

}  // namespace silentgrad

#endif  // SILENTGRAD_NETS_HPP
