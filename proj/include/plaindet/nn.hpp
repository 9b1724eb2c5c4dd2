#pragma once

#include <map>
#include <string>
#include <vector>

#include "plaindet/matrix.hpp"
#include "plaindet/rng.hpp"
#include "plaindet/tape.hpp"

namespace plaindet {

// Named parameter tensors with two optimizer slot buffers (momentum / first
// moment, and second moment). Insertion order is preserved so checkpoints
// and gradient walks are reproducible.
class ParamStore {
 public:
  Matrix& add(const std::string& name, Matrix init);
  Matrix& get(const std::string& name);
  const Matrix& get(const std::string& name) const;
  Matrix& momentum(const std::string& name);
  Matrix& second_moment(const std::string& name);
  bool has(const std::string& name) const { return values_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }
  std::size_t total_elements() const;

  // Rounds every parameter and optimizer-slot entry through float32 so that
  // any state reachable during training is exactly representable in the
  // checkpoint blob.
  void quantize_f32();

 private:
  std::vector<std::string> order_;
  std::map<std::string, Matrix> values_;
  std::map<std::string, Matrix> momentum_;
  std::map<std::string, Matrix> second_moment_;
};

// Binds store entries to tape leaves on demand; one binding per tape.
class TapeParams {
 public:
  TapeParams(Tape& tape, ParamStore& store, bool trainable = true)
      : tape_(&tape), store_(&store), trainable_(trainable) {}

  Var operator[](const std::string& name);

  // Collects d(loss)/d(param) for every bound parameter after backward().
  std::map<std::string, Matrix> gradients() const;

  ParamStore& store() { return *store_; }

 private:
  Tape* tape_;
  ParamStore* store_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

// Graph builders. Parameter names are "<prefix>.w", "<prefix>.b" for linear
// layers and "<prefix>.g"/"<prefix>.o" for layer norm gain/offset.
Var linear(Tape& t, TapeParams& p, const std::string& prefix, Var x);
Var mlp2(Tape& t, TapeParams& p, const std::string& prefix, Var x);
Var layer_norm(Tape& t, TapeParams& p, const std::string& prefix, Var x);
Var attention(Tape& t, TapeParams& p, const std::string& prefix, Var queries, Var memory);
Var encoder_block(Tape& t, TapeParams& p, const std::string& prefix, Var x);
Var decoder_block(Tape& t, TapeParams& p, const std::string& prefix, Var q, Var memory);

// Parameter initializers (Xavier-uniform linear layers, unit layer norm).
void init_linear(ParamStore& s, Rng& rng, const std::string& prefix, int in, int out);
void init_mlp2(ParamStore& s, Rng& rng, const std::string& prefix, int in, int hidden, int out);
void init_layer_norm(ParamStore& s, const std::string& prefix, int dim);
void init_attention(ParamStore& s, Rng& rng, const std::string& prefix, int dim);
void init_encoder_block(ParamStore& s, Rng& rng, const std::string& prefix, int dim);
void init_decoder_block(ParamStore& s, Rng& rng, const std::string& prefix, int dim);

// Fixed 2D sine-cosine positional encoding for an h x w token grid.
Matrix positional_encoding_2d(int grid_h, int grid_w, int dim);

// Optimizers, both with global-norm gradient clipping. Parameters and slot
// buffers are float32-quantized after each update.
double global_grad_norm(const std::map<std::string, Matrix>& grads);
void sgd_step(ParamStore& store, const std::map<std::string, Matrix>& grads, double lr,
              double momentum, double clip_norm);
void adam_step(ParamStore& store, const std::map<std::string, Matrix>& grads, double lr,
               double beta1, double beta2, double eps, long t, double clip_norm);

inline double round_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace plaindet
