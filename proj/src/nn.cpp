#include "plaindet/nn.hpp"

#include <cmath>

#include "plaindet/errors.hpp"

namespace plaindet {

Matrix& ParamStore::add(const std::string& name, Matrix init) {
  if (values_.count(name)) throw Error::config("duplicate parameter name: " + name);
  order_.push_back(name);
  momentum_[name] = Matrix(init.rows(), init.cols());
  second_moment_[name] = Matrix(init.rows(), init.cols());
  return values_[name] = std::move(init);
}

Matrix& ParamStore::get(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw Error::config("unknown parameter: " + name);
  return it->second;
}

const Matrix& ParamStore::get(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw Error::config("unknown parameter: " + name);
  return it->second;
}

Matrix& ParamStore::momentum(const std::string& name) {
  auto it = momentum_.find(name);
  if (it == momentum_.end()) throw Error::config("unknown parameter: " + name);
  return it->second;
}

Matrix& ParamStore::second_moment(const std::string& name) {
  auto it = second_moment_.find(name);
  if (it == second_moment_.end()) throw Error::config("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& name : order_) n += values_.at(name).size();
  return n;
}

void ParamStore::quantize_f32() {
  for (auto& [name, m] : values_)
    for (auto& x : m.data()) x = round_f32(x);
  for (auto& [name, m] : momentum_)
    for (auto& x : m.data()) x = round_f32(x);
  for (auto& [name, m] : second_moment_)
    for (auto& x : m.data()) x = round_f32(x);
}

Var TapeParams::operator[](const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = tape_->input(store_->get(name), trainable_);
  bound_[name] = v;
  return v;
}

std::map<std::string, Matrix> TapeParams::gradients() const {
  std::map<std::string, Matrix> out;
  for (const auto& [name, var] : bound_) out[name] = tape_->grad(var);
  return out;
}

Var linear(Tape& t, TapeParams& p, const std::string& prefix, Var x) {
  return t.add_rowvec(t.matmul(x, p[prefix + ".w"]), p[prefix + ".b"]);
}

Var mlp2(Tape& t, TapeParams& p, const std::string& prefix, Var x) {
  Var h = t.tanh(linear(t, p, prefix + ".l1", x));
  return linear(t, p, prefix + ".l2", h);
}

Var layer_norm(Tape& t, TapeParams& p, const std::string& prefix, Var x) {
  return t.layer_norm_rows(x, p[prefix + ".g"], p[prefix + ".o"]);
}

Var attention(Tape& t, TapeParams& p, const std::string& prefix, Var queries, Var memory) {
  const int d = t.cols(queries);
  if (t.cols(memory) != d) throw Error::shape("attention: query/memory width mismatch");
  Var q = linear(t, p, prefix + ".q", queries);
  Var k = linear(t, p, prefix + ".k", memory);
  Var v = linear(t, p, prefix + ".v", memory);
  Var scores = t.scale(t.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
  Var attn = t.row_softmax(scores);
  return linear(t, p, prefix + ".out", t.matmul(attn, v));
}

Var encoder_block(Tape& t, TapeParams& p, const std::string& prefix, Var x) {
  Var n1 = layer_norm(t, p, prefix + ".ln1", x);
  Var h = t.add(x, attention(t, p, prefix + ".attn", n1, n1));
  Var n2 = layer_norm(t, p, prefix + ".ln2", h);
  return t.add(h, mlp2(t, p, prefix + ".ffn", n2));
}

Var decoder_block(Tape& t, TapeParams& p, const std::string& prefix, Var q, Var memory) {
  Var n1 = layer_norm(t, p, prefix + ".ln1", q);
  Var a = t.add(q, attention(t, p, prefix + ".self", n1, n1));
  Var n2 = layer_norm(t, p, prefix + ".ln2", a);
  Var b = t.add(a, attention(t, p, prefix + ".cross", n2, memory));
  Var n3 = layer_norm(t, p, prefix + ".ln3", b);
  return t.add(b, mlp2(t, p, prefix + ".ffn", n3));
}

void init_linear(ParamStore& s, Rng& rng, const std::string& prefix, int in, int out) {
  double bound = std::sqrt(6.0 / (in + out));
  s.add(prefix + ".w", Matrix::uniform(in, out, rng, -bound, bound));
  s.add(prefix + ".b", Matrix(1, out));
}

void init_mlp2(ParamStore& s, Rng& rng, const std::string& prefix, int in, int hidden, int out) {
  init_linear(s, rng, prefix + ".l1", in, hidden);
  init_linear(s, rng, prefix + ".l2", hidden, out);
}

void init_layer_norm(ParamStore& s, const std::string& prefix, int dim) {
  s.add(prefix + ".g", Matrix::full(1, dim, 1.0));
  s.add(prefix + ".o", Matrix(1, dim));
}

void init_attention(ParamStore& s, Rng& rng, const std::string& prefix, int dim) {
  init_linear(s, rng, prefix + ".q", dim, dim);
  init_linear(s, rng, prefix + ".k", dim, dim);
  init_linear(s, rng, prefix + ".v", dim, dim);
  init_linear(s, rng, prefix + ".out", dim, dim);
}

void init_encoder_block(ParamStore& s, Rng& rng, const std::string& prefix, int dim) {
  init_layer_norm(s, prefix + ".ln1", dim);
  init_attention(s, rng, prefix + ".attn", dim);
  init_layer_norm(s, prefix + ".ln2", dim);
  init_mlp2(s, rng, prefix + ".ffn", dim, dim, dim);
}

void init_decoder_block(ParamStore& s, Rng& rng, const std::string& prefix, int dim) {
  init_layer_norm(s, prefix + ".ln1", dim);
  init_attention(s, rng, prefix + ".self", dim);
  init_layer_norm(s, prefix + ".ln2", dim);
  init_attention(s, rng, prefix + ".cross", dim);
  init_layer_norm(s, prefix + ".ln3", dim);
  init_mlp2(s, rng, prefix + ".ffn", dim, dim, dim);
}

Matrix positional_encoding_2d(int grid_h, int grid_w, int dim) {
  if (dim % 4 != 0) throw Error::config("positional encoding needs dim divisible by 4");
  const int quarter = dim / 4;
  Matrix pe(grid_h * grid_w, dim);
  for (int gy = 0; gy < grid_h; ++gy) {
    for (int gx = 0; gx < grid_w; ++gx) {
      double* row = pe.row(gy * grid_w + gx);
      for (int i = 0; i < quarter; ++i) {
        double freq = std::pow(10000.0, -2.0 * i / (dim / 2.0));
        row[2 * i] = std::sin(gx * freq);
        row[2 * i + 1] = std::cos(gx * freq);
        row[dim / 2 + 2 * i] = std::sin(gy * freq);
        row[dim / 2 + 2 * i + 1] = std::cos(gy * freq);
      }
    }
  }
  return pe;
}

double global_grad_norm(const std::map<std::string, Matrix>& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

void sgd_step(ParamStore& store, const std::map<std::string, Matrix>& grads, double lr,
              double momentum, double clip_norm) {
  double norm = global_grad_norm(grads);
  double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  for (const auto& [name, g] : grads) {
    Matrix& p = store.get(name);
    Matrix& v = store.momentum(name);
    if (!p.same_shape(g)) throw Error::shape("sgd_step: gradient shape mismatch for " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + scale * g[i];
      p[i] -= lr * v[i];
    }
  }
  store.quantize_f32();
}

void adam_step(ParamStore& store, const std::map<std::string, Matrix>& grads, double lr,
               double beta1, double beta2, double eps, long t, double clip_norm) {
  double norm = global_grad_norm(grads);
  double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (const auto& [name, g] : grads) {
    Matrix& p = store.get(name);
    Matrix& m = store.momentum(name);
    Matrix& v = store.second_moment(name);
    if (!p.same_shape(g)) throw Error::shape("adam_step: gradient shape mismatch for " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      double gi = scale * g[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  store.quantize_f32();
}

}  // namespace plaindet
