// Copyright (c) 2026, The mvp-tok Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Small ALBERT-style encoder with hand-written backward passes.
//
// One transformer block is applied num_layers times (cross-layer sharing).
// Every attached vocabulary ("slot") owns a V x E token table, an E -> H
// projection and an MLM head whose decoder reads the token table directly.
// Position, segment-type and embedding layer-norm parameters are shared.
//
// All forward functions optionally fill a cache; the matching *_backward
// function accumulates parameter gradients into a ParamStore of the same
// layout and returns the gradient with respect to its input.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "mvptok/common.hpp"
#include "mvptok/mask.hpp"

namespace mvptok {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr std::string_view kFineSlot = "fine";
inline constexpr std::string_view kCoarseSlot = "coarse";

struct EncoderConfig {
  int num_layers = 3;
  int embed_dim = 128;
  int hidden_dim = 256;
  int num_heads = 4;
  int ffn_dim = 1024;
  int max_positions = 512;
  int type_vocab_size = 2;
  double layer_norm_eps = 1e-12;
  double init_std = 0.02;
  std::map<std::string, int> vocab_sizes;  // slot -> V

  int head_dim() const { return hidden_dim / num_heads; }

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v <= 0) throw ValidationError(std::string("encoder config: ") + what + " must be positive");
    };
    positive(num_layers, "num_layers");
    positive(embed_dim, "embed_dim");
    positive(hidden_dim, "hidden_dim");
    positive(num_heads, "num_heads");
    positive(ffn_dim, "ffn_dim");
    positive(max_positions, "max_positions");
    positive(type_vocab_size, "type_vocab_size");
    if (hidden_dim % num_heads != 0) {
      throw ValidationError("encoder config: hidden_dim " + std::to_string(hidden_dim) +
                            " is not divisible by num_heads " + std::to_string(num_heads));
    }
    if (!(init_std > 0.0) || !(layer_norm_eps > 0.0)) {
      throw ValidationError("encoder config: init_std and layer_norm_eps must be positive");
    }
    if (vocab_sizes.empty()) throw ValidationError("encoder config: no vocabulary attached");
    for (const auto& [slot, v] : vocab_sizes) {
      if (v <= kNumSpecials) {
        throw ValidationError("encoder config: vocab '" + slot + "' has " + std::to_string(v) +
                              " entries, need more than the special tokens");
      }
    }
  }

  /// Flat `key = value` lines; vocab sizes as `vocab.<slot> = V`.
  std::string serialize() const {
    std::string out;
    out += "num_layers = " + std::to_string(num_layers) + "\n";
    out += "embed_dim = " + std::to_string(embed_dim) + "\n";
    out += "hidden_dim = " + std::to_string(hidden_dim) + "\n";
    out += "num_heads = " + std::to_string(num_heads) + "\n";
    out += "ffn_dim = " + std::to_string(ffn_dim) + "\n";
    out += "max_positions = " + std::to_string(max_positions) + "\n";
    out += "type_vocab_size = " + std::to_string(type_vocab_size) + "\n";
    out += "layer_norm_eps = " + format_double(layer_norm_eps, 17) + "\n";
    out += "init_std = " + format_double(init_std, 17) + "\n";
    for (const auto& [slot, v] : vocab_sizes) out += "vocab." + slot + " = " + std::to_string(v) + "\n";
    return out;
  }
};

/// Config with ALBERT's head and FFN conventions for the given sizes.
inline EncoderConfig make_encoder_config(int layers, int embed, int hidden, int max_positions,
                                         std::map<std::string, int> vocab_sizes) {
  EncoderConfig c;
  c.num_layers = layers;
  c.embed_dim = embed;
  c.hidden_dim = hidden;
  c.num_heads = std::max(1, hidden / 64);
  c.ffn_dim = 4 * hidden;
  c.max_positions = max_positions;
  c.vocab_sizes = std::move(vocab_sizes);
  return c;
}

/// Named dense tensors. std::map keeps references stable and iteration
/// (checkpoint layout, initialization order) deterministic.
template <typename T>
class ParamStore {
 public:
  Matrix<T>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    auto [it, inserted] = tensors_.try_emplace(name, Matrix<T>::Zero(rows, cols));
    if (!inserted) throw Error("parameter '" + name + "' already exists");
    return it->second;
  }

  Matrix<T>& operator[](const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error("no parameter named '" + name + "'");
    return it->second;
  }
  const Matrix<T>& operator[](const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error("no parameter named '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  void erase(const std::string& name) { tensors_.erase(name); }
  std::size_t size() const { return tensors_.size(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  /// Total scalar count over tensors whose name starts with `prefix`.
  std::size_t num_elements(std::string_view prefix = "") const {
    std::size_t n = 0;
    for (const auto& [name, m] : tensors_) {
      if (std::string_view(name).substr(0, prefix.size()) == prefix) n += static_cast<std::size_t>(m.size());
    }
    return n;
  }

  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto& [name, m] : tensors_) out.tensors_.emplace(name, Matrix<T>::Zero(m.rows(), m.cols()));
    return out;
  }

  void set_zero() {
    for (auto& [name, m] : tensors_) m.setZero();
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, m] : tensors_) out.add(name, m.rows(), m.cols()) = m.template cast<U>();
    return out;
  }

  bool operator==(const ParamStore& o) const {
    if (tensors_.size() != o.tensors_.size()) return false;
    auto a = tensors_.begin();
    auto b = o.tensors_.begin();
    for (; a != tensors_.end(); ++a, ++b) {
      if (a->first != b->first || a->second.rows() != b->second.rows() ||
          a->second.cols() != b->second.cols()) {
        return false;
      }
      if (std::memcmp(a->second.data(), b->second.data(), sizeof(T) * a->second.size()) != 0) return false;
    }
    return true;
  }

 private:
  std::map<std::string, Matrix<T>> tensors_;
};

/// acc += scale * g for every tensor of g.
template <typename T>
void accumulate(ParamStore<T>& acc, const ParamStore<T>& g, T scale = T(1)) {
  for (const auto& [name, m] : g) acc[name] += scale * m;
}

template <typename T>
struct Model {
  EncoderConfig config;
  ParamStore<T> params;

  bool has_slot(std::string_view slot) const { return config.vocab_sizes.count(std::string(slot)) > 0; }

  int vocab_size(std::string_view slot) const {
    auto it = config.vocab_sizes.find(std::string(slot));
    if (it == config.vocab_sizes.end()) throw Error("vocabulary '" + std::string(slot) + "' is not attached");
    return it->second;
  }

  template <typename U>
  Model<U> cast() const {
    return Model<U>{config, params.template cast<U>()};
  }
};

namespace detail {

inline std::string slot_name(std::string_view prefix, std::string_view slot, std::string_view rest) {
  std::string s(prefix);
  s += '.';
  s += slot;
  s += '.';
  s += rest;
  return s;
}

/// Truncated normal at two standard deviations.
inline double truncated_normal(Rng& rng, double std) {
  for (;;) {
    const double z = rng.normal();
    if (std::abs(z) <= 2.0) return z * std;
  }
}

}  // namespace detail

inline std::string token_table_name(std::string_view slot) { return detail::slot_name("emb", slot, "token"); }

/// Builds the parameter layout. Weights ~ truncated normal(0, init_std),
/// biases zero, layer-norm gains one. Draws happen in name order.
template <typename T>
Model<T> init_model(const EncoderConfig& config, Rng& rng) {
  config.validate();
  Model<T> model{config, {}};
  auto& p = model.params;
  const int e = config.embed_dim, h = config.hidden_dim, f = config.ffn_dim;
  std::vector<std::string> gains;
  auto dense = [&](const std::string& name, int in, int out) {
    p.add(name + ".w", in, out);
    p.add(name + ".b", 1, out);
  };
  auto norm = [&](const std::string& name, int dim) {
    p.add(name + ".g", 1, dim);
    p.add(name + ".b", 1, dim);
    gains.push_back(name + ".g");
  };
  for (const auto& [slot, v] : config.vocab_sizes) {
    p.add(token_table_name(slot), v, e);
    dense(detail::slot_name("emb", slot, "proj"), e, h);
    dense(detail::slot_name("head", slot, "dense"), h, e);
    norm(detail::slot_name("head", slot, "ln"), e);
    p.add(detail::slot_name("head", slot, "bias"), 1, v);
  }
  p.add("emb.position", config.max_positions, h);
  p.add("emb.type", config.type_vocab_size, h);
  norm("emb.ln", h);
  for (const char* n : {"q", "k", "v", "o"}) dense(std::string("block.attn.") + n, h, h);
  norm("block.ln1", h);
  dense("block.ffn.in", h, f);
  dense("block.ffn.out", f, h);
  norm("block.ln2", h);
  dense("pooler", h, h);

  for (auto& [name, m] : p) {
    const bool is_bias = name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    const bool is_head_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    if (is_bias || is_head_bias) continue;
    if (std::find(gains.begin(), gains.end(), name) != gains.end()) {
      m.setOnes();
      continue;
    }
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(detail::truncated_normal(rng, config.init_std));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Primitive layers.

namespace layers {

template <typename T>
void linear_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b, Matrix<T>& y) {
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
}

/// Accumulates dW, db and returns dx.
template <typename T>
Matrix<T> linear_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dy, Matrix<T>& dw,
                          Matrix<T>& db) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  return dy * w.transpose();
}

template <typename T>
struct LayerNormCache {
  Matrix<T> xhat;
  ColVector<T> rstd;
};

template <typename T>
Matrix<T> layer_norm_forward(const Matrix<T>& x, const Matrix<T>& g, const Matrix<T>& b, double eps,
                             LayerNormCache<T>* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Matrix<T> xhat(n, d);
  ColVector<T> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const T var = (x.row(i).array() - mean).square().mean();
    rstd(i) = T(1) / std::sqrt(var + static_cast<T>(eps));
    xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
  Matrix<T> y = xhat.array().rowwise() * g.row(0).array();
  y.rowwise() += b.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const LayerNormCache<T>& c, const Matrix<T>& g, const Matrix<T>& dy,
                              Matrix<T>& dg, Matrix<T>& db) {
  dg.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  const Matrix<T> dxhat = dy.array().rowwise() * g.row(0).array();
  const T inv_d = T(1) / static_cast<T>(dy.cols());
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).sum() * inv_d;
    const T m2 = dxhat.row(i).dot(c.xhat.row(i)) * inv_d;
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

// tanh approximation used by BERT/ALBERT ("gelu_new").
template <typename T>
T gelu(T u) {
  constexpr T c = static_cast<T>(0.7978845608028654);
  return T(0.5) * u * (T(1) + std::tanh(c * (u + static_cast<T>(0.044715) * u * u * u)));
}

template <typename T>
T gelu_grad(T u) {
  constexpr T c = static_cast<T>(0.7978845608028654);
  const T a = static_cast<T>(0.044715);
  const T th = std::tanh(c * (u + a * u * u * u));
  return T(0.5) * (T(1) + th) + T(0.5) * u * (T(1) - th * th) * c * (T(1) + T(3) * a * u * u);
}

template <typename T>
Matrix<T> gelu_forward(const Matrix<T>& u) {
  return u.unaryExpr([](T v) { return gelu(v); });
}

template <typename T>
Matrix<T> gelu_backward(const Matrix<T>& u, const Matrix<T>& dy) {
  return dy.array() * u.unaryExpr([](T v) { return gelu_grad(v); }).array();
}

}  // namespace layers

// ---------------------------------------------------------------------------
// Encoder.

/// One sequence. `mask` is 1 for real positions and 0 for padding; padded
/// keys get exactly zero attention.
struct EncoderInput {
  std::vector<int> ids;
  std::vector<int> type_ids;
  std::vector<int> positions;
  std::vector<int> mask;

  std::size_t size() const { return ids.size(); }

  static EncoderInput of(std::vector<int> ids) {
    EncoderInput in;
    const std::size_t n = ids.size();
    in.ids = std::move(ids);
    in.type_ids.assign(n, 0);
    in.positions.resize(n);
    for (std::size_t i = 0; i < n; ++i) in.positions[i] = static_cast<int>(i);
    in.mask.assign(n, 1);
    return in;
  }
};

template <typename T>
struct BlockCache {
  Matrix<T> x, q, k, v, ctx;
  std::vector<Matrix<T>> probs;  // per head, n x n
  layers::LayerNormCache<T> ln1, ln2;
  Matrix<T> h1, u;
};

template <typename T>
struct EncodeCache {
  std::string slot;
  EncoderInput input;
  Matrix<T> embedded;  // n x E, input of the projection
  layers::LayerNormCache<T> emb_ln;
  std::vector<BlockCache<T>> blocks;
};

/// Hidden states plus the attention mask they were computed under.
template <typename T>
struct Activation {
  Matrix<T> hidden;
  std::vector<int> mask;

  Eigen::Index rows() const { return hidden.rows(); }
};

template <typename T>
Matrix<T> lookup(const Model<T>& model, std::string_view slot, const std::vector<int>& ids) {
  const Matrix<T>& table = model.params[token_table_name(slot)];
  Matrix<T> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw ValidationError("token id " + std::to_string(ids[i]) + " out of range for vocabulary '" +
                            std::string(slot) + "' of size " + std::to_string(table.rows()));
    }
    out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  }
  return out;
}

template <typename T>
void lookup_backward(std::string_view slot, const std::vector<int>& ids, const Matrix<T>& d_embedded,
                     ParamStore<T>& grads) {
  Matrix<T>& dt = grads[token_table_name(slot)];
  for (std::size_t i = 0; i < ids.size(); ++i) dt.row(ids[i]) += d_embedded.row(static_cast<Eigen::Index>(i));
}

namespace detail {

template <typename T>
Matrix<T> block_forward(const Model<T>& model, const Matrix<T>& x, const std::vector<int>& mask,
                        BlockCache<T>& c) {
  const auto& p = model.params;
  const int nh = model.config.num_heads, d = model.config.head_dim();
  const Eigen::Index n = x.rows();
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  c.x = x;
  layers::linear_forward(x, p["block.attn.q.w"], p["block.attn.q.b"], c.q);
  layers::linear_forward(x, p["block.attn.k.w"], p["block.attn.k.b"], c.k);
  layers::linear_forward(x, p["block.attn.v.w"], p["block.attn.v.b"], c.v);
  c.ctx.setZero(n, model.config.hidden_dim);
  c.probs.assign(nh, Matrix<T>());
  for (int h = 0; h < nh; ++h) {
    Matrix<T> s = (c.q.middleCols(h * d, d) * c.k.middleCols(h * d, d).transpose()) * scale;
    Matrix<T>& pr = c.probs[h];
    pr.setZero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (mask[j]) mx = std::max(mx, s(i, j));
      }
      if (mx == -std::numeric_limits<T>::infinity()) continue;
      T z = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!mask[j]) continue;
        pr(i, j) = std::exp(s(i, j) - mx);
        z += pr(i, j);
      }
      pr.row(i) /= z;
    }
    c.ctx.middleCols(h * d, d).noalias() = pr * c.v.middleCols(h * d, d);
  }
  Matrix<T> a;
  layers::linear_forward(c.ctx, p["block.attn.o.w"], p["block.attn.o.b"], a);
  c.h1 = layers::layer_norm_forward<T>(x + a, p["block.ln1.g"], p["block.ln1.b"], model.config.layer_norm_eps, &c.ln1);
  layers::linear_forward(c.h1, p["block.ffn.in.w"], p["block.ffn.in.b"], c.u);
  Matrix<T> f;
  layers::linear_forward<T>(layers::gelu_forward(c.u), p["block.ffn.out.w"], p["block.ffn.out.b"], f);
  return layers::layer_norm_forward<T>(c.h1 + f, p["block.ln2.g"], p["block.ln2.b"], model.config.layer_norm_eps,
                                       &c.ln2);
}

template <typename T>
Matrix<T> block_backward(const Model<T>& model, const BlockCache<T>& c, const Matrix<T>& dy, ParamStore<T>& g) {
  const auto& p = model.params;
  const int nh = model.config.num_heads, d = model.config.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(d));

  const Matrix<T> dsum2 = layers::layer_norm_backward(c.ln2, p["block.ln2.g"], dy, g["block.ln2.g"], g["block.ln2.b"]);
  const Matrix<T> act = layers::gelu_forward(c.u);
  const Matrix<T> dact = layers::linear_backward(act, p["block.ffn.out.w"], dsum2, g["block.ffn.out.w"], g["block.ffn.out.b"]);
  const Matrix<T> du = layers::gelu_backward(c.u, dact);
  Matrix<T> dh1 = dsum2 + layers::linear_backward(c.h1, p["block.ffn.in.w"], du, g["block.ffn.in.w"], g["block.ffn.in.b"]);

  const Matrix<T> dsum1 = layers::layer_norm_backward(c.ln1, p["block.ln1.g"], dh1, g["block.ln1.g"], g["block.ln1.b"]);
  const Matrix<T> dctx = layers::linear_backward(c.ctx, p["block.attn.o.w"], dsum1, g["block.attn.o.w"], g["block.attn.o.b"]);
  Matrix<T> dq = Matrix<T>::Zero(c.q.rows(), c.q.cols());
  Matrix<T> dk = dq, dv = dq;
  for (int h = 0; h < nh; ++h) {
    const Matrix<T>& pr = c.probs[h];
    const auto dctx_h = dctx.middleCols(h * d, d);
    dv.middleCols(h * d, d).noalias() = pr.transpose() * dctx_h;
    const Matrix<T> dp = dctx_h * c.v.middleCols(h * d, d).transpose();
    Matrix<T> ds = pr.array() * (dp.colwise() - (dp.array() * pr.array()).rowwise().sum().matrix()).array();
    ds *= scale;
    dq.middleCols(h * d, d).noalias() = ds * c.k.middleCols(h * d, d);
    dk.middleCols(h * d, d).noalias() = ds.transpose() * c.q.middleCols(h * d, d);
  }
  Matrix<T> dx = dsum1;
  dx += layers::linear_backward(c.x, p["block.attn.q.w"], dq, g["block.attn.q.w"], g["block.attn.q.b"]);
  dx += layers::linear_backward(c.x, p["block.attn.k.w"], dk, g["block.attn.k.w"], g["block.attn.k.b"]);
  dx += layers::linear_backward(c.x, p["block.attn.v.w"], dv, g["block.attn.v.w"], g["block.attn.v.b"]);
  return dx;
}

}  // namespace detail

/// Encodes already-embedded inputs (n x E) through `slot`'s projection. The
/// hierarchical objective feeds aggregated word vectors here; `input.ids`
/// are ignored.
template <typename T>
Activation<T> encode_embedded(const Model<T>& model, std::string_view slot, const Matrix<T>& embedded,
                              const EncoderInput& input, EncodeCache<T>* cache = nullptr) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  const Eigen::Index n = embedded.rows();
  if (n == 0) throw ValidationError("encode: empty sequence");
  if (n > cfg.max_positions) {
    throw ValidationError("encode: sequence of " + std::to_string(n) + " exceeds max_positions " +
                          std::to_string(cfg.max_positions));
  }
  if (static_cast<Eigen::Index>(input.type_ids.size()) != n || static_cast<Eigen::Index>(input.positions.size()) != n ||
      static_cast<Eigen::Index>(input.mask.size()) != n) {
    throw ValidationError("encode: type_ids, positions and mask must match the sequence length");
  }
  Matrix<T> x;
  layers::linear_forward(embedded, p[detail::slot_name("emb", slot, "proj") + ".w"],
                         p[detail::slot_name("emb", slot, "proj") + ".b"], x);
  const Matrix<T>& pos = p["emb.position"];
  const Matrix<T>& typ = p["emb.type"];
  for (Eigen::Index i = 0; i < n; ++i) {
    const int pi = input.positions[i], ti = input.type_ids[i];
    if (pi < 0 || pi >= cfg.max_positions) throw ValidationError("encode: position out of range");
    if (ti < 0 || ti >= cfg.type_vocab_size) throw ValidationError("encode: type id out of range");
    x.row(i) += pos.row(pi) + typ.row(ti);
  }
  EncodeCache<T> local;
  EncodeCache<T>& c = cache ? *cache : local;
  c.slot = std::string(slot);
  c.input = input;
  c.embedded = embedded;
  x = layers::layer_norm_forward<T>(x, p["emb.ln.g"], p["emb.ln.b"], cfg.layer_norm_eps, &c.emb_ln);
  c.blocks.assign(cfg.num_layers, BlockCache<T>());
  for (int l = 0; l < cfg.num_layers; ++l) x = detail::block_forward(model, x, input.mask, c.blocks[l]);
  return {std::move(x), input.mask};
}

template <typename T>
Activation<T> encode(const Model<T>& model, std::string_view slot, const EncoderInput& input,
                     EncodeCache<T>* cache = nullptr) {
  return encode_embedded(model, slot, lookup(model, slot, input.ids), input, cache);
}

/// Backward through blocks, embeddings and projection; returns d(embedded).
template <typename T>
Matrix<T> encode_embedded_backward(const Model<T>& model, const EncodeCache<T>& c, const Matrix<T>& d_hidden,
                                   ParamStore<T>& g) {
  Matrix<T> dx = d_hidden;
  for (int l = model.config.num_layers; l-- > 0;) dx = detail::block_backward(model, c.blocks[l], dx, g);
  dx = layers::layer_norm_backward(c.emb_ln, model.params["emb.ln.g"], dx, g["emb.ln.g"], g["emb.ln.b"]);
  Matrix<T>& dpos = g["emb.position"];
  Matrix<T>& dtyp = g["emb.type"];
  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    dpos.row(c.input.positions[i]) += dx.row(i);
    dtyp.row(c.input.type_ids[i]) += dx.row(i);
  }
  const std::string proj = detail::slot_name("emb", c.slot, "proj");
  return layers::linear_backward(c.embedded, model.params[proj + ".w"], dx, g[proj + ".w"], g[proj + ".b"]);
}

template <typename T>
void encode_backward(const Model<T>& model, const EncodeCache<T>& c, const Matrix<T>& d_hidden, ParamStore<T>& g) {
  const Matrix<T> de = encode_embedded_backward(model, c, d_hidden, g);
  lookup_backward(c.slot, c.input.ids, de, g);
}

/// Attention probabilities of the last block application (for inspection).
template <typename T>
const std::vector<Matrix<T>>& last_attention(const EncodeCache<T>& c) {
  return c.blocks.back().probs;
}

// ---------------------------------------------------------------------------
// MLM head.

template <typename T>
struct HeadCache {
  std::string slot;
  Matrix<T> x, u, t;
  layers::LayerNormCache<T> ln;
};

/// Logits over `slot`'s vocabulary for each row of `hidden`: dense H -> E,
/// GELU, layer norm, then the transpose of the token table plus a bias.
template <typename T>
Matrix<T> mlm_logits(const Model<T>& model, std::string_view slot, const Matrix<T>& hidden,
                     HeadCache<T>* cache = nullptr) {
  if (!model.has_slot(slot)) throw Error("mlm_logits: vocabulary '" + std::string(slot) + "' is not attached");
  const auto& p = model.params;
  const std::string dense = detail::slot_name("head", slot, "dense");
  const std::string ln = detail::slot_name("head", slot, "ln");
  HeadCache<T> local;
  HeadCache<T>& c = cache ? *cache : local;
  c.slot = std::string(slot);
  c.x = hidden;
  layers::linear_forward(hidden, p[dense + ".w"], p[dense + ".b"], c.u);
  c.t = layers::layer_norm_forward<T>(layers::gelu_forward(c.u), p[ln + ".g"], p[ln + ".b"],
                                      model.config.layer_norm_eps, &c.ln);
  Matrix<T> logits = c.t * p[token_table_name(slot)].transpose();
  logits.rowwise() += p[detail::slot_name("head", slot, "bias")].row(0);
  return logits;
}

template <typename T>
Matrix<T> mlm_logits(const Model<T>& model, std::string_view slot, const Activation<T>& act) {
  return mlm_logits(model, slot, act.hidden);
}

/// Returns d(hidden); the decoder gradient lands in the token table.
template <typename T>
Matrix<T> mlm_logits_backward(const Model<T>& model, const HeadCache<T>& c, const Matrix<T>& d_logits,
                              ParamStore<T>& g) {
  const auto& p = model.params;
  const std::string dense = detail::slot_name("head", c.slot, "dense");
  const std::string ln = detail::slot_name("head", c.slot, "ln");
  const std::string table = token_table_name(c.slot);
  g[detail::slot_name("head", c.slot, "bias")].row(0) += d_logits.colwise().sum();
  g[table].noalias() += d_logits.transpose() * c.t;
  const Matrix<T> dt = d_logits * p[table];
  const Matrix<T> dact = layers::layer_norm_backward(c.ln, p[ln + ".g"], dt, g[ln + ".g"], g[ln + ".b"]);
  const Matrix<T> du = layers::gelu_backward(c.u, dact);
  return layers::linear_backward(c.x, p[dense + ".w"], du, g[dense + ".w"], g[dense + ".b"]);
}

// ---------------------------------------------------------------------------
// Word-level aggregation and pooling.

enum class AggregateMode : std::uint8_t { kFirstToken, kMean };

inline std::string_view to_string(AggregateMode m) { return m == AggregateMode::kMean ? "mean" : "first_token"; }

inline AggregateMode parse_aggregate_mode(std::string_view s) {
  if (s == "mean") return AggregateMode::kMean;
  if (s == "first_token") return AggregateMode::kFirstToken;
  throw ValidationError("unknown aggregate mode '" + std::string(s) + "'");
}

/// One row per alignment span: the span's first row, or the span mean.
template <typename T>
Matrix<T> aggregate(const Matrix<T>& fine, const Alignment& a, AggregateMode mode) {
  if (!is_partition(a, static_cast<std::size_t>(fine.rows()))) {
    throw ValidationError("aggregate: alignment does not partition the fine sequence");
  }
  Matrix<T> out(static_cast<Eigen::Index>(a.size()), fine.cols());
  for (std::size_t j = 0; j < a.size(); ++j) {
    const auto [b, e] = a.spans[j];
    if (mode == AggregateMode::kFirstToken) {
      out.row(j) = fine.row(b);
    } else {
      out.row(j) = fine.middleRows(b, e - b).colwise().sum() / static_cast<T>(e - b);
    }
  }
  return out;
}

template <typename T>
Matrix<T> aggregate_backward(const Matrix<T>& d_out, const Alignment& a, AggregateMode mode, Eigen::Index fine_rows) {
  Matrix<T> d = Matrix<T>::Zero(fine_rows, d_out.cols());
  for (std::size_t j = 0; j < a.size(); ++j) {
    const auto [b, e] = a.spans[j];
    if (mode == AggregateMode::kFirstToken) {
      d.row(b) += d_out.row(j);
    } else {
      const T w = T(1) / static_cast<T>(e - b);
      for (int i = b; i < e; ++i) d.row(i) += w * d_out.row(j);
    }
  }
  return d;
}

/// Copies each coarse row to every fine position of its span.
template <typename T>
Matrix<T> broadcast(const Matrix<T>& coarse, const Alignment& a, Eigen::Index fine_rows) {
  Matrix<T> out(fine_rows, coarse.cols());
  for (std::size_t j = 0; j < a.size(); ++j) {
    for (int i = a.spans[j].first; i < a.spans[j].second; ++i) out.row(i) = coarse.row(j);
  }
  return out;
}

template <typename T>
Matrix<T> broadcast_backward(const Matrix<T>& d_fine, const Alignment& a) {
  Matrix<T> d = Matrix<T>::Zero(static_cast<Eigen::Index>(a.size()), d_fine.cols());
  for (std::size_t j = 0; j < a.size(); ++j) {
    for (int i = a.spans[j].first; i < a.spans[j].second; ++i) d.row(j) += d_fine.row(i);
  }
  return d;
}

template <typename T>
struct PoolCache {
  Matrix<T> x, y;
};

/// tanh(dense(hidden[0])); returns a 1 x H row.
template <typename T>
Matrix<T> pool_cls(const Model<T>& model, const Matrix<T>& hidden, PoolCache<T>* cache = nullptr) {
  Matrix<T> x = hidden.topRows(1);
  Matrix<T> y;
  layers::linear_forward(x, model.params["pooler.w"], model.params["pooler.b"], y);
  y = y.array().tanh();
  if (cache) *cache = {std::move(x), y};
  return y;
}

/// Returns d(hidden) with only row 0 populated.
template <typename T>
Matrix<T> pool_cls_backward(const Model<T>& model, const PoolCache<T>& c, const Matrix<T>& dy, Eigen::Index rows,
                            ParamStore<T>& g) {
  const Matrix<T> du = dy.array() * (T(1) - c.y.array().square());
  Matrix<T> d = Matrix<T>::Zero(rows, c.x.cols());
  d.topRows(1) = layers::linear_backward(c.x, model.params["pooler.w"], du, g["pooler.w"], g["pooler.b"]);
  return d;
}

// ---------------------------------------------------------------------------
// Checkpoints: manifest.txt (name, shape, dtype, byte offset) + params.bin.

template <typename T>
constexpr std::string_view dtype_name() {
  if constexpr (std::is_same_v<T, float>) {
    return "f32";
  } else {
    static_assert(std::is_same_v<T, double>, "only float and double parameters are supported");
    return "f64";
  }
}

namespace detail {

template <typename T>
void append_le(std::string& out, const T* data, std::size_t n) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  out.append(reinterpret_cast<const char*>(data), n * sizeof(T));
}

}  // namespace detail

template <typename T>
void save_params(const ParamStore<T>& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string manifest = "# name\trows\tcols\tdtype\toffset\n";
  std::string blob;
  for (const auto& [name, m] : params) {
    manifest += name + "\t" + std::to_string(m.rows()) + "\t" + std::to_string(m.cols()) + "\t" +
                std::string(dtype_name<T>()) + "\t" + std::to_string(blob.size()) + "\n";
    detail::append_le(blob, m.data(), static_cast<std::size_t>(m.size()));
  }
  write_file((dir / "manifest.txt").string(), manifest);
  write_file((dir / "params.bin").string(), blob);
}

template <typename T>
ParamStore<T> load_params(const std::filesystem::path& dir) {
  const std::string manifest = read_file((dir / "manifest.txt").string());
  const std::string blob = read_file((dir / "params.bin").string());
  ParamStore<T> out;
  const auto lines = split_lines(manifest);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty() || lines[i][0] == '#') continue;
    const auto f = split(lines[i], '\t');
    if (f.size() != 5) throw ParseError("checkpoint manifest: expected 5 fields", i + 1);
    const std::string name(f[0]);
    long rows = 0, cols = 0;
    std::size_t offset = 0;
    try {
      rows = std::stol(std::string(f[1]));
      cols = std::stol(std::string(f[2]));
      offset = std::stoull(std::string(f[4]));
    } catch (const std::exception&) {
      throw ParseError("checkpoint manifest: bad number", i + 1);
    }
    if (f[3] != dtype_name<T>()) {
      throw ParseError("checkpoint manifest: tensor '" + name + "' has dtype " + std::string(f[3]) + ", expected " +
                           std::string(dtype_name<T>()),
                       i + 1);
    }
    const std::size_t bytes = static_cast<std::size_t>(rows * cols) * sizeof(T);
    if (rows < 0 || cols < 0 || offset + bytes > blob.size()) {
      throw ParseError("checkpoint manifest: tensor '" + name + "' exceeds the blob", i + 1);
    }
    Matrix<T>& m = out.add(name, rows, cols);
    std::memcpy(m.data(), blob.data() + offset, bytes);
  }
  return out;
}

inline EncoderConfig parse_encoder_config(std::string_view text) {
  EncoderConfig c;
  c.vocab_sizes.clear();
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("encoder config: expected key = value", i + 1);
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    try {
      if (key == "num_layers") c.num_layers = std::stoi(value);
      else if (key == "embed_dim") c.embed_dim = std::stoi(value);
      else if (key == "hidden_dim") c.hidden_dim = std::stoi(value);
      else if (key == "num_heads") c.num_heads = std::stoi(value);
      else if (key == "ffn_dim") c.ffn_dim = std::stoi(value);
      else if (key == "max_positions") c.max_positions = std::stoi(value);
      else if (key == "type_vocab_size") c.type_vocab_size = std::stoi(value);
      else if (key == "layer_norm_eps") c.layer_norm_eps = std::stod(value);
      else if (key == "init_std") c.init_std = std::stod(value);
      else if (key.rfind("vocab.", 0) == 0) c.vocab_sizes[key.substr(6)] = std::stoi(value);
      else throw ParseError("encoder config: unknown key '" + key + "'", i + 1);
    } catch (const std::invalid_argument&) {
      throw ParseError("encoder config: bad value for '" + key + "'", i + 1);
    } catch (const std::out_of_range&) {
      throw ParseError("encoder config: bad value for '" + key + "'", i + 1);
    }
  }
  c.validate();
  return c;
}

template <typename T>
void save_model(const Model<T>& model, const std::filesystem::path& dir) {
  save_params(model.params, dir);
  write_file((dir / "config.txt").string(), model.config.serialize());
}

template <typename T>
Model<T> load_model(const std::filesystem::path& dir) {
  Model<T> m{parse_encoder_config(read_file((dir / "config.txt").string())), load_params<T>(dir)};
  for (const auto& [slot, v] : m.config.vocab_sizes) {
    const std::string table = token_table_name(slot);
    if (!m.params.contains(table) || m.params[table].rows() != v) {
      throw ParseError("checkpoint: token table for '" + slot + "' does not match the config", 0);
    }
  }
  return m;
}

}  // namespace mvptok
