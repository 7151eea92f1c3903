#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtpbias/checkpoint.hpp"
#include "mtpbias/ops.hpp"
#include "mtpbias/rng.hpp"
#include "mtpbias/tensor.hpp"
#include "mtpbias/vocab.hpp"

namespace mtpbias {

struct ModelDims {
  int d = 64;           // model width
  int vocab = 64;       // static vocabulary size V
  int k_heads = 4;      // MTP heads K
  int enc_layers = 2;
  int dec_layers = 2;
  int attn_heads = 4;
  int d_audio = 16;     // feature width
  int ffn_mult = 4;

  int head_dim() const { return d / attn_heads; }
  void validate() const {
    if (d <= 0 || vocab <= 0 || k_heads <= 0 || enc_layers <= 0 || dec_layers <= 0 ||
        attn_heads <= 0 || d_audio <= 0 || ffn_mult <= 0)
      throw ConfigError("model dims must be positive");
    if (d % attn_heads != 0)
      throw ConfigError("model width " + std::to_string(d) + " not divisible by " +
                        std::to_string(attn_heads) + " attention heads");
  }
};

// Registers parameters under stable names. Each parameter draws from an RNG
// stream keyed by (seed, name), so configurations that share a parameter
// initialize it identically regardless of what else they instantiate.
template <typename S>
class ParamRegistry {
 public:
  explicit ParamRegistry(uint64_t seed) : seed_(seed) {}

  Tensor<S> weight(const std::string& name, int rows, int cols, int fan_in) {
    Tensor<S> t = Tensor<S>::zeros({rows, cols}, true);
    Rng rng = Rng::derive(seed_, name);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    S* p = t.data();
    for (int64_t i = 0; i < t.size(); ++i)
      p[i] = static_cast<S>(rng.next_uniform(-bound, bound));
    items_.emplace_back(name, t);
    return t;
  }
  Tensor<S> weight(const std::string& name, int rows, int cols) {
    return weight(name, rows, cols, rows);
  }
  Tensor<S> bias(const std::string& name, int n) {
    Tensor<S> t = Tensor<S>::zeros({n}, true);
    items_.emplace_back(name, t);
    return t;
  }
  Tensor<S> ones(const std::string& name, int n) {
    Tensor<S> t = Tensor<S>::filled({n}, S(1), true);
    items_.emplace_back(name, t);
    return t;
  }

  std::vector<std::pair<std::string, Tensor<S>>> take() { return std::move(items_); }

 private:
  uint64_t seed_;
  std::vector<std::pair<std::string, Tensor<S>>> items_;
};

template <typename S>
struct LnParams {
  Tensor<S> gain, shift;
};

template <typename S>
struct AttentionParams {
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename S>
struct FfnParams {
  Tensor<S> w1, b1, w2, b2;
};

template <typename S>
struct EncoderLayerParams {
  LnParams<S> ln1;
  AttentionParams<S> attn;
  LnParams<S> ln2;
  FfnParams<S> ffn;
};

template <typename S>
struct DecoderLayerParams {
  LnParams<S> ln1;
  AttentionParams<S> self_attn;
  LnParams<S> ln2;
  AttentionParams<S> cross_attn;
  LnParams<S> ln3;
  FfnParams<S> ffn;
};

// Full network: audio encoder, autoregressive decoder, and K MTP heads that
// share the single output projection w_o. Head 1 is the plain next-token
// projection (the unmodified decoder output through w_o); heads 2..K add a
// residual feed-forward block each, so a K=1 configuration is exactly the
// baseline encoder-decoder.
template <typename S>
struct ModelParams {
  ModelDims dims;
  Tensor<S> embed;               // [V x d]
  Tensor<S> enc_in_w, enc_in_b;  // feature projection
  std::vector<EncoderLayerParams<S>> enc;
  LnParams<S> enc_ln_f;
  std::vector<DecoderLayerParams<S>> dec;
  LnParams<S> dec_ln_f;
  Tensor<S> w_o;                          // [d x V], shared by every head
  std::vector<FfnParams<S>> head_blocks;  // heads 2..K
  std::vector<std::pair<std::string, Tensor<S>>> named;

  static ModelParams init(const ModelDims& dims, uint64_t seed) {
    dims.validate();
    ModelParams p;
    p.dims = dims;
    ParamRegistry<S> reg(seed);
    const int d = dims.d, v = dims.vocab, f = dims.ffn_mult * dims.d;
    p.embed = reg.weight("embed", v, d, d);
    p.enc_in_w = reg.weight("enc_in.w", dims.d_audio, d);
    p.enc_in_b = reg.bias("enc_in.b", d);
    for (int i = 0; i < dims.enc_layers; ++i) {
      const std::string pre = "enc." + std::to_string(i) + ".";
      EncoderLayerParams<S> L;
      L.ln1 = {reg.ones(pre + "ln1.g", d), reg.bias(pre + "ln1.b", d)};
      L.attn = make_attention(reg, pre + "attn.", d);
      L.ln2 = {reg.ones(pre + "ln2.g", d), reg.bias(pre + "ln2.b", d)};
      L.ffn = {reg.weight(pre + "ffn.w1", d, f), reg.bias(pre + "ffn.b1", f),
               reg.weight(pre + "ffn.w2", f, d), reg.bias(pre + "ffn.b2", d)};
      p.enc.push_back(std::move(L));
    }
    p.enc_ln_f = {reg.ones("enc.ln_f.g", d), reg.bias("enc.ln_f.b", d)};
    for (int i = 0; i < dims.dec_layers; ++i) {
      const std::string pre = "dec." + std::to_string(i) + ".";
      DecoderLayerParams<S> L;
      L.ln1 = {reg.ones(pre + "ln1.g", d), reg.bias(pre + "ln1.b", d)};
      L.self_attn = make_attention(reg, pre + "self.", d);
      L.ln2 = {reg.ones(pre + "ln2.g", d), reg.bias(pre + "ln2.b", d)};
      L.cross_attn = make_attention(reg, pre + "cross.", d);
      L.ln3 = {reg.ones(pre + "ln3.g", d), reg.bias(pre + "ln3.b", d)};
      L.ffn = {reg.weight(pre + "ffn.w1", d, f), reg.bias(pre + "ffn.b1", f),
               reg.weight(pre + "ffn.w2", f, d), reg.bias(pre + "ffn.b2", d)};
      p.dec.push_back(std::move(L));
    }
    p.dec_ln_f = {reg.ones("dec.ln_f.g", d), reg.bias("dec.ln_f.b", d)};
    p.w_o = reg.weight("w_o", d, v);
    for (int k = 2; k <= dims.k_heads; ++k) {
      const std::string pre = "head." + std::to_string(k) + ".";
      p.head_blocks.push_back({reg.weight(pre + "w1", d, d), reg.bias(pre + "b1", d),
                               reg.weight(pre + "w2", d, d), reg.bias(pre + "b2", d)});
    }
    p.named = reg.take();
    return p;
  }

  std::vector<Tensor<S>> parameters() const {
    std::vector<Tensor<S>> out;
    out.reserve(named.size());
    for (const auto& [_, t] : named) out.push_back(t);
    return out;
  }

  void set_requires_grad(bool v) {
    for (auto& [_, t] : named) t.set_requires_grad(v);
  }

  void zero_grad() {
    for (auto& [_, t] : named) t.zero_grad();
  }

 private:
  static AttentionParams<S> make_attention(ParamRegistry<S>& reg, const std::string& pre, int d) {
    return {reg.weight(pre + "wq", d, d), reg.bias(pre + "bq", d),
            reg.weight(pre + "wk", d, d), reg.bias(pre + "bk", d),
            reg.weight(pre + "wv", d, d), reg.bias(pre + "bv", d),
            reg.weight(pre + "wo", d, d), reg.bias(pre + "bo", d)};
  }
};

template <typename S>
struct EncoderStates {
  Tensor<S> states;  // [T x d]
  int frames() const { return states.rows(); }
};

// Sinusoidal position table, added to encoder inputs and token embeddings.
template <typename S>
Tensor<S> positional_encoding(int len, int d) {
  Tensor<S> pe = Tensor<S>::zeros({len, d});
  for (int t = 0; t < len; ++t)
    for (int i = 0; i < d; i += 2) {
      const double rate = std::pow(10000.0, static_cast<double>(i) / d);
      pe(t, i) = static_cast<S>(std::sin(t / rate));
      if (i + 1 < d) pe(t, i + 1) = static_cast<S>(std::cos(t / rate));
    }
  return pe;
}

template <typename S>
Tensor<S> causal_mask(int n) {
  Tensor<S> m = Tensor<S>::zeros({n, n});
  const S neg_inf = -std::numeric_limits<S>::infinity();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m(i, j) = neg_inf;
  return m;
}

namespace detail_model {

template <typename S>
Tensor<S> multi_head_attention(const AttentionParams<S>& p, Tensor<S> queries_in,
                               Tensor<S> keys_in, int n_heads,
                               const std::optional<Tensor<S>>& mask) {
  const int d = queries_in.cols();
  const int dh = d / n_heads;
  Tensor<S> q = ops::add_rowvec(ops::matmul(queries_in, p.wq), p.bq);
  Tensor<S> k = ops::add_rowvec(ops::matmul(keys_in, p.wk), p.bk);
  Tensor<S> v = ops::add_rowvec(ops::matmul(keys_in, p.wv), p.bv);
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor<S>> ctx;
  ctx.reserve(static_cast<size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Tensor<S> qh = ops::scale(ops::slice_cols(q, h * dh, dh), inv_sqrt);
    Tensor<S> kh = ops::slice_cols(k, h * dh, dh);
    Tensor<S> vh = ops::slice_cols(v, h * dh, dh);
    Tensor<S> scores = ops::matmul(qh, kh, false, true);
    if (mask) scores = ops::add(scores, *mask);
    Tensor<S> attn = ops::softmax(scores, 1);
    ctx.push_back(ops::matmul(attn, vh));
  }
  Tensor<S> merged = ops::concat_cols(std::move(ctx));
  return ops::add_rowvec(ops::matmul(merged, p.wo), p.bo);
}

template <typename S>
Tensor<S> feed_forward(const FfnParams<S>& p, Tensor<S> x) {
  Tensor<S> h = ops::gelu(ops::add_rowvec(ops::matmul(x, p.w1), p.b1));
  return ops::add_rowvec(ops::matmul(h, p.w2), p.b2);
}

}  // namespace detail_model

// H_e = AudioEnc(X). Pre-norm transformer over the projected feature frames.
template <typename S>
EncoderStates<S> encode(const ModelParams<S>& params, Tensor<S> features) {
  if (features.rank() != 2 || features.rows() < 1)
    throw DataError("encode: need at least one feature frame, got " +
                    shape_str(features.shape()));
  if (features.cols() != params.dims.d_audio)
    throw DataError("encode: feature width " + std::to_string(features.cols()) +
                    " does not match configured " + std::to_string(params.dims.d_audio));
  Tensor<S> x = ops::add_rowvec(ops::matmul(features, params.enc_in_w), params.enc_in_b);
  x = ops::add(x, positional_encoding<S>(x.rows(), params.dims.d));
  for (const auto& layer : params.enc) {
    Tensor<S> a = ops::layer_norm(x, layer.ln1.gain, layer.ln1.shift);
    x = ops::add(x, detail_model::multi_head_attention(layer.attn, a, a,
                                                       params.dims.attn_heads, std::nullopt));
    Tensor<S> a2 = ops::layer_norm(x, layer.ln2.gain, layer.ln2.shift);
    x = ops::add(x, detail_model::feed_forward(layer.ffn, a2));
  }
  return {ops::layer_norm(x, params.enc_ln_f.gain, params.enc_ln_f.shift)};
}

// Teacher-forced decoder states for a token prefix: row t is h^d at step t,
// i.e. the state that predicts token t+1 of the prefix's continuation.
// Causal masking keeps row t independent of tokens after position t.
template <typename S>
Tensor<S> decoder_states(const ModelParams<S>& params, std::span<const int> tokens,
                         const EncoderStates<S>& enc) {
  if (tokens.empty() || tokens[0] != vocab::kBos)
    throw DataError("decoder_states: token prefix must begin with BOS");
  const int n = static_cast<int>(tokens.size());
  Tensor<S> x = ops::embedding(params.embed, std::vector<int>(tokens.begin(), tokens.end()));
  x = ops::add(x, positional_encoding<S>(n, params.dims.d));
  const std::optional<Tensor<S>> mask = causal_mask<S>(n);
  for (const auto& layer : params.dec) {
    Tensor<S> a = ops::layer_norm(x, layer.ln1.gain, layer.ln1.shift);
    x = ops::add(x, detail_model::multi_head_attention(layer.self_attn, a, a,
                                                       params.dims.attn_heads, mask));
    Tensor<S> a2 = ops::layer_norm(x, layer.ln2.gain, layer.ln2.shift);
    x = ops::add(x, detail_model::multi_head_attention(layer.cross_attn, a2, enc.states,
                                                       params.dims.attn_heads, std::nullopt));
    Tensor<S> a3 = ops::layer_norm(x, layer.ln3.gain, layer.ln3.shift);
    x = ops::add(x, detail_model::feed_forward(layer.ffn, a3));
  }
  return ops::layer_norm(x, params.dec_ln_f.gain, params.dec_ln_f.shift);
}

// g_k applied to decoder states. Head 1 is the identity; heads >= 2 add a
// residual feed-forward block.
template <typename S>
Tensor<S> head_representation(const ModelParams<S>& params, Tensor<S> h, int k) {
  if (k < 1 || k > params.dims.k_heads)
    throw IndexError("head_representation: head " + std::to_string(k) + " out of 1.." +
                     std::to_string(params.dims.k_heads));
  if (k == 1) return h;
  const auto& blk = params.head_blocks[static_cast<size_t>(k - 2)];
  return ops::add(h, detail_model::feed_forward(blk, h));
}

// Logits of head k for every row of h, through the shared projection.
template <typename S>
Tensor<S> head_logits(const ModelParams<S>& params, Tensor<S> h, int k) {
  return ops::matmul(head_representation(params, h, k), params.w_o);
}

// All K logit matrices for teacher-forced states h [S x d].
template <typename S>
std::vector<Tensor<S>> all_head_logits(const ModelParams<S>& params, Tensor<S> h) {
  std::vector<Tensor<S>> out;
  out.reserve(static_cast<size_t>(params.dims.k_heads));
  for (int k = 1; k <= params.dims.k_heads; ++k) out.push_back(head_logits(params, h, k));
  return out;
}

// The K x V future-token logit block L_s for a single decoder state row.
template <typename S>
Tensor<S> mtp_logits_at(const ModelParams<S>& params, Tensor<S> h_row) {
  if (h_row.rows() != 1)
    throw DimensionError("mtp_logits_at: expected one state row, got " +
                         shape_str(h_row.shape()));
  std::vector<Tensor<S>> rows;
  rows.reserve(static_cast<size_t>(params.dims.k_heads));
  for (int k = 1; k <= params.dims.k_heads; ++k) rows.push_back(head_logits(params, h_row, k));
  return ops::concat_rows(std::move(rows));
}

// --- checkpoint interop -----------------------------------------------------

inline std::vector<NamedTensor> to_named_tensors(
    const std::vector<std::pair<std::string, Tensor<float>>>& named) {
  std::vector<NamedTensor> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named)
    out.push_back({name, t.shape(), std::vector<float>(t.data(), t.data() + t.size())});
  return out;
}

inline void load_named_tensors(std::vector<std::pair<std::string, Tensor<float>>>& named,
                               const std::vector<NamedTensor>& stored) {
  if (stored.size() != named.size())
    throw DataError("checkpoint/config mismatch: " + std::to_string(stored.size()) +
                    " stored tensors, " + std::to_string(named.size()) + " expected");
  for (size_t i = 0; i < named.size(); ++i) {
    auto& [name, t] = named[i];
    const auto& s = stored[i];
    if (s.name != name || s.shape != t.shape())
      throw DataError("checkpoint/config mismatch at '" + s.name + "' " + shape_str(s.shape) +
                      ", expected '" + name + "' " + shape_str(t.shape()));
    std::copy(s.data.begin(), s.data.end(), t.data());
  }
}

}  // namespace mtpbias
