#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mtpbias/model.hpp"

namespace mtpbias {

// Incremental decoder state: consumes tokens one at a time and caches
// self-attention keys/values per layer, so each step costs O(prefix) instead
// of re-running the whole prefix. Produces the same states as
// decoder_states() up to float reassociation (tests pin 1e-5 agreement).
// Inference only; nothing here touches the tape.
template <typename S>
class DecoderSession {
 public:
  using Row = Eigen::Matrix<S, 1, Eigen::Dynamic>;
  using Mat = MatrixRM<S>;

  DecoderSession(const ModelParams<S>& params, const EncoderStates<S>& enc, int max_len)
      : params_(params), max_len_(max_len) {
    const int d = params.dims.d;
    enc_states_ = enc.states.mat();
    layers_.resize(params.dims.dec_layers);
    for (int i = 0; i < params.dims.dec_layers; ++i) {
      auto& L = layers_[static_cast<size_t>(i)];
      L.k_cache.resize(max_len, d);
      L.v_cache.resize(max_len, d);
      const auto& cp = params.dec[static_cast<size_t>(i)].cross_attn;
      L.cross_k = (enc_states_ * cp.wk.mat()).rowwise() + row_of(cp.bk);
      L.cross_v = (enc_states_ * cp.wv.mat()).rowwise() + row_of(cp.bv);
    }
    pos_table_ = positional_encoding<S>(max_len, d).mat();
  }

  int length() const { return t_; }

  // Extends the prefix by one token and updates the cached state.
  void push(int token) {
    if (token < 0 || token >= params_.dims.vocab)
      throw IndexError("decoder session: token id " + std::to_string(token) + " out of range [0, " +
                       std::to_string(params_.dims.vocab) + ")");
    if (t_ >= max_len_)
      throw DataError("decoder session: prefix exceeds max length " + std::to_string(max_len_));
    const int d = params_.dims.d;
    const int nh = params_.dims.attn_heads;
    const int dh = d / nh;
    Row x = row_of(params_.embed, token) + pos_table_.row(t_);
    for (size_t li = 0; li < layers_.size(); ++li) {
      const auto& lp = params_.dec[li];
      auto& lc = layers_[li];
      // self-attention over the cached prefix plus this position
      Row a = layer_norm_row(x, lp.ln1);
      Row q = a * lp.self_attn.wq.mat() + row_of(lp.self_attn.bq);
      lc.k_cache.row(t_) = a * lp.self_attn.wk.mat() + row_of(lp.self_attn.bk);
      lc.v_cache.row(t_) = a * lp.self_attn.wv.mat() + row_of(lp.self_attn.bv);
      Row merged(d);
      for (int h = 0; h < nh; ++h)
        merged.segment(h * dh, dh) = attend(q.segment(h * dh, dh),
                                            lc.k_cache.topRows(t_ + 1).middleCols(h * dh, dh),
                                            lc.v_cache.topRows(t_ + 1).middleCols(h * dh, dh));
      x += merged * lp.self_attn.wo.mat() + row_of(lp.self_attn.bo);
      // cross-attention over the encoder states
      Row a2 = layer_norm_row(x, lp.ln2);
      Row q2 = a2 * lp.cross_attn.wq.mat() + row_of(lp.cross_attn.bq);
      for (int h = 0; h < nh; ++h)
        merged.segment(h * dh, dh) = attend(q2.segment(h * dh, dh),
                                            lc.cross_k.middleCols(h * dh, dh),
                                            lc.cross_v.middleCols(h * dh, dh));
      x += merged * lp.cross_attn.wo.mat() + row_of(lp.cross_attn.bo);
      Row a3 = layer_norm_row(x, lp.ln3);
      x += ffn_row(a3, lp.ffn);
    }
    state_ = layer_norm_row(x, params_.dec_ln_f);
    ++t_;
  }

  // h^d for the last pushed position.
  const Row& state() const { return state_; }

  // L_s: the K x V future-token logit block at the current state.
  Mat mtp_logits() const {
    const int k_heads = params_.dims.k_heads;
    Mat logits(k_heads, params_.dims.vocab);
    logits.row(0) = state_ * params_.w_o.mat();
    for (int k = 2; k <= k_heads; ++k) {
      const auto& blk = params_.head_blocks[static_cast<size_t>(k - 2)];
      Row rep = state_ + ffn_row(state_, blk);
      logits.row(k - 1) = rep * params_.w_o.mat();
    }
    return logits;
  }

 private:
  struct LayerCache {
    Mat k_cache, v_cache;
    Mat cross_k, cross_v;
  };

  static Row row_of(const Tensor<S>& t) {
    return Eigen::Map<const Row>(t.data(), t.size());
  }
  static Row row_of(const Tensor<S>& t, int r) {
    return Eigen::Map<const Row>(t.data() + static_cast<size_t>(r) * t.cols(), t.cols());
  }

  Row layer_norm_row(const Row& x, const LnParams<S>& p) const {
    const S mean = x.mean();
    const S var = (x.array() - mean).square().mean();
    const S istd = S(1) / std::sqrt(var + S(1e-5));
    return (((x.array() - mean) * istd) * row_of(p.gain).array() + row_of(p.shift).array())
        .matrix();
  }

  template <typename QT, typename KT, typename VT>
  Row attend(const QT& q, const KT& keys, const VT& values) const {
    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(q.size())));
    Eigen::Matrix<S, Eigen::Dynamic, 1> scores = keys * (q * inv_sqrt).transpose();
    const S m = scores.maxCoeff();
    scores = (scores.array() - m).exp();
    scores /= scores.sum();
    return scores.transpose() * values;
  }

  Row ffn_row(const Row& x, const FfnParams<S>& p) const {
    Row h = x * p.w1.mat() + Eigen::Map<const Row>(p.b1.data(), p.b1.size());
    h = gelu_row(h);
    return h * p.w2.mat() + Eigen::Map<const Row>(p.b2.data(), p.b2.size());
  }

  static Row gelu_row(const Row& x) {
    Row y(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = static_cast<double>(x[i]);
      y[i] = static_cast<S>(0.5 * v * (1.0 + std::tanh(0.7978845608028654 *
                                                       (v + 0.044715 * v * v * v))));
    }
    return y;
  }

  const ModelParams<S>& params_;
  int max_len_;
  int t_ = 0;
  Mat enc_states_;
  Mat pos_table_;
  std::vector<LayerCache> layers_;
  Row state_;
};

// Replays a whole prefix through a fresh session; the spec-level single-step
// surface used by tests.
template <typename S>
Eigen::Matrix<S, 1, Eigen::Dynamic> decode_step_state(const ModelParams<S>& params,
                                                      std::span<const int> prefix,
                                                      const EncoderStates<S>& enc) {
  if (prefix.empty() || prefix[0] != vocab::kBos)
    throw DataError("decode_step: token prefix must begin with BOS");
  DecoderSession<S> session(params, enc, static_cast<int>(prefix.size()));
  for (int tok : prefix) session.push(tok);
  return session.state();
}

}  // namespace mtpbias
