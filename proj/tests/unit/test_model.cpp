#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "gradcheck.hpp"
#include "mtpbias/model.hpp"
#include "mtpbias/session.hpp"

using namespace mtpbias;

namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.d = 16;
  d.vocab = 16;
  d.k_heads = 3;
  d.enc_layers = 1;
  d.dec_layers = 1;
  d.attn_heads = 2;
  d.d_audio = 4;
  d.ffn_mult = 2;
  return d;
}

TensorF random_features(int t, int d_audio, uint64_t seed) {
  Rng rng(seed);
  auto f = TensorF::zeros({t, d_audio});
  for (int64_t i = 0; i < f.size(); ++i) f.data()[i] = static_cast<float>(rng.next_gaussian());
  return f;
}

}  // namespace

TEST_CASE("encode shape contract and empty-input rejection") {
  auto params = ModelParams<float>::init(tiny_dims(), 1);
  auto one = encode(params, random_features(1, 4, 2));
  CHECK(one.states.rows() == 1);
  CHECK(one.states.cols() == 16);
  CHECK_THROWS_AS(encode(params, TensorF::zeros({0, 4})), DataError);
  CHECK_THROWS_AS(encode(params, TensorF::zeros({3, 5})), DataError);
}

TEST_CASE("encode is deterministic") {
  auto params = ModelParams<float>::init(tiny_dims(), 1);
  auto f = random_features(5, 4, 3);
  auto a = encode(params, f);
  auto b = encode(params, f);
  CHECK(std::memcmp(a.states.data(), b.states.data(),
                    sizeof(float) * static_cast<size_t>(a.states.size())) == 0);
}

TEST_CASE("positional encodings make frame order matter") {
  auto params = ModelParams<float>::init(tiny_dims(), 1);
  auto f = random_features(6, 4, 4);
  auto swapped = TensorF::from_data(f.shape(),
                                    std::vector<float>(f.data(), f.data() + f.size()));
  for (int j = 0; j < 4; ++j) std::swap(swapped(1, j), swapped(4, j));
  auto a = encode(params, f);
  auto b = encode(params, swapped);
  double diff = 0;
  for (int64_t i = 0; i < a.states.size(); ++i)
    diff = std::max(diff, std::fabs(double(a.states.data()[i]) - b.states.data()[i]));
  CHECK(diff > 1e-4);
}

TEST_CASE("decoder causality: future tokens do not change earlier states") {
  auto params = ModelParams<float>::init(tiny_dims(), 7);
  auto enc = encode(params, random_features(6, 4, 5));
  std::vector<int> prefix = {vocab::kBos, 5, 9, 3};
  std::vector<int> longer = {vocab::kBos, 5, 9, 3, 12, 8};
  auto h_short = decoder_states<float>(params, prefix, enc);
  auto h_long = decoder_states<float>(params, longer, enc);
  // Masked attention underflows exactly to zero weight, so the shared rows
  // agree bit for bit.
  CHECK(std::memcmp(h_short.data(), h_long.data(),
                    sizeof(float) * static_cast<size_t>(h_short.size())) == 0);
}

TEST_CASE("decoder requires a BOS-led prefix and in-range tokens") {
  auto params = ModelParams<float>::init(tiny_dims(), 7);
  auto enc = encode(params, random_features(4, 4, 6));
  std::vector<int> no_bos = {5, 9};
  CHECK_THROWS_AS(decoder_states<float>(params, no_bos, enc), DataError);
  std::vector<int> oob = {vocab::kBos, 16};
  CHECK_THROWS_AS(decoder_states<float>(params, oob, enc), IndexError);
  std::vector<int> bos_only = {vocab::kBos};
  auto h = decoder_states<float>(params, bos_only, enc);
  CHECK(h.rows() == 1);
  for (int j = 0; j < h.cols(); ++j) CHECK(std::isfinite(h(0, j)));
}

TEST_CASE("incremental decoding agrees with full recomputation within 1e-5") {
  auto params = ModelParams<float>::init(tiny_dims(), 9);
  auto enc = encode(params, random_features(8, 4, 7));
  std::vector<int> prefix = {vocab::kBos, 4, 11, 2, 7, 13, 6};
  auto full = decoder_states<float>(params, prefix, enc);
  DecoderSession<float> session(params, enc, 16);
  for (size_t i = 0; i < prefix.size(); ++i) {
    session.push(prefix[i]);
    const auto& inc = session.state();
    for (int j = 0; j < full.cols(); ++j)
      CHECK(std::fabs(inc[j] - full(static_cast<int>(i), j)) < 1e-5);
  }
  // The session computes the same K x V block as the graph path.
  auto block = mtp_logits_at(params, ops::slice_rows(full, full.rows() - 1, 1));
  auto inc_block = session.mtp_logits();
  for (int k = 0; k < block.rows(); ++k)
    for (int v = 0; v < block.cols(); ++v)
      CHECK(std::fabs(block(k, v) - inc_block(k, v)) < 1e-5f);
}

TEST_CASE("with K=1 the head output is exactly the shared projection of the state") {
  ModelDims dims = tiny_dims();
  dims.k_heads = 1;
  auto params = ModelParams<float>::init(dims, 21);
  auto enc = encode(params, random_features(5, 4, 8));
  std::vector<int> prefix = {vocab::kBos, 3, 6};
  auto h = decoder_states<float>(params, prefix, enc);
  auto l = head_logits(params, h, 1);
  auto baseline = ops::matmul(h, params.w_o);
  CHECK(std::memcmp(l.data(), baseline.data(),
                    sizeof(float) * static_cast<size_t>(l.size())) == 0);
}

TEST_CASE("head rows are order-independent pure functions of the state") {
  auto params = ModelParams<float>::init(tiny_dims(), 23);
  auto enc = encode(params, random_features(5, 4, 9));
  std::vector<int> prefix = {vocab::kBos, 3, 6, 1};
  auto h = decoder_states<float>(params, prefix, enc);
  auto l3_first = head_logits(params, h, 3);
  auto l2 = head_logits(params, h, 2);
  auto l3_again = head_logits(params, h, 3);
  CHECK(std::memcmp(l3_first.data(), l3_again.data(),
                    sizeof(float) * static_cast<size_t>(l3_first.size())) == 0);
  CHECK(l2.rows() == l3_first.rows());
}

TEST_CASE("identity heads with identity projection reproduce the state in every row") {
  ModelDims dims = tiny_dims();
  dims.vocab = dims.d;  // W_o can be the identity only when V == d
  auto params = ModelParams<float>::init(dims, 25);
  // Freeze the head blocks to the identity by zeroing their output layers.
  for (auto& blk : params.head_blocks) {
    std::fill(blk.w2.data(), blk.w2.data() + blk.w2.size(), 0.0f);
    std::fill(blk.b2.data(), blk.b2.data() + blk.b2.size(), 0.0f);
  }
  std::fill(params.w_o.data(), params.w_o.data() + params.w_o.size(), 0.0f);
  for (int i = 0; i < dims.d; ++i) params.w_o(i, i) = 1.0f;

  auto enc = encode(params, random_features(4, 4, 10));
  std::vector<int> prefix = {vocab::kBos, 2};
  auto h = decoder_states<float>(params, prefix, enc);
  auto block = mtp_logits_at(params, ops::slice_rows(h, h.rows() - 1, 1));
  for (int k = 0; k < dims.k_heads; ++k)
    for (int j = 0; j < dims.d; ++j)
      CHECK(block(k, j) == doctest::Approx(h(h.rows() - 1, j)).epsilon(1e-6));
}

TEST_CASE("parameter initialization is name-keyed: shared tensors match across K") {
  ModelDims d1 = tiny_dims();
  ModelDims d4 = tiny_dims();
  d1.k_heads = 1;
  d4.k_heads = 4;
  auto p1 = ModelParams<float>::init(d1, 77);
  auto p4 = ModelParams<float>::init(d4, 77);
  CHECK(std::memcmp(p1.w_o.data(), p4.w_o.data(),
                    sizeof(float) * static_cast<size_t>(p1.w_o.size())) == 0);
  CHECK(std::memcmp(p1.embed.data(), p4.embed.data(),
                    sizeof(float) * static_cast<size_t>(p1.embed.size())) == 0);
}

TEST_CASE("encoder and decoder blocks pass finite-difference checks") {
  ModelDims dims;
  dims.d = 8;
  dims.vocab = 10;
  dims.k_heads = 2;
  dims.enc_layers = 1;
  dims.dec_layers = 1;
  dims.attn_heads = 2;
  dims.d_audio = 3;
  dims.ffn_mult = 2;
  auto params = ModelParams<double>::init(dims, 31);
  Rng rng(33);
  auto feats = gradcheck::random_tensor({4, 3}, rng, 1.0, false);
  std::vector<int> prefix = {vocab::kBos, 4, 7};
  std::vector<int> transcript = {vocab::kBos, 4, 7, vocab::kEos};
  std::vector<double> alpha = {1.0, 0.2};

  std::vector<Tensor<double>> checked;
  std::vector<std::string> names;
  for (auto& [name, t] : params.named) {
    checked.push_back(t);
    names.push_back(name);
  }
  auto failures = gradcheck::compare(
      checked, names,
      [&] {
        auto enc = encode(params, feats);
        auto h = decoder_states<double>(params, prefix, enc);
        std::vector<Tensor<double>> heads;
        for (int k = 1; k <= dims.k_heads; ++k) heads.push_back(head_logits(params, h, k));
        return mtp_loss<double>(heads, transcript, alpha);
      },
      3, 55);
  for (const auto& f : failures)
    MESSAGE("gradient mismatch at ", f.where, ": analytic ", f.analytic, " numeric ", f.numeric);
  CHECK(failures.empty());
}
