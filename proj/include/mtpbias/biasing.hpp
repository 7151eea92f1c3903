#pragma once

#include <algorithm>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mtpbias/model.hpp"
#include "mtpbias/ops.hpp"
#include "mtpbias/rng.hpp"
#include "mtpbias/tensor.hpp"
#include "mtpbias/vocab.hpp"

namespace mtpbias {

struct Entity {
  std::vector<int> tokens;
  std::string surface;
};

// Ordered candidate entities with the null entity at index 0. The null
// entity stands for "no entity starts here" and is made of padding tokens.
struct BiasList {
  std::vector<Entity> entities;

  int n_real() const { return static_cast<int>(entities.size()) - 1; }
  const Entity& null_entity() const { return entities[0]; }

  static BiasList build(std::vector<Entity> real, int k_heads) {
    BiasList list;
    list.entities.reserve(real.size() + 1);
    list.entities.push_back({std::vector<int>(static_cast<size_t>(k_heads), vocab::kPad), "<null>"});
    std::unordered_set<std::string> seen;
    for (auto& e : real) {
      if (e.tokens.empty()) throw DataError("bias list: entity '" + e.surface + "' has no tokens");
      for (int id : e.tokens)
        if (id == vocab::kPad)
          throw DataError("bias list: entity '" + e.surface + "' contains the padding token");
      if (!seen.insert(e.surface).second)
        throw DataError("bias list: duplicate entity surface '" + e.surface + "'");
      list.entities.push_back(std::move(e));
    }
    return list;
  }

  // Index of a surface within the list, or -1.
  int index_of(const std::string& surface) const {
    for (size_t i = 1; i < entities.size(); ++i)
      if (entities[i].surface == surface) return static_cast<int>(i);
    return -1;
  }
};

// Aligned token table: row n holds the token each head is matched against
// for entity n (padded to K with the padding token, truncated past K).
// Row 0 is the null entity, i.e. all padding.
inline std::vector<int> aligned_token_table(const BiasList& list, int k_heads) {
  std::vector<int> table(static_cast<size_t>(list.entities.size()) * k_heads, vocab::kPad);
  for (size_t n = 0; n < list.entities.size(); ++n) {
    const auto& toks = list.entities[n].tokens;
    const int len = std::min<int>(static_cast<int>(toks.size()), k_heads);
    for (int k = 0; k < len; ++k) table[n * static_cast<size_t>(k_heads) + k] = toks[static_cast<size_t>(k)];
  }
  return table;
}

// p_n: head k's logit for the entity's k-th sub-word. Entities shorter than
// K index the padding token in the remaining slots; longer entities are
// approximated by their first K tokens.
template <typename S>
Tensor<S> build_entity_vector(const Tensor<S>& logits, const Entity& entity) {
  const int k_heads = logits.rows();
  const int v = logits.cols();
  std::vector<S> p(static_cast<size_t>(k_heads));
  for (int k = 0; k < k_heads; ++k) {
    const int tok = k < static_cast<int>(entity.tokens.size()) ? entity.tokens[static_cast<size_t>(k)]
                                                               : vocab::kPad;
    if (tok < 0 || tok >= v)
      throw IndexError("build_entity_vector: token id " + std::to_string(tok) + " out of range");
    p[static_cast<size_t>(k)] = logits(k, tok);
  }
  return Tensor<S>::from_data({k_heads}, std::move(p));
}

enum class ScorerKind { kLearned, kHeuristic };

// Entity scoring function. The learned form is f_theta: a K -> hidden -> 1
// feed-forward network with tanh, shared across every entity in the list.
// The heuristic form is a fixed weighted sum of the aligned logits.
template <typename S>
struct EntityScorer {
  ScorerKind kind = ScorerKind::kLearned;
  int k_heads = 0;
  Tensor<S> w1, b1, w2, b2;           // learned parameters
  std::vector<S> heuristic_weights;   // |w| == K
  std::vector<std::pair<std::string, Tensor<S>>> named;

  static EntityScorer learned(int k_heads, int hidden, uint64_t seed) {
    EntityScorer s;
    s.kind = ScorerKind::kLearned;
    s.k_heads = k_heads;
    ParamRegistry<S> reg(seed);
    s.w1 = reg.weight("scorer.w1", k_heads, hidden);
    s.b1 = reg.bias("scorer.b1", hidden);
    s.w2 = reg.weight("scorer.w2", hidden, 1);
    s.b2 = reg.bias("scorer.b2", 1);
    s.named = reg.take();
    return s;
  }

  static EntityScorer heuristic(std::vector<S> weights) {
    EntityScorer s;
    s.kind = ScorerKind::kHeuristic;
    s.k_heads = static_cast<int>(weights.size());
    s.heuristic_weights = std::move(weights);
    return s;
  }

  std::vector<Tensor<S>> parameters() const {
    std::vector<Tensor<S>> out;
    for (const auto& [_, t] : named) out.push_back(t);
    return out;
  }
  void set_requires_grad(bool v) {
    for (auto& [_, t] : named) t.set_requires_grad(v);
  }
  void zero_grad() {
    for (auto& [_, t] : named) t.zero_grad();
  }

  // Scores a batch of entity logit vectors, rows of p [M x K] -> z [M].
  Tensor<S> score_rows(Tensor<S> p) const {
    if (p.cols() != k_heads)
      throw DimensionError("entity scorer: got " + shape_str(p.shape()) + ", expected K=" +
                           std::to_string(k_heads) + " columns");
    if (kind == ScorerKind::kLearned) {
      Tensor<S> h = ops::tanh(ops::add_rowvec(ops::matmul(p, w1), b1));
      Tensor<S> z = ops::add_rowvec(ops::matmul(h, w2), b2);
      return ops::reshape(z, {p.rows()});
    }
    Tensor<S> w = Tensor<S>::from_data({k_heads, 1},
                                       std::vector<S>(heuristic_weights.begin(),
                                                      heuristic_weights.end()));
    return ops::reshape(ops::matmul(p, w), {p.rows()});
  }
};

// Weighted sum of aligned logits, the manual scoring ablation.
template <typename S>
S heuristic_score(const Tensor<S>& p, const std::vector<S>& weights) {
  if (static_cast<int>(weights.size()) != p.size())
    throw DimensionError("heuristic_score: " + std::to_string(weights.size()) + " weights for " +
                         shape_str(p.shape()));
  S z = S(0);
  for (int k = 0; k < p.size(); ++k) z += weights[static_cast<size_t>(k)] * p[k];
  return z;
}

// Posterior over the bias list at one step: P_e = softmax(f(p_n) for all n),
// with the null entity participating like any other candidate.
template <typename S>
Tensor<S> score_entities(const Tensor<S>& logits, const BiasList& list,
                         const EntityScorer<S>& scorer) {
  if (list.entities.empty() || list.entities[0].tokens.empty() ||
      list.entities[0].tokens[0] != vocab::kPad)
    throw DataError("score_entities: bias list must carry the null entity at index 0");
  const int k_heads = logits.rows();
  const int m = static_cast<int>(list.entities.size());
  std::vector<int> table = aligned_token_table(list, k_heads);
  std::vector<Tensor<S>> rows;
  rows.reserve(static_cast<size_t>(k_heads));
  Tensor<S> l = logits;
  for (int k = 0; k < k_heads; ++k) rows.push_back(ops::slice_rows(l, k, 1));
  Tensor<S> p = ops::entity_gather(std::move(rows), std::move(table), m);
  Tensor<S> z = scorer.score_rows(std::move(p));
  return ops::softmax(std::move(z));
}

}  // namespace mtpbias
