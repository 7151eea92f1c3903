#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "mtpbias/biasing.hpp"

using namespace mtpbias;

namespace {

Tensor<float> random_logits(int k, int v, uint64_t seed) {
  Rng rng(seed);
  auto l = TensorF::zeros({k, v});
  for (int64_t i = 0; i < l.size(); ++i) l.data()[i] = static_cast<float>(rng.next_gaussian() * 2);
  return l;
}

Entity make_entity(std::vector<int> tokens) {
  std::string surface;
  for (int id : tokens) surface += vocab::piece(id);
  return {std::move(tokens), std::move(surface)};
}

}  // namespace

TEST_CASE("entity vector pads short entities with the padding token") {
  auto l = random_logits(4, 16, 1);
  auto p = build_entity_vector(l, make_entity({7, 3}));
  CHECK(p.size() == 4);
  CHECK(p[0] == l(0, 7));
  CHECK(p[1] == l(1, 3));
  CHECK(p[2] == l(2, vocab::kPad));
  CHECK(p[3] == l(3, vocab::kPad));
}

TEST_CASE("entity vector truncates long entities to the first K tokens") {
  auto l = random_logits(4, 16, 2);
  auto p = build_entity_vector(l, make_entity({7, 3, 5, 9, 11, 2}));
  CHECK(p.size() == 4);
  CHECK(p[0] == l(0, 7));
  CHECK(p[1] == l(1, 3));
  CHECK(p[2] == l(2, 5));
  CHECK(p[3] == l(3, 9));
}

TEST_CASE("the null entity reads the padding column of every head") {
  auto l = random_logits(4, 16, 3);
  BiasList list = BiasList::build({}, 4);
  auto p = build_entity_vector(l, list.null_entity());
  for (int k = 0; k < 4; ++k) CHECK(p[k] == l(k, vocab::kPad));
}

TEST_CASE("equal scores give a uniform entity posterior") {
  // Identical entities are forbidden, but identical aligned tokens across
  // row-constant logits give equal z: use logits constant per row.
  auto l = TensorF::zeros({2, 16});
  BiasList list = BiasList::build({make_entity({5, 12}), make_entity({7, 13}),
                                   make_entity({9, 14})},
                                  2);
  auto scorer = EntityScorer<float>::heuristic({0.5f, 0.5f});
  auto p = score_entities(l, list, scorer);
  CHECK(p.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(p[i] == doctest::Approx(0.25));
}

TEST_CASE("a null-only list concentrates all mass on the null entity") {
  auto l = random_logits(3, 16, 4);
  BiasList list = BiasList::build({}, 3);
  auto scorer = EntityScorer<float>::learned(3, 8, 5);
  auto p = score_entities(l, list, scorer);
  CHECK(p.size() == 1);
  CHECK(p[0] == 1.0f);
}

TEST_CASE("score_entities validates the null entity") {
  auto l = random_logits(2, 16, 5);
  BiasList broken;
  broken.entities.push_back(make_entity({5, 12}));  // no null at index 0
  auto scorer = EntityScorer<float>::heuristic({0.5f, 0.5f});
  CHECK_THROWS_AS(score_entities(l, broken, scorer), DataError);
}

TEST_CASE("entity posterior is a distribution across random inputs") {
  Rng rng(6);
  auto scorer = EntityScorer<float>::learned(3, 8, 7);
  for (int trial = 0; trial < 1000; ++trial) {
    auto l = random_logits(3, 16, 100 + trial);
    const int n = static_cast<int>(rng.next_below(6));
    std::vector<Entity> ents;
    for (int i = 0; i < n; ++i)
      ents.push_back(make_entity({static_cast<int>(rng.next_below(12)) + 3,
                                  static_cast<int>(rng.next_below(12)) + 3,
                                  static_cast<int>(i) + 3}));
    BiasList list = BiasList::build(std::move(ents), 3);
    auto p = score_entities(l, list, scorer);
    float sum = 0;
    for (int i = 0; i < p.size(); ++i) {
      CHECK(p[i] >= 0.0f);
      sum += p[i];
    }
    CHECK(std::fabs(sum - 1.0f) < 1e-6f);
  }
}

TEST_CASE("entity vectors are position-exact under off-target perturbations") {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    auto l = random_logits(4, 16, 2000 + trial);
    Entity e = make_entity({static_cast<int>(rng.next_below(16)),
                            static_cast<int>(rng.next_below(16)),
                            static_cast<int>(rng.next_below(16))});
    auto p_before = build_entity_vector(l, e);
    // Perturb one (k, v) cell that the entity does not index.
    int k, v;
    do {
      k = static_cast<int>(rng.next_below(4));
      v = static_cast<int>(rng.next_below(16));
    } while (v == (k < 3 ? e.tokens[static_cast<size_t>(k)] : vocab::kPad));
    l(k, v) += 5.0f;
    auto p_after = build_entity_vector(l, e);
    for (int i = 0; i < 4; ++i) CHECK(p_before[i] == p_after[i]);
  }
}

TEST_CASE("scoring is equivariant under permutations of the real entities") {
  Rng rng(9);
  auto learned = EntityScorer<float>::learned(3, 8, 10);
  auto heuristic = EntityScorer<float>::heuristic({0.2f, 0.5f, 0.3f});
  for (int trial = 0; trial < 1000; ++trial) {
    auto l = random_logits(3, 16, 3000 + trial);
    std::vector<Entity> ents;
    const int n = 2 + static_cast<int>(rng.next_below(4));
    for (int i = 0; i < n; ++i)
      ents.push_back(make_entity({static_cast<int>(rng.next_below(16)),
                                  static_cast<int>(rng.next_below(16)), 3 + i}));
    // random permutation of 0..n-1
    std::vector<int> perm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i)
      std::swap(perm[static_cast<size_t>(i)],
                perm[static_cast<size_t>(rng.next_below(static_cast<uint64_t>(i + 1)))]);
    std::vector<Entity> permuted;
    for (int i = 0; i < n; ++i) permuted.push_back(ents[static_cast<size_t>(perm[static_cast<size_t>(i)])]);

    const EntityScorer<float>& scorer = (trial % 2 == 0) ? learned : heuristic;
    auto p = score_entities(l, BiasList::build(ents, 3), scorer);
    auto q = score_entities(l, BiasList::build(permuted, 3), scorer);
    CHECK(q[0] == doctest::Approx(p[0]).epsilon(1e-5));
    for (int i = 0; i < n; ++i)
      CHECK(q[i + 1] == doctest::Approx(p[perm[static_cast<size_t>(i)] + 1]).epsilon(1e-4));
  }
}

TEST_CASE("heuristic score with selector and uniform weights") {
  auto p = TensorF::from_data({4}, {2.0f, -1.0f, 0.5f, 3.0f});
  CHECK(heuristic_score(p, {1, 0, 0, 0}) == doctest::Approx(2.0));
  CHECK(heuristic_score(p, {0.25f, 0.25f, 0.25f, 0.25f}) == doctest::Approx(1.125));
  auto zero = TensorF::zeros({4});
  CHECK(heuristic_score(zero, {0.9f, 0.1f, -2.0f, 7.0f}) == 0.0f);
  CHECK_THROWS_AS(heuristic_score(p, {1.0f, 2.0f}), DimensionError);
}

TEST_CASE("bias list construction enforces its invariants") {
  CHECK_THROWS_AS(BiasList::build({make_entity({5}), make_entity({5})}, 2), DataError);
  CHECK_THROWS_AS(BiasList::build({{{}, "empty"}}, 2), DataError);
  CHECK_THROWS_AS(BiasList::build({{{vocab::kPad, 5}, "padded"}}, 2), DataError);
  BiasList ok = BiasList::build({make_entity({5, 6})}, 3);
  CHECK(ok.n_real() == 1);
  CHECK(ok.entities[0].tokens == std::vector<int>{0, 0, 0});
  CHECK(ok.index_of(ok.entities[1].surface) == 1);
  CHECK(ok.index_of("missing") == -1);
}

TEST_CASE("learned scorer gradients flow and match finite differences") {
  Rng rng(44);
  auto scorer = EntityScorer<double>::learned(3, 8, 12);
  auto p = gradcheck::random_tensor({5, 3}, rng);
  std::vector<Tensor<double>> params = scorer.parameters();
  params.push_back(p);
  std::vector<std::string> names = {"w1", "b1", "w2", "b2", "p"};
  auto failures = gradcheck::compare(params, names, [&] {
    auto z = scorer.score_rows(p);
    return ops::cross_entropy_rows(ops::reshape(z, {1, 5}), {2}, {1.0});
  });
  CHECK(failures.empty());
}
