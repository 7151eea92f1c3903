#pragma once

#include <set>
#include <string>
#include <vector>

#include "mtpbias/decoding.hpp"
#include "mtpbias/metrics.hpp"

namespace mtpbias {

struct EvalOutcome {
  EvalReport report;
  std::vector<Hypothesis> hypotheses;
};

// Surfaces of the list's real entities; what counts as a "bias word".
std::set<std::string> bias_word_set(const BiasList& list);

// Surfaces of the entities actually mentioned in a split's references; used
// to score no-bias decodes, where the decode list is null-only.
std::set<std::string> true_entity_surfaces(const std::vector<Utterance>& utts,
                                           const EntityInventory& inventory);

// Decode every utterance against one bias list, then score against the
// references with the given bias-word attribution set.
EvalOutcome evaluate_split(const ModelParams<float>& params, const EntityScorer<float>& scorer,
                           const std::vector<Utterance>& utts, const BiasList& list,
                           const std::set<std::string>& bias_words, const DecodeConfig& cfg,
                           int jobs = 1);

}  // namespace mtpbias
