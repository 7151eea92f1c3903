#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mtpbias/biasing.hpp"
#include "mtpbias/corpus.hpp"
#include "mtpbias/session.hpp"

namespace mtpbias {

struct DecodeConfig {
  double lambda = 1.0;  // biasing weight; 0 disables the entity branch
  double gamma = 0.0;   // confidence threshold; 0 never prunes
  int max_len = 96;     // emitted-token cap

  void validate() const {
    if (lambda < 0) throw ConfigError("decode.lambda must be >= 0");
    if (gamma < 0 || gamma > 1) throw ConfigError("decode.gamma must be in [0, 1]");
    if (max_len < 1) throw ConfigError("decode.max_len must be >= 1");
  }
};

// The merged per-step score table Q: the static branch is the next-token
// distribution gated by the no-entity prior, the entity branch is the scaled
// entity posterior.
struct UnifiedDistribution {
  std::vector<float> static_scores;  // size V: P_e(null) * P1(i)
  std::vector<float> entity_scores;  // size N: lambda * P_e(n)
};

// Confidence threshold: when even the best real entity falls below gamma,
// the entity posterior collapses onto the null entity. Applying it twice is
// the same as applying it once.
void apply_confidence_threshold(std::vector<float>& p_e, double gamma);

UnifiedDistribution unified_scores(const MatrixRM<float>& mtp_logits,
                                   std::vector<float> p_e, const DecodeConfig& cfg);

// Entity posterior from raw head logits, outside the tape. Matches the
// graph-path score_entities() up to float reassociation.
std::vector<float> entity_posterior(const MatrixRM<float>& mtp_logits,
                                    const std::vector<int>& aligned_tokens, int m_entities,
                                    const EntityScorer<float>& scorer);

struct Hypothesis {
  std::vector<int> tokens;  // emitted tokens (no BOS), entities fully expanded
  std::vector<std::pair<int, int>> emitted_entities;  // (token position, bias-list index)
  bool truncated = false;
};

// Anything that can consume a token and report the current K x V logits.
class LogitStepper {
 public:
  virtual ~LogitStepper() = default;
  virtual void push(int token) = 0;
  virtual MatrixRM<float> mtp_logits() = 0;
};

// Greedy argmax over the unified space. A winning entity contributes its
// full token sequence (not just the K scored tokens) and decoding then
// continues with the expansion as ordinary history. Ties go to the static
// branch, then to the lowest index.
Hypothesis greedy_search(LogitStepper& stepper, const BiasList& list,
                         const EntityScorer<float>& scorer, const DecodeConfig& cfg);

Hypothesis greedy_decode(const ModelParams<float>& params, const EntityScorer<float>& scorer,
                         const EncoderStates<float>& enc, const BiasList& list,
                         const DecodeConfig& cfg);

std::vector<Hypothesis> batch_decode(const ModelParams<float>& params,
                                     const EntityScorer<float>& scorer,
                                     const std::vector<Utterance>& utts, const BiasList& list,
                                     const DecodeConfig& cfg, int jobs = 1);

// One line per utterance: id TAB expanded token ids TAB entity trace.
void save_hypotheses(const std::vector<Hypothesis>& hyps, const std::string& path);

}  // namespace mtpbias
