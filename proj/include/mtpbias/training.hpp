#pragma once

#include <span>
#include <string>
#include <vector>

#include "mtpbias/adam.hpp"
#include "mtpbias/biasing.hpp"
#include "mtpbias/corpus.hpp"
#include "mtpbias/decoding.hpp"
#include "mtpbias/model.hpp"

namespace mtpbias {

struct TrainingConfig {
  std::vector<double> alpha = {1.0, 0.2, 0.1, 0.05};  // per-head loss weights
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 1e-3;
  int warmup_steps = 200;
  uint64_t seed = 1234;
  int min_pos = 1;
  int max_pos = 4;
  int kappa = 2;
  bool biasing_enabled = true;
  std::string scorer = "learned";  // or "heuristic"
  std::vector<double> heuristic_weights;  // empty = uniform 1/K
  int scorer_hidden = 16;
  // Per-epoch monitoring decode on dev, also used for best-checkpoint choice.
  int dev_bias_n = 100;
  double dev_lambda = 1.0;
  double dev_gamma = 0.0;
  int max_decode_len = 96;

  void validate(int k_heads) const {
    if (static_cast<int>(alpha.size()) != k_heads)
      throw ConfigError("training.alpha: " + std::to_string(alpha.size()) + " weights for K=" +
                        std::to_string(k_heads) + " heads");
    if (alpha.empty() || alpha[0] <= 0) throw ConfigError("training.alpha: alpha[0] must be > 0");
    if (epochs < 1 || batch_size < 1) throw ConfigError("training: epochs and batch must be >= 1");
    if (learning_rate <= 0) throw ConfigError("training.lr must be > 0");
    if (warmup_steps < 0) throw ConfigError("training.warmup must be >= 0");
    if (scorer != "learned" && scorer != "heuristic")
      throw ConfigError("training.scorer must be 'learned' or 'heuristic'");
    if (!heuristic_weights.empty() && static_cast<int>(heuristic_weights.size()) != k_heads)
      throw ConfigError("training.heuristic_weights must have K entries");
  }

  SamplerConfig sampler() const { return {min_pos, max_pos, kappa}; }
};

// Per-step supervision index into the bias list: tau[t] = n when entity n
// begins right after prefix position t, else 0 (the null entity).
struct EntityTargets {
  std::vector<int> tau;
};

EntityTargets build_entity_targets(const Utterance& utt, const BiasList& list,
                                   const EntityInventory& inventory);

// Multi-task cross-entropy over the K heads. head_logits[k-1] holds the
// [S x V] logits of head k for steps t = 0..S-1; head k's target at step t
// is transcript[t + k]. Positions past the transcript end are excluded from
// the sum and from the per-head normalizer. Heads with zero weight need not
// be supplied.
template <typename S>
Tensor<S> mtp_loss(const std::vector<Tensor<S>>& head_logits, std::span<const int> transcript,
                   std::span<const double> alpha) {
  const int steps = static_cast<int>(transcript.size()) - 1;
  if (steps < 1) throw DataError("mtp_loss: transcript needs at least BOS plus one token");
  Tensor<S> total;
  for (size_t ki = 0; ki < alpha.size(); ++ki) {
    if (alpha[ki] == 0.0) continue;
    const int k = static_cast<int>(ki) + 1;
    const int valid = steps - k + 1;
    if (valid <= 0) continue;
    if (ki >= head_logits.size())
      throw DimensionError("mtp_loss: weight for head " + std::to_string(k) +
                           " but only " + std::to_string(head_logits.size()) + " heads");
    const Tensor<S>& logits = head_logits[ki];
    if (!logits.defined() || logits.rows() != steps)
      throw DimensionError("mtp_loss: head " + std::to_string(k) + " logits missing or not " +
                           std::to_string(steps) + " rows");
    std::vector<int> targets(static_cast<size_t>(steps), 0);
    std::vector<S> weights(static_cast<size_t>(steps), S(0));
    const S w = static_cast<S>(alpha[ki] / static_cast<double>(valid));
    for (int t = 0; t < valid; ++t) {
      targets[static_cast<size_t>(t)] = transcript[static_cast<size_t>(t + k)];
      weights[static_cast<size_t>(t)] = w;
    }
    Tensor<S> term = ops::cross_entropy_rows(logits, std::move(targets), std::move(weights));
    total = total.defined() ? ops::add(total, term) : term;
  }
  if (!total.defined()) throw DataError("mtp_loss: no head carries a nonzero weight");
  return total;
}

// Entity classification loss: mean over steps of -log P_e(tau_s). Gradients
// reach both the scorer and, through the gathered logits, the MTP heads.
template <typename S>
Tensor<S> entity_loss(const std::vector<Tensor<S>>& head_logits, const BiasList& list,
                      const EntityScorer<S>& scorer, const EntityTargets& targets) {
  const int steps = static_cast<int>(targets.tau.size());
  const int m = static_cast<int>(list.entities.size());
  std::vector<int> table = aligned_token_table(list, static_cast<int>(head_logits.size()));
  Tensor<S> p = ops::entity_gather(head_logits, std::move(table), m);
  Tensor<S> z = ops::reshape(scorer.score_rows(std::move(p)), {steps, m});
  std::vector<S> weights(static_cast<size_t>(steps), S(1) / static_cast<S>(steps));
  return ops::cross_entropy_rows(std::move(z), targets.tau, std::move(weights));
}

// Reference value of the entity loss given per-step posteriors; used by
// tests as the literal definition.
template <typename S>
double entity_loss_value(const Tensor<S>& p_e_rows, const std::vector<int>& tau) {
  double total = 0;
  for (size_t t = 0; t < tau.size(); ++t)
    total -= std::log(static_cast<double>(p_e_rows(static_cast<int>(t), tau[t])));
  return total / static_cast<double>(tau.size());
}

// Model plus scorer, with the flat named-parameter view used by the
// optimizer and the checkpoint format.
struct SystemParams {
  ModelParams<float> model;
  EntityScorer<float> scorer;
  std::vector<std::pair<std::string, Tensor<float>>> all_named;
  std::vector<Tensor<float>> all_params;
};

SystemParams build_system(const ModelDims& dims, const TrainingConfig& cfg);
void load_system_checkpoint(SystemParams& sys, const std::string& stem);

struct EpochLog {
  int epoch = 0;
  double avg_mtp = 0, avg_entity = 0;
  double dev_wer = 0, dev_bwer = 0, dev_uwer = 0;
};

struct TrainResult {
  int best_epoch = -1;
  double best_dev_wer = 0;
  std::vector<EpochLog> epochs;
};

struct TrainerOptions {
  ModelDims dims;
  TrainingConfig training;
  int jobs = 1;
};

// End-to-end optimization of L_MTP + L_entity with teacher forcing.
// Writes model.best / model.last checkpoints, the Adam state, and the loss
// curve CSV into out_dir. With resume = true, continues from the last
// checkpoint; given the same seed the continuation matches an uninterrupted
// run exactly.
TrainResult train_model(const Corpus& corpus, const TrainerOptions& options,
                        const std::string& out_dir, bool resume = false);

// Forward pass + losses for one utterance; exposed for tests.
struct UtteranceLosses {
  Tensor<float> mtp;
  Tensor<float> entity;  // undefined when biasing is off
};
UtteranceLosses utterance_losses(const ModelParams<float>& params,
                                 const EntityScorer<float>& scorer, const Utterance& utt,
                                 const BiasList* list, const EntityInventory& inventory,
                                 std::span<const double> alpha, bool biasing);

}  // namespace mtpbias
