#pragma once

#include <span>
#include <string>
#include <vector>

#include "mtpbias/biasing.hpp"
#include "mtpbias/rng.hpp"
#include "mtpbias/tensor.hpp"

namespace mtpbias {

// Synthetic corpus: carrier-token utterances with a few embedded multi-token
// entities, plus per-token prototype features. Entities draw on token ids
// the carrier text never uses, and dev/test entities never occur in training
// transcripts, so the zero-shot condition holds by construction.
struct CorpusConfig {
  uint64_t seed = 7;
  int train_utts = 2000;
  int dev_utts = 200;
  int test_utts = 200;
  int min_carriers = 5;
  int max_carriers = 15;
  double p_zero_entities = 0.20;  // per-utterance entity count: 0, 1 or 2
  double p_one_entity = 0.50;
  int train_entity_count = 500;
  int test_entity_count = 150;
  int active_entities = 60;  // slice of test entities each eval split draws on
  std::vector<double> length_weights = {0.15, 0.40, 0.32, 0.13};  // lengths 2..5
  int d_audio = 16;
  int repeat = 2;       // feature frames per token
  double sigma = 0.3;   // feature noise
  double entity_sigma_scale = 3.0;  // extra noise on entity-token frames
  int carrier_lo = vocab::kCarrierFirst;
  int carrier_hi = vocab::kCarrierLast;
  int entity_lo = vocab::kEntityStartFirst;
  int entity_hi = vocab::kEntityContLast;

  void validate() const;
};

struct Span {
  int start;       // index of the entity's first token within the transcript
  int entity_gid;  // index into the inventory (train entities first)
};

struct Utterance {
  std::vector<int> transcript;  // BOS ... EOS
  TensorF features;             // [repeat * transcript length, d_audio]
  std::vector<Span> spans;
};

struct EntityInventory {
  std::vector<Entity> entities;  // train entities, then test entities
  int train_count = 0;
  int test_count = 0;

  const Entity& by_gid(int gid) const { return entities[static_cast<size_t>(gid)]; }
  bool is_test_gid(int gid) const { return gid >= train_count; }
  int size() const { return static_cast<int>(entities.size()); }
};

struct CorpusStats {
  std::vector<int> length_histogram;  // index = token count
  double avg_tokens = 0.0;
  double frac_le4 = 0.0;
};

struct Corpus {
  CorpusConfig config;
  EntityInventory inventory;
  std::vector<Utterance> train, dev, test;
  CorpusStats stats;

  const std::vector<Utterance>& split(const std::string& name) const;
};

Corpus generate_corpus(const CorpusConfig& config);
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

CorpusStats compute_inventory_stats(const EntityInventory& inventory);

// Training-time bias list sampling: the batch's own entities form B+, then
// kappa * |B+| negatives are drawn from the training inventory, then the
// null entity is prepended. Duplicate mentions deduplicate by surface.
struct SamplerConfig {
  int min_pos = 1;
  int max_pos = 4;
  int kappa = 2;

  void validate() const {
    if (min_pos < 0 || kappa < 0 || max_pos < min_pos)
      throw ConfigError("sampler: need 0 <= min_pos <= max_pos and kappa >= 0");
  }
};

BiasList sample_bias_list(const std::vector<const Utterance*>& batch,
                          const EntityInventory& inventory, const SamplerConfig& cfg, Rng& rng,
                          int k_heads);

// Evaluation bias list: every true entity of the evaluated utterances plus
// seed-stable distractors up to size n. n = 0 yields the null-only list.
BiasList build_eval_bias_list(const std::vector<Utterance>& utts,
                              const EntityInventory& inventory, int n, uint64_t seed,
                              int k_heads);

// Bias-list file format: one entity per line, surface TAB space-separated
// token ids; '#' lines are comments; the null entity is implicit.
void save_bias_list(const BiasList& list, const std::string& path);
BiasList load_bias_list(const std::string& path, int k_heads);

}  // namespace mtpbias
