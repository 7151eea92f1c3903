#include "mtpbias/eval.hpp"

#include "mtpbias/vocab.hpp"

namespace mtpbias {

std::set<std::string> bias_word_set(const BiasList& list) {
  std::set<std::string> words;
  for (size_t i = 1; i < list.entities.size(); ++i) words.insert(list.entities[i].surface);
  return words;
}

std::set<std::string> true_entity_surfaces(const std::vector<Utterance>& utts,
                                           const EntityInventory& inventory) {
  std::set<std::string> words;
  for (const auto& u : utts)
    for (const auto& s : u.spans) words.insert(inventory.by_gid(s.entity_gid).surface);
  return words;
}

EvalOutcome evaluate_split(const ModelParams<float>& params, const EntityScorer<float>& scorer,
                           const std::vector<Utterance>& utts, const BiasList& list,
                           const std::set<std::string>& bias_words, const DecodeConfig& cfg,
                           int jobs) {
  EvalOutcome out;
  out.hypotheses = batch_decode(params, scorer, utts, list, cfg, jobs);
  std::vector<EvalReport> reports;
  reports.reserve(utts.size());
  for (size_t i = 0; i < utts.size(); ++i) {
    const auto ref = vocab::detokenize(utts[i].transcript);
    const auto hyp = vocab::detokenize(out.hypotheses[i].tokens);
    reports.push_back(biased_wer(align(ref, hyp), ref, hyp, bias_words));
  }
  out.report = aggregate(reports);
  return out;
}

}  // namespace mtpbias
