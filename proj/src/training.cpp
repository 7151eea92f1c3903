#include "mtpbias/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mtpbias/checkpoint.hpp"
#include "mtpbias/eval.hpp"

namespace mtpbias {

namespace fs = std::filesystem;

EntityTargets build_entity_targets(const Utterance& utt, const BiasList& list,
                                   const EntityInventory& inventory) {
  const int steps = static_cast<int>(utt.transcript.size()) - 1;
  EntityTargets targets;
  targets.tau.assign(static_cast<size_t>(steps), 0);
  for (const auto& span : utt.spans) {
    const Entity& e = inventory.by_gid(span.entity_gid);
    const int idx = list.index_of(e.surface);
    if (idx < 0)
      throw DataError("entity supervision: '" + e.surface + "' missing from the bias list");
    const int t = span.start - 1;
    if (t < 0 || t >= steps)
      throw DataError("entity supervision: span start " + std::to_string(span.start) +
                      " outside the transcript");
    const int prev = targets.tau[static_cast<size_t>(t)];
    // Two entities beginning at one step: the longer one labels it.
    if (prev == 0 || list.entities[static_cast<size_t>(idx)].tokens.size() >
                         list.entities[static_cast<size_t>(prev)].tokens.size())
      targets.tau[static_cast<size_t>(t)] = idx;
  }
  return targets;
}

UtteranceLosses utterance_losses(const ModelParams<float>& params,
                                 const EntityScorer<float>& scorer, const Utterance& utt,
                                 const BiasList* list, const EntityInventory& inventory,
                                 std::span<const double> alpha, bool biasing) {
  const auto& transcript = utt.transcript;
  const int steps = static_cast<int>(transcript.size()) - 1;
  EncoderStates<float> enc = encode(params, utt.features);
  Tensor<float> h =
      decoder_states(params, std::span<const int>(transcript.data(), static_cast<size_t>(steps)),
                     enc);
  std::vector<Tensor<float>> heads(static_cast<size_t>(params.dims.k_heads));
  for (int k = 1; k <= params.dims.k_heads; ++k) {
    const bool weighted = k <= static_cast<int>(alpha.size()) && alpha[static_cast<size_t>(k - 1)] != 0.0;
    if (weighted || biasing) heads[static_cast<size_t>(k - 1)] = head_logits(params, h, k);
  }
  UtteranceLosses out;
  out.mtp = mtp_loss(heads, std::span<const int>(transcript.data(), transcript.size()), alpha);
  if (biasing) {
    EntityTargets targets = build_entity_targets(utt, *list, inventory);
    out.entity = entity_loss(heads, *list, scorer, targets);
  }
  return out;
}

SystemParams build_system(const ModelDims& dims, const TrainingConfig& cfg) {
  SystemParams sys;
  sys.model = ModelParams<float>::init(dims, cfg.seed);
  if (cfg.biasing_enabled && cfg.scorer == "learned") {
    sys.scorer = EntityScorer<float>::learned(dims.k_heads, cfg.scorer_hidden, cfg.seed);
  } else {
    std::vector<float> w;
    if (!cfg.heuristic_weights.empty())
      for (double x : cfg.heuristic_weights) w.push_back(static_cast<float>(x));
    else
      w.assign(static_cast<size_t>(dims.k_heads), 1.0f / static_cast<float>(dims.k_heads));
    sys.scorer = EntityScorer<float>::heuristic(std::move(w));
  }
  sys.all_named = sys.model.named;
  for (const auto& nt : sys.scorer.named) sys.all_named.push_back(nt);
  for (const auto& [_, t] : sys.all_named) sys.all_params.push_back(t);
  return sys;
}

void load_system_checkpoint(SystemParams& sys, const std::string& stem) {
  auto stored = load_tensors(stem + ".manifest", stem + ".bin");
  load_named_tensors(sys.all_named, stored);
}

namespace {

void save_params(const SystemParams& sys, const std::string& dir, const std::string& stem) {
  save_tensors(dir + "/" + stem + ".manifest", dir + "/" + stem + ".bin",
               to_named_tensors(sys.all_named));
}

void save_adam(const AdamState<float>& adam, const SystemParams& sys, const std::string& dir) {
  std::vector<NamedTensor> t;
  for (size_t i = 0; i < sys.all_named.size(); ++i) {
    t.push_back({"m." + sys.all_named[i].first, sys.all_named[i].second.shape(),
                 adam.first_moment[i]});
    t.push_back({"v." + sys.all_named[i].first, sys.all_named[i].second.shape(),
                 adam.second_moment[i]});
  }
  save_tensors(dir + "/adam_last.manifest", dir + "/adam_last.bin", t);
}

void load_adam(AdamState<float>& adam, const SystemParams& sys, const std::string& dir) {
  auto stored = load_tensors(dir + "/adam_last.manifest", dir + "/adam_last.bin");
  if (stored.size() != 2 * sys.all_named.size())
    throw DataError("adam checkpoint does not match the parameter set");
  for (size_t i = 0; i < sys.all_named.size(); ++i) {
    adam.first_moment[i] = stored[2 * i].data;
    adam.second_moment[i] = stored[2 * i + 1].data;
  }
}

struct TrainState {
  int next_epoch = 0;
  int64_t step_count = 0;
  int best_epoch = -1;
  double best_dev_wer = 0;
};

void save_state(const TrainState& st, const std::string& dir) {
  std::ofstream out(dir + "/train_state.txt", std::ios::trunc);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", st.best_dev_wer);
  out << "next_epoch " << st.next_epoch << '\n'
      << "step_count " << st.step_count << '\n'
      << "best_epoch " << st.best_epoch << '\n'
      << "best_dev_wer " << buf << '\n';
}

TrainState load_state(const std::string& dir) {
  std::ifstream in(dir + "/train_state.txt");
  if (!in) throw DataError("resume: no train_state.txt in " + dir);
  TrainState st;
  std::string key;
  while (in >> key) {
    if (key == "next_epoch")
      in >> st.next_epoch;
    else if (key == "step_count")
      in >> st.step_count;
    else if (key == "best_epoch")
      in >> st.best_epoch;
    else if (key == "best_dev_wer")
      in >> st.best_dev_wer;
  }
  return st;
}

}  // namespace

TrainResult train_model(const Corpus& corpus, const TrainerOptions& opt,
                        const std::string& out_dir, bool resume) {
  const TrainingConfig& cfg = opt.training;
  cfg.validate(opt.dims.k_heads);
  cfg.sampler().validate();
  fs::create_directories(out_dir);

  SystemParams sys = build_system(opt.dims, opt.training);
  AdamState<float> adam;
  adam.learning_rate = static_cast<float>(cfg.learning_rate);
  adam.warmup_steps = cfg.warmup_steps;
  adam.init(sys.all_params);

  TrainState state;
  if (resume) {
    state = load_state(out_dir);
    auto stored = load_tensors(out_dir + "/model_last.manifest", out_dir + "/model_last.bin");
    load_named_tensors(sys.all_named, stored);
    load_adam(adam, sys, out_dir);
    adam.step_count = state.step_count;
  }

  // Monitoring decode on dev; biasing-off configurations decode with the
  // null-only list and score against the true entity surfaces.
  BiasList dev_list = cfg.biasing_enabled
                          ? build_eval_bias_list(corpus.dev, corpus.inventory, cfg.dev_bias_n,
                                                 corpus.config.seed, opt.dims.k_heads)
                          : BiasList::build({}, opt.dims.k_heads);
  const std::set<std::string> dev_words =
      cfg.biasing_enabled ? bias_word_set(dev_list)
                          : true_entity_surfaces(corpus.dev, corpus.inventory);
  const DecodeConfig dev_decode{cfg.biasing_enabled ? cfg.dev_lambda : 0.0, cfg.dev_gamma,
                                cfg.max_decode_len};

  std::ofstream csv(out_dir + "/loss_curve.csv",
                    resume ? std::ios::app : std::ios::trunc);
  if (!csv) throw DataError("cannot write " + out_dir + "/loss_curve.csv");
  if (!resume) csv << "epoch,step,l_mtp,l_entity,dev_wer,dev_bwer,dev_uwer\n";

  const int n_train = static_cast<int>(corpus.train.size());
  TrainResult result;
  result.best_epoch = state.best_epoch;
  result.best_dev_wer = state.best_dev_wer;

  for (int epoch = state.next_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n_train));
    for (int i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng = Rng::derive(cfg.seed, "order", static_cast<uint64_t>(epoch));
    for (int i = n_train - 1; i > 0; --i) {
      const int j = static_cast<int>(shuffle_rng.next_below(static_cast<uint64_t>(i + 1)));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double epoch_mtp = 0, epoch_entity = 0;
    int epoch_batches = 0;
    for (int start = 0; start < n_train; start += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n_train - start);
      std::vector<const Utterance*> batch;
      batch.reserve(static_cast<size_t>(bsz));
      for (int i = 0; i < bsz; ++i)
        batch.push_back(&corpus.train[static_cast<size_t>(order[static_cast<size_t>(start + i)])]);

      BiasList list;
      if (cfg.biasing_enabled) {
        Rng bias_rng = Rng::derive(cfg.seed, "bias",
                                   static_cast<uint64_t>(epoch) * 1000000u +
                                       static_cast<uint64_t>(start / cfg.batch_size));
        list = sample_bias_list(batch, corpus.inventory, cfg.sampler(), bias_rng,
                                opt.dims.k_heads);
      }

      for (auto& p : sys.all_params) p.zero_grad();
      double batch_mtp = 0, batch_entity = 0;
      for (const Utterance* utt : batch) {
        UtteranceLosses losses = utterance_losses(sys.model, sys.scorer, *utt,
                                                  cfg.biasing_enabled ? &list : nullptr,
                                                  corpus.inventory, cfg.alpha,
                                                  cfg.biasing_enabled);
        Tensor<float> total = losses.entity.defined() ? ops::add(losses.mtp, losses.entity)
                                                      : losses.mtp;
        Tensor<float> scaled = ops::scale(total, 1.0f / static_cast<float>(bsz));
        if (!std::isfinite(scaled.item())) {
          char msg[128];
          std::snprintf(msg, sizeof(msg),
                        "training aborted: non-finite loss at step %lld (lr %.6g)",
                        static_cast<long long>(adam.step_count + 1),
                        static_cast<double>(adam.effective_lr(adam.step_count + 1)));
          throw NumericError(msg);
        }
        scaled.backward();
        batch_mtp += losses.mtp.item();
        batch_entity += losses.entity.defined() ? losses.entity.item() : 0.0;
      }
      adam_step(sys.all_params, adam);

      batch_mtp /= bsz;
      batch_entity /= bsz;
      epoch_mtp += batch_mtp;
      epoch_entity += batch_entity;
      ++epoch_batches;
      char row[128];
      std::snprintf(row, sizeof(row), "%d,%lld,%.6f,%.6f,,,\n", epoch,
                    static_cast<long long>(adam.step_count), batch_mtp, batch_entity);
      csv << row;
    }

    EvalOutcome dev = evaluate_split(sys.model, sys.scorer, corpus.dev, dev_list, dev_words,
                                     dev_decode, opt.jobs);
    EpochLog log;
    log.epoch = epoch;
    log.avg_mtp = epoch_mtp / std::max(epoch_batches, 1);
    log.avg_entity = epoch_entity / std::max(epoch_batches, 1);
    log.dev_wer = dev.report.wer();
    log.dev_bwer = dev.report.b_wer().value_or(0.0);
    log.dev_uwer = dev.report.u_wer().value_or(0.0);
    result.epochs.push_back(log);
    char row[160];
    std::snprintf(row, sizeof(row), "%d,,%.6f,%.6f,%.6f,%.6f,%.6f\n", epoch, log.avg_mtp,
                  log.avg_entity, log.dev_wer, log.dev_bwer, log.dev_uwer);
    csv << row;
    csv.flush();

    if (result.best_epoch < 0 || log.dev_wer < result.best_dev_wer) {
      result.best_epoch = epoch;
      result.best_dev_wer = log.dev_wer;
      save_params(sys, out_dir, "model_best");
    }
    save_params(sys, out_dir, "model_last");
    save_adam(adam, sys, out_dir);
    state.next_epoch = epoch + 1;
    state.step_count = adam.step_count;
    state.best_epoch = result.best_epoch;
    state.best_dev_wer = result.best_dev_wer;
    save_state(state, out_dir);
  }
  return result;
}

}  // namespace mtpbias
