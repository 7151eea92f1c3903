#include "mtpbias/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

namespace mtpbias {

namespace {

std::vector<float> stable_softmax_row(const float* row, int n) {
  std::vector<float> out(static_cast<size_t>(n));
  float m = row[0];
  for (int i = 1; i < n; ++i) m = std::max(m, row[i]);
  float sum = 0.f;
  for (int i = 0; i < n; ++i) {
    out[static_cast<size_t>(i)] = std::exp(row[i] - m);
    sum += out[static_cast<size_t>(i)];
  }
  const float inv = 1.f / sum;
  for (auto& x : out) x *= inv;
  return out;
}

}  // namespace

void apply_confidence_threshold(std::vector<float>& p_e, double gamma) {
  const int n = static_cast<int>(p_e.size()) - 1;
  if (n <= 0 || gamma <= 0) return;
  float best = 0.f;
  for (int i = 1; i <= n; ++i) best = std::max(best, p_e[static_cast<size_t>(i)]);
  if (best < static_cast<float>(gamma)) {
    for (int i = 1; i <= n; ++i) p_e[static_cast<size_t>(i)] = 0.f;
    p_e[0] = 1.f;
  }
}

std::vector<float> entity_posterior(const MatrixRM<float>& mtp_logits,
                                    const std::vector<int>& aligned_tokens, int m_entities,
                                    const EntityScorer<float>& scorer) {
  const int k = static_cast<int>(mtp_logits.rows());
  MatrixRM<float> p(m_entities, k);
  for (int m = 0; m < m_entities; ++m)
    for (int h = 0; h < k; ++h)
      p(m, h) = mtp_logits(h, aligned_tokens[static_cast<size_t>(m) * k + h]);
  Eigen::Matrix<float, Eigen::Dynamic, 1> z(m_entities);
  if (scorer.kind == ScorerKind::kLearned) {
    MatrixRM<float> hidden = (p * scorer.w1.mat()).rowwise() +
                             Eigen::Map<const Eigen::Matrix<float, 1, Eigen::Dynamic>>(
                                 scorer.b1.data(), scorer.b1.size());
    hidden = hidden.array().tanh();
    z = (hidden * scorer.w2.mat()).col(0).array() + scorer.b2.data()[0];
  } else {
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, 1>> w(scorer.heuristic_weights.data(),
                                                                k);
    z = p * w;
  }
  return stable_softmax_row(z.data(), m_entities);
}

UnifiedDistribution unified_scores(const MatrixRM<float>& mtp_logits, std::vector<float> p_e,
                                   const DecodeConfig& cfg) {
  cfg.validate();
  apply_confidence_threshold(p_e, cfg.gamma);
  const int v = static_cast<int>(mtp_logits.cols());
  UnifiedDistribution q;
  q.static_scores = stable_softmax_row(mtp_logits.row(0).eval().data(), v);
  for (auto& x : q.static_scores) x *= p_e[0];
  q.entity_scores.resize(p_e.size() - 1);
  for (size_t n = 1; n < p_e.size(); ++n)
    q.entity_scores[n - 1] = static_cast<float>(cfg.lambda) * p_e[n];
  return q;
}

Hypothesis greedy_search(LogitStepper& stepper, const BiasList& list,
                         const EntityScorer<float>& scorer, const DecodeConfig& cfg) {
  cfg.validate();
  const int n_real = list.n_real();
  const bool biasing = n_real > 0 && cfg.lambda > 0;
  std::vector<int> aligned;
  if (biasing) aligned = aligned_token_table(list, scorer.k_heads);

  Hypothesis hyp;
  stepper.push(vocab::kBos);
  while (true) {
    if (static_cast<int>(hyp.tokens.size()) >= cfg.max_len) {
      hyp.truncated = true;
      break;
    }
    const MatrixRM<float> logits = stepper.mtp_logits();
    const int v = static_cast<int>(logits.cols());
    std::vector<float> p1 = stable_softmax_row(logits.row(0).eval().data(), v);

    float null_prior = 1.f;
    int best_entity = -1;
    float best_entity_score = 0.f;
    if (biasing) {
      std::vector<float> p_e =
          entity_posterior(logits, aligned, n_real + 1, scorer);
      apply_confidence_threshold(p_e, cfg.gamma);
      null_prior = p_e[0];
      for (int n = 1; n <= n_real; ++n) {
        const float s = static_cast<float>(cfg.lambda) * p_e[static_cast<size_t>(n)];
        if (s > best_entity_score) {
          best_entity_score = s;
          best_entity = n;
        }
      }
    }

    int best_token = 0;
    for (int i = 1; i < v; ++i)
      if (p1[static_cast<size_t>(i)] > p1[static_cast<size_t>(best_token)]) best_token = i;
    const float best_static = null_prior * p1[static_cast<size_t>(best_token)];

    if (best_entity >= 0 && best_entity_score > best_static) {
      hyp.emitted_entities.emplace_back(static_cast<int>(hyp.tokens.size()), best_entity);
      for (int tok : list.entities[static_cast<size_t>(best_entity)].tokens) {
        if (static_cast<int>(hyp.tokens.size()) >= cfg.max_len) {
          hyp.truncated = true;
          return hyp;
        }
        hyp.tokens.push_back(tok);
        stepper.push(tok);
      }
      continue;
    }
    hyp.tokens.push_back(best_token);
    if (best_token == vocab::kEos) break;
    stepper.push(best_token);
  }
  return hyp;
}

namespace {

class ModelStepper final : public LogitStepper {
 public:
  ModelStepper(const ModelParams<float>& params, const EncoderStates<float>& enc, int max_len)
      : session_(params, enc, max_len + 1) {}
  void push(int token) override { session_.push(token); }
  MatrixRM<float> mtp_logits() override { return session_.mtp_logits(); }

 private:
  DecoderSession<float> session_;
};

}  // namespace

Hypothesis greedy_decode(const ModelParams<float>& params, const EntityScorer<float>& scorer,
                         const EncoderStates<float>& enc, const BiasList& list,
                         const DecodeConfig& cfg) {
  ModelStepper stepper(params, enc, cfg.max_len);
  return greedy_search(stepper, list, scorer, cfg);
}

std::vector<Hypothesis> batch_decode(const ModelParams<float>& params,
                                     const EntityScorer<float>& scorer,
                                     const std::vector<Utterance>& utts, const BiasList& list,
                                     const DecodeConfig& cfg, int jobs) {
  std::vector<Hypothesis> out(utts.size());
  auto worker = [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) {
      EncoderStates<float> enc = encode(params, utts[i].features);
      out[i] = greedy_decode(params, scorer, enc, list, cfg);
    }
  };
  if (jobs <= 1) {
    worker(0, utts.size());
  } else {
    // Utterances are independent and params/list are read-only; results land
    // in preassigned slots so the output order is deterministic.
    std::vector<std::thread> threads;
    const size_t chunk = (utts.size() + static_cast<size_t>(jobs) - 1) / static_cast<size_t>(jobs);
    for (int t = 0; t < jobs; ++t) {
      const size_t lo = static_cast<size_t>(t) * chunk;
      const size_t hi = std::min(utts.size(), lo + chunk);
      if (lo >= hi) break;
      threads.emplace_back(worker, lo, hi);
    }
    for (auto& t : threads) t.join();
  }
  return out;
}

void save_hypotheses(const std::vector<Hypothesis>& hyps, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write hypotheses: " + path);
  for (size_t i = 0; i < hyps.size(); ++i) {
    out << i << '\t';
    for (size_t j = 0; j < hyps[i].tokens.size(); ++j)
      out << (j ? " " : "") << hyps[i].tokens[j];
    out << '\t';
    if (hyps[i].emitted_entities.empty()) {
      out << '-';
    } else {
      for (size_t j = 0; j < hyps[i].emitted_entities.size(); ++j) {
        const auto& [pos, n] = hyps[i].emitted_entities[j];
        out << (j ? ";" : "") << pos << ':' << n;
      }
    }
    if (hyps[i].truncated) out << "\ttruncated";
    out << '\n';
  }
}

}  // namespace mtpbias
