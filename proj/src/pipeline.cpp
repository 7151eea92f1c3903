#include "mtpbias/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "mtpbias/eval.hpp"
#include "mtpbias/training.hpp"

namespace mtpbias {

namespace fs = std::filesystem;

namespace {

std::string hash_hex(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fmt(double x, const char* spec = "%.4f") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), spec, x);
  return buf;
}

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["wer"] = fmt(r.wer());
  if (r.b_wer()) j["b_wer"] = fmt(*r.b_wer());
  if (r.u_wer()) j["u_wer"] = fmt(*r.u_wer());
  j["errors"] = r.errors();
  j["ref_words"] = r.ref_words();
  j["counts"] = {{"sub_b", r.sub_b}, {"del_b", r.del_b}, {"ins_b", r.ins_b},
                 {"sub_u", r.sub_u}, {"del_u", r.del_u}, {"ins_u", r.ins_u}};
  j["n_bias_ref"] = r.n_bias_ref;
  j["n_unbias_ref"] = r.n_unbias_ref;
  j["n_utterances"] = r.n_utterances;
  return j;
}

SystemParams load_system(const RunConfig& cfg, const std::string& checkpoint) {
  SystemParams sys = build_system(cfg.dims(), cfg.training);
  load_system_checkpoint(sys, checkpoint);
  for (auto& [_, t] : sys.all_named) t.set_requires_grad(false);
  return sys;
}

BiasList list_for_n(const Corpus& corpus, const std::vector<Utterance>& utts, int n,
                    int k_heads) {
  if (n <= 0) return BiasList::build({}, k_heads);
  return build_eval_bias_list(utts, corpus.inventory, n, corpus.config.seed, k_heads);
}

std::set<std::string> words_for_list(const Corpus& corpus, const std::vector<Utterance>& utts,
                                     const BiasList& list) {
  if (list.n_real() > 0) return bias_word_set(list);
  return true_entity_surfaces(utts, corpus.inventory);
}

}  // namespace

void cmd_generate(const RunConfig& cfg) {
  Corpus corpus = generate_corpus(cfg.corpus);
  save_corpus(corpus, cfg.paths.corpus_dir);
  write_resolved_config(cfg, cfg.paths.corpus_dir + "/resolved_config.ini");
  std::cout << "corpus: " << corpus.train.size() << " train / " << corpus.dev.size()
            << " dev / " << corpus.test.size() << " test utterances\n"
            << "entities: " << corpus.inventory.size() << " (avg "
            << fmt(corpus.stats.avg_tokens, "%.2f") << " tokens, "
            << fmt(100.0 * corpus.stats.frac_le4, "%.1f") << "% <= 4 tokens)\n";
}

void cmd_train(const RunConfig& cfg, bool resume) {
  Corpus corpus = load_corpus(cfg.paths.corpus_dir);
  TrainerOptions opt{cfg.dims(), cfg.training, cfg.eval.jobs};
  TrainResult result = train_model(corpus, opt, cfg.paths.run_dir, resume);
  write_resolved_config(cfg, cfg.paths.run_dir + "/resolved_config.ini");
  std::cout << "trained " << cfg.training.epochs << " epochs; best dev WER "
            << fmt(result.best_dev_wer) << " at epoch " << result.best_epoch << "\n";
}

void cmd_decode(const RunConfig& cfg, const DecodeArgs& args) {
  Corpus corpus = load_corpus(cfg.paths.corpus_dir);
  SystemParams sys = load_system(cfg, args.checkpoint);
  const auto& utts = corpus.split(cfg.eval.set);
  BiasList list = BiasList::build({}, cfg.model.k);
  if (args.bias_list_path)
    list = load_bias_list(*args.bias_list_path, cfg.model.k);
  else if (args.n)
    list = list_for_n(corpus, utts, *args.n, cfg.model.k);
  const auto hyps = batch_decode(sys.model, sys.scorer, utts, list, cfg.decode, cfg.eval.jobs);
  fs::path out(args.out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_hypotheses(hyps, args.out_path);
  write_resolved_config(cfg, args.out_path + ".config.ini");
  std::cout << "decoded " << hyps.size() << " utterances -> " << args.out_path << "\n";
}

std::optional<std::pair<double, double>> read_tuned_pair(const std::string& run_dir) {
  std::ifstream in(run_dir + "/best.json");
  if (!in) return std::nullopt;
  nlohmann::json j = nlohmann::json::parse(in);
  return std::make_pair(j.at("lambda").get<double>(), j.at("gamma").get<double>());
}

std::vector<EvalRow> cmd_eval(const RunConfig& cfg, const std::string& checkpoint,
                              bool use_tuned) {
  Corpus corpus = load_corpus(cfg.paths.corpus_dir);
  SystemParams sys = load_system(cfg, checkpoint);
  const auto& utts = corpus.split(cfg.eval.set);

  DecodeConfig dc = cfg.decode;
  if (use_tuned) {
    const auto tuned = read_tuned_pair(cfg.paths.run_dir);
    if (!tuned) throw DataError("eval: --tuned requested but " + cfg.paths.run_dir +
                                "/best.json is missing (run sweep first)");
    dc.lambda = tuned->first;
    dc.gamma = tuned->second;
  }

  fs::create_directories(cfg.paths.reports_dir);
  std::vector<EvalRow> rows;
  nlohmann::json jrows = nlohmann::json::array();
  std::ofstream csv(cfg.paths.reports_dir + "/eval_" + cfg.eval.set + ".csv", std::ios::trunc);
  csv << "n,lambda,gamma,wer,b_wer,u_wer,errors,ref_words\n";
  std::ofstream table(cfg.paths.reports_dir + "/eval_" + cfg.eval.set + ".txt", std::ios::trunc);
  table << "N\tWER (B-WER/U-WER)\n";

  for (int n : cfg.eval.n_grid) {
    BiasList list = list_for_n(corpus, utts, n, cfg.model.k);
    const auto words = words_for_list(corpus, utts, list);
    EvalOutcome outcome = evaluate_split(sys.model, sys.scorer, utts, list, words, dc,
                                         cfg.eval.jobs);
    char stem[128];
    std::snprintf(stem, sizeof(stem), "hyp_%s_n%d_lambda%g_gamma%g.txt", cfg.eval.set.c_str(), n,
                  dc.lambda, dc.gamma);
    save_hypotheses(outcome.hypotheses, cfg.paths.reports_dir + "/" + stem);

    EvalRow row{n, dc.lambda, dc.gamma, outcome.report};
    rows.push_back(row);
    nlohmann::json j = report_json(outcome.report);
    j["n"] = n;
    j["lambda"] = dc.lambda;
    j["gamma"] = dc.gamma;
    j["config_hash"] = hash_hex(config_hash(cfg));
    jrows.push_back(j);
    csv << n << ',' << fmt(dc.lambda, "%g") << ',' << fmt(dc.gamma, "%g") << ','
        << fmt(outcome.report.wer()) << ','
        << (outcome.report.b_wer() ? fmt(*outcome.report.b_wer()) : "") << ','
        << (outcome.report.u_wer() ? fmt(*outcome.report.u_wer()) : "") << ','
        << outcome.report.errors() << ',' << outcome.report.ref_words() << '\n';
    table << n << '\t' << format_report_cell(outcome.report) << '\n';
    std::cout << "N=" << n << "  " << format_report_cell(outcome.report) << "\n";
  }
  std::ofstream js(cfg.paths.reports_dir + "/eval_" + cfg.eval.set + ".json", std::ios::trunc);
  js << jrows.dump(2) << '\n';
  write_resolved_config(cfg, cfg.paths.reports_dir + "/resolved_config.ini");
  return rows;
}

SweepResult cmd_sweep(const RunConfig& cfg, const std::string& checkpoint) {
  Corpus corpus = load_corpus(cfg.paths.corpus_dir);
  SystemParams sys = load_system(cfg, checkpoint);
  const auto& utts = corpus.split(cfg.sweep.set);

  BiasList list = list_for_n(corpus, utts, cfg.sweep.n, cfg.model.k);
  const auto words = words_for_list(corpus, utts, list);
  BiasList null_list = BiasList::build({}, cfg.model.k);

  SweepResult result;
  DecodeConfig base = cfg.decode;
  base.lambda = 0;
  result.no_bias = evaluate_split(sys.model, sys.scorer, utts, null_list, words, base,
                                  cfg.eval.jobs).report;
  const double base_uwer = result.no_bias.u_wer().value_or(0.0);

  fs::create_directories(cfg.paths.reports_dir);
  std::ofstream csv(cfg.paths.reports_dir + "/sweep_" + cfg.sweep.set + ".csv", std::ios::trunc);
  csv << "lambda,gamma,wer,b_wer,u_wer\n";

  // Pick the feasible row (U-WER within 8% relative of the no-bias decode)
  // with the lowest B-WER; fall back to the lowest overall WER. Ties break
  // toward the smaller lambda, then gamma.
  int best_idx = -1;
  bool best_feasible = false;
  for (double lambda : cfg.sweep.lambdas)
    for (double gamma : cfg.sweep.gammas) {
      DecodeConfig dc = cfg.decode;
      dc.lambda = lambda;
      dc.gamma = gamma;
      EvalReport r = evaluate_split(sys.model, sys.scorer, utts, list, words, dc,
                                    cfg.eval.jobs).report;
      result.rows.push_back({lambda, gamma, r});
      csv << fmt(lambda, "%g") << ',' << fmt(gamma, "%g") << ',' << fmt(r.wer()) << ','
          << (r.b_wer() ? fmt(*r.b_wer()) : "") << ',' << (r.u_wer() ? fmt(*r.u_wer()) : "")
          << '\n';
      const int idx = static_cast<int>(result.rows.size()) - 1;
      const bool feasible = r.u_wer().value_or(0.0) <= base_uwer * 1.08 + 1e-9;
      auto better = [&](const SweepRow& a, const SweepRow& b, bool by_bwer) {
        const double ka = by_bwer ? a.report.b_wer().value_or(1e9) : a.report.wer();
        const double kb = by_bwer ? b.report.b_wer().value_or(1e9) : b.report.wer();
        if (ka != kb) return ka < kb;
        if (a.report.wer() != b.report.wer()) return a.report.wer() < b.report.wer();
        if (a.lambda != b.lambda) return a.lambda < b.lambda;
        return a.gamma < b.gamma;
      };
      if (best_idx < 0 || (feasible && !best_feasible) ||
          (feasible == best_feasible &&
           better(result.rows[static_cast<size_t>(idx)],
                  result.rows[static_cast<size_t>(best_idx)], feasible))) {
        best_idx = idx;
        best_feasible = feasible;
      }
    }

  const SweepRow& best = result.rows[static_cast<size_t>(best_idx)];
  result.best_lambda = best.lambda;
  result.best_gamma = best.gamma;
  nlohmann::json j;
  j["lambda"] = best.lambda;
  j["gamma"] = best.gamma;
  j["report"] = report_json(best.report);
  j["no_bias"] = report_json(result.no_bias);
  j["set"] = cfg.sweep.set;
  j["n"] = cfg.sweep.n;
  fs::create_directories(cfg.paths.run_dir);
  std::ofstream bj(cfg.paths.run_dir + "/best.json", std::ios::trunc);
  bj << j.dump(2) << '\n';
  write_resolved_config(cfg, cfg.paths.reports_dir + "/resolved_config.ini");
  std::cout << "sweep best: lambda=" << fmt(best.lambda, "%g") << " gamma="
            << fmt(best.gamma, "%g") << "  " << format_report_cell(best.report) << "\n";
  return result;
}

std::vector<AblateRow> cmd_ablate(const RunConfig& cfg) {
  Corpus corpus = load_corpus(cfg.paths.corpus_dir);

  struct RowSpec {
    std::string id, description;
    RunConfig row_cfg;
    bool biased_decode;
  };
  auto variant = [&](const std::string& id, const std::string& desc, int k, bool biasing,
                     const std::string& scorer, bool biased_decode) {
    RunConfig c = cfg;
    c.model.k = k;
    c.training.biasing_enabled = biasing;
    c.training.scorer = scorer;
    c.training.alpha.assign(cfg.training.alpha.begin(),
                            cfg.training.alpha.begin() + std::min<size_t>(cfg.training.alpha.size(),
                                                                          static_cast<size_t>(k)));
    if (cfg.ablate.epochs > 0) c.training.epochs = cfg.ablate.epochs;
    c.paths.run_dir = cfg.paths.run_dir + "/ablate_" + id;
    return RowSpec{id, desc, c, biased_decode};
  };
  const std::vector<RowSpec> rows_spec = {
      variant("A0", "AED baseline (K=1, no biasing)", 1, false, "learned", false),
      variant("A1", "MTP heads, no biasing", cfg.model.k, false, "learned", false),
      variant("B0", "MTP + learned scorer", cfg.model.k, true, "learned", true),
      variant("B1", "MTP + heuristic scorer", cfg.model.k, true, "heuristic", true),
      variant("B2", "1-head biasing", 1, true, "learned", true),
      variant("B3", "2-head biasing", 2, true, "learned", true),
  };

  std::vector<AblateRow> rows;
  for (const auto& spec : rows_spec) {
    TrainerOptions opt{spec.row_cfg.dims(), spec.row_cfg.training, spec.row_cfg.eval.jobs};
    train_model(corpus, opt, spec.row_cfg.paths.run_dir, false);
    write_resolved_config(spec.row_cfg, spec.row_cfg.paths.run_dir + "/resolved_config.ini");

    SystemParams sys = load_system(spec.row_cfg, spec.row_cfg.paths.run_dir + "/model_best");
    const auto& utts = corpus.split(cfg.eval.set);
    BiasList list = spec.biased_decode ? list_for_n(corpus, utts, cfg.ablate.n, spec.row_cfg.model.k)
                                       : BiasList::build({}, spec.row_cfg.model.k);
    // Every row scores against the same word set so B-WER is comparable.
    BiasList word_list = list_for_n(corpus, utts, cfg.ablate.n, cfg.model.k);
    const auto words = bias_word_set(word_list);
    DecodeConfig dc = cfg.decode;
    if (!spec.biased_decode) dc.lambda = 0;
    EvalReport report =
        evaluate_split(sys.model, sys.scorer, utts, list, words, dc, cfg.eval.jobs).report;
    rows.push_back({spec.id, spec.description, report, config_hash(spec.row_cfg)});
    std::cout << spec.id << "  " << format_report_cell(report) << "  (" << spec.description
              << ")\n";
  }

  fs::create_directories(cfg.paths.reports_dir);
  std::ofstream csv(cfg.paths.reports_dir + "/ablation.csv", std::ios::trunc);
  csv << "id,description,wer,b_wer,u_wer,config_hash\n";
  nlohmann::json jrows = nlohmann::json::array();
  std::ofstream table(cfg.paths.reports_dir + "/ablation.txt", std::ios::trunc);
  table << "ID\tModel\tWER (B-WER/U-WER)\tconfig\n";
  for (const auto& r : rows) {
    csv << r.id << ',' << '"' << r.description << '"' << ',' << fmt(r.report.wer()) << ','
        << (r.report.b_wer() ? fmt(*r.report.b_wer()) : "") << ','
        << (r.report.u_wer() ? fmt(*r.report.u_wer()) : "") << ',' << hash_hex(r.hash) << '\n';
    nlohmann::json j = report_json(r.report);
    j["id"] = r.id;
    j["description"] = r.description;
    j["config_hash"] = hash_hex(r.hash);
    jrows.push_back(j);
    table << r.id << '\t' << r.description << '\t' << format_report_cell(r.report) << '\t'
          << hash_hex(r.hash) << '\n';
  }
  std::ofstream js(cfg.paths.reports_dir + "/ablation.json", std::ios::trunc);
  js << jrows.dump(2) << '\n';
  write_resolved_config(cfg, cfg.paths.reports_dir + "/resolved_config.ini");
  return rows;
}

}  // namespace mtpbias
