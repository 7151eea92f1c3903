#pragma once

#include <optional>
#include <string>

#include "mtpbias/config.hpp"

namespace mtpbias {

// Subcommand bodies behind the CLI. Each writes its artifacts plus the
// resolved configuration, and everything is a pure function of the
// configuration and the on-disk inputs.

void cmd_generate(const RunConfig& cfg);

void cmd_train(const RunConfig& cfg, bool resume);

struct DecodeArgs {
  std::string checkpoint;             // stem without .manifest/.bin
  std::optional<std::string> bias_list_path;
  std::optional<int> n;               // build an eval list of this size instead
  std::string out_path;
};
void cmd_decode(const RunConfig& cfg, const DecodeArgs& args);

struct EvalRow {
  int n = 0;
  double lambda = 0, gamma = 0;
  EvalReport report;
};
std::vector<EvalRow> cmd_eval(const RunConfig& cfg, const std::string& checkpoint,
                              bool use_tuned);

struct SweepRow {
  double lambda = 0, gamma = 0;
  EvalReport report;
};
struct SweepResult {
  std::vector<SweepRow> rows;
  EvalReport no_bias;   // same checkpoint decoded with the null-only list
  double best_lambda = 0, best_gamma = 0;
};
SweepResult cmd_sweep(const RunConfig& cfg, const std::string& checkpoint);

struct AblateRow {
  std::string id;
  std::string description;
  EvalReport report;
  uint64_t hash = 0;
};
std::vector<AblateRow> cmd_ablate(const RunConfig& cfg);

// Reads run_dir/best.json written by cmd_sweep.
std::optional<std::pair<double, double>> read_tuned_pair(const std::string& run_dir);

}  // namespace mtpbias
