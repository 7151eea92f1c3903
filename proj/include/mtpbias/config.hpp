#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "mtpbias/corpus.hpp"
#include "mtpbias/decoding.hpp"
#include "mtpbias/model.hpp"
#include "mtpbias/training.hpp"

namespace mtpbias {

struct EvalSection {
  std::vector<int> n_grid = {0, 100, 200, 500};
  std::string set = "test";
  int jobs = 1;
};

struct SweepSection {
  std::vector<double> lambdas = {1.0, 2.0, 4.0, 4.4, 8.0};
  std::vector<double> gammas = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int n = 100;
  std::string set = "dev";
};

struct AblateSection {
  int epochs = 0;  // 0 = use training.epochs
  int n = 100;
};

struct PathsSection {
  std::string corpus_dir = "data/corpus";
  std::string run_dir = "runs/default";
  std::string reports_dir = "reports";
};

struct ModelSection {
  int d = 64;
  int enc_layers = 2;
  int dec_layers = 2;
  int attn_heads = 4;
  int k = 4;
  int ffn_mult = 4;
};

// Full run configuration: flat key/value file with sections. Unknown keys
// are rejected, and every command writes the fully resolved configuration
// next to its outputs.
struct RunConfig {
  ModelSection model;
  CorpusConfig corpus;
  TrainingConfig training;
  DecodeConfig decode;
  EvalSection eval;
  SweepSection sweep;
  AblateSection ablate;
  PathsSection paths;

  ModelDims dims() const {
    ModelDims d;
    d.d = model.d;
    d.vocab = vocab::kSize;
    d.k_heads = model.k;
    d.enc_layers = model.enc_layers;
    d.dec_layers = model.dec_layers;
    d.attn_heads = model.attn_heads;
    d.d_audio = corpus.d_audio;
    d.ffn_mult = model.ffn_mult;
    return d;
  }
};

// One configurable field. Values parse from strings both for the INI file
// and for the mirrored command-line flags.
struct ConfigField {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigField>& config_schema();

void apply_config_value(RunConfig& config, const std::string& section, const std::string& key,
                        const std::string& value);
void load_config_file(RunConfig& config, const std::string& path);
std::string serialize_config(const RunConfig& config);
void write_resolved_config(const RunConfig& config, const std::string& path);
uint64_t config_hash(const RunConfig& config);

}  // namespace mtpbias
