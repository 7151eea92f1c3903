#include <CLI11.hpp>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "mtpbias/pipeline.hpp"

namespace {

using mtpbias::RunConfig;

// Every config key is mirrored as --section.key; defaults, then the config
// file, then flags, in that order.
struct Cli {
  RunConfig config;
  std::string config_path;
  std::map<std::string, std::string> overrides;

  void add_common(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Configuration file (INI with sections)");
    for (const auto& field : mtpbias::config_schema()) {
      const std::string name = "--" + field.section + "." + field.key;
      const std::string key = field.section + "." + field.key;
      cmd->add_option_function<std::string>(
          name, [this, key](const std::string& v) { overrides[key] = v; },
          "Override config key " + key);
    }
  }

  void resolve() {
    if (!config_path.empty()) mtpbias::load_config_file(config, config_path);
    for (const auto& [key, value] : overrides) {
      const auto dot = key.find('.');
      mtpbias::apply_config_value(config, key.substr(0, dot), key.substr(dot + 1), value);
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention encoder-decoder transcriber with multi-token prediction and "
               "dynamic-vocabulary contextual biasing"};
  app.require_subcommand(1);

  Cli cli;
  bool resume = false;
  bool use_tuned = false;
  std::string checkpoint;
  std::string out_path = "hypotheses.txt";
  std::string bias_list_path;
  int decode_n = -1;

  CLI::App* generate = app.add_subcommand("generate", "Generate the synthetic corpus");
  cli.add_common(generate);

  CLI::App* train = app.add_subcommand("train", "Train on the generated corpus");
  cli.add_common(train);
  train->add_flag("--resume", resume, "Continue from the last checkpoint in run_dir");

  CLI::App* decode = app.add_subcommand("decode", "Greedy-decode a split to a hypotheses file");
  cli.add_common(decode);
  decode->add_option("--checkpoint", checkpoint, "Checkpoint stem (default run_dir/model_best)");
  decode->add_option("--bias-list", bias_list_path, "Bias list file (surface TAB token ids)");
  decode->add_option("--n", decode_n, "Build an eval bias list of this size instead");
  decode->add_option("--out", out_path, "Output hypotheses file");
  decode->add_option_function<std::string>(
      "--lambda", [&cli](const std::string& v) { cli.overrides["decode.lambda"] = v; },
      "Biasing weight (alias for --decode.lambda)");
  decode->add_option_function<std::string>(
      "--gamma", [&cli](const std::string& v) { cli.overrides["decode.gamma"] = v; },
      "Confidence threshold (alias for --decode.gamma)");
  decode->add_option_function<std::string>(
      "--max-len", [&cli](const std::string& v) { cli.overrides["decode.max_len"] = v; },
      "Decode length cap (alias for --decode.max_len)");

  CLI::App* eval = app.add_subcommand("eval", "Decode and score over the bias-list size grid");
  cli.add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint stem (default run_dir/model_best)");
  eval->add_flag("--tuned", use_tuned, "Use the (lambda, gamma) pair from run_dir/best.json");

  CLI::App* sweep = app.add_subcommand("sweep", "Sweep (lambda, gamma) and record the best pair");
  cli.add_common(sweep);
  sweep->add_option("--checkpoint", checkpoint, "Checkpoint stem (default run_dir/model_best)");

  CLI::App* ablate = app.add_subcommand("ablate", "Train and score the ablation grid");
  cli.add_common(ablate);

  try {
    app.parse(argc, argv);
    cli.resolve();
    const RunConfig& cfg = cli.config;
    if (checkpoint.empty()) checkpoint = cfg.paths.run_dir + "/model_best";

    if (generate->parsed()) {
      mtpbias::cmd_generate(cfg);
    } else if (train->parsed()) {
      mtpbias::cmd_train(cfg, resume);
    } else if (decode->parsed()) {
      mtpbias::DecodeArgs args;
      args.checkpoint = checkpoint;
      if (!bias_list_path.empty()) args.bias_list_path = bias_list_path;
      if (decode_n >= 0) args.n = decode_n;
      args.out_path = out_path;
      mtpbias::cmd_decode(cfg, args);
    } else if (eval->parsed()) {
      mtpbias::cmd_eval(cfg, checkpoint, use_tuned);
    } else if (sweep->parsed()) {
      mtpbias::cmd_sweep(cfg, checkpoint);
    } else if (ablate->parsed()) {
      mtpbias::cmd_ablate(cfg);
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const mtpbias::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mtpbias::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const mtpbias::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const mtpbias::DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const mtpbias::IndexError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
