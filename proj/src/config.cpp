#include "mtpbias/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mtpbias/errors.hpp"
#include "mtpbias/rng.hpp"

namespace mtpbias {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& section, const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(section + "." + key + ": expected an integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& section, const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const uint64_t x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(section + "." + key + ": expected an unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& section, const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(section + "." + key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& section, const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(section + "." + key + ": expected a boolean, got '" + v + "'");
}

template <typename T, typename ParseOne>
std::vector<T> parse_list(const std::string& section, const std::string& key,
                          const std::string& v, ParseOne parse_one) {
  std::vector<T> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_one(section, key, item));
  }
  return out;
}

std::string fmt_double(double x) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

template <typename T, typename Fmt>
std::string fmt_list(const std::vector<T>& xs, Fmt fmt) {
  std::string out;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += fmt(xs[i]);
  }
  return out;
}

#define FIELD_INT(section_, key_, expr)                                                   \
  {#section_, #key_,                                                                     \
   [](RunConfig& c, const std::string& v) { c.expr = parse_int(#section_, #key_, v); },  \
   [](const RunConfig& c) { return std::to_string(c.expr); }}
#define FIELD_U64(section_, key_, expr)                                                   \
  {#section_, #key_,                                                                     \
   [](RunConfig& c, const std::string& v) { c.expr = parse_u64(#section_, #key_, v); },  \
   [](const RunConfig& c) { return std::to_string(c.expr); }}
#define FIELD_DBL(section_, key_, expr)                                                     \
  {#section_, #key_,                                                                       \
   [](RunConfig& c, const std::string& v) { c.expr = parse_double(#section_, #key_, v); }, \
   [](const RunConfig& c) { return fmt_double(c.expr); }}
#define FIELD_BOOL(section_, key_, expr)                                                   \
  {#section_, #key_,                                                                      \
   [](RunConfig& c, const std::string& v) { c.expr = parse_bool(#section_, #key_, v); },  \
   [](const RunConfig& c) { return c.expr ? std::string("true") : std::string("false"); }}
#define FIELD_STR(section_, key_, expr)                                    \
  {#section_, #key_, [](RunConfig& c, const std::string& v) { c.expr = v; }, \
   [](const RunConfig& c) { return c.expr; }}
#define FIELD_DBL_LIST(section_, key_, expr)                                              \
  {#section_, #key_,                                                                     \
   [](RunConfig& c, const std::string& v) {                                              \
     c.expr = parse_list<double>(#section_, #key_, v, parse_double);                     \
   },                                                                                    \
   [](const RunConfig& c) { return fmt_list(c.expr, fmt_double); }}
#define FIELD_INT_LIST(section_, key_, expr)                                              \
  {#section_, #key_,                                                                     \
   [](RunConfig& c, const std::string& v) {                                              \
     c.expr = parse_list<int>(#section_, #key_, v, parse_int);                           \
   },                                                                                    \
   [](const RunConfig& c) {                                                              \
     return fmt_list(c.expr, [](int x) { return std::to_string(x); });                   \
   }}

}  // namespace

const std::vector<ConfigField>& config_schema() {
  static const std::vector<ConfigField> schema = {
      FIELD_INT(model, d, model.d),
      FIELD_INT(model, enc_layers, model.enc_layers),
      FIELD_INT(model, dec_layers, model.dec_layers),
      FIELD_INT(model, attn_heads, model.attn_heads),
      FIELD_INT(model, k, model.k),
      FIELD_INT(model, ffn_mult, model.ffn_mult),

      FIELD_U64(corpus, seed, corpus.seed),
      FIELD_INT(corpus, train_utts, corpus.train_utts),
      FIELD_INT(corpus, dev_utts, corpus.dev_utts),
      FIELD_INT(corpus, test_utts, corpus.test_utts),
      FIELD_INT(corpus, min_carriers, corpus.min_carriers),
      FIELD_INT(corpus, max_carriers, corpus.max_carriers),
      FIELD_DBL(corpus, p_zero_entities, corpus.p_zero_entities),
      FIELD_DBL(corpus, p_one_entity, corpus.p_one_entity),
      FIELD_INT(corpus, train_entity_count, corpus.train_entity_count),
      FIELD_INT(corpus, test_entity_count, corpus.test_entity_count),
      FIELD_INT(corpus, active_entities, corpus.active_entities),
      FIELD_DBL_LIST(corpus, length_weights, corpus.length_weights),
      FIELD_INT(corpus, d_audio, corpus.d_audio),
      FIELD_INT(corpus, repeat, corpus.repeat),
      FIELD_DBL(corpus, sigma, corpus.sigma),
      FIELD_DBL(corpus, entity_sigma_scale, corpus.entity_sigma_scale),

      FIELD_DBL_LIST(training, alpha, training.alpha),
      FIELD_INT(training, epochs, training.epochs),
      FIELD_INT(training, batch, training.batch_size),
      FIELD_DBL(training, lr, training.learning_rate),
      FIELD_INT(training, warmup, training.warmup_steps),
      FIELD_U64(training, seed, training.seed),
      FIELD_INT(training, min_pos, training.min_pos),
      FIELD_INT(training, max_pos, training.max_pos),
      FIELD_INT(training, kappa, training.kappa),
      FIELD_BOOL(training, biasing, training.biasing_enabled),
      FIELD_STR(training, scorer, training.scorer),
      FIELD_DBL_LIST(training, heuristic_weights, training.heuristic_weights),
      FIELD_INT(training, scorer_hidden, training.scorer_hidden),
      FIELD_INT(training, dev_bias_n, training.dev_bias_n),
      FIELD_DBL(training, dev_lambda, training.dev_lambda),
      FIELD_DBL(training, dev_gamma, training.dev_gamma),
      FIELD_INT(training, max_decode_len, training.max_decode_len),

      FIELD_DBL(decode, lambda, decode.lambda),
      FIELD_DBL(decode, gamma, decode.gamma),
      FIELD_INT(decode, max_len, decode.max_len),

      FIELD_INT_LIST(eval, n_grid, eval.n_grid),
      FIELD_STR(eval, set, eval.set),
      FIELD_INT(eval, jobs, eval.jobs),

      FIELD_DBL_LIST(sweep, lambdas, sweep.lambdas),
      FIELD_DBL_LIST(sweep, gammas, sweep.gammas),
      FIELD_INT(sweep, n, sweep.n),
      FIELD_STR(sweep, set, sweep.set),

      FIELD_INT(ablate, epochs, ablate.epochs),
      FIELD_INT(ablate, n, ablate.n),

      FIELD_STR(paths, corpus_dir, paths.corpus_dir),
      FIELD_STR(paths, run_dir, paths.run_dir),
      FIELD_STR(paths, reports_dir, paths.reports_dir),
  };
  return schema;
}

void apply_config_value(RunConfig& config, const std::string& section, const std::string& key,
                        const std::string& value) {
  for (const auto& f : config_schema()) {
    if (f.section == section && f.key == key) {
      f.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + section + "." + key + "'");
}

void load_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError(path + ":" + std::to_string(line_no) + ": key outside any section");
    apply_config_value(config, section, key, value);
  }
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : config_schema()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

void write_resolved_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write resolved config: " + path);
  out << serialize_config(config);
}

uint64_t config_hash(const RunConfig& config) { return fnv1a64(serialize_config(config)); }

}  // namespace mtpbias
