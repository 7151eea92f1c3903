#include "mtpbias/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <unordered_set>

#include "mtpbias/checkpoint.hpp"
#include "mtpbias/errors.hpp"
#include "mtpbias/vocab.hpp"

namespace mtpbias {

namespace fs = std::filesystem;

void CorpusConfig::validate() const {
  if (sigma < 0) throw ConfigError("corpus.sigma must be >= 0, got " + std::to_string(sigma));
  if (entity_sigma_scale < 0) throw ConfigError("corpus.entity_sigma_scale must be >= 0");
  if (repeat < 1) throw ConfigError("corpus.repeat must be >= 1");
  if (d_audio < 1) throw ConfigError("corpus.d_audio must be >= 1");
  if (min_carriers < 1 || max_carriers < min_carriers)
    throw ConfigError("corpus: need 1 <= min_carriers <= max_carriers");
  if (p_zero_entities < 0 || p_one_entity < 0 || p_zero_entities + p_one_entity > 1.0)
    throw ConfigError("corpus: entity count probabilities must be a sub-distribution");
  if (train_entity_count < 1 || test_entity_count < 1)
    throw ConfigError("corpus: entity inventory sizes must be positive");
  if (active_entities < 1 || 2 * active_entities > test_entity_count)
    throw ConfigError("corpus.active_entities: dev and test windows must fit the test inventory");
  if (length_weights.size() != 4)
    throw ConfigError("corpus.length_weights: expected 4 weights for lengths 2..5");
  for (double w : length_weights)
    if (w < 0) throw ConfigError("corpus.length_weights must be non-negative");
  // Token id ranges: entities must not collide with carrier text, and both
  // must agree with the fixed vocabulary so detokenization stays coherent.
  if (entity_lo <= carrier_hi && carrier_lo <= entity_hi)
    throw ConfigError("corpus: entity token range [" + std::to_string(entity_lo) + ", " +
                      std::to_string(entity_hi) + "] overlaps carrier range [" +
                      std::to_string(carrier_lo) + ", " + std::to_string(carrier_hi) + "]");
  if (carrier_lo != vocab::kCarrierFirst || carrier_hi != vocab::kCarrierLast ||
      entity_lo != vocab::kEntityStartFirst || entity_hi != vocab::kEntityContLast)
    throw ConfigError("corpus: token ranges must match the fixed vocabulary layout");
}

const std::vector<Utterance>& Corpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw ConfigError("unknown corpus split '" + name + "'");
}

namespace {

std::string surface_of(const std::vector<int>& tokens) {
  std::string s;
  for (int id : tokens) s += vocab::piece(id);
  return s;
}

int sample_length(Rng& rng, const std::vector<double>& weights) {
  double total = 0;
  for (double w : weights) total += w;
  double x = rng.next_double() * total;
  for (size_t i = 0; i < weights.size(); ++i) {
    x -= weights[i];
    if (x < 0) return static_cast<int>(i) + 2;
  }
  return static_cast<int>(weights.size()) + 1;
}

std::vector<Entity> generate_entities(int count, const CorpusConfig& cfg, Rng& rng,
                                      std::unordered_set<std::string>& taken) {
  std::vector<Entity> out;
  out.reserve(static_cast<size_t>(count));
  int attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > count * 1000)
      throw DataError("entity generation: token space too small for requested inventory");
    const int len = sample_length(rng, cfg.length_weights);
    std::vector<int> toks;
    toks.reserve(static_cast<size_t>(len));
    toks.push_back(rng.next_int(vocab::kEntityStartFirst, vocab::kEntityStartLast));
    for (int i = 1; i < len; ++i)
      toks.push_back(rng.next_int(vocab::kEntityContFirst, vocab::kEntityContLast));
    std::string surf = surface_of(toks);
    if (!taken.insert(surf).second) continue;
    out.push_back({std::move(toks), std::move(surf)});
  }
  return out;
}

// Prototype vectors, one unit-norm row per token id.
std::vector<std::vector<float>> make_prototypes(const CorpusConfig& cfg) {
  Rng rng = Rng::derive(cfg.seed, "prototypes");
  std::vector<std::vector<float>> protos(vocab::kSize);
  for (int v = 0; v < vocab::kSize; ++v) {
    auto& p = protos[static_cast<size_t>(v)];
    p.resize(static_cast<size_t>(cfg.d_audio));
    double norm2 = 0;
    for (auto& x : p) {
      const double g = rng.next_gaussian();
      x = static_cast<float>(g);
      norm2 += g * g;
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(std::max(norm2, 1e-12)));
    for (auto& x : p) x *= inv;
  }
  return protos;
}

Utterance generate_utterance(const CorpusConfig& cfg, const EntityInventory& inventory,
                             int active_lo, int active_count, Rng& rng,
                             const std::vector<std::vector<float>>& protos) {
  const int n_carriers = rng.next_int(cfg.min_carriers, cfg.max_carriers);
  const double roll = rng.next_double();
  int n_ent = roll < cfg.p_zero_entities ? 0 : (roll < cfg.p_zero_entities + cfg.p_one_entity ? 1 : 2);
  if (active_count < n_ent) n_ent = active_count;

  std::vector<int> gids;
  while (static_cast<int>(gids.size()) < n_ent) {
    const int gid = active_lo + rng.next_int(0, active_count - 1);
    if (std::find(gids.begin(), gids.end(), gid) == gids.end()) gids.push_back(gid);
  }
  // Distinct insertion gaps keep entity start steps unique.
  std::vector<int> gaps;
  while (static_cast<int>(gaps.size()) < n_ent) {
    const int g = rng.next_int(0, n_carriers);
    if (std::find(gaps.begin(), gaps.end(), g) == gaps.end()) gaps.push_back(g);
  }
  std::vector<std::pair<int, int>> inserts;  // (gap, gid), ordered by gap
  for (int i = 0; i < n_ent; ++i) inserts.emplace_back(gaps[static_cast<size_t>(i)], gids[static_cast<size_t>(i)]);
  std::sort(inserts.begin(), inserts.end());

  Utterance utt;
  utt.transcript.push_back(vocab::kBos);
  size_t next_insert = 0;
  for (int c = 0; c <= n_carriers; ++c) {
    while (next_insert < inserts.size() && inserts[next_insert].first == c) {
      const Entity& e = inventory.by_gid(inserts[next_insert].second);
      utt.spans.push_back({static_cast<int>(utt.transcript.size()), inserts[next_insert].second});
      utt.transcript.insert(utt.transcript.end(), e.tokens.begin(), e.tokens.end());
      ++next_insert;
    }
    if (c < n_carriers) utt.transcript.push_back(rng.next_int(cfg.carrier_lo, cfg.carrier_hi));
  }
  utt.transcript.push_back(vocab::kEos);

  const int s_full = static_cast<int>(utt.transcript.size());
  const int t_frames = cfg.repeat * s_full;
  utt.features = TensorF::zeros({t_frames, cfg.d_audio});
  float* f = utt.features.data();
  for (int j = 0; j < s_full; ++j) {
    const int tok = utt.transcript[static_cast<size_t>(j)];
    const bool is_entity = tok >= cfg.entity_lo && tok <= cfg.entity_hi;
    const double s = cfg.sigma * (is_entity ? cfg.entity_sigma_scale : 1.0);
    const auto& proto = protos[static_cast<size_t>(tok)];
    for (int r = 0; r < cfg.repeat; ++r) {
      float* frame = f + (static_cast<size_t>(j) * cfg.repeat + r) * cfg.d_audio;
      for (int a = 0; a < cfg.d_audio; ++a)
        frame[a] = proto[static_cast<size_t>(a)] +
                   (s > 0 ? static_cast<float>(s * rng.next_gaussian()) : 0.0f);
    }
  }
  return utt;
}

}  // namespace

CorpusStats compute_inventory_stats(const EntityInventory& inventory) {
  CorpusStats stats;
  size_t max_len = 0;
  for (const auto& e : inventory.entities) max_len = std::max(max_len, e.tokens.size());
  stats.length_histogram.assign(max_len + 1, 0);
  double total = 0;
  int le4 = 0;
  for (const auto& e : inventory.entities) {
    stats.length_histogram[e.tokens.size()] += 1;
    total += static_cast<double>(e.tokens.size());
    if (e.tokens.size() <= 4) ++le4;
  }
  const double n = static_cast<double>(inventory.entities.size());
  stats.avg_tokens = n > 0 ? total / n : 0.0;
  stats.frac_le4 = n > 0 ? le4 / n : 0.0;
  return stats;
}

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.config = config;

  std::unordered_set<std::string> taken;
  Rng ent_rng = Rng::derive(config.seed, "entities");
  auto train_entities = generate_entities(config.train_entity_count, config, ent_rng, taken);
  auto test_entities = generate_entities(config.test_entity_count, config, ent_rng, taken);
  corpus.inventory.train_count = config.train_entity_count;
  corpus.inventory.test_count = config.test_entity_count;
  corpus.inventory.entities = std::move(train_entities);
  corpus.inventory.entities.insert(corpus.inventory.entities.end(),
                                   std::make_move_iterator(test_entities.begin()),
                                   std::make_move_iterator(test_entities.end()));
  corpus.stats = compute_inventory_stats(corpus.inventory);

  const auto protos = make_prototypes(config);
  auto make_split = [&](const std::string& name, int count, int active_lo, int active_count) {
    std::vector<Utterance> utts;
    utts.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
      Rng rng = Rng::derive(config.seed, name, static_cast<uint64_t>(i));
      utts.push_back(generate_utterance(config, corpus.inventory, active_lo, active_count, rng, protos));
    }
    return utts;
  };
  // Dev and test draw on disjoint windows of the test inventory, so tuning on
  // dev stays honest while both remain unseen in training.
  corpus.train = make_split("train", config.train_utts, 0, config.train_entity_count);
  corpus.dev = make_split("dev", config.dev_utts, corpus.inventory.train_count,
                          config.active_entities);
  corpus.test = make_split("test", config.test_utts,
                           corpus.inventory.train_count + config.active_entities,
                           config.active_entities);
  return corpus;
}

// --- serialization -----------------------------------------------------------

namespace {

void save_split(const std::string& dir, const std::string& name,
                const std::vector<Utterance>& utts) {
  std::ofstream txt(dir + "/" + name + ".txt", std::ios::trunc);
  std::ofstream spans(dir + "/" + name + ".spans.tsv", std::ios::trunc);
  if (!txt || !spans) throw DataError("cannot write corpus split files in " + dir);
  std::vector<NamedTensor> feats;
  feats.reserve(utts.size());
  for (size_t i = 0; i < utts.size(); ++i) {
    const auto& u = utts[i];
    for (size_t j = 0; j < u.transcript.size(); ++j)
      txt << (j ? " " : "") << u.transcript[j];
    txt << '\n';
    for (const auto& s : u.spans) spans << i << '\t' << s.start << '\t' << s.entity_gid << '\n';
    feats.push_back({"u" + std::to_string(i), u.features.shape(),
                     std::vector<float>(u.features.data(), u.features.data() + u.features.size())});
  }
  save_tensors(dir + "/" + name + ".features.manifest", dir + "/" + name + ".features.bin", feats);
}

std::vector<Utterance> load_split(const std::string& dir, const std::string& name) {
  std::ifstream txt(dir + "/" + name + ".txt");
  if (!txt) throw DataError("cannot read corpus split: " + dir + "/" + name + ".txt");
  std::vector<Utterance> utts;
  std::string line;
  while (std::getline(txt, line)) {
    if (line.empty()) continue;
    Utterance u;
    std::istringstream ls(line);
    int id;
    while (ls >> id) u.transcript.push_back(id);
    utts.push_back(std::move(u));
  }
  std::ifstream spans(dir + "/" + name + ".spans.tsv");
  if (!spans) throw DataError("cannot read spans: " + dir + "/" + name + ".spans.tsv");
  while (std::getline(spans, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    size_t idx;
    Span s{};
    ls >> idx >> s.start >> s.entity_gid;
    if (idx >= utts.size()) throw DataError("spans file references utterance " + std::to_string(idx));
    utts[idx].spans.push_back(s);
  }
  auto feats = load_tensors(dir + "/" + name + ".features.manifest",
                            dir + "/" + name + ".features.bin");
  if (feats.size() != utts.size())
    throw DataError("feature count " + std::to_string(feats.size()) + " != utterance count " +
                    std::to_string(utts.size()) + " in split " + name);
  for (size_t i = 0; i < utts.size(); ++i)
    utts[i].features = TensorF::from_data(feats[i].shape, std::move(feats[i].data));
  return utts;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
  fs::create_directories(dir);
  save_split(dir, "train", corpus.train);
  save_split(dir, "dev", corpus.dev);
  save_split(dir, "test", corpus.test);

  std::ofstream ents(dir + "/entities.tsv", std::ios::trunc);
  if (!ents) throw DataError("cannot write " + dir + "/entities.tsv");
  for (int gid = 0; gid < corpus.inventory.size(); ++gid) {
    const auto& e = corpus.inventory.by_gid(gid);
    ents << gid << '\t' << (corpus.inventory.is_test_gid(gid) ? "test" : "train") << '\t'
         << e.surface << '\t';
    for (size_t j = 0; j < e.tokens.size(); ++j) ents << (j ? " " : "") << e.tokens[j];
    ents << '\n';
  }

  nlohmann::json stats;
  stats["entities"] = corpus.inventory.size();
  stats["train_entities"] = corpus.inventory.train_count;
  stats["test_entities"] = corpus.inventory.test_count;
  stats["avg_tokens"] = corpus.stats.avg_tokens;
  stats["frac_le4_tokens"] = corpus.stats.frac_le4;
  stats["length_histogram"] = corpus.stats.length_histogram;
  std::ofstream sj(dir + "/stats.json", std::ios::trunc);
  sj << stats.dump(2) << '\n';

  const auto& c = corpus.config;
  nlohmann::json meta;
  meta["seed"] = c.seed;
  meta["train_utts"] = c.train_utts;
  meta["dev_utts"] = c.dev_utts;
  meta["test_utts"] = c.test_utts;
  meta["min_carriers"] = c.min_carriers;
  meta["max_carriers"] = c.max_carriers;
  meta["p_zero_entities"] = c.p_zero_entities;
  meta["p_one_entity"] = c.p_one_entity;
  meta["train_entity_count"] = c.train_entity_count;
  meta["test_entity_count"] = c.test_entity_count;
  meta["active_entities"] = c.active_entities;
  meta["length_weights"] = c.length_weights;
  meta["d_audio"] = c.d_audio;
  meta["repeat"] = c.repeat;
  meta["sigma"] = c.sigma;
  meta["entity_sigma_scale"] = c.entity_sigma_scale;
  std::ofstream mj(dir + "/meta.json", std::ios::trunc);
  mj << meta.dump(2) << '\n';
}

Corpus load_corpus(const std::string& dir) {
  Corpus corpus;
  {
    std::ifstream mj(dir + "/meta.json");
    if (!mj) throw DataError("cannot read " + dir + "/meta.json");
    nlohmann::json meta = nlohmann::json::parse(mj);
    auto& c = corpus.config;
    c.seed = meta.at("seed").get<uint64_t>();
    c.train_utts = meta.at("train_utts").get<int>();
    c.dev_utts = meta.at("dev_utts").get<int>();
    c.test_utts = meta.at("test_utts").get<int>();
    c.min_carriers = meta.at("min_carriers").get<int>();
    c.max_carriers = meta.at("max_carriers").get<int>();
    c.p_zero_entities = meta.at("p_zero_entities").get<double>();
    c.p_one_entity = meta.at("p_one_entity").get<double>();
    c.train_entity_count = meta.at("train_entity_count").get<int>();
    c.test_entity_count = meta.at("test_entity_count").get<int>();
    c.active_entities = meta.at("active_entities").get<int>();
    c.length_weights = meta.at("length_weights").get<std::vector<double>>();
    c.d_audio = meta.at("d_audio").get<int>();
    c.repeat = meta.at("repeat").get<int>();
    c.sigma = meta.at("sigma").get<double>();
    c.entity_sigma_scale = meta.at("entity_sigma_scale").get<double>();
  }
  corpus.train = load_split(dir, "train");
  corpus.dev = load_split(dir, "dev");
  corpus.test = load_split(dir, "test");

  std::ifstream ents(dir + "/entities.tsv");
  if (!ents) throw DataError("cannot read " + dir + "/entities.tsv");
  std::string line;
  while (std::getline(ents, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int gid;
    std::string split_name, surface;
    ls >> gid >> split_name >> surface;
    Entity e;
    e.surface = surface;
    int id;
    while (ls >> id) e.tokens.push_back(id);
    if (gid != corpus.inventory.size())
      throw DataError("entities.tsv: non-contiguous gid " + std::to_string(gid));
    corpus.inventory.entities.push_back(std::move(e));
    if (split_name == "train")
      corpus.inventory.train_count += 1;
    else
      corpus.inventory.test_count += 1;
  }
  corpus.stats = compute_inventory_stats(corpus.inventory);
  return corpus;
}

// --- bias list construction --------------------------------------------------

BiasList sample_bias_list(const std::vector<const Utterance*>& batch,
                          const EntityInventory& inventory, const SamplerConfig& cfg, Rng& rng,
                          int k_heads) {
  cfg.validate();
  std::vector<int> positive_gids;
  std::unordered_set<int> positive_set;
  for (const Utterance* utt : batch) {
    std::vector<int> utt_gids;
    for (const auto& s : utt->spans)
      if (std::find(utt_gids.begin(), utt_gids.end(), s.entity_gid) == utt_gids.end())
        utt_gids.push_back(s.entity_gid);
    if (static_cast<int>(utt_gids.size()) > cfg.max_pos)
      throw DataError("bias sampling: utterance carries " + std::to_string(utt_gids.size()) +
                      " entities, more than max_pos=" + std::to_string(cfg.max_pos));
    for (int gid : utt_gids)
      if (positive_set.insert(gid).second) positive_gids.push_back(gid);
  }

  const int n_neg = cfg.kappa * static_cast<int>(positive_gids.size());
  std::vector<int> pool;
  for (int gid = 0; gid < inventory.train_count; ++gid)
    if (!positive_set.count(gid)) pool.push_back(gid);
  if (static_cast<int>(pool.size()) < n_neg)
    throw DataError("bias sampling: inventory too small for " + std::to_string(n_neg) +
                    " negatives (pool " + std::to_string(pool.size()) + ")");
  // Partial Fisher-Yates draw of negatives.
  for (int i = 0; i < n_neg; ++i) {
    const int j = i + static_cast<int>(rng.next_below(pool.size() - static_cast<size_t>(i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }

  std::vector<Entity> list;
  for (int gid : positive_gids) list.push_back(inventory.by_gid(gid));
  for (int i = 0; i < n_neg; ++i) list.push_back(inventory.by_gid(pool[static_cast<size_t>(i)]));
  return BiasList::build(std::move(list), k_heads);
}

BiasList build_eval_bias_list(const std::vector<Utterance>& utts,
                              const EntityInventory& inventory, int n, uint64_t seed,
                              int k_heads) {
  if (n < 0) throw ConfigError("eval bias list: n must be >= 0");
  if (n == 0) return BiasList::build({}, k_heads);

  std::set<int> true_gids;
  for (const auto& u : utts)
    for (const auto& s : u.spans) true_gids.insert(s.entity_gid);
  if (static_cast<int>(true_gids.size()) > n)
    throw DataError("eval bias list: n=" + std::to_string(n) + " smaller than the " +
                    std::to_string(true_gids.size()) + " true entities of the evaluated set");

  std::vector<int> pool;
  for (int gid = 0; gid < inventory.size(); ++gid)
    if (!true_gids.count(gid)) pool.push_back(gid);
  const int n_distract = n - static_cast<int>(true_gids.size());
  if (static_cast<int>(pool.size()) < n_distract)
    throw DataError("eval bias list: inventory too small for " + std::to_string(n_distract) +
                    " distractors");
  Rng rng = Rng::derive(seed, "eval_bias_list", static_cast<uint64_t>(n));
  for (int i = 0; i < n_distract; ++i) {
    const int j = i + static_cast<int>(rng.next_below(pool.size() - static_cast<size_t>(i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }

  std::vector<Entity> list;
  for (int gid : true_gids) list.push_back(inventory.by_gid(gid));
  for (int i = 0; i < n_distract; ++i) list.push_back(inventory.by_gid(pool[static_cast<size_t>(i)]));
  return BiasList::build(std::move(list), k_heads);
}

void save_bias_list(const BiasList& list, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write bias list: " + path);
  for (size_t i = 1; i < list.entities.size(); ++i) {
    const auto& e = list.entities[i];
    out << e.surface << '\t';
    for (size_t j = 0; j < e.tokens.size(); ++j) out << (j ? " " : "") << e.tokens[j];
    out << '\n';
  }
}

BiasList load_bias_list(const std::string& path, int k_heads) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read bias list: " + path);
  std::vector<Entity> entities;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("bias list " + path + ": malformed line '" + line + "'");
    Entity e;
    e.surface = line.substr(0, tab);
    std::istringstream ids(line.substr(tab + 1));
    int id;
    while (ids >> id) e.tokens.push_back(id);
    entities.push_back(std::move(e));
  }
  return BiasList::build(std::move(entities), k_heads);
}

}  // namespace mtpbias
