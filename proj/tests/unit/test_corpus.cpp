#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mtpbias/corpus.hpp"
#include "mtpbias/rng.hpp"

using namespace mtpbias;

namespace {

CorpusConfig tiny_config() {
  CorpusConfig c;
  c.seed = 42;
  c.train_utts = 40;
  c.dev_utts = 10;
  c.test_utts = 10;
  c.train_entity_count = 60;
  c.test_entity_count = 30;
  c.active_entities = 12;
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Independent oracle: rescan a transcript against the inventory, taking the
// longest entity match at each start position.
std::vector<Span> scan_spans(const std::vector<int>& transcript,
                             const EntityInventory& inventory) {
  std::vector<Span> spans;
  for (size_t i = 0; i < transcript.size(); ++i) {
    int best_gid = -1;
    size_t best_len = 0;
    for (int gid = 0; gid < inventory.size(); ++gid) {
      const auto& toks = inventory.by_gid(gid).tokens;
      if (toks.size() > best_len && i + toks.size() <= transcript.size() &&
          std::equal(toks.begin(), toks.end(), transcript.begin() + static_cast<long>(i))) {
        best_gid = gid;
        best_len = toks.size();
      }
    }
    if (best_gid >= 0) spans.push_back({static_cast<int>(i), best_gid});
  }
  return spans;
}

}  // namespace

TEST_CASE("same seed produces byte-identical corpora") {
  namespace fs = std::filesystem;
  const auto dir1 = fs::temp_directory_path() / "mtpbias_corpus_a";
  const auto dir2 = fs::temp_directory_path() / "mtpbias_corpus_b";
  auto cfg = tiny_config();
  save_corpus(generate_corpus(cfg), dir1.string());
  save_corpus(generate_corpus(cfg), dir2.string());
  for (const char* name :
       {"train.txt", "dev.txt", "test.txt", "train.features.bin", "dev.features.bin",
        "test.features.bin", "train.spans.tsv", "entities.tsv", "stats.json", "meta.json"}) {
    CHECK(slurp((dir1 / name).string()) == slurp((dir2 / name).string()));
    CHECK(!slurp((dir1 / name).string()).empty());
  }
}

TEST_CASE("corpus round-trips through its on-disk format") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "mtpbias_corpus_rt";
  auto cfg = tiny_config();
  Corpus corpus = generate_corpus(cfg);
  save_corpus(corpus, dir.string());
  Corpus loaded = load_corpus(dir.string());
  REQUIRE(loaded.train.size() == corpus.train.size());
  CHECK(loaded.config.seed == cfg.seed);
  for (size_t i = 0; i < corpus.train.size(); ++i) {
    CHECK(loaded.train[i].transcript == corpus.train[i].transcript);
    REQUIRE(loaded.train[i].spans.size() == corpus.train[i].spans.size());
    CHECK(std::memcmp(loaded.train[i].features.data(), corpus.train[i].features.data(),
                      sizeof(float) * static_cast<size_t>(corpus.train[i].features.size())) == 0);
  }
  CHECK(loaded.inventory.size() == corpus.inventory.size());
  CHECK(loaded.inventory.train_count == corpus.inventory.train_count);
}

TEST_CASE("noiseless features are exact prototypes a nearest-prototype decoder inverts") {
  auto cfg = tiny_config();
  cfg.sigma = 0.0;
  Corpus corpus = generate_corpus(cfg);
  // Recover each token by nearest prototype; prototypes are reconstructed
  // from the first utterance frames themselves (sigma = 0 makes frames exact).
  // Frame r*j matches token j of the transcript.
  for (const auto& utt : corpus.train) {
    const int s_full = static_cast<int>(utt.transcript.size());
    REQUIRE(utt.features.rows() == cfg.repeat * s_full);
    for (int j = 0; j < s_full; ++j)
      for (int r = 0; r < cfg.repeat; ++r)
        for (int a = 0; a < cfg.d_audio; ++a)
          CHECK(utt.features(cfg.repeat * j + r, a) == utt.features(cfg.repeat * j, a));
  }
  // Identical tokens must produce identical frames; distinct tokens distinct
  // frames, so exact nearest-prototype decoding has zero token error.
  std::map<int, std::vector<float>> proto;
  const size_t r = static_cast<size_t>(cfg.repeat);
  const size_t da = static_cast<size_t>(cfg.d_audio);
  for (const auto& utt : corpus.train)
    for (size_t j = 0; j < utt.transcript.size(); ++j) {
      std::vector<float> frame(utt.features.data() + j * r * da,
                               utt.features.data() + (j * r + 1) * da);
      auto [it, inserted] = proto.emplace(utt.transcript[j], frame);
      if (!inserted) CHECK(it->second == frame);
    }
}

TEST_CASE("stored spans equal the independent scan oracle") {
  Corpus corpus = generate_corpus(tiny_config());
  auto check_split = [&](const std::vector<Utterance>& utts) {
    for (const auto& utt : utts) {
      auto scanned = scan_spans(utt.transcript, corpus.inventory);
      REQUIRE(scanned.size() == utt.spans.size());
      for (size_t i = 0; i < scanned.size(); ++i) {
        CHECK(scanned[i].start == utt.spans[i].start);
        CHECK(scanned[i].entity_gid == utt.spans[i].entity_gid);
      }
    }
  };
  check_split(corpus.train);
  check_split(corpus.dev);
  check_split(corpus.test);
}

TEST_CASE("zero-shot condition: test entities never occur in training transcripts") {
  Corpus corpus = generate_corpus(tiny_config());
  for (const auto& utt : corpus.train)
    for (const auto& span : utt.spans) CHECK(!corpus.inventory.is_test_gid(span.entity_gid));
  // Stronger: scan for any test-entity token sequence inside train transcripts.
  for (const auto& utt : corpus.train) {
    for (int gid = corpus.inventory.train_count; gid < corpus.inventory.size(); ++gid) {
      const auto& toks = corpus.inventory.by_gid(gid).tokens;
      for (size_t i = 0; i + toks.size() <= utt.transcript.size(); ++i)
        CHECK(!std::equal(toks.begin(), toks.end(), utt.transcript.begin() + static_cast<long>(i)));
    }
  }
}

TEST_CASE("dev and test draw on disjoint entity windows") {
  Corpus corpus = generate_corpus(tiny_config());
  std::set<int> dev_gids, test_gids;
  for (const auto& u : corpus.dev)
    for (const auto& s : u.spans) dev_gids.insert(s.entity_gid);
  for (const auto& u : corpus.test)
    for (const auto& s : u.spans) test_gids.insert(s.entity_gid);
  for (int gid : dev_gids) CHECK(!test_gids.count(gid));
}

TEST_CASE("entity length statistics mirror the expected profile") {
  Corpus corpus = generate_corpus(tiny_config());
  CHECK(corpus.stats.frac_le4 >= 0.80);
  CHECK(corpus.stats.avg_tokens > 2.0);
  CHECK(corpus.stats.avg_tokens < 5.0);
  long long total = 0;
  for (int c : corpus.stats.length_histogram) total += c;
  CHECK(total == corpus.inventory.size());
}

TEST_CASE("config validation rejects bad ranges and negative sigma") {
  auto cfg = tiny_config();
  cfg.sigma = -0.1;
  CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
  cfg = tiny_config();
  cfg.entity_lo = 30;  // overlaps carriers
  CHECK_THROWS_AS(generate_corpus(cfg), ConfigError);
}

TEST_CASE("bias sampling: kappa = 0 keeps only positives plus the null entity") {
  Corpus corpus = generate_corpus(tiny_config());
  std::vector<const Utterance*> batch;
  for (size_t i = 0; i < 6; ++i) batch.push_back(&corpus.train[i]);
  std::set<std::string> positive_surfaces;
  for (const auto* u : batch)
    for (const auto& s : u->spans)
      positive_surfaces.insert(corpus.inventory.by_gid(s.entity_gid).surface);
  Rng rng(3);
  BiasList list = sample_bias_list(batch, corpus.inventory, {1, 4, 0}, rng, 4);
  CHECK(static_cast<size_t>(list.n_real()) == positive_surfaces.size());
  for (int i = 1; i <= list.n_real(); ++i)
    CHECK(positive_surfaces.count(list.entities[static_cast<size_t>(i)].surface) == 1);
}

TEST_CASE("bias sampling: kappa = 2 with four positives gives 13 entries with the null") {
  Corpus corpus = generate_corpus(tiny_config());
  // Collect utterances until the batch holds exactly 4 distinct entities.
  std::vector<const Utterance*> batch;
  std::set<int> gids;
  for (const auto& u : corpus.train) {
    bool adds = false;
    for (const auto& s : u.spans)
      if (!gids.count(s.entity_gid)) adds = true;
    if (!adds) continue;
    std::set<int> next = gids;
    for (const auto& s : u.spans) next.insert(s.entity_gid);
    if (next.size() > 4) continue;
    batch.push_back(&u);
    gids = next;
    if (gids.size() == 4) break;
  }
  REQUIRE(gids.size() == 4);
  Rng rng(4);
  BiasList list = sample_bias_list(batch, corpus.inventory, {1, 4, 2}, rng, 4);
  CHECK(list.entities.size() == 13);  // 4 positives + 8 negatives + null
  // Negatives are disjoint from positives and come from the train inventory.
  for (int i = 1; i <= list.n_real(); ++i) {
    const auto& surf = list.entities[static_cast<size_t>(i)].surface;
    int gid = -1;
    for (int g = 0; g < corpus.inventory.size(); ++g)
      if (corpus.inventory.by_gid(g).surface == surf) gid = g;
    REQUIRE(gid >= 0);
    CHECK(gid < corpus.inventory.train_count);
  }
}

TEST_CASE("bias sampling: a batch with no entities yields the null-only list") {
  Corpus corpus = generate_corpus(tiny_config());
  const Utterance* empty_utt = nullptr;
  for (const auto& u : corpus.train)
    if (u.spans.empty()) empty_utt = &u;
  REQUIRE(empty_utt != nullptr);
  std::vector<const Utterance*> batch = {empty_utt};
  Rng rng(5);
  BiasList list = sample_bias_list(batch, corpus.inventory, {1, 4, 2}, rng, 4);
  CHECK(list.n_real() == 0);
}

TEST_CASE("bias sampling rejects an inventory too small for the negatives") {
  Corpus corpus = generate_corpus(tiny_config());
  std::vector<const Utterance*> batch;
  for (const auto& u : corpus.train)
    if (!u.spans.empty()) batch.push_back(&u);
  Rng rng(6);
  CHECK_THROWS_AS(sample_bias_list(batch, corpus.inventory, {1, 4, 1000}, rng, 4), DataError);
}

TEST_CASE("eval bias list covers the grid semantics") {
  Corpus corpus = generate_corpus(tiny_config());
  // N = 0: the null-only list, biasing disabled.
  BiasList none = build_eval_bias_list(corpus.test, corpus.inventory, 0, 42, 4);
  CHECK(none.n_real() == 0);

  std::set<int> true_gids;
  for (const auto& u : corpus.test)
    for (const auto& s : u.spans) true_gids.insert(s.entity_gid);
  const int n_true = static_cast<int>(true_gids.size());
  REQUIRE(n_true >= 1);

  BiasList list = build_eval_bias_list(corpus.test, corpus.inventory, n_true + 7, 42, 4);
  CHECK(list.n_real() == n_true + 7);
  // All true entities are present.
  for (int gid : true_gids)
    CHECK(list.index_of(corpus.inventory.by_gid(gid).surface) >= 1);

  // Distractors are seed-stable.
  BiasList again = build_eval_bias_list(corpus.test, corpus.inventory, n_true + 7, 42, 4);
  for (size_t i = 0; i < list.entities.size(); ++i)
    CHECK(list.entities[i].surface == again.entities[i].surface);

  // N below the true-entity count is an error.
  CHECK_THROWS_AS(build_eval_bias_list(corpus.test, corpus.inventory, n_true - 1, 42, 4),
                  DataError);
}

TEST_CASE("bias list files round-trip") {
  namespace fs = std::filesystem;
  Corpus corpus = generate_corpus(tiny_config());
  BiasList list = build_eval_bias_list(corpus.test, corpus.inventory, 20, 42, 4);
  const auto path = (fs::temp_directory_path() / "mtpbias_list.tsv").string();
  save_bias_list(list, path);
  BiasList loaded = load_bias_list(path, 4);
  REQUIRE(loaded.entities.size() == list.entities.size());
  for (size_t i = 0; i < list.entities.size(); ++i) {
    CHECK(loaded.entities[i].surface == list.entities[i].surface);
    CHECK(loaded.entities[i].tokens == list.entities[i].tokens);
  }
  // comment lines are ignored
  std::ofstream app(path, std::ios::app);
  app << "# a comment\n";
  app.close();
  CHECK(load_bias_list(path, 4).entities.size() == list.entities.size());
}
