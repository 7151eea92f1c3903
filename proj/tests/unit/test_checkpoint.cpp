#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mtpbias/checkpoint.hpp"
#include "mtpbias/model.hpp"
#include "mtpbias/rng.hpp"

using namespace mtpbias;

namespace {
std::string tmp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "mtpbias_ckpt_test";
  std::filesystem::create_directories(dir);
  return dir.string();
}
}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
  const std::string dir = tmp_dir();
  Rng rng(5);
  std::vector<NamedTensor> tensors;
  tensors.push_back({"w1", {3, 4}, {}});
  tensors.push_back({"b1", {4}, {}});
  for (auto& t : tensors) {
    int64_t n = 1;
    for (int d : t.shape) n *= d;
    for (int64_t i = 0; i < n; ++i)
      t.data.push_back(static_cast<float>(rng.next_gaussian()));
  }
  save_tensors(dir + "/t.manifest", dir + "/t.bin", tensors);
  auto loaded = load_tensors(dir + "/t.manifest", dir + "/t.bin");
  REQUIRE(loaded.size() == tensors.size());
  for (size_t i = 0; i < tensors.size(); ++i) {
    CHECK(loaded[i].name == tensors[i].name);
    CHECK(loaded[i].shape == tensors[i].shape);
    CHECK(std::memcmp(loaded[i].data.data(), tensors[i].data.data(),
                      tensors[i].data.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("blob leads with the format version and rejects others") {
  const std::string dir = tmp_dir();
  save_tensors(dir + "/v.manifest", dir + "/v.bin", {{"x", {1}, {1.0f}}});
  {
    std::ifstream blob(dir + "/v.bin", std::ios::binary);
    uint32_t version = 0;
    blob.read(reinterpret_cast<char*>(&version), sizeof(version));
    CHECK(version == kCheckpointVersion);
  }
  {
    std::ofstream blob(dir + "/v.bin", std::ios::binary | std::ios::trunc);
    const uint32_t bad = 999;
    blob.write(reinterpret_cast<const char*>(&bad), sizeof(bad));
    const float x = 1.0f;
    blob.write(reinterpret_cast<const char*>(&x), sizeof(x));
  }
  CHECK_THROWS_AS(load_tensors(dir + "/v.manifest", dir + "/v.bin"), DataError);
}

TEST_CASE("truncated and oversized blobs are rejected") {
  const std::string dir = tmp_dir();
  save_tensors(dir + "/s.manifest", dir + "/s.bin", {{"x", {2}, {1.0f, 2.0f}}});
  {
    // append a trailing byte
    std::ofstream blob(dir + "/s.bin", std::ios::binary | std::ios::app);
    blob.put(0);
  }
  CHECK_THROWS_AS(load_tensors(dir + "/s.manifest", dir + "/s.bin"), DataError);
}

TEST_CASE("loading a checkpoint into a mismatched parameter set fails") {
  auto params = ModelParams<float>::init(ModelDims{16, 16, 1, 1, 1, 2, 4, 2}, 3);
  auto stored = to_named_tensors(params.named);
  stored[0].name = "somebody_else";
  CHECK_THROWS_AS(load_named_tensors(params.named, stored), DataError);
  auto fewer = to_named_tensors(params.named);
  fewer.pop_back();
  CHECK_THROWS_AS(load_named_tensors(params.named, fewer), DataError);
}
