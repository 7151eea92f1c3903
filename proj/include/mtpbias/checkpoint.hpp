#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtpbias/tensor.hpp"

namespace mtpbias {

// Tensor archive: a text manifest of "name dim0 dim1 ..." lines plus one
// binary blob holding a leading format-version integer followed by the
// tensors' float32 data concatenated in manifest order. Round-trips are
// bit-exact.
inline constexpr uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; this build targets LE hosts");

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

void save_tensors(const std::string& manifest_path, const std::string& blob_path,
                  const std::vector<NamedTensor>& tensors);

std::vector<NamedTensor> load_tensors(const std::string& manifest_path,
                                      const std::string& blob_path);

}  // namespace mtpbias
