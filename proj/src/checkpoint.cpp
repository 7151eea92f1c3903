#include "mtpbias/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "mtpbias/errors.hpp"

namespace mtpbias {

void save_tensors(const std::string& manifest_path, const std::string& blob_path,
                  const std::vector<NamedTensor>& tensors) {
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) throw DataError("cannot write manifest: " + manifest_path);
  for (const auto& t : tensors) {
    if (t.name.empty() || t.name.find_first_of(" \t\n") != std::string::npos)
      throw DataError("invalid tensor name for manifest: '" + t.name + "'");
    int64_t n = 1;
    manifest << t.name;
    for (int d : t.shape) {
      manifest << ' ' << d;
      n *= d;
    }
    manifest << '\n';
    if (n != static_cast<int64_t>(t.data.size()))
      throw DimensionError("save_tensors: '" + t.name + "' shape " + shape_str(t.shape) +
                           " does not match data length " + std::to_string(t.data.size()));
  }
  manifest.close();

  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw DataError("cannot write blob: " + blob_path);
  const uint32_t version = kCheckpointVersion;
  blob.write(reinterpret_cast<const char*>(&version), sizeof(version));
  for (const auto& t : tensors)
    blob.write(reinterpret_cast<const char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!blob) throw DataError("failed writing blob: " + blob_path);
}

std::vector<NamedTensor> load_tensors(const std::string& manifest_path,
                                      const std::string& blob_path) {
  std::ifstream manifest(manifest_path);
  if (!manifest) throw DataError("cannot read manifest: " + manifest_path);
  std::vector<NamedTensor> tensors;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    NamedTensor t;
    ls >> t.name;
    int d;
    int64_t n = 1;
    while (ls >> d) {
      t.shape.push_back(d);
      n *= d;
    }
    t.data.resize(static_cast<size_t>(n));
    tensors.push_back(std::move(t));
  }

  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw DataError("cannot read blob: " + blob_path);
  uint32_t version = 0;
  blob.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!blob || version != kCheckpointVersion)
    throw DataError("blob " + blob_path + ": unsupported format version " +
                    std::to_string(version));
  for (auto& t : tensors) {
    blob.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!blob)
      throw DataError("blob " + blob_path + ": truncated while reading '" + t.name + "'");
  }
  char extra;
  if (blob.read(&extra, 1))
    throw DataError("blob " + blob_path + ": trailing bytes beyond manifest contents");
  return tensors;
}

}  // namespace mtpbias
