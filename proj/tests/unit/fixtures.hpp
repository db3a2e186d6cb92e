#pragma once

#include "adadiff/mapper.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <string>

namespace adadiff::testing {

/// Small networks that keep unit tests in the seconds range.
inline MapperConfig tiny_config() {
  MapperConfig c;
  c.imageSize = 16;
  c.baseChannels = 8;
  c.channelMult = {1, 2};
  c.attentionStages = {1};
  c.decoderAttentionStages = {1};
  c.zDim = 4;
  c.zMlpLayers = 2;
  c.timeEmbedDim = 16;
  c.discChannels = 8;
  c.epochs = 1;
  c.batchSize = 4;
  return c;
}

/// Fresh empty directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("adadiff-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline bool same_parameters(torch::nn::Module& a, torch::nn::Module& b) {
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  if (pa.size() != pb.size()) {
    return false;
  }
  for (const auto& item : pa) {
    const auto* other = pb.find(item.key());
    if (other == nullptr || !torch::equal(item.value(), *other)) {
      return false;
    }
  }
  return true;
}

} // namespace adadiff::testing
