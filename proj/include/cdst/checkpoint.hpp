#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cdst/tensor.hpp"

namespace cdst {

// Binary tensor container: magic "CDSTCKPT", version u32, entry count u32,
// then per entry: name length u32 + UTF-8 name, rank u32, dims u32[],
// float64 little-endian payload.
constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& entries);

std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace cdst
