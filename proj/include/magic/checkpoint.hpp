#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "magic/array.hpp"

namespace magic {

inline constexpr const char* kCheckpointFormat = "magicnas-checkpoint-v1";

// Named tensor set plus a free-form JSON metadata block. Persisted as a pair
// of files: <stem>.json (manifest: format tag, meta, tensor name/shape/byte
// offset) and <stem>.bin (little-endian doubles, concatenated in manifest
// order). Round-trips bit-exactly.
struct Checkpoint {
  std::map<std::string, Array> tensors;
  nlohmann::ordered_json meta;
};

void save_checkpoint(const std::string& stem, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& stem);

}  // namespace magic
