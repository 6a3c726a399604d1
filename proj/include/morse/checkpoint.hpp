#pragma once

#include <string>

#include "morse/model.hpp"

namespace morse {

/// Versioned binary checkpoint: header with config, vocabulary and its
/// hash, tag inventory, then named tensors with shapes and raw
/// little-endian doubles. Save followed by load is bit-exact.
std::string checkpoint_bytes(const MorseModel& model);
MorseModel model_from_checkpoint_bytes(std::string_view bytes);

void save_checkpoint(const std::string& path, const MorseModel& model);
MorseModel load_checkpoint(const std::string& path);

}  // namespace morse
