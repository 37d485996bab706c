#pragma once

#include <map>
#include <string>

#include "jsrl/encoder.hpp"

namespace jsrl {

/// Versioned text container: model config, run settings, training metadata
/// and every parameter tensor in hexadecimal floating point (bit-exact reload).
struct Checkpoint {
  Model model;
  std::map<std::string, std::string> settings;
  std::map<std::string, std::string> metadata;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace jsrl
