#pragma once

#include "keyloco/rl/trainer.hpp"

#include <string>

namespace keyloco::cli {

// A checkpoint directory holds manifest.json (names, shapes, byte offsets,
// dtype, iteration, config hash) and params.bin (flat little-endian f32 in
// manifest order: network parameters first, then optimizer state). Saving
// and loading round-trips bit for bit.
struct CheckpointInfo {
  int version = 1;
  int iteration = 0;
  double lr = 0;
  std::string config_hash;
};

void save_checkpoint(const std::string& dir, rl::Trainer<float>& tr,
                     const std::string& config_hash);

CheckpointInfo read_checkpoint_info(const std::string& dir);

// Restores parameters, optimizer state, iteration counter and learning rate.
// Any name or shape mismatch against the trainer's networks throws.
void load_checkpoint(const std::string& dir, rl::Trainer<float>& tr);

}  // namespace keyloco::cli
