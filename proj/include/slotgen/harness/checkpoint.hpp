#pragma once

#include "slotgen/harness/config.hpp"

#include <memory>

namespace slotgen::harness {

// Binary snapshot of everything training needs to continue bit-exactly:
// config text, step counter, every parameter tensor, and the Adam state.
struct Checkpoint {
  ExperimentConfig config;
  int step = 0;
  uint64_t train_seed = 0;
  std::unique_ptr<model::Pipeline> pipeline;
  std::map<std::string, train::AdamSlot> adam;
  int64_t adam_steps = 0;
};

void save_checkpoint(const std::string& path, const ExperimentConfig& config, int step,
                     uint64_t train_seed, const model::Pipeline& pipe,
                     const std::map<std::string, train::AdamSlot>& adam, int64_t adam_steps);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace slotgen::harness
