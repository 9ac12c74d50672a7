#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hiersoc/imitation.hpp"

namespace hiersoc {

// HSCP1 archive: one JSON header line (magic, step, config record, tensor
// directory), then the tensors' row-major float32 payloads back to back.
struct CheckpointHeader {
  nlohmann::json config;
  std::int64_t step = 0;
  std::vector<std::pair<std::string, std::pair<int, int>>> tensors;  // name -> (rows, cols)
};

void save_checkpoint(const std::string& path, const nlohmann::json& config_record,
                     std::int64_t step,
                     const std::vector<std::pair<std::string, const Mat*>>& tensors);

struct LoadedCheckpoint {
  CheckpointHeader header;
  std::vector<std::pair<std::string, Mat>> tensors;

  const Mat* find(const std::string& name) const;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Trainer state <-> archive, including optimizer moments.
void save_trainer(const Trainer& trainer, const std::string& path);
// Rebuilds a trainer from the stored config record and clips, then restores
// parameters, moments and the step counter.
Trainer load_trainer(const std::string& path, std::vector<MultiPersonClip> clips);

nlohmann::json trainer_config_record(const TrainerConfig& cfg);
TrainerConfig trainer_config_from_record(const nlohmann::json& j);

}  // namespace hiersoc
