#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "claire/nn.hpp"
#include "claire/preprocess.hpp"

namespace claire {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct CheckpointMeta {
    ModelConfig config;
    int epoch = 0;
    double best_val_dice = 0.0;
};

/// Write model state (parameters + batchnorm buffers) as a named-tensor binary
/// archive with a JSON header. Round trips are bit-identical.
void save_checkpoint(const std::string& path, SegmentationModel& model, const CheckpointMeta& meta);

/// Load tensors by name into a model already built with the matching config.
CheckpointMeta load_checkpoint(const std::string& path, SegmentationModel& model);

/// Read only the header (for inspecting a checkpoint without a model).
CheckpointMeta peek_checkpoint(const std::string& path);

/// Serialized preprocessed sample sets (the `preprocess` CLI output).
void save_samples(const std::string& path, const std::vector<Sample>& samples, int num_classes);
std::vector<Sample> load_samples(const std::string& path, int* num_classes = nullptr);

}  // namespace claire
