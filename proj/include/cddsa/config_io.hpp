#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>

#include "cddsa/datagen/datagen.hpp"
#include "cddsa/trainer/trainer.hpp"

// JSON (de)serialization for the config structs and the single experiment
// config file consumed by the CLI. Unknown keys are rejected so typos in
// config files fail loudly.

namespace cddsa::config {

using json = nlohmann::json;

json to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const json& j,
                                          const model::ModelConfig& defaults = {});

json to_json(const losses::LossWeights& w);
losses::LossWeights loss_weights_from_json(const json& j, const losses::LossWeights& defaults = {});

json to_json(const trainer::TrainConfig& c);
trainer::TrainConfig train_config_from_json(const json& j,
                                            const trainer::TrainConfig& defaults = {});

json to_json(const datagen::GeneratorConfig& c);
datagen::GeneratorConfig generator_config_from_json(const json& j);

// Experiment file: {"data": {...}, "train": {...}} — both sections optional,
// missing values fall back to defaults.
struct ExperimentConfig {
    datagen::GeneratorConfig data = datagen::default_generator_config();
    trainer::TrainConfig train;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
json to_json(const ExperimentConfig& c);

}  // namespace cddsa::config
