#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iccr/datagen.hpp"
#include "iccr/models.hpp"

namespace iccr::train {
struct TrainConfig;
}

namespace iccr::sde {
struct SDEConfig;
}

namespace iccr::runio {

std::uint64_t fnv1a64(const std::string& data);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hex64(std::uint64_t v);

std::string gen_config_to_json(const gen::GenConfig& cfg);
gen::GenConfig gen_config_from_json(const std::string& text);
std::string model_config_to_json(const model::ModelConfig& cfg);
model::ModelConfig model_config_from_json(const std::string& text);
std::string train_config_to_json(const train::TrainConfig& cfg);
train::TrainConfig train_config_from_json(const std::string& text);
std::string sde_config_to_json(const sde::SDEConfig& cfg);

// Run directory layout: <root>/<stamp>-<digest>/{manifest.json, metrics/, ...}.
// The root comes from ICCR_RUNS_DIR, falling back to ./runs.
std::string runs_root();

struct RunManifest {
    std::string command;
    std::string config_json;  // fully resolved configuration
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> artifacts;  // (path, digest hex)
    double wall_clock_s = 0.0;
    bool ok = false;
    std::string error;
};

// Creates <root>/<stamp>-<digest>/ (plus metrics/) and returns its path.
std::string make_run_dir(const std::string& command, const std::string& config_json,
                         const std::string& explicit_dir = "");

void add_artifact(RunManifest& manifest, const std::string& path);
void write_manifest(const RunManifest& manifest, const std::string& run_dir);

}  // namespace iccr::runio
