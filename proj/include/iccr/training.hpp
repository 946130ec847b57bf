#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "iccr/datagen.hpp"
#include "iccr/models.hpp"
#include "iccr/sde.hpp"
#include "iccr/tensor.hpp"

namespace iccr::train {

enum class LossMaskKind { kFinalToken, kCompletionMask };

struct TrainConfig {
    int steps = 50000;
    int batch = 64;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    int eval_every = 0;        // 0 disables snapshots
    int eval_sequences = 256;
    int checkpoint_every = 1000;
    LossMaskKind mask = LossMaskKind::kFinalToken;
    std::uint64_t seed = 0;
    bool deterministic = true;
    bool shared_z_in_batch = false;
    double clip_norm = 0.0;  // 0 disables clipping
    int threads = 0;         // 0 = hardware concurrency

    void validate() const;
};

struct LossTrace {
    std::vector<double> step_mse;
    std::vector<std::pair<int, double>> eval_mse;  // (step, in-context MSE)
    std::vector<double> step_ms;
};

// Per-batch MSE: (1/(B*E*M)) sum over members and masked rows, M = scored
// rows per member (1 for the regression layout).
double mse_loss(const std::vector<ad::Tensor>& preds, const std::vector<ad::Tensor>& targets,
                const std::vector<std::vector<std::uint8_t>>& masks, int embed_dim);

struct AdamWState {
    std::vector<ad::Tensor> m;
    std::vector<ad::Tensor> v;
};

// Decoupled weight decay, then the bias-corrected adaptive update. t is
// 1-based. Non-finite gradients abort with the step index.
void adamw_step(model::ModelState& state, AdamWState& opt, const std::vector<ad::Tensor>& grads,
                const TrainConfig& cfg, int t);

// One training example: tokens, target rows, and which output rows are scored.
struct Example {
    ad::Tensor tokens;
    ad::Tensor targets;             // K x E
    std::vector<int> readout_rows;  // K rows of the prediction matrix
};

using BatchSource = std::function<std::vector<Example>(std::uint64_t batch_index, int batch_size)>;

BatchSource regression_source(const gen::GenConfig& cfg, bool shared_z);

// Counterfactual trajectory completion: the scored rows are the completion
// tokens of the shared-noise prompt.
BatchSource sde_source(const sde::SDEConfig& cfg);

struct Checkpoint {
    model::ModelConfig model_cfg;
    model::ModelState state;
    AdamWState opt;
    std::uint64_t step = 0;
    std::string config_json;  // resolved run configuration
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct TrainOutput {
    Checkpoint checkpoint;
    LossTrace trace;
};

TrainOutput train_with_source(const model::ModelConfig& mcfg, const BatchSource& source,
                              const TrainConfig& tcfg, const std::string& checkpoint_dir = "",
                              const Checkpoint* resume = nullptr,
                              const std::string& config_json = "");

// Regression task front door: streams fresh batches from the generator.
TrainOutput train(const model::ModelConfig& mcfg, const gen::GenConfig& gcfg,
                  const TrainConfig& tcfg, const std::string& checkpoint_dir = "",
                  const Checkpoint* resume = nullptr, const std::string& config_json = "");

// First step whose window-smoothed loss is below `threshold` and stays there
// for `patience` steps (patience < 0: for the rest of the trace).
std::optional<int> detect_phase_transition(const std::vector<double>& step_mse, double threshold,
                                           int window, int patience = -1);

}  // namespace iccr::train
