#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iccr/tape.hpp"
#include "iccr/tensor.hpp"

namespace iccr::model {

enum class Variant { kFull, kAttentionOnly, kMlpOnly };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct TransformerConfig {
    int layers = 12;
    int heads = 8;
    int hidden = 256;  // D
    int embed_dim = 1;  // E
    int max_context = 102;
    Variant variant = Variant::kFull;
    bool use_layer_norm = true;
    // The architecture display writes unscaled attention logits; scaling by
    // 1/sqrt(head_dim) is the GPT-2 default and stays on unless this is set.
    bool paper_literal_attention = false;
    // Per-head width D (concat H*D) instead of the standard D/H split.
    bool paper_head_dim = false;
    std::uint64_t init_seed = 0;

    int head_dim() const { return paper_head_dim ? hidden : hidden / heads; }
    int mlp_hidden() const { return 4 * hidden; }
    void validate() const;
};

enum class RNNKind { kElman, kLstm, kGru };

const char* rnn_kind_name(RNNKind k);
RNNKind rnn_kind_from_name(const std::string& name);

struct RNNConfig {
    RNNKind kind = RNNKind::kLstm;
    int layers = 2;
    int hidden = 256;
    int embed_dim = 1;
    std::uint64_t init_seed = 0;
    void validate() const;
};

// Named parameter tensors in a fixed order; the order is the checkpoint and
// optimizer-state contract.
struct ModelState {
    std::vector<std::pair<std::string, ad::Tensor>> params;

    ad::Tensor& at(const std::string& name);
    const ad::Tensor& at(const std::string& name) const;
    std::size_t scalar_count() const;
};

ModelState init_model(const TransformerConfig& cfg);
ModelState init_model(const RNNConfig& cfg);

// Closed-form audit of the parameter count.
std::size_t expected_param_count(const TransformerConfig& cfg);
std::size_t expected_param_count(const RNNConfig& cfg);

struct ForwardTrace {
    ad::Tensor embed;                                // X_0
    std::vector<ad::Tensor> residual_pre;            // R_l after attention
    std::vector<ad::Tensor> residual_post;           // X_l after the MLP
    std::vector<std::vector<ad::Tensor>> attention;  // [layer][head], T x T
    ad::Tensor outputs;                              // T x E
};

// Tape handles for training: parameter leaves aligned with state.params.
struct ForwardHandle {
    ad::VarId predictions = -1;
    std::vector<ad::VarId> param_vars;  // same order as ModelState::params
};

ForwardHandle gpt2_forward_tape(ad::Tape& tape, const ModelState& state, const ad::Tensor& tokens,
                                const TransformerConfig& cfg);
ad::Tensor gpt2_forward(const ModelState& state, const ad::Tensor& tokens,
                        const TransformerConfig& cfg, ForwardTrace* trace = nullptr);

ForwardHandle rnn_forward_tape(ad::Tape& tape, const ModelState& state, const ad::Tensor& tokens,
                               const RNNConfig& cfg);
ad::Tensor rnn_forward(const ModelState& state, const ad::Tensor& tokens, const RNNConfig& cfg);

// Readout rows for each task layout.
int regression_readout_row(int tokens_rows);  // T = 2n+2 -> 2n+1 (0-based)
std::vector<double> readout_prediction(const ad::Tensor& predictions);  // final row

// Either architecture behind one front door.
struct ModelConfig {
    enum class Type { kTransformer, kRnn } type = Type::kTransformer;
    TransformerConfig transformer;
    RNNConfig rnn;

    int embed_dim() const;
    void validate() const;
};

ModelState init_model(const ModelConfig& cfg);
ForwardHandle forward_tape(ad::Tape& tape, const ModelState& state, const ad::Tensor& tokens,
                           const ModelConfig& cfg);
ad::Tensor forward(const ModelState& state, const ad::Tensor& tokens, const ModelConfig& cfg,
                   ForwardTrace* trace = nullptr);

}  // namespace iccr::model
