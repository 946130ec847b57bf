#include "iccr/models.hpp"

#include <cmath>

#include "iccr/errors.hpp"
#include "iccr/rng.hpp"

namespace iccr::model {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::kFull: return "full";
        case Variant::kAttentionOnly: return "attention_only";
        case Variant::kMlpOnly: return "mlp_only";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    if (name == "full") return Variant::kFull;
    if (name == "attention_only") return Variant::kAttentionOnly;
    if (name == "mlp_only") return Variant::kMlpOnly;
    throw ConfigError("unknown transformer variant: " + name);
}

const char* rnn_kind_name(RNNKind k) {
    switch (k) {
        case RNNKind::kElman: return "elman";
        case RNNKind::kLstm: return "lstm";
        case RNNKind::kGru: return "gru";
    }
    return "?";
}

RNNKind rnn_kind_from_name(const std::string& name) {
    if (name == "elman") return RNNKind::kElman;
    if (name == "lstm") return RNNKind::kLstm;
    if (name == "gru") return RNNKind::kGru;
    throw ConfigError("unknown rnn kind: " + name);
}

void TransformerConfig::validate() const {
    if (layers < 1 || heads < 1 || hidden < 1 || embed_dim < 1 || max_context < 1) {
        throw ConfigError("transformer config: dimensions must be positive");
    }
    if (!paper_head_dim && hidden % heads != 0) {
        throw ConfigError("transformer config: hidden must be divisible by heads");
    }
}

void RNNConfig::validate() const {
    if (layers < 1 || hidden < 1 || embed_dim < 1) {
        throw ConfigError("rnn config: dimensions must be positive");
    }
}

ad::Tensor& ModelState::at(const std::string& name) {
    for (auto& [n, t] : params) {
        if (n == name) return t;
    }
    throw ConfigError("model state: no parameter named " + name);
}

const ad::Tensor& ModelState::at(const std::string& name) const {
    for (const auto& [n, t] : params) {
        if (n == name) return t;
    }
    throw ConfigError("model state: no parameter named " + name);
}

std::size_t ModelState::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.size();
    return n;
}

namespace {

void gaussian_fill(ad::Tensor& t, double stddev, rng::Stream& s) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = s.gauss(0.0, stddev);
}

void uniform_fill(ad::Tensor& t, double half_width, rng::Stream& s) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = s.uniform(-half_width, half_width);
}

struct ParamBuilder {
    ModelState state;
    std::uint64_t seed;
    std::uint64_t ordinal = 0;

    void gaussian(const std::string& name, int rows, int cols, double stddev) {
        ad::Tensor t(rows, cols);
        rng::Stream s(seed, ordinal++, rng::kParamInit);
        gaussian_fill(t, stddev, s);
        state.params.emplace_back(name, std::move(t));
    }
    void uniform(const std::string& name, int rows, int cols, double half_width) {
        ad::Tensor t(rows, cols);
        rng::Stream s(seed, ordinal++, rng::kParamInit);
        uniform_fill(t, half_width, s);
        state.params.emplace_back(name, std::move(t));
    }
    void constant(const std::string& name, int rows, int cols, double value) {
        ad::Tensor t(rows, cols);
        t.fill(value);
        ++ordinal;
        state.params.emplace_back(name, std::move(t));
    }
};

bool has_attention(const TransformerConfig& cfg) { return cfg.variant != Variant::kMlpOnly; }
bool has_mlp(const TransformerConfig& cfg) { return cfg.variant != Variant::kAttentionOnly; }

}  // namespace

ModelState init_model(const TransformerConfig& cfg) {
    cfg.validate();
    const double base_std = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * cfg.layers);
    const int d = cfg.hidden;
    const int dh = cfg.head_dim();
    ParamBuilder b{{}, cfg.init_seed};
    b.gaussian("w_e", cfg.embed_dim, d, base_std);
    b.gaussian("w_p", cfg.max_context, d, base_std);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "l" + std::to_string(l) + ".";
        if (has_attention(cfg)) {
            if (cfg.use_layer_norm) {
                b.constant(p + "ln1.g", 1, d, 1.0);
                b.constant(p + "ln1.b", 1, d, 0.0);
            }
            for (int h = 0; h < cfg.heads; ++h) {
                const std::string hp = p + "h" + std::to_string(h) + ".";
                b.gaussian(hp + "w_q", d, dh, base_std);
                b.gaussian(hp + "w_k", d, dh, base_std);
                b.gaussian(hp + "w_v", d, dh, base_std);
            }
            b.gaussian(p + "w_o", cfg.heads * dh, d, resid_std);
        }
        if (has_mlp(cfg)) {
            if (cfg.use_layer_norm) {
                b.constant(p + "ln2.g", 1, d, 1.0);
                b.constant(p + "ln2.b", 1, d, 0.0);
            }
            b.gaussian(p + "mlp.w1", d, cfg.mlp_hidden(), base_std);
            b.constant(p + "mlp.b1", 1, cfg.mlp_hidden(), 0.0);
            b.gaussian(p + "mlp.w2", cfg.mlp_hidden(), d, resid_std);
            b.constant(p + "mlp.b2", 1, d, 0.0);
        }
    }
    if (cfg.use_layer_norm) {
        b.constant("ln_f.g", 1, d, 1.0);
        b.constant("ln_f.b", 1, d, 0.0);
    }
    b.gaussian("w_u", d, cfg.embed_dim, base_std);
    return std::move(b.state);
}

ModelState init_model(const RNNConfig& cfg) {
    cfg.validate();
    const double half = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
    ParamBuilder b{{}, cfg.init_seed};
    const int d = cfg.hidden;
    for (int l = 0; l < cfg.layers; ++l) {
        const int in = l == 0 ? cfg.embed_dim : d;
        const std::string p = "l" + std::to_string(l) + ".";
        auto gate = [&](const std::string& g) {
            b.uniform(p + "w_" + g, in, d, half);
            b.uniform(p + "u_" + g, d, d, half);
            b.uniform(p + "b_" + g, 1, d, half);
        };
        switch (cfg.kind) {
            case RNNKind::kElman:
                b.uniform(p + "w_ih", in, d, half);
                b.uniform(p + "w_hh", d, d, half);
                b.uniform(p + "b_h", 1, d, half);
                break;
            case RNNKind::kLstm:
                gate("f");
                gate("i");
                gate("o");
                gate("g");
                break;
            case RNNKind::kGru:
                gate("r");
                gate("z");
                gate("n");
                break;
        }
    }
    b.uniform("w_out", d, cfg.embed_dim, half);
    b.uniform("b_out", 1, cfg.embed_dim, half);
    return std::move(b.state);
}

std::size_t expected_param_count(const TransformerConfig& cfg) {
    const std::size_t d = static_cast<std::size_t>(cfg.hidden);
    const std::size_t dh = static_cast<std::size_t>(cfg.head_dim());
    const std::size_t e = static_cast<std::size_t>(cfg.embed_dim);
    std::size_t total = e * d + static_cast<std::size_t>(cfg.max_context) * d + d * e;
    std::size_t per_layer = 0;
    if (has_attention(cfg)) {
        per_layer += static_cast<std::size_t>(cfg.heads) * 3 * d * dh + static_cast<std::size_t>(cfg.heads) * dh * d;
        if (cfg.use_layer_norm) per_layer += 2 * d;
    }
    if (has_mlp(cfg)) {
        const std::size_t m = static_cast<std::size_t>(cfg.mlp_hidden());
        per_layer += d * m + m + m * d + d;
        if (cfg.use_layer_norm) per_layer += 2 * d;
    }
    total += per_layer * static_cast<std::size_t>(cfg.layers);
    if (cfg.use_layer_norm) total += 2 * d;
    return total;
}

std::size_t expected_param_count(const RNNConfig& cfg) {
    const std::size_t d = static_cast<std::size_t>(cfg.hidden);
    const std::size_t e = static_cast<std::size_t>(cfg.embed_dim);
    std::size_t gates = 1;
    if (cfg.kind == RNNKind::kLstm) gates = 4;
    if (cfg.kind == RNNKind::kGru) gates = 3;
    std::size_t total = 0;
    for (int l = 0; l < cfg.layers; ++l) {
        const std::size_t in = l == 0 ? e : d;
        total += gates * (in * d + d * d + d);
    }
    total += d * e + e;
    return total;
}

namespace {

struct TraceIds {
    ad::VarId embed = -1;
    std::vector<ad::VarId> residual_pre;
    std::vector<ad::VarId> residual_post;
    std::vector<std::vector<ad::VarId>> attention;
    ad::VarId outputs = -1;
};

ForwardHandle gpt2_forward_impl(ad::Tape& tape, const ModelState& state, const ad::Tensor& tokens,
                                const TransformerConfig& cfg, TraceIds* trace) {
    cfg.validate();
    const int t_len = tokens.rows();
    if (tokens.cols() != cfg.embed_dim) throw DimensionError("gpt2_forward: token width != embed dim");
    if (t_len > cfg.max_context) {
        throw ConfigError("gpt2_forward: context length " + std::to_string(t_len) + " exceeds " +
                          std::to_string(cfg.max_context));
    }

    ForwardHandle handle;
    handle.param_vars.reserve(state.params.size());
    std::vector<std::pair<std::string, ad::VarId>> by_name;
    by_name.reserve(state.params.size());
    for (const auto& [name, tensor] : state.params) {
        const ad::VarId id = tape.leaf(tensor);
        handle.param_vars.push_back(id);
        by_name.emplace_back(name, id);
    }
    auto pv = [&](const std::string& name) {
        for (const auto& [n, id] : by_name) {
            if (n == name) return id;
        }
        throw ConfigError("gpt2_forward: missing parameter " + name);
    };

    const ad::VarId tok = tape.leaf(tokens, /*requires_grad=*/false);
    std::vector<int> positions(static_cast<std::size_t>(t_len));
    for (int i = 0; i < t_len; ++i) positions[static_cast<std::size_t>(i)] = i;
    ad::VarId x = tape.add(tape.matmul(tok, pv("w_e")), tape.gather_rows(pv("w_p"), positions));
    if (trace) {
        trace->embed = x;
        trace->attention.resize(static_cast<std::size_t>(cfg.layers));
    }

    const double attn_scale = cfg.paper_literal_attention ? 1.0 : 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "l" + std::to_string(l) + ".";
        ad::VarId r = x;
        if (has_attention(cfg)) {
            ad::VarId attn_in = x;
            if (cfg.use_layer_norm) attn_in = tape.layer_norm(x, pv(p + "ln1.g"), pv(p + "ln1.b"));
            std::vector<ad::VarId> head_outs;
            head_outs.reserve(static_cast<std::size_t>(cfg.heads));
            for (int h = 0; h < cfg.heads; ++h) {
                const std::string hp = p + "h" + std::to_string(h) + ".";
                const ad::VarId q = tape.matmul(attn_in, pv(hp + "w_q"));
                const ad::VarId k = tape.matmul(attn_in, pv(hp + "w_k"));
                const ad::VarId v = tape.matmul(attn_in, pv(hp + "w_v"));
                ad::VarId scores = tape.matmul_nt(q, k);
                if (attn_scale != 1.0) scores = tape.scale(scores, attn_scale);
                const ad::VarId attn = tape.softmax_causal(scores);
                if (trace) trace->attention[static_cast<std::size_t>(l)].push_back(attn);
                head_outs.push_back(tape.matmul(attn, v));
            }
            const ad::VarId concat = head_outs.size() == 1 ? head_outs[0] : tape.concat_cols(head_outs);
            const ad::VarId m = tape.matmul(concat, pv(p + "w_o"));
            r = tape.add(x, m);
        }
        if (trace) trace->residual_pre.push_back(r);
        ad::VarId x_next = r;
        if (has_mlp(cfg)) {
            ad::VarId mlp_in = r;
            if (cfg.use_layer_norm) mlp_in = tape.layer_norm(r, pv(p + "ln2.g"), pv(p + "ln2.b"));
            const ad::VarId h1 = tape.gelu(tape.add_row(tape.matmul(mlp_in, pv(p + "mlp.w1")), pv(p + "mlp.b1")));
            const ad::VarId h2 = tape.add_row(tape.matmul(h1, pv(p + "mlp.w2")), pv(p + "mlp.b2"));
            x_next = tape.add(r, h2);
        }
        if (trace) trace->residual_post.push_back(x_next);
        x = x_next;
    }

    ad::VarId final_x = x;
    if (cfg.use_layer_norm) final_x = tape.layer_norm(x, pv("ln_f.g"), pv("ln_f.b"));
    handle.predictions = tape.matmul(final_x, pv("w_u"));
    if (trace) trace->outputs = handle.predictions;
    return handle;
}

}  // namespace

ForwardHandle gpt2_forward_tape(ad::Tape& tape, const ModelState& state, const ad::Tensor& tokens,
                                const TransformerConfig& cfg) {
    return gpt2_forward_impl(tape, state, tokens, cfg, nullptr);
}

ad::Tensor gpt2_forward(const ModelState& state, const ad::Tensor& tokens,
                        const TransformerConfig& cfg, ForwardTrace* trace) {
    ad::Tape tape;
    TraceIds ids;
    const ForwardHandle handle = gpt2_forward_impl(tape, state, tokens, cfg, trace ? &ids : nullptr);
    if (trace) {
        trace->embed = tape.value(ids.embed);
        trace->residual_pre.clear();
        trace->residual_post.clear();
        trace->attention.clear();
        for (ad::VarId id : ids.residual_pre) trace->residual_pre.push_back(tape.value(id));
        for (ad::VarId id : ids.residual_post) trace->residual_post.push_back(tape.value(id));
        for (const auto& layer : ids.attention) {
            std::vector<ad::Tensor> maps;
            maps.reserve(layer.size());
            for (ad::VarId id : layer) maps.push_back(tape.value(id));
            trace->attention.push_back(std::move(maps));
        }
        trace->outputs = tape.value(handle.predictions);
    }
    return tape.value(handle.predictions);
}

ForwardHandle rnn_forward_tape(ad::Tape& tape, const ModelState& state, const ad::Tensor& tokens,
                               const RNNConfig& cfg) {
    cfg.validate();
    if (tokens.cols() != cfg.embed_dim) throw DimensionError("rnn_forward: token width != embed dim");
    const int t_len = tokens.rows();

    ForwardHandle handle;
    std::vector<std::pair<std::string, ad::VarId>> by_name;
    for (const auto& [name, tensor] : state.params) {
        const ad::VarId id = tape.leaf(tensor);
        handle.param_vars.push_back(id);
        by_name.emplace_back(name, id);
    }
    auto pv = [&](const std::string& name) {
        for (const auto& [n, id] : by_name) {
            if (n == name) return id;
        }
        throw ConfigError("rnn_forward: missing parameter " + name);
    };

    const ad::VarId tok = tape.leaf(tokens, /*requires_grad=*/false);
    std::vector<ad::VarId> inputs(static_cast<std::size_t>(t_len));
    for (int t = 0; t < t_len; ++t) inputs[static_cast<std::size_t>(t)] = tape.gather_rows(tok, {t});

    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "l" + std::to_string(l) + ".";
        const ad::VarId h0 = tape.leaf(ad::Tensor(1, cfg.hidden), /*requires_grad=*/false);
        ad::VarId h = h0;
        ad::VarId c = h0;  // LSTM cell state
        std::vector<ad::VarId> hidden(static_cast<std::size_t>(t_len));
        auto affine3 = [&](const std::string& w, ad::VarId x_t, const std::string& u, ad::VarId h_prev,
                           const std::string& bias) {
            return tape.add(tape.add(tape.matmul(x_t, pv(p + w)), tape.matmul(h_prev, pv(p + u))),
                            pv(p + bias));
        };
        for (int t = 0; t < t_len; ++t) {
            const ad::VarId x_t = inputs[static_cast<std::size_t>(t)];
            switch (cfg.kind) {
                case RNNKind::kElman: {
                    h = tape.tanh(affine3("w_ih", x_t, "w_hh", h, "b_h"));
                    break;
                }
                case RNNKind::kLstm: {
                    const ad::VarId f = tape.sigmoid(affine3("w_f", x_t, "u_f", h, "b_f"));
                    const ad::VarId i = tape.sigmoid(affine3("w_i", x_t, "u_i", h, "b_i"));
                    const ad::VarId o = tape.sigmoid(affine3("w_o", x_t, "u_o", h, "b_o"));
                    const ad::VarId g = tape.tanh(affine3("w_g", x_t, "u_g", h, "b_g"));
                    c = tape.add(tape.mul(f, c), tape.mul(i, g));
                    h = tape.mul(o, tape.tanh(c));
                    break;
                }
                case RNNKind::kGru: {
                    const ad::VarId r = tape.sigmoid(affine3("w_r", x_t, "u_r", h, "b_r"));
                    const ad::VarId z = tape.sigmoid(affine3("w_z", x_t, "u_z", h, "b_z"));
                    const ad::VarId gated = tape.mul(r, h);
                    const ad::VarId n = tape.tanh(tape.add(
                        tape.add(tape.matmul(x_t, pv(p + "w_n")), tape.matmul(gated, pv(p + "u_n"))),
                        pv(p + "b_n")));
                    const ad::VarId keep = tape.mul(z, h);
                    const ad::VarId fresh = tape.mul(tape.affine(z, -1.0, 1.0), n);
                    h = tape.add(fresh, keep);
                    break;
                }
            }
            hidden[static_cast<std::size_t>(t)] = h;
        }
        inputs = std::move(hidden);
    }

    const ad::VarId stacked = tape.concat_rows(inputs);
    handle.predictions = tape.add_row(tape.matmul(stacked, pv("w_out")), pv("b_out"));
    return handle;
}

ad::Tensor rnn_forward(const ModelState& state, const ad::Tensor& tokens, const RNNConfig& cfg) {
    ad::Tape tape;
    const ForwardHandle handle = rnn_forward_tape(tape, state, tokens, cfg);
    return tape.value(handle.predictions);
}

int regression_readout_row(int tokens_rows) { return tokens_rows - 1; }

std::vector<double> readout_prediction(const ad::Tensor& predictions) {
    std::vector<double> out(static_cast<std::size_t>(predictions.cols()));
    const int row = predictions.rows() - 1;
    for (int e = 0; e < predictions.cols(); ++e) out[static_cast<std::size_t>(e)] = predictions.at(row, e);
    return out;
}

int ModelConfig::embed_dim() const {
    return type == Type::kTransformer ? transformer.embed_dim : rnn.embed_dim;
}

void ModelConfig::validate() const {
    if (type == Type::kTransformer) {
        transformer.validate();
    } else {
        rnn.validate();
    }
}

ModelState init_model(const ModelConfig& cfg) {
    return cfg.type == ModelConfig::Type::kTransformer ? init_model(cfg.transformer)
                                                       : init_model(cfg.rnn);
}

ForwardHandle forward_tape(ad::Tape& tape, const ModelState& state, const ad::Tensor& tokens,
                           const ModelConfig& cfg) {
    return cfg.type == ModelConfig::Type::kTransformer
               ? gpt2_forward_tape(tape, state, tokens, cfg.transformer)
               : rnn_forward_tape(tape, state, tokens, cfg.rnn);
}

ad::Tensor forward(const ModelState& state, const ad::Tensor& tokens, const ModelConfig& cfg,
                   ForwardTrace* trace) {
    if (cfg.type == ModelConfig::Type::kTransformer) {
        return gpt2_forward(state, tokens, cfg.transformer, trace);
    }
    if (trace) throw ConfigError("forward: traces are only available for transformers");
    return rnn_forward(state, tokens, cfg.rnn);
}

}  // namespace iccr::model
