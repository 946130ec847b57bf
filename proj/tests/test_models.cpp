#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "iccr/datagen.hpp"
#include "iccr/errors.hpp"
#include "iccr/models.hpp"
#include "iccr/rng.hpp"
#include "iccr/sde.hpp"
#include "iccr/tape.hpp"

using namespace iccr;
using ad::Tensor;
using model::ModelState;
using model::TransformerConfig;

namespace {

TransformerConfig tiny_transformer(int layers = 2, int heads = 2, int hidden = 8, int e_dim = 1,
                                   int max_t = 12) {
    TransformerConfig cfg;
    cfg.layers = layers;
    cfg.heads = heads;
    cfg.hidden = hidden;
    cfg.embed_dim = e_dim;
    cfg.max_context = max_t;
    cfg.init_seed = 9;
    return cfg;
}

Tensor random_tokens(int t_len, int e_dim, std::uint64_t seed) {
    rng::Stream s(seed, 0, 1);
    Tensor tokens(t_len, e_dim);
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = s.gauss(0.0, 2.0);
    return tokens;
}

// model-level finite differences: perturb every parameter coordinate.
// param_scale inflates the initialization so that every gradient sits well
// above the central-difference noise floor.
double model_grad_check(const TransformerConfig& cfg, const Tensor& tokens, double step,
                        double param_scale = 1.0) {
    ModelState state = model::init_model(cfg);
    if (param_scale != 1.0) {
        for (auto& [name, tensor] : state.params) {
            for (std::size_t i = 0; i < tensor.size(); ++i) tensor[i] *= param_scale;
        }
    }
    const Tensor target = random_tokens(1, cfg.embed_dim, 555);

    auto loss_of = [&](const ModelState& st) {
        const Tensor preds = model::gpt2_forward(st, tokens, cfg);
        double acc = 0.0;
        const int row = preds.rows() - 1;
        for (int e = 0; e < preds.cols(); ++e) {
            const double d = preds.at(row, e) - target.at(0, e);
            acc += d * d;
        }
        return acc;
    };

    ad::Tape tape;
    const model::ForwardHandle handle = model::gpt2_forward_tape(tape, state, tokens, cfg);
    const ad::VarId picked = tape.gather_rows(handle.predictions, {tokens.rows() - 1});
    const ad::VarId loss = tape.scaled_sq_error(picked, target, 1.0);
    tape.backward(loss);

    double max_rel = 0.0;
    for (std::size_t p = 0; p < state.params.size(); ++p) {
        const Tensor& analytic = tape.grad(handle.param_vars[p]);
        Tensor& param = state.params[p].second;
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double orig = param[i];
            param[i] = orig + step;
            const double up = loss_of(state);
            param[i] = orig - step;
            const double down = loss_of(state);
            param[i] = orig;
            const double fd = (up - down) / (2.0 * step);
            const double rel = std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + std::abs(fd) + 1e-12);
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace

TEST_CASE("init_model is deterministic and seed-sensitive") {
    const TransformerConfig cfg = tiny_transformer();
    const ModelState a = model::init_model(cfg);
    const ModelState b = model::init_model(cfg);
    REQUIRE(a.params.size() == b.params.size());
    for (std::size_t p = 0; p < a.params.size(); ++p) {
        CHECK(a.params[p].first == b.params[p].first);
        for (std::size_t i = 0; i < a.params[p].second.size(); ++i) {
            CHECK(a.params[p].second[i] == b.params[p].second[i]);
        }
    }
    TransformerConfig other = cfg;
    other.init_seed = cfg.init_seed + 1;
    const ModelState c = model::init_model(other);
    CHECK(c.at("w_e")[0] != a.at("w_e")[0]);
}

TEST_CASE("parameter count audit: closed form equals enumeration") {
    for (const TransformerConfig& cfg :
         {tiny_transformer(2, 1, 8, 1), tiny_transformer(3, 4, 16, 5, 20)}) {
        CHECK(model::init_model(cfg).scalar_count() == model::expected_param_count(cfg));
        TransformerConfig ao = cfg;
        ao.variant = model::Variant::kAttentionOnly;
        CHECK(model::init_model(ao).scalar_count() == model::expected_param_count(ao));
        TransformerConfig mo = cfg;
        mo.variant = model::Variant::kMlpOnly;
        CHECK(model::init_model(mo).scalar_count() == model::expected_param_count(mo));
        TransformerConfig no_ln = cfg;
        no_ln.use_layer_norm = false;
        CHECK(model::init_model(no_ln).scalar_count() == model::expected_param_count(no_ln));
        TransformerConfig wide = cfg;
        wide.paper_head_dim = true;
        CHECK(model::init_model(wide).scalar_count() == model::expected_param_count(wide));
    }
    model::RNNConfig rnn;
    rnn.hidden = 16;
    rnn.embed_dim = 3;
    for (model::RNNKind kind : {model::RNNKind::kElman, model::RNNKind::kLstm, model::RNNKind::kGru}) {
        rnn.kind = kind;
        CHECK(model::init_model(rnn).scalar_count() == model::expected_param_count(rnn));
    }
}

TEST_CASE("zero unembedding gives zero predictions") {
    const TransformerConfig cfg = tiny_transformer();
    ModelState state = model::init_model(cfg);
    state.at("w_u").fill(0.0);
    const Tensor preds = model::gpt2_forward(state, random_tokens(6, 1, 3), cfg);
    for (std::size_t i = 0; i < preds.size(); ++i) CHECK(preds[i] == 0.0);
}

TEST_CASE("causal mask: perturbing a later token leaves earlier outputs bit-identical") {
    const TransformerConfig cfg = tiny_transformer();
    const ModelState state = model::init_model(cfg);
    Tensor tokens = random_tokens(8, 1, 17);
    const Tensor before = model::gpt2_forward(state, tokens, cfg);
    tokens.at(5, 0) += 3.0;
    const Tensor after = model::gpt2_forward(state, tokens, cfg);
    for (int t = 0; t < 5; ++t) CHECK(before.at(t, 0) == after.at(t, 0));
    CHECK(before.at(5, 0) != after.at(5, 0));
}

TEST_CASE("attention maps are causally masked and row-stochastic") {
    const TransformerConfig cfg = tiny_transformer();
    const ModelState state = model::init_model(cfg);
    model::ForwardTrace trace;
    (void)model::gpt2_forward(state, random_tokens(7, 1, 19), cfg, &trace);
    REQUIRE(trace.attention.size() == 2);
    for (const auto& layer : trace.attention) {
        REQUIRE(layer.size() == 2);
        for (const Tensor& a : layer) {
            for (int r = 0; r < a.rows(); ++r) {
                double total = 0.0;
                for (int c = 0; c <= r; ++c) total += a.at(r, c);
                CHECK(std::abs(total - 1.0) <= 1e-12);
                for (int c = r + 1; c < a.cols(); ++c) CHECK(a.at(r, c) == 0.0);
            }
        }
    }
}

TEST_CASE("attention scaling flag reproduces hand-computed maps") {
    // One layer, one head, identity-ish weights so the scores are analytic.
    TransformerConfig cfg = tiny_transformer(1, 1, 2, 2, 4);
    cfg.use_layer_norm = false;
    ModelState state = model::init_model(cfg);
    // read-in = identity, no positional signal
    state.at("w_e").fill(0.0);
    state.at("w_e").at(0, 0) = 1.0;
    state.at("w_e").at(1, 1) = 1.0;
    state.at("w_p").fill(0.0);
    auto& wq = state.at("l0.h0.w_q");
    auto& wk = state.at("l0.h0.w_k");
    wq.fill(0.0);
    wk.fill(0.0);
    wq.at(0, 0) = wq.at(1, 1) = 1.0;
    wk.at(0, 0) = wk.at(1, 1) = 1.0;

    Tensor tokens = Tensor::matrix(3, 2, {1.0, 0.0, 0.0, 1.0, 1.0, 1.0});
    auto expected_attention = [&](double scale) {
        // logits[r][c] = scale * dot(x_r, x_c), causal softmax by hand
        std::vector<std::vector<double>> rows;
        for (int r = 0; r < 3; ++r) {
            std::vector<double> logits;
            for (int c = 0; c <= r; ++c) {
                double dot = 0.0;
                for (int e = 0; e < 2; ++e) dot += tokens.at(r, e) * tokens.at(c, e);
                logits.push_back(scale * dot);
            }
            double mx = logits[0];
            for (double v : logits) mx = std::max(mx, v);
            double denom = 0.0;
            for (double& v : logits) {
                v = std::exp(v - mx);
                denom += v;
            }
            for (double& v : logits) v /= denom;
            rows.push_back(logits);
        }
        return rows;
    };

    for (bool literal : {false, true}) {
        cfg.paper_literal_attention = literal;
        model::ForwardTrace trace;
        (void)model::gpt2_forward(state, tokens, cfg, &trace);
        const auto want = expected_attention(literal ? 1.0 : 1.0 / std::sqrt(2.0));
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c <= r; ++c) {
                CHECK(trace.attention[0][0].at(r, c) ==
                      doctest::Approx(want[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("ablation variants skip exactly one sublayer") {
    TransformerConfig ao = tiny_transformer();
    ao.variant = model::Variant::kAttentionOnly;
    const ModelState ao_state = model::init_model(ao);
    model::ForwardTrace ao_trace;
    (void)model::gpt2_forward(ao_state, random_tokens(6, 1, 23), ao, &ao_trace);
    for (std::size_t l = 0; l < ao_trace.residual_pre.size(); ++l) {
        for (std::size_t i = 0; i < ao_trace.residual_pre[l].size(); ++i) {
            CHECK(ao_trace.residual_pre[l][i] == ao_trace.residual_post[l][i]);
        }
    }

    TransformerConfig mo = tiny_transformer();
    mo.variant = model::Variant::kMlpOnly;
    const ModelState mo_state = model::init_model(mo);
    model::ForwardTrace mo_trace;
    (void)model::gpt2_forward(mo_state, random_tokens(6, 1, 23), mo, &mo_trace);
    CHECK(mo_trace.attention[0].empty());
    // attention contributes nothing: R_1 equals the embedding stream
    for (std::size_t i = 0; i < mo_trace.residual_pre[0].size(); ++i) {
        CHECK(mo_trace.residual_pre[0][i] == mo_trace.embed[i]);
    }
}

TEST_CASE("full transformer gradient matches finite differences") {
    const TransformerConfig cfg = tiny_transformer(2, 2, 8, 1, 6);
    const double err = model_grad_check(cfg, random_tokens(6, 1, 29), 1e-4);
    CHECK(err < 1e-4);
}

TEST_CASE("paper-literal forward (no layer norm, unscaled attention) also differentiates") {
    TransformerConfig cfg = tiny_transformer(2, 2, 8, 1, 6);
    cfg.use_layer_norm = false;
    cfg.paper_literal_attention = true;
    const double err = model_grad_check(cfg, random_tokens(6, 1, 31), 1e-4, 20.0);
    CHECK(err < 1e-4);
}

TEST_CASE("depth sweep configurations all construct and run") {
    for (const auto& [layers, heads] : std::vector<std::pair<int, int>>{{1, 8}, {2, 4}, {4, 2}, {8, 1}}) {
        TransformerConfig cfg = tiny_transformer(layers, heads, 32, 1, 10);
        const ModelState state = model::init_model(cfg);
        const Tensor preds = model::gpt2_forward(state, random_tokens(10, 1, 37), cfg);
        CHECK(preds.rows() == 10);
    }
}

TEST_CASE("paper head-dimension variant runs with H*D concat width") {
    TransformerConfig cfg = tiny_transformer(2, 3, 8, 1, 8);
    cfg.paper_head_dim = true;  // W_Q^h in R^{D x D}, concat H*D wide
    const ModelState state = model::init_model(cfg);
    CHECK(state.at("l0.w_o").rows() == 3 * 8);
    const Tensor preds = model::gpt2_forward(state, random_tokens(8, 1, 71), cfg);
    CHECK(preds.rows() == 8);
}

TEST_CASE("context overflow raises") {
    const TransformerConfig cfg = tiny_transformer(1, 1, 8, 1, 4);
    const ModelState state = model::init_model(cfg);
    CHECK_THROWS_AS(model::gpt2_forward(state, random_tokens(5, 1, 41), cfg), ConfigError);
}

namespace {

// single-step recurrences written out longhand as the reference oracle
std::vector<double> elman_step(const ModelState& st, const std::vector<double>& x,
                               const std::vector<double>& h, int d, int in) {
    std::vector<double> out(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
        double acc = st.at("l0.b_h").at(0, j);
        for (int i = 0; i < in; ++i) acc += x[static_cast<std::size_t>(i)] * st.at("l0.w_ih").at(i, j);
        for (int i = 0; i < d; ++i) acc += h[static_cast<std::size_t>(i)] * st.at("l0.w_hh").at(i, j);
        out[static_cast<std::size_t>(j)] = std::tanh(acc);
    }
    return out;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("elman forward matches a hand-rolled single-layer reference") {
    model::RNNConfig cfg;
    cfg.kind = model::RNNKind::kElman;
    cfg.layers = 1;
    cfg.hidden = 5;
    cfg.embed_dim = 2;
    cfg.init_seed = 3;
    const ModelState state = model::init_model(cfg);
    const Tensor tokens = random_tokens(4, 2, 43);
    const Tensor preds = model::rnn_forward(state, tokens, cfg);

    std::vector<double> h(5, 0.0);
    for (int t = 0; t < 4; ++t) {
        const std::vector<double> x{tokens.at(t, 0), tokens.at(t, 1)};
        h = elman_step(state, x, h, 5, 2);
        for (int e = 0; e < 2; ++e) {
            double acc = state.at("b_out").at(0, e);
            for (int j = 0; j < 5; ++j) acc += h[static_cast<std::size_t>(j)] * state.at("w_out").at(j, e);
            CHECK(std::abs(preds.at(t, e) - acc) <= 1e-12 * (1.0 + std::abs(acc)));
        }
    }
}

TEST_CASE("lstm and gru forward match hand-rolled references") {
    for (model::RNNKind kind : {model::RNNKind::kLstm, model::RNNKind::kGru}) {
        model::RNNConfig cfg;
        cfg.kind = kind;
        cfg.layers = 1;
        cfg.hidden = 4;
        cfg.embed_dim = 1;
        cfg.init_seed = 7;
        const ModelState st = model::init_model(cfg);
        const Tensor tokens = random_tokens(3, 1, 47);
        const Tensor preds = model::rnn_forward(st, tokens, cfg);

        const int d = 4;
        std::vector<double> h(static_cast<std::size_t>(d), 0.0), c(static_cast<std::size_t>(d), 0.0);
        auto gate = [&](const char* w, const char* u, const char* b, double x,
                        const std::vector<double>& hh, int j) {
            double acc = st.at(b).at(0, j) + x * st.at(w).at(0, j);
            for (int i = 0; i < d; ++i) acc += hh[static_cast<std::size_t>(i)] * st.at(u).at(i, j);
            return acc;
        };
        for (int t = 0; t < 3; ++t) {
            const double x = tokens.at(t, 0);
            std::vector<double> next(static_cast<std::size_t>(d));
            if (kind == model::RNNKind::kLstm) {
                for (int j = 0; j < d; ++j) {
                    const double f = sigmoid(gate("l0.w_f", "l0.u_f", "l0.b_f", x, h, j));
                    const double i = sigmoid(gate("l0.w_i", "l0.u_i", "l0.b_i", x, h, j));
                    const double o = sigmoid(gate("l0.w_o", "l0.u_o", "l0.b_o", x, h, j));
                    const double g = std::tanh(gate("l0.w_g", "l0.u_g", "l0.b_g", x, h, j));
                    c[static_cast<std::size_t>(j)] = f * c[static_cast<std::size_t>(j)] + i * g;
                    next[static_cast<std::size_t>(j)] = o * std::tanh(c[static_cast<std::size_t>(j)]);
                }
            } else {
                std::vector<double> gated(static_cast<std::size_t>(d));
                std::vector<double> r(static_cast<std::size_t>(d)), z(static_cast<std::size_t>(d));
                for (int j = 0; j < d; ++j) {
                    r[static_cast<std::size_t>(j)] = sigmoid(gate("l0.w_r", "l0.u_r", "l0.b_r", x, h, j));
                    z[static_cast<std::size_t>(j)] = sigmoid(gate("l0.w_z", "l0.u_z", "l0.b_z", x, h, j));
                }
                for (int j = 0; j < d; ++j) gated[static_cast<std::size_t>(j)] = r[static_cast<std::size_t>(j)] * h[static_cast<std::size_t>(j)];
                for (int j = 0; j < d; ++j) {
                    const double n = std::tanh(gate("l0.w_n", "l0.u_n", "l0.b_n", x, gated, j));
                    next[static_cast<std::size_t>(j)] =
                        (1.0 - z[static_cast<std::size_t>(j)]) * n + z[static_cast<std::size_t>(j)] * h[static_cast<std::size_t>(j)];
                }
            }
            h = next;
            for (int e = 0; e < 1; ++e) {
                double acc = st.at("b_out").at(0, e);
                for (int j = 0; j < d; ++j) acc += h[static_cast<std::size_t>(j)] * st.at("w_out").at(j, e);
                CHECK(std::abs(preds.at(t, e) - acc) <= 1e-12 * (1.0 + std::abs(acc)));
            }
        }
    }
}

TEST_CASE("rnn gate saturation identities") {
    // zero Elman weights and biases give identically zero hidden states
    model::RNNConfig cfg;
    cfg.kind = model::RNNKind::kElman;
    cfg.layers = 1;
    cfg.hidden = 4;
    cfg.embed_dim = 1;
    ModelState st = model::init_model(cfg);
    for (auto& [name, t] : st.params) t.fill(0.0);
    const Tensor preds = model::rnn_forward(st, random_tokens(5, 1, 53), cfg);
    for (std::size_t i = 0; i < preds.size(); ++i) CHECK(preds[i] == 0.0);

    // LSTM with saturated forget gate and closed input gate keeps c constant
    cfg.kind = model::RNNKind::kLstm;
    ModelState lstm = model::init_model(cfg);
    lstm.at("l0.b_f").fill(50.0);
    lstm.at("l0.b_i").fill(-50.0);
    lstm.at("l0.b_o").fill(50.0);
    const Tensor lp = model::rnn_forward(lstm, random_tokens(6, 1, 59), cfg);
    // c stays at zero, so h = tanh(0) = 0 and outputs collapse to the bias
    for (int t = 0; t < 6; ++t) {
        CHECK(std::abs(lp.at(t, 0) - lstm.at("b_out").at(0, 0)) < 1e-12);
    }

    // GRU with a saturated update gate carries the hidden state forward
    cfg.kind = model::RNNKind::kGru;
    ModelState gru = model::init_model(cfg);
    gru.at("l0.b_z").fill(50.0);
    const Tensor gp = model::rnn_forward(gru, random_tokens(6, 1, 61), cfg);
    for (int t = 1; t < 6; ++t) CHECK(std::abs(gp.at(t, 0) - gp.at(0, 0)) < 1e-12);
}

TEST_CASE("readout rows per task layout") {
    CHECK(model::regression_readout_row(2 * 10 + 2) == 21);
    CHECK(model::regression_readout_row(2 * 10 + 1) == 20);  // continuation layout

    sde::SDEConfig scfg;
    scfg.seed = 2;
    scfg.n_events = 20;
    const sde::PathPair pair = sde::generate_pair(scfg, 0);
    const sde::SdePrompt prompt = sde::sde_prompt(pair, scfg);
    CHECK(prompt.targets.rows() == 38);  // (n-1)*2 predicted tokens

    const Tensor preds = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
    const std::vector<double> last = model::readout_prediction(preds);
    CHECK(last == std::vector<double>{5.0, 6.0});
}
