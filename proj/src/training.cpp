#include "iccr/training.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "iccr/errors.hpp"
#include "iccr/parallel.hpp"
#include "iccr/runio.hpp"
#include "iccr/tape.hpp"

namespace iccr::train {

namespace {

constexpr int kGradChunks = 8;  // static partition keeps reductions thread-count-invariant
constexpr std::uint64_t kEvalIndexBase = 1ull << 62;

std::vector<ad::Tensor> zero_like(const model::ModelState& state) {
    std::vector<ad::Tensor> out;
    out.reserve(state.params.size());
    for (const auto& [name, t] : state.params) out.emplace_back(t.shape());
    return out;
}

void add_into(std::vector<ad::Tensor>& acc, const std::vector<ad::Tensor>& delta) {
    for (std::size_t p = 0; p < acc.size(); ++p) {
        for (std::size_t i = 0; i < acc[p].size(); ++i) acc[p][i] += delta[p][i];
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("train config: steps must be >= 0");
    if (batch < 1) throw ConfigError("train config: batch must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train config: learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("train config: betas must lie in [0,1)");
    }
    if (!(eps > 0.0)) throw ConfigError("train config: eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("train config: weight decay must be >= 0");
    if (clip_norm < 0.0) throw ConfigError("train config: clip norm must be >= 0");
}

double mse_loss(const std::vector<ad::Tensor>& preds, const std::vector<ad::Tensor>& targets,
                const std::vector<std::vector<std::uint8_t>>& masks, int embed_dim) {
    if (preds.size() != targets.size() || preds.size() != masks.size() || preds.empty()) {
        throw ConfigError("mse_loss: inconsistent batch");
    }
    double total = 0.0;
    std::size_t scored = 0;
    bool any = false;
    for (std::size_t b = 0; b < preds.size(); ++b) {
        const ad::Tensor& p = preds[b];
        const ad::Tensor& t = targets[b];
        const auto& mask = masks[b];
        if (mask.size() != static_cast<std::size_t>(p.rows())) {
            throw ConfigError("mse_loss: mask length must match prediction rows");
        }
        std::size_t row_in_target = 0;
        std::size_t scored_b = 0;
        for (int r = 0; r < p.rows(); ++r) {
            if (!mask[static_cast<std::size_t>(r)]) continue;
            any = true;
            ++scored_b;
            for (int e = 0; e < p.cols(); ++e) {
                const double d = p.at(r, e) - t.at(static_cast<int>(row_in_target), e);
                total += d * d;
            }
            ++row_in_target;
        }
        if (b == 0) {
            scored = scored_b;
        } else if (scored_b != scored) {
            throw ConfigError("mse_loss: members must score the same number of rows");
        }
    }
    if (!any) throw ConfigError("mse_loss: empty mask");
    return total / (static_cast<double>(preds.size()) * embed_dim * static_cast<double>(scored));
}

void adamw_step(model::ModelState& state, AdamWState& opt, const std::vector<ad::Tensor>& grads,
                const TrainConfig& cfg, int t) {
    if (t < 1) throw ConfigError("adamw_step: t must be >= 1");
    if (grads.size() != state.params.size()) throw ConfigError("adamw_step: gradient table mismatch");
    if (opt.m.empty()) {
        opt.m = zero_like(state);
        opt.v = zero_like(state);
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t p = 0; p < grads.size(); ++p) {
        ad::Tensor& param = state.params[p].second;
        ad::Tensor& m = opt.m[p];
        ad::Tensor& v = opt.v[p];
        const ad::Tensor& g = grads[p];
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double gi = g[i];
            if (!std::isfinite(gi)) {
                throw NumericError("adamw_step: non-finite gradient for " + state.params[p].first +
                                   " at step " + std::to_string(t));
            }
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            param[i] *= 1.0 - cfg.lr * cfg.weight_decay;
            param[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
        }
    }
}

BatchSource regression_source(const gen::GenConfig& cfg, bool shared_z) {
    cfg.validate();
    return [cfg, shared_z](std::uint64_t batch_index, int batch_size) {
        const std::vector<gen::PromptRecord> records =
            gen::sample_batch(cfg, batch_index, batch_size, shared_z);
        std::vector<Example> batch;
        batch.reserve(records.size());
        for (const gen::PromptRecord& rec : records) {
            Example ex;
            ex.tokens = rec.tokens;
            ex.targets = ad::Tensor(1, cfg.embed_dim);
            for (int e = 0; e < cfg.embed_dim; ++e) ex.targets.at(0, e) = rec.target[static_cast<std::size_t>(e)];
            ex.readout_rows = {rec.tokens.rows() - 1};
            batch.push_back(std::move(ex));
        }
        return batch;
    };
}

BatchSource sde_source(const sde::SDEConfig& cfg) {
    cfg.validate();
    return [cfg](std::uint64_t batch_index, int batch_size) {
        std::vector<Example> batch;
        batch.reserve(static_cast<std::size_t>(batch_size));
        for (int b = 0; b < batch_size; ++b) {
            const std::uint64_t index = batch_index * static_cast<std::uint64_t>(batch_size) + b;
            const sde::PathPair pair = sde::generate_pair(cfg, index);
            const sde::SdePrompt prompt = sde::sde_prompt(pair, cfg);
            Example ex;
            ex.tokens = prompt.tokens;
            ex.targets = prompt.targets;
            ex.readout_rows = prompt.target_rows;
            batch.push_back(std::move(ex));
        }
        return batch;
    };
}

namespace {

struct StepResult {
    std::vector<ad::Tensor> grads;
    double loss = 0.0;
};

StepResult batch_forward_backward(const model::ModelConfig& mcfg, const model::ModelState& state,
                                  const std::vector<Example>& batch, int embed_dim, int threads) {
    const int b_size = static_cast<int>(batch.size());
    std::size_t scored = batch.front().readout_rows.size();
    for (const Example& ex : batch) {
        if (ex.readout_rows.size() != scored) {
            throw ConfigError("train: batch members must score the same number of rows");
        }
    }
    const double loss_scale =
        1.0 / (static_cast<double>(b_size) * embed_dim * static_cast<double>(scored));

    const int chunks = std::min(kGradChunks, b_size);
    std::vector<std::vector<ad::Tensor>> chunk_grads(static_cast<std::size_t>(chunks));
    std::vector<double> chunk_loss(static_cast<std::size_t>(chunks), 0.0);

    util::parallel_for(chunks, threads, [&](int c) {
        chunk_grads[static_cast<std::size_t>(c)] = zero_like(state);
        auto& grads = chunk_grads[static_cast<std::size_t>(c)];
        for (int b = c; b < b_size; b += chunks) {
            const Example& ex = batch[static_cast<std::size_t>(b)];
            ad::Tape tape;
            const model::ForwardHandle handle = model::forward_tape(tape, state, ex.tokens, mcfg);
            const ad::VarId picked = tape.gather_rows(handle.predictions, ex.readout_rows);
            const ad::VarId loss = tape.scaled_sq_error(picked, ex.targets, loss_scale);
            tape.backward(loss);
            chunk_loss[static_cast<std::size_t>(c)] += tape.scalar_value(loss);
            for (std::size_t p = 0; p < handle.param_vars.size(); ++p) {
                const ad::Tensor& g = tape.grad(handle.param_vars[p]);
                for (std::size_t i = 0; i < g.size(); ++i) grads[p][i] += g[i];
            }
        }
    });

    StepResult result;
    result.grads = std::move(chunk_grads[0]);
    result.loss = chunk_loss[0];
    for (int c = 1; c < chunks; ++c) {
        add_into(result.grads, chunk_grads[static_cast<std::size_t>(c)]);
        result.loss += chunk_loss[static_cast<std::size_t>(c)];
    }
    return result;
}

void clip_gradients(std::vector<ad::Tensor>& grads, double clip_norm) {
    if (clip_norm <= 0.0) return;
    double sq = 0.0;
    for (const ad::Tensor& g : grads) {
        for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
    }
    const double norm = std::sqrt(sq);
    if (norm <= clip_norm) return;
    const double factor = clip_norm / norm;
    for (ad::Tensor& g : grads) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= factor;
    }
}

double eval_snapshot(const model::ModelConfig& mcfg, const model::ModelState& state,
                     const BatchSource& source, int sequences, int threads, int embed_dim) {
    const std::vector<Example> batch = source(kEvalIndexBase, sequences);
    std::vector<double> sq(batch.size(), 0.0);
    util::parallel_for(static_cast<int>(batch.size()), threads, [&](int i) {
        const Example& ex = batch[static_cast<std::size_t>(i)];
        ad::Tape tape;
        const model::ForwardHandle handle = model::forward_tape(tape, state, ex.tokens, mcfg);
        const ad::Tensor& preds = tape.value(handle.predictions);
        double acc = 0.0;
        for (std::size_t r = 0; r < ex.readout_rows.size(); ++r) {
            const int row = ex.readout_rows[r];
            for (int e = 0; e < preds.cols(); ++e) {
                const double d = preds.at(row, e) - ex.targets.at(static_cast<int>(r), e);
                acc += d * d;
            }
        }
        sq[static_cast<std::size_t>(i)] = acc / static_cast<double>(ex.readout_rows.size());
    });
    double total = 0.0;
    for (double v : sq) total += v;
    return total / (static_cast<double>(batch.size()) * embed_dim);
}

void persist_partial(const std::string& dir, const Checkpoint& ckpt, const LossTrace& trace) {
    if (dir.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    save_checkpoint(ckpt, dir + "/diverged.ickp");
    std::ofstream out(dir + "/trace_partial.csv");
    out << "step,train_mse\n";
    for (std::size_t i = 0; i < trace.step_mse.size(); ++i) out << i << "," << trace.step_mse[i] << "\n";
}

}  // namespace

TrainOutput train_with_source(const model::ModelConfig& mcfg, const BatchSource& source,
                              const TrainConfig& tcfg, const std::string& checkpoint_dir,
                              const Checkpoint* resume, const std::string& config_json) {
    mcfg.validate();
    tcfg.validate();
    const int embed_dim = mcfg.embed_dim();

    TrainOutput out;
    out.checkpoint.model_cfg = mcfg;
    out.checkpoint.config_json = config_json;
    if (resume) {
        out.checkpoint.state = resume->state;
        out.checkpoint.opt = resume->opt;
        out.checkpoint.step = resume->step;
    } else {
        out.checkpoint.state = model::init_model(mcfg);
    }

    if (!checkpoint_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(checkpoint_dir, ec);
    }

    for (std::uint64_t step = out.checkpoint.step; step < static_cast<std::uint64_t>(tcfg.steps); ++step) {
        const auto started = std::chrono::steady_clock::now();
        const std::vector<Example> batch = source(step, tcfg.batch);
        StepResult result;
        try {
            result = batch_forward_backward(mcfg, out.checkpoint.state, batch, embed_dim, tcfg.threads);
            if (!std::isfinite(result.loss)) {
                throw NumericError("train: non-finite loss at step " + std::to_string(step));
            }
            clip_gradients(result.grads, tcfg.clip_norm);
            adamw_step(out.checkpoint.state, out.checkpoint.opt, result.grads, tcfg,
                       static_cast<int>(step - out.checkpoint.step) + 1);
        } catch (const NumericError&) {
            persist_partial(checkpoint_dir, out.checkpoint, out.trace);
            throw;
        }
        out.checkpoint.step = step + 1;
        out.trace.step_mse.push_back(result.loss);
        out.trace.step_ms.push_back(
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started)
                .count());

        if (tcfg.eval_every > 0 && (step + 1) % static_cast<std::uint64_t>(tcfg.eval_every) == 0) {
            const double mse = eval_snapshot(mcfg, out.checkpoint.state, source, tcfg.eval_sequences,
                                             tcfg.threads, embed_dim);
            out.trace.eval_mse.emplace_back(static_cast<int>(step + 1), mse);
        }
        if (!checkpoint_dir.empty() && tcfg.checkpoint_every > 0 &&
            (step + 1) % static_cast<std::uint64_t>(tcfg.checkpoint_every) == 0) {
            save_checkpoint(out.checkpoint,
                            checkpoint_dir + "/step_" + std::to_string(step + 1) + ".ickp");
        }
    }
    if (!checkpoint_dir.empty()) save_checkpoint(out.checkpoint, checkpoint_dir + "/final.ickp");
    return out;
}

TrainOutput train(const model::ModelConfig& mcfg, const gen::GenConfig& gcfg,
                  const TrainConfig& tcfg, const std::string& checkpoint_dir,
                  const Checkpoint* resume, const std::string& config_json) {
    if (mcfg.embed_dim() != gcfg.embed_dim) {
        throw ConfigError("train: model and generator embed dims disagree");
    }
    if (gcfg.fixed_z && gcfg.n_min <= *gcfg.fixed_z) {
        throw ConfigError("train: fixed z requires n_min > z (anchored pair plus context)");
    }
    const int max_tokens = 2 * gcfg.n_max + 2;
    if (mcfg.type == model::ModelConfig::Type::kTransformer &&
        mcfg.transformer.max_context < max_tokens) {
        throw ConfigError("train: model context " + std::to_string(mcfg.transformer.max_context) +
                          " too short for n_max (needs " + std::to_string(max_tokens) + ")");
    }
    return train_with_source(mcfg, regression_source(gcfg, tcfg.shared_z_in_batch), tcfg,
                             checkpoint_dir, resume, config_json);
}

std::optional<int> detect_phase_transition(const std::vector<double>& step_mse, double threshold,
                                           int window, int patience) {
    if (window < 1) throw ConfigError("detect_phase_transition: window must be >= 1");
    const int n = static_cast<int>(step_mse.size());
    if (n == 0) return std::nullopt;
    std::vector<double> smooth(static_cast<std::size_t>(n));
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        acc += step_mse[static_cast<std::size_t>(i)];
        if (i >= window) acc -= step_mse[static_cast<std::size_t>(i - window)];
        smooth[static_cast<std::size_t>(i)] = acc / std::min(i + 1, window);
    }
    // below[k] = true when smooth stays under threshold on [k, horizon(k)]
    std::vector<std::uint8_t> below(static_cast<std::size_t>(n));
    int run = 0;
    for (int i = n - 1; i >= 0; --i) {
        run = smooth[static_cast<std::size_t>(i)] < threshold ? run + 1 : 0;
        const int needed = patience < 0 ? n - i : std::min(patience + 1, n - i);
        below[static_cast<std::size_t>(i)] = run >= needed;
    }
    for (int i = 0; i < n; ++i) {
        if (below[static_cast<std::size_t>(i)]) return i;
    }
    return std::nullopt;
}

namespace {

constexpr char kMagic[4] = {'I', 'C', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
    std::uint32_t len = 0;
    read_pod(in, len);
    std::string s(len, '\0');
    in.read(s.data(), len);
    return s;
}

void write_tensor(std::ofstream& out, const ad::Tensor& t) {
    write_pod(out, static_cast<std::uint32_t>(t.shape().size()));
    for (int e : t.shape()) write_pod(out, static_cast<std::int32_t>(e));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
}

ad::Tensor read_tensor(std::ifstream& in) {
    std::uint32_t ndim = 0;
    read_pod(in, ndim);
    std::vector<int> shape(ndim);
    for (std::uint32_t i = 0; i < ndim; ++i) {
        std::int32_t e = 0;
        read_pod(in, e);
        shape[i] = e;
    }
    ad::Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    return t;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("save_checkpoint: cannot open " + path);
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, runio::fnv1a64(ckpt.config_json));
    write_string(out, ckpt.config_json);
    write_string(out, runio::model_config_to_json(ckpt.model_cfg));
    write_pod(out, ckpt.step);
    write_pod(out, ckpt.step);  // generator cursor: next batch index
    write_pod(out, static_cast<std::uint32_t>(ckpt.state.params.size()));
    for (const auto& [name, tensor] : ckpt.state.params) {
        write_string(out, name);
        write_tensor(out, tensor);
    }
    const std::uint8_t has_opt = ckpt.opt.m.empty() ? 0 : 1;
    write_pod(out, has_opt);
    if (has_opt) {
        for (const ad::Tensor& t : ckpt.opt.m) write_tensor(out, t);
        for (const ad::Tensor& t : ckpt.opt.v) write_tensor(out, t);
    }
    if (!out) throw ConfigError("save_checkpoint: failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("load_checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw ConfigError("load_checkpoint: bad magic in " + path);
    std::uint32_t version = 0;
    read_pod(in, version);
    if (version != kVersion) throw ConfigError("load_checkpoint: unsupported version in " + path);
    Checkpoint ckpt;
    std::uint64_t digest = 0;
    read_pod(in, digest);
    ckpt.config_json = read_string(in);
    if (digest != runio::fnv1a64(ckpt.config_json)) {
        throw ConfigError("load_checkpoint: config digest mismatch in " + path);
    }
    ckpt.model_cfg = runio::model_config_from_json(read_string(in));
    read_pod(in, ckpt.step);
    std::uint64_t cursor = 0;
    read_pod(in, cursor);
    std::uint32_t count = 0;
    read_pod(in, count);
    ckpt.state.params.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = read_string(in);
        ckpt.state.params.emplace_back(std::move(name), read_tensor(in));
    }
    std::uint8_t has_opt = 0;
    read_pod(in, has_opt);
    if (has_opt) {
        ckpt.opt.m.reserve(count);
        ckpt.opt.v.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i) ckpt.opt.m.push_back(read_tensor(in));
        for (std::uint32_t i = 0; i < count; ++i) ckpt.opt.v.push_back(read_tensor(in));
    }
    if (!in) throw ConfigError("load_checkpoint: truncated file " + path);
    return ckpt;
}

}  // namespace iccr::train
