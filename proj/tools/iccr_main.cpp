// Command-line workbench: data generation, training, evaluation, probing,
// attention readout, SDE simulation, and the figure-to-command map.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "iccr/analysis.hpp"
#include "iccr/datagen.hpp"
#include "iccr/errors.hpp"
#include "iccr/models.hpp"
#include "iccr/rng.hpp"
#include "iccr/runio.hpp"
#include "iccr/scm.hpp"
#include "iccr/sde.hpp"
#include "iccr/tape.hpp"
#include "iccr/training.hpp"

namespace {

using namespace iccr;
using json = nlohmann::json;

std::vector<int> parse_lengths(const std::string& spec) {
    std::vector<int> lengths;
    const auto dots = spec.find("..");
    if (dots != std::string::npos) {
        const int lo = std::stoi(spec.substr(0, dots));
        const int hi = std::stoi(spec.substr(dots + 2));
        if (hi < lo) throw ConfigError("lengths: empty range " + spec);
        for (int n = lo; n <= hi; ++n) lengths.push_back(n);
        return lengths;
    }
    std::size_t pos = 0;
    while (pos < spec.size()) {
        const std::size_t comma = spec.find(',', pos);
        const std::string tok = spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!tok.empty()) lengths.push_back(std::stoi(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (lengths.empty()) throw ConfigError("lengths: nothing parsed from " + spec);
    return lengths;
}

std::vector<int> parse_int_list(const std::string& spec) { return parse_lengths(spec); }

std::vector<gen::ThetaDist> parse_dists(const std::string& spec) {
    std::vector<gen::ThetaDist> dists;
    std::size_t pos = 0;
    while (pos < spec.size()) {
        const std::size_t comma = spec.find(',', pos);
        const std::string tok =
            spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!tok.empty()) dists.push_back(gen::theta_dist_from_name(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (dists.empty()) throw ConfigError("no distributions parsed from " + spec);
    return dists;
}

// Flag bundles shared by subcommands. Command-line values override config-file
// values; the fully resolved set is echoed into the manifest.
struct GenFlags {
    gen::GenConfig cfg;
    std::string theta_dist = "uniform";
    std::string kind = "linear_additive";
    std::string task = "counterfactual";
    int diversity = 0;  // 0 = unset
    int fixed_z = 0;    // 0 = unset

    void attach(CLI::App* app) {
        app->add_option("--e", cfg.embed_dim, "embedding dimension E");
        app->add_option("--n-min", cfg.n_min, "minimum in-context examples");
        app->add_option("--n-max", cfg.n_max, "maximum in-context examples");
        app->add_option("--theta-dist", theta_dist, "latent distribution: uniform|normal");
        app->add_option("--diversity", diversity, "latent pool size d (0 = unlimited)");
        app->add_option("--kind", kind,
                        "mechanism: linear_additive|anm|multiplicative|exponential|tanh|sigmoid");
        app->add_option("--tau", cfg.noise.tau, "link scale for tanh/sigmoid");
        app->add_option("--normalizer", cfg.noise.normalizer,
                        "multiplicative normalizer (0 = sqrt(3410.4))");
        app->add_option("--task", task, "counterfactual|continuation|sde");
        app->add_option("--fixed-z", fixed_z, "fix the anchor index (0 = uniform)");
        app->add_option("--data-seed", cfg.seed, "generator seed");
    }
    gen::GenConfig resolve() const {
        gen::GenConfig out = cfg;
        out.theta_dist = gen::theta_dist_from_name(theta_dist);
        out.noise.kind = scm::noise_kind_from_name(kind);
        out.task = gen::task_from_name(task);
        if (diversity > 0) out.diversity = diversity;
        if (fixed_z > 0) out.fixed_z = fixed_z;
        out.validate();
        return out;
    }
};

struct ModelFlags {
    std::string model = "gpt2";
    std::string variant = "full";
    int layers = 12;
    int heads = 8;
    int hidden = 256;
    int max_context = 102;
    bool no_layer_norm = false;
    bool paper_literal_attention = false;
    bool paper_head_dim = false;
    std::uint64_t init_seed = 0;

    void attach(CLI::App* app) {
        app->add_option("--model", model, "gpt2|elman|lstm|gru");
        app->add_option("--layers", layers, "layer count");
        app->add_option("--heads", heads, "attention heads (gpt2)");
        app->add_option("--hidden", hidden, "hidden width D");
        app->add_option("--max-context", max_context, "maximum context length (gpt2)");
        app->add_option("--variant", variant, "full|attention_only|mlp_only");
        app->add_flag("--no-layer-norm", no_layer_norm, "paper-literal stream without layer norm");
        app->add_flag("--paper-literal-attention", paper_literal_attention,
                      "drop the 1/sqrt(head_dim) score scaling");
        app->add_flag("--paper-head-dim", paper_head_dim, "per-head width D with H*D concat");
        app->add_option("--init-seed", init_seed, "parameter initialization seed");
    }
    model::ModelConfig resolve(int embed_dim) const {
        model::ModelConfig out;
        if (model == "gpt2") {
            out.type = model::ModelConfig::Type::kTransformer;
            out.transformer.layers = layers;
            out.transformer.heads = heads;
            out.transformer.hidden = hidden;
            out.transformer.embed_dim = embed_dim;
            out.transformer.max_context = max_context;
            out.transformer.variant = model::variant_from_name(variant);
            out.transformer.use_layer_norm = !no_layer_norm;
            out.transformer.paper_literal_attention = paper_literal_attention;
            out.transformer.paper_head_dim = paper_head_dim;
            out.transformer.init_seed = init_seed;
        } else {
            out.type = model::ModelConfig::Type::kRnn;
            out.rnn.kind = model::rnn_kind_from_name(model);
            out.rnn.layers = layers;
            out.rnn.hidden = hidden;
            out.rnn.embed_dim = embed_dim;
            out.rnn.init_seed = init_seed;
        }
        out.validate();
        return out;
    }
};

struct TrainFlags {
    train::TrainConfig cfg;
    std::string mask = "final_token";

    void attach(CLI::App* app) {
        app->add_option("--steps", cfg.steps, "training steps N");
        app->add_option("--batch", cfg.batch, "batch size B");
        app->add_option("--lr", cfg.lr, "learning rate");
        app->add_option("--beta1", cfg.beta1, "AdamW beta1");
        app->add_option("--beta2", cfg.beta2, "AdamW beta2");
        app->add_option("--eps", cfg.eps, "AdamW epsilon");
        app->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay");
        app->add_option("--eval-every", cfg.eval_every, "in-context eval cadence (0 = off)");
        app->add_option("--eval-sequences", cfg.eval_sequences, "sequences per eval snapshot");
        app->add_option("--checkpoint-every", cfg.checkpoint_every, "checkpoint cadence");
        app->add_option("--mask", mask, "loss mask: final_token|completion_mask");
        app->add_option("--seed", cfg.seed, "training seed");
        app->add_flag_callback("--no-deterministic", [this] { cfg.deterministic = false; },
                               "allow nondeterministic scheduling");
        app->add_flag("--shared-z", cfg.shared_z_in_batch, "share the anchor index within a batch");
        app->add_option("--clip-norm", cfg.clip_norm, "global gradient clip (0 = off)");
        app->add_option("--threads", cfg.threads, "worker threads (0 = hardware)");
    }
    train::TrainConfig resolve() const {
        train::TrainConfig out = cfg;
        out.mask = mask == "completion_mask" ? train::LossMaskKind::kCompletionMask
                                             : train::LossMaskKind::kFinalToken;
        out.validate();
        return out;
    }
};

std::string combined_config(const std::string& command, const json& pieces) {
    json j = pieces;
    j["command"] = command;
    return j.dump();
}

int run_with_manifest(const std::string& command, const std::string& config_json,
                      std::uint64_t seed, const std::string& run_dir,
                      const std::function<void(runio::RunManifest&)>& body) {
    runio::RunManifest manifest;
    manifest.command = command;
    manifest.config_json = config_json;
    manifest.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    int exit_code = 0;
    try {
        body(manifest);
        manifest.ok = true;
    } catch (const std::exception& e) {
        manifest.ok = false;
        manifest.error = e.what();
        std::cerr << "error: " << e.what() << "\n";
        exit_code = 1;
    }
    manifest.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    runio::write_manifest(manifest, run_dir);
    return exit_code;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const GenFlags& gf, std::uint64_t count, const std::string& run_dir_flag,
                 const std::string& argv_line) {
    const std::string run_dir = runio::make_run_dir("gen-data", argv_line, run_dir_flag);
    return run_with_manifest(argv_line, "", 0, run_dir, [&](runio::RunManifest& m) {
        const gen::GenConfig cfg = gf.resolve();
        m.config_json = combined_config("gen-data", json::parse(runio::gen_config_to_json(cfg)));
        m.seed = cfg.seed;
        std::filesystem::create_directories(run_dir + "/dataset");
        const std::string path = run_dir + "/dataset/prompts.jsonl";
        gen::write_dataset(cfg, count, path);
        runio::add_artifact(m, path);
        std::cout << "wrote " << count << " records to " << path << "\n";
    });
}

int cmd_sde_sim(const sde::SDEConfig& cfg, std::uint64_t count, const std::string& run_dir_flag,
                const std::string& argv_line) {
    const std::string run_dir = runio::make_run_dir("sde-sim", argv_line, run_dir_flag);
    return run_with_manifest(argv_line, "", 0, run_dir, [&](runio::RunManifest& m) {
        cfg.validate();
        m.config_json = combined_config("sde-sim", json::parse(runio::sde_config_to_json(cfg)));
        m.seed = cfg.seed;
        std::filesystem::create_directories(run_dir + "/dataset");
        const std::string path = run_dir + "/dataset/sde.jsonl";
        sde::write_sde_dataset(cfg, count, path);
        runio::add_artifact(m, path);
        std::cout << "wrote " << count << " trajectory prompts to " << path << "\n";
    });
}

void write_loss_trace(const train::LossTrace& trace, const std::string& run_dir,
                      runio::RunManifest& m) {
    {
        const std::string path = run_dir + "/metrics/loss_trace.csv";
        std::ofstream out(path);
        out << "step,train_mse\n";
        char buf[40];
        for (std::size_t i = 0; i < trace.step_mse.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", trace.step_mse[i]);
            out << i + 1 << "," << buf << "\n";
        }
        runio::add_artifact(m, path);
    }
    if (!trace.eval_mse.empty()) {
        const std::string path = run_dir + "/metrics/eval_snapshots.csv";
        std::ofstream out(path);
        out << "step,eval_mse\n";
        char buf[40];
        for (const auto& [step, mse] : trace.eval_mse) {
            std::snprintf(buf, sizeof(buf), "%.17g", mse);
            out << step << "," << buf << "\n";
        }
        runio::add_artifact(m, path);
    }
    {
        // wall-clock sits outside metrics/ so metric files stay reproducible
        const std::string path = run_dir + "/timing.csv";
        std::ofstream out(path);
        out << "step,ms\n";
        for (std::size_t i = 0; i < trace.step_ms.size(); ++i) {
            out << i + 1 << "," << trace.step_ms[i] << "\n";
        }
    }
}

struct SdeTrainFlags {
    int events = 20;
    double sigma = 0.05;
    bool equidistant = false;
    int times_pool = 0;

    void attach(CLI::App* app) {
        app->add_option("--sde-events", events, "event times per trajectory (sde task)");
        app->add_option("--sde-sigma", sigma, "diffusion constant for both species (sde task)");
        app->add_flag("--sde-equidistant", equidistant, "equidistant t_0 = 0 variant (sde task)");
        app->add_option("--sde-times-pool", times_pool, "curriculum pool of event-time draws");
    }
    sde::SDEConfig resolve(int embed_dim, std::uint64_t seed) const {
        sde::SDEConfig cfg;
        cfg.embed_dim = embed_dim;
        cfg.seed = seed;
        cfg.n_events = events;
        cfg.sigma_x = sigma;
        cfg.sigma_y = sigma;
        cfg.equidistant = equidistant;
        if (times_pool > 0) cfg.times_pool = times_pool;
        cfg.validate();
        return cfg;
    }
};

int cmd_train(const ModelFlags& mf, const GenFlags& gf, const TrainFlags& tf,
              const SdeTrainFlags& sf, bool batch_explicit, const std::string& resume_path,
              bool print_config, bool detect_transition, double transition_threshold,
              int transition_window, const std::string& run_dir_flag,
              const std::string& argv_line) {
    const bool sde_task = gf.task == "sde";
    gen::GenConfig gcfg;
    sde::SDEConfig scfg;
    model::ModelConfig mcfg;
    train::TrainConfig tcfg;
    try {
        if (sde_task) {
            scfg = sf.resolve(gf.cfg.embed_dim, gf.cfg.seed);
        } else {
            gcfg = gf.resolve();
        }
        mcfg = mf.resolve(gf.cfg.embed_dim);
        tcfg = tf.resolve();
        if (sde_task) {
            tcfg.mask = train::LossMaskKind::kCompletionMask;
            if (!batch_explicit) tcfg.batch = 8;  // trajectory batches default small
        }
    } catch (const std::exception& e) {
        const std::string run_dir = runio::make_run_dir("train", argv_line, run_dir_flag);
        return run_with_manifest(argv_line, "", 0, run_dir,
                                 [&](runio::RunManifest&) -> void { throw; });
    }
    json pieces;
    pieces["model"] = json::parse(runio::model_config_to_json(mcfg));
    if (sde_task) {
        pieces["sde"] = json::parse(runio::sde_config_to_json(scfg));
    } else {
        pieces["gen"] = json::parse(runio::gen_config_to_json(gcfg));
    }
    pieces["train"] = json::parse(runio::train_config_to_json(tcfg));
    const std::string cfg_json = combined_config("train", pieces);
    if (print_config) {
        std::cout << json::parse(cfg_json).dump(2) << "\n";
        return 0;
    }
    const std::string run_dir = runio::make_run_dir("train", argv_line, run_dir_flag);
    return run_with_manifest(argv_line, cfg_json, tcfg.seed, run_dir, [&](runio::RunManifest& m) {
        train::Checkpoint resume;
        const train::Checkpoint* resume_ptr = nullptr;
        if (!resume_path.empty()) {
            resume = train::load_checkpoint(resume_path);
            resume_ptr = &resume;
        }
        const train::TrainOutput out =
            sde_task ? train::train_with_source(mcfg, train::sde_source(scfg), tcfg,
                                                run_dir + "/checkpoints", resume_ptr, cfg_json)
                     : train::train(mcfg, gcfg, tcfg, run_dir + "/checkpoints", resume_ptr, cfg_json);
        write_loss_trace(out.trace, run_dir, m);
        runio::add_artifact(m, run_dir + "/checkpoints/final.ickp");
        if (detect_transition) {
            const auto step = train::detect_phase_transition(out.trace.step_mse,
                                                             transition_threshold, transition_window);
            json j;
            j["threshold"] = transition_threshold;
            j["window"] = transition_window;
            j["step"] = step ? json(*step) : json(nullptr);
            const std::string path = run_dir + "/metrics/phase_transition.json";
            std::ofstream f(path);
            f << j.dump(2) << "\n";
            runio::add_artifact(m, path);
        }
        const double final_mse = out.trace.step_mse.empty() ? -1.0 : out.trace.step_mse.back();
        std::cout << "trained " << tcfg.steps << " steps; final train mse " << final_mse << "\n"
                  << "checkpoint: " << run_dir << "/checkpoints/final.ickp\n";
    });
}

int cmd_eval(const std::string& ckpt_path, const std::string& predictor, const GenFlags& gf,
             bool gen_overridden, const std::string& lengths_spec, int seqs,
             std::uint64_t eval_seed, double alpha, int resamples, int threads,
             const std::string& run_dir_flag, const std::string& argv_line) {
    const std::string run_dir = runio::make_run_dir("eval", argv_line, run_dir_flag);
    return run_with_manifest(argv_line, "", eval_seed, run_dir, [&](runio::RunManifest& m) {
        const std::vector<int> lengths = parse_lengths(lengths_spec);
        train::Checkpoint ckpt;
        gen::GenConfig gcfg;
        analysis::Predictor predict;
        if (!ckpt_path.empty()) {
            ckpt = train::load_checkpoint(ckpt_path);
            const json stored = json::parse(ckpt.config_json);
            gcfg = gen_overridden ? gf.resolve() : runio::gen_config_from_json(stored.at("gen").dump());
            predict = analysis::model_predictor(ckpt.state, ckpt.model_cfg);
        } else {
            gcfg = gf.resolve();
            if (predictor == "zero") {
                predict = analysis::zero_predictor();
            } else if (predictor == "ols") {
                predict = analysis::ols_predictor();
            } else if (predictor == "cheat") {
                predict = analysis::cheat_predictor();
            } else {
                throw ConfigError("eval: need --checkpoint or --predictor zero|ols|cheat");
            }
        }
        json pieces;
        pieces["gen"] = json::parse(runio::gen_config_to_json(gcfg));
        pieces["lengths"] = lengths;
        pieces["seqs"] = seqs;
        pieces["eval_seed"] = eval_seed;
        pieces["alpha"] = alpha;
        pieces["resamples"] = resamples;
        pieces["predictor"] = ckpt_path.empty() ? predictor : "checkpoint:" + ckpt_path;
        m.config_json = combined_config("eval", pieces);
        const analysis::EvalCurve curve =
            analysis::eval_curve(predict, gcfg, lengths, seqs, eval_seed, alpha, resamples, threads);
        analysis::write_curve_csv(curve, run_dir + "/metrics/eval_curve.csv");
        analysis::write_curve_json(curve, run_dir + "/metrics/eval_curve.json");
        runio::add_artifact(m, run_dir + "/metrics/eval_curve.csv");
        runio::add_artifact(m, run_dir + "/metrics/eval_curve.json");
        for (std::size_t i = 0; i < curve.lengths.size(); ++i) {
            std::printf("n=%3d  mse %.6g  [%.6g, %.6g]\n", curve.lengths[i], curve.mean_mse[i],
                        curve.ci_lo[i], curve.ci_hi[i]);
        }
    });
}

int cmd_probe(const std::string& ckpt_path, const std::string& target, int train_n, int eval_n,
              std::uint64_t probe_seed, bool pre_residual, bool permuted, int threads,
              const std::string& run_dir_flag, const std::string& argv_line) {
    json pieces;
    pieces["checkpoint"] = ckpt_path;
    pieces["target"] = target;
    pieces["train_n"] = train_n;
    pieces["eval_n"] = eval_n;
    pieces["probe_seed"] = probe_seed;
    pieces["pre_residual"] = pre_residual;
    pieces["permuted"] = permuted;
    const std::string cfg_json = combined_config("probe", pieces);
    const std::string run_dir = runio::make_run_dir("probe", cfg_json, run_dir_flag);
    return run_with_manifest(argv_line, cfg_json, probe_seed, run_dir, [&](runio::RunManifest& m) {
        const train::Checkpoint ckpt = train::load_checkpoint(ckpt_path);
        if (ckpt.model_cfg.type != model::ModelConfig::Type::kTransformer) {
            throw ConfigError("probe: checkpoint does not hold a transformer");
        }
        const gen::GenConfig gcfg =
            runio::gen_config_from_json(json::parse(ckpt.config_json).at("gen").dump());
        analysis::ProbeOptions options;
        options.use_pre_residual = pre_residual;
        options.permute_targets = permuted;
        options.threads = threads;
        const analysis::ProbeResult probe = analysis::probe_layers(
            ckpt.state, ckpt.model_cfg.transformer, gcfg,
            target == "beta" ? analysis::ProbeTarget::kBeta : analysis::ProbeTarget::kTheta,
            train_n, eval_n, probe_seed, options);
        analysis::write_probe_csv(probe, run_dir + "/metrics/probe.csv");
        analysis::write_probe_json(probe, run_dir + "/metrics/probe.json");
        runio::add_artifact(m, run_dir + "/metrics/probe.csv");
        runio::add_artifact(m, run_dir + "/metrics/probe.json");
        for (std::size_t i = 0; i < probe.layers.size(); ++i) {
            std::printf("layer %2d  adj R2 %.4f  (diff %.4f)\n", probe.layers[i],
                        probe.adj_r2_after[i], probe.adj_r2_diff[i]);
        }
    });
}

int cmd_attn(const std::string& ckpt_path, const std::string& z_spec, int batches,
             int seqs_per_batch, int pairs, double threshold, std::uint64_t seed, int threads,
             const std::string& run_dir_flag, const std::string& argv_line) {
    json pieces;
    pieces["checkpoint"] = ckpt_path;
    pieces["z"] = z_spec;
    pieces["batches"] = batches;
    pieces["seqs_per_batch"] = seqs_per_batch;
    pieces["pairs"] = pairs;
    pieces["threshold"] = threshold;
    pieces["seed"] = seed;
    const std::string cfg_json = combined_config("attn", pieces);
    const std::string run_dir = runio::make_run_dir("attn", cfg_json, run_dir_flag);
    return run_with_manifest(argv_line, cfg_json, seed, run_dir, [&](runio::RunManifest& m) {
        const train::Checkpoint ckpt = train::load_checkpoint(ckpt_path);
        if (ckpt.model_cfg.type != model::ModelConfig::Type::kTransformer) {
            throw ConfigError("attn: checkpoint does not hold a transformer");
        }
        const gen::GenConfig gcfg =
            runio::gen_config_from_json(json::parse(ckpt.config_json).at("gen").dump());
        const std::vector<int> z_values = parse_int_list(z_spec);
        const analysis::AttnSummary summary = analysis::detect_abduction_heads(
            ckpt.state, ckpt.model_cfg.transformer, gcfg, z_values, batches, seqs_per_batch, pairs,
            threshold, seed, threads);
        analysis::write_attn_csv(summary, run_dir + "/metrics/attention.csv");
        analysis::write_attn_json(summary, run_dir + "/metrics/attention.json");
        runio::add_artifact(m, run_dir + "/metrics/attention.csv");
        runio::add_artifact(m, run_dir + "/metrics/attention.json");
        const int show = static_cast<int>(std::min<std::size_t>(5, summary.ranking.size()));
        for (int i = 0; i < show; ++i) {
            const auto [l, h] = summary.ranking[static_cast<std::size_t>(i)];
            const std::size_t k = static_cast<std::size_t>(l) * summary.heads + h;
            std::printf("layer %d head %d: y_z mass %.4f (min over z %.4f)\n", l, h,
                        summary.y_mass[k], summary.min_y_mass_over_z[k]);
        }
        std::printf("qualifying heads: %zu\n", summary.qualified.size());
    });
}

int cmd_diversity(const ModelFlags& mf, const GenFlags& gf, const TrainFlags& tf,
                  const std::string& pools_spec, const std::string& train_dists,
                  const std::string& eval_dists, int eval_length, int eval_seqs,
                  std::uint64_t eval_seed, const std::string& run_dir_flag,
                  const std::string& argv_line) {
    const std::string run_dir = runio::make_run_dir("diversity", argv_line, run_dir_flag);
    return run_with_manifest(argv_line, "", 0, run_dir, [&](runio::RunManifest& m) {
        const gen::GenConfig gcfg = gf.resolve();
        const model::ModelConfig mcfg = mf.resolve(gcfg.embed_dim);
        const train::TrainConfig tcfg = tf.resolve();
        const std::vector<int> pools = parse_int_list(pools_spec);
        json pieces;
        pieces["model"] = json::parse(runio::model_config_to_json(mcfg));
        pieces["gen"] = json::parse(runio::gen_config_to_json(gcfg));
        pieces["train"] = json::parse(runio::train_config_to_json(tcfg));
        pieces["pools"] = pools;
        pieces["train_dists"] = train_dists;
        pieces["eval_dists"] = eval_dists;
        pieces["eval_length"] = eval_length;
        pieces["eval_seqs"] = eval_seqs;
        m.config_json = combined_config("diversity", pieces);
        m.seed = tcfg.seed;
        const auto rows =
            analysis::diversity_sweep(pools, parse_dists(train_dists), parse_dists(eval_dists),
                                      mcfg, gcfg, tcfg, eval_length, eval_seqs, eval_seed);
        analysis::write_diversity_csv(rows, run_dir + "/metrics/diversity.csv");
        analysis::write_diversity_json(rows, run_dir + "/metrics/diversity.json");
        runio::add_artifact(m, run_dir + "/metrics/diversity.csv");
        runio::add_artifact(m, run_dir + "/metrics/diversity.json");
        for (const auto& r : rows) {
            std::printf("pool %3d (%s -> eval %s): Ess %.2f  mse %.4g [%.4g, %.4g]\n", r.pool,
                        r.train_dist.c_str(), r.eval_dist.c_str(), r.ess, r.mse, r.ci_lo, r.ci_hi);
        }
    });
}

int cmd_report(bool as_json) {
    const std::vector<std::pair<std::string, std::string>> table = {
        {"fig2 (architecture comparison)",
         "iccr train --model gpt2|lstm|gru|elman ... && iccr eval --checkpoint <ckpt> --lengths "
         "2..50 --seqs 6400"},
        {"fig3a (attention ablation)",
         "iccr train --variant attention_only|mlp_only|full && iccr eval --checkpoint <ckpt> "
         "--lengths 2..50"},
        {"fig3b (depth sweep)",
         "iccr train --layers L --heads 8/L for (L,H) in (1,8),(2,4),(4,2),(8,1); iccr eval "
         "--lengths 35"},
        {"fig4a (diversity vs Ess)",
         "iccr diversity --pools 1,4,16,64,256 --train-dists uniform,normal --eval-dists uniform"},
        {"fig4b/fig6b (phase transitions)",
         "iccr train --fixed-z 14 --n-min 15 --detect-transition --transition-threshold 0.6132"},
        {"fig5 (linear probes)",
         "iccr probe --checkpoint <ckpt> --target theta --train-n 6400 --eval-n 1280"},
        {"fig7 (noise abduction heads)",
         "iccr attn --checkpoint <ckpt> --z 8,15,34,42 --pairs 50"},
        {"fig8-style (SDE counterfactuals)",
         "iccr train --task sde --sde-events 20 (eval via --eval-every snapshots)"},
        {"table2 (function classes)",
         "iccr train --kind tanh|sigmoid|multiplicative && iccr eval --lengths 35 --seqs 6400"},
    };
    if (as_json) {
        json j = json::array();
        for (const auto& [fig, cmd] : table) j.push_back({{"figure", fig}, {"command", cmd}});
        std::cout << j.dump(2) << "\n";
    } else {
        for (const auto& [fig, cmd] : table) std::printf("%-36s %s\n", fig.c_str(), cmd.c_str());
    }
    return 0;
}

int cmd_selftest() {
    int failures = 0;
    auto report = [&](const char* name, bool ok) {
        std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name);
        if (!ok) ++failures;
    };

    {  // gradient checks on the primitives
        rng::Stream s(5, 0, 1);
        ad::Tensor a = ad::Tensor::uninitialized(5, 7);
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = s.gauss(0.0, 1.0);
        ad::Tensor b = ad::Tensor::uninitialized(7, 4);
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = s.gauss(0.0, 1.0);
        const double err = ad::grad_check(
            [&](ad::Tape& t, ad::VarId x) { return t.sum(t.gelu(t.matmul(x, t.leaf(b, false)))); },
            a, 1e-4);
        report("gradient check: matmul+gelu", err < 1e-4);
    }
    {  // full small transformer gradient on one parameter tensor
        model::TransformerConfig cfg;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.hidden = 8;
        cfg.embed_dim = 1;
        cfg.max_context = 6;
        cfg.init_seed = 9;
        model::ModelState state = model::init_model(cfg);
        rng::Stream s(3, 0, 1);
        ad::Tensor tokens(6, 1);
        for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = s.gauss(0.0, 2.0);
        ad::Tape tape;
        const model::ForwardHandle h = model::gpt2_forward_tape(tape, state, tokens, cfg);
        ad::Tensor target(1, 1);
        const ad::VarId loss = tape.scaled_sq_error(tape.gather_rows(h.predictions, {5}), target, 1.0);
        tape.backward(loss);
        const std::size_t pi = 2;
        const ad::Tensor& analytic = tape.grad(h.param_vars[pi]);
        auto loss_of = [&](const model::ModelState& st) {
            const ad::Tensor p = model::gpt2_forward(st, tokens, cfg);
            return p.at(5, 0) * p.at(5, 0);
        };
        double worst = 0.0;
        model::ModelState probe = state;
        for (std::size_t i = 0; i < probe.params[pi].second.size(); ++i) {
            const double orig = probe.params[pi].second[i];
            probe.params[pi].second[i] = orig + 1e-4;
            const double up = loss_of(probe);
            probe.params[pi].second[i] = orig - 1e-4;
            const double down = loss_of(probe);
            probe.params[pi].second[i] = orig;
            const double fd = (up - down) / 2e-4;
            worst = std::max(worst, std::abs(analytic[i] - fd) /
                                        (std::abs(analytic[i]) + std::abs(fd) + 1e-12));
        }
        report("gradient check: transformer slice", worst < 1e-4);
    }
    {  // oracle equivalences
        bool ok = true;
        rng::Stream s(7, 0, 1);
        scm::NoiseModel lin;
        lin.kind = scm::NoiseKind::kLinearAdditive;
        scm::NoiseModel mult;
        mult.kind = scm::NoiseKind::kMultiplicative;
        for (int i = 0; i < 2000 && ok; ++i) {
            const double theta = s.uniform(-6.0, 6.0);
            const double beta = s.gauss(theta, 1.0);
            const double x = s.gauss(theta, 1.0);
            const double u = s.gauss(theta, 1.0);
            const double x_cf = s.uniform(-6.0, 6.0);
            const double y = beta * x + u;
            const double lemma = scm::counterfactual(lin, scm::mechanism_fx(lin, {beta}, {x_cf}),
                                                     scm::mechanism_fx(lin, {beta}, {x}), {y})[0];
            const double direct = scm::linear_cf({beta}, {x}, {y}, {x_cf})[0];
            ok = ok && std::abs(lemma - direct) <= 1e-12 * (1.0 + std::abs(direct));
            if (std::abs(x) > 1e-3 && std::abs(beta) > 1e-3) {
                const auto [xs, ys] = scm::apply_link(mult, {beta}, {x}, {u});
                const double cf = scm::counterfactual(mult, scm::mechanism_fx(mult, {beta}, {x_cf}),
                                                      scm::mechanism_fx(mult, {beta}, {x}), {ys[0]})[0];
                ok = ok && std::abs(cf - x_cf / x * ys[0]) <= 1e-12 * (1.0 + std::abs(cf));
            }
        }
        report("oracle equivalence: lemma vs closed form", ok);
    }
    {  // shared-noise SDE identity
        sde::SDEConfig cfg;
        cfg.seed = 12;
        const sde::PathPair pair = sde::generate_pair(cfg, 0);
        bool ok = true;
        const double dt = cfg.dt();
        double gap = pair.init_cf_y[0] - pair.init_y[0];
        for (int k = 0; k < cfg.grid_steps && ok; ++k) {
            const double want = pair.cf_y.at(k, 0) - pair.fact_y.at(k, 0);
            ok = std::abs(want - gap) <= 1e-12 * (1.0 + std::abs(want));
            const auto f = sde::lv_drift(pair.fact_x.at(k, 0), pair.fact_y.at(k, 0),
                                         pair.params.alpha[0], pair.params.beta[0],
                                         pair.params.gamma[0], pair.params.delta[0]);
            const auto g = sde::lv_drift(pair.cf_x.at(k, 0), pair.cf_y.at(k, 0), pair.params.alpha[0],
                                         pair.params.beta[0], pair.params.gamma[0],
                                         pair.params.delta[0]);
            gap += (g.second - f.second) * dt;
        }
        report("sde: discrete transformation identity", ok);
    }
    std::printf("%s\n", failures == 0 ? "selftest ok" : "selftest FAILED");
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    std::string argv_line;
    for (int i = 0; i < argc; ++i) {
        if (i) argv_line += " ";
        argv_line += argv[i];
    }

    CLI::App app{"in-context counterfactual reasoning workbench"};
    app.require_subcommand(1);

    std::string run_dir_flag;

    // gen-data ---------------------------------------------------------------
    auto* gen_cmd = app.add_subcommand("gen-data", "write a prompt dataset (JSON lines)");
    GenFlags gen_gf;
    gen_gf.attach(gen_cmd);
    std::uint64_t gen_count = 6400;
    gen_cmd->add_option("--count", gen_count, "number of records");
    std::uint64_t gen_seed_alias = 0;
    gen_cmd->add_option("--seed", gen_seed_alias, "alias for --data-seed");

    // sde-sim ----------------------------------------------------------------
    auto* sde_cmd = app.add_subcommand("sde-sim", "simulate counterfactual Lotka-Volterra pairs");
    sde::SDEConfig sde_cfg;
    std::uint64_t sde_count = 100;
    int sde_times_pool = 0;
    std::string sde_cf_init = "uniform";
    sde_cmd->add_option("--count", sde_count, "number of trajectory pairs");
    sde_cmd->add_option("--e", sde_cfg.embed_dim, "stacked independent systems");
    sde_cmd->add_option("--sigma-x", sde_cfg.sigma_x, "diffusion for x");
    sde_cmd->add_option("--sigma-y", sde_cfg.sigma_y, "diffusion for y");
    sde_cmd->add_option("--t-horizon", sde_cfg.t_horizon, "bound-derivation horizon T");
    sde_cmd->add_option("--grid-steps", sde_cfg.grid_steps, "Euler grid steps");
    sde_cmd->add_option("--n-events", sde_cfg.n_events, "event times per trajectory");
    sde_cmd->add_option("--event-lo", sde_cfg.event_lo, "event window start");
    sde_cmd->add_option("--event-hi", sde_cfg.event_hi, "event window end");
    sde_cmd->add_flag("--equidistant", sde_cfg.equidistant, "equidistant t_0 = 0 variant");
    sde_cmd->add_option("--cf-init", sde_cf_init, "counterfactual start law: uniform|beta");
    sde_cmd->add_option("--times-pool", sde_times_pool, "curriculum pool of event-time draws");
    sde_cmd->add_option("--seed", sde_cfg.seed, "generator seed");

    // train ------------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "stream batches and optimize a model");
    ModelFlags train_mf;
    GenFlags train_gf;
    TrainFlags train_tf;
    train_mf.attach(train_cmd);
    train_gf.attach(train_cmd);
    train_tf.attach(train_cmd);
    SdeTrainFlags train_sf;
    train_sf.attach(train_cmd);
    std::string resume_path;
    bool print_config = false;
    bool detect_transition = false;
    double transition_threshold = 0.6132;  // upper edge of the reported optimal-MSE band
    int transition_window = 100;
    train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
    train_cmd->add_flag("--print-config", print_config, "print the resolved config and exit");
    train_cmd->add_flag("--detect-transition", detect_transition,
                        "locate the phase transition in the loss trace");
    train_cmd->add_option("--transition-threshold", transition_threshold,
                          "loss level defining emergence");
    train_cmd->add_option("--transition-window", transition_window, "smoothing window");

    // eval -------------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "in-context MSE curve with bootstrap CIs");
    GenFlags eval_gf;
    eval_gf.attach(eval_cmd);
    std::string eval_ckpt, eval_predictor, eval_lengths = "2..50";
    int eval_seqs = 6400, eval_resamples = 2000, eval_threads = 0;
    std::uint64_t eval_seed = 7771;
    double eval_alpha = 0.05;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "trained checkpoint to evaluate");
    eval_cmd->add_option("--predictor", eval_predictor, "closed-form baseline: zero|ols|cheat");
    eval_cmd->add_option("--lengths", eval_lengths, "context lengths, e.g. 2..50 or 5,35");
    eval_cmd->add_option("--seqs", eval_seqs, "sequences per length");
    eval_cmd->add_option("--eval-seed", eval_seed, "evaluation stream seed");
    eval_cmd->add_option("--alpha", eval_alpha, "bootstrap CI level");
    eval_cmd->add_option("--resamples", eval_resamples, "bootstrap resamples");
    eval_cmd->add_option("--threads", eval_threads, "worker threads");

    // probe ------------------------------------------------------------------
    auto* probe_cmd = app.add_subcommand("probe", "linear probes on the residual stream");
    std::string probe_ckpt, probe_target = "theta";
    int probe_train_n = 6400, probe_eval_n = 1280, probe_threads = 0;
    std::uint64_t probe_seed = 99;
    bool probe_pre = false, probe_perm = false;
    probe_cmd->add_option("--checkpoint", probe_ckpt, "trained checkpoint")->required();
    probe_cmd->add_option("--target", probe_target, "theta|beta");
    probe_cmd->add_option("--train-n", probe_train_n, "probe training prompts");
    probe_cmd->add_option("--eval-n", probe_eval_n, "held-out prompts");
    probe_cmd->add_option("--probe-seed", probe_seed, "prompt stream seed");
    probe_cmd->add_flag("--pre-residual", probe_pre, "probe R_l instead of X_l");
    probe_cmd->add_flag("--permuted", probe_perm, "permute targets (control)");
    probe_cmd->add_option("--threads", probe_threads, "worker threads");

    // attn -------------------------------------------------------------------
    auto* attn_cmd = app.add_subcommand("attn", "noise-abduction head detection");
    std::string attn_ckpt, attn_z = "8,15,34,42";
    int attn_batches = 2, attn_seqs = 64, attn_pairs = 50, attn_threads = 0;
    double attn_threshold = 0.5;
    std::uint64_t attn_seed = 17;
    attn_cmd->add_option("--checkpoint", attn_ckpt, "trained checkpoint")->required();
    attn_cmd->add_option("--z", attn_z, "anchor indices to sweep");
    attn_cmd->add_option("--batches", attn_batches, "batches per z value");
    attn_cmd->add_option("--seqs-per-batch", attn_seqs, "sequences per batch");
    attn_cmd->add_option("--pairs", attn_pairs, "in-context pairs per prompt");
    attn_cmd->add_option("--threshold", attn_threshold, "qualification threshold on y_z mass");
    attn_cmd->add_option("--seed", attn_seed, "prompt stream seed");
    attn_cmd->add_option("--threads", attn_threads, "worker threads");

    // diversity ----------------------------------------------------------------
    auto* div_cmd = app.add_subcommand("diversity", "train across latent pool sizes");
    ModelFlags div_mf;
    GenFlags div_gf;
    TrainFlags div_tf;
    div_mf.attach(div_cmd);
    div_gf.attach(div_cmd);
    div_tf.attach(div_cmd);
    std::string div_pools = "1,4,16,64", div_train_dists = "uniform", div_eval_dists = "uniform";
    int div_eval_length = 35, div_eval_seqs = 1600;
    std::uint64_t div_eval_seed = 3331;
    div_cmd->add_option("--pools", div_pools, "pool sizes to sweep");
    div_cmd->add_option("--train-dists", div_train_dists, "training theta distributions");
    div_cmd->add_option("--eval-dists", div_eval_dists, "evaluation theta distributions");
    div_cmd->add_option("--eval-length", div_eval_length, "context length for evaluation");
    div_cmd->add_option("--eval-seqs", div_eval_seqs, "sequences per evaluation");
    div_cmd->add_option("--eval-seed", div_eval_seed, "evaluation stream seed");

    // report / selftest --------------------------------------------------------
    auto* report_cmd = app.add_subcommand("report", "map paper figures to commands");
    bool report_json = false;
    report_cmd->add_flag("--json", report_json, "emit the table as JSON");

    app.add_subcommand("selftest", "gradient checks and oracle equivalences");

    // one config file for the whole app: keys live in a [subcommand] section
    // (or use dotted names like train.lr); flags always win, typos are errors
    app.set_config("--config", "", "key-value config file; flags take precedence");
    app.allow_config_extras(CLI::config_extras_mode::error);
    for (CLI::App* sub : app.get_subcommands({})) {
        sub->fallthrough();
        sub->add_option("--run-dir", run_dir_flag,
                        "explicit run directory (default runs/<stamp>-<digest>)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (gen_cmd->parsed()) {
            if (gen_cmd->count("--seed") && !gen_cmd->count("--data-seed")) {
                gen_gf.cfg.seed = gen_seed_alias;
            }
            return cmd_gen_data(gen_gf, gen_count, run_dir_flag, argv_line);
        }
        if (sde_cmd->parsed()) {
            if (sde_times_pool > 0) sde_cfg.times_pool = sde_times_pool;
            sde_cfg.cf_init = sde_cf_init == "beta" ? sde::CfInitLaw::kBeta : sde::CfInitLaw::kUniform;
            return cmd_sde_sim(sde_cfg, sde_count, run_dir_flag, argv_line);
        }
        if (train_cmd->parsed()) {
            return cmd_train(train_mf, train_gf, train_tf, train_sf,
                             train_cmd->count("--batch") > 0, resume_path, print_config,
                             detect_transition, transition_threshold, transition_window,
                             run_dir_flag, argv_line);
        }
        if (eval_cmd->parsed()) {
            const bool gen_overridden = eval_cmd->count("--e") || eval_cmd->count("--n-min") ||
                                        eval_cmd->count("--n-max") || eval_cmd->count("--theta-dist") ||
                                        eval_cmd->count("--kind") || eval_cmd->count("--fixed-z") ||
                                        eval_cmd->count("--task") || eval_cmd->count("--data-seed");
            return cmd_eval(eval_ckpt, eval_predictor, eval_gf, gen_overridden, eval_lengths,
                            eval_seqs, eval_seed, eval_alpha, eval_resamples, eval_threads,
                            run_dir_flag, argv_line);
        }
        if (probe_cmd->parsed()) {
            return cmd_probe(probe_ckpt, probe_target, probe_train_n, probe_eval_n, probe_seed,
                             probe_pre, probe_perm, probe_threads, run_dir_flag, argv_line);
        }
        if (attn_cmd->parsed()) {
            return cmd_attn(attn_ckpt, attn_z, attn_batches, attn_seqs, attn_pairs, attn_threshold,
                            attn_seed, attn_threads, run_dir_flag, argv_line);
        }
        if (div_cmd->parsed()) {
            return cmd_diversity(div_mf, div_gf, div_tf, div_pools, div_train_dists, div_eval_dists,
                                 div_eval_length, div_eval_seqs, div_eval_seed, run_dir_flag,
                                 argv_line);
        }
        if (report_cmd->parsed()) return cmd_report(report_json);
        if (app.get_subcommand("selftest")->parsed()) return cmd_selftest();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
