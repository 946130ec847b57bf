#include "iccr/runio.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "iccr/errors.hpp"
#include "iccr/sde.hpp"
#include "iccr/training.hpp"

namespace iccr::runio {

using json = nlohmann::json;

std::uint64_t fnv1a64(const std::string& data) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("fnv1a64_file: cannot open " + path);
    std::uint64_t h = 0xCBF29CE484222325ull;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001B3ull;
        }
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::string gen_config_to_json(const gen::GenConfig& cfg) {
    json j;
    j["e"] = cfg.embed_dim;
    j["n_min"] = cfg.n_min;
    j["n_max"] = cfg.n_max;
    j["theta_dist"] = gen::theta_dist_name(cfg.theta_dist);
    j["diversity"] = cfg.diversity ? json(*cfg.diversity) : json(nullptr);
    j["kind"] = scm::noise_kind_name(cfg.noise.kind);
    j["tau"] = cfg.noise.tau;
    j["normalizer"] = cfg.noise.normalizer;
    j["task"] = gen::task_name(cfg.task);
    j["fixed_z"] = cfg.fixed_z ? json(*cfg.fixed_z) : json(nullptr);
    j["seed"] = cfg.seed;
    return j.dump();
}

gen::GenConfig gen_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    gen::GenConfig cfg;
    cfg.embed_dim = j.at("e").get<int>();
    cfg.n_min = j.at("n_min").get<int>();
    cfg.n_max = j.at("n_max").get<int>();
    cfg.theta_dist = gen::theta_dist_from_name(j.at("theta_dist").get<std::string>());
    if (!j.at("diversity").is_null()) cfg.diversity = j.at("diversity").get<int>();
    cfg.noise.kind = scm::noise_kind_from_name(j.at("kind").get<std::string>());
    cfg.noise.tau = j.at("tau").get<double>();
    cfg.noise.normalizer = j.at("normalizer").get<double>();
    cfg.task = gen::task_from_name(j.at("task").get<std::string>());
    if (!j.at("fixed_z").is_null()) cfg.fixed_z = j.at("fixed_z").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

std::string model_config_to_json(const model::ModelConfig& cfg) {
    json j;
    if (cfg.type == model::ModelConfig::Type::kTransformer) {
        j["type"] = "gpt2";
        j["layers"] = cfg.transformer.layers;
        j["heads"] = cfg.transformer.heads;
        j["hidden"] = cfg.transformer.hidden;
        j["e"] = cfg.transformer.embed_dim;
        j["max_context"] = cfg.transformer.max_context;
        j["variant"] = model::variant_name(cfg.transformer.variant);
        j["layer_norm"] = cfg.transformer.use_layer_norm;
        j["paper_literal_attention"] = cfg.transformer.paper_literal_attention;
        j["paper_head_dim"] = cfg.transformer.paper_head_dim;
        j["init_seed"] = cfg.transformer.init_seed;
    } else {
        j["type"] = "rnn";
        j["kind"] = model::rnn_kind_name(cfg.rnn.kind);
        j["layers"] = cfg.rnn.layers;
        j["hidden"] = cfg.rnn.hidden;
        j["e"] = cfg.rnn.embed_dim;
        j["init_seed"] = cfg.rnn.init_seed;
    }
    return j.dump();
}

model::ModelConfig model_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    model::ModelConfig cfg;
    if (j.at("type").get<std::string>() == "gpt2") {
        cfg.type = model::ModelConfig::Type::kTransformer;
        cfg.transformer.layers = j.at("layers").get<int>();
        cfg.transformer.heads = j.at("heads").get<int>();
        cfg.transformer.hidden = j.at("hidden").get<int>();
        cfg.transformer.embed_dim = j.at("e").get<int>();
        cfg.transformer.max_context = j.at("max_context").get<int>();
        cfg.transformer.variant = model::variant_from_name(j.at("variant").get<std::string>());
        cfg.transformer.use_layer_norm = j.at("layer_norm").get<bool>();
        cfg.transformer.paper_literal_attention = j.at("paper_literal_attention").get<bool>();
        cfg.transformer.paper_head_dim = j.at("paper_head_dim").get<bool>();
        cfg.transformer.init_seed = j.at("init_seed").get<std::uint64_t>();
    } else {
        cfg.type = model::ModelConfig::Type::kRnn;
        cfg.rnn.kind = model::rnn_kind_from_name(j.at("kind").get<std::string>());
        cfg.rnn.layers = j.at("layers").get<int>();
        cfg.rnn.hidden = j.at("hidden").get<int>();
        cfg.rnn.embed_dim = j.at("e").get<int>();
        cfg.rnn.init_seed = j.at("init_seed").get<std::uint64_t>();
    }
    return cfg;
}

std::string train_config_to_json(const train::TrainConfig& cfg) {
    json j;
    j["steps"] = cfg.steps;
    j["batch"] = cfg.batch;
    j["lr"] = cfg.lr;
    j["beta1"] = cfg.beta1;
    j["beta2"] = cfg.beta2;
    j["eps"] = cfg.eps;
    j["weight_decay"] = cfg.weight_decay;
    j["eval_every"] = cfg.eval_every;
    j["eval_sequences"] = cfg.eval_sequences;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["mask"] = cfg.mask == train::LossMaskKind::kFinalToken ? "final_token" : "completion_mask";
    j["seed"] = cfg.seed;
    j["deterministic"] = cfg.deterministic;
    j["shared_z_in_batch"] = cfg.shared_z_in_batch;
    j["clip_norm"] = cfg.clip_norm;
    j["threads"] = cfg.threads;
    return j.dump();
}

train::TrainConfig train_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    train::TrainConfig cfg;
    cfg.steps = j.at("steps").get<int>();
    cfg.batch = j.at("batch").get<int>();
    cfg.lr = j.at("lr").get<double>();
    cfg.beta1 = j.at("beta1").get<double>();
    cfg.beta2 = j.at("beta2").get<double>();
    cfg.eps = j.at("eps").get<double>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.eval_every = j.at("eval_every").get<int>();
    cfg.eval_sequences = j.at("eval_sequences").get<int>();
    cfg.checkpoint_every = j.at("checkpoint_every").get<int>();
    cfg.mask = j.at("mask").get<std::string>() == "final_token" ? train::LossMaskKind::kFinalToken
                                                                : train::LossMaskKind::kCompletionMask;
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.deterministic = j.at("deterministic").get<bool>();
    cfg.shared_z_in_batch = j.at("shared_z_in_batch").get<bool>();
    cfg.clip_norm = j.at("clip_norm").get<double>();
    cfg.threads = j.at("threads").get<int>();
    return cfg;
}

std::string sde_config_to_json(const sde::SDEConfig& cfg) {
    json j;
    j["e"] = cfg.embed_dim;
    j["sigma_x"] = cfg.sigma_x;
    j["sigma_y"] = cfg.sigma_y;
    j["t_horizon"] = cfg.t_horizon;
    j["grid_steps"] = cfg.grid_steps;
    j["n_events"] = cfg.n_events;
    j["event_lo"] = cfg.event_lo;
    j["event_hi"] = cfg.event_hi;
    j["equidistant"] = cfg.equidistant;
    j["cf_init"] = cfg.cf_init == sde::CfInitLaw::kUniform ? "uniform" : "beta";
    j["delimiter"] = cfg.delimiter_value;
    j["times_pool"] = cfg.times_pool ? json(*cfg.times_pool) : json(nullptr);
    j["seed"] = cfg.seed;
    return j.dump();
}

std::string runs_root() {
    if (const char* env = std::getenv("ICCR_RUNS_DIR")) return env;
    return "runs";
}

std::string make_run_dir(const std::string& command, const std::string& config_json,
                         const std::string& explicit_dir) {
    std::string dir = explicit_dir;
    if (dir.empty()) {
        const auto now = std::chrono::system_clock::now().time_since_epoch();
        const auto stamp = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
        dir = runs_root() + "/" + std::to_string(stamp) + "-" +
              hex64(fnv1a64(command + config_json)).substr(0, 8);
    }
    std::filesystem::create_directories(dir + "/metrics");
    return dir;
}

void add_artifact(RunManifest& manifest, const std::string& path) {
    manifest.artifacts.emplace_back(path, hex64(fnv1a64_file(path)));
}

void write_manifest(const RunManifest& manifest, const std::string& run_dir) {
    json j;
    j["command"] = manifest.command;
    j["config"] = manifest.config_json.empty() ? json(nullptr) : json::parse(manifest.config_json);
    j["seed"] = manifest.seed;
    json arts = json::array();
    for (const auto& [path, digest] : manifest.artifacts) {
        arts.push_back({{"path", path}, {"digest", digest}});
    }
    j["artifacts"] = std::move(arts);
    j["wall_clock_s"] = manifest.wall_clock_s;
    j["ok"] = manifest.ok;
    if (!manifest.error.empty()) j["error"] = manifest.error;
    std::ofstream out(run_dir + "/manifest.json");
    if (!out) throw ConfigError("write_manifest: cannot open " + run_dir + "/manifest.json");
    out << j.dump(2) << "\n";
}

}  // namespace iccr::runio
