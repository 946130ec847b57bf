#include "iccr/datagen.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "iccr/errors.hpp"

namespace iccr::gen {

using json = nlohmann::json;

const char* theta_dist_name(ThetaDist d) {
    return d == ThetaDist::kUniform ? "uniform" : "normal";
}

ThetaDist theta_dist_from_name(const std::string& name) {
    if (name == "uniform") return ThetaDist::kUniform;
    if (name == "normal") return ThetaDist::kNormal;
    throw ConfigError("unknown theta distribution: " + name);
}

const char* task_name(Task t) {
    return t == Task::kCounterfactual ? "counterfactual" : "continuation";
}

Task task_from_name(const std::string& name) {
    if (name == "counterfactual") return Task::kCounterfactual;
    if (name == "continuation") return Task::kContinuation;
    throw ConfigError("unknown task: " + name);
}

void GenConfig::validate() const {
    if (embed_dim < 1) throw ConfigError("gen config: embed_dim must be >= 1");
    if (n_min < 2 || n_max < n_min) throw ConfigError("gen config: need 2 <= n_min <= n_max");
    if (diversity && *diversity < 1) throw ConfigError("gen config: diversity must be >= 1");
    if (fixed_z) {
        if (*fixed_z < 1) throw ConfigError("gen config: fixed_z must be >= 1");
        if (n_min < *fixed_z) {
            throw ConfigError("gen config: n_min must be >= fixed_z so the anchor exists");
        }
    }
    noise.validate();
}

namespace {

constexpr double kThetaLo = -6.0;
constexpr double kThetaHi = 6.0;

double draw_theta_component(ThetaDist dist, rng::Stream& s) {
    if (dist == ThetaDist::kUniform) return s.uniform(kThetaLo, kThetaHi);
    return s.gauss(0.0, std::sqrt(12.0));
}

double normal_density(double v, double variance) {
    return std::exp(-0.5 * v * v / variance) / std::sqrt(2.0 * M_PI * variance);
}

}  // namespace

std::vector<double> PromptRecord::x_anchor() const {
    std::vector<double> out(static_cast<std::size_t>(tokens.cols()));
    const int row = 2 * (z - 1);
    for (int e = 0; e < tokens.cols(); ++e) out[static_cast<std::size_t>(e)] = tokens.at(row, e);
    return out;
}

std::vector<double> PromptRecord::y_anchor() const {
    std::vector<double> out(static_cast<std::size_t>(tokens.cols()));
    const int row = 2 * z - 1;
    for (int e = 0; e < tokens.cols(); ++e) out[static_cast<std::size_t>(e)] = tokens.at(row, e);
    return out;
}

ThetaPool make_pool(const GenConfig& cfg) {
    cfg.validate();
    if (!cfg.diversity) throw ConfigError("make_pool: diversity is not set");
    const int d = *cfg.diversity;
    ThetaPool pool;
    pool.values.resize(static_cast<std::size_t>(d));
    pool.weights.resize(static_cast<std::size_t>(d));
    rng::Stream s(cfg.seed, 0, rng::kPool);
    for (int i = 0; i < d; ++i) pool.values[static_cast<std::size_t>(i)] = draw_theta_component(cfg.theta_dist, s);
    if (cfg.theta_dist == ThetaDist::kUniform) {
        for (double& w : pool.weights) w = 1.0 / d;
    } else {
        double total = 0.0;
        for (int i = 0; i < d; ++i) {
            pool.weights[static_cast<std::size_t>(i)] = normal_density(pool.values[static_cast<std::size_t>(i)], 12.0);
            total += pool.weights[static_cast<std::size_t>(i)];
        }
        for (double& w : pool.weights) w /= total;
    }
    pool.cumulative.resize(pool.weights.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pool.weights.size(); ++i) {
        acc += pool.weights[i];
        pool.cumulative[i] = acc;
    }
    return pool;
}

double ess(const std::vector<double>& weights) {
    double h = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw ConfigError("ess: negative weight");
        if (w > 0.0) h -= w * std::log(w);
    }
    return std::exp(h);
}

PromptRecord sample_sequence(const GenConfig& cfg, std::uint64_t index) {
    return sample_sequence(cfg, index, std::nullopt, std::nullopt);
}

PromptRecord sample_sequence(const GenConfig& cfg, std::uint64_t index, std::optional<int> n_override,
                             std::optional<int> z_override) {
    cfg.validate();
    const int e_dim = cfg.embed_dim;

    PromptRecord rec;
    if (n_override) {
        rec.n = *n_override;
    } else {
        rng::Stream s(cfg.seed, index, rng::kCount);
        rec.n = static_cast<int>(s.uniform_int(cfg.n_min, cfg.n_max));
    }
    if (rec.n < 1) throw ConfigError("sample_sequence: n must be >= 1");

    if (cfg.task == Task::kCounterfactual) {
        if (z_override) {
            rec.z = *z_override;
        } else if (cfg.fixed_z) {
            rec.z = *cfg.fixed_z;
        } else {
            rng::Stream s(cfg.seed, index, rng::kAnchor);
            rec.z = static_cast<int>(s.uniform_int(1, rec.n));
        }
        if (rec.z < 1 || rec.z > rec.n) {
            throw ConfigError("sample_sequence: anchor z=" + std::to_string(rec.z) +
                              " outside 1.." + std::to_string(rec.n));
        }
    }

    rec.theta.resize(static_cast<std::size_t>(e_dim));
    {
        rng::Stream s(cfg.seed, index, rng::kTheta);
        if (cfg.diversity) {
            const ThetaPool pool = make_pool(cfg);
            for (int e = 0; e < e_dim; ++e) {
                const std::size_t i = s.pick(pool.cumulative.data(), pool.cumulative.size());
                rec.theta[static_cast<std::size_t>(e)] = pool.values[i];
            }
        } else {
            for (int e = 0; e < e_dim; ++e) {
                rec.theta[static_cast<std::size_t>(e)] = draw_theta_component(cfg.theta_dist, s);
            }
        }
    }

    rec.beta.resize(static_cast<std::size_t>(e_dim));
    {
        rng::Stream s(cfg.seed, index, rng::kBeta);
        for (int e = 0; e < e_dim; ++e) rec.beta[static_cast<std::size_t>(e)] = s.gauss(rec.theta[static_cast<std::size_t>(e)], 1.0);
    }

    rec.u_x.assign(static_cast<std::size_t>(rec.n), std::vector<double>(static_cast<std::size_t>(e_dim)));
    rec.u_y.assign(static_cast<std::size_t>(rec.n), std::vector<double>(static_cast<std::size_t>(e_dim)));
    {
        rng::Stream sx(cfg.seed, index, rng::kNoiseX);
        rng::Stream sy(cfg.seed, index, rng::kNoiseY);
        for (int i = 0; i < rec.n; ++i) {
            for (int e = 0; e < e_dim; ++e) {
                rec.u_x[static_cast<std::size_t>(i)][static_cast<std::size_t>(e)] = sx.gauss(rec.theta[static_cast<std::size_t>(e)], 1.0);
                rec.u_y[static_cast<std::size_t>(i)][static_cast<std::size_t>(e)] = sy.gauss(rec.theta[static_cast<std::size_t>(e)], 1.0);
            }
        }
    }

    rec.x_query.resize(static_cast<std::size_t>(e_dim));
    {
        rng::Stream s(cfg.seed, index, rng::kQueryX);
        for (int e = 0; e < e_dim; ++e) rec.x_query[static_cast<std::size_t>(e)] = s.uniform(kThetaLo, kThetaHi);
    }

    const int t_len = cfg.task == Task::kCounterfactual ? 2 * rec.n + 2 : 2 * rec.n + 1;
    rec.tokens = ad::Tensor(t_len, e_dim);
    for (int i = 0; i < rec.n; ++i) {
        auto [x, y] = scm::apply_link(cfg.noise, rec.beta, rec.u_x[static_cast<std::size_t>(i)],
                                      rec.u_y[static_cast<std::size_t>(i)]);
        for (int e = 0; e < e_dim; ++e) {
            rec.tokens.at(2 * i, e) = x[static_cast<std::size_t>(e)];
            rec.tokens.at(2 * i + 1, e) = y[static_cast<std::size_t>(e)];
        }
    }

    if (cfg.task == Task::kCounterfactual) {
        for (int e = 0; e < e_dim; ++e) rec.tokens.at(2 * rec.n, e) = static_cast<double>(rec.z);
        for (int e = 0; e < e_dim; ++e) rec.tokens.at(2 * rec.n + 1, e) = rec.x_query[static_cast<std::size_t>(e)];
        rec.target = scm::link_counterfactual(cfg.noise, rec.beta,
                                              rec.u_y[static_cast<std::size_t>(rec.z - 1)], rec.x_query);
    } else {
        for (int e = 0; e < e_dim; ++e) rec.tokens.at(2 * rec.n, e) = rec.x_query[static_cast<std::size_t>(e)];
        rec.fresh_u_y.resize(static_cast<std::size_t>(e_dim));
        rng::Stream s(cfg.seed, index, rng::kFreshNoise);
        for (int e = 0; e < e_dim; ++e) rec.fresh_u_y[static_cast<std::size_t>(e)] = s.gauss(rec.theta[static_cast<std::size_t>(e)], 1.0);
        rec.target = scm::link_counterfactual(cfg.noise, rec.beta, rec.fresh_u_y, rec.x_query);
    }
    return rec;
}

std::vector<PromptRecord> sample_batch(const GenConfig& cfg, std::uint64_t batch_index,
                                       int batch_size, bool shared_z) {
    cfg.validate();
    rng::Stream s(cfg.seed, batch_index, rng::kBatchShared);
    const int n = static_cast<int>(s.uniform_int(cfg.n_min, cfg.n_max));
    std::optional<int> z;
    if (cfg.task == Task::kCounterfactual) {
        if (cfg.fixed_z) {
            z = *cfg.fixed_z;
        } else if (shared_z) {
            z = static_cast<int>(s.uniform_int(1, n));
        }
    }
    std::vector<PromptRecord> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (int b = 0; b < batch_size; ++b) {
        const std::uint64_t index = batch_index * static_cast<std::uint64_t>(batch_size) + b;
        batch.push_back(sample_sequence(cfg, index, n, z));
    }
    return batch;
}

std::vector<double> continuation_target(const GenConfig& cfg, const PromptRecord& record,
                                        const std::vector<double>& fresh_noise) {
    if (cfg.task != Task::kContinuation) {
        throw ConfigError("continuation_target: config task is not continuation");
    }
    return scm::link_counterfactual(cfg.noise, record.beta, fresh_noise, record.x_query);
}

PromptRecord permute_pairs(const PromptRecord& record, const std::vector<int>& perm) {
    if (perm.size() != static_cast<std::size_t>(record.n)) {
        throw ConfigError("permute_pairs: permutation size mismatch");
    }
    PromptRecord out = record;
    for (int i = 0; i < record.n; ++i) {
        const int src = perm[static_cast<std::size_t>(i)];
        out.u_x[static_cast<std::size_t>(i)] = record.u_x[static_cast<std::size_t>(src)];
        out.u_y[static_cast<std::size_t>(i)] = record.u_y[static_cast<std::size_t>(src)];
        for (int e = 0; e < record.tokens.cols(); ++e) {
            out.tokens.at(2 * i, e) = record.tokens.at(2 * src, e);
            out.tokens.at(2 * i + 1, e) = record.tokens.at(2 * src + 1, e);
        }
        if (record.z > 0 && src == record.z - 1) {
            out.z = i + 1;
            for (int e = 0; e < record.tokens.cols(); ++e) {
                out.tokens.at(2 * record.n, e) = static_cast<double>(out.z);
            }
        }
    }
    return out;
}

namespace {

json config_to_json(const GenConfig& cfg) {
    json j;
    j["e"] = cfg.embed_dim;
    j["n_min"] = cfg.n_min;
    j["n_max"] = cfg.n_max;
    j["theta_dist"] = theta_dist_name(cfg.theta_dist);
    j["diversity"] = cfg.diversity ? json(*cfg.diversity) : json(nullptr);
    j["kind"] = scm::noise_kind_name(cfg.noise.kind);
    j["tau"] = cfg.noise.tau;
    j["normalizer"] = cfg.noise.normalizer;
    j["task"] = task_name(cfg.task);
    j["fixed_z"] = cfg.fixed_z ? json(*cfg.fixed_z) : json(nullptr);
    j["seed"] = cfg.seed;
    return j;
}

GenConfig config_from_json(const json& j) {
    GenConfig cfg;
    cfg.embed_dim = j.at("e").get<int>();
    cfg.n_min = j.at("n_min").get<int>();
    cfg.n_max = j.at("n_max").get<int>();
    cfg.theta_dist = theta_dist_from_name(j.at("theta_dist").get<std::string>());
    if (!j.at("diversity").is_null()) cfg.diversity = j.at("diversity").get<int>();
    cfg.noise.kind = scm::noise_kind_from_name(j.at("kind").get<std::string>());
    cfg.noise.tau = j.at("tau").get<double>();
    cfg.noise.normalizer = j.at("normalizer").get<double>();
    cfg.task = task_from_name(j.at("task").get<std::string>());
    if (!j.at("fixed_z").is_null()) cfg.fixed_z = j.at("fixed_z").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

json tensor_to_json(const ad::Tensor& t) {
    json rows = json::array();
    for (int i = 0; i < t.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < t.cols(); ++j) row.push_back(t.at(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

ad::Tensor tensor_from_json(const json& j) {
    const int rows = static_cast<int>(j.size());
    const int cols = static_cast<int>(j.at(0).size());
    ad::Tensor t(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int c = 0; c < cols; ++c) t.at(i, c) = j.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(c)).get<double>();
    }
    return t;
}

json record_to_json(const PromptRecord& rec) {
    json j;
    j["tokens"] = tensor_to_json(rec.tokens);
    j["target"] = rec.target;
    json meta;
    meta["theta"] = rec.theta;
    meta["beta"] = rec.beta;
    meta["u_x"] = rec.u_x;
    meta["u_y"] = rec.u_y;
    meta["x_query"] = rec.x_query;
    if (!rec.fresh_u_y.empty()) meta["fresh_u_y"] = rec.fresh_u_y;
    meta["z"] = rec.z;
    meta["n"] = rec.n;
    j["meta"] = std::move(meta);
    return j;
}

PromptRecord record_from_json(const json& j) {
    PromptRecord rec;
    rec.tokens = tensor_from_json(j.at("tokens"));
    rec.target = j.at("target").get<std::vector<double>>();
    const json& meta = j.at("meta");
    rec.theta = meta.at("theta").get<std::vector<double>>();
    rec.beta = meta.at("beta").get<std::vector<double>>();
    rec.u_x = meta.at("u_x").get<std::vector<std::vector<double>>>();
    rec.u_y = meta.at("u_y").get<std::vector<std::vector<double>>>();
    rec.x_query = meta.at("x_query").get<std::vector<double>>();
    if (meta.contains("fresh_u_y")) rec.fresh_u_y = meta.at("fresh_u_y").get<std::vector<double>>();
    rec.z = meta.at("z").get<int>();
    rec.n = meta.at("n").get<int>();
    return rec;
}

}  // namespace

void write_dataset(const GenConfig& cfg, std::uint64_t count, const std::string& path) {
    std::vector<PromptRecord> records;
    records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) records.push_back(sample_sequence(cfg, i));
    write_dataset(cfg, records, path);
}

void write_dataset(const GenConfig& cfg, const std::vector<PromptRecord>& records,
                   const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("write_dataset: cannot open " + path);
    json header;
    header["format"] = "iccr-dataset";
    header["version"] = 1;
    header["config"] = config_to_json(cfg);
    header["count"] = records.size();
    out << header.dump() << "\n";
    for (const PromptRecord& rec : records) out << record_to_json(rec).dump() << "\n";
    if (!out) throw ConfigError("write_dataset: failed writing " + path);
}

Dataset read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("read_dataset: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("read_dataset: empty file " + path);
    json header = json::parse(line);
    if (header.at("format").get<std::string>() != "iccr-dataset") {
        throw ConfigError("read_dataset: wrong format tag in " + path);
    }
    if (header.at("version").get<int>() != 1) {
        throw ConfigError("read_dataset: unsupported version in " + path);
    }
    Dataset ds;
    ds.config = config_from_json(header.at("config"));
    const std::uint64_t count = header.at("count").get<std::uint64_t>();
    ds.records.reserve(count);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ds.records.push_back(record_from_json(json::parse(line)));
    }
    if (ds.records.size() != count) {
        throw ConfigError("read_dataset: header count mismatch in " + path);
    }
    return ds;
}

}  // namespace iccr::gen
