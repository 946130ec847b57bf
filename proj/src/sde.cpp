#include "iccr/sde.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "iccr/errors.hpp"

namespace iccr::sde {

using json = nlohmann::json;

void SDEConfig::validate() const {
    if (embed_dim < 1) throw ConfigError("sde config: embed_dim must be >= 1");
    if (grid_steps < 100) throw ConfigError("sde config: grid_steps must be >= 100");
    if (!(event_hi > event_lo)) throw ConfigError("sde config: event range must be nonempty");
    if (event_lo < 0.0 || event_hi > t_horizon) {
        throw ConfigError("sde config: event range must lie within [0, t_horizon]");
    }
    if (n_events < 2) throw ConfigError("sde config: n_events must be >= 2");
    if (n_events > grid_steps) throw ConfigError("sde config: n_events exceeds grid resolution");
    if (!(bounds.x_lo > 0.0 && bounds.x_lo < bounds.x_hi && bounds.y_lo > 0.0 && bounds.y_lo < bounds.y_hi)) {
        throw ConfigError("sde config: bounds must satisfy 0 < lo < hi");
    }
    if (!(theta_lo >= 1.0 && theta_hi <= 2.0 && theta_lo < theta_hi)) {
        throw ConfigError("sde config: theta support must lie in [1,2)");
    }
    if (sigma_x < 0.0 || sigma_y < 0.0) throw ConfigError("sde config: diffusion must be >= 0");
    if (times_pool && *times_pool < 1) throw ConfigError("sde config: times_pool must be >= 1");
}

ParamBox param_bounds(double x0, double y0, const Bounds& b, double t_final, double beta_lv,
                      double delta) {
    if (!(b.x_lo > 0.0 && b.x_lo < b.x_hi && b.y_lo > 0.0 && b.y_lo < b.y_hi)) {
        throw ConfigError("param_bounds: bounds must satisfy 0 < lo < hi");
    }
    if (!(x0 > b.x_lo && x0 < b.x_hi) || !(y0 > b.y_lo && y0 < b.y_hi)) {
        throw ConfigError("param_bounds: initial condition outside the open bound interval");
    }
    if (!(t_final > 0.0)) throw ConfigError("param_bounds: t_final must be positive");
    ParamBox box;
    box.beta_lo = std::log(b.x_hi / b.x_lo) / (t_final * (b.y_hi - b.y_lo));
    box.delta_lo = std::log(b.y_hi / b.y_lo) / (t_final * (b.x_hi - b.x_lo));
    box.alpha_lo = std::log(b.x_hi / x0) / t_final + beta_lv * b.y_lo;
    box.alpha_hi = std::log(b.x_lo / x0) / t_final + beta_lv * b.y_hi;
    box.gamma_lo = delta * b.x_lo - std::log(b.y_lo / y0) / t_final;
    box.gamma_hi = delta * b.x_hi - std::log(b.y_hi / y0) / t_final;
    return box;
}

std::pair<double, double> lv_drift(double x, double y, double alpha, double beta_lv, double gamma,
                                   double delta) {
    return {alpha * x - beta_lv * x * y, -gamma * y + delta * x * y};
}

LVDraw sample_lv(double theta, const SDEConfig& cfg, rng::Stream& stream) {
    if (!(theta >= 1.0) || theta >= 2.0) {
        throw ConfigError("sample_lv: theta must lie in [1,2), kappa is singular at 2");
    }
    const double kappa = 1.0 / (2.0 - theta);
    LVDraw d;
    // Initial conditions follow Beta(kappa, 2), redrawn until they sit strictly
    // inside the bound interval the feasibility box assumes.
    auto draw_init = [&](double lo, double hi) {
        for (int attempt = 0; attempt < 1000; ++attempt) {
            const double v = stream.beta_kappa2(kappa);
            if (v > lo && v < hi) return v;
        }
        throw ConfigError("sample_lv: could not place the initial condition inside bounds");
    };
    d.x0 = draw_init(cfg.bounds.x_lo, cfg.bounds.x_hi);
    d.y0 = draw_init(cfg.bounds.y_lo, cfg.bounds.y_hi);
    const double beta_lo = std::log(cfg.bounds.x_hi / cfg.bounds.x_lo) /
                           (cfg.t_horizon * (cfg.bounds.y_hi - cfg.bounds.y_lo));
    const double delta_lo = std::log(cfg.bounds.y_hi / cfg.bounds.y_lo) /
                            (cfg.t_horizon * (cfg.bounds.x_hi - cfg.bounds.x_lo));
    d.beta = beta_lo + stream.exponential(theta);
    d.delta = delta_lo + stream.exponential(theta);
    const ParamBox box = param_bounds(d.x0, d.y0, cfg.bounds, cfg.t_horizon, d.beta, d.delta);
    d.alpha = stream.uniform(box.alpha_lo, box.alpha_hi);
    d.gamma = stream.uniform(box.gamma_lo, box.gamma_hi);
    return d;
}

void euler_maruyama(double alpha, double beta_lv, double gamma, double delta, double x0, double y0,
                    double sigma_x, double sigma_y, double dt, const double* inc_x,
                    const double* inc_y, int steps, double* out_x, double* out_y) {
    out_x[0] = x0;
    out_y[0] = y0;
    for (int k = 0; k < steps; ++k) {
        const auto [dx, dy] = lv_drift(out_x[k], out_y[k], alpha, beta_lv, gamma, delta);
        out_x[k + 1] = out_x[k] + dx * dt + sigma_x * inc_x[k];
        out_y[k + 1] = out_y[k] + dy * dt + sigma_y * inc_y[k];
        if (!std::isfinite(out_x[k + 1]) || !std::isfinite(out_y[k + 1])) {
            throw NumericError("euler_maruyama: state blew up at step " + std::to_string(k + 1));
        }
    }
}

std::vector<double> sample_event_times(const SDEConfig& cfg, rng::Stream& stream) {
    cfg.validate();
    const double dt = cfg.dt();
    if (cfg.equidistant) {
        // Uniform partition including both endpoints: {t_0 = lo, ..., t_n = hi}.
        std::vector<double> times(static_cast<std::size_t>(cfg.n_events) + 1);
        for (int i = 0; i <= cfg.n_events; ++i) {
            const double t = cfg.event_lo + (cfg.event_hi - cfg.event_lo) * i / cfg.n_events;
            const int k = static_cast<int>(std::lround((t - cfg.event_lo) / dt));
            times[static_cast<std::size_t>(i)] = cfg.event_lo + k * dt;
        }
        return times;
    }
    std::vector<int> grid_idx;
    grid_idx.reserve(static_cast<std::size_t>(cfg.n_events));
    while (static_cast<int>(grid_idx.size()) < cfg.n_events) {
        const double t = stream.uniform(cfg.event_lo, cfg.event_hi);
        const int k = static_cast<int>(std::lround((t - cfg.event_lo) / dt));
        if (std::find(grid_idx.begin(), grid_idx.end(), k) == grid_idx.end()) {
            grid_idx.push_back(k);
        }
    }
    std::sort(grid_idx.begin(), grid_idx.end());
    std::vector<double> times(grid_idx.size());
    for (std::size_t i = 0; i < grid_idx.size(); ++i) times[i] = cfg.event_lo + grid_idx[i] * dt;
    return times;
}

namespace {

std::vector<int> snap_to_grid(const std::vector<double>& times, const SDEConfig& cfg) {
    std::vector<int> idx(times.size());
    const double dt = cfg.dt();
    for (std::size_t i = 0; i < times.size(); ++i) {
        idx[i] = static_cast<int>(std::lround((times[i] - cfg.event_lo) / dt));
    }
    return idx;
}

bool positive_at_events(const PathPair& pair) {
    for (int k : pair.event_grid) {
        for (int e = 0; e < pair.fact_x.cols(); ++e) {
            if (!(pair.fact_x.at(k, e) > 0.0) || !(pair.fact_y.at(k, e) > 0.0) ||
                !(pair.cf_x.at(k, e) > 0.0) || !(pair.cf_y.at(k, e) > 0.0)) {
                return false;
            }
        }
    }
    return true;
}

void integrate_pair(PathPair& pair, const SDEConfig& cfg) {
    const int steps = cfg.grid_steps;
    const int e_dim = cfg.embed_dim;
    pair.fact_x = ad::Tensor(steps + 1, e_dim);
    pair.fact_y = ad::Tensor(steps + 1, e_dim);
    pair.cf_x = ad::Tensor(steps + 1, e_dim);
    pair.cf_y = ad::Tensor(steps + 1, e_dim);
    std::vector<double> ix(static_cast<std::size_t>(steps)), iy(static_cast<std::size_t>(steps));
    std::vector<double> px(static_cast<std::size_t>(steps) + 1), py(static_cast<std::size_t>(steps) + 1);
    for (int e = 0; e < e_dim; ++e) {
        for (int k = 0; k < steps; ++k) {
            ix[static_cast<std::size_t>(k)] = pair.inc_x.at(k, e);
            iy[static_cast<std::size_t>(k)] = pair.inc_y.at(k, e);
        }
        const std::size_t se = static_cast<std::size_t>(e);
        euler_maruyama(pair.params.alpha[se], pair.params.beta[se], pair.params.gamma[se],
                       pair.params.delta[se], pair.init_x[se], pair.init_y[se], cfg.sigma_x,
                       cfg.sigma_y, cfg.dt(), ix.data(), iy.data(), steps, px.data(), py.data());
        for (int k = 0; k <= steps; ++k) {
            pair.fact_x.at(k, e) = px[static_cast<std::size_t>(k)];
            pair.fact_y.at(k, e) = py[static_cast<std::size_t>(k)];
        }
        euler_maruyama(pair.params.alpha[se], pair.params.beta[se], pair.params.gamma[se],
                       pair.params.delta[se], pair.init_cf_x[se], pair.init_cf_y[se], cfg.sigma_x,
                       cfg.sigma_y, cfg.dt(), ix.data(), iy.data(), steps, px.data(), py.data());
        for (int k = 0; k <= steps; ++k) {
            pair.cf_x.at(k, e) = px[static_cast<std::size_t>(k)];
            pair.cf_y.at(k, e) = py[static_cast<std::size_t>(k)];
        }
    }
}

void fill_increments(PathPair& pair, const SDEConfig& cfg, rng::Stream& stream) {
    const double root_dt = std::sqrt(cfg.dt());
    pair.inc_x = ad::Tensor(cfg.grid_steps, cfg.embed_dim);
    pair.inc_y = ad::Tensor(cfg.grid_steps, cfg.embed_dim);
    for (int e = 0; e < cfg.embed_dim; ++e) {
        for (int k = 0; k < cfg.grid_steps; ++k) {
            pair.inc_x.at(k, e) = stream.gauss(0.0, root_dt);
            pair.inc_y.at(k, e) = stream.gauss(0.0, root_dt);
        }
    }
}

void fill_grid_times(PathPair& pair, const SDEConfig& cfg) {
    pair.grid_times.resize(static_cast<std::size_t>(cfg.grid_steps) + 1);
    for (int k = 0; k <= cfg.grid_steps; ++k) {
        pair.grid_times[static_cast<std::size_t>(k)] = cfg.event_lo + k * cfg.dt();
    }
}

}  // namespace

PathPair counterfactual_path(std::uint64_t pair_seed, const LVParams& params,
                             const std::vector<double>& init_x, const std::vector<double>& init_y,
                             const std::vector<double>& init_cf_x,
                             const std::vector<double>& init_cf_y, const SDEConfig& cfg) {
    cfg.validate();
    for (double v : init_cf_x) {
        if (!(v > 0.0)) throw ConfigError("counterfactual_path: initial condition must be positive");
    }
    for (double v : init_cf_y) {
        if (!(v > 0.0)) throw ConfigError("counterfactual_path: initial condition must be positive");
    }
    PathPair pair;
    pair.params = params;
    pair.init_x = init_x;
    pair.init_y = init_y;
    pair.init_cf_x = init_cf_x;
    pair.init_cf_y = init_cf_y;
    fill_grid_times(pair, cfg);
    {
        rng::Stream s(pair_seed, 0, rng::kEventTimes);
        pair.event_times = sample_event_times(cfg, s);
        pair.event_grid = snap_to_grid(pair.event_times, cfg);
    }
    for (int attempt = 0; attempt < 100; ++attempt) {
        rng::Stream s(pair_seed, static_cast<std::uint64_t>(attempt), rng::kIncrements);
        fill_increments(pair, cfg, s);
        integrate_pair(pair, cfg);
        if (positive_at_events(pair)) return pair;
    }
    throw NumericError("counterfactual_path: no positive trajectory pair in 100 attempts");
}

PathPair generate_pair(const SDEConfig& cfg, std::uint64_t index) {
    cfg.validate();
    for (int attempt = 0; attempt < 100; ++attempt) {
        PathPair pair;
        const std::uint64_t attempt_key =
            rng::derive_key({cfg.seed, index, rng::kRetry, static_cast<std::uint64_t>(attempt)});
        pair.theta.resize(static_cast<std::size_t>(cfg.embed_dim));
        pair.params.alpha.resize(pair.theta.size());
        pair.params.beta.resize(pair.theta.size());
        pair.params.gamma.resize(pair.theta.size());
        pair.params.delta.resize(pair.theta.size());
        pair.init_x.resize(pair.theta.size());
        pair.init_y.resize(pair.theta.size());
        pair.init_cf_x.resize(pair.theta.size());
        pair.init_cf_y.resize(pair.theta.size());
        {
            rng::Stream s(attempt_key, 0, rng::kLvParams);
            for (std::size_t e = 0; e < pair.theta.size(); ++e) {
                pair.theta[e] = s.uniform(cfg.theta_lo, cfg.theta_hi);
                const LVDraw d = sample_lv(pair.theta[e], cfg, s);
                pair.params.alpha[e] = d.alpha;
                pair.params.beta[e] = d.beta;
                pair.params.gamma[e] = d.gamma;
                pair.params.delta[e] = d.delta;
                pair.init_x[e] = d.x0;
                pair.init_y[e] = d.y0;
            }
        }
        {
            rng::Stream s(attempt_key, 0, rng::kLvInit);
            for (std::size_t e = 0; e < pair.theta.size(); ++e) {
                if (cfg.cf_init == CfInitLaw::kUniform) {
                    pair.init_cf_x[e] = s.uniform(1.0, 2.0);
                    pair.init_cf_y[e] = s.uniform(1.0, 2.0);
                } else {
                    const double kappa = 1.0 / (2.0 - pair.theta[e]);
                    pair.init_cf_x[e] = s.beta_kappa2(kappa);
                    pair.init_cf_y[e] = s.beta_kappa2(kappa);
                }
            }
        }
        fill_grid_times(pair, cfg);
        {
            std::uint64_t times_key = attempt_key;
            if (cfg.times_pool) {
                // Curriculum mode: draw the time sequence from a small pool.
                const std::uint64_t pool_slot = rng::Stream(cfg.seed, index, rng::kPoolPick).next_u64() %
                                                static_cast<std::uint64_t>(*cfg.times_pool);
                times_key = rng::derive_key({cfg.seed, rng::kEventTimes, pool_slot});
            }
            rng::Stream s(times_key, 0, rng::kEventTimes);
            pair.event_times = sample_event_times(cfg, s);
            pair.event_grid = snap_to_grid(pair.event_times, cfg);
        }
        {
            rng::Stream s(attempt_key, 0, rng::kIncrements);
            fill_increments(pair, cfg, s);
        }
        integrate_pair(pair, cfg);
        if (positive_at_events(pair)) return pair;
    }
    throw NumericError("generate_pair: no positive trajectory pair in 100 attempts");
}

SdePrompt sde_prompt(const PathPair& pair, const SDEConfig& cfg) {
    const int e_dim = pair.fact_x.cols();
    const int n_times = static_cast<int>(pair.event_grid.size());
    const int total_rows = 4 * n_times + 1;
    SdePrompt prompt;
    prompt.tokens = ad::Tensor(total_rows, e_dim);
    prompt.loss_mask.assign(static_cast<std::size_t>(total_rows), 0);

    auto put_pair = [&](int row, const ad::Tensor& px, const ad::Tensor& py, int grid_k) {
        for (int e = 0; e < e_dim; ++e) {
            prompt.tokens.at(row, e) = px.at(grid_k, e);
            prompt.tokens.at(row + 1, e) = py.at(grid_k, e);
        }
    };

    for (int m = 0; m < n_times; ++m) {
        put_pair(2 * m, pair.fact_x, pair.fact_y, pair.event_grid[static_cast<std::size_t>(m)]);
    }
    const int delim_row = 2 * n_times;
    for (int e = 0; e < e_dim; ++e) prompt.tokens.at(delim_row, e) = cfg.delimiter_value;
    for (int m = 0; m < n_times; ++m) {
        put_pair(delim_row + 1 + 2 * m, pair.cf_x, pair.cf_y,
                 pair.event_grid[static_cast<std::size_t>(m)]);
    }

    // The model is given the first counterfactual pair and completes the rest:
    // outputs at rows [delim+2, total-2] predict the tokens one row later.
    const int first_scored_row = delim_row + 2;
    const int target_count = 2 * (n_times - 1);
    prompt.targets = ad::Tensor(target_count, e_dim);
    prompt.target_rows.resize(static_cast<std::size_t>(target_count));
    for (int i = 0; i < target_count; ++i) {
        const int out_row = first_scored_row + i;
        prompt.loss_mask[static_cast<std::size_t>(out_row)] = 1;
        prompt.target_rows[static_cast<std::size_t>(i)] = out_row;
        for (int e = 0; e < e_dim; ++e) prompt.targets.at(i, e) = prompt.tokens.at(out_row + 1, e);
    }
    return prompt;
}

void write_sde_dataset(const SDEConfig& cfg, std::uint64_t count, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("write_sde_dataset: cannot open " + path);
    json header;
    header["format"] = "iccr-sde";
    header["version"] = 1;
    json jc;
    jc["e"] = cfg.embed_dim;
    jc["sigma_x"] = cfg.sigma_x;
    jc["sigma_y"] = cfg.sigma_y;
    jc["t_horizon"] = cfg.t_horizon;
    jc["grid_steps"] = cfg.grid_steps;
    jc["n_events"] = cfg.n_events;
    jc["event_lo"] = cfg.event_lo;
    jc["event_hi"] = cfg.event_hi;
    jc["equidistant"] = cfg.equidistant;
    jc["seed"] = cfg.seed;
    header["config"] = std::move(jc);
    header["count"] = count;
    out << header.dump() << "\n";
    for (std::uint64_t i = 0; i < count; ++i) {
        const PathPair pair = generate_pair(cfg, i);
        const SdePrompt prompt = sde_prompt(pair, cfg);
        json j;
        json rows = json::array();
        for (int r = 0; r < prompt.tokens.rows(); ++r) {
            json row = json::array();
            for (int e = 0; e < prompt.tokens.cols(); ++e) row.push_back(prompt.tokens.at(r, e));
            rows.push_back(std::move(row));
        }
        j["tokens"] = std::move(rows);
        j["mask"] = prompt.loss_mask;
        json targets = json::array();
        for (int r = 0; r < prompt.targets.rows(); ++r) {
            json row = json::array();
            for (int e = 0; e < prompt.targets.cols(); ++e) row.push_back(prompt.targets.at(r, e));
            targets.push_back(std::move(row));
        }
        j["targets"] = std::move(targets);
        json meta;
        meta["theta"] = pair.theta;
        meta["alpha"] = pair.params.alpha;
        meta["beta"] = pair.params.beta;
        meta["gamma"] = pair.params.gamma;
        meta["delta"] = pair.params.delta;
        meta["event_times"] = pair.event_times;
        std::uint64_t digest = 0x6A09E667F3BCC909ull;
        for (std::size_t k = 0; k < pair.inc_x.size(); ++k) {
            std::uint64_t bits;
            static_assert(sizeof(double) == sizeof(std::uint64_t));
            const double v = pair.inc_x[k];
            std::memcpy(&bits, &v, sizeof(bits));
            digest = rng::mix64(digest ^ bits);
        }
        meta["increments_digest"] = digest;
        j["meta"] = std::move(meta);
        out << j.dump() << "\n";
    }
    if (!out) throw ConfigError("write_sde_dataset: failed writing " + path);
}

}  // namespace iccr::sde
