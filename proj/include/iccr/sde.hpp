#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iccr/rng.hpp"
#include "iccr/tensor.hpp"

namespace iccr::sde {

struct Bounds {
    double x_lo = 0.5, x_hi = 2.0;
    double y_lo = 0.5, y_hi = 2.0;
};

enum class CfInitLaw { kUniform, kBeta };

struct SDEConfig {
    int embed_dim = 1;  // E independent one-dimensional systems
    double sigma_x = 0.05;
    double sigma_y = 0.05;
    double t_horizon = 1.0;  // T in the parameter-bound formulas
    int grid_steps = 1000;
    int n_events = 20;
    double event_lo = 0.0;
    double event_hi = 0.5;
    Bounds bounds;
    double theta_lo = 1.0;
    double theta_hi = 2.0;
    bool equidistant = false;
    CfInitLaw cf_init = CfInitLaw::kUniform;  // counterfactual start law
    double delimiter_value = -7.0;
    std::optional<int> times_pool;  // curriculum: reuse this many event-time draws
    std::uint64_t seed = 0;

    double dt() const { return (event_hi - event_lo) / grid_steps; }
    void validate() const;
};

struct LVParams {
    std::vector<double> alpha, beta, gamma, delta;  // per dimension
};

struct ParamBox {
    double alpha_lo, alpha_hi;
    double gamma_lo, gamma_hi;
    double beta_lo, delta_lo;
};

// Closed-form feasibility box keeping trajectories inside `bounds` up to T.
ParamBox param_bounds(double x0, double y0, const Bounds& bounds, double t_final, double beta_lv,
                      double delta);

// Drift of the predator-prey system: dx = alpha x - beta x y, dy = -gamma y + delta x y.
std::pair<double, double> lv_drift(double x, double y, double alpha, double beta_lv, double gamma,
                                   double delta);

struct LVDraw {
    double alpha, beta, gamma, delta;
    double x0, y0;
};

// One dimension's parameters and initial condition given the latent theta.
LVDraw sample_lv(double theta, const SDEConfig& cfg, rng::Stream& stream);

struct PathPair {
    std::vector<double> grid_times;  // grid_steps + 1 points over the event range
    ad::Tensor fact_x, fact_y;       // (grid_steps+1) x E
    ad::Tensor cf_x, cf_y;
    ad::Tensor inc_x, inc_y;         // grid_steps x E shared Brownian increments
    std::vector<double> event_times;
    std::vector<int> event_grid;  // grid indices of the event times
    LVParams params;
    std::vector<double> theta;
    std::vector<double> init_x, init_y;        // factual initial condition
    std::vector<double> init_cf_x, init_cf_y;  // counterfactual initial condition
};

// Single-dimension Euler-Maruyama; increments are raw Brownian steps.
void euler_maruyama(double alpha, double beta_lv, double gamma, double delta, double x0, double y0,
                    double sigma_x, double sigma_y, double dt, const double* inc_x,
                    const double* inc_y, int steps, double* out_x, double* out_y);

// Factual + counterfactual paths on one shared Brownian realization; the
// whole pair is resampled (fresh increments) when an evaluated value is
// non-positive, up to 100 retries.
PathPair counterfactual_path(std::uint64_t pair_seed, const LVParams& params,
                             const std::vector<double>& init_x, const std::vector<double>& init_y,
                             const std::vector<double>& init_cf_x,
                             const std::vector<double>& init_cf_y, const SDEConfig& cfg);

std::vector<double> sample_event_times(const SDEConfig& cfg, rng::Stream& stream);

// Everything drawn from (cfg.seed, index): theta, params, inits, events, noise.
PathPair generate_pair(const SDEConfig& cfg, std::uint64_t index);

struct SdePrompt {
    ad::Tensor tokens;                   // rows: obs pairs, delimiter, cf pairs
    std::vector<std::uint8_t> loss_mask;  // per row: model output here is scored
    ad::Tensor targets;                  // masked-count x E, next-token values
    std::vector<int> target_rows;        // rows of tokens holding the targets
};

SdePrompt sde_prompt(const PathPair& pair, const SDEConfig& cfg);

void write_sde_dataset(const SDEConfig& cfg, std::uint64_t count, const std::string& path);

}  // namespace iccr::sde
