#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "iccr/datagen.hpp"
#include "iccr/models.hpp"
#include "iccr/rng.hpp"
#include "iccr/training.hpp"

namespace iccr::analysis {

struct EvalCurve {
    std::vector<int> lengths;
    std::vector<double> mean_mse;
    std::vector<double> ci_lo;
    std::vector<double> ci_hi;
    int sequences = 0;
    int skipped = 0;  // degenerate OLS designs
};

// Maps one prompt to a predicted counterfactual vector.
using Predictor = std::function<std::vector<double>(const gen::PromptRecord&)>;

Predictor model_predictor(const model::ModelState& state, const model::ModelConfig& cfg);
Predictor zero_predictor();
Predictor cheat_predictor();  // reads the generating latents, MSE 0 by construction
Predictor ols_predictor();    // throws DegenerateDesignError on flat designs

// Fresh prompts at each context length; per-sequence squared error is
// ||pred - target||^2 / E and the CI is a basic bootstrap over sequences.
EvalCurve eval_curve(const Predictor& predict, const gen::GenConfig& cfg,
                     const std::vector<int>& lengths, int seqs_per_length,
                     std::uint64_t eval_seed, double alpha = 0.05, int resamples = 2000,
                     int threads = 0);

// Basic bootstrap interval for the mean: (2m - q_{1-a/2}, 2m - q_{a/2}).
std::pair<double, double> bootstrap_ci(const std::vector<double>& samples, double alpha,
                                       int resamples, rng::Stream& stream);

EvalCurve ols_baseline_curve(const gen::GenConfig& cfg, const std::vector<int>& lengths,
                             int seqs_per_length, std::uint64_t eval_seed, double alpha = 0.05,
                             int resamples = 2000, int threads = 0);

// ----- linear probing ----------------------------------------------------

struct ProbeFit {
    std::vector<double> weights;  // intercept first
    bool ridge_used = false;
};

// Least-squares probe with intercept; falls back to ridge (1e-6) when the
// normal equations are singular.
ProbeFit probe_fit(const std::vector<std::vector<double>>& features,
                   const std::vector<double>& targets);
double probe_r2(const ProbeFit& fit, const std::vector<std::vector<double>>& features,
                const std::vector<double>& targets);
double adjusted_r2(double r2, int n, int p);

enum class ProbeTarget { kTheta, kBeta };

struct ProbeResult {
    std::vector<int> layers;  // 1-based
    std::vector<double> adj_r2_after;  // probe on X_l (or R_l)
    std::vector<double> adj_r2_diff;   // probe on X_l - X_{l-1}
    std::vector<std::uint8_t> ridge_after;
    std::vector<std::uint8_t> ridge_diff;
    std::uint64_t weights_digest = 0;
    int train_n = 0;
    int eval_n = 0;
};

struct ProbeOptions {
    bool use_pre_residual = false;  // probe R_l instead of X_l
    int threads = 0;
    bool permute_targets = false;  // control: break the feature/target pairing
};

ProbeResult probe_layers(const model::ModelState& state, const model::TransformerConfig& mcfg,
                         const gen::GenConfig& gcfg, ProbeTarget target, int train_n, int eval_n,
                         std::uint64_t seed, const ProbeOptions& options = {});

// ----- attention readout --------------------------------------------------

struct AttnSummary {
    int layers = 0;
    int heads = 0;
    std::vector<double> y_mass;             // [layer*heads+head], mean mass on y_z
    std::vector<double> x_mass;             // mean mass on x_z
    std::vector<double> min_y_mass_over_z;  // qualification statistic
    std::vector<std::pair<int, int>> ranking;   // (layer, head) by y_mass, descending
    std::vector<std::pair<int, int>> qualified;  // min mass over z above threshold
    double threshold = 0.5;
};

AttnSummary detect_abduction_heads(const model::ModelState& state,
                                   const model::TransformerConfig& mcfg,
                                   const gen::GenConfig& gcfg, const std::vector<int>& z_values,
                                   int batches, int seqs_per_batch = 64, int n_pairs = 50,
                                   double threshold = 0.5, std::uint64_t seed = 17,
                                   int threads = 0);

// Summary computed from externally supplied attention maps (synthetic traces
// in tests use this entry point).
AttnSummary summarize_attention(const std::vector<std::vector<std::vector<ad::Tensor>>>& traces,
                                const std::vector<int>& z_values,
                                const std::vector<int>& z_of_trace, int n_pairs, double threshold);

// ----- diversity ----------------------------------------------------------

struct DiversityRow {
    int pool = 0;
    std::string train_dist;
    std::string eval_dist;
    double ess = 0.0;
    double mse = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

std::vector<DiversityRow> diversity_sweep(const std::vector<int>& pool_sizes,
                                          const std::vector<gen::ThetaDist>& train_dists,
                                          const std::vector<gen::ThetaDist>& eval_dists,
                                          const model::ModelConfig& mcfg,
                                          const gen::GenConfig& gcfg_base,
                                          const train::TrainConfig& tcfg, int eval_length,
                                          int eval_seqs, std::uint64_t eval_seed);

// ----- plot-ready emitters --------------------------------------------------

void write_curve_csv(const EvalCurve& curve, const std::string& path);
void write_curve_json(const EvalCurve& curve, const std::string& path);
void write_probe_csv(const ProbeResult& probe, const std::string& path);
void write_probe_json(const ProbeResult& probe, const std::string& path);
void write_attn_csv(const AttnSummary& attn, const std::string& path);
void write_attn_json(const AttnSummary& attn, const std::string& path);
void write_diversity_csv(const std::vector<DiversityRow>& rows, const std::string& path);
void write_diversity_json(const std::vector<DiversityRow>& rows, const std::string& path);

}  // namespace iccr::analysis
