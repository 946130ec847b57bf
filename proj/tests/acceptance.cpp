// Acceptance suite: one pass/fail line per criterion, tolerances pinned in
// code. Exits nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "iccr/analysis.hpp"
#include "iccr/datagen.hpp"
#include "iccr/models.hpp"
#include "iccr/rng.hpp"
#include "iccr/scm.hpp"
#include "iccr/sde.hpp"
#include "iccr/tape.hpp"
#include "iccr/training.hpp"

using namespace iccr;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kTargetVariance = 169.0;

int g_failures = 0;

void report(const char* name, bool ok, const std::string& detail, double seconds) {
    std::printf("[%s] %-24s %s (%.1f s)\n", ok ? "PASS" : "FAIL", name, detail.c_str(), seconds);
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

struct Timer {
    Clock::time_point start = Clock::now();
    double seconds() const { return std::chrono::duration<double>(Clock::now() - start).count(); }
};

std::string fmt(const char* pattern, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), pattern, args...);
    return buf;
}

// --------------------------------------------------------------------------

void criterion_gradient_suite() {
    Timer timer;
    double worst_primitive = 0.0;
    rng::Stream shapes(101, 0, 1);
    for (int trial = 0; trial < 3; ++trial) {
        rng::Stream s(55, static_cast<std::uint64_t>(trial), 1);
        const int m = static_cast<int>(shapes.uniform_int(2, 16));
        const int k = static_cast<int>(shapes.uniform_int(2, 16));
        const int n = static_cast<int>(shapes.uniform_int(2, 16));
        auto rnd = [&](int r, int c) {
            ad::Tensor t = ad::Tensor::uninitialized(r, c);
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = s.gauss(0.0, 1.0);
            return t;
        };
        const ad::Tensor a = rnd(m, k);
        const ad::Tensor b = rnd(k, n);
        const ad::Tensor c = rnd(n, k);
        const ad::Tensor sq = rnd(m, m);
        const ad::Tensor gain = rnd(1, k);
        const ad::Tensor bias = rnd(1, k);
        auto check = [&](auto fn, const ad::Tensor& point, double step) {
            worst_primitive = std::max(worst_primitive, ad::grad_check(fn, point, step));
        };
        check([&](ad::Tape& t, ad::VarId x) { return t.sum(t.matmul(x, t.leaf(b, false))); }, a, 1e-4);
        check([&](ad::Tape& t, ad::VarId x) { return t.sum(t.matmul_nt(x, t.leaf(c, false))); }, a, 1e-4);
        check([&](ad::Tape& t, ad::VarId x) {
            return t.sum(t.mul(t.softmax_causal(x), t.leaf(sq, false)));
        }, sq, 1e-4);
        check([&](ad::Tape& t, ad::VarId x) {
            return t.sum(t.mul(t.layer_norm(x, t.leaf(gain, false), t.leaf(bias, false)),
                               t.leaf(a, false)));
        }, a, 1e-4);
        check([&](ad::Tape& t, ad::VarId x) { return t.sum(t.gelu(x)); }, a, 1e-4);
        check([&](ad::Tape& t, ad::VarId x) { return t.sum(t.tanh(x)); }, a, 1e-4);
        check([&](ad::Tape& t, ad::VarId x) { return t.sum(t.sigmoid(x)); }, a, 1e-4);
        check([&](ad::Tape& t, ad::VarId x) { return t.sum(t.add(t.mul(x, x), t.leaf(a, false))); }, a, 1e-4);
        check([&](ad::Tape& t, ad::VarId x) { return t.sum(t.add_row(x, t.leaf(gain, false))); }, a, 1e-4);
    }

    // full transformer: finite differences over every parameter coordinate
    model::TransformerConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.hidden = 8;
    cfg.embed_dim = 1;
    cfg.max_context = 6;
    cfg.init_seed = 7;
    model::ModelState state = model::init_model(cfg);
    rng::Stream s(66, 0, 1);
    ad::Tensor tokens(6, 1);
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = s.gauss(0.0, 2.0);
    ad::Tensor target(1, 1);
    target.at(0, 0) = 1.5;

    ad::Tape tape;
    const model::ForwardHandle handle = model::gpt2_forward_tape(tape, state, tokens, cfg);
    const ad::VarId loss = tape.scaled_sq_error(tape.gather_rows(handle.predictions, {5}), target, 1.0);
    tape.backward(loss);
    auto loss_of = [&](const model::ModelState& st) {
        const ad::Tensor p = model::gpt2_forward(st, tokens, cfg);
        const double d = p.at(5, 0) - target.at(0, 0);
        return d * d;
    };
    double worst_model = 0.0;
    for (std::size_t pi = 0; pi < state.params.size(); ++pi) {
        const ad::Tensor& analytic = tape.grad(handle.param_vars[pi]);
        ad::Tensor& param = state.params[pi].second;
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double orig = param[i];
            param[i] = orig + 1e-4;
            const double up = loss_of(state);
            param[i] = orig - 1e-4;
            const double down = loss_of(state);
            param[i] = orig;
            const double fd = (up - down) / 2e-4;
            worst_model = std::max(worst_model, std::abs(analytic[i] - fd) /
                                                    (std::abs(analytic[i]) + std::abs(fd) + 1e-12));
        }
    }
    const double secs = timer.seconds();
    const bool ok = worst_primitive < 1e-4 && worst_model < 1e-4 && secs < 60.0;
    report("gradient suite", ok,
           fmt("primitive rel err %.2e, transformer rel err %.2e", worst_primitive, worst_model),
           secs);
}

void criterion_oracle_equivalence() {
    Timer timer;
    const scm::NoiseKind kinds[] = {scm::NoiseKind::kLinearAdditive, scm::NoiseKind::kAnm,
                                    scm::NoiseKind::kMultiplicative, scm::NoiseKind::kExponential,
                                    scm::NoiseKind::kTanh, scm::NoiseKind::kSigmoid};
    double worst = 0.0;
    for (scm::NoiseKind kind : kinds) {
        scm::NoiseModel model;
        model.kind = kind;
        rng::Stream s(200 + static_cast<std::uint64_t>(kind), 0, 1);
        for (int i = 0; i < 10000; ++i) {
            double f_x = s.gauss(0.0, 2.0);
            if (kind == scm::NoiseKind::kMultiplicative && std::abs(f_x) < 1e-3) f_x += 0.5;
            const double u = s.gauss(0.0, 2.0);
            const double f_cf = s.gauss(0.0, 2.0);
            const double y = scm::transform(model, {f_x}, {u})[0];
            // round trip
            const double y_back = scm::transform(model, {f_x}, scm::abduct_noise(model, {f_x}, {y}))[0];
            worst = std::max(worst, std::abs(y_back - y) / (1.0 + std::abs(y)));
            // consistency: intervening with the factual value
            const double y_same = scm::counterfactual(model, {f_x}, {f_x}, {y})[0];
            worst = std::max(worst, std::abs(y_same - y) / (1.0 + std::abs(y)));
            (void)f_cf;
        }
    }
    // multiplicative copy identity and the linear closed form
    rng::Stream s(300, 0, 1);
    scm::NoiseModel lin;
    lin.kind = scm::NoiseKind::kLinearAdditive;
    scm::NoiseModel mult;
    mult.kind = scm::NoiseKind::kMultiplicative;
    for (int i = 0; i < 10000; ++i) {
        const double theta = s.uniform(-6.0, 6.0);
        const double beta = s.gauss(theta, 1.0);
        double x = s.gauss(theta, 1.0);
        const double u = s.gauss(theta, 1.0);
        const double x_cf = s.uniform(-6.0, 6.0);
        const double y = beta * x + u;
        const double lemma = scm::counterfactual(lin, scm::mechanism_fx(lin, {beta}, {x_cf}),
                                                 scm::mechanism_fx(lin, {beta}, {x}), {y})[0];
        const double direct = scm::linear_cf({beta}, {x}, {y}, {x_cf})[0];
        worst = std::max(worst, std::abs(lemma - direct) / (1.0 + std::abs(direct)));
        if (std::abs(x) > 1e-3 && std::abs(beta) > 1e-3) {
            const auto [xs, ys] = scm::apply_link(mult, {beta}, {x}, {u});
            const double cf = scm::counterfactual(mult, scm::mechanism_fx(mult, {beta}, {x_cf}),
                                                  scm::mechanism_fx(mult, {beta}, {x}), {ys[0]})[0];
            worst = std::max(worst, std::abs(cf - x_cf / x * ys[0]) / (1.0 + std::abs(cf)));
        }
    }
    const double secs = timer.seconds();
    report("oracle equivalence", worst <= 1e-12 && secs < 10.0,
           fmt("worst relative deviation %.2e over 1e4 instances per kind", worst), secs);
}

void criterion_moments() {
    Timer timer;
    gen::GenConfig cfg;
    cfg.embed_dim = 1;
    cfg.seed = 424242;
    double total = 0.0, total_sq = 0.0;
    const long samples = 1000000;
    for (long i = 0; i < samples; ++i) {
        const gen::PromptRecord rec =
            gen::sample_sequence(cfg, static_cast<std::uint64_t>(i), 2, std::nullopt);
        total += rec.target[0];
        total_sq += rec.target[0] * rec.target[0];
    }
    const double mean = total / samples;
    const double var = total_sq / samples - mean * mean;
    const double secs = timer.seconds();
    const bool ok = std::abs(mean) <= 0.05 && std::abs(var - kTargetVariance) <= 0.05 * kTargetVariance &&
                    secs < 30.0;
    report("moment reproduction", ok, fmt("mean %.4f, Var(Y_CF) %.2f (want 169 +- 5%%)", mean, var),
           secs);
}

void criterion_ols_band() {
    Timer timer;
    gen::GenConfig cfg;
    cfg.embed_dim = 1;
    cfg.seed = 5;
    std::vector<int> lengths;
    for (int n = 30; n <= 50; ++n) lengths.push_back(n);
    const analysis::EvalCurve curve = analysis::ols_baseline_curve(cfg, lengths, 6400, 777);
    // reported band 0.4739 .. 0.6132 with 10% tolerance on both ends
    const double lo = 0.4739 * 0.9;
    const double hi = 0.6132 * 1.1;
    int outside = 0;
    double min_mse = 1e9, max_mse = 0.0;
    for (double mse : curve.mean_mse) {
        min_mse = std::min(min_mse, mse);
        max_mse = std::max(max_mse, mse);
        if (mse < lo || mse > hi) ++outside;
    }
    const double secs = timer.seconds();
    report("ols baseline band", outside == 0 && secs < 120.0,
           fmt("measured %.3f..%.3f over n=30..50 vs band [%.3f, %.3f]; %d lengths outside",
               min_mse, max_mse, lo, hi, outside),
           secs);
}

void criterion_sde_identities() {
    Timer timer;
    sde::SDEConfig cfg;
    cfg.seed = 99;
    bool bitwise_ok = true;
    bool telescoping_ok = true;
    bool bounds_ok = true;
    double worst_gap = 0.0;
    for (std::uint64_t idx = 0; idx < 1000; ++idx) {
        const sde::PathPair pair = sde::generate_pair(cfg, idx);
        // sampled parameters satisfy their feasibility box
        const sde::ParamBox box = sde::param_bounds(pair.init_x[0], pair.init_y[0], cfg.bounds,
                                                    cfg.t_horizon, pair.params.beta[0],
                                                    pair.params.delta[0]);
        bounds_ok = bounds_ok && pair.params.alpha[0] >= box.alpha_lo &&
                    pair.params.alpha[0] <= box.alpha_hi && pair.params.gamma[0] >= box.gamma_lo &&
                    pair.params.gamma[0] <= box.gamma_hi && pair.params.beta[0] >= box.beta_lo &&
                    pair.params.delta[0] >= box.delta_lo;
        // discrete transformation identity at every grid point
        double gap_x = pair.init_cf_x[0] - pair.init_x[0];
        double gap_y = pair.init_cf_y[0] - pair.init_y[0];
        const double dt = cfg.dt();
        for (int k = 0; k <= cfg.grid_steps; ++k) {
            const double want_x = pair.cf_x.at(k, 0) - pair.fact_x.at(k, 0);
            const double want_y = pair.cf_y.at(k, 0) - pair.fact_y.at(k, 0);
            worst_gap = std::max({worst_gap, std::abs(want_x - gap_x) / (1.0 + std::abs(want_x)),
                                  std::abs(want_y - gap_y) / (1.0 + std::abs(want_y))});
            if (k < cfg.grid_steps) {
                const auto f = sde::lv_drift(pair.fact_x.at(k, 0), pair.fact_y.at(k, 0),
                                             pair.params.alpha[0], pair.params.beta[0],
                                             pair.params.gamma[0], pair.params.delta[0]);
                const auto g = sde::lv_drift(pair.cf_x.at(k, 0), pair.cf_y.at(k, 0),
                                             pair.params.alpha[0], pair.params.beta[0],
                                             pair.params.gamma[0], pair.params.delta[0]);
                gap_x += (g.first - f.first) * dt;
                gap_y += (g.second - f.second) * dt;
            }
        }
        telescoping_ok = telescoping_ok && worst_gap <= 1e-12;
        // identical intervention reproduces the factual path bitwise
        if (idx < 20) {
            const sde::PathPair same = sde::counterfactual_path(
                rng::derive_key({cfg.seed, idx}), pair.params, pair.init_x, pair.init_y,
                pair.init_x, pair.init_y, cfg);
            for (std::size_t k = 0; k < same.fact_x.size() && bitwise_ok; ++k) {
                bitwise_ok = same.fact_x[k] == same.cf_x[k] && same.fact_y[k] == same.cf_y[k];
            }
        }
    }
    const double secs = timer.seconds();
    report("sde identities", bitwise_ok && telescoping_ok && bounds_ok && secs < 60.0,
           fmt("bitwise %s, telescoping gap %.2e, bounds %s over 1000 pairs",
               bitwise_ok ? "ok" : "BROKEN", worst_gap, bounds_ok ? "ok" : "BROKEN"),
           secs);
}

void criterion_euler_convergence() {
    Timer timer;
    auto sup_error = [](int steps) {
        const double t_final = 0.5;
        const int refine = 16;
        std::vector<double> inc(static_cast<std::size_t>(steps) * refine, 0.0);
        std::vector<double> xc(static_cast<std::size_t>(steps) + 1), yc(static_cast<std::size_t>(steps) + 1);
        sde::euler_maruyama(1.4, 0.9, 1.1, 0.8, 1.0, 1.2, 0.0, 0.0, t_final / steps, inc.data(),
                            inc.data(), steps, xc.data(), yc.data());
        const int fine = steps * refine;
        std::vector<double> xf(static_cast<std::size_t>(fine) + 1), yf(static_cast<std::size_t>(fine) + 1);
        sde::euler_maruyama(1.4, 0.9, 1.1, 0.8, 1.0, 1.2, 0.0, 0.0, t_final / fine, inc.data(),
                            inc.data(), fine, xf.data(), yf.data());
        double sup = 0.0;
        for (int k = 0; k <= steps; ++k) {
            sup = std::max(sup, std::abs(xc[static_cast<std::size_t>(k)] - xf[static_cast<std::size_t>(k) * refine]));
            sup = std::max(sup, std::abs(yc[static_cast<std::size_t>(k)] - yf[static_cast<std::size_t>(k) * refine]));
        }
        return sup;
    };
    const double e1 = sup_error(250);
    const double e2 = sup_error(500);
    const double ratio = e1 / e2;
    const double secs = timer.seconds();
    report("euler convergence", ratio >= 1.6 && ratio <= 2.4 && secs < 30.0,
           fmt("sup-error ratio %.3f after halving dt (want 2.0 +- 20%%)", ratio), secs);
}

// shared state across the training-dependent criteria
struct ScaledRuns {
    model::ModelConfig full_cfg;
    train::Checkpoint full;
    gen::GenConfig gen_cfg;
    analysis::EvalCurve full_curve;
};

model::ModelConfig scaled_model(model::Variant variant, std::uint64_t seed) {
    model::ModelConfig cfg;
    cfg.type = model::ModelConfig::Type::kTransformer;
    cfg.transformer.layers = 2;
    cfg.transformer.heads = 2;
    cfg.transformer.hidden = 32;
    cfg.transformer.embed_dim = 1;
    cfg.transformer.max_context = 102;
    cfg.transformer.variant = variant;
    cfg.transformer.init_seed = seed;
    return cfg;
}

train::TrainConfig scaled_train(std::uint64_t seed) {
    train::TrainConfig cfg;
    cfg.steps = 5000;
    cfg.batch = 64;
    cfg.lr = 1e-3;
    cfg.checkpoint_every = 0;
    cfg.seed = seed;
    return cfg;
}

ScaledRuns criterion_scaled_learning() {
    Timer timer;
    ScaledRuns runs;
    runs.gen_cfg.embed_dim = 1;
    runs.gen_cfg.fixed_z = 14;
    runs.gen_cfg.n_min = 15;
    runs.gen_cfg.n_max = 45;
    runs.gen_cfg.seed = 11;
    runs.full_cfg = scaled_model(model::Variant::kFull, 1);
    train::TrainOutput out = train::train(runs.full_cfg, runs.gen_cfg, scaled_train(3));
    runs.full = std::move(out.checkpoint);

    runs.full_curve = analysis::eval_curve(
        analysis::model_predictor(runs.full.state, runs.full_cfg), runs.gen_cfg, {5, 35}, 6400, 999);
    const double mse5 = runs.full_curve.mean_mse[0];
    const double mse35 = runs.full_curve.mean_mse[1];
    const bool below_bar = mse35 < 0.2 * kTargetVariance;
    const bool shape = mse35 < mse5 && runs.full_curve.ci_hi[1] < runs.full_curve.ci_lo[0];
    const double secs = timer.seconds();
    report("scaled learning", below_bar && shape && secs < 1800.0,
           fmt("mse(35) %.2f [%.2f, %.2f] vs bar %.1f; mse(5) %.2f [%.2f, %.2f]", mse35,
               runs.full_curve.ci_lo[1], runs.full_curve.ci_hi[1], 0.2 * kTargetVariance, mse5,
               runs.full_curve.ci_lo[0], runs.full_curve.ci_hi[0]),
           secs);
    return runs;
}

void criterion_ablation(const ScaledRuns& runs) {
    Timer timer;
    auto eval_variant = [&](model::Variant variant, std::uint64_t seed) {
        const model::ModelConfig cfg = scaled_model(variant, seed);
        const train::TrainOutput out = train::train(cfg, runs.gen_cfg, scaled_train(seed + 100));
        const analysis::EvalCurve curve = analysis::eval_curve(
            analysis::model_predictor(out.checkpoint.state, cfg), runs.gen_cfg, {35}, 6400, 999);
        return curve.mean_mse[0];
    };
    const double full35 = runs.full_curve.mean_mse[1];
    const double ao35 = eval_variant(model::Variant::kAttentionOnly, 2);
    const double mlp35 = eval_variant(model::Variant::kMlpOnly, 4);
    const bool full_ok = full35 < 0.5 * kTargetVariance;
    const bool ao_ok = ao35 < 0.5 * kTargetVariance;
    const bool mlp_ok = std::abs(mlp35 - kTargetVariance) <= 0.10 * kTargetVariance;
    report("ablation direction", full_ok && ao_ok && mlp_ok,
           fmt("full %.2f, attention_only %.2f (both < %.2f), mlp_only %.2f (within 169 +- 10%%)",
               full35, ao35, 0.5 * kTargetVariance, mlp35),
           timer.seconds());
}

void criterion_probe(const ScaledRuns& runs) {
    Timer timer;
    const analysis::ProbeResult probe =
        analysis::probe_layers(runs.full.state, runs.full_cfg.transformer, runs.gen_cfg,
                               analysis::ProbeTarget::kTheta, 6400, 1280, 31337);
    double best = -1e9;
    for (double r2 : probe.adj_r2_after) best = std::max(best, r2);

    analysis::ProbeOptions permuted;
    permuted.permute_targets = true;
    const analysis::ProbeResult control =
        analysis::probe_layers(runs.full.state, runs.full_cfg.transformer, runs.gen_cfg,
                               analysis::ProbeTarget::kTheta, 6400, 1280, 31337, permuted);
    double best_control = -1e9;
    for (double r2 : control.adj_r2_after) best_control = std::max(best_control, r2);

    report("probe signal", best > 0.7 && best_control < 0.05,
           fmt("best layer adj R2 %.4f (want > 0.7); permuted %.4f (want < 0.05)", best,
               best_control),
           timer.seconds());
}

void criterion_ess_and_diversity() {
    Timer timer;
    bool ess_ok = true;
    for (int d = 1; d <= 64; ++d) {
        const double e = gen::ess(std::vector<double>(static_cast<std::size_t>(d), 1.0 / d));
        if (std::abs(e - d) > 1e-9 * d) ess_ok = false;
    }

    gen::GenConfig gcfg;
    gcfg.embed_dim = 1;
    gcfg.n_min = 2;
    gcfg.n_max = 20;
    gcfg.seed = 21;
    model::ModelConfig mcfg = scaled_model(model::Variant::kFull, 9);
    mcfg.transformer.max_context = 42;
    train::TrainConfig tcfg = scaled_train(17);
    tcfg.steps = 1500;
    const auto rows = analysis::diversity_sweep({1, 64}, {gen::ThetaDist::kUniform},
                                                {gen::ThetaDist::kUniform}, mcfg, gcfg, tcfg, 20,
                                                1600, 4242);
    const analysis::DiversityRow& small = rows[0];
    const analysis::DiversityRow& large = rows[1];
    const bool gap = small.mse > large.mse && small.ci_lo > large.ci_hi;
    report("ess and diversity", ess_ok && gap,
           fmt("Ess exact for d=1..64: %s; mse(pool 1) %.1f [%.1f, %.1f] vs mse(pool 64) %.1f "
               "[%.1f, %.1f]",
               ess_ok ? "yes" : "NO", small.mse, small.ci_lo, small.ci_hi, large.mse, large.ci_lo,
               large.ci_hi),
           timer.seconds());
}

void criterion_determinism() {
    Timer timer;
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "iccr_accept_det";
    fs::remove_all(dir);
    fs::create_directories(dir);
    gen::GenConfig cfg;
    cfg.embed_dim = 1;
    cfg.seed = 3;
    auto run_once = [&](const char* name) {
        const analysis::EvalCurve curve =
            analysis::ols_baseline_curve(cfg, {10, 20}, 400, 1234, 0.05, 500);
        analysis::write_curve_csv(curve, (dir / name).string());
    };
    run_once("a.csv");
    run_once("b.csv");
    std::ifstream fa(dir / "a.csv"), fb(dir / "b.csv");
    const std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    bool ok = !ca.empty() && ca == cb;

#ifdef ICCR_CLI_PATH
    // the same check through the command-line surface
    const std::string base = std::string(ICCR_CLI_PATH) +
                             " eval --predictor ols --lengths 8,16 --seqs 64 --eval-seed 9 "
                             "--resamples 200 --run-dir ";
    const std::string ra = (dir / "runA").string();
    const std::string rb = (dir / "runB").string();
    ok = ok && std::system((base + ra + " > /dev/null 2>&1").c_str()) == 0 &&
         std::system((base + rb + " > /dev/null 2>&1").c_str()) == 0;
    std::ifstream ga(ra + "/metrics/eval_curve.csv"), gb(rb + "/metrics/eval_curve.csv");
    const std::string da((std::istreambuf_iterator<char>(ga)), std::istreambuf_iterator<char>());
    const std::string db((std::istreambuf_iterator<char>(gb)), std::istreambuf_iterator<char>());
    ok = ok && !da.empty() && da == db;
#endif
    fs::remove_all(dir);
    report("determinism", ok, "repeated runs give byte-identical metric files", timer.seconds());
}

}  // namespace

int main() {
    std::printf("acceptance suite\n================\n");
    criterion_gradient_suite();
    criterion_oracle_equivalence();
    criterion_moments();
    criterion_ols_band();
    criterion_sde_identities();
    criterion_euler_convergence();
    const ScaledRuns runs = criterion_scaled_learning();
    criterion_ablation(runs);
    criterion_probe(runs);
    criterion_ess_and_diversity();
    criterion_determinism();
    std::printf("================\n%d criterion(s) failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
