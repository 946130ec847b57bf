#include "iccr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "iccr/errors.hpp"
#include "iccr/parallel.hpp"

namespace iccr::analysis {

using json = nlohmann::json;

namespace {

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw ConfigError("quantile: empty sample");
    const double pos = p * (static_cast<double>(sorted.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

std::uint64_t mix_double(std::uint64_t h, double v) {
    std::uint64_t bits;
    static_assert(sizeof(double) == sizeof(bits));
    std::memcpy(&bits, &v, sizeof(bits));
    return rng::mix64(h ^ bits);
}

}  // namespace

Predictor model_predictor(const model::ModelState& state, const model::ModelConfig& cfg) {
    return [&state, cfg](const gen::PromptRecord& rec) {
        const ad::Tensor preds = model::forward(state, rec.tokens, cfg);
        return model::readout_prediction(preds);
    };
}

Predictor zero_predictor() {
    return [](const gen::PromptRecord& rec) {
        return std::vector<double>(rec.target.size(), 0.0);
    };
}

Predictor cheat_predictor() {
    return [](const gen::PromptRecord& rec) {
        return scm::linear_cf(rec.beta, rec.x_anchor(), rec.y_anchor(), rec.x_query);
    };
}

Predictor ols_predictor() {
    return [](const gen::PromptRecord& rec) {
        const int e_dim = rec.tokens.cols();
        std::vector<double> pred(static_cast<std::size_t>(e_dim));
        std::vector<double> xs(static_cast<std::size_t>(rec.n)), ys(static_cast<std::size_t>(rec.n));
        for (int e = 0; e < e_dim; ++e) {
            for (int i = 0; i < rec.n; ++i) {
                xs[static_cast<std::size_t>(i)] = rec.tokens.at(2 * i, e);
                ys[static_cast<std::size_t>(i)] = rec.tokens.at(2 * i + 1, e);
            }
            const double beta_hat = scm::ols_fit(xs, ys);
            pred[static_cast<std::size_t>(e)] =
                scm::ols_cf(beta_hat, rec.tokens.at(2 * (rec.z - 1), e),
                            rec.tokens.at(2 * rec.z - 1, e), rec.x_query[static_cast<std::size_t>(e)]);
        }
        return pred;
    };
}

std::pair<double, double> bootstrap_ci(const std::vector<double>& samples, double alpha,
                                       int resamples, rng::Stream& stream) {
    if (samples.empty()) throw ConfigError("bootstrap_ci: empty sample");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("bootstrap_ci: alpha must be in (0,1)");
    const std::size_t n = samples.size();
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= static_cast<double>(n);

    std::vector<double> means(static_cast<std::size_t>(resamples));
    for (int r = 0; r < resamples; ++r) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += samples[static_cast<std::size_t>(stream.uniform_int(0, static_cast<std::int64_t>(n) - 1))];
        }
        means[static_cast<std::size_t>(r)] = acc / static_cast<double>(n);
    }
    std::sort(means.begin(), means.end());
    const double q_hi = quantile_sorted(means, 1.0 - alpha / 2.0);
    const double q_lo = quantile_sorted(means, alpha / 2.0);
    return {2.0 * mean - q_hi, 2.0 * mean - q_lo};
}

namespace {

EvalCurve curve_over_predictor(const Predictor& predict, const gen::GenConfig& cfg,
                               const std::vector<int>& lengths, int seqs, std::uint64_t eval_seed,
                               double alpha, int resamples, int threads) {
    cfg.validate();
    EvalCurve curve;
    curve.sequences = seqs;
    gen::GenConfig ecfg = cfg;
    ecfg.seed = eval_seed;
    for (std::size_t li = 0; li < lengths.size(); ++li) {
        const int n = lengths[li];
        if (n < 1) throw ConfigError("eval_curve: context length must be >= 1");
        // An anchor beyond the requested length clamps to the final pair.
        std::optional<int> z_override;
        if (cfg.task == gen::Task::kCounterfactual && cfg.fixed_z && *cfg.fixed_z > n) {
            z_override = n;
        }
        std::vector<double> sq(static_cast<std::size_t>(seqs),
                               std::numeric_limits<double>::quiet_NaN());
        util::parallel_for(seqs, threads, [&](int i) {
            const std::uint64_t index = li * static_cast<std::uint64_t>(seqs) + static_cast<std::uint64_t>(i);
            const gen::PromptRecord rec = gen::sample_sequence(ecfg, index, n, z_override);
            std::vector<double> pred;
            try {
                pred = predict(rec);
            } catch (const DegenerateDesignError&) {
                return;  // slot stays NaN and is excluded below
            }
            double acc = 0.0;
            for (std::size_t e = 0; e < pred.size(); ++e) {
                const double d = pred[e] - rec.target[e];
                acc += d * d;
            }
            sq[static_cast<std::size_t>(i)] = acc / static_cast<double>(pred.size());
        });
        std::vector<double> kept;
        kept.reserve(sq.size());
        for (double v : sq) {
            if (std::isnan(v)) {
                ++curve.skipped;
            } else {
                kept.push_back(v);
            }
        }
        if (kept.empty()) throw ConfigError("eval_curve: every sequence was degenerate");
        double mean = 0.0;
        for (double v : kept) mean += v;
        mean /= static_cast<double>(kept.size());
        rng::Stream boot(eval_seed, li, rng::kBootstrap);
        const auto [lo, hi] = bootstrap_ci(kept, alpha, resamples, boot);
        curve.lengths.push_back(n);
        curve.mean_mse.push_back(mean);
        curve.ci_lo.push_back(lo);
        curve.ci_hi.push_back(hi);
    }
    return curve;
}

}  // namespace

EvalCurve eval_curve(const Predictor& predict, const gen::GenConfig& cfg,
                     const std::vector<int>& lengths, int seqs_per_length, std::uint64_t eval_seed,
                     double alpha, int resamples, int threads) {
    return curve_over_predictor(predict, cfg, lengths, seqs_per_length, eval_seed, alpha, resamples,
                                threads);
}

EvalCurve ols_baseline_curve(const gen::GenConfig& cfg, const std::vector<int>& lengths,
                             int seqs_per_length, std::uint64_t eval_seed, double alpha,
                             int resamples, int threads) {
    return curve_over_predictor(ols_predictor(), cfg, lengths, seqs_per_length, eval_seed, alpha,
                                resamples, threads);
}

ProbeFit probe_fit(const std::vector<std::vector<double>>& features,
                   const std::vector<double>& targets) {
    if (features.empty() || features.size() != targets.size()) {
        throw ConfigError("probe_fit: inconsistent data");
    }
    const std::size_t n = features.size();
    const std::size_t p = features[0].size() + 1;  // intercept first

    std::vector<double> ata(p * p, 0.0);
    std::vector<double> aty(p, 0.0);
    std::vector<double> row(p);
    for (std::size_t i = 0; i < n; ++i) {
        row[0] = 1.0;
        for (std::size_t j = 1; j < p; ++j) row[j] = features[i][j - 1];
        for (std::size_t a = 0; a < p; ++a) {
            aty[a] += row[a] * targets[i];
            for (std::size_t b = a; b < p; ++b) ata[a * p + b] += row[a] * row[b];
        }
    }
    for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = 0; b < a; ++b) ata[a * p + b] = ata[b * p + a];
    }

    auto cholesky_solve = [&](std::vector<double> m, std::vector<double> rhs,
                              std::vector<double>& out) {
        // in-place LL^T; fails on a non-positive pivot
        for (std::size_t a = 0; a < p; ++a) {
            for (std::size_t b = a; b < p; ++b) {
                double s = m[a * p + b];
                for (std::size_t k = 0; k < a; ++k) s -= m[a * p + k] * m[b * p + k];
                if (a == b) {
                    if (s <= 1e-12) return false;
                    m[a * p + a] = std::sqrt(s);
                } else {
                    m[b * p + a] = s / m[a * p + a];
                }
            }
        }
        for (std::size_t a = 0; a < p; ++a) {
            double s = rhs[a];
            for (std::size_t k = 0; k < a; ++k) s -= m[a * p + k] * rhs[k];
            rhs[a] = s / m[a * p + a];
        }
        out.assign(p, 0.0);
        for (std::size_t a = p; a-- > 0;) {
            double s = rhs[a];
            for (std::size_t k = a + 1; k < p; ++k) s -= m[k * p + a] * out[k];
            out[a] = s / m[a * p + a];
        }
        return true;
    };

    ProbeFit fit;
    if (!cholesky_solve(ata, aty, fit.weights)) {
        fit.ridge_used = true;
        std::vector<double> ridged = ata;
        for (std::size_t a = 0; a < p; ++a) ridged[a * p + a] += 1e-6;
        if (!cholesky_solve(ridged, aty, fit.weights)) {
            throw NumericError("probe_fit: ridge-regularized system still singular");
        }
    }
    return fit;
}

double probe_r2(const ProbeFit& fit, const std::vector<std::vector<double>>& features,
                const std::vector<double>& targets) {
    if (features.empty() || features.size() != targets.size()) {
        throw ConfigError("probe_r2: inconsistent data");
    }
    double mean = 0.0;
    for (double t : targets) mean += t;
    mean /= static_cast<double>(targets.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        double pred = fit.weights[0];
        for (std::size_t j = 0; j < features[i].size(); ++j) pred += fit.weights[j + 1] * features[i][j];
        ss_res += (targets[i] - pred) * (targets[i] - pred);
        ss_tot += (targets[i] - mean) * (targets[i] - mean);
    }
    if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
    return 1.0 - ss_res / ss_tot;
}

double adjusted_r2(double r2, int n, int p) {
    return 1.0 - (1.0 - r2) * (static_cast<double>(n) - 1.0) / (static_cast<double>(n) - p - 1.0);
}

ProbeResult probe_layers(const model::ModelState& state, const model::TransformerConfig& mcfg,
                         const gen::GenConfig& gcfg, ProbeTarget target, int train_n, int eval_n,
                         std::uint64_t seed, const ProbeOptions& options) {
    mcfg.validate();
    gcfg.validate();
    const int total = train_n + eval_n;
    const int layers = mcfg.layers;
    const int d = mcfg.hidden;
    const int e_dim = gcfg.embed_dim;

    // features[l][i] = residual row after layer l+1; diffs are against the
    // stream one sublayer stack earlier (the embedding for layer 1).
    std::vector<std::vector<std::vector<double>>> after(static_cast<std::size_t>(layers));
    std::vector<std::vector<std::vector<double>>> diff(static_cast<std::size_t>(layers));
    for (int l = 0; l < layers; ++l) {
        after[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(total),
                                                  std::vector<double>(static_cast<std::size_t>(d)));
        diff[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(total),
                                                 std::vector<double>(static_cast<std::size_t>(d)));
    }
    std::vector<std::vector<double>> targets(static_cast<std::size_t>(e_dim),
                                             std::vector<double>(static_cast<std::size_t>(total)));

    gen::GenConfig pcfg = gcfg;
    pcfg.seed = rng::derive_key({seed, 0xbeefull});
    model::ModelConfig front;
    front.type = model::ModelConfig::Type::kTransformer;
    front.transformer = mcfg;

    util::parallel_for(total, options.threads, [&](int i) {
        const gen::PromptRecord rec = gen::sample_sequence(pcfg, static_cast<std::uint64_t>(i));
        model::ForwardTrace trace;
        (void)model::gpt2_forward(state, rec.tokens, mcfg, &trace);
        const int row = rec.tokens.rows() - 1;
        for (int l = 0; l < layers; ++l) {
            const ad::Tensor& cur = options.use_pre_residual ? trace.residual_pre[static_cast<std::size_t>(l)]
                                                             : trace.residual_post[static_cast<std::size_t>(l)];
            const ad::Tensor& prev = l == 0 ? trace.embed
                                            : (options.use_pre_residual
                                                   ? trace.residual_pre[static_cast<std::size_t>(l - 1)]
                                                   : trace.residual_post[static_cast<std::size_t>(l - 1)]);
            for (int j = 0; j < d; ++j) {
                after[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    cur.at(row, j);
                diff[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    cur.at(row, j) - prev.at(row, j);
            }
        }
        for (int e = 0; e < e_dim; ++e) {
            targets[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)] =
                target == ProbeTarget::kTheta ? rec.theta[static_cast<std::size_t>(e)]
                                              : rec.beta[static_cast<std::size_t>(e)];
        }
    });

    if (options.permute_targets) {
        rng::Stream s(seed, 1, rng::kShuffle);
        for (int e = 0; e < e_dim; ++e) {
            auto& t = targets[static_cast<std::size_t>(e)];
            for (std::size_t i = t.size(); i > 1; --i) {
                std::swap(t[i - 1], t[static_cast<std::size_t>(s.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
            }
        }
    }

    ProbeResult result;
    result.train_n = train_n;
    result.eval_n = eval_n;
    std::uint64_t digest = 0x6A09E667F3BCC909ull;
    auto run_probe = [&](const std::vector<std::vector<double>>& feats, double& adj_out,
                         std::uint8_t& ridge_out) {
        double adj_sum = 0.0;
        bool ridge = false;
        for (int e = 0; e < e_dim; ++e) {
            std::vector<std::vector<double>> train_x(feats.begin(), feats.begin() + train_n);
            std::vector<std::vector<double>> eval_x(feats.begin() + train_n, feats.end());
            const auto& t = targets[static_cast<std::size_t>(e)];
            std::vector<double> train_y(t.begin(), t.begin() + train_n);
            std::vector<double> eval_y(t.begin() + train_n, t.end());
            const ProbeFit fit = probe_fit(train_x, train_y);
            ridge = ridge || fit.ridge_used;
            for (double w : fit.weights) digest = mix_double(digest, w);
            adj_sum += adjusted_r2(probe_r2(fit, eval_x, eval_y), eval_n, d);
        }
        adj_out = adj_sum / e_dim;
        ridge_out = ridge ? 1 : 0;
    };

    for (int l = 0; l < layers; ++l) {
        result.layers.push_back(l + 1);
        double adj = 0.0;
        std::uint8_t ridge = 0;
        run_probe(after[static_cast<std::size_t>(l)], adj, ridge);
        result.adj_r2_after.push_back(adj);
        result.ridge_after.push_back(ridge);
        run_probe(diff[static_cast<std::size_t>(l)], adj, ridge);
        result.adj_r2_diff.push_back(adj);
        result.ridge_diff.push_back(ridge);
    }
    result.weights_digest = digest;
    return result;
}

namespace {

struct MassAccumulator {
    int layers = 0, heads = 0;
    // per (z index, layer, head): sum and count
    std::vector<double> y_sum, x_sum;
    std::vector<long> count;

    void init(int z_count, int l, int h) {
        layers = l;
        heads = h;
        y_sum.assign(static_cast<std::size_t>(z_count) * l * h, 0.0);
        x_sum.assign(y_sum.size(), 0.0);
        count.assign(y_sum.size(), 0);
    }
    std::size_t idx(int zi, int l, int h) const {
        return (static_cast<std::size_t>(zi) * layers + l) * heads + h;
    }
    void add(const std::vector<std::vector<ad::Tensor>>& attention, int zi, int z, int n_pairs) {
        const int z_row = 2 * n_pairs;
        const int x_col = 2 * (z - 1);
        const int y_col = 2 * z - 1;
        for (int l = 0; l < layers; ++l) {
            for (int h = 0; h < heads; ++h) {
                const ad::Tensor& a = attention[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
                const std::size_t k = idx(zi, l, h);
                y_sum[k] += a.at(z_row, y_col);
                x_sum[k] += a.at(z_row, x_col);
                count[k] += 1;
            }
        }
    }
};

AttnSummary finalize_masses(const MassAccumulator& acc, int z_count, double threshold) {
    AttnSummary summary;
    summary.layers = acc.layers;
    summary.heads = acc.heads;
    summary.threshold = threshold;
    summary.y_mass.assign(static_cast<std::size_t>(acc.layers) * acc.heads, 0.0);
    summary.x_mass.assign(summary.y_mass.size(), 0.0);
    summary.min_y_mass_over_z.assign(summary.y_mass.size(), 1.0);
    for (int l = 0; l < acc.layers; ++l) {
        for (int h = 0; h < acc.heads; ++h) {
            const std::size_t flat = static_cast<std::size_t>(l) * acc.heads + h;
            double y_total = 0.0, x_total = 0.0;
            long n_total = 0;
            for (int zi = 0; zi < z_count; ++zi) {
                const std::size_t k = acc.idx(zi, l, h);
                y_total += acc.y_sum[k];
                x_total += acc.x_sum[k];
                n_total += acc.count[k];
                const double z_mean = acc.count[k] > 0 ? acc.y_sum[k] / acc.count[k] : 0.0;
                summary.min_y_mass_over_z[flat] = std::min(summary.min_y_mass_over_z[flat], z_mean);
            }
            summary.y_mass[flat] = n_total > 0 ? y_total / n_total : 0.0;
            summary.x_mass[flat] = n_total > 0 ? x_total / n_total : 0.0;
        }
    }
    for (int l = 0; l < acc.layers; ++l) {
        for (int h = 0; h < acc.heads; ++h) summary.ranking.emplace_back(l, h);
    }
    std::stable_sort(summary.ranking.begin(), summary.ranking.end(),
                     [&](const auto& a, const auto& b) {
                         return summary.y_mass[static_cast<std::size_t>(a.first) * acc.heads + a.second] >
                                summary.y_mass[static_cast<std::size_t>(b.first) * acc.heads + b.second];
                     });
    for (const auto& [l, h] : summary.ranking) {
        if (summary.min_y_mass_over_z[static_cast<std::size_t>(l) * acc.heads + h] > threshold) {
            summary.qualified.emplace_back(l, h);
        }
    }
    return summary;
}

}  // namespace

AttnSummary detect_abduction_heads(const model::ModelState& state,
                                   const model::TransformerConfig& mcfg,
                                   const gen::GenConfig& gcfg, const std::vector<int>& z_values,
                                   int batches, int seqs_per_batch, int n_pairs, double threshold,
                                   std::uint64_t seed, int threads) {
    mcfg.validate();
    if (mcfg.variant == model::Variant::kMlpOnly) {
        throw ConfigError("detect_abduction_heads: the mlp_only variant has no attention maps");
    }
    if (z_values.empty()) throw ConfigError("detect_abduction_heads: need at least one z value");
    for (int z : z_values) {
        if (z < 1 || z > n_pairs) throw ConfigError("detect_abduction_heads: z outside 1..n_pairs");
    }
    gen::GenConfig acfg = gcfg;
    acfg.seed = rng::derive_key({seed, 0xa77ull});
    acfg.fixed_z.reset();

    const int z_count = static_cast<int>(z_values.size());
    const int total = z_count * batches * seqs_per_batch;
    std::vector<MassAccumulator> slots(static_cast<std::size_t>(total));
    util::parallel_for(total, threads, [&](int i) {
        const int zi = i / (batches * seqs_per_batch);
        const gen::PromptRecord rec =
            gen::sample_sequence(acfg, static_cast<std::uint64_t>(i), n_pairs,
                                 z_values[static_cast<std::size_t>(zi)]);
        model::ForwardTrace trace;
        (void)model::gpt2_forward(state, rec.tokens, mcfg, &trace);
        MassAccumulator& acc = slots[static_cast<std::size_t>(i)];
        acc.init(z_count, mcfg.layers, mcfg.heads);
        acc.add(trace.attention, zi, z_values[static_cast<std::size_t>(zi)], n_pairs);
    });
    MassAccumulator merged;
    merged.init(z_count, mcfg.layers, mcfg.heads);
    for (const MassAccumulator& acc : slots) {
        for (std::size_t k = 0; k < merged.y_sum.size(); ++k) {
            merged.y_sum[k] += acc.y_sum[k];
            merged.x_sum[k] += acc.x_sum[k];
            merged.count[k] += acc.count[k];
        }
    }
    return finalize_masses(merged, z_count, threshold);
}

AttnSummary summarize_attention(const std::vector<std::vector<std::vector<ad::Tensor>>>& traces,
                                const std::vector<int>& z_values,
                                const std::vector<int>& z_of_trace, int n_pairs, double threshold) {
    if (traces.empty() || traces.size() != z_of_trace.size()) {
        throw ConfigError("summarize_attention: inconsistent traces");
    }
    MassAccumulator acc;
    acc.init(static_cast<int>(z_values.size()), static_cast<int>(traces[0].size()),
             static_cast<int>(traces[0][0].size()));
    for (std::size_t t = 0; t < traces.size(); ++t) {
        const auto it = std::find(z_values.begin(), z_values.end(), z_of_trace[t]);
        if (it == z_values.end()) throw ConfigError("summarize_attention: trace z not in z_values");
        acc.add(traces[t], static_cast<int>(it - z_values.begin()), z_of_trace[t], n_pairs);
    }
    return finalize_masses(acc, static_cast<int>(z_values.size()), threshold);
}

std::vector<DiversityRow> diversity_sweep(const std::vector<int>& pool_sizes,
                                          const std::vector<gen::ThetaDist>& train_dists,
                                          const std::vector<gen::ThetaDist>& eval_dists,
                                          const model::ModelConfig& mcfg,
                                          const gen::GenConfig& gcfg_base,
                                          const train::TrainConfig& tcfg, int eval_length,
                                          int eval_seqs, std::uint64_t eval_seed) {
    std::vector<DiversityRow> rows;
    for (gen::ThetaDist tdist : train_dists) {
        for (int pool : pool_sizes) {
            gen::GenConfig gcfg = gcfg_base;
            gcfg.theta_dist = tdist;
            gcfg.diversity = pool;
            gcfg.seed = rng::derive_key({gcfg_base.seed, static_cast<std::uint64_t>(pool),
                                         static_cast<std::uint64_t>(tdist)});
            model::ModelConfig cell_model = mcfg;
            if (cell_model.type == model::ModelConfig::Type::kTransformer) {
                cell_model.transformer.init_seed = rng::derive_key({gcfg.seed, 0x11ull});
            } else {
                cell_model.rnn.init_seed = rng::derive_key({gcfg.seed, 0x11ull});
            }
            const train::TrainOutput out = train::train(cell_model, gcfg, tcfg);
            const double pool_ess =
                tdist == gen::ThetaDist::kUniform
                    ? static_cast<double>(pool)
                    : gen::ess(gen::make_pool(gcfg).weights);
            for (gen::ThetaDist edist : eval_dists) {
                gen::GenConfig ecfg = gcfg_base;
                ecfg.theta_dist = edist;
                ecfg.diversity.reset();
                const EvalCurve curve =
                    eval_curve(model_predictor(out.checkpoint.state, cell_model), ecfg,
                               {eval_length}, eval_seqs, eval_seed, 0.05, 2000, tcfg.threads);
                DiversityRow row;
                row.pool = pool;
                row.train_dist = gen::theta_dist_name(tdist);
                row.eval_dist = gen::theta_dist_name(edist);
                row.ess = pool_ess;
                row.mse = curve.mean_mse[0];
                row.ci_lo = curve.ci_lo[0];
                row.ci_hi = curve.ci_hi[0];
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

void write_curve_csv(const EvalCurve& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("write_curve_csv: cannot open " + path);
    out << "length,mean_mse,ci_lo,ci_hi,sequences,skipped\n";
    for (std::size_t i = 0; i < curve.lengths.size(); ++i) {
        out << curve.lengths[i] << "," << fmt_g17(curve.mean_mse[i]) << "," << fmt_g17(curve.ci_lo[i])
            << "," << fmt_g17(curve.ci_hi[i]) << "," << curve.sequences << "," << curve.skipped
            << "\n";
    }
}

void write_curve_json(const EvalCurve& curve, const std::string& path) {
    json j;
    j["lengths"] = curve.lengths;
    j["mean_mse"] = curve.mean_mse;
    j["ci_lo"] = curve.ci_lo;
    j["ci_hi"] = curve.ci_hi;
    j["sequences"] = curve.sequences;
    j["skipped"] = curve.skipped;
    std::ofstream out(path);
    if (!out) throw ConfigError("write_curve_json: cannot open " + path);
    out << j.dump(2) << "\n";
}

void write_probe_csv(const ProbeResult& probe, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("write_probe_csv: cannot open " + path);
    out << "layer,adj_r2_after,adj_r2_diff,ridge_after,ridge_diff\n";
    for (std::size_t i = 0; i < probe.layers.size(); ++i) {
        out << probe.layers[i] << "," << fmt_g17(probe.adj_r2_after[i]) << ","
            << fmt_g17(probe.adj_r2_diff[i]) << "," << static_cast<int>(probe.ridge_after[i]) << ","
            << static_cast<int>(probe.ridge_diff[i]) << "\n";
    }
}

void write_probe_json(const ProbeResult& probe, const std::string& path) {
    json j;
    j["layers"] = probe.layers;
    j["adj_r2_after"] = probe.adj_r2_after;
    j["adj_r2_diff"] = probe.adj_r2_diff;
    j["train_n"] = probe.train_n;
    j["eval_n"] = probe.eval_n;
    j["weights_digest"] = probe.weights_digest;
    std::ofstream out(path);
    if (!out) throw ConfigError("write_probe_json: cannot open " + path);
    out << j.dump(2) << "\n";
}

void write_attn_csv(const AttnSummary& attn, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("write_attn_csv: cannot open " + path);
    out << "layer,head,y_mass,x_mass,min_y_mass,qualified\n";
    for (const auto& [l, h] : attn.ranking) {
        const std::size_t k = static_cast<std::size_t>(l) * attn.heads + h;
        const bool q = std::find(attn.qualified.begin(), attn.qualified.end(),
                                 std::make_pair(l, h)) != attn.qualified.end();
        out << l << "," << h << "," << fmt_g17(attn.y_mass[k]) << "," << fmt_g17(attn.x_mass[k])
            << "," << fmt_g17(attn.min_y_mass_over_z[k]) << "," << (q ? 1 : 0) << "\n";
    }
}

void write_attn_json(const AttnSummary& attn, const std::string& path) {
    json j;
    j["layers"] = attn.layers;
    j["heads"] = attn.heads;
    j["threshold"] = attn.threshold;
    j["y_mass"] = attn.y_mass;
    j["x_mass"] = attn.x_mass;
    j["min_y_mass_over_z"] = attn.min_y_mass_over_z;
    json rank = json::array();
    for (const auto& [l, h] : attn.ranking) rank.push_back({{"layer", l}, {"head", h}});
    j["ranking"] = std::move(rank);
    json qual = json::array();
    for (const auto& [l, h] : attn.qualified) qual.push_back({{"layer", l}, {"head", h}});
    j["qualified"] = std::move(qual);
    std::ofstream out(path);
    if (!out) throw ConfigError("write_attn_json: cannot open " + path);
    out << j.dump(2) << "\n";
}

void write_diversity_csv(const std::vector<DiversityRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("write_diversity_csv: cannot open " + path);
    out << "pool,train_dist,eval_dist,ess,mse,ci_lo,ci_hi\n";
    for (const DiversityRow& r : rows) {
        out << r.pool << "," << r.train_dist << "," << r.eval_dist << "," << fmt_g17(r.ess) << ","
            << fmt_g17(r.mse) << "," << fmt_g17(r.ci_lo) << "," << fmt_g17(r.ci_hi) << "\n";
    }
}

void write_diversity_json(const std::vector<DiversityRow>& rows, const std::string& path) {
    json arr = json::array();
    for (const DiversityRow& r : rows) {
        arr.push_back({{"pool", r.pool},
                       {"train_dist", r.train_dist},
                       {"eval_dist", r.eval_dist},
                       {"ess", r.ess},
                       {"mse", r.mse},
                       {"ci_lo", r.ci_lo},
                       {"ci_hi", r.ci_hi}});
    }
    std::ofstream out(path);
    if (!out) throw ConfigError("write_diversity_json: cannot open " + path);
    out << arr.dump(2) << "\n";
}

}  // namespace iccr::analysis
