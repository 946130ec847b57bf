#include "iccr/scm.hpp"

#include <algorithm>
#include <cmath>

#include "iccr/errors.hpp"

namespace iccr::scm {

namespace {

constexpr double kMultiplicativeGuard = 1e-9;

void require_same_length(const std::vector<double>& a, const std::vector<double>& b,
                         const char* where) {
    if (a.size() != b.size()) throw DimensionError(std::string(where) + ": length mismatch");
}

[[noreturn]] void abduction_failure(const char* what, std::size_t component) {
    throw AbductionError(std::string("abduct_noise: ") + what + " at component " +
                         std::to_string(component));
}

}  // namespace

const char* noise_kind_name(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::kLinearAdditive: return "linear_additive";
        case NoiseKind::kAnm: return "anm";
        case NoiseKind::kMultiplicative: return "multiplicative";
        case NoiseKind::kExponential: return "exponential";
        case NoiseKind::kTanh: return "tanh";
        case NoiseKind::kSigmoid: return "sigmoid";
    }
    return "?";
}

NoiseKind noise_kind_from_name(const std::string& name) {
    if (name == "linear_additive") return NoiseKind::kLinearAdditive;
    if (name == "anm") return NoiseKind::kAnm;
    if (name == "multiplicative") return NoiseKind::kMultiplicative;
    if (name == "exponential") return NoiseKind::kExponential;
    if (name == "tanh") return NoiseKind::kTanh;
    if (name == "sigmoid") return NoiseKind::kSigmoid;
    throw ConfigError("unknown noise kind: " + name);
}

double default_multiplicative_normalizer() {
    return std::sqrt(kMultiplicativeVariance);
}

double NoiseModel::effective_normalizer() const {
    return normalizer > 0.0 ? normalizer : default_multiplicative_normalizer();
}

void NoiseModel::validate() const {
    if (!(tau > 0.0)) throw ConfigError("noise model: tau must be positive");
    if (normalizer < 0.0) throw ConfigError("noise model: normalizer must be positive");
}

std::vector<double> transform(const NoiseModel& model, const std::vector<double>& f_x,
                              const std::vector<double>& u) {
    require_same_length(f_x, u, "transform");
    model.validate();
    std::vector<double> y(f_x.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        switch (model.kind) {
            case NoiseKind::kLinearAdditive:
            case NoiseKind::kAnm:
                y[i] = f_x[i] + u[i];
                break;
            case NoiseKind::kMultiplicative:
                y[i] = f_x[i] * u[i];
                break;
            case NoiseKind::kExponential:
                y[i] = std::exp(f_x[i] + u[i]);
                break;
            case NoiseKind::kTanh:
                y[i] = std::tanh(model.tau * (f_x[i] + u[i]));
                break;
            case NoiseKind::kSigmoid:
                y[i] = 1.0 / (1.0 + std::exp(-model.tau * (f_x[i] + u[i])));
                break;
        }
    }
    return y;
}

std::vector<double> abduct_noise(const NoiseModel& model, const std::vector<double>& f_x,
                                 const std::vector<double>& y) {
    require_same_length(f_x, y, "abduct_noise");
    model.validate();
    std::vector<double> u(y.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        switch (model.kind) {
            case NoiseKind::kLinearAdditive:
            case NoiseKind::kAnm:
                u[i] = y[i] - f_x[i];
                break;
            case NoiseKind::kMultiplicative:
                if (std::abs(f_x[i]) <= kMultiplicativeGuard) {
                    abduction_failure("multiplicative mechanism value too close to zero", i);
                }
                u[i] = y[i] / f_x[i];
                break;
            case NoiseKind::kExponential:
                if (!(y[i] > 0.0)) abduction_failure("exponential mechanism requires y > 0", i);
                u[i] = std::log(y[i]) - f_x[i];
                break;
            case NoiseKind::kTanh:
                if (!(std::abs(y[i]) < 1.0)) abduction_failure("tanh mechanism requires |y| < 1", i);
                u[i] = std::atanh(y[i]) / model.tau - f_x[i];
                break;
            case NoiseKind::kSigmoid:
                if (!(y[i] > 0.0 && y[i] < 1.0)) {
                    abduction_failure("sigmoid mechanism requires y in (0,1)", i);
                }
                u[i] = std::log(y[i] / (1.0 - y[i])) / model.tau - f_x[i];
                break;
        }
    }
    return u;
}

std::vector<double> counterfactual(const NoiseModel& model, const std::vector<double>& f_xcf,
                                   const std::vector<double>& f_x, const std::vector<double>& y) {
    return transform(model, f_xcf, abduct_noise(model, f_x, y));
}

std::vector<double> linear_cf(const std::vector<double>& beta, const std::vector<double>& x,
                              const std::vector<double>& y, const std::vector<double>& x_cf) {
    require_same_length(beta, x, "linear_cf");
    require_same_length(x, y, "linear_cf");
    require_same_length(y, x_cf, "linear_cf");
    std::vector<double> out(y.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = beta[i] * (x_cf[i] - x[i]) + y[i];
    return out;
}

std::vector<double> mechanism_fx(const NoiseModel& model, const std::vector<double>& beta,
                                 const std::vector<double>& x) {
    require_same_length(beta, x, "mechanism_fx");
    std::vector<double> f(x.size());
    const double norm = model.effective_normalizer();
    for (std::size_t i = 0; i < f.size(); ++i) {
        f[i] = beta[i] * x[i];
        if (model.kind == NoiseKind::kMultiplicative) f[i] /= norm;
    }
    return f;
}

std::pair<std::vector<double>, std::vector<double>> apply_link(const NoiseModel& model,
                                                               const std::vector<double>& beta,
                                                               const std::vector<double>& u_x,
                                                               const std::vector<double>& u_y) {
    require_same_length(beta, u_x, "apply_link");
    require_same_length(u_x, u_y, "apply_link");
    std::vector<double> x = u_x;
    std::vector<double> y = transform(model, mechanism_fx(model, beta, x), u_y);
    return {std::move(x), std::move(y)};
}

std::vector<double> link_counterfactual(const NoiseModel& model, const std::vector<double>& beta,
                                        const std::vector<double>& u_y,
                                        const std::vector<double>& x_cf) {
    return transform(model, mechanism_fx(model, beta, x_cf), u_y);
}

double ols_fit(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw DimensionError("ols_fit: length mismatch");
    const std::size_t n = xs.size();
    if (n < 2) throw DegenerateDesignError("ols_fit: need at least two points");
    double x_mean = 0.0, y_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x_mean += xs[i];
        y_mean += ys[i];
    }
    x_mean /= static_cast<double>(n);
    y_mean /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xs[i] - x_mean;
        sxy += dx * (ys[i] - y_mean);
        sxx += dx * dx;
    }
    if (sxx == 0.0) throw DegenerateDesignError("ols_fit: zero design spread");
    return sxy / sxx;
}

double ols_cf(double beta_hat, double x_z, double y_z, double x_cf) {
    return beta_hat * (x_cf - x_z) + y_z;
}

PosteriorMeans bayes_posterior_means(const std::vector<double>& xs, const std::vector<double>& ys,
                                     const QuadratureGrid& grid) {
    if (xs.size() != ys.size() || xs.empty()) {
        throw DimensionError("bayes_posterior_means: inconsistent prompt");
    }
    if (grid.theta_points < 1 || grid.beta_points < 1) {
        throw ConfigError("bayes_posterior_means: grid needs at least one point per axis");
    }

    // Sufficient statistics make the per-cell log-likelihood O(1):
    //   sum_k (x_k - theta)^2            = sxx2 - 2 theta sx + n theta^2
    //   sum_k (y_k - beta x_k - theta)^2 = syy - 2 beta sxy - 2 theta sy
    //                                      + beta^2 sxx2 + 2 beta theta sx + n theta^2
    const double n = static_cast<double>(xs.size());
    double sx = 0.0, sy = 0.0, sxx2 = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx2 += xs[i] * xs[i];
        syy += ys[i] * ys[i];
        sxy += xs[i] * ys[i];
    }

    const int kt = grid.theta_points;
    const int kb = grid.beta_points;
    std::vector<double> log_w(static_cast<std::size_t>(kt) * kb);
    std::vector<double> betas(static_cast<std::size_t>(kt) * kb);
    const double theta_step = (grid.theta_hi - grid.theta_lo) / kt;
    // Conditional posterior of beta given theta: precision 1 + sum x^2,
    // mean (theta + sum x (y - theta)) / precision.
    const double beta_precision = 1.0 + sxx2;
    const double beta_sigma = 1.0 / std::sqrt(beta_precision);
    double max_log = -1e300;
    for (int i = 0; i < kt; ++i) {
        const double theta = grid.theta_lo + (i + 0.5) * theta_step;
        const double x_quad = sxx2 - 2.0 * theta * sx + n * theta * theta;
        double beta_mid, beta_half;
        if (grid.beta_center) {
            beta_mid = *grid.beta_center;
            beta_half = grid.beta_span;
        } else {
            beta_mid = (theta + sxy - theta * sx) / beta_precision;
            beta_half = grid.beta_span * beta_sigma;
        }
        for (int j = 0; j < kb; ++j) {
            const double beta = beta_mid + beta_half * (2.0 * (j + 0.5) / kb - 1.0);
            const double y_quad = syy - 2.0 * beta * sxy - 2.0 * theta * sy + beta * beta * sxx2 +
                                  2.0 * beta * theta * sx + n * theta * theta;
            const double prior_quad = (beta - theta) * (beta - theta);
            // Cell widths are constant across nodes (only the beta center
            // shifts with theta), so they cancel in the normalization.
            const double lw = -0.5 * (x_quad + y_quad + prior_quad);
            const std::size_t idx = static_cast<std::size_t>(i) * kb + j;
            log_w[idx] = lw;
            betas[idx] = beta;
            max_log = std::max(max_log, lw);
        }
    }

    double norm = 0.0, beta_mean = 0.0, theta_mean = 0.0;
    for (std::size_t idx = 0; idx < log_w.size(); ++idx) {
        const double w = std::exp(log_w[idx] - max_log);
        const int i = static_cast<int>(idx) / kb;
        norm += w;
        beta_mean += w * betas[idx];
        theta_mean += w * (grid.theta_lo + (i + 0.5) * theta_step);
    }
    return {beta_mean / norm, theta_mean / norm};
}

double bayes_cf_mean(const std::vector<double>& xs, const std::vector<double>& ys, int z_one_based,
                     double x_cf, const QuadratureGrid& grid) {
    if (z_one_based < 1 || static_cast<std::size_t>(z_one_based) > xs.size()) {
        throw ConfigError("bayes_cf_mean: anchor index out of range");
    }
    const PosteriorMeans post = bayes_posterior_means(xs, ys, grid);
    const double x_z = xs[static_cast<std::size_t>(z_one_based - 1)];
    const double y_z = ys[static_cast<std::size_t>(z_one_based - 1)];
    return post.beta * (x_cf - x_z) + y_z;
}

}  // namespace iccr::scm
