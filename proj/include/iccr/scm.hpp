#pragma once

#include <optional>
#include <string>
#include <vector>

namespace iccr::scm {

// Mechanism family: every kind is y = T(f(x), u) with T invertible in u.
enum class NoiseKind {
    kLinearAdditive,  // y = beta*x + u
    kAnm,             // y = f(x) + u
    kMultiplicative,  // y = f(x) * u (normalized variant in apply_link)
    kExponential,     // y = exp(f(x) + u)
    kTanh,            // y = tanh(tau * (f(x) + u))
    kSigmoid,         // y = sigmoid(tau * (f(x) + u))
};

const char* noise_kind_name(NoiseKind kind);
NoiseKind noise_kind_from_name(const std::string& name);

// Theoretical std of beta * X_CF * U_Y under the uniform-theta prior; the
// multiplicative mechanism divides by this so Var(Y_CF) is 1.
inline constexpr double kMultiplicativeVariance = 3410.4;
double default_multiplicative_normalizer();

struct NoiseModel {
    NoiseKind kind = NoiseKind::kLinearAdditive;
    double tau = 1.0 / 13.0;
    double normalizer = 0.0;  // 0 -> default sqrt(3410.4)

    double effective_normalizer() const;
    void validate() const;
};

struct LinearSCM {
    std::vector<double> theta;
    std::vector<double> beta;
};

struct FactualPair {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> u_x;  // optional metadata, may be empty
    std::vector<double> u_y;
};

struct CFQuery {
    int z = 1;  // 1-based anchor index
    std::vector<double> x_cf;
};

// y = T(f_x, u) for the kind's transformation.
std::vector<double> transform(const NoiseModel& model, const std::vector<double>& f_x,
                              const std::vector<double>& u);

// u = T^{-1}(f_x, y); throws AbductionError naming the offending component.
std::vector<double> abduct_noise(const NoiseModel& model, const std::vector<double>& f_x,
                                 const std::vector<double>& y);

// T(f_xcf, T^{-1}(f_x, y)) -- Lemma-style counterfactual on observed values.
std::vector<double> counterfactual(const NoiseModel& model, const std::vector<double>& f_xcf,
                                   const std::vector<double>& f_x, const std::vector<double>& y);

// beta (x_cf - x) + y, componentwise.
std::vector<double> linear_cf(const std::vector<double>& beta, const std::vector<double>& x,
                              const std::vector<double>& y, const std::vector<double>& x_cf);

// f(x) consistent with transform() for this kind (folds the multiplicative
// normalizer into f so the pure T stays normalizer-free).
std::vector<double> mechanism_fx(const NoiseModel& model, const std::vector<double>& beta,
                                 const std::vector<double>& x);

// Data-generating link: x = u_x, y = mechanism output. Returns (x, y).
std::pair<std::vector<double>, std::vector<double>> apply_link(const NoiseModel& model,
                                                               const std::vector<double>& beta,
                                                               const std::vector<double>& u_x,
                                                               const std::vector<double>& u_y);

// Ground-truth counterfactual from latents: mechanism at x_cf with noise u_y.
std::vector<double> link_counterfactual(const NoiseModel& model, const std::vector<double>& beta,
                                        const std::vector<double>& u_y,
                                        const std::vector<double>& x_cf);

double ols_fit(const std::vector<double>& xs, const std::vector<double>& ys);
double ols_cf(double beta_hat, double x_z, double y_z, double x_cf);

// Quadrature over the joint posterior of (theta, beta) under the generative
// prior: theta ~ U[theta_lo, theta_hi], beta|theta ~ N(theta, 1),
// x_i|theta ~ N(theta, 1), y_i|x_i,beta,theta ~ N(beta x_i + theta, 1).
// The conditional posterior of beta given theta is Gaussian and much sharper
// than the prior once a few pairs are observed, so the beta grid is placed on
// that conditional posterior (center and scale computed per theta node).
// Setting beta_center pins the grid explicitly instead; beta_span is then an
// absolute half-width.
struct QuadratureGrid {
    double theta_lo = -6.0;
    double theta_hi = 6.0;
    int theta_points = 384;
    double beta_span = 8.0;  // half-width in conditional-posterior stddevs
    int beta_points = 96;
    std::optional<double> beta_center;
};

struct PosteriorMeans {
    double beta = 0.0;
    double theta = 0.0;
};

// Joint posterior means of (beta, theta) given the in-context pairs.
PosteriorMeans bayes_posterior_means(const std::vector<double>& xs, const std::vector<double>& ys,
                                     const QuadratureGrid& grid);

// Posterior-predictive mean of beta (x_cf - x_z) + y_z for a 1-dim prompt.
double bayes_cf_mean(const std::vector<double>& xs, const std::vector<double>& ys, int z_one_based,
                     double x_cf, const QuadratureGrid& grid);

}  // namespace iccr::scm
