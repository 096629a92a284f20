#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "covdetect/fisher.hpp"
#include "covdetect/model.hpp"
#include "covdetect/rng.hpp"

namespace covdetect::solvers {

using Eigen::MatrixXcd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

enum class Regularizer { none, l1, log_sum };

struct SolverConfig {
    int max_sweeps = 500;
    double tol = 1e-4;  // stop when a full sweep improves the objective less
    Regularizer regularizer = Regularizer::none;
    double lambda = 0.0;
    double epsilon = 0.1;   // log-sum offset
    int antennas = 1;       // M; the penalty enters the objective as R(gamma)/M
    std::uint64_t seed = 0;
    int refactor_every = 50;  // rebuild Sigma^{-1} from scratch this often

    void validate() const {
        if (max_sweeps < 1)
            throw std::invalid_argument("SolverConfig: max_sweeps must be >= 1");
        if (tol <= 0.0) throw std::invalid_argument("SolverConfig: tol must be > 0");
        if (lambda < 0.0)
            throw std::invalid_argument("SolverConfig: lambda must be >= 0");
        if (epsilon <= 0.0)
            throw std::invalid_argument("SolverConfig: epsilon must be > 0");
        if (antennas < 1)
            throw std::invalid_argument("SolverConfig: antennas must be >= 1");
    }
};

struct Estimate {
    VectorXd gamma_hat;
    std::vector<double> objective_trace;  // objective after each sweep
    int sweeps_used = 0;
    int rejected_steps = 0;  // rank-1 updates refused by the positivity guard
    MatrixXcd sigma_inv;     // tracked inverse at exit (coordinate descent only)
};

struct Detection {
    std::vector<bool> active_flags;
    double threshold = 0.0;
};

/// log|Sigma| + tr(Sigma^{-1} Sigma_hat) with Sigma = S diag(gamma) S^H + noise_var I,
/// evaluated through a Cholesky factorization of Sigma.
inline double mle_objective(const MatrixXcd& S, const VectorXd& gamma,
                            const MatrixXcd& cov_sample, double noise_var) {
    const model::CovMatrix cov = model::true_covariance(S, gamma, noise_var);
    const Eigen::LLT<MatrixXcd> llt(cov.sigma);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("mle_objective: covariance not positive definite");
    double logdet = 0.0;
    const auto& Lf = llt.matrixLLT();
    for (Eigen::Index i = 0; i < Lf.rows(); ++i)
        logdet += 2.0 * std::log(Lf(i, i).real());
    const double tr = llt.solve(cov_sample).trace().real();
    return logdet + tr;
}

/// Gradient of mle_objective: entry i is s_i^H Sigma^{-1} s_i - s_i^H Sigma^{-1} Sigma_hat Sigma^{-1} s_i.
inline VectorXd mle_gradient(const MatrixXcd& S, const VectorXd& gamma,
                             const MatrixXcd& cov_sample, double noise_var) {
    if (cov_sample.rows() != S.rows() || cov_sample.cols() != S.rows())
        throw std::invalid_argument("mle_gradient: dimension mismatch");
    const model::CovMatrix cov = model::true_covariance(S, gamma, noise_var);
    const Eigen::LLT<MatrixXcd> llt(cov.sigma);
    const MatrixXcd U = llt.solve(S);
    const MatrixXcd W = cov_sample * U;
    VectorXd grad(S.cols());
    for (Eigen::Index i = 0; i < S.cols(); ++i)
        grad[i] = S.col(i).dot(U.col(i)).real() - U.col(i).dot(W.col(i)).real();
    return grad;
}

namespace detail {

struct Penalty {
    Regularizer kind = Regularizer::none;
    double weight = 0.0;  // lambda / M
    double epsilon = 0.1;

    double value(const VectorXd& gamma) const {
        switch (kind) {
            case Regularizer::none: return 0.0;
            case Regularizer::l1: return weight * gamma.sum();
            case Regularizer::log_sum: {
                double v = 0.0;
                for (Eigen::Index i = 0; i < gamma.size(); ++i)
                    v += std::log(epsilon + gamma[i]);
                return weight * v;
            }
        }
        return 0.0;
    }
};

// Change of the per-coordinate objective when gamma_n moves by delta, given
// a = s^H Sigma^{-1} s and b = s^H Sigma^{-1} Sigma_hat Sigma^{-1} s:
//   log(1 + delta a) - delta b / (1 + delta a) + penalty change.
inline double objective_delta(double delta, double a, double b,
                              const Penalty& pen, double gamma_n) {
    const double u = 1.0 + delta * a;
    double d = std::log1p(delta * a) - delta * b / u;
    if (pen.kind == Regularizer::l1) {
        d += pen.weight * delta;
    } else if (pen.kind == Regularizer::log_sum) {
        d += pen.weight * std::log1p(delta / (pen.epsilon + gamma_n));
    }
    return d;
}

// Minimizer of the unpenalized 1-D restriction, before clipping.
inline double step_plain(double a, double b) { return (b - a) / (a * a); }

// l1: stationarity in u = 1 + delta a reads  w u^2 + a u - b = 0; the unique
// nonnegative root gives the unconstrained minimizer.
inline double step_l1(double a, double b, double w) {
    if (w == 0.0) return step_plain(a, b);
    const double u = 2.0 * b / (a + std::sqrt(a * a + 4.0 * w * b));
    return (u - 1.0) / a;
}

// log-sum: stationarity is a quadratic in delta; evaluate the objective at
// every feasible stationary point and at the clip boundary, keep the best.
inline double step_log_sum(double a, double b, double w, double eps,
                           double gamma_n, const Penalty& pen) {
    if (w == 0.0) return std::max(step_plain(a, b), -gamma_n);
    const double e = eps + gamma_n;
    const double A2 = a * a * (1.0 + w);
    const double A1 = a * (1.0 + a * e) - b + 2.0 * w * a;
    const double A0 = e * (a - b) + w;

    double best_delta = 0.0;
    double best_value = 0.0;
    auto consider = [&](double delta) {
        if (!std::isfinite(delta)) return;
        delta = std::max(delta, -gamma_n);
        const double v = objective_delta(delta, a, b, pen, gamma_n);
        if (std::isfinite(v) && v < best_value) {
            best_value = v;
            best_delta = delta;
        }
    };
    const double disc = A1 * A1 - 4.0 * A2 * A0;
    if (disc >= 0.0) {
        const double s = std::sqrt(disc);
        const double q = -0.5 * (A1 + (A1 >= 0.0 ? s : -s));
        consider(q / A2);
        if (q != 0.0) consider(A0 / q);
    }
    consider(-gamma_n);
    return best_delta;
}

inline Estimate coordinate_descent_impl(const MatrixXcd& S,
                                        const MatrixXcd& cov_sample,
                                        double noise_var,
                                        const SolverConfig& config) {
    config.validate();
    const Eigen::Index L = S.rows();
    const Eigen::Index N = S.cols();
    if (cov_sample.rows() != L || cov_sample.cols() != L)
        throw std::invalid_argument("coordinate_descent: dimension mismatch");

    const Penalty pen{config.regularizer,
                      config.lambda / static_cast<double>(config.antennas),
                      config.epsilon};

    Estimate est;
    est.gamma_hat = VectorXd::Zero(N);
    VectorXd& gamma = est.gamma_hat;

    MatrixXcd sigma_inv =
        MatrixXcd::Identity(L, L) / std::complex<double>(noise_var, 0.0);
    double objective = static_cast<double>(L) * std::log(noise_var) +
                       cov_sample.trace().real() / noise_var + pen.value(gamma);

    auto perm_gen = rng::engine(rng::derive(config.seed, rng::Stream::permutation));
    std::vector<int> perm(N);
    std::iota(perm.begin(), perm.end(), 0);

    VectorXcd u(L), w(L);
    auto refactor = [&]() {
        const model::CovMatrix cov = model::true_covariance(S, gamma, noise_var);
        const Eigen::LLT<MatrixXcd> llt(cov.sigma);
        sigma_inv = llt.solve(MatrixXcd::Identity(L, L));
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < L; ++i)
            logdet += 2.0 * std::log(llt.matrixLLT()(i, i).real());
        objective = logdet + llt.solve(cov_sample).trace().real() + pen.value(gamma);
    };

    for (int sweep = 0; sweep < config.max_sweeps; ++sweep) {
        if (sweep > 0 && config.refactor_every > 0 &&
            sweep % config.refactor_every == 0)
            refactor();
        const double sweep_start = objective;
        std::shuffle(perm.begin(), perm.end(), perm_gen);
        for (int n : perm) {
            u.noalias() = sigma_inv * S.col(n);
            const double a = S.col(n).dot(u).real();
            if (!(a > 0.0)) continue;
            w.noalias() = cov_sample * u;
            const double b = u.dot(w).real();

            double delta;
            switch (pen.kind) {
                case Regularizer::none: delta = step_plain(a, b); break;
                case Regularizer::l1: delta = step_l1(a, b, pen.weight); break;
                case Regularizer::log_sum:
                    delta = step_log_sum(a, b, pen.weight, pen.epsilon,
                                         gamma[n], pen);
                    break;
            }
            delta = std::max(delta, -gamma[n]);
            if (delta == 0.0) continue;

            const double denom = 1.0 + delta * a;
            if (!(denom > 0.0) || !std::isfinite(denom)) {
                ++est.rejected_steps;
                continue;
            }
            sigma_inv.noalias() -= (delta / denom) * (u * u.adjoint());
            objective += objective_delta(delta, a, b, pen, gamma[n]);
            gamma[n] += delta;
        }
        est.objective_trace.push_back(objective);
        est.sweeps_used = sweep + 1;
        if (sweep_start - objective < config.tol) break;
    }
    est.sigma_inv = std::move(sigma_inv);
    return est;
}

}  // namespace detail

/// Random-permutation coordinate descent on the covariance log-likelihood,
/// with the rank-1 inverse update per coordinate step.
inline Estimate coordinate_descent_mle(const MatrixXcd& S,
                                       const MatrixXcd& cov_sample,
                                       double noise_var,
                                       const SolverConfig& config) {
    SolverConfig cfg = config;
    cfg.regularizer = Regularizer::none;
    cfg.lambda = 0.0;
    return detail::coordinate_descent_impl(S, cov_sample, noise_var, cfg);
}

/// Same scheme on the penalized objective; per-coordinate updates stay in
/// closed form for both the l1 and log-sum penalties.
inline Estimate coordinate_descent_regularized(const MatrixXcd& S,
                                               const MatrixXcd& cov_sample,
                                               double noise_var,
                                               const SolverConfig& config) {
    if (config.regularizer == Regularizer::none)
        throw std::invalid_argument(
            "coordinate_descent_regularized: regularizer must not be none");
    return detail::coordinate_descent_impl(S, cov_sample, noise_var, config);
}

/// Nonnegative least-squares fit of S diag(gamma) S^H + noise_var I to the
/// sample covariance, by cyclic coordinate descent with exact 1-D minima.
inline Estimate nnls(const MatrixXcd& S, const MatrixXcd& cov_sample,
                     double noise_var, const SolverConfig& config) {
    config.validate();
    const Eigen::Index L = S.rows();
    const Eigen::Index N = S.cols();
    if (cov_sample.rows() != L || cov_sample.cols() != L)
        throw std::invalid_argument("nnls: dimension mismatch");

    const MatrixXcd lift = fisher::khatri_rao(S);
    VectorXcd target(L * L);
    for (Eigen::Index j = 0; j < L; ++j)
        target.segment(j * L, L) = cov_sample.col(j);
    for (Eigen::Index i = 0; i < L; ++i) target[i * L + i] -= noise_var;

    const VectorXd curvature = lift.colwise().squaredNorm().transpose();

    Estimate est;
    est.gamma_hat = VectorXd::Zero(N);
    VectorXcd residual = -target;
    double objective = residual.squaredNorm();

    for (int sweep = 0; sweep < config.max_sweeps; ++sweep) {
        const double sweep_start = objective;
        for (Eigen::Index n = 0; n < N; ++n) {
            if (curvature[n] <= 0.0) continue;
            const double g = lift.col(n).dot(residual).real();
            double delta = -g / curvature[n];
            delta = std::max(delta, -est.gamma_hat[n]);
            if (delta == 0.0) continue;
            residual += delta * lift.col(n);
            objective += 2.0 * delta * g + delta * delta * curvature[n];
            est.gamma_hat[n] += delta;
        }
        est.objective_trace.push_back(objective);
        est.sweeps_used = sweep + 1;
        if (sweep_start - objective < config.tol) break;
    }
    return est;
}

/// Elementwise threshold on the estimate; raising the threshold never adds
/// an active flag.
inline Detection detect(const VectorXd& gamma_hat, double l_th) {
    Detection d;
    d.threshold = l_th;
    d.active_flags.resize(gamma_hat.size());
    for (Eigen::Index n = 0; n < gamma_hat.size(); ++n)
        d.active_flags[n] = gamma_hat[n] >= l_th;
    return d;
}

inline Detection detect(const Estimate& est, double l_th) {
    return detect(est.gamma_hat, l_th);
}

}  // namespace covdetect::solvers
