// Independent reference implementations used to check the library. These
// deliberately avoid the code paths under test: dense inverses instead of
// factorizations, finite differences instead of analytic gradients,
// exhaustive enumeration instead of iterative solvers.
#pragma once

#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "covdetect/model.hpp"

namespace oracles {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Objective via explicit inverse and eigenvalue log-determinant.
inline double mle_objective_dense(const MatrixXcd& S, const VectorXd& gamma,
                                  const MatrixXcd& cov_sample, double noise_var) {
    const Eigen::Index L = S.rows();
    MatrixXcd sigma = S * gamma.asDiagonal() * S.adjoint() +
                      noise_var * MatrixXcd::Identity(L, L);
    Eigen::SelfAdjointEigenSolver<MatrixXcd> eig(sigma);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < L; ++i) logdet += std::log(eig.eigenvalues()[i]);
    const MatrixXcd inv = sigma.inverse();
    return logdet + (inv * cov_sample).trace().real();
}

// Central finite differences of a scalar function of gamma.
template <typename F>
inline VectorXd finite_difference_gradient(const F& f, const VectorXd& gamma,
                                           double step = 1e-5) {
    VectorXd g(gamma.size());
    for (Eigen::Index i = 0; i < gamma.size(); ++i) {
        VectorXd hi = gamma, lo = gamma;
        hi[i] += step;
        lo[i] -= step;
        g[i] = (f(hi) - f(lo)) / (2.0 * step);
    }
    return g;
}

// Projected gradient descent for min ||Sigma(gamma) - cov||_F^2, gamma >= 0.
inline VectorXd nnls_projected_gradient(const MatrixXcd& S,
                                        const MatrixXcd& cov_sample,
                                        double noise_var, int iters = 20000) {
    const Eigen::Index L = S.rows();
    const Eigen::Index N = S.cols();
    MatrixXcd lift(L * L, N);
    for (Eigen::Index n = 0; n < N; ++n)
        for (Eigen::Index j = 0; j < L; ++j)
            lift.col(n).segment(j * L, L) = std::conj(S(j, n)) * S.col(n);
    Eigen::VectorXcd target(L * L);
    for (Eigen::Index j = 0; j < L; ++j)
        target.segment(j * L, L) = cov_sample.col(j);
    for (Eigen::Index i = 0; i < L; ++i) target[i * L + i] -= noise_var;

    const MatrixXd G = (lift.adjoint() * lift).real();
    const VectorXd h = (lift.adjoint() * target).real();
    const double lip = 2.0 * G.operatorNorm();
    VectorXd x = VectorXd::Zero(N);
    for (int it = 0; it < iters; ++it) {
        const VectorXd grad = 2.0 * (G * x - h);
        x = (x - grad / lip).cwiseMax(0.0);
    }
    return x;
}

// Exhaustive active-set enumeration for
//   min (x - mu)' (J / M) (x - mu)  s.t.  mu_i >= 0 for i in inactive.
// Tries every subset of the inactive coordinates as the zero set, solves the
// equality-constrained minimum on the rest, keeps the best feasible point.
inline VectorXd qp_enumerate(const VectorXd& x, const MatrixXd& J, int M,
                             const std::vector<int>& inactive) {
    const int N = static_cast<int>(x.size());
    const MatrixXd Q = J / static_cast<double>(M);
    double best_obj = std::numeric_limits<double>::infinity();
    VectorXd best = VectorXd::Zero(N);
    const int n_subsets = 1 << inactive.size();
    for (int mask = 0; mask < n_subsets; ++mask) {
        std::vector<int> free_idx;
        std::vector<char> zeroed(N, 0);
        for (std::size_t j = 0; j < inactive.size(); ++j)
            if (mask & (1 << j)) zeroed[inactive[j]] = 1;
        for (int i = 0; i < N; ++i)
            if (!zeroed[i]) free_idx.push_back(i);

        VectorXd mu = VectorXd::Zero(N);
        if (!free_idx.empty()) {
            MatrixXd Qff(free_idx.size(), free_idx.size());
            VectorXd rhs(free_idx.size());
            for (std::size_t r = 0; r < free_idx.size(); ++r) {
                for (std::size_t c = 0; c < free_idx.size(); ++c)
                    Qff(r, c) = Q(free_idx[r], free_idx[c]);
                rhs[r] = Q.row(free_idx[r]).dot(x);
            }
            const VectorXd mf =
                Qff.completeOrthogonalDecomposition().solve(rhs);
            for (std::size_t r = 0; r < free_idx.size(); ++r)
                mu[free_idx[r]] = mf[r];
        }
        bool feasible = true;
        for (int i : inactive)
            if (mu[i] < -1e-11) feasible = false;
        if (!feasible) continue;
        for (int i : inactive) mu[i] = std::max(mu[i], 0.0);
        const double obj = (mu - x).dot(Q * (mu - x));
        if (obj < best_obj) {
            best_obj = obj;
            best = mu;
        }
    }
    return best;
}

// 1-D grid refinement for min_{g >= 0} f(g) on [0, hi].
template <typename F>
inline double grid_search_min(const F& f, double hi, int coarse = 4000,
                              int refinements = 8) {
    double lo = 0.0;
    double best_g = 0.0;
    double best_v = f(0.0);
    for (int round = 0; round < refinements; ++round) {
        const double step = (hi - lo) / coarse;
        for (int i = 0; i <= coarse; ++i) {
            const double g = lo + i * step;
            const double v = f(g);
            if (v < best_v) {
                best_v = v;
                best_g = g;
            }
        }
        const double new_lo = std::max(0.0, best_g - step);
        hi = best_g + step;
        lo = new_lo;
    }
    return best_g;
}

}  // namespace oracles
