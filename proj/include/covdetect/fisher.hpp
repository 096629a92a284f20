#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "covdetect/model.hpp"

namespace covdetect::fisher {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// J = M * (P .* conj(P)) with P = S^H Sigma^{-1} S. Real, symmetric,
// entrywise nonnegative, PSD; rank is at most min(N, L^2).
struct FisherMatrix {
    MatrixXd J;
    int M = 1;
};

inline FisherMatrix fisher_matrix(const MatrixXcd& S, const VectorXd& gamma,
                                  double noise_var, int M) {
    if (gamma.size() != S.cols())
        throw std::invalid_argument("fisher_matrix: dimension mismatch");
    const model::CovMatrix cov = model::true_covariance(S, gamma, noise_var);
    const Eigen::LLT<MatrixXcd> llt(cov.sigma);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("fisher_matrix: covariance factorization failed");
    const MatrixXcd P = S.adjoint() * llt.solve(S);
    MatrixXd J = static_cast<double>(M) * P.cwiseAbs2();
    J = 0.5 * (J + J.transpose()).eval();
    return FisherMatrix{std::move(J), M};
}

// Column-wise Kronecker lift: column n is conj(s_n) (x) s_n, so that
// vec(S diag(gamma) S^H) = S_hat * gamma for any real gamma.
inline MatrixXcd khatri_rao(const MatrixXcd& S) {
    const Eigen::Index L = S.rows();
    const Eigen::Index N = S.cols();
    MatrixXcd S_hat(L * L, N);
    for (Eigen::Index n = 0; n < N; ++n)
        for (Eigen::Index j = 0; j < L; ++j)
            S_hat.col(n).segment(j * L, L) = std::conj(S(j, n)) * S.col(n);
    return S_hat;
}

// Real re-encoding of the rows of khatri_rao(S). Row order is fixed:
// first the symmetric family, rows (i, j) with i <= j in lexicographic
// order, then the antisymmetric family with i < j. Off-diagonal rows carry
// a sqrt(2) factor so that ||D x|| = ||khatri_rao(S) x|| for every real x;
// the null space is unchanged by the scaling.
inline MatrixXd build_D(const MatrixXcd& S) {
    const Eigen::Index L = S.rows();
    const Eigen::Index N = S.cols();
    const double root2 = std::sqrt(2.0);
    MatrixXd D(L * L, N);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < L; ++i)
        for (Eigen::Index j = i; j < L; ++j, ++r) {
            const auto ri = S.row(i).array();
            const auto rj = S.row(j).array();
            D.row(r) = ri.real() * rj.real() + ri.imag() * rj.imag();
            if (i != j) D.row(r) *= root2;
        }
    for (Eigen::Index i = 0; i < L; ++i)
        for (Eigen::Index j = i + 1; j < L; ++j, ++r) {
            const auto ri = S.row(i).array();
            const auto rj = S.row(j).array();
            D.row(r) = root2 * (ri.real() * rj.imag() - ri.imag() * rj.real());
        }
    return D;
}

// Orthonormal basis of the numerical null space: right singular vectors with
// singular value <= rank_tol * sigma_max.
inline MatrixXd null_space(const MatrixXd& A, double rank_tol = 1e-9) {
    Eigen::BDCSVD<MatrixXd> svd(A, Eigen::ComputeFullV);
    const VectorXd& sv = svd.singularValues();
    const double cutoff = sv.size() > 0 ? rank_tol * sv(0) : 0.0;
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv(rank) > cutoff) ++rank;
    return svd.matrixV().rightCols(A.cols() - rank);
}

inline Eigen::Index numerical_rank(const MatrixXd& A, double rank_tol = 1e-9) {
    Eigen::BDCSVD<MatrixXd> svd(A);
    const VectorXd& sv = svd.singularValues();
    const double cutoff = sv.size() > 0 ? rank_tol * sv(0) : 0.0;
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv(rank) > cutoff) ++rank;
    return rank;
}

// Submatrices of a symmetric J under the (inactive, active) index split:
// A = J(I, I), B = J(I, Ic), C = J(Ic, Ic).
struct BlockSplit {
    MatrixXd A;
    MatrixXd B;
    MatrixXd C;
    std::vector<int> inactive_set;
    std::vector<int> active_set;
};

inline BlockSplit block_split(const MatrixXd& J,
                              const std::vector<int>& inactive_set) {
    const int N = static_cast<int>(J.rows());
    std::vector<char> is_inactive(N, 0);
    for (int i : inactive_set) {
        if (i < 0 || i >= N)
            throw std::out_of_range("block_split: index out of range");
        if (is_inactive[i])
            throw std::invalid_argument("block_split: duplicate index");
        is_inactive[i] = 1;
    }
    BlockSplit out;
    out.inactive_set = inactive_set;
    std::sort(out.inactive_set.begin(), out.inactive_set.end());
    for (int n = 0; n < N; ++n)
        if (!is_inactive[n]) out.active_set.push_back(n);

    const auto& I = out.inactive_set;
    const auto& Ic = out.active_set;
    out.A.resize(I.size(), I.size());
    out.B.resize(I.size(), Ic.size());
    out.C.resize(Ic.size(), Ic.size());
    for (std::size_t r = 0; r < I.size(); ++r) {
        for (std::size_t c = 0; c < I.size(); ++c) out.A(r, c) = J(I[r], I[c]);
        for (std::size_t c = 0; c < Ic.size(); ++c) out.B(r, c) = J(I[r], Ic[c]);
    }
    for (std::size_t r = 0; r < Ic.size(); ++r)
        for (std::size_t c = 0; c < Ic.size(); ++c) out.C(r, c) = J(Ic[r], Ic[c]);
    return out;
}

}  // namespace covdetect::fisher
