#include <catch_amalgamated.hpp>

#include "covdetect/fisher.hpp"
#include "covdetect/model.hpp"

using namespace covdetect;
using Catch::Approx;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("fisher_matrix: scalar closed form") {
    MatrixXcd s(1, 1);
    s << 1.0;
    VectorXd g(1);
    g << 0.4;
    const double noise_var = 0.3;
    const int M = 7;
    const auto fm = fisher::fisher_matrix(s, g, noise_var, M);
    const double expect = M / std::pow(0.4 + 0.3, 2.0);
    CHECK(fm.J(0, 0) == Approx(expect).epsilon(1e-12));
}

TEST_CASE("fisher_matrix: orthogonal columns at gamma = 0 give a diagonal J") {
    const int L = 4, N = 3, M = 5;
    // Orthogonal columns of norm sqrt(L).
    MatrixXcd S = MatrixXcd::Zero(L, N);
    for (int j = 0; j < N; ++j) S(j, j) = std::sqrt(static_cast<double>(L));
    const double noise_var = 0.6;
    const auto fm = fisher::fisher_matrix(S, VectorXd::Zero(N), noise_var, M);
    const double diag = M * L * L / (noise_var * noise_var);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
            CHECK(fm.J(i, j) == Approx(i == j ? diag : 0.0).margin(1e-10));
}

TEST_CASE("fisher_matrix: symmetric, entrywise nonnegative, PSD") {
    const auto S = model::gen_sequences(model::SequenceKind::gaussian, 5, 12, 6);
    const auto gt = model::gen_ground_truth(12, 4, 1.5, 6);
    const auto fm = fisher::fisher_matrix(S.entries, gt.gamma0, 0.5, 3);
    CHECK((fm.J - fm.J.transpose()).norm() < 1e-12 * fm.J.norm());
    CHECK(fm.J.minCoeff() >= 0.0);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(fm.J);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-8 * fm.J.norm());
}

TEST_CASE("fisher_matrix: Monte-Carlo score products match the closed form") {
    // Definition-level oracle at M = 1: empirical E[score_i score_j] over
    // simulated observations. Kept light here; the acceptance suite runs the
    // full-size version.
    const int L = 3, N = 4, n_draws = 200000;
    const auto S = model::gen_sequences(model::SequenceKind::gaussian, L, N, 8);
    const auto gt = model::gen_ground_truth(N, 2, 1.0, 8);
    const double noise_var = 0.5;
    const auto fm = fisher::fisher_matrix(S.entries, gt.gamma0, noise_var, 1);

    const auto cov = model::true_covariance(S.entries, gt.gamma0, noise_var);
    const Eigen::LLT<MatrixXcd> llt(cov.sigma);
    const MatrixXcd half = llt.matrixL();
    const MatrixXcd U = llt.solve(S.entries);  // Sigma^{-1} s_i per column
    VectorXd base(N);
    for (int i = 0; i < N; ++i)
        base[i] = S.entries.col(i).dot(U.col(i)).real();

    auto gen = rng::engine(99);
    MatrixXd mean = MatrixXd::Zero(N, N);
    MatrixXd second = MatrixXd::Zero(N, N);
    Eigen::VectorXcd z(L), y(L), w(N);
    for (int d = 0; d < n_draws; ++d) {
        for (int i = 0; i < L; ++i) z[i] = rng::complex_normal(gen);
        y = half * z;
        w = U.adjoint() * y;  // w_i = s_i^H Sigma^{-1} y
        VectorXd score(N);
        for (int i = 0; i < N; ++i) score[i] = std::norm(w[i]) - base[i];
        const MatrixXd outer = score * score.transpose();
        mean += outer;
        second += outer.cwiseAbs2();
    }
    mean /= n_draws;
    second /= n_draws;
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
            const double var = second(i, j) - mean(i, j) * mean(i, j);
            const double se = std::sqrt(std::max(var, 0.0) / n_draws);
            CHECK(std::abs(mean(i, j) - fm.J(i, j)) <= 4.0 * se + 1e-9);
        }
}

TEST_CASE("khatri_rao: closed forms") {
    MatrixXcd S(1, 3);
    S << std::complex<double>(1, 2), std::complex<double>(0, -1),
        std::complex<double>(2, 0);
    const MatrixXcd lift = fisher::khatri_rao(S);
    REQUIRE(lift.rows() == 1);
    for (int n = 0; n < 3; ++n)
        CHECK(std::abs(lift(0, n) - std::norm(S(0, n))) < 1e-15);

    MatrixXcd E = MatrixXcd::Zero(3, 2);
    E(1, 0) = 1.0;
    E(2, 1) = 1.0;
    const MatrixXcd lift2 = fisher::khatri_rao(E);
    CHECK(lift2.col(0).cwiseAbs().sum() == Approx(1.0));
    CHECK(std::abs(lift2(4, 0) - 1.0) < 1e-15);  // vec position of e1 e1^H
    CHECK(std::abs(lift2(8, 1) - 1.0) < 1e-15);
}

TEST_CASE("build_D: real sequences kill the antisymmetric family") {
    const int L = 3, N = 5;
    MatrixXcd S = MatrixXcd::Random(L, N).real().cast<std::complex<double>>();
    const MatrixXd D = fisher::build_D(S);
    REQUIRE(D.rows() == L * L);
    const int n_sym = L * (L + 1) / 2;
    CHECK(D.bottomRows(L * L - n_sym).norm() == 0.0);
}

TEST_CASE("build_D: L = 1 row equals the Khatri-Rao row") {
    const auto S = model::gen_sequences(model::SequenceKind::gaussian, 1, 6, 12);
    const MatrixXd D = fisher::build_D(S.entries);
    const MatrixXcd lift = fisher::khatri_rao(S.entries);
    CHECK((D.row(0) - lift.row(0).real()).norm() < 1e-14);
}

TEST_CASE("build_D: isometric re-encoding of the complex lift") {
    auto gen = rng::engine(5);
    for (int rep = 0; rep < 6; ++rep) {
        const int L = 2 + rep % 3, N = 4 + rep;
        const auto S =
            model::gen_sequences(model::SequenceKind::gaussian, L, N, 50 + rep);
        const MatrixXd D = fisher::build_D(S.entries);
        const MatrixXcd lift = fisher::khatri_rao(S.entries);
        std::normal_distribution<double> n01(0.0, 1.0);
        VectorXd x(N);
        for (int n = 0; n < N; ++n) x[n] = n01(gen);
        CHECK((D * x).norm() == Approx((lift * x).norm()).epsilon(1e-10));
    }
}

TEST_CASE("build_D and khatri_rao share their null space") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const int L = 3, N = 14;  // null dimension 5 generically
        const auto S = model::gen_sequences(model::SequenceKind::gaussian, L, N, seed);
        const MatrixXd D = fisher::build_D(S.entries);
        const MatrixXcd lift = fisher::khatri_rao(S.entries);
        MatrixXd lift_real(2 * L * L, N);
        lift_real.topRows(L * L) = lift.real();
        lift_real.bottomRows(L * L) = lift.imag();

        const MatrixXd null_D = fisher::null_space(D, 1e-9);
        const MatrixXd null_lift = fisher::null_space(lift_real, 1e-9);
        REQUIRE(null_D.cols() == null_lift.cols());
        const double scale_lift = lift_real.norm();
        const double scale_D = D.norm();
        for (int c = 0; c < null_D.cols(); ++c) {
            CHECK((lift_real * null_D.col(c)).norm() <= 1e-10 * scale_lift);
            CHECK((D * null_lift.col(c)).norm() <= 1e-10 * scale_D);
        }
    }
}

TEST_CASE("null_space: identity and zero") {
    CHECK(fisher::null_space(MatrixXd::Identity(4, 4), 1e-9).cols() == 0);
    CHECK(fisher::null_space(MatrixXd::Zero(3, 3), 1e-9).cols() == 3);
}

TEST_CASE("null_space: generic dimension N - L^2 across seeds") {
    const int L = 3, N = 12;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto S = model::gen_sequences(model::SequenceKind::gaussian, L, N, seed);
        const MatrixXd D = fisher::build_D(S.entries);
        CHECK(fisher::null_space(D, 1e-9).cols() == N - L * L);
    }
}

TEST_CASE("block_split: reassembly reproduces J exactly") {
    const auto S = model::gen_sequences(model::SequenceKind::gaussian, 4, 9, 20);
    const auto gt = model::gen_ground_truth(9, 3, 1.0, 20);
    const auto fm = fisher::fisher_matrix(S.entries, gt.gamma0, 0.7, 2);
    const auto blocks = fisher::block_split(fm.J, gt.inactive_set);

    MatrixXd re = MatrixXd::Zero(9, 9);
    const auto& I = blocks.inactive_set;
    const auto& Ic = blocks.active_set;
    for (std::size_t r = 0; r < I.size(); ++r) {
        for (std::size_t c = 0; c < I.size(); ++c) re(I[r], I[c]) = blocks.A(r, c);
        for (std::size_t c = 0; c < Ic.size(); ++c) re(I[r], Ic[c]) = blocks.B(r, c);
    }
    for (std::size_t r = 0; r < Ic.size(); ++r) {
        for (std::size_t c = 0; c < I.size(); ++c) re(Ic[r], I[c]) = blocks.B(c, r);
        for (std::size_t c = 0; c < Ic.size(); ++c) re(Ic[r], Ic[c]) = blocks.C(r, c);
    }
    CHECK(re == fm.J);

    const auto all = fisher::block_split(fm.J, {0, 1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(all.A == fm.J);
    CHECK(all.C.size() == 0);
    const auto none = fisher::block_split(fm.J, {});
    CHECK(none.C == fm.J);
    CHECK_THROWS_AS(fisher::block_split(fm.J, {9}), std::out_of_range);
}

TEST_CASE("null space of J matches the eigen-level characterization") {
    // x' J x = 0 iff x is orthogonal to every v_i .* conj(v_j), where
    // V = S^H U and U diagonalizes Sigma.
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const int L = 3, N = 11;
        const auto S = model::gen_sequences(model::SequenceKind::gaussian, L, N, seed);
        const auto gt = model::gen_ground_truth(N, 4, 1.0, seed);
        const double noise_var = 0.9;
        const auto fm = fisher::fisher_matrix(S.entries, gt.gamma0, noise_var, 1);
        const auto cov = model::true_covariance(S.entries, gt.gamma0, noise_var);

        Eigen::SelfAdjointEigenSolver<MatrixXcd> eig(cov.sigma);
        const MatrixXcd V = S.entries.adjoint() * eig.eigenvectors();
        MatrixXd constraints(2 * L * L, N);
        int r = 0;
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j) {
                const Eigen::VectorXcd c = V.col(i).cwiseProduct(V.col(j).conjugate());
                constraints.row(r++) = c.real().transpose();
                constraints.row(r++) = c.imag().transpose();
            }
        const MatrixXd null_J = fisher::null_space(fm.J, 1e-9);
        const MatrixXd null_constraints = fisher::null_space(constraints, 1e-9);
        REQUIRE(null_J.cols() == null_constraints.cols());
        for (int c = 0; c < null_J.cols(); ++c) {
            const VectorXd x = null_J.col(c);
            CHECK((constraints * x).norm() <= 1e-8 * constraints.norm());
            const VectorXd y = null_constraints.col(c);
            CHECK(y.dot(fm.J * y) <= 1e-8 * fm.J.norm());
        }
    }
}

TEST_CASE("rank of J is at most min(N, L^2)") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const int L = 2 + static_cast<int>(seed % 3);
        const int N = 5 + static_cast<int>(seed);
        const auto S = model::gen_sequences(model::SequenceKind::gaussian, L, N, seed);
        const auto gt = model::gen_ground_truth(N, 2, 1.0, seed);
        const auto fm = fisher::fisher_matrix(S.entries, gt.gamma0, 1.0, 4);
        CHECK(fisher::numerical_rank(fm.J, 1e-9) <=
              static_cast<Eigen::Index>(std::min(N, L * L)));
    }
}

TEST_CASE("null space of J ignores gamma values and noise scale") {
    const int L = 3, N = 13;
    const auto S = model::gen_sequences(model::SequenceKind::gaussian, L, N, 31);
    const auto gt = model::gen_ground_truth(N, 5, 1.0, 31);
    VectorXd gamma_alt = gt.gamma0 * 7.3;
    gamma_alt[gt.active_set[0]] = 0.2;

    const MatrixXd J1 = fisher::fisher_matrix(S.entries, gt.gamma0, 0.5, 1).J;
    const MatrixXd J2 = fisher::fisher_matrix(S.entries, gamma_alt, 50.0, 1).J;
    const MatrixXd n1 = fisher::null_space(J1, 1e-9);
    const MatrixXd n2 = fisher::null_space(J2, 1e-9);
    REQUIRE(n1.cols() == n2.cols());
    for (int c = 0; c < n1.cols(); ++c) {
        CHECK((J2 * n1.col(c)).norm() <= 1e-8 * J2.norm());
        CHECK((J1 * n2.col(c)).norm() <= 1e-8 * J1.norm());
    }
}
