#include <catch_amalgamated.hpp>

#include "covdetect/phase.hpp"

using namespace covdetect;
using Catch::Approx;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::vector<int> inactive_of(const model::GroundTruth& gt) {
    return gt.inactive_set;
}

}  // namespace

TEST_CASE("check_dim_necessary: wide null space rules the condition out") {
    // L = 2, N = 10: null dimension 6; |I| = 3 with K = 7.
    const auto S = model::gen_sequences(model::SequenceKind::gaussian, 2, 10, 3);
    const auto gt = model::gen_ground_truth(10, 7, 1.0, 3);
    const MatrixXd D = fisher::build_D(S.entries);
    const auto verdict = phase::check_dim_necessary(D, gt.inactive_set, 1e-9);
    REQUIRE(verdict.has_value());
    CHECK_FALSE(verdict->satisfied);
    CHECK(verdict->dim_null == 6);
    CHECK(verdict->method == phase::Method::dim_shortcut);
}

TEST_CASE("check_dim_necessary: full-rank information is inconclusive") {
    const auto S = model::gen_sequences(model::SequenceKind::gaussian, 4, 12, 5);
    const auto gt = model::gen_ground_truth(12, 3, 1.0, 5);
    const MatrixXd D = fisher::build_D(S.entries);
    CHECK_FALSE(phase::check_dim_necessary(D, gt.inactive_set, 1e-9).has_value());
}

TEST_CASE("check_dim_necessary: empty inactive set with singular J") {
    const auto S = model::gen_sequences(model::SequenceKind::gaussian, 2, 8, 7);
    const auto gt = model::gen_ground_truth(8, 8, 1.0, 7);  // K = N
    const MatrixXd J = fisher::fisher_matrix(S.entries, gt.gamma0, 1.0, 1).J;
    const auto verdict = phase::check_dim_necessary(J, gt.inactive_set, 1e-9);
    REQUIRE(verdict.has_value());  // singular J, |I| = 0
    CHECK_FALSE(verdict->satisfied);
}

TEST_CASE("check_condition_fim: nonsingular information is satisfied") {
    const auto S = model::gen_sequences(model::SequenceKind::gaussian, 8, 16, 2);
    const auto gt = model::gen_ground_truth(16, 4, 1.0, 2);
    const auto verdict = phase::check_condition_fim(S.entries, gt.active_set, 1.0);
    CHECK(verdict.satisfied);
    CHECK(verdict.block_condition);
    REQUIRE(verdict.certificate.has_value());
}

TEST_CASE("check_condition_fim: agrees with the dimension shortcut") {
    const auto S = model::gen_sequences(model::SequenceKind::gaussian, 2, 10, 3);
    const auto gt = model::gen_ground_truth(10, 7, 1.0, 3);
    const auto verdict = phase::check_condition_fim(S.entries, gt.active_set, 1.0);
    CHECK_FALSE(verdict.satisfied);
}

TEST_CASE("check_condition_covmatch: empty support is satisfied when N <= L^2") {
    const auto S = model::gen_sequences(model::SequenceKind::gaussian, 4, 12, 11);
    std::vector<int> all(12);
    std::iota(all.begin(), all.end(), 0);
    const auto verdict = phase::check_condition_covmatch(S.entries, all, 1e-9);
    CHECK(verdict.satisfied);
    CHECK(verdict.block_condition);
}

TEST_CASE("check_condition_covmatch: duplicated sequence breaks identifiability") {
    auto S = model::gen_sequences(model::SequenceKind::gaussian, 4, 10, 13);
    S.entries.col(1) = S.entries.col(0);  // devices 0 and 1 indistinguishable
    // Device 0 active, device 1 inactive: mass can migrate from 0 to 1.
    std::vector<int> inactive;
    for (int n = 1; n < 10; ++n) inactive.push_back(n);
    const auto verdict = phase::check_condition_covmatch(S.entries, inactive, 1e-9);
    CHECK_FALSE(verdict.satisfied);
    REQUIRE(verdict.certificate.has_value());
    const VectorXd& x = *verdict.certificate;
    const MatrixXd D = fisher::build_D(S.entries);
    CHECK((D * x).cwiseAbs().maxCoeff() <= 1e-8 * D.cwiseAbs().maxCoeff());
}

TEST_CASE("fim and covmatch verdicts agree on random instances") {
    // Both sides of the transition: K sweeps past L^2 at N = 24, L = 3.
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const int N = 24, L = 3;
        const int K = 1 + static_cast<int>(seed % 16);
        const auto S = model::gen_sequences(model::SequenceKind::gaussian, L, N, seed);
        const auto gt = model::gen_ground_truth(N, K, 1.0, seed);
        const auto fim = phase::check_condition_fim(S.entries, gt.active_set, 0.7);
        const auto cm =
            phase::check_condition_covmatch(S.entries, gt.inactive_set, 1e-9);
        INFO("seed " << seed << " K " << K);
        REQUIRE(fim.satisfied == cm.satisfied);
        ++checked;
    }
    CHECK(checked == 60);
}

TEST_CASE("verdicts are scale-free in noise power and gamma values") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const int N = 18, L = 3;
        const int K = 2 + static_cast<int>(seed);
        const auto S = model::gen_sequences(model::SequenceKind::gaussian, L, N, seed);
        const auto gt = model::gen_ground_truth(N, K, 1.0, seed);
        const auto base = phase::check_condition_fim(S.entries, gt.active_set, 1.0);
        const auto scaled =
            phase::check_condition_fim(S.entries, gt.active_set, 100.0);
        CHECK(base.satisfied == scaled.satisfied);
    }
}

TEST_CASE("satisfied fim certificates verify strictly") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const int N = 14, L = 4;
        const auto S = model::gen_sequences(model::SequenceKind::gaussian, L, N, seed);
        const auto gt = model::gen_ground_truth(N, 3, 1.0, seed);
        const auto verdict = phase::check_condition_fim(S.entries, gt.active_set, 1.0);
        if (!verdict.satisfied) continue;
        REQUIRE(verdict.certificate.has_value());
        const VectorXd& x = *verdict.certificate;
        CHECK(x.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);

        VectorXd gamma = VectorXd::Zero(N);
        for (int n : gt.active_set) gamma[n] = 1.0;
        const MatrixXd J = fisher::fisher_matrix(S.entries, gamma, 1.0, 1).J;
        const auto blocks = fisher::block_split(J, gt.inactive_set);
        const MatrixXd G =
            blocks.A - blocks.B * blocks.C.ldlt().solve(blocks.B.transpose());
        CHECK((G * x).minCoeff() > 0.0);
    }
}

TEST_CASE("unsatisfied covmatch certificates verify against their program") {
    // K just below L^2 keeps the rank condition alive while the cone test
    // still fails for many draws.
    int found = 0;
    for (std::uint64_t seed = 0; seed < 40 && found < 5; ++seed) {
        const int N = 20, L = 3, K = 8;
        const auto S = model::gen_sequences(model::SequenceKind::gaussian, L, N, seed);
        const auto gt = model::gen_ground_truth(N, K, 1.0, seed);
        const auto verdict =
            phase::check_condition_covmatch(S.entries, gt.inactive_set, 1e-9);
        if (verdict.satisfied || !verdict.block_condition) continue;
        ++found;
        REQUIRE(verdict.certificate.has_value());
        const VectorXd& x = *verdict.certificate;
        const MatrixXd D = fisher::build_D(S.entries);
        CHECK((D * x).cwiseAbs().maxCoeff() <= 1e-8 * std::max(1.0, D.cwiseAbs().maxCoeff()));
        double sum = 0.0;
        for (int i : gt.inactive_set) {
            CHECK(x[i] >= -1e-10);
            sum += x[i];
        }
        CHECK(sum == Approx(1.0).margin(1e-8));
    }
    CHECK(found >= 3);
}

TEST_CASE("dimension shortcut never contradicts the LP verdicts") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const int N = 16, L = 3;
        const int K = 6 + static_cast<int>(seed % 10);
        const auto S = model::gen_sequences(model::SequenceKind::gaussian, L, N, seed);
        const auto gt = model::gen_ground_truth(N, K, 1.0, seed);
        const MatrixXd D = fisher::build_D(S.entries);
        const auto shortcut = phase::check_dim_necessary(D, gt.inactive_set, 1e-9);
        if (!shortcut.has_value()) continue;
        CHECK_FALSE(
            phase::check_condition_covmatch(S.entries, gt.inactive_set, 1e-9).satisfied);
        CHECK_FALSE(
            phase::check_condition_fim(S.entries, gt.active_set, 1.0).satisfied);
    }
}

TEST_CASE("phase_sweep: empty support column succeeds everywhere when N <= L^2") {
    phase::SweepOptions opt;
    opt.method = phase::Method::covmatch_lp;
    const auto grid = phase::phase_sweep(9, {3, 4}, {0}, 10, 77, opt);
    CHECK(grid.success_fraction.minCoeff() == 1.0);
    CHECK(grid.inconclusive.cwiseAbs().maxCoeff() == 0);
}

TEST_CASE("phase_sweep: success is monotone non-increasing in K") {
    phase::SweepOptions opt;
    opt.method = phase::Method::covmatch_lp;
    const std::vector<int> K_list = {1, 3, 5, 7, 9, 12};
    const auto grid = phase::phase_sweep(24, {3}, K_list, 40, 5, opt);
    int inversions = 0;
    for (std::size_t k = 1; k < K_list.size(); ++k)
        if (grid.success_fraction(0, k) > grid.success_fraction(0, k - 1) + 1e-12)
            ++inversions;
    CHECK(inversions <= 1);  // one sampling-noise inversion allowed
}

TEST_CASE("phase_sweep: deterministic and thread-count independent") {
    phase::SweepOptions opt1;
    opt1.method = phase::Method::covmatch_lp;
    opt1.threads = 1;
    phase::SweepOptions opt2 = opt1;
    opt2.threads = 4;
    const auto a = phase::phase_sweep(20, {3, 4}, {2, 6, 10}, 12, 31, opt1);
    const auto b = phase::phase_sweep(20, {3, 4}, {2, 6, 10}, 12, 31, opt2);
    REQUIRE(a.success_fraction == b.success_fraction);
}

TEST_CASE("gaussian sequences dominate partial DFT near the boundary") {
    // Success-region ordering across sequence families on a matched grid.
    phase::SweepOptions gauss;
    gauss.method = phase::Method::covmatch_lp;
    gauss.kind = model::SequenceKind::gaussian;
    phase::SweepOptions dft = gauss;
    dft.kind = model::SequenceKind::partial_dft;
    const std::vector<int> K_list = {2, 4, 6, 8};
    const auto g = phase::phase_sweep(30, {4}, K_list, 30, 17, gauss);
    const auto d = phase::phase_sweep(30, {4}, K_list, 30, 17, dft);
    int ordered = 0, total = 0;
    for (std::size_t k = 0; k < K_list.size(); ++k) {
        ++total;
        if (g.success_fraction(0, k) >= d.success_fraction(0, k) - 0.1) ++ordered;
    }
    CHECK(ordered * 10 >= total * 9);
}

TEST_CASE("empirical_transition: recovery deep inside and outside the region") {
    solvers::SolverConfig scfg;
    scfg.tol = 1e-8;
    scfg.max_sweeps = 300;
    phase::EmpiricalOptions opt;
    opt.noise_var = 1.0;

    // N <= L^2 and small K: identifiable, recovery should be near-certain.
    const auto good = phase::empirical_transition(16, {5}, {2}, 20, scfg, 3, opt);
    CHECK(good.success_fraction(0, 0) >= 0.99);

    // K beyond L^2: not identifiable, exact recovery should essentially fail.
    const auto bad = phase::empirical_transition(24, {3}, {12}, 20, scfg, 3, opt);
    CHECK(bad.success_fraction(0, 0) <= 0.05);
}
