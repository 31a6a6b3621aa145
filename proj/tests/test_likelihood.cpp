#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "stvar/errors.hpp"
#include "stvar/likelihood.hpp"
#include "test_support.hpp"

using namespace stvar;

namespace {

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

struct Instance {
    Lattice lat;
    TimeSeriesPanel panel;
    Eigen::MatrixXd psi;
    CoefficientVector alpha;
};

Instance random_instance(int nx, int ny, std::size_t T, std::mt19937_64& rng) {
    auto lat = Lattice::build(GridSpec::rectangular(nx, ny), Stencil::rook5());
    auto alpha = testing::random_stable_alpha(lat.partition, 0.7, rng);
    Eigen::MatrixXd psi = testing::random_spd(lat.n(), rng);
    auto A = assemble_transition(alpha, lat.map);
    TimeSeriesPanel panel(testing::simulate_var(A, psi, T, rng, 20));
    return {std::move(lat), std::move(panel), std::move(psi), std::move(alpha)};
}

}  // namespace

TEST_CASE("panel validation") {
    CHECK_THROWS_AS(TimeSeriesPanel(Eigen::MatrixXd::Zero(3, 1)), DataError);
    Eigen::MatrixXd Z = Eigen::MatrixXd::Ones(3, 4);
    Z(1, 2) = std::nan("");
    try {
        TimeSeriesPanel p(Z);
        FAIL("expected rejection");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("location 1, time 2") != std::string::npos);
    }
}

TEST_CASE("scalar AR(1) normal equations") {
    auto lat = Lattice::build(GridSpec::rectangular(1, 1), Stencil::preset("self1"));
    REQUIRE(lat.m() == 1);
    Eigen::MatrixXd Z(1, 6);
    Z << 1.0, -0.5, 2.0, 0.25, -1.5, 0.75;
    auto sys = build_gram(TimeSeriesPanel(Z), lat.map, Eigen::MatrixXd::Identity(1, 1));
    double g = 0, c = 0;
    for (int t = 1; t < 6; ++t) {
        g += Z(0, t - 1) * Z(0, t - 1);
        c += Z(0, t) * Z(0, t - 1);
    }
    CHECK(sys.gram(0, 0) == doctest::Approx(g).epsilon(1e-15));
    CHECK(sys.cross(0) == doctest::Approx(c).epsilon(1e-15));
}

TEST_CASE("Gram assembly matches the materialized Kronecker expression") {
    std::mt19937_64 rng(2024);
    for (int rep = 0; rep < 25; ++rep) {
        auto inst = random_instance(3 + rep % 2, 3 + (rep / 2) % 2, 20 + rep % 11, rng);
        auto sys = build_gram(inst.panel, inst.lat.map, inst.psi);
        auto ref = oracle::materialized_gram(inst.panel.Z(), inst.lat.map, inst.psi);
        CHECK(rel_err(sys.gram, ref.gram) <= 1e-10);
        CHECK(rel_err(sys.cross, ref.cross) <= 1e-10);
        CHECK(sys.gram == sys.gram.transpose());
    }
}

TEST_CASE("Gram assembly is linear in the precision matrix") {
    std::mt19937_64 rng(3);
    auto inst = random_instance(3, 3, 20, rng);
    auto one = build_gram(inst.panel, inst.lat.map, inst.psi);
    auto two = build_gram(inst.panel, inst.lat.map, 0.5 * inst.psi);  // doubles Psi^{-1}
    CHECK(rel_err(two.gram, 2.0 * one.gram) <= 1e-12);
    CHECK(rel_err(two.cross, 2.0 * one.cross) <= 1e-12);
}

TEST_CASE("singular covariance is rejected") {
    std::mt19937_64 rng(4);
    auto inst = random_instance(3, 3, 20, rng);
    Eigen::MatrixXd singular = Eigen::MatrixXd::Ones(9, 9);
    CHECK_THROWS_AS(build_gram(inst.panel, inst.lat.map, singular), NumericalError);
    CHECK_THROWS_AS(loglik_direct(inst.panel, assemble_transition(inst.alpha, inst.lat.map), singular), NumericalError);
}

TEST_CASE("reduce_to_regression") {
    SUBCASE("identity Gram") {
        GramSystem sys;
        sys.gram = Eigen::MatrixXd::Identity(4, 4);
        sys.cross = Eigen::Vector4d(1.0, -2.0, 3.0, 0.5);
        sys.n = 1;
        sys.n_obs = 1;
        auto q = reduce_to_regression(sys);
        CHECK(q.X.isApprox(Eigen::MatrixXd::Identity(4, 4)));
        CHECK(q.y.isApprox(sys.cross));
        CHECK(q.jitter == 0.0);
    }
    SUBCASE("quadratic identity and factor properties") {
        std::mt19937_64 rng(8);
        std::normal_distribution<double> normal;
        auto inst = random_instance(4, 3, 25, rng);
        auto sys = build_gram(inst.panel, inst.lat.map, inst.psi);
        auto q = reduce_to_regression(sys);
        CHECK(q.X.isUpperTriangular());
        CHECK(rel_err(q.X.transpose() * q.X, sys.gram) <= 1e-12);
        CHECK(rel_err(q.X.transpose() * q.y, sys.cross) <= 1e-12);
        for (int rep = 0; rep < 10; ++rep) {
            Eigen::VectorXd a(static_cast<Eigen::Index>(q.m()));
            for (auto& x : a) x = normal(rng);
            const double lhs = 0.5 * (q.y - q.X * a).squaredNorm() - 0.5 * q.y.squaredNorm();
            const double rhs = 0.5 * a.dot(sys.gram * a) - sys.cross.dot(a);
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
        }
    }
    SUBCASE("semi-definite Gram gets jitter") {
        GramSystem sys;
        Eigen::Vector3d v(1.0, 2.0, -1.0);
        sys.gram = v * v.transpose();
        sys.cross = v;
        sys.n = 1;
        sys.n_obs = 1;
        auto q = reduce_to_regression(sys);
        CHECK(q.jitter > 0.0);
        CHECK(q.jitter <= 1e-10 * 6.0 / 3.0 * 1e6 * 1.0001);
        CHECK(rel_err(q.X.transpose() * q.X, q.gram) <= 1e-12);
    }
    SUBCASE("indefinite Gram fails with a condition estimate") {
        GramSystem sys;
        sys.gram = Eigen::Vector2d(1.0, -1.0).asDiagonal();
        sys.cross = Eigen::Vector2d::Zero();
        sys.n = 1;
        sys.n_obs = 1;
        try {
            (void)reduce_to_regression(sys);
            FAIL("expected failure");
        } catch (const NumericalError& e) {
            CHECK(std::string(e.what()).find("condition") != std::string::npos);
        }
    }
}

TEST_CASE("quadratic-form log-likelihood equals the direct residual sum") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> normal;
    for (int rep = 0; rep < 20; ++rep) {
        auto inst = random_instance(3, 3, 15 + rep, rng);
        auto q = reduce_to_regression(build_gram(inst.panel, inst.lat.map, inst.psi));
        Eigen::VectorXd a = inst.alpha.values();
        for (auto& x : a) x += 0.1 * normal(rng);
        CoefficientVector alpha(inst.alpha.layout(), a);
        const Eigen::MatrixXd A(assemble_transition(alpha, inst.lat.map));
        const double reference = oracle::direct_loglik(inst.panel.Z(), A, inst.psi);
        const double direct = loglik_direct(inst.panel, assemble_transition(alpha, inst.lat.map), inst.psi);
        CHECK(std::abs(direct - reference) <= 1e-10 * (1.0 + std::abs(reference)));
        CHECK(std::abs(q.loglik(a) - direct) <= 1e-8 * (1.0 + std::abs(direct)));
    }
}

TEST_CASE("loglik_direct special values") {
    auto lat = Lattice::build(GridSpec::rectangular(3, 3), Stencil::rook5());
    const std::size_t T = 7;
    TimeSeriesPanel zeros(Eigen::MatrixXd::Zero(9, T));
    TransitionMatrix A(9, 9);
    const double v = loglik_direct(zeros, A, Eigen::MatrixXd::Identity(9, 9));
    CHECK(v == doctest::Approx(-(T - 1.0) * 9.0 / 2.0 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
}

TEST_CASE("log-likelihood decreases away from the least-squares point") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> normal;
    auto inst = random_instance(4, 4, 30, rng);
    auto q = reduce_to_regression(build_gram(inst.panel, inst.lat.map, inst.psi));
    const Eigen::VectorXd best = q.gram.llt().solve(q.cross);
    const double top = loglik_direct(inst.panel, assemble_transition(CoefficientVector(inst.alpha.layout(), best), inst.lat.map), inst.psi);
    for (int rep = 0; rep < 10; ++rep) {
        Eigen::VectorXd d(best.size());
        for (auto& x : d) x = normal(rng);
        for (double step : {1e-3, 1e-2, 1e-1}) {
            const Eigen::VectorXd a = best + step * d;
            const double v = loglik_direct(inst.panel, assemble_transition(CoefficientVector(inst.alpha.layout(), a), inst.lat.map), inst.psi);
            CHECK(v < top);
        }
    }
}

TEST_CASE("update_psi") {
    SUBCASE("zero residuals") {
        Eigen::MatrixXd Z(2, 5);
        Z.row(0) << 1.0, 0.5, 0.25, 0.125, 0.0625;
        Z.row(1) << -2.0, -1.0, -0.5, -0.25, -0.125;
        TransitionMatrix A = (0.5 * Eigen::MatrixXd::Identity(2, 2)).sparseView();
        auto est = update_psi(TimeSeriesPanel(Z), A);
        CHECK(est.covariance.matrix.isZero(0.0));
    }
    SUBCASE("scalar case uses divisor T - 1") {
        Eigen::MatrixXd Z(1, 4);
        Z << 1.0, 2.0, -1.0, 0.5;
        TransitionMatrix A = (0.5 * Eigen::MatrixXd::Identity(1, 1)).sparseView();
        const double r1 = 2.0 - 0.5, r2 = -1.0 - 1.0, r3 = 0.5 + 0.5;
        auto est = update_psi(TimeSeriesPanel(Z), A);
        CHECK(est.covariance.matrix(0, 0) == doctest::Approx((r1 * r1 + r2 * r2 + r3 * r3) / 3.0).epsilon(1e-15));
        CHECK_FALSE(est.rank_deficient);
    }
    SUBCASE("rank deficiency flagged when T - 1 < n") {
        auto est = update_psi(TimeSeriesPanel(Eigen::MatrixXd::Ones(5, 3)), TransitionMatrix(5, 5));
        CHECK(est.rank_deficient);
    }
    SUBCASE("consistent for the true transition matrix") {
        std::mt19937_64 rng(77);
        auto lat = Lattice::build(GridSpec::rectangular(3, 3), Stencil::rook5());
        auto alpha = testing::random_stable_alpha(lat.partition, 0.6, rng);
        auto A = assemble_transition(alpha, lat.map);
        Eigen::MatrixXd psi = testing::random_spd(9, rng);
        const std::size_t T = 5000;
        TimeSeriesPanel panel(testing::simulate_var(A, psi, T, rng));
        auto est = update_psi(panel, A);
        const Eigen::MatrixXd& S = est.covariance.matrix;
        CHECK(S == S.transpose());
        CHECK(S.selfadjointView<Eigen::Lower>().eigenvalues().minCoeff() >= -1e-12);
        // var of a Gaussian second moment: psi_ij^2 + psi_ii psi_jj
        for (Eigen::Index i = 0; i < 9; ++i) {
            for (Eigen::Index j = 0; j < 9; ++j) {
                const double se = std::sqrt((psi(i, j) * psi(i, j) + psi(i, i) * psi(j, j)) / (T - 1.0));
                CHECK(std::abs(S(i, j) - psi(i, j)) <= 5.0 * se);
            }
        }
    }
}
