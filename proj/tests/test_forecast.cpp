#include <doctest.h>

#include <cmath>
#include <random>

#include "stvar/errors.hpp"
#include "stvar/forecast.hpp"
#include "stvar/simulate.hpp"
#include "test_support.hpp"

using namespace stvar;

namespace {

VarModel scaled_identity(Eigen::Index n, double c, const Eigen::MatrixXd& psi) {
    Eigen::MatrixXd A = c * Eigen::MatrixXd::Identity(n, n);
    return {A.sparseView(0.0, 0.0), psi};
}

VarModel random_grid_model(std::mt19937_64& rng) {
    auto lat = Lattice::build(GridSpec::rectangular(3, 3), Stencil::rook5());
    return {assemble_transition(testing::random_stable_alpha(lat.partition, 0.8, rng), lat.map),
            testing::random_spd(9, rng)};
}

}  // namespace

TEST_CASE("zero transition predicts zero with constant covariance") {
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd psi = testing::random_spd(4, rng);
    const auto res = predict(scaled_identity(4, 0.0, psi), Eigen::VectorXd::Ones(4), 4);
    REQUIRE(res.mean.size() == 4);
    for (std::size_t h = 0; h < 4; ++h) {
        CHECK(res.mean[h].isZero(0.0));
        CHECK(res.covariance[h] == psi);
    }
}

TEST_CASE("scalar-like transition gives geometric forecasts") {
    std::mt19937_64 rng(2);
    const Eigen::MatrixXd psi = testing::random_spd(3, rng);
    const double c = 0.7;
    const Eigen::Vector3d z(1.0, -2.0, 0.5);
    const auto res = predict(scaled_identity(3, c, psi), z, 5);
    double geometric = 0.0;
    for (std::size_t h = 1; h <= 5; ++h) {
        geometric += std::pow(c, 2.0 * static_cast<double>(h - 1));
        CHECK((res.mean[h - 1] - std::pow(c, static_cast<double>(h)) * z).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((res.covariance[h - 1] - geometric * psi).cwiseAbs().maxCoeff() < 1e-13);
    }
}

TEST_CASE("Sigma_3 matches direct summation and simulated forecast errors") {
    std::mt19937_64 rng(3);
    const VarModel model = random_grid_model(rng);
    const Eigen::MatrixXd A(model.A);
    Eigen::MatrixXd direct = Eigen::MatrixXd::Zero(9, 9);
    for (int i = 0; i < 3; ++i) {
        Eigen::MatrixXd Ai = Eigen::MatrixXd::Identity(9, 9);
        for (int k = 0; k < i; ++k) Ai = A * Ai;
        direct += Ai * model.psi * Ai.transpose();
    }
    const auto sigmas = prediction_covariances(model, 3);
    CHECK((sigmas[2] - direct).cwiseAbs().maxCoeff() < 1e-12);

    // Forecast errors of 3-step-ahead simulation from a fixed origin.
    const GaussianSampler sampler(model.psi);
    const Eigen::VectorXd z0 = Eigen::VectorXd::LinSpaced(9, -1.0, 1.0);
    const Eigen::VectorXd mean = predict(model, z0, 3).mean[2];
    const int N = 40000;
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(9, 9);
    for (int r = 0; r < N; ++r) {
        Eigen::VectorXd z = z0;
        for (int h = 0; h < 3; ++h) z = A * z + sampler.draw(rng);
        const Eigen::VectorXd e = z - mean;
        S += e * e.transpose();
    }
    S /= N;
    for (Eigen::Index i = 0; i < 9; ++i) {
        for (Eigen::Index j = 0; j < 9; ++j) {
            const double se = std::sqrt((direct(i, i) * direct(j, j) + direct(i, j) * direct(i, j)) / N);
            CHECK(std::abs(S(i, j) - direct(i, j)) < 5.0 * se);
        }
    }
}

TEST_CASE("prediction covariance is nondecreasing in h") {
    std::mt19937_64 rng(4);
    const VarModel model = random_grid_model(rng);
    const auto sigmas = prediction_covariances(model, 6);
    for (std::size_t h = 1; h < sigmas.size(); ++h) {
        const Eigen::MatrixXd diff = sigmas[h] - sigmas[h - 1];
        CHECK((diff - diff.transpose()).cwiseAbs().maxCoeff() == 0.0);
        CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(diff).eigenvalues().minCoeff() > -1e-12);
    }
}

TEST_CASE("PMSE of the true model is exactly one") {
    std::mt19937_64 rng(5);
    const VarModel model = random_grid_model(rng);
    const auto res = pmse(model, model.A, 3, {}, 500, 17);
    for (std::size_t h = 0; h < 3; ++h) {
        CHECK(res.value[h] == 1.0);
        CHECK(res.se[h] == 0.0);
    }
}

TEST_CASE("PMSE on a subset uses the sub-vector and sub-matrix") {
    // True A = c I with Psi = I, estimate A = 0: the gap is c^h z and
    // Sigma_h = s_h I, so the excess is c^{2h} |z_S|^2 / (|S| s_h).
    const double c = 0.6;
    const VarModel truth = scaled_identity(5, c, Eigen::MatrixXd::Identity(5, 5));
    const TransitionMatrix zero(5, 5);
    std::mt19937_64 rng(6);
    const Eigen::MatrixXd snaps = stationary_snapshots(truth, 300, rng);
    const std::vector<std::size_t> subset{1, 3};
    const auto res = pmse(truth, zero, 2, subset, snaps);
    double s_h = 0.0;
    for (int h = 1; h <= 2; ++h) {
        s_h += std::pow(c, 2.0 * (h - 1));
        double expected = 0.0;
        for (Eigen::Index d = 0; d < snaps.cols(); ++d) {
            expected += 1.0 + std::pow(c, 2.0 * h) * (snaps(1, d) * snaps(1, d) + snaps(3, d) * snaps(3, d)) / (2.0 * s_h);
        }
        expected /= static_cast<double>(snaps.cols());
        CHECK(res.value[static_cast<std::size_t>(h - 1)] == doctest::Approx(expected).epsilon(1e-12));
        CHECK(res.value[static_cast<std::size_t>(h - 1)] >= 1.0);
    }

    SUBCASE("correlated noise inverts the subset block, not a block of the inverse") {
        std::mt19937_64 r2(7);
        const VarModel model = random_grid_model(r2);
        const Eigen::MatrixXd snap = stationary_snapshots(model, 50, r2);
        const TransitionMatrix est = (0.5 * Eigen::MatrixXd(model.A)).sparseView();
        const std::vector<std::size_t> sub{0, 4, 8};
        const auto got = pmse(model, est, 1, sub, snap);
        const Eigen::MatrixXd gap = (Eigen::MatrixXd(model.A) * snap - Eigen::MatrixXd(est) * snap)(std::vector<Eigen::Index>{0, 4, 8}, Eigen::all);
        const Eigen::MatrixXd block_inv = model.psi(std::vector<Eigen::Index>{0, 4, 8}, std::vector<Eigen::Index>{0, 4, 8}).inverse();
        double expected = 0.0;
        for (Eigen::Index d = 0; d < gap.cols(); ++d) expected += 1.0 + gap.col(d).dot(block_inv * gap.col(d)) / 3.0;
        CHECK(got.value[0] == doctest::Approx(expected / 50.0).epsilon(1e-12));
    }
}

TEST_CASE("PMSE of a wrong model exceeds one") {
    std::mt19937_64 rng(8);
    const VarModel model = random_grid_model(rng);
    const TransitionMatrix est = (0.9 * Eigen::MatrixXd(model.A)).sparseView();
    const auto res = pmse(model, est, 3, {}, 400, 9);
    for (std::size_t h = 0; h < 3; ++h) {
        CHECK(res.value[h] > 1.0);
        CHECK(res.se[h] > 0.0);
    }
}

TEST_CASE("forecast input validation") {
    const VarModel model = scaled_identity(3, 0.5, Eigen::MatrixXd::Identity(3, 3));
    CHECK_THROWS_AS(predict(model, Eigen::VectorXd::Zero(3), 0), ConfigError);
    CHECK_THROWS_AS(predict(model, Eigen::VectorXd::Zero(2), 1), ConfigError);
    const Eigen::MatrixXd snaps = Eigen::MatrixXd::Ones(3, 4);
    CHECK_THROWS_AS(pmse(model, TransitionMatrix(2, 2), 1, {}, snaps), ConfigError);
    CHECK_THROWS_AS(pmse(model, model.A, 1, {7}, snaps), ConfigError);
    const VarModel degenerate = scaled_identity(3, 0.5, Eigen::MatrixXd::Zero(3, 3));
    CHECK_THROWS_AS(pmse(degenerate, model.A, 1, {}, snaps), NumericalError);
}

TEST_CASE("mean with standard error") {
    const auto m = mean_with_error({1.0, 2.0, 3.0, 4.0});
    CHECK(m.mean == 2.5);
    CHECK(m.se == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
    CHECK(mean_with_error({2.0}).se == 0.0);
}

TEST_CASE("replicate PMSE table is paired and thread-invariant") {
    auto design = benchmark_design_7x7(120, 5);
    design.replicates = 4;
    design.seed = 3;
    ReplicateOptions ropts;
    ropts.estimators = {Estimator::ols, Estimator::adaptive};
    const auto run = run_replicates(design, ropts);

    PmseOptions popts;
    popts.n_mc = 60;
    popts.spacing = 10;
    const auto table = replicate_pmse(design, run.fits, ropts.estimators, popts);
    REQUIRE(table.values.size() == 2);
    CHECK(table.subsets == std::vector<std::string>{"all", "inner"});
    CHECK(table.at(1, Estimator::adaptive, 2).size() == 4);
    for (std::size_t s = 0; s < 2; ++s) {
        for (std::size_t h = 0; h < 3; ++h) {
            for (double v : table.at(s, Estimator::ols, h)) CHECK(v > 1.0);
        }
    }

    const auto a = table.at(0, Estimator::ols, 0);
    const auto b = table.at(0, Estimator::adaptive, 0);
    std::vector<double> d(a.size());
    for (std::size_t r = 0; r < a.size(); ++r) d[r] = a[r] - b[r];
    const auto gap = table.gap(0, Estimator::ols, Estimator::adaptive, 0);
    CHECK(gap.mean == doctest::Approx(mean_with_error(d).mean));
    CHECK(gap.se == doctest::Approx(mean_with_error(d).se));
    CHECK_THROWS_AS(table.at(0, Estimator::gls, 0), ConfigError);

    popts.threads = 3;
    const auto threaded = replicate_pmse(design, run.fits, ropts.estimators, popts);
    CHECK(threaded.values == table.values);
}
