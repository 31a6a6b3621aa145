#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "stvar/errors.hpp"
#include "stvar/pipeline.hpp"
#include "stvar/simulate.hpp"
#include "test_support.hpp"

using namespace stvar;

namespace {

Lattice scalar_lattice() { return Lattice::build(GridSpec::rectangular(1, 1), Stencil::preset("self1")); }

// Objective with +infinity rows skipped; only valid where alpha is fused on them.
double finite_objective(const QuadraticForm& q, const PenaltyMatrix& D, double lambda, const Eigen::VectorXd& a) {
    double pen = 0.0;
    for (const auto& row : D.row_list()) {
        const double d = a[static_cast<Eigen::Index>(row.pos)] - a[static_cast<Eigen::Index>(row.neg)];
        if (std::isinf(row.weight)) {
            REQUIRE(d == 0.0);
            continue;
        }
        pen += row.weight * std::abs(d);
    }
    return 0.5 * q.rss(a) + lambda * pen;
}

}  // namespace

TEST_CASE("OLS on a single location is the AR(1) least-squares slope") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd Z(1, 300);
    Z(0, 0) = 0.0;
    for (Eigen::Index t = 1; t < Z.cols(); ++t) Z(0, t) = 0.6 * Z(0, t - 1) + normal(rng);
    const TimeSeriesPanel panel(Z);
    const auto ols = fit_ols(panel, scalar_lattice());
    double num = 0.0, den = 0.0;
    for (Eigen::Index t = 1; t < Z.cols(); ++t) {
        num += Z(0, t) * Z(0, t - 1);
        den += Z(0, t - 1) * Z(0, t - 1);
    }
    CHECK(ols.alpha.values()[0] == doctest::Approx(num / den).epsilon(1e-12));
    CHECK(ols.df == 1);
}

TEST_CASE("OLS shrinks to zero when there is no signal") {
    auto lat = Lattice::build(GridSpec::rectangular(5, 5), Stencil::rook5());
    std::mt19937_64 rng(2);
    TransitionMatrix A(25, 25);
    const Eigen::MatrixXd psi = Eigen::MatrixXd::Identity(25, 25);
    for (std::size_t T : {200u, 3200u}) {
        const TimeSeriesPanel panel(testing::simulate_var(A, psi, T, rng, 0));
        const auto ols = fit_ols(panel, lat);
        // each coefficient is a sample cross-correlation with SE about 1/sqrt(T)
        CHECK(ols.alpha.values().cwiseAbs().maxCoeff() < 5.0 / std::sqrt(static_cast<double>(T)));
    }
}

TEST_CASE("lambda = 0 in the fused stage reproduces GLS") {
    auto design = benchmark_design_7x7(200, 5);
    const auto panel = simulate_panel(design, 3);
    PipelineOptions opts;
    const auto ols = fit_ols(panel, design.lattice, opts);
    const auto gls = fit_gls(panel, design.lattice, ols.psi_next, opts);
    opts.lambda_override = 0.0;
    const auto fused = fit_fused(panel, design.lattice, ols, opts);
    CHECK((fused.alpha.values() - gls.alpha.values()).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(fused.lambda == 0.0);
    CHECK(fused.df == design.lattice.m());
    CHECK(fused.trace.size() == 1);
}

TEST_CASE("long series recover the cluster structure exactly") {
    auto design = benchmark_design_7x7(20000, 5);
    const auto panel = simulate_panel(design, 4);
    const auto report = fit_pipeline(panel, design.lattice);
    const auto truth = cluster_blocks(design.lattice, design.truth, 0.0);
    for (std::size_t k = 0; k < 5; ++k) {
        CAPTURE(k);
        const auto& got = report.adaptive().clusters[k];
        REQUIRE(got.components() == truth[k].components());
        std::set<std::vector<std::size_t>> a(got.members.begin(), got.members.end());
        std::set<std::vector<std::size_t>> b(truth[k].members.begin(), truth[k].members.end());
        CHECK(a == b);
    }
}

TEST_CASE("fused stage keeps the constant block whole in most replicates") {
    auto design = benchmark_design_7x7(500, 5);
    design.replicates = 20;
    ReplicateOptions opts;
    opts.estimators = {Estimator::fused};
    const auto run = run_replicates(design, opts);
    CHECK(run.summary.per_estimator.at(Estimator::fused).recovery_rate[0] >= 0.6);
}

TEST_CASE("adaptive stage on a fully fused pilot returns block constants") {
    auto lat = Lattice::build(GridSpec::rectangular(5, 5), Stencil::rook5());
    std::mt19937_64 rng(5);
    auto truth = testing::random_stable_alpha(lat.partition, 0.6, rng);
    const Eigen::MatrixXd psi = Eigen::MatrixXd::Identity(25, 25);
    const TimeSeriesPanel panel(testing::simulate_var(assemble_transition(truth, lat.map), psi, 150, rng));

    StageResult pilot;
    pilot.alpha = CoefficientVector::zeros(CoefficientLayout::of(lat.partition));
    for (std::size_t k = 0; k < 5; ++k) pilot.alpha.block(k).setConstant(0.1 * static_cast<double>(k + 1));
    pilot.psi_next = psi;
    const auto adaptive = fit_adaptive(panel, lat, pilot);
    CHECK(adaptive.df == 5 + lat.n_boundary());
    for (const auto& c : adaptive.clusters) CHECK(c.components() == 1);

    // Independent reduced GLS: columns of M sum each block's inner coefficients.
    const Eigen::Index m = static_cast<Eigen::Index>(lat.m());
    const Eigen::Index red = static_cast<Eigen::Index>(5 + lat.n_boundary());
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(m, red);
    for (std::size_t k = 0; k < 5; ++k) {
        for (std::size_t i = 0; i < lat.n_inner(); ++i) M(static_cast<Eigen::Index>(lat.partition.alpha_index(k, i)), static_cast<Eigen::Index>(k)) = 1.0;
    }
    for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(lat.n_boundary()); ++b) M(5 * 9 + b, 5 + b) = 1.0;
    const auto sys = build_gram(panel, lat.map, psi);
    const Eigen::VectorXd beta = (M.transpose() * sys.gram * M).ldlt().solve(M.transpose() * sys.cross);
    CHECK((adaptive.alpha.values() - M * beta).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("full pipeline report structure") {
    auto design = benchmark_design_7x7(300, 5);
    const auto panel = simulate_panel(design, 6);
    PipelineOptions opts;
    opts.include_gls = true;
    const auto report = fit_pipeline(panel, design.lattice, opts);
    REQUIRE(report.stages.size() == 3);
    CHECK(report.ols().name == "ols");
    CHECK(report.fused().name == "fused");
    CHECK(report.adaptive().name == "adaptive");
    REQUIRE(report.gls.has_value());
    CHECK(report.ols().psi_used.isIdentity(0.0));
    CHECK(report.fused().psi_used == report.ols().psi_next);
    CHECK(report.adaptive().psi_used == report.fused().psi_next);
    CHECK(report.gls->psi_used == report.ols().psi_next);

    for (const auto& stage : report.stages) {
        CHECK(stage.seconds >= 0.0);
        CHECK(stage.spectral.stable);
        REQUIRE(stage.clusters.size() == 5);
        for (const auto& c : stage.clusters) {
            // disjoint and exhaustive over the inner points
            std::vector<int> seen(design.lattice.n_inner(), 0);
            for (const auto& members : c.members) {
                CHECK_FALSE(members.empty());
                for (auto i : members) ++seen[i];
            }
            for (int s : seen) CHECK(s == 1);
        }
    }
    CHECK(report.fused().trace.size() == opts.n_lambdas);
    CHECK(report.fused().lambda > 0.0);

    SUBCASE("bit-identical on a rerun") {
        const auto again = fit_pipeline(panel, design.lattice, opts);
        for (std::size_t s = 0; s < 3; ++s) {
            CHECK(again.stages[s].alpha.values() == report.stages[s].alpha.values());
            CHECK(again.stages[s].lambda == report.stages[s].lambda);
            CHECK(again.stages[s].psi_next == report.stages[s].psi_next);
        }
    }
    SUBCASE("adaptive objective does not exceed the pilot's") {
        const auto& fused = report.fused();
        const auto& adaptive = report.adaptive();
        const auto w = adaptive_weights(design.lattice, fused.alpha, opts.gamma,
                                        fusion_tolerance(fused.alpha.values(), opts.admm));
        const auto D = build_penalty_matrix(design.lattice.graph, design.lattice.partition, w);
        const auto q = reduce_to_regression(build_gram(panel, design.lattice.map, adaptive.psi_used));
        const double mine = finite_objective(q, D, adaptive.lambda, adaptive.alpha.values());
        const double pilot = finite_objective(q, D, adaptive.lambda, fused.alpha.values());
        CHECK(mine <= pilot + 1e-9 * std::abs(pilot));
    }
}

TEST_CASE("adaptive weights") {
    auto lat = Lattice::build(GridSpec::rectangular(4, 4), Stencil::rook5());
    auto pilot = CoefficientVector::zeros(CoefficientLayout::of(lat.partition));
    pilot.block(1) << 0.0, 0.5, 0.0, 0.25;
    const auto w = adaptive_weights(lat, pilot, 1.0, 1e-8);
    const std::size_t per = lat.graph.edges_per_block();
    for (std::size_t r = 0; r < per; ++r) CHECK(std::isinf(w[r]));  // block 0 all equal
    for (std::size_t r = per; r < 2 * per; ++r) {
        const auto& e = lat.graph.edges[r];
        const double d = std::abs(pilot.block(1)[static_cast<Eigen::Index>(e.i)] - pilot.block(1)[static_cast<Eigen::Index>(e.j)]);
        if (d == 0.0) {
            CHECK(std::isinf(w[r]));
        } else {
            CHECK(w[r] == doctest::Approx(1.0 / d));
        }
    }
    const auto w2 = adaptive_weights(lat, pilot, 2.0, 1e-8);
    CHECK(w2[per] == doctest::Approx(w[per] * w[per]));
    CHECK_THROWS_AS(adaptive_weights(lat, pilot, 0.0, 1e-8), ConfigError);
}

TEST_CASE("short panels") {
    SUBCASE("T - 1 < n aborts") {
        auto lat = Lattice::build(GridSpec::rectangular(3, 3), Stencil::rook5());
        const TimeSeriesPanel panel(Eigen::MatrixXd::Random(9, 6));
        CHECK_THROWS_AS(fit_pipeline(panel, lat), DataError);
    }
    SUBCASE("T = 2 on one location completes with warnings") {
        Eigen::MatrixXd Z(1, 2);
        Z << 1.0, 0.4;
        const auto report = fit_pipeline(TimeSeriesPanel(Z), scalar_lattice());
        CHECK(report.stages.size() == 3);
        CHECK(report.ols().alpha.values()[0] == doctest::Approx(0.4));
        CHECK(report.ols().psi_regularized);
        CHECK_FALSE(report.warnings.empty());
    }
    SUBCASE("panel and grid disagree") {
        auto lat = Lattice::build(GridSpec::rectangular(3, 3), Stencil::rook5());
        CHECK_THROWS_AS(fit_pipeline(TimeSeriesPanel(Eigen::MatrixXd::Random(4, 50)), lat), DataError);
    }
}
