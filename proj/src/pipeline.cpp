#include "stvar/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "stvar/errors.hpp"
#include "stvar/union_find.hpp"

namespace stvar {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct PsiUpdate {
    Eigen::MatrixXd matrix;
    bool rank_deficient = false;
    bool regularized = false;
};

// Residual covariance; a numerically singular estimate (for example an exact
// fit) gets a small ridge so the next stage can still whiten.
PsiUpdate next_psi(const TimeSeriesPanel& panel, const TransitionMatrix& A, std::vector<std::string>& warnings) {
    PsiEstimate est = update_psi(panel, A);
    PsiUpdate out{std::move(est.covariance.matrix), est.rank_deficient, false};
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.matrix, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 1e-12 * std::max(hi, 0.0)) || hi <= 0.0) {
        const double n = static_cast<double>(out.matrix.rows());
        const double ridge = 1e-8 * std::max(out.matrix.trace() / n, 1.0);
        out.matrix.diagonal().array() += ridge;
        out.regularized = true;
        warnings.push_back("residual covariance is singular; added ridge " + std::to_string(ridge));
    }
    if (out.rank_deficient) warnings.push_back("residual covariance is rank deficient (T - 1 < n)");
    return out;
}

void finish_stage(StageResult& stage, const TimeSeriesPanel& panel, const Lattice& lattice,
                  const PipelineOptions& opts) {
    const TransitionMatrix A = assemble_transition(stage.alpha, lattice.map);
    stage.rowsum_stable = check_stability_rowsum(A);
    stage.spectral = check_stability_spectral(A);
    if (!stage.spectral.stable) stage.warnings.push_back("fitted transition matrix is not stable");
    stage.clusters = cluster_blocks(lattice, stage.alpha, fusion_tolerance(stage.alpha.values(), opts.admm));
    PsiUpdate psi = next_psi(panel, A, stage.warnings);
    stage.psi_next = std::move(psi.matrix);
    stage.psi_rank_deficient = psi.rank_deficient;
    stage.psi_regularized = psi.regularized;
}

StageResult unpenalized_stage(std::string name, const TimeSeriesPanel& panel, const Lattice& lattice,
                              const Eigen::MatrixXd& psi, const PipelineOptions& opts) {
    const auto start = Clock::now();
    StageResult stage;
    stage.name = std::move(name);
    stage.psi_used = psi;
    const QuadraticForm quad = reduce_to_regression(build_gram(panel, lattice.map, psi));
    if (quad.jitter > 0.0) stage.warnings.push_back("Gram matrix needed diagonal jitter");
    const GenLassoProblem problem = GenLassoProblem::from_quadratic(quad, PenaltyMatrix(lattice.m(), {}), 0.0);
    const SolveResult res = solve_admm(problem, opts.admm);
    stage.alpha = CoefficientVector(CoefficientLayout::of(lattice.partition), res.alpha);
    stage.df = res.df;
    stage.bic = bic(res, panel.T());
    finish_stage(stage, panel, lattice, opts);
    stage.seconds = elapsed(start);
    return stage;
}

StageResult penalized_stage(std::string name, const TimeSeriesPanel& panel, const Lattice& lattice,
                            const Eigen::MatrixXd& psi, std::span<const double> weights,
                            const PipelineOptions& opts) {
    const auto start = Clock::now();
    StageResult stage;
    stage.name = std::move(name);
    stage.psi_used = psi;
    const QuadraticForm quad = reduce_to_regression(build_gram(panel, lattice.map, psi));
    if (quad.jitter > 0.0) stage.warnings.push_back("Gram matrix needed diagonal jitter");
    const HardFusion hf = merge_hard_fusions(build_penalty_matrix(lattice.graph, lattice.partition, weights));
    GenLassoProblem problem{hf.reduce_gram(quad.gram), hf.reduce_vector(quad.cross), quad.y.squaredNorm(),
                            hf.reduced, 0.0};
    const std::vector<double> lambdas =
        opts.lambda_override ? std::vector<double>{*opts.lambda_override} : lambda_grid(problem, opts.n_lambdas, opts.admm);
    LambdaSelection sel = select_lambda(problem, lambdas, panel.T(), opts.admm);
    stage.alpha = CoefficientVector(CoefficientLayout::of(lattice.partition), hf.expand(sel.result.alpha));
    stage.lambda = sel.lambda;
    stage.df = sel.result.df;
    stage.bic = bic(sel.result, panel.T());
    stage.trace = std::move(sel.trace);
    stage.warnings = std::move(sel.warnings);
    finish_stage(stage, panel, lattice, opts);
    stage.seconds = elapsed(start);
    return stage;
}

}  // namespace

std::vector<ClusterSummary> cluster_blocks(const Lattice& lattice, const CoefficientVector& alpha, double tol) {
    const std::size_t nI = lattice.n_inner();
    std::vector<ClusterSummary> out;
    for (std::size_t k = 0; k < lattice.K(); ++k) {
        const auto block = alpha.block(k);
        UnionFind uf(nI);
        for (const auto& [i, j] : lattice.graph.inner_edges) {
            if (std::abs(block[static_cast<Eigen::Index>(i)] - block[static_cast<Eigen::Index>(j)]) <= tol) uf.unite(i, j);
        }
        const std::vector<std::size_t> label = uf.labels();
        ClusterSummary summary;
        summary.block = k;
        summary.members.resize(uf.components());
        summary.values.assign(uf.components(), 0.0);
        for (std::size_t i = 0; i < nI; ++i) {
            summary.members[label[i]].push_back(i);
            summary.values[label[i]] += block[static_cast<Eigen::Index>(i)];
        }
        for (std::size_t c = 0; c < summary.values.size(); ++c) {
            summary.values[c] /= static_cast<double>(summary.members[c].size());
        }
        out.push_back(std::move(summary));
    }
    return out;
}

std::vector<double> adaptive_weights(const Lattice& lattice, const CoefficientVector& pilot, double gamma,
                                     double tol) {
    if (!(gamma > 0.0)) throw ConfigError("adaptive weight exponent gamma must be positive");
    std::vector<double> w;
    w.reserve(lattice.graph.edges.size());
    for (const auto& e : lattice.graph.edges) {
        const auto block = pilot.block(e.block);
        const double d = std::abs(block[static_cast<Eigen::Index>(e.i)] - block[static_cast<Eigen::Index>(e.j)]);
        w.push_back(d <= tol ? std::numeric_limits<double>::infinity() : std::pow(d, -gamma));
    }
    return w;
}

void require_enough_observations(const TimeSeriesPanel& panel) {
    if (panel.T() - 1 < panel.n()) {
        throw DataError("panel has T - 1 = " + std::to_string(panel.T() - 1) + " transitions for n = " +
                        std::to_string(panel.n()) +
                        " locations; the residual covariance would be singular, more time points are needed");
    }
}

StageResult fit_ols(const TimeSeriesPanel& panel, const Lattice& lattice, const PipelineOptions& opts) {
    if (panel.n() != lattice.n()) throw DataError("panel rows do not match the grid size");
    const auto n = static_cast<Eigen::Index>(lattice.n());
    return unpenalized_stage("ols", panel, lattice, Eigen::MatrixXd::Identity(n, n), opts);
}

StageResult fit_gls(const TimeSeriesPanel& panel, const Lattice& lattice, const Eigen::MatrixXd& psi,
                    const PipelineOptions& opts) {
    return unpenalized_stage("gls", panel, lattice, psi, opts);
}

StageResult fit_fused(const TimeSeriesPanel& panel, const Lattice& lattice, const StageResult& ols,
                      const PipelineOptions& opts) {
    const std::vector<double> unit(lattice.graph.edges.size(), 1.0);
    return penalized_stage("fused", panel, lattice, ols.psi_next, unit, opts);
}

StageResult fit_adaptive(const TimeSeriesPanel& panel, const Lattice& lattice, const StageResult& fused,
                         const PipelineOptions& opts) {
    const std::vector<double> w =
        adaptive_weights(lattice, fused.alpha, opts.gamma, fusion_tolerance(fused.alpha.values(), opts.admm));
    return penalized_stage("adaptive", panel, lattice, fused.psi_next, w, opts);
}

FitReport fit_pipeline(const TimeSeriesPanel& panel, const Lattice& lattice, const PipelineOptions& opts) {
    if (panel.n() != lattice.n()) throw DataError("panel rows do not match the grid size");
    require_enough_observations(panel);
    FitReport report;
    report.stages.push_back(fit_ols(panel, lattice, opts));
    if (opts.include_gls) report.gls = fit_gls(panel, lattice, report.stages[0].psi_next, opts);
    report.stages.push_back(fit_fused(panel, lattice, report.stages[0], opts));
    report.stages.push_back(fit_adaptive(panel, lattice, report.stages[1], opts));
    for (const auto& stage : report.stages) {
        for (const auto& w : stage.warnings) report.warnings.push_back(stage.name + ": " + w);
    }
    return report;
}

}  // namespace stvar
