#pragma once

// Three-stage estimator: restricted OLS (Psi = I, lambda = 0), fused Lasso
// with unit weights, then adaptive fused Lasso with weights |pilot diff|^-gamma.
// Psi is re-estimated from the residuals after every stage.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stvar/genlasso.hpp"
#include "stvar/grid.hpp"
#include "stvar/likelihood.hpp"
#include "stvar/model.hpp"

namespace stvar {

struct PipelineOptions {
    std::size_t n_lambdas = 30;
    double gamma = 1.0;  // adaptive weight exponent
    AdmmOptions admm;
    // Solve both penalized stages at this lambda instead of a BIC sweep.
    std::optional<double> lambda_override;
    // Also report the unpenalized fit under the stage-I Psi estimate.
    bool include_gls = false;
};

struct ClusterSummary {
    std::size_t block = 0;
    std::vector<std::vector<std::size_t>> members;  // inner indices per component
    std::vector<double> values;                     // mean coefficient per component

    std::size_t components() const { return members.size(); }
};

struct StageResult {
    std::string name;
    CoefficientVector alpha;
    Eigen::MatrixXd psi_used;  // covariance the stage was fitted under
    Eigen::MatrixXd psi_next;  // residual estimate from this stage's fit
    bool psi_rank_deficient = false;
    bool psi_regularized = false;
    double lambda = 0.0;
    double bic = 0.0;
    std::size_t df = 0;
    std::vector<LambdaTracePoint> trace;
    bool rowsum_stable = false;
    SpectralCheck spectral;
    std::vector<ClusterSummary> clusters;  // one per stencil block
    std::vector<std::string> warnings;
    double seconds = 0.0;
};

struct FitReport {
    std::vector<StageResult> stages;  // ols, fused, adaptive
    std::optional<StageResult> gls;
    std::vector<std::string> warnings;

    const StageResult& ols() const { return stages.at(0); }
    const StageResult& fused() const { return stages.at(1); }
    const StageResult& adaptive() const { return stages.at(2); }
};

// Components of each block's inner coefficients over the 4-adjacency graph,
// joining neighbours whose values differ by at most tol.
std::vector<ClusterSummary> cluster_blocks(const Lattice& lattice, const CoefficientVector& alpha, double tol);

// Adaptive weights |a_pos - a_neg|^-gamma per row of the unit-weight penalty;
// differences within tol become +infinity (hard fusion).
std::vector<double> adaptive_weights(const Lattice& lattice, const CoefficientVector& pilot, double gamma,
                                     double tol);

// Throws DataError when T - 1 < n.
void require_enough_observations(const TimeSeriesPanel& panel);

StageResult fit_ols(const TimeSeriesPanel& panel, const Lattice& lattice, const PipelineOptions& opts = {});
StageResult fit_gls(const TimeSeriesPanel& panel, const Lattice& lattice, const Eigen::MatrixXd& psi,
                    const PipelineOptions& opts = {});
StageResult fit_fused(const TimeSeriesPanel& panel, const Lattice& lattice, const StageResult& ols,
                      const PipelineOptions& opts = {});
StageResult fit_adaptive(const TimeSeriesPanel& panel, const Lattice& lattice, const StageResult& fused,
                         const PipelineOptions& opts = {});

FitReport fit_pipeline(const TimeSeriesPanel& panel, const Lattice& lattice, const PipelineOptions& opts = {});

}  // namespace stvar
