#pragma once

// Data generation from a known VAR(1) on the grid and the replicate harness
// that fits every estimator to independent panels.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stvar/grid.hpp"
#include "stvar/likelihood.hpp"
#include "stvar/model.hpp"
#include "stvar/pipeline.hpp"

namespace stvar {

struct SimulationDesign {
    Lattice lattice;
    CoefficientVector truth;
    InnovationCovariance psi;
    std::size_t T = 500;
    std::size_t burn_in = 500;
    std::size_t replicates = 100;
    std::uint64_t seed = 1;
    bool allow_unstable = false;

    VarModel model() const;
};

// Throws ConfigError for mismatched sizes, or for an unstable truth unless
// allow_unstable is set.
void validate_design(const SimulationDesign& design);

// Draws N(0, Psi) through a Cholesky factor; positive semi-definite
// covariances fall back to a symmetric square root.
class GaussianSampler {
public:
    explicit GaussianSampler(const Eigen::MatrixXd& covariance);
    Eigen::VectorXd draw(std::mt19937_64& rng) const;
    const Eigen::MatrixXd& factor() const { return factor_; }

private:
    Eigen::MatrixXd factor_;
};

// Starts at zero, discards burn_in steps, then records T steps.
TimeSeriesPanel simulate_panel(const SimulationDesign& design, std::mt19937_64& rng);
TimeSeriesPanel simulate_panel(const SimulationDesign& design, std::uint64_t seed);

// Cluster values of the 7 x 7 benchmark truth. The split between the left
// and right halves is x <= 2, between bottom and top y <= 2 (inner x, y in 1..5).
struct BenchmarkTruth {
    double block1 = 0.25;
    // bottom-left, bottom-right, top-left, top-right before scaling
    std::array<double, 4> block2 = {0.3, 0.15, -0.15, -0.3};
    double block2_scale = 0.25 / 0.3;
    std::array<double, 2> block4 = {0.2, -0.1};  // left, right
    std::array<double, 2> block5 = {-0.1, 0.2};
    double boundary = 0.3;
    double psi_variance = 1.0;
    double psi_range = 0.25;
};

// K = 5 (rook) or K = 9 (queen, blocks 6-9 zero).
SimulationDesign benchmark_design_7x7(std::size_t T, std::size_t K, const BenchmarkTruth& values = {});

enum class Estimator { ols, gls, fused, adaptive };
inline constexpr std::array<Estimator, 4> all_estimators = {Estimator::ols, Estimator::gls, Estimator::fused,
                                                            Estimator::adaptive};
std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& name);

// SplitMix64 of (master, index): independent of execution order.
std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t index);

struct ReplicateFit {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::map<Estimator, CoefficientVector> alpha;
    std::map<Estimator, std::vector<std::size_t>> cluster_counts;  // per block
    Eigen::MatrixXd psi;  // final residual covariance of the last stage run
};

inline constexpr std::array<double, 5> summary_levels = {0.025, 0.25, 0.5, 0.75, 0.975};

struct EstimatorSummary {
    Eigen::MatrixXd quantiles;             // m x 5, columns follow summary_levels
    std::vector<double> recovery_rate;     // per block: cluster count equals truth
    std::vector<double> zero_block_rate;   // per block: max |a_k| < zero_threshold (truth-zero blocks only, else NaN)
};

struct EnsembleSummary {
    std::vector<Estimator> estimators;
    std::map<Estimator, EstimatorSummary> per_estimator;
    std::vector<std::size_t> true_cluster_counts;
    Eigen::MatrixXd psi_median, psi_q25, psi_q75;
    std::size_t replicates_used = 0;
    std::size_t replicates_failed = 0;
};

struct ReplicateOptions {
    std::vector<Estimator> estimators{all_estimators.begin(), all_estimators.end()};
    PipelineOptions pipeline;
    std::size_t threads = 1;
    double zero_threshold = 0.05;
};

struct ReplicateRun {
    std::vector<ReplicateFit> fits;  // in replicate order
    EnsembleSummary summary;
};

ReplicateFit fit_replicate(const SimulationDesign& design, std::size_t index, const ReplicateOptions& opts);
ReplicateRun run_replicates(const SimulationDesign& design, const ReplicateOptions& opts = {});
EnsembleSummary summarize(const SimulationDesign& design, const std::vector<ReplicateFit>& fits,
                          const ReplicateOptions& opts);

// Linear-interpolation sample quantile of unsorted values.
double sample_quantile(std::vector<double> values, double p);

// Runs body(i) for i in [0, count) on up to `threads` workers. Exceptions
// propagate after all workers finish.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& body);

}  // namespace stvar
