#pragma once

// h-step best linear prediction under a VAR(1) and the normalized prediction
// mean squared error
//   PMSE_h = 1 + E[(Z*_h - Z_h)' Sigma_h^{-1} (Z*_h - Z_h)] / |S|
// where Z*_h uses the true model, Z_h the estimated one, and Sigma_h is the
// true h-step prediction covariance restricted to the location subset S.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stvar/model.hpp"
#include "stvar/simulate.hpp"

namespace stvar {

struct ForecastResult {
    std::vector<Eigen::VectorXd> mean;        // h = 1..H
    std::vector<Eigen::MatrixXd> covariance;  // Sigma_h, h = 1..H
};

// Sigma_1 = Psi, Sigma_h = Sigma_{h-1} + A^{h-1} Psi (A^{h-1})'.
std::vector<Eigen::MatrixXd> prediction_covariances(const VarModel& model, std::size_t H);

// Throws ConfigError when H = 0 or z has the wrong length.
ForecastResult predict(const VarModel& model, const Eigen::VectorXd& z, std::size_t H);

// Columns are draws from the stationary distribution: one path started at
// zero, burn_in steps discarded, then every spacing-th state.
Eigen::MatrixXd stationary_snapshots(const VarModel& truth, std::size_t count, std::mt19937_64& rng,
                                     std::size_t spacing = 50, std::size_t burn_in = 500);

struct PmseResult {
    std::vector<double> value;  // per horizon
    std::vector<double> se;     // Monte Carlo standard error per horizon
};

// Evaluates on given snapshots. subset lists location indices (empty = all).
// Throws NumericalError when Sigma_h restricted to the subset is singular.
PmseResult pmse(const VarModel& truth, const TransitionMatrix& estimate, std::size_t H,
                const std::vector<std::size_t>& subset, const Eigen::MatrixXd& snapshots);

PmseResult pmse(const VarModel& truth, const TransitionMatrix& estimate, std::size_t H,
                const std::vector<std::size_t>& subset, std::size_t n_mc, std::uint64_t seed);

// Mean over replicates and its standard error.
struct MeanWithError {
    double mean = 0.0;
    double se = 0.0;
};
MeanWithError mean_with_error(const std::vector<double>& values);

// PMSE of every estimator on every successful replicate. Each replicate draws
// one set of stationary snapshots from the true model and shares it across
// estimators and subsets, so estimator differences are paired.
struct PmseTable {
    std::vector<std::string> subsets;  // "all", "inner"
    std::vector<Estimator> estimators;
    std::size_t horizons = 0;
    // values[subset][estimator][h] holds one entry per used replicate
    std::vector<std::vector<std::vector<std::vector<double>>>> values;

    const std::vector<double>& at(std::size_t subset, Estimator e, std::size_t h) const;
    MeanWithError summary(std::size_t subset, Estimator e, std::size_t h) const;
    // mean and standard error of the paired difference a - b
    MeanWithError gap(std::size_t subset, Estimator a, Estimator b, std::size_t h) const;
};

struct PmseOptions {
    std::size_t horizons = 3;
    std::size_t n_mc = 2000;
    std::size_t spacing = 50;
    std::size_t threads = 1;
};

PmseTable replicate_pmse(const SimulationDesign& design, const std::vector<ReplicateFit>& fits,
                         const std::vector<Estimator>& estimators, const PmseOptions& opts = {});

}  // namespace stvar
