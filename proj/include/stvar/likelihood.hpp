#pragma once

// Conditional Gaussian log-likelihood of a VAR(1) on the grid, written as a
// least-squares problem in the stacked coefficients:
//   l(alpha) = -1/2 ||y - X alpha||^2 + constant,
//   X'X = P' {(sum Z_{t-1} Z_{t-1}') (x) Psi^{-1}} P,
//   X'y = P' vec(Psi^{-1} sum Z_t Z_{t-1}').

#include <cstddef>

#include <Eigen/Dense>

#include "stvar/grid.hpp"
#include "stvar/model.hpp"

namespace stvar {

// Columns are time points, rows follow the partition ordering.
class TimeSeriesPanel {
public:
    TimeSeriesPanel() = default;
    // Throws DataError when T < 2 or a value is not finite.
    explicit TimeSeriesPanel(Eigen::MatrixXd Z);

    const Eigen::MatrixXd& Z() const { return Z_; }
    std::size_t n() const { return static_cast<std::size_t>(Z_.rows()); }
    std::size_t T() const { return static_cast<std::size_t>(Z_.cols()); }
    auto lagged() const { return Z_.leftCols(Z_.cols() - 1); }
    auto current() const { return Z_.rightCols(Z_.cols() - 1); }

private:
    Eigen::MatrixXd Z_;
};

struct GramSystem {
    Eigen::MatrixXd gram;  // m x m
    Eigen::VectorXd cross;  // m
    double response_energy = 0.0;  // sum_{t>=2} Z_t' Psi^{-1} Z_t
    double log_det_psi = 0.0;
    std::size_t n = 0;
    std::size_t n_obs = 0;  // T - 1
};

// Assembles the Gram matrix and cross-moment vector from lag moments and the
// indicator map without forming the n^2 x n^2 Kronecker product. Throws
// NumericalError when psi is not positive definite.
GramSystem build_gram(const TimeSeriesPanel& panel, const IndicatorMap& map, const Eigen::MatrixXd& psi);

struct QuadraticForm {
    Eigen::MatrixXd X;  // upper triangular, X'X = gram
    Eigen::VectorXd y;  // X'y = cross
    Eigen::MatrixXd gram;  // includes any diagonal jitter
    Eigen::VectorXd cross;
    double constant = 0.0;  // full Gaussian normalising terms included
    double jitter = 0.0;

    std::size_t m() const { return static_cast<std::size_t>(y.size()); }
    double loglik(const Eigen::VectorXd& alpha) const {
        return -0.5 * (y - X * alpha).squaredNorm() + constant;
    }
    double rss(const Eigen::VectorXd& alpha) const { return (y - X * alpha).squaredNorm(); }
};

// Cholesky reduction of the Gram system. A semi-definite Gram matrix gets
// diagonal jitter 1e-10 * trace / m, escalated x100 at most three times;
// beyond that a NumericalError carrying a condition estimate is thrown.
QuadraticForm reduce_to_regression(const GramSystem& system);

// Sum over t = 2..T of the Gaussian log density of Z_t given Z_{t-1}.
double loglik_direct(const TimeSeriesPanel& panel, const TransitionMatrix& A, const Eigen::MatrixXd& psi);

struct PsiEstimate {
    InnovationCovariance covariance;
    bool rank_deficient = false;  // T - 1 < n, the estimate is singular
};

// Residual outer-product estimate (1 / (T-1)) sum r_t r_t'.
PsiEstimate update_psi(const TimeSeriesPanel& panel, const TransitionMatrix& A);

}  // namespace stvar
