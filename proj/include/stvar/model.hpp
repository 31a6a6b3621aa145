#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "stvar/grid.hpp"

namespace stvar {

// Block structure of alpha = (alpha_1', ..., alpha_K', alpha_B')'.
struct CoefficientLayout {
    std::size_t K = 0;
    std::size_t n_inner = 0;
    std::size_t n_boundary = 0;

    static CoefficientLayout of(const GridPartition& partition) {
        return {partition.stencil_size(), partition.n_inner(), partition.n_boundary()};
    }
    std::size_t m() const { return K * n_inner + n_boundary; }
    friend bool operator==(const CoefficientLayout&, const CoefficientLayout&) = default;
};

class CoefficientVector {
public:
    CoefficientVector() = default;
    CoefficientVector(CoefficientLayout layout, Eigen::VectorXd values);
    static CoefficientVector zeros(CoefficientLayout layout);

    const CoefficientLayout& layout() const { return layout_; }
    const Eigen::VectorXd& values() const { return values_; }
    Eigen::VectorXd& values() { return values_; }
    std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

    // alpha_k over the inner points (k is 0-based).
    auto block(std::size_t k) const { return values_.segment(k * layout_.n_inner, layout_.n_inner); }
    auto block(std::size_t k) { return values_.segment(k * layout_.n_inner, layout_.n_inner); }
    auto boundary() const { return values_.tail(layout_.n_boundary); }
    auto boundary() { return values_.tail(layout_.n_boundary); }

private:
    CoefficientLayout layout_;
    Eigen::VectorXd values_;
};

using TransitionMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct CovarianceDescriptor {
    std::string family;  // "exponential"
    double variance = 1.0;
    double range = 1.0;
};

struct InnovationCovariance {
    Eigen::MatrixXd matrix;
    std::optional<CovarianceDescriptor> descriptor;
};

struct VarModel {
    TransitionMatrix A;
    Eigen::MatrixXd psi;

    std::size_t n() const { return static_cast<std::size_t>(A.rows()); }
};

// Places alpha into the sparse n x n transition matrix; every position of the
// indicator map is stored, including explicit zeros.
TransitionMatrix assemble_transition(const CoefficientVector& alpha, const IndicatorMap& map);

// Reads alpha back from A at the indicator-map positions.
CoefficientVector extract_coefficients(const TransitionMatrix& A, const IndicatorMap& map,
                                       CoefficientLayout layout);

// Sufficient condition: every absolute row sum strictly below one.
bool check_stability_rowsum(const TransitionMatrix& A);

struct SpectralCheck {
    bool stable = false;
    double spectral_radius = 0.0;
};

// Dense eigenvalues; stable iff radius < 1 - tol. Throws NumericalError when
// the eigen solver does not converge.
SpectralCheck check_stability_spectral(const TransitionMatrix& A, double tol = 0.0);

// Cell centres scaled into the unit square with isotropic spacing
// 1 / (max(nx, ny) - 1), rows in partition order.
Eigen::MatrixX2d unit_square_coordinates(const GridSpec& grid, const GridPartition& partition);

InnovationCovariance exponential_covariance(const Eigen::MatrixX2d& coords, double variance,
                                            double range);
InnovationCovariance exponential_covariance(const GridSpec& grid, const GridPartition& partition,
                                            double variance, double range);

}  // namespace stvar
