#include "stvar/model.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "stvar/errors.hpp"

namespace stvar {

CoefficientVector::CoefficientVector(CoefficientLayout layout, Eigen::VectorXd values)
    : layout_(layout), values_(std::move(values)) {
    if (static_cast<std::size_t>(values_.size()) != layout_.m()) {
        throw ConfigError("coefficient vector length " + std::to_string(values_.size()) +
                          " does not match layout length " + std::to_string(layout_.m()));
    }
}

CoefficientVector CoefficientVector::zeros(CoefficientLayout layout) {
    return CoefficientVector(layout, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.m())));
}

TransitionMatrix assemble_transition(const CoefficientVector& alpha, const IndicatorMap& map) {
    if (alpha.size() != map.m()) {
        throw ConfigError("coefficient vector length does not match the indicator map");
    }
    const auto n = static_cast<Eigen::Index>(map.n());
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(map.m());
    for (std::size_t a = 0; a < map.m(); ++a) {
        triplets.emplace_back(static_cast<int>(map[a].row), static_cast<int>(map[a].col), alpha.values()[a]);
    }
    TransitionMatrix A(n, n);
    A.setFromTriplets(triplets.begin(), triplets.end());
    return A;
}

CoefficientVector extract_coefficients(const TransitionMatrix& A, const IndicatorMap& map,
                                       CoefficientLayout layout) {
    if (static_cast<std::size_t>(A.rows()) != map.n() || static_cast<std::size_t>(A.cols()) != map.n()) {
        throw ConfigError("transition matrix size does not match the indicator map");
    }
    Eigen::VectorXd values(static_cast<Eigen::Index>(map.m()));
    for (std::size_t a = 0; a < map.m(); ++a) {
        values[static_cast<Eigen::Index>(a)] = A.coeff(static_cast<Eigen::Index>(map[a].row),
                                                       static_cast<Eigen::Index>(map[a].col));
    }
    return CoefficientVector(layout, std::move(values));
}

bool check_stability_rowsum(const TransitionMatrix& A) {
    for (Eigen::Index r = 0; r < A.outerSize(); ++r) {
        double sum = 0.0;
        for (TransitionMatrix::InnerIterator it(A, r); it; ++it) sum += std::abs(it.value());
        if (!(sum < 1.0)) return false;
    }
    return true;
}

SpectralCheck check_stability_spectral(const TransitionMatrix& A, double tol) {
    const Eigen::MatrixXd dense(A);
    Eigen::EigenSolver<Eigen::MatrixXd> solver(dense, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success) {
        throw NumericalError("eigenvalue computation for the stability check did not converge");
    }
    double radius = 0.0;
    if (dense.size() > 0) radius = solver.eigenvalues().cwiseAbs().maxCoeff();
    return {radius < 1.0 - tol, radius};
}

Eigen::MatrixX2d unit_square_coordinates(const GridSpec& grid, const GridPartition& partition) {
    const int span = std::max(grid.nx(), grid.ny()) - 1;
    const double h = span > 0 ? 1.0 / span : 0.0;
    Eigen::MatrixX2d coords(static_cast<Eigen::Index>(partition.n()), 2);
    for (std::size_t i = 0; i < partition.n(); ++i) {
        coords(static_cast<Eigen::Index>(i), 0) = partition.cell(i).x * h;
        coords(static_cast<Eigen::Index>(i), 1) = partition.cell(i).y * h;
    }
    return coords;
}

InnovationCovariance exponential_covariance(const Eigen::MatrixX2d& coords, double variance,
                                            double range) {
    if (!(variance > 0.0) || !(range > 0.0)) {
        throw ConfigError("exponential covariance needs positive variance and range");
    }
    const Eigen::Index n = coords.rows();
    Eigen::MatrixXd psi(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        psi(i, i) = variance;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d = (coords.row(i) - coords.row(j)).norm();
            psi(i, j) = psi(j, i) = variance * std::exp(-d / range);
        }
    }
    return {std::move(psi), CovarianceDescriptor{"exponential", variance, range}};
}

InnovationCovariance exponential_covariance(const GridSpec& grid, const GridPartition& partition,
                                            double variance, double range) {
    return exponential_covariance(unit_square_coordinates(grid, partition), variance, range);
}

}  // namespace stvar
