#include "stvar/likelihood.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "stvar/errors.hpp"

namespace stvar {

TimeSeriesPanel::TimeSeriesPanel(Eigen::MatrixXd Z) : Z_(std::move(Z)) {
    if (Z_.cols() < 2) throw DataError("panel needs at least two time points");
    if (Z_.rows() < 1) throw DataError("panel has no locations");
    for (Eigen::Index t = 0; t < Z_.cols(); ++t) {
        for (Eigen::Index i = 0; i < Z_.rows(); ++i) {
            if (!std::isfinite(Z_(i, t))) {
                std::ostringstream msg;
                msg << "non-finite panel value at location " << i << ", time " << t;
                throw DataError(msg.str());
            }
        }
    }
}

namespace {

Eigen::LLT<Eigen::MatrixXd> factor_psi(const Eigen::MatrixXd& psi) {
    Eigen::LLT<Eigen::MatrixXd> llt(psi);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("innovation covariance is singular or not positive definite");
    }
    return llt;
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

GramSystem build_gram(const TimeSeriesPanel& panel, const IndicatorMap& map, const Eigen::MatrixXd& psi) {
    const auto n = static_cast<Eigen::Index>(panel.n());
    if (static_cast<std::size_t>(n) != map.n() || psi.rows() != n || psi.cols() != n) {
        throw DataError("panel, indicator map and covariance dimensions disagree");
    }
    const auto llt = factor_psi(psi);
    const Eigen::MatrixXd psi_inv = llt.solve(Eigen::MatrixXd::Identity(n, n));

    const Eigen::MatrixXd lag_moment = panel.lagged() * panel.lagged().transpose();
    const Eigen::MatrixXd cross_moment = panel.current() * panel.lagged().transpose();
    const Eigen::MatrixXd weighted_cross = llt.solve(cross_moment);

    const std::size_t m = map.m();
    GramSystem sys;
    sys.gram.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    sys.cross.resize(static_cast<Eigen::Index>(m));
    // Kronecker entry for columns a, b of P: S0(col_a, col_b) * Psi^{-1}(row_a, row_b).
    for (std::size_t a = 0; a < m; ++a) {
        const auto ra = static_cast<Eigen::Index>(map[a].row);
        const auto ca = static_cast<Eigen::Index>(map[a].col);
        sys.cross[static_cast<Eigen::Index>(a)] = weighted_cross(ra, ca);
        for (std::size_t b = a; b < m; ++b) {
            const auto rb = static_cast<Eigen::Index>(map[b].row);
            const auto cb = static_cast<Eigen::Index>(map[b].col);
            const double v = lag_moment(ca, cb) * psi_inv(ra, rb);
            sys.gram(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v;
            sys.gram(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = v;
        }
    }
    const Eigen::MatrixXd current_moment = panel.current() * panel.current().transpose();
    sys.response_energy = (psi_inv.array() * current_moment.array()).sum();
    sys.log_det_psi = log_det(llt);
    sys.n = panel.n();
    sys.n_obs = panel.T() - 1;
    return sys;
}

QuadraticForm reduce_to_regression(const GramSystem& system) {
    const Eigen::Index m = system.gram.rows();
    QuadraticForm q;
    q.gram = system.gram;
    Eigen::LLT<Eigen::MatrixXd> llt(q.gram);
    if (llt.info() != Eigen::Success) {
        const double trace = system.gram.trace();
        double delta = 1e-10 * (trace > 0.0 ? trace / static_cast<double>(m) : 1.0);
        bool ok = false;
        for (int attempt = 0; attempt < 4 && !ok; ++attempt, delta *= 100.0) {
            q.gram = system.gram;
            q.gram.diagonal().array() += delta;
            llt.compute(q.gram);
            if (llt.info() == Eigen::Success) {
                q.jitter = delta;
                ok = true;
            }
        }
        if (!ok) {
            Eigen::LDLT<Eigen::MatrixXd> ldlt(system.gram);
            std::ostringstream msg;
            msg << "Gram matrix is ill-conditioned (reciprocal condition estimate " << ldlt.rcond()
                << "); Cholesky failed after jitter";
            throw NumericalError(msg.str());
        }
    }
    q.X = llt.matrixU();
    q.y = llt.matrixL().solve(system.cross);
    q.cross = system.cross;

    const double nobs = static_cast<double>(system.n_obs);
    const double n = static_cast<double>(system.n);
    q.constant = -0.5 * system.response_energy + 0.5 * q.y.squaredNorm() -
                 0.5 * nobs * n * std::log(2.0 * std::numbers::pi) - 0.5 * nobs * system.log_det_psi;
    return q;
}

double loglik_direct(const TimeSeriesPanel& panel, const TransitionMatrix& A, const Eigen::MatrixXd& psi) {
    const auto llt = factor_psi(psi);
    const Eigen::MatrixXd residuals = panel.current() - A * panel.lagged();
    const Eigen::MatrixXd whitened = llt.matrixL().solve(residuals);
    const double nobs = static_cast<double>(panel.T() - 1);
    const double n = static_cast<double>(panel.n());
    return -0.5 * whitened.squaredNorm() - 0.5 * nobs * n * std::log(2.0 * std::numbers::pi) -
           0.5 * nobs * log_det(llt);
}

PsiEstimate update_psi(const TimeSeriesPanel& panel, const TransitionMatrix& A) {
    const Eigen::MatrixXd residuals = panel.current() - A * panel.lagged();
    Eigen::MatrixXd psi = residuals * residuals.transpose() / static_cast<double>(panel.T() - 1);
    psi = 0.5 * (psi + psi.transpose());
    PsiEstimate est;
    est.covariance.matrix = std::move(psi);
    est.rank_deficient = panel.T() - 1 < panel.n();
    return est;
}

}  // namespace stvar
