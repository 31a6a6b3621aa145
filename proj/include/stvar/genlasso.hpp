#pragma once

// Generalized Lasso  min_a 1/2 ||y - X a||^2 + lambda ||D a||_1  for the
// weighted fused-difference penalty on the inner-grid copies.
//
// The solver is ADMM on the split z = D a with residual-balanced rho. Each
// candidate fused set read off z (exact zeros after soft-thresholding) is
// polished: fused columns are merged, the sign pattern of the remaining rows
// is fixed, and the resulting linear system is solved exactly. A polished
// point is accepted only when it passes the KKT certificate
//   G a - c + lambda D'u = 0,  |u| <= 1,  u_r = sign((D a)_r) off the fused set.

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "stvar/grid.hpp"
#include "stvar/likelihood.hpp"

namespace stvar {

struct PenaltyRow {
    std::size_t pos = 0;  // column carrying +w
    std::size_t neg = 0;  // column carrying -w
    double weight = 1.0;
    PenaltyEdge edge;
};

class PenaltyMatrix {
public:
    PenaltyMatrix() = default;
    PenaltyMatrix(std::size_t m, std::vector<PenaltyRow> rows) : m_(m), rows_(std::move(rows)) {}

    std::size_t rows() const { return rows_.size(); }
    std::size_t cols() const { return m_; }
    const PenaltyRow& row(std::size_t r) const { return rows_[r]; }
    const std::vector<PenaltyRow>& row_list() const { return rows_; }
    bool has_infinite_weights() const;

    Eigen::VectorXd apply(const Eigen::VectorXd& alpha) const;            // D a
    Eigen::VectorXd apply_transpose(const Eigen::VectorXd& v) const;      // D'v
    Eigen::MatrixXd normal_matrix() const;                                // D'D
    Eigen::SparseMatrix<double> sparse() const;

private:
    std::size_t m_ = 0;
    std::vector<PenaltyRow> rows_;
};

// Rows follow the graph's edge order. Weights must be positive; +infinity is
// accepted and marks a hard fusion (see merge_hard_fusions).
PenaltyMatrix build_penalty_matrix(const PenaltyGraph& graph, const GridPartition& partition,
                                   std::span<const double> weights);
PenaltyMatrix build_penalty_matrix(const PenaltyGraph& graph, const GridPartition& partition);

// Columns joined by infinite-weight rows collapse to one representative.
struct HardFusion {
    std::vector<std::size_t> group_of;  // full column -> reduced column
    std::size_t reduced_m = 0;
    PenaltyMatrix reduced;               // remaining rows on reduced columns
    std::vector<std::size_t> kept_rows;  // original index of each reduced row

    bool is_identity() const { return reduced_m == group_of.size(); }
    Eigen::VectorXd expand(const Eigen::VectorXd& reduced_alpha) const;
    // M'GM and M'c for the column-merging matrix M.
    Eigen::MatrixXd reduce_gram(const Eigen::MatrixXd& gram) const;
    Eigen::VectorXd reduce_vector(const Eigen::VectorXd& v) const;
};

HardFusion merge_hard_fusions(const PenaltyMatrix& D, std::span<const std::size_t> infinite_rows);
// Uses every row whose weight is +infinity.
HardFusion merge_hard_fusions(const PenaltyMatrix& D);

struct GenLassoProblem {
    Eigen::MatrixXd gram;   // X'X
    Eigen::VectorXd cross;  // X'y
    double response_sq = 0.0;  // y'y
    PenaltyMatrix D;
    double lambda = 0.0;

    static GenLassoProblem from_quadratic(const QuadraticForm& q, PenaltyMatrix D, double lambda);

    std::size_t m() const { return static_cast<std::size_t>(cross.size()); }
    double rss(const Eigen::VectorXd& alpha) const;
    double penalty(const Eigen::VectorXd& alpha) const;
    double objective(const Eigen::VectorXd& alpha) const { return 0.5 * rss(alpha) + lambda * penalty(alpha); }
};

struct AdmmOptions {
    int max_iterations = 10000;
    double abs_tol = 1e-8;
    double rel_tol = 1e-6;
    // Relative to 1 + ||X'y||_inf.
    double kkt_tol = 1e-6;
    // Fusion tolerance is fusion_rel_tol * (1 + max |a|) on |a_i - a_j|.
    double fusion_rel_tol = 1e-8;
    double rho = 0.0;  // 0 picks trace(G) / trace(D'D)
    bool adapt_rho = true;
    int polish_every = 20;
};

// Carries iterates between solves at neighbouring lambdas.
struct SolverState {
    Eigen::VectorXd alpha;
    Eigen::VectorXd z;
    Eigen::VectorXd dual;  // unscaled ADMM multiplier for z = D a
    double rho = 0.0;
    double lambda = 0.0;
};

struct SolveResult {
    Eigen::VectorXd alpha;
    double objective = 0.0;
    double rss = 0.0;
    std::size_t df = 0;
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double kkt_residual = std::numeric_limits<double>::infinity();
    bool converged = false;
    bool polished = false;
    Eigen::VectorXd subgradient;          // u, one entry per row of D
    std::vector<std::size_t> fused_rows;  // |a_pos - a_neg| <= fusion tolerance
    SolverState state;
};

double fusion_tolerance(const Eigen::VectorXd& alpha, const AdmmOptions& opts);

// Connected components of the graph whose edges are the fused rows; isolated
// (unpenalized) columns count one each.
std::size_t count_distinct(const PenaltyMatrix& D, const Eigen::VectorXd& alpha, double tol);

struct KktReport {
    double residual = std::numeric_limits<double>::infinity();
    Eigen::VectorXd subgradient;
    bool passed = false;
};

// Certifies a candidate: rows with |D a| above the fusion tolerance take their
// sign, the rest get the best box-feasible multiplier.
KktReport kkt_certificate(const GenLassoProblem& problem, const Eigen::VectorXd& alpha,
                          const AdmmOptions& opts, const Eigen::VectorXd* dual_hint = nullptr);

SolveResult solve_admm(const GenLassoProblem& problem, const AdmmOptions& opts = {},
                       const SolverState* warm_start = nullptr);

// Unpenalized (lambda = 0) solution G a = c.
Eigen::VectorXd solve_unpenalized(const GenLassoProblem& problem);

// Smallest lambda, in a halving search started from a certified upper bound,
// at which the fully fused point is optimal. The lambda field is ignored.
double lambda_max(const GenLassoProblem& problem, const AdmmOptions& opts = {});
// n_lambdas log-spaced values from lambda_max down to lambda_max * 1e-4.
std::vector<double> lambda_grid(const GenLassoProblem& problem, std::size_t n_lambdas,
                                const AdmmOptions& opts = {});

// ||y - X a||^2 + log(T - 1) df.
double bic(const SolveResult& result, std::size_t T);

struct LambdaTracePoint {
    double lambda = 0.0;
    double bic = std::numeric_limits<double>::quiet_NaN();
    std::size_t df = 0;
    double rss = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct LambdaSelection {
    double lambda = 0.0;
    SolveResult result;
    std::vector<LambdaTracePoint> trace;
    std::vector<std::string> warnings;
};

// Warm-started sweep in descending lambda order; BIC ties go to the larger
// lambda. Non-converged or failed solves are dropped with a warning.
LambdaSelection select_lambda(const GenLassoProblem& problem, std::span<const double> lambdas, std::size_t T,
                              const AdmmOptions& opts = {});

}  // namespace stvar
