#include "stvar/genlasso.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "stvar/errors.hpp"
#include "stvar/union_find.hpp"

namespace stvar {

bool PenaltyMatrix::has_infinite_weights() const {
    return std::any_of(rows_.begin(), rows_.end(), [](const PenaltyRow& r) { return std::isinf(r.weight); });
}

Eigen::VectorXd PenaltyMatrix::apply(const Eigen::VectorXd& alpha) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows_.size()));
    for (std::size_t r = 0; r < rows_.size(); ++r) {
        const auto& row = rows_[r];
        out[static_cast<Eigen::Index>(r)] =
            row.weight * (alpha[static_cast<Eigen::Index>(row.pos)] - alpha[static_cast<Eigen::Index>(row.neg)]);
    }
    return out;
}

Eigen::VectorXd PenaltyMatrix::apply_transpose(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m_));
    for (std::size_t r = 0; r < rows_.size(); ++r) {
        const auto& row = rows_[r];
        const double x = row.weight * v[static_cast<Eigen::Index>(r)];
        out[static_cast<Eigen::Index>(row.pos)] += x;
        out[static_cast<Eigen::Index>(row.neg)] -= x;
    }
    return out;
}

Eigen::MatrixXd PenaltyMatrix::normal_matrix() const {
    const auto m = static_cast<Eigen::Index>(m_);
    Eigen::MatrixXd dtd = Eigen::MatrixXd::Zero(m, m);
    for (const auto& row : rows_) {
        const double w2 = row.weight * row.weight;
        const auto p = static_cast<Eigen::Index>(row.pos);
        const auto q = static_cast<Eigen::Index>(row.neg);
        dtd(p, p) += w2;
        dtd(q, q) += w2;
        dtd(p, q) -= w2;
        dtd(q, p) -= w2;
    }
    return dtd;
}

Eigen::SparseMatrix<double> PenaltyMatrix::sparse() const {
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(2 * rows_.size());
    for (std::size_t r = 0; r < rows_.size(); ++r) {
        triplets.emplace_back(static_cast<int>(r), static_cast<int>(rows_[r].pos), rows_[r].weight);
        triplets.emplace_back(static_cast<int>(r), static_cast<int>(rows_[r].neg), -rows_[r].weight);
    }
    Eigen::SparseMatrix<double> D(static_cast<Eigen::Index>(rows_.size()), static_cast<Eigen::Index>(m_));
    D.setFromTriplets(triplets.begin(), triplets.end());
    return D;
}

PenaltyMatrix build_penalty_matrix(const PenaltyGraph& graph, const GridPartition& partition,
                                   std::span<const double> weights) {
    if (weights.size() != graph.edges.size()) {
        throw ConfigError("expected " + std::to_string(graph.edges.size()) + " penalty weights, got " +
                          std::to_string(weights.size()));
    }
    std::vector<PenaltyRow> rows;
    rows.reserve(graph.edges.size());
    for (std::size_t r = 0; r < graph.edges.size(); ++r) {
        const double w = weights[r];
        if (std::isnan(w) || w <= 0.0 || (std::isinf(w) && w < 0.0)) {
            throw ConfigError("penalty weights must be positive (row " + std::to_string(r) + ")");
        }
        const auto& e = graph.edges[r];
        rows.push_back({partition.alpha_index(e.block, e.i), partition.alpha_index(e.block, e.j), w, e});
    }
    return PenaltyMatrix(partition.m(), std::move(rows));
}

PenaltyMatrix build_penalty_matrix(const PenaltyGraph& graph, const GridPartition& partition) {
    const std::vector<double> unit(graph.edges.size(), 1.0);
    return build_penalty_matrix(graph, partition, unit);
}

Eigen::VectorXd HardFusion::expand(const Eigen::VectorXd& reduced_alpha) const {
    Eigen::VectorXd full(static_cast<Eigen::Index>(group_of.size()));
    for (std::size_t i = 0; i < group_of.size(); ++i) {
        full[static_cast<Eigen::Index>(i)] = reduced_alpha[static_cast<Eigen::Index>(group_of[i])];
    }
    return full;
}

Eigen::MatrixXd HardFusion::reduce_gram(const Eigen::MatrixXd& gram) const {
    const auto mr = static_cast<Eigen::Index>(reduced_m);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(mr, mr);
    const std::size_t m = group_of.size();
    for (std::size_t j = 0; j < m; ++j) {
        const auto gj = static_cast<Eigen::Index>(group_of[j]);
        for (std::size_t i = 0; i < m; ++i) {
            out(static_cast<Eigen::Index>(group_of[i]), gj) += gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    return out;
}

Eigen::VectorXd HardFusion::reduce_vector(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(reduced_m));
    for (std::size_t i = 0; i < group_of.size(); ++i) {
        out[static_cast<Eigen::Index>(group_of[i])] += v[static_cast<Eigen::Index>(i)];
    }
    return out;
}

HardFusion merge_hard_fusions(const PenaltyMatrix& D, std::span<const std::size_t> infinite_rows) {
    UnionFind uf(D.cols());
    std::vector<char> is_hard(D.rows(), 0);
    for (std::size_t r : infinite_rows) {
        if (r >= D.rows()) throw ConfigError("hard-fusion row index out of range");
        is_hard[r] = 1;
        uf.unite(D.row(r).pos, D.row(r).neg);
    }
    HardFusion hf;
    hf.group_of = uf.labels();
    hf.reduced_m = uf.components();
    std::vector<PenaltyRow> rows;
    for (std::size_t r = 0; r < D.rows(); ++r) {
        if (is_hard[r]) continue;
        PenaltyRow row = D.row(r);
        row.pos = hf.group_of[row.pos];
        row.neg = hf.group_of[row.neg];
        if (row.pos == row.neg) continue;  // both ends already merged
        rows.push_back(row);
        hf.kept_rows.push_back(r);
    }
    hf.reduced = PenaltyMatrix(hf.reduced_m, std::move(rows));
    return hf;
}

HardFusion merge_hard_fusions(const PenaltyMatrix& D) {
    std::vector<std::size_t> infinite;
    for (std::size_t r = 0; r < D.rows(); ++r) {
        if (std::isinf(D.row(r).weight)) infinite.push_back(r);
    }
    return merge_hard_fusions(D, infinite);
}

GenLassoProblem GenLassoProblem::from_quadratic(const QuadraticForm& q, PenaltyMatrix D, double lambda) {
    if (D.cols() != q.m()) throw ConfigError("penalty matrix columns do not match the coefficient count");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
    return GenLassoProblem{q.gram, q.cross, q.y.squaredNorm(), std::move(D), lambda};
}

double GenLassoProblem::rss(const Eigen::VectorXd& alpha) const {
    return std::max(0.0, alpha.dot(gram * alpha) - 2.0 * cross.dot(alpha) + response_sq);
}

double GenLassoProblem::penalty(const Eigen::VectorXd& alpha) const {
    return D.rows() == 0 ? 0.0 : D.apply(alpha).lpNorm<1>();
}

double fusion_tolerance(const Eigen::VectorXd& alpha, const AdmmOptions& opts) {
    const double scale = alpha.size() > 0 ? alpha.cwiseAbs().maxCoeff() : 0.0;
    return opts.fusion_rel_tol * (1.0 + scale);
}

std::size_t count_distinct(const PenaltyMatrix& D, const Eigen::VectorXd& alpha, double tol) {
    UnionFind uf(D.cols());
    for (const auto& row : D.row_list()) {
        if (std::abs(alpha[static_cast<Eigen::Index>(row.pos)] - alpha[static_cast<Eigen::Index>(row.neg)]) <= tol) {
            uf.unite(row.pos, row.neg);
        }
    }
    return uf.components();
}

namespace {

double kkt_scale(const GenLassoProblem& p) {
    return 1.0 + (p.cross.size() > 0 ? p.cross.cwiseAbs().maxCoeff() : 0.0);
}

// Projected Gauss-Seidel for  min || residual + lambda D_F' u_F ||^2, |u_F| <= 1.
// `residual` enters holding the fixed part and leaves holding the final residual.
void box_least_squares(const PenaltyMatrix& D, const std::vector<std::size_t>& free_rows, double lambda,
                       Eigen::VectorXd& u, Eigen::VectorXd& residual, double target, int max_sweeps = 4000) {
    for (std::size_t r : free_rows) {
        const auto& row = D.row(r);
        const double a = lambda * row.weight;
        residual[static_cast<Eigen::Index>(row.pos)] += a * u[static_cast<Eigen::Index>(r)];
        residual[static_cast<Eigen::Index>(row.neg)] -= a * u[static_cast<Eigen::Index>(r)];
    }
    if (free_rows.empty()) return;
    double last_norm = residual.lpNorm<Eigen::Infinity>();
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        for (std::size_t r : free_rows) {
            const auto& row = D.row(r);
            const double a = lambda * row.weight;
            const auto p = static_cast<Eigen::Index>(row.pos);
            const auto q = static_cast<Eigen::Index>(row.neg);
            double& ur = u[static_cast<Eigen::Index>(r)];
            const double step = (residual[p] - residual[q]) / (2.0 * a);
            const double next = std::clamp(ur - step, -1.0, 1.0);
            const double delta = next - ur;
            if (delta != 0.0) {
                residual[p] += a * delta;
                residual[q] -= a * delta;
                ur = next;
            }
        }
        if (sweep % 25 == 24) {
            const double norm = residual.lpNorm<Eigen::Infinity>();
            if (norm <= target) return;
            if (norm > 0.999 * last_norm) return;  // stalled
            last_norm = norm;
        }
    }
}

// Exact solve with the fused set merged and signs fixed elsewhere.
// state[r]: 0 fused, +1/-1 sign of (D a)_r.
std::optional<Eigen::VectorXd> polish(const GenLassoProblem& p, std::vector<signed char> state) {
    const PenaltyMatrix& D = p.D;
    UnionFind uf(p.m());
    for (std::size_t r = 0; r < D.rows(); ++r) {
        if (state[r] == 0) uf.unite(D.row(r).pos, D.row(r).neg);
    }
    HardFusion merge;
    merge.group_of = uf.labels();
    merge.reduced_m = uf.components();

    Eigen::VectorXd linear = p.cross;
    for (std::size_t r = 0; r < D.rows(); ++r) {
        if (state[r] == 0) continue;
        const auto& row = D.row(r);
        if (merge.group_of[row.pos] == merge.group_of[row.neg]) {
            state[r] = 0;
            continue;
        }
        const double x = p.lambda * row.weight * state[r];
        linear[static_cast<Eigen::Index>(row.pos)] -= x;
        linear[static_cast<Eigen::Index>(row.neg)] += x;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(merge.reduce_gram(p.gram));
    if (llt.info() != Eigen::Success) return std::nullopt;
    Eigen::VectorXd alpha = merge.expand(llt.solve(merge.reduce_vector(linear)));
    for (std::size_t r = 0; r < D.rows(); ++r) {
        if (state[r] == 0) continue;
        const double d = alpha[static_cast<Eigen::Index>(D.row(r).pos)] - alpha[static_cast<Eigen::Index>(D.row(r).neg)];
        if (!(d * state[r] > 0.0)) return std::nullopt;
    }
    return alpha;
}

void finalize(const GenLassoProblem& p, const AdmmOptions& opts, SolveResult& res) {
    res.objective = p.objective(res.alpha);
    res.rss = p.rss(res.alpha);
    const double tol = fusion_tolerance(res.alpha, opts);
    res.df = count_distinct(p.D, res.alpha, tol);
    res.fused_rows.clear();
    for (std::size_t r = 0; r < p.D.rows(); ++r) {
        const auto& row = p.D.row(r);
        if (std::abs(res.alpha[static_cast<Eigen::Index>(row.pos)] - res.alpha[static_cast<Eigen::Index>(row.neg)]) <= tol) {
            res.fused_rows.push_back(r);
        }
    }
}

Eigen::VectorXd soft_threshold(const Eigen::VectorXd& v, double t) {
    return v.unaryExpr([t](double x) { return x > t ? x - t : (x < -t ? x + t : 0.0); });
}

std::vector<signed char> sign_pattern(const Eigen::VectorXd& z) {
    std::vector<signed char> s(static_cast<std::size_t>(z.size()));
    for (Eigen::Index r = 0; r < z.size(); ++r) s[static_cast<std::size_t>(r)] = z[r] > 0.0 ? 1 : (z[r] < 0.0 ? -1 : 0);
    return s;
}

}  // namespace

KktReport kkt_certificate(const GenLassoProblem& problem, const Eigen::VectorXd& alpha, const AdmmOptions& opts,
                          const Eigen::VectorXd* dual_hint) {
    const PenaltyMatrix& D = problem.D;
    const double tol = fusion_tolerance(alpha, opts);
    KktReport rep;
    rep.subgradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(D.rows()));
    Eigen::VectorXd residual = problem.gram * alpha - problem.cross;
    std::vector<std::size_t> free_rows;
    for (std::size_t r = 0; r < D.rows(); ++r) {
        const auto& row = D.row(r);
        const double d = alpha[static_cast<Eigen::Index>(row.pos)] - alpha[static_cast<Eigen::Index>(row.neg)];
        if (std::abs(d) > tol) {
            const double s = d > 0.0 ? 1.0 : -1.0;
            rep.subgradient[static_cast<Eigen::Index>(r)] = s;
            const double x = problem.lambda * row.weight * s;
            residual[static_cast<Eigen::Index>(row.pos)] += x;
            residual[static_cast<Eigen::Index>(row.neg)] -= x;
        } else {
            free_rows.push_back(r);
            if (dual_hint) rep.subgradient[static_cast<Eigen::Index>(r)] = std::clamp((*dual_hint)[static_cast<Eigen::Index>(r)], -1.0, 1.0);
        }
    }
    const double scale = kkt_scale(problem);
    if (problem.lambda > 0.0) {
        box_least_squares(D, free_rows, problem.lambda, rep.subgradient, residual, 0.1 * opts.kkt_tol * scale);
    }
    rep.residual = residual.size() > 0 ? residual.lpNorm<Eigen::Infinity>() / scale : 0.0;
    rep.passed = rep.residual <= opts.kkt_tol;
    return rep;
}

Eigen::VectorXd solve_unpenalized(const GenLassoProblem& problem) {
    Eigen::LLT<Eigen::MatrixXd> llt(problem.gram);
    if (llt.info() != Eigen::Success) throw NumericalError("Gram matrix is not positive definite");
    return llt.solve(problem.cross);
}

SolveResult solve_admm(const GenLassoProblem& problem, const AdmmOptions& opts, const SolverState* warm_start) {
    if (!(problem.lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
    if (problem.D.has_infinite_weights()) {
        throw ConfigError("penalty matrix has infinite weights; merge hard fusions first");
    }
    const PenaltyMatrix& D = problem.D;
    const auto m = static_cast<Eigen::Index>(problem.m());
    const auto r = static_cast<Eigen::Index>(D.rows());
    SolveResult res;

    if (r == 0 || problem.lambda == 0.0) {
        res.alpha = solve_unpenalized(problem);
        const KktReport kkt = kkt_certificate(problem, res.alpha, opts);
        res.kkt_residual = kkt.residual;
        res.subgradient = kkt.subgradient;
        res.converged = kkt.passed;
        res.polished = true;
        finalize(problem, opts, res);
        res.state = {res.alpha, D.apply(res.alpha), Eigen::VectorXd::Zero(r), opts.rho, problem.lambda};
        return res;
    }

    const Eigen::MatrixXd dtd = D.normal_matrix();
    double rho = opts.rho;
    Eigen::VectorXd alpha, z, dual;
    if (warm_start && warm_start->alpha.size() == m && warm_start->z.size() == r) {
        alpha = warm_start->alpha;
        z = warm_start->z;
        dual = warm_start->dual;
        if (warm_start->lambda > 0.0) dual *= problem.lambda / warm_start->lambda;
        if (warm_start->rho > 0.0) rho = warm_start->rho;
    } else {
        alpha = solve_unpenalized(problem);
        z = D.apply(alpha);
        dual = Eigen::VectorXd::Zero(r);
    }
    if (!(rho > 0.0)) rho = problem.gram.trace() / std::max(dtd.trace(), 1e-12);

    Eigen::LLT<Eigen::MatrixXd> llt;
    auto refactor = [&] {
        llt.compute(problem.gram + rho * dtd);
        return llt.info() == Eigen::Success;
    };
    if (!refactor()) throw NumericalError("ADMM system matrix is not positive definite");

    const double sqrt_r = std::sqrt(static_cast<double>(r));
    const double sqrt_m = std::sqrt(static_cast<double>(m));
    std::vector<signed char> last_checked;
    std::vector<signed char> last_polished;
    Eigen::VectorXd d_alpha;

    auto try_polish = [&](const std::vector<signed char>& pattern) -> bool {
        if (pattern == last_polished) return false;
        last_polished = pattern;
        auto candidate = polish(problem, pattern);
        if (!candidate) return false;
        const Eigen::VectorXd hint = dual / problem.lambda;
        KktReport kkt = kkt_certificate(problem, *candidate, opts, &hint);
        if (!kkt.passed) return false;
        res.alpha = std::move(*candidate);
        res.kkt_residual = kkt.residual;
        res.subgradient = std::move(kkt.subgradient);
        res.converged = true;
        res.polished = true;
        return true;
    };

    for (int it = 1; it <= opts.max_iterations; ++it) {
        alpha = llt.solve(problem.cross + D.apply_transpose(rho * z - dual));
        d_alpha = D.apply(alpha);
        const Eigen::VectorXd z_old = z;
        z = soft_threshold(d_alpha + dual / rho, problem.lambda / rho);
        dual += rho * (d_alpha - z);

        res.primal_residual = (d_alpha - z).norm();
        res.dual_residual = rho * D.apply_transpose(z - z_old).norm();
        res.iterations = it;
        const double eps_pri = sqrt_r * opts.abs_tol + opts.rel_tol * std::max(d_alpha.norm(), z.norm());
        const double eps_dual = sqrt_m * opts.abs_tol + opts.rel_tol * D.apply_transpose(dual).norm();
        const bool standard = res.primal_residual <= eps_pri && res.dual_residual <= eps_dual;

        if (standard || it % opts.polish_every == 0) {
            std::vector<signed char> pattern = sign_pattern(z);
            const bool stable = pattern == last_checked;
            last_checked = pattern;
            if ((stable || standard) && try_polish(pattern)) break;
            if (standard) {
                // Second candidate: rows whose differences are already negligible.
                const double cut = 10.0 * eps_pri / std::max(sqrt_r, 1.0);
                std::vector<signed char> alt(static_cast<std::size_t>(r));
                for (Eigen::Index k = 0; k < r; ++k) {
                    alt[static_cast<std::size_t>(k)] =
                        std::abs(d_alpha[k]) <= cut ? 0 : (d_alpha[k] > 0.0 ? 1 : -1);
                }
                if (try_polish(alt)) break;
            }
        }

        if (opts.adapt_rho && it % 10 == 0) {
            // A rescaling that breaks the factorization (extreme weight
            // ratios) is undone rather than fatal.
            const double previous = rho;
            if (res.primal_residual > 10.0 * res.dual_residual) {
                rho *= 2.0;
            } else if (res.dual_residual > 10.0 * res.primal_residual) {
                rho /= 2.0;
            }
            if (rho != previous && !refactor()) {
                rho = previous;
                if (!refactor()) throw NumericalError("ADMM system matrix is not positive definite");
            }
        }
    }

    if (!res.polished) {
        res.alpha = alpha;
        const Eigen::VectorXd hint = dual / problem.lambda;
        KktReport kkt = kkt_certificate(problem, alpha, opts, &hint);
        res.kkt_residual = kkt.residual;
        res.subgradient = std::move(kkt.subgradient);
        res.converged = kkt.passed;
        res.state = {alpha, z, dual, rho, problem.lambda};
    } else {
        res.state = {res.alpha, D.apply(res.alpha), problem.lambda * res.subgradient, rho, problem.lambda};
    }
    finalize(problem, opts, res);
    return res;
}

double lambda_max(const GenLassoProblem& problem, const AdmmOptions& opts) {
    const PenaltyMatrix& D = problem.D;
    if (D.rows() == 0) return 1.0;
    auto fused = polish(problem, std::vector<signed char>(D.rows(), 0));
    if (!fused) throw NumericalError("fully fused problem is not positive definite");
    const Eigen::VectorXd gradient = problem.gram * *fused - problem.cross;

    // Minimum-norm multiplier v with D'v = -gradient bounds lambda_max by ||v||_inf.
    const Eigen::MatrixXd dt = Eigen::MatrixXd(D.sparse()).transpose();
    const Eigen::VectorXd v = dt.completeOrthogonalDecomposition().solve(-gradient);
    const double scale = kkt_scale(problem);
    double upper = std::max(v.lpNorm<Eigen::Infinity>(), 1e-12 * scale);

    std::vector<std::size_t> all_rows(D.rows());
    std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
    auto fully_fused_at = [&](double lambda) {
        Eigen::VectorXd u = (v / lambda).cwiseMax(-1.0).cwiseMin(1.0);
        Eigen::VectorXd residual = gradient;
        box_least_squares(D, all_rows, lambda, u, residual, 0.1 * opts.kkt_tol * scale);
        return residual.lpNorm<Eigen::Infinity>() / scale <= opts.kkt_tol;
    };

    for (int i = 0; i < 60 && !fully_fused_at(upper); ++i) upper *= 2.0;
    for (int i = 0; i < 60 && fully_fused_at(0.5 * upper); ++i) upper *= 0.5;
    return upper;
}

std::vector<double> lambda_grid(const GenLassoProblem& problem, std::size_t n_lambdas, const AdmmOptions& opts) {
    if (n_lambdas < 2) throw ConfigError("lambda grid needs at least two values");
    const double top = lambda_max(problem, opts);
    std::vector<double> grid(n_lambdas);
    const double step = std::log(1e-4) / static_cast<double>(n_lambdas - 1);
    for (std::size_t i = 0; i < n_lambdas; ++i) grid[i] = top * std::exp(step * static_cast<double>(i));
    grid.front() = top;
    return grid;
}

double bic(const SolveResult& result, std::size_t T) {
    return result.rss + std::log(static_cast<double>(T) - 1.0) * static_cast<double>(result.df);
}

LambdaSelection select_lambda(const GenLassoProblem& problem, std::span<const double> lambdas, std::size_t T,
                              const AdmmOptions& opts) {
    if (lambdas.empty()) throw ConfigError("lambda grid is empty");
    std::vector<double> order(lambdas.begin(), lambdas.end());
    std::sort(order.begin(), order.end(), std::greater<>());

    GenLassoProblem local = problem;
    LambdaSelection sel;
    std::optional<SolverState> warm;
    double best_bic = std::numeric_limits<double>::infinity();
    bool have_best = false;
    for (double lambda : order) {
        local.lambda = lambda;
        LambdaTracePoint point;
        point.lambda = lambda;
        try {
            SolveResult res = solve_admm(local, opts, warm ? &*warm : nullptr);
            warm = res.state;
            point.df = res.df;
            point.rss = res.rss;
            point.iterations = res.iterations;
            point.converged = res.converged;
            if (!res.converged) {
                sel.warnings.push_back("solve at lambda=" + std::to_string(lambda) + " did not converge; dropped");
            } else {
                point.bic = bic(res, T);
                if (!have_best || point.bic < best_bic - 1e-12 * std::abs(best_bic)) {
                    best_bic = point.bic;
                    sel.lambda = lambda;
                    sel.result = std::move(res);
                    have_best = true;
                }
            }
        } catch (const NumericalError& e) {
            sel.warnings.push_back("solve at lambda=" + std::to_string(lambda) + " failed: " + e.what());
        }
        sel.trace.push_back(point);
    }
    if (!have_best) throw NumericalError("no lambda in the grid produced a converged solution");
    return sel;
}

}  // namespace stvar
