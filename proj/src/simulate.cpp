#include "stvar/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "stvar/errors.hpp"

namespace stvar {

VarModel SimulationDesign::model() const {
    return {assemble_transition(truth, lattice.map), psi.matrix};
}

void validate_design(const SimulationDesign& design) {
    if (design.truth.layout() != CoefficientLayout::of(design.lattice.partition)) {
        throw ConfigError("true coefficients do not match the grid layout");
    }
    const auto n = static_cast<Eigen::Index>(design.lattice.n());
    if (design.psi.matrix.rows() != n || design.psi.matrix.cols() != n) {
        throw ConfigError("innovation covariance does not match the grid size");
    }
    if (design.T < 2) throw ConfigError("simulation length T must be at least 2");
    if (!design.allow_unstable) {
        const SpectralCheck spec = check_stability_spectral(assemble_transition(design.truth, design.lattice.map));
        if (!spec.stable) {
            throw ConfigError("true transition matrix is not stable (spectral radius " +
                              std::to_string(spec.spectral_radius) + ")");
        }
    }
}

GaussianSampler::GaussianSampler(const Eigen::MatrixXd& covariance) {
    Eigen::LLT<Eigen::MatrixXd> llt(covariance);
    if (llt.info() == Eigen::Success) {
        factor_ = llt.matrixL();
        return;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance);
    const double scale = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
    if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() < -1e-10 * scale) {
        throw ConfigError("innovation covariance is not positive semi-definite");
    }
    factor_ = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Eigen::VectorXd GaussianSampler::draw(std::mt19937_64& rng) const {
    std::normal_distribution<double> normal;
    Eigen::VectorXd e(factor_.cols());
    for (auto& x : e) x = normal(rng);
    return factor_ * e;
}

TimeSeriesPanel simulate_panel(const SimulationDesign& design, std::mt19937_64& rng) {
    validate_design(design);
    const TransitionMatrix A = assemble_transition(design.truth, design.lattice.map);
    const GaussianSampler sampler(design.psi.matrix);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(design.lattice.n()));
    Eigen::MatrixXd Z(z.size(), static_cast<Eigen::Index>(design.T));
    for (std::size_t t = 0; t < design.burn_in + design.T; ++t) {
        z = (A * z).eval() + sampler.draw(rng);
        if (t >= design.burn_in) Z.col(static_cast<Eigen::Index>(t - design.burn_in)) = z;
    }
    return TimeSeriesPanel(std::move(Z));
}

TimeSeriesPanel simulate_panel(const SimulationDesign& design, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return simulate_panel(design, rng);
}

SimulationDesign benchmark_design_7x7(std::size_t T, std::size_t K, const BenchmarkTruth& v) {
    if (K != 5 && K != 9) throw ConfigError("benchmark design supports K = 5 or K = 9, got " + std::to_string(K));
    Lattice lattice = Lattice::build(GridSpec::rectangular(7, 7), K == 5 ? Stencil::rook5() : Stencil::queen9());
    CoefficientVector truth = CoefficientVector::zeros(CoefficientLayout::of(lattice.partition));
    SimulationDesign design{std::move(lattice), std::move(truth), {}};
    const auto& p = design.lattice.partition;
    for (std::size_t i = 0; i < p.n_inner(); ++i) {
        const Cell c = p.cell(i);
        const bool left = c.x <= 2;
        const bool bottom = c.y <= 2;
        const auto at = [&](std::size_t k) -> double& { return design.truth.values()[static_cast<Eigen::Index>(p.alpha_index(k, i))]; };
        at(0) = v.block1;
        at(1) = v.block2_scale * v.block2[(bottom ? 0 : 2) + (left ? 0 : 1)];
        at(2) = 0.0;
        at(3) = v.block4[left ? 0 : 1];
        at(4) = v.block5[left ? 0 : 1];
    }
    design.truth.boundary().setConstant(v.boundary);
    design.psi = exponential_covariance(design.lattice.grid, p, v.psi_variance, v.psi_range);
    design.T = T;
    validate_design(design);
    return design;
}

std::string to_string(Estimator e) {
    switch (e) {
        case Estimator::ols: return "ols";
        case Estimator::gls: return "gls";
        case Estimator::fused: return "fused";
        case Estimator::adaptive: return "adaptive";
    }
    return "unknown";
}

Estimator estimator_from_string(const std::string& name) {
    for (Estimator e : all_estimators) {
        if (to_string(e) == name) return e;
    }
    throw ConfigError("unknown estimator '" + name + "' (expected ols, gls, fused or adaptive)");
}

std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t index) {
    auto mix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    return mix(mix(master) ^ index);
}

namespace {

bool wants(const ReplicateOptions& opts, Estimator e) {
    return std::find(opts.estimators.begin(), opts.estimators.end(), e) != opts.estimators.end();
}

std::vector<std::size_t> counts_of(const StageResult& stage) {
    std::vector<std::size_t> out;
    for (const auto& c : stage.clusters) out.push_back(c.components());
    return out;
}

}  // namespace

ReplicateFit fit_replicate(const SimulationDesign& design, std::size_t index, const ReplicateOptions& opts) {
    ReplicateFit fit;
    fit.index = index;
    fit.seed = replicate_seed(design.seed, index);
    try {
        const TimeSeriesPanel panel = simulate_panel(design, fit.seed);
        require_enough_observations(panel);
        const Lattice& lat = design.lattice;
        auto record = [&](Estimator e, const StageResult& s) {
            if (!wants(opts, e)) return;
            fit.alpha[e] = s.alpha;
            fit.cluster_counts[e] = counts_of(s);
        };
        const StageResult ols = fit_ols(panel, lat, opts.pipeline);
        record(Estimator::ols, ols);
        fit.psi = ols.psi_next;
        if (wants(opts, Estimator::gls)) record(Estimator::gls, fit_gls(panel, lat, ols.psi_next, opts.pipeline));
        if (wants(opts, Estimator::fused) || wants(opts, Estimator::adaptive)) {
            const StageResult fused = fit_fused(panel, lat, ols, opts.pipeline);
            record(Estimator::fused, fused);
            fit.psi = fused.psi_next;
            if (wants(opts, Estimator::adaptive)) {
                const StageResult adaptive = fit_adaptive(panel, lat, fused, opts.pipeline);
                record(Estimator::adaptive, adaptive);
                fit.psi = adaptive.psi_next;
            }
        }
        fit.ok = true;
    } catch (const std::exception& e) {
        fit.ok = false;
        fit.error = e.what();
        fit.alpha.clear();
        fit.cluster_counts.clear();
    }
    return fit;
}

double sample_quantile(std::vector<double> values, double p) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const double h = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& body) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    const std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

EnsembleSummary summarize(const SimulationDesign& design, const std::vector<ReplicateFit>& fits,
                          const ReplicateOptions& opts) {
    const Lattice& lat = design.lattice;
    const std::size_t K = lat.K();
    const auto m = static_cast<Eigen::Index>(lat.m());
    EnsembleSummary s;
    s.estimators = opts.estimators;
    for (const auto& c : cluster_blocks(lat, design.truth, 0.0)) s.true_cluster_counts.push_back(c.components());

    std::vector<const ReplicateFit*> ok;
    for (const auto& f : fits) {
        if (f.ok) ok.push_back(&f);
    }
    s.replicates_used = ok.size();
    s.replicates_failed = fits.size() - ok.size();
    const double used = static_cast<double>(ok.size());

    for (Estimator e : opts.estimators) {
        EstimatorSummary es;
        es.quantiles = Eigen::MatrixXd::Constant(m, static_cast<Eigen::Index>(summary_levels.size()),
                                                 std::numeric_limits<double>::quiet_NaN());
        std::vector<double> column(ok.size());
        for (Eigen::Index a = 0; a < m; ++a) {
            for (std::size_t r = 0; r < ok.size(); ++r) column[r] = ok[r]->alpha.at(e).values()[a];
            for (std::size_t q = 0; q < summary_levels.size(); ++q) {
                es.quantiles(a, static_cast<Eigen::Index>(q)) = sample_quantile(column, summary_levels[q]);
            }
        }
        es.recovery_rate.assign(K, 0.0);
        es.zero_block_rate.assign(K, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t k = 0; k < K; ++k) {
            const bool zero_truth = design.truth.block(k).isZero(0.0);
            std::size_t hits = 0, zero_hits = 0;
            for (const auto* f : ok) {
                hits += f->cluster_counts.at(e)[k] == s.true_cluster_counts[k];
                zero_hits += f->alpha.at(e).block(k).cwiseAbs().maxCoeff() < opts.zero_threshold;
            }
            if (!ok.empty()) {
                es.recovery_rate[k] = static_cast<double>(hits) / used;
                if (zero_truth) es.zero_block_rate[k] = static_cast<double>(zero_hits) / used;
            }
        }
        s.per_estimator[e] = std::move(es);
    }

    const auto n = static_cast<Eigen::Index>(lat.n());
    s.psi_median = s.psi_q25 = s.psi_q75 = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> cell(ok.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            for (std::size_t r = 0; r < ok.size(); ++r) cell[r] = ok[r]->psi(i, j);
            s.psi_q25(i, j) = sample_quantile(cell, 0.25);
            s.psi_median(i, j) = sample_quantile(cell, 0.5);
            s.psi_q75(i, j) = sample_quantile(cell, 0.75);
        }
    }
    return s;
}

ReplicateRun run_replicates(const SimulationDesign& design, const ReplicateOptions& opts) {
    validate_design(design);
    if (opts.estimators.empty()) throw ConfigError("no estimators requested");
    ReplicateRun run;
    run.fits.resize(design.replicates);
    parallel_for(design.replicates, opts.threads,
                 [&](std::size_t i) { run.fits[i] = fit_replicate(design, i, opts); });
    run.summary = summarize(design, run.fits, opts);
    return run;
}

}  // namespace stvar
