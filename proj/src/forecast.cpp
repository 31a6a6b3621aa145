#include "stvar/forecast.hpp"

#include <algorithm>
#include <cmath>

#include "stvar/errors.hpp"
#include "stvar/simulate.hpp"

namespace stvar {

std::vector<Eigen::MatrixXd> prediction_covariances(const VarModel& model, std::size_t H) {
    if (H == 0) throw ConfigError("forecast horizon must be at least 1");
    std::vector<Eigen::MatrixXd> out;
    out.reserve(H);
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(model.psi.rows(), model.psi.cols());  // A^{h-1}
    Eigen::MatrixXd sigma = model.psi;
    out.push_back(sigma);
    for (std::size_t h = 2; h <= H; ++h) {
        power = (model.A * power).eval();
        sigma += power * model.psi * power.transpose();
        sigma = (0.5 * (sigma + sigma.transpose())).eval();
        out.push_back(sigma);
    }
    return out;
}

ForecastResult predict(const VarModel& model, const Eigen::VectorXd& z, std::size_t H) {
    if (z.size() != model.A.cols()) throw ConfigError("forecast origin has the wrong length");
    ForecastResult res;
    res.covariance = prediction_covariances(model, H);
    Eigen::VectorXd current = z;
    for (std::size_t h = 1; h <= H; ++h) {
        current = (model.A * current).eval();
        res.mean.push_back(current);
    }
    return res;
}

Eigen::MatrixXd stationary_snapshots(const VarModel& truth, std::size_t count, std::mt19937_64& rng,
                                     std::size_t spacing, std::size_t burn_in) {
    if (spacing == 0) throw ConfigError("snapshot spacing must be positive");
    const GaussianSampler sampler(truth.psi);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(truth.A.rows());
    for (std::size_t t = 0; t < burn_in; ++t) z = (truth.A * z).eval() + sampler.draw(rng);
    Eigen::MatrixXd out(z.size(), static_cast<Eigen::Index>(count));
    for (std::size_t c = 0; c < count; ++c) {
        for (std::size_t s = 0; s < spacing; ++s) z = (truth.A * z).eval() + sampler.draw(rng);
        out.col(static_cast<Eigen::Index>(c)) = z;
    }
    return out;
}

PmseResult pmse(const VarModel& truth, const TransitionMatrix& estimate, std::size_t H,
                const std::vector<std::size_t>& subset, const Eigen::MatrixXd& snapshots) {
    const Eigen::Index n = truth.A.rows();
    if (estimate.rows() != n || estimate.cols() != n) throw ConfigError("estimated model has the wrong size");
    if (snapshots.rows() != n || snapshots.cols() < 1) throw ConfigError("snapshots have the wrong shape");
    std::vector<Eigen::Index> idx;
    if (subset.empty()) {
        for (Eigen::Index i = 0; i < n; ++i) idx.push_back(i);
    } else {
        for (std::size_t i : subset) {
            if (i >= static_cast<std::size_t>(n)) throw ConfigError("PMSE subset index out of range");
            idx.push_back(static_cast<Eigen::Index>(i));
        }
    }
    const auto s = static_cast<double>(idx.size());
    const auto sigmas = prediction_covariances(truth, H);
    const auto draws = static_cast<double>(snapshots.cols());

    PmseResult res;
    Eigen::MatrixXd true_path = snapshots;
    Eigen::MatrixXd est_path = snapshots;
    for (std::size_t h = 0; h < H; ++h) {
        true_path = (truth.A * true_path).eval();
        est_path = (estimate * est_path).eval();
        const Eigen::MatrixXd gap = (true_path - est_path)(idx, Eigen::all);
        const Eigen::MatrixXd sub = sigmas[h](idx, idx);
        const Eigen::LLT<Eigen::MatrixXd> llt(sub);
        if (llt.info() != Eigen::Success) throw NumericalError("prediction covariance is singular");
        const Eigen::VectorXd per_draw =
            (1.0 + llt.matrixL().solve(gap).colwise().squaredNorm().array() / s).matrix().transpose();
        const double mean = per_draw.mean();
        const double var =
            draws > 1.0 ? (per_draw.array() - mean).square().sum() / (draws - 1.0) : 0.0;
        res.value.push_back(mean);
        res.se.push_back(std::sqrt(var / draws));
    }
    return res;
}

PmseResult pmse(const VarModel& truth, const TransitionMatrix& estimate, std::size_t H,
                const std::vector<std::size_t>& subset, std::size_t n_mc, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return pmse(truth, estimate, H, subset, stationary_snapshots(truth, n_mc, rng));
}

MeanWithError mean_with_error(const std::vector<double>& values) {
    MeanWithError out;
    if (values.empty()) return out;
    const auto n = static_cast<double>(values.size());
    for (double v : values) out.mean += v;
    out.mean /= n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.se = std::sqrt(ss / (n - 1.0) / n);
    }
    return out;
}

const std::vector<double>& PmseTable::at(std::size_t subset, Estimator e, std::size_t h) const {
    const auto it = std::find(estimators.begin(), estimators.end(), e);
    if (it == estimators.end()) throw ConfigError("estimator " + to_string(e) + " is not in the PMSE table");
    return values.at(subset).at(static_cast<std::size_t>(it - estimators.begin())).at(h);
}

MeanWithError PmseTable::summary(std::size_t subset, Estimator e, std::size_t h) const {
    return mean_with_error(at(subset, e, h));
}

MeanWithError PmseTable::gap(std::size_t subset, Estimator a, Estimator b, std::size_t h) const {
    const auto& x = at(subset, a, h);
    const auto& y = at(subset, b, h);
    std::vector<double> d(x.size());
    for (std::size_t r = 0; r < x.size(); ++r) d[r] = x[r] - y[r];
    return mean_with_error(d);
}

PmseTable replicate_pmse(const SimulationDesign& design, const std::vector<ReplicateFit>& fits,
                         const std::vector<Estimator>& estimators, const PmseOptions& opts) {
    const VarModel truth = design.model();
    std::vector<std::size_t> inner(design.lattice.n_inner());
    for (std::size_t i = 0; i < inner.size(); ++i) inner[i] = i;
    const std::vector<std::vector<std::size_t>> subsets{{}, inner};

    std::vector<const ReplicateFit*> ok;
    for (const auto& f : fits) {
        if (f.ok) ok.push_back(&f);
    }
    // per_rep[r][subset][estimator] -> per-horizon PMSE
    std::vector<std::vector<std::vector<std::vector<double>>>> per_rep(ok.size());
    parallel_for(ok.size(), opts.threads, [&](std::size_t r) {
        // offset keeps the snapshot stream apart from the panel stream
        std::mt19937_64 rng(replicate_seed(design.seed ^ 0x5bd1e995ULL, ok[r]->index));
        const Eigen::MatrixXd snaps = stationary_snapshots(truth, opts.n_mc, rng, opts.spacing, design.burn_in);
        auto& out = per_rep[r];
        out.resize(subsets.size());
        for (std::size_t s = 0; s < subsets.size(); ++s) {
            for (Estimator e : estimators) {
                const TransitionMatrix A = assemble_transition(ok[r]->alpha.at(e), design.lattice.map);
                out[s].push_back(pmse(truth, A, opts.horizons, subsets[s], snaps).value);
            }
        }
    });

    PmseTable table;
    table.subsets = {"all", "inner"};
    table.estimators = estimators;
    table.horizons = opts.horizons;
    table.values.assign(subsets.size(), std::vector<std::vector<std::vector<double>>>(
                                            estimators.size(), std::vector<std::vector<double>>(opts.horizons)));
    for (const auto& rep : per_rep) {
        for (std::size_t s = 0; s < subsets.size(); ++s) {
            for (std::size_t e = 0; e < estimators.size(); ++e) {
                for (std::size_t h = 0; h < opts.horizons; ++h) table.values[s][e][h].push_back(rep[s][e][h]);
            }
        }
    }
    return table;
}

}  // namespace stvar
