#include "stvar/cli_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <Eigen/Core>

#include "stvar/errors.hpp"

#ifndef STVAR_VERSION
#define STVAR_VERSION "0.0.0"
#endif

namespace stvar {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Command c) {
    switch (c) {
        case Command::simulate: return "simulate";
        case Command::fit: return "fit";
        case Command::forecast: return "forecast";
        case Command::evaluate: return "evaluate";
        case Command::benchmark: return "benchmark";
    }
    return "unknown";
}

Command command_from_string(const std::string& name) {
    for (Command c : {Command::simulate, Command::fit, Command::forecast, Command::evaluate, Command::benchmark}) {
        if (to_string(c) == name) return c;
    }
    throw ConfigError("unknown command '" + name + "' (expected simulate, fit, forecast, evaluate or benchmark)");
}

Lattice GridConfig::build() const {
    GridSpec spec = mask ? GridSpec::masked(nx, ny, *mask) : GridSpec::rectangular(nx, ny);
    return Lattice::build(std::move(spec), Stencil::preset(stencil));
}

// ---------------------------------------------------------------- config

namespace {

// Reads one JSON object, remembering which keys were consumed so that the
// rest can be rejected as unknown.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <class T>
    std::optional<T> get(const std::string& key) {
        used_.insert(key);
        if (!j_.contains(key)) return std::nullopt;
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key '" + where(key) + "' has the wrong type");
        }
    }

    template <class T>
    void read(const std::string& key, T& target) {
        if (auto v = get<T>(key)) target = *v;
    }

    void count(const std::string& key, std::size_t& target, std::size_t min_value) {
        if (j_.contains(key) && !j_.at(key).is_number_integer()) {
            throw ConfigError("config key '" + where(key) + "' must be an integer");
        }
        if (auto v = get<std::int64_t>(key)) {
            if (*v < static_cast<std::int64_t>(min_value)) {
                throw ConfigError("config key '" + where(key) + "' must be at least " + std::to_string(min_value));
            }
            target = static_cast<std::size_t>(*v);
        }
    }

    void positive(const std::string& key, double& target) {
        if (auto v = get<double>(key)) {
            if (!(*v > 0.0) || !std::isfinite(*v)) throw ConfigError("config key '" + where(key) + "' must be positive");
            target = *v;
        }
    }

    std::optional<Section> section(const std::string& key) {
        used_.insert(key);
        if (!j_.contains(key)) return std::nullopt;
        return Section(j_.at(key), where(key));
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!used_.count(key)) throw ConfigError("unknown config key '" + where(key) + "'");
        }
    }

    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <std::size_t N>
void read_array(Section& s, const std::string& key, std::array<double, N>& target) {
    if (auto v = s.get<std::vector<double>>(key)) {
        if (v->size() != N) throw ConfigError("config key '" + s.where(key) + "' needs " + std::to_string(N) + " values");
        std::copy(v->begin(), v->end(), target.begin());
    }
}

PanelFormat format_from_string(const std::string& s) {
    if (s == "csv") return PanelFormat::csv;
    if (s == "binary") return PanelFormat::binary;
    throw ConfigError("unknown panel format '" + s + "' (expected csv or binary)");
}

}  // namespace

RunConfig parse_config(const json& j) {
    RunConfig cfg;
    Section top(j, "");
    if (auto c = top.get<std::string>("command")) cfg.command = command_from_string(*c);
    if (j.is_object() && j.contains("seed") && !j.at("seed").is_number_unsigned()) {
        throw ConfigError("config key 'seed' must be a nonnegative integer");
    }
    if (auto s = top.get<std::uint64_t>("seed")) cfg.seed = *s;
    top.count("threads", cfg.threads, 1);
    if (auto o = top.get<std::string>("output")) cfg.output = *o;

    if (auto g = top.section("grid")) {
        std::size_t nx = 7, ny = 7;
        g->count("nx", nx, 1);
        g->count("ny", ny, 1);
        cfg.grid.nx = static_cast<int>(nx);
        cfg.grid.ny = static_cast<int>(ny);
        g->read("stencil", cfg.grid.stencil);
        if (auto mask = g->get<std::vector<std::array<int, 2>>>("mask")) {
            std::vector<Cell> cells;
            for (const auto& c : *mask) cells.push_back({c[0], c[1]});
            cfg.grid.mask = std::move(cells);
        }
        g->finish();
        (void)Stencil::preset(cfg.grid.stencil);
    }

    if (auto s = top.section("solver")) {
        s->count("n_lambdas", cfg.solver.n_lambdas, 2);
        s->positive("gamma", cfg.solver.gamma);
        if (auto l = s->get<double>("lambda")) {
            if (!(*l >= 0.0) || !std::isfinite(*l)) throw ConfigError("config key 'solver.lambda' must be nonnegative");
            cfg.solver.lambda_override = *l;
        }
        std::size_t iters = static_cast<std::size_t>(cfg.solver.admm.max_iterations);
        s->count("max_iterations", iters, 1);
        cfg.solver.admm.max_iterations = static_cast<int>(iters);
        s->positive("abs_tol", cfg.solver.admm.abs_tol);
        s->positive("rel_tol", cfg.solver.admm.rel_tol);
        s->positive("kkt_tol", cfg.solver.admm.kkt_tol);
        s->positive("fusion_rel_tol", cfg.solver.admm.fusion_rel_tol);
        std::size_t polish = static_cast<std::size_t>(cfg.solver.admm.polish_every);
        s->count("polish_every", polish, 1);
        cfg.solver.admm.polish_every = static_cast<int>(polish);
        s->finish();
    }

    if (auto d = top.section("data")) {
        DataConfig data;
        auto panel = d->get<std::string>("panel");
        if (!panel) throw ConfigError("config key 'data.panel' is required");
        data.panel = *panel;
        if (auto f = d->get<std::string>("format")) data.format = format_from_string(*f);
        d->read("header", data.header);
        if (auto l = d->get<std::string>("day_labels")) data.day_labels = fs::path(*l);
        d->finish();
        cfg.data = std::move(data);
    }

    if (auto s = top.section("simulation")) {
        auto& sim = cfg.simulation;
        s->count("K", sim.K, 1);
        if (sim.K != 5 && sim.K != 9) throw ConfigError("config key 'simulation.K' must be 5 or 9");
        s->count("T", sim.T, 2);
        s->count("burn_in", sim.burn_in, 0);
        s->count("replicates", sim.replicates, 1);
        if (auto names = s->get<std::vector<std::string>>("estimators")) {
            if (names->empty()) throw ConfigError("config key 'simulation.estimators' must not be empty");
            sim.estimators.clear();
            for (const auto& n : *names) sim.estimators.push_back(estimator_from_string(n));
        }
        if (auto t = s->section("truth")) {
            auto& v = sim.truth;
            t->read("block1", v.block1);
            read_array(*t, "block2", v.block2);
            t->read("block2_scale", v.block2_scale);
            read_array(*t, "block4", v.block4);
            read_array(*t, "block5", v.block5);
            t->read("boundary", v.boundary);
            t->positive("psi_variance", v.psi_variance);
            t->positive("psi_range", v.psi_range);
            t->finish();
        }
        s->finish();
    }

    if (auto f = top.section("forecast")) {
        auto& fc = cfg.forecast;
        f->count("horizons", fc.horizons, 1);
        f->count("n_mc", fc.n_mc, 2);
        f->count("spacing", fc.spacing, 1);
        if (auto m = f->get<std::string>("model")) fc.model = fs::path(*m);
        f->read("stage", fc.stage);
        if (fc.stage != "ols" && fc.stage != "gls" && fc.stage != "fused" && fc.stage != "adaptive") {
            throw ConfigError("config key 'forecast.stage' must be ols, gls, fused or adaptive");
        }
        f->finish();
    }
    top.finish();

    if ((cfg.command == Command::fit || cfg.command == Command::forecast) && !cfg.data) {
        throw ConfigError("command '" + to_string(cfg.command) + "' needs a 'data' section");
    }
    if ((cfg.command == Command::forecast || cfg.command == Command::evaluate) && !cfg.forecast.model) {
        throw ConfigError("command '" + to_string(cfg.command) + "' needs 'forecast.model'");
    }
    cfg.source = j;
    return cfg;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    RunConfig cfg = parse_config(j);
    // Relative paths in the file, output included, are taken relative to the
    // config file; a --out override stays relative to the working directory.
    const fs::path base = path.parent_path();
    auto anchor = [&](fs::path& p) {
        if (p.is_relative()) p = base / p;
    };
    if (cfg.data) {
        anchor(cfg.data->panel);
        if (cfg.data->day_labels) anchor(*cfg.data->day_labels);
    }
    if (cfg.forecast.model) anchor(*cfg.forecast.model);
    anchor(cfg.output);
    return cfg;
}

void apply_overrides(RunConfig& cfg, const Overrides& o) {
    if (o.command) {
        cfg.command = *o.command;
        cfg.source["command"] = to_string(*o.command);
    }
    if (o.seed) {
        cfg.seed = *o.seed;
        cfg.source["seed"] = *o.seed;
    }
    if (o.output) {
        cfg.output = *o.output;
        cfg.source["output"] = o.output->string();
    }
    if (o.threads) {
        if (*o.threads < 1) throw ConfigError("--threads must be at least 1");
        cfg.threads = *o.threads;
        cfg.source["threads"] = *o.threads;
    }
    if (o.lambda) {
        if (!(*o.lambda >= 0.0) || !std::isfinite(*o.lambda)) throw ConfigError("--lambda must be nonnegative");
        cfg.solver.lambda_override = *o.lambda;
        cfg.source["solver"]["lambda"] = *o.lambda;
    }
    // Re-validate so that command-specific requirements still hold.
    const RunConfig check = parse_config(cfg.source);
    (void)check;
}

// ---------------------------------------------------------------- panel I/O

namespace {

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

double parse_cell(const std::string& field, std::size_t row, std::size_t col) {
    const std::string where = "row " + std::to_string(row) + ", column " + std::to_string(col);
    if (field.empty()) throw DataError("missing value at " + where);
    double v = 0.0;
    const char* first = field.data();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw DataError("cannot parse '" + field + "' as a number at " + where);
    }
    if (!std::isfinite(v)) throw DataError("non-finite value '" + field + "' at " + where);
    return v;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

}  // namespace

namespace {

Eigen::MatrixXd read_matrix_rows(std::istream& in, bool header) {
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    if (header) {
        if (!std::getline(in, line)) throw DataError("CSV is empty");
        ++line_no;
    }
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line);
        if (rows.empty()) width = fields.size();
        if (fields.size() != width) {
            throw DataError("row " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                            " columns, expected " + std::to_string(width));
        }
        std::vector<double> values(fields.size());
        for (std::size_t c = 0; c < fields.size(); ++c) values[c] = parse_cell(fields[c], line_no, c + 1);
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw DataError("CSV has no data rows");
    Eigen::MatrixXd M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < width; ++c) M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return M;
}

}  // namespace

TimeSeriesPanel read_panel_csv(std::istream& in, bool header) {
    return TimeSeriesPanel(read_matrix_rows(in, header));
}

TimeSeriesPanel read_panel_csv(const fs::path& path, bool header) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open panel file " + path.string());
    return read_panel_csv(in, header);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_matrix_csv(const fs::path& path, const Eigen::MatrixXd& M) {
    auto out = open_out(path);
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        for (Eigen::Index c = 0; c < M.cols(); ++c) out << (c ? "," : "") << format_double(M(r, c));
        out << '\n';
    }
}

Eigen::MatrixXd read_matrix_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return read_matrix_rows(in, false);
}

void write_panel_csv(const fs::path& path, const TimeSeriesPanel& panel) { write_matrix_csv(path, panel.Z()); }

void write_panel_binary(const fs::path& path, const TimeSeriesPanel& panel) {
    auto out = open_out(path, std::ios::binary);
    const std::int64_t dims[2] = {static_cast<std::int64_t>(panel.n()), static_cast<std::int64_t>(panel.T())};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    out.write(reinterpret_cast<const char*>(panel.Z().data()),
              static_cast<std::streamsize>(sizeof(double) * panel.n() * panel.T()));
}

TimeSeriesPanel read_panel_binary(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open panel file " + path.string());
    std::int64_t dims[2] = {0, 0};
    if (!in.read(reinterpret_cast<char*>(dims), sizeof dims)) throw DataError("binary panel header is truncated");
    if (dims[0] <= 0 || dims[1] <= 0) throw DataError("binary panel has invalid dimensions");
    Eigen::MatrixXd Z(dims[0], dims[1]);
    const auto bytes = static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(dims[0] * dims[1]));
    if (!in.read(reinterpret_cast<char*>(Z.data()), bytes)) throw DataError("binary panel data is truncated");
    if (in.peek() != std::char_traits<char>::eof()) throw DataError("binary panel has trailing bytes");
    return TimeSeriesPanel(std::move(Z));
}

TimeSeriesPanel ingest_panel(const DataConfig& data, std::size_t expected_rows) {
    TimeSeriesPanel panel =
        data.format == PanelFormat::csv ? read_panel_csv(data.panel, data.header) : read_panel_binary(data.panel);
    if (panel.n() != expected_rows) {
        throw DataError("panel has " + std::to_string(panel.n()) + " rows but the grid has " +
                        std::to_string(expected_rows) + " locations");
    }
    return panel;
}

// ---------------------------------------------------------------- deseasonalize

Deseasonalized deseasonalize(const TimeSeriesPanel& panel, const std::vector<long>& day_labels) {
    if (day_labels.size() != panel.T()) {
        throw DataError("got " + std::to_string(day_labels.size()) + " day labels for " + std::to_string(panel.T()) +
                        " time points");
    }
    std::map<long, std::size_t> slot;
    for (long d : day_labels) slot.emplace(d, 0);
    Climatology clim;
    for (auto& [label, index] : slot) {
        index = clim.labels.size();
        clim.labels.push_back(label);
    }
    const Eigen::Index n = static_cast<Eigen::Index>(panel.n());
    clim.mean = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(clim.labels.size()));
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(clim.labels.size()));
    for (std::size_t t = 0; t < panel.T(); ++t) {
        const auto s = static_cast<Eigen::Index>(slot[day_labels[t]]);
        clim.mean.col(s) += panel.Z().col(static_cast<Eigen::Index>(t));
        counts[s] += 1.0;
    }
    for (Eigen::Index s = 0; s < counts.size(); ++s) clim.mean.col(s) /= counts[s];
    Eigen::MatrixXd residual = panel.Z();
    for (std::size_t t = 0; t < panel.T(); ++t) {
        residual.col(static_cast<Eigen::Index>(t)) -= clim.mean.col(static_cast<Eigen::Index>(slot[day_labels[t]]));
    }
    return {TimeSeriesPanel(std::move(residual)), std::move(clim)};
}

std::vector<long> read_day_labels(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open day label file " + path.string());
    std::vector<long> out;
    std::string token;
    std::size_t position = 0;
    while (in >> token) {
        for (const auto& field : split_fields(token)) {
            if (field.empty()) continue;
            ++position;
            long v = 0;
            const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
            if (ec != std::errc() || ptr != field.data() + field.size()) {
                throw DataError("day label " + std::to_string(position) + " ('" + field + "') is not an integer");
            }
            out.push_back(v);
        }
    }
    return out;
}

// ---------------------------------------------------------------- reports

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string version_string() { return STVAR_VERSION; }

namespace {

json stage_json(const StageResult& s) {
    json j;
    j["name"] = s.name;
    j["lambda"] = s.lambda;
    j["bic"] = s.bic;
    j["df"] = s.df;
    j["rowsum_stable"] = s.rowsum_stable;
    j["spectral_stable"] = s.spectral.stable;
    j["spectral_radius"] = s.spectral.spectral_radius;
    j["psi_rank_deficient"] = s.psi_rank_deficient;
    j["psi_regularized"] = s.psi_regularized;
    j["seconds"] = s.seconds;
    j["warnings"] = s.warnings;
    json trace = json::array();
    for (const auto& p : s.trace) {
        trace.push_back({{"lambda", p.lambda},
                         {"bic", std::isfinite(p.bic) ? json(p.bic) : json(nullptr)},
                         {"df", p.df},
                         {"rss", p.rss},
                         {"iterations", p.iterations},
                         {"converged", p.converged}});
    }
    j["trace"] = trace;
    json clusters = json::array();
    for (const auto& c : s.clusters) {
        clusters.push_back({{"block", c.block + 1},
                            {"components", c.components()},
                            {"members", c.members},
                            {"values", c.values}});
    }
    j["clusters"] = clusters;
    return j;
}

std::string block_label(std::size_t k, std::size_t K) { return k < K ? std::to_string(k + 1) : "B"; }

void write_alpha_csv(const fs::path& path, const CoefficientVector& alpha, const Lattice& lat) {
    auto out = open_out(path);
    out << "block,index,x,y,value\n";
    const auto& p = lat.partition;
    for (std::size_t k = 0; k <= lat.K(); ++k) {
        const bool boundary = k == lat.K();
        const std::size_t count = boundary ? lat.n_boundary() : lat.n_inner();
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t loc = boundary ? lat.n_inner() + i : i;
            const std::size_t a = boundary ? p.boundary_alpha_index(loc) : p.alpha_index(k, i);
            const Cell c = p.cell(loc);
            out << block_label(k, lat.K()) << ',' << i << ',' << c.x << ',' << c.y << ','
                << format_double(alpha.values()[static_cast<Eigen::Index>(a)]) << '\n';
        }
    }
}

CoefficientVector read_alpha_csv(const fs::path& path, const Lattice& lat) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open coefficient file " + path.string());
    std::string line;
    std::getline(in, line);
    Eigen::VectorXd values = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(lat.m()),
                                                       std::numeric_limits<double>::quiet_NaN());
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != 5) throw DataError(path.string() + ": row " + std::to_string(row) + " needs 5 columns");
        const auto i = static_cast<std::size_t>(parse_cell(f[1], row, 2));
        std::size_t a = 0;
        if (f[0] == "B") {
            if (i >= lat.n_boundary()) throw DataError(path.string() + ": boundary index out of range");
            a = lat.partition.boundary_alpha_index(lat.n_inner() + i);
        } else {
            const auto k = static_cast<std::size_t>(parse_cell(f[0], row, 1));
            if (k < 1 || k > lat.K() || i >= lat.n_inner()) throw DataError(path.string() + ": index out of range");
            a = lat.partition.alpha_index(k - 1, i);
        }
        values[static_cast<Eigen::Index>(a)] = parse_cell(f[4], row, 5);
    }
    if (!values.allFinite()) throw DataError(path.string() + " does not cover every coefficient of the grid");
    return CoefficientVector(CoefficientLayout::of(lat.partition), values);
}

void write_transition_csv(const fs::path& path, const TransitionMatrix& A) {
    auto out = open_out(path);
    out << "row,col,value\n";
    for (Eigen::Index r = 0; r < A.outerSize(); ++r) {
        for (TransitionMatrix::InnerIterator it(A, r); it; ++it) {
            out << it.row() << ',' << it.col() << ',' << format_double(it.value()) << '\n';
        }
    }
}

void write_trace_csv(const fs::path& path, const StageResult& s) {
    auto out = open_out(path);
    out << "lambda,bic,df,rss,iterations,converged\n";
    for (const auto& p : s.trace) {
        out << format_double(p.lambda) << ',' << format_double(p.bic) << ',' << p.df << ',' << format_double(p.rss)
            << ',' << p.iterations << ',' << (p.converged ? 1 : 0) << '\n';
    }
}

class Artifacts {
public:
    Artifacts(const RunConfig& cfg, std::ostream& log) : cfg_(cfg), log_(log) {
        fs::create_directories(cfg.output);
    }
    fs::path file(const std::string& name) {
        files_.push_back(name);
        return cfg_.output / name;
    }
    void warn(const std::string& w) {
        warnings_.push_back(w);
        log_ << "warning: " << w << '\n';
    }
    void write_manifest() {
        json m;
        m["command"] = to_string(cfg_.command);
        m["seed"] = cfg_.seed;
        m["config"] = cfg_.source;
        char hash[17];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(cfg_.source.dump())));
        m["config_hash"] = hash;
        m["version"] = version_string();
        m["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                             std::to_string(EIGEN_MINOR_VERSION);
        m["outputs"] = files_;
        m["warnings"] = warnings_;
        auto out = open_out(cfg_.output / "manifest.json");
        out << m.dump(2) << '\n';
    }

private:
    const RunConfig& cfg_;
    std::ostream& log_;
    std::vector<std::string> files_;
    std::vector<std::string> warnings_;
};

// Benchmark 7 x 7 design from the simulation section.
SimulationDesign design_from(const RunConfig& cfg) {
    SimulationDesign d = benchmark_design_7x7(cfg.simulation.T, cfg.simulation.K, cfg.simulation.truth);
    d.burn_in = cfg.simulation.burn_in;
    d.replicates = cfg.simulation.replicates;
    d.seed = cfg.seed;
    return d;
}

Lattice fit_lattice(const RunConfig& cfg) { return cfg.grid.build(); }

TimeSeriesPanel prepared_panel(const RunConfig& cfg, const Lattice& lat, std::optional<Climatology>& clim) {
    TimeSeriesPanel panel = ingest_panel(*cfg.data, lat.n());
    if (cfg.data->day_labels) {
        Deseasonalized d = deseasonalize(panel, read_day_labels(*cfg.data->day_labels));
        clim = std::move(d.climatology);
        return std::move(d.residual);
    }
    return panel;
}

VarModel load_model(const RunConfig& cfg, const Lattice& lat) {
    const fs::path dir = *cfg.forecast.model;
    const CoefficientVector alpha = read_alpha_csv(dir / ("alpha_" + cfg.forecast.stage + ".csv"), lat);
    // Psi used by the stage is the estimate from the previous one; psi_<stage>.csv
    // holds the residual covariance after the stage, the natural forecast noise.
    Eigen::MatrixXd psi = read_matrix_csv(dir / ("psi_" + cfg.forecast.stage + ".csv"));
    const auto n = static_cast<Eigen::Index>(lat.n());
    if (psi.rows() != n || psi.cols() != n) throw DataError("model covariance does not match the grid");
    return {assemble_transition(alpha, lat.map), std::move(psi)};
}

int run_simulate(const RunConfig& cfg, std::ostream& log) {
    const SimulationDesign design = design_from(cfg);
    const TimeSeriesPanel panel = simulate_panel(design, cfg.seed);
    Artifacts art(cfg, log);
    const bool binary = cfg.data && cfg.data->format == PanelFormat::binary;
    if (binary) {
        write_panel_binary(art.file("panel.bin"), panel);
    } else {
        write_panel_csv(art.file("panel.csv"), panel);
    }
    write_alpha_csv(art.file("truth_alpha.csv"), design.truth, design.lattice);
    write_matrix_csv(art.file("truth_psi.csv"), design.psi.matrix);
    art.write_manifest();
    log << "simulated " << panel.n() << " x " << panel.T() << " panel\n";
    return 0;
}

int run_fit(const RunConfig& cfg, std::ostream& log) {
    const Lattice lat = fit_lattice(cfg);
    std::optional<Climatology> clim;
    const TimeSeriesPanel panel = prepared_panel(cfg, lat, clim);
    PipelineOptions opts = cfg.solver;
    opts.include_gls = true;
    const FitReport report = fit_pipeline(panel, lat, opts);

    Artifacts art(cfg, log);
    for (const auto& w : report.warnings) art.warn(w);
    std::vector<const StageResult*> stages{&report.stages[0], &*report.gls, &report.stages[1], &report.stages[2]};
    for (const StageResult* s : stages) {
        write_alpha_csv(art.file("alpha_" + s->name + ".csv"), s->alpha, lat);
        write_matrix_csv(art.file("psi_" + s->name + ".csv"), s->psi_next);
        if (!s->trace.empty()) write_trace_csv(art.file("trace_" + s->name + ".csv"), *s);
    }
    write_transition_csv(art.file("A_adaptive.csv"), assemble_transition(report.adaptive().alpha, lat.map));
    if (clim) {
        auto out = open_out(art.file("climatology.csv"));
        out << "location";
        for (long d : clim->labels) out << ',' << d;
        out << '\n';
        for (Eigen::Index i = 0; i < clim->mean.rows(); ++i) {
            out << i;
            for (Eigen::Index d = 0; d < clim->mean.cols(); ++d) out << ',' << format_double(clim->mean(i, d));
            out << '\n';
        }
    }
    {
        auto out = open_out(art.file("fit_report.json"));
        out << fit_report_json(report, lat).dump(2) << '\n';
    }
    art.write_manifest();
    log << "fit complete: fused lambda " << report.fused().lambda << ", adaptive lambda " << report.adaptive().lambda
        << ", adaptive df " << report.adaptive().df << '\n';
    return 0;
}

int run_forecast(const RunConfig& cfg, std::ostream& log) {
    const Lattice lat = fit_lattice(cfg);
    std::optional<Climatology> clim;
    const TimeSeriesPanel panel = prepared_panel(cfg, lat, clim);
    const VarModel model = load_model(cfg, lat);
    const ForecastResult res = predict(model, panel.Z().col(panel.Z().cols() - 1), cfg.forecast.horizons);

    Artifacts art(cfg, log);
    auto out = open_out(art.file("forecast.csv"));
    out << "h,location,x,y,mean,variance\n";
    for (std::size_t h = 0; h < res.mean.size(); ++h) {
        for (std::size_t i = 0; i < lat.n(); ++i) {
            const Cell c = lat.partition.cell(i);
            const auto ii = static_cast<Eigen::Index>(i);
            out << h + 1 << ',' << i << ',' << c.x << ',' << c.y << ',' << format_double(res.mean[h][ii]) << ','
                << format_double(res.covariance[h](ii, ii)) << '\n';
        }
        write_matrix_csv(art.file("covariance_h" + std::to_string(h + 1) + ".csv"), res.covariance[h]);
    }
    out.close();
    art.write_manifest();
    log << "forecast " << res.mean.size() << " steps from the last panel column\n";
    return 0;
}

void write_pmse_row(std::ostream& out, const std::string& subset, std::size_t h, const std::string& estimator,
                    const MeanWithError& v) {
    out << subset << ',' << h << ',' << estimator << ',' << format_double(v.mean) << ',' << format_double(v.se) << '\n';
}

int run_evaluate(const RunConfig& cfg, std::ostream& log) {
    const SimulationDesign design = design_from(cfg);
    const VarModel model = load_model(cfg, design.lattice);
    std::mt19937_64 rng(replicate_seed(cfg.seed, 0));
    const Eigen::MatrixXd snaps =
        stationary_snapshots(design.model(), cfg.forecast.n_mc, rng, cfg.forecast.spacing, design.burn_in);
    std::vector<std::size_t> inner(design.lattice.n_inner());
    for (std::size_t i = 0; i < inner.size(); ++i) inner[i] = i;

    Artifacts art(cfg, log);
    auto out = open_out(art.file("pmse.csv"));
    out << "subset,h,estimator,pmse,se\n";
    for (const auto& [name, subset] : {std::pair{std::string("all"), std::vector<std::size_t>{}}, std::pair{std::string("inner"), inner}}) {
        const PmseResult r = pmse(design.model(), model.A, cfg.forecast.horizons, subset, snaps);
        for (std::size_t h = 0; h < r.value.size(); ++h) write_pmse_row(out, name, h + 1, cfg.forecast.stage, {r.value[h], r.se[h]});
    }
    out.close();
    art.write_manifest();
    log << "evaluated " << cfg.forecast.stage << " model against the design truth\n";
    return 0;
}

int run_benchmark(const RunConfig& cfg, std::ostream& log) {
    const SimulationDesign design = design_from(cfg);
    ReplicateOptions ropts;
    ropts.estimators = cfg.simulation.estimators;
    ropts.pipeline = cfg.solver;
    ropts.threads = cfg.threads;
    log << "benchmark: " << design.replicates << " replicates, T = " << design.T << ", K = " << design.lattice.K()
        << '\n';
    const ReplicateRun run = run_replicates(design, ropts);
    PmseOptions popts;
    popts.horizons = cfg.forecast.horizons;
    popts.n_mc = cfg.forecast.n_mc;
    popts.spacing = cfg.forecast.spacing;
    popts.threads = cfg.threads;
    const PmseTable table = replicate_pmse(design, run.fits, ropts.estimators, popts);

    Artifacts art(cfg, log);
    const auto& s = run.summary;
    const std::size_t K = design.lattice.K();
    if (s.replicates_failed > 0) art.warn(std::to_string(s.replicates_failed) + " replicates failed and were excluded");
    {
        auto out = open_out(art.file("summary.csv"));
        out << "estimator,block,coefficient_index,quantile,value\n";
        for (Estimator e : s.estimators) {
            const auto& q = s.per_estimator.at(e).quantiles;
            for (std::size_t k = 0; k <= K; ++k) {
                const std::size_t count = k < K ? design.lattice.n_inner() : design.lattice.n_boundary();
                for (std::size_t i = 0; i < count; ++i) {
                    const auto a = static_cast<Eigen::Index>(k * design.lattice.n_inner() + i);
                    for (std::size_t l = 0; l < summary_levels.size(); ++l) {
                        out << to_string(e) << ',' << block_label(k, K) << ',' << i << ','
                            << format_double(summary_levels[l]) << ','
                            << format_double(q(a, static_cast<Eigen::Index>(l))) << '\n';
                    }
                }
            }
        }
    }
    {
        auto out = open_out(art.file("recovery.csv"));
        out << "estimator,block,true_clusters,recovery_rate,zero_block_rate\n";
        for (Estimator e : s.estimators) {
            const auto& es = s.per_estimator.at(e);
            for (std::size_t k = 0; k < K; ++k) {
                out << to_string(e) << ',' << k + 1 << ',' << s.true_cluster_counts[k] << ','
                    << format_double(es.recovery_rate[k]) << ','
                    << (std::isnan(es.zero_block_rate[k]) ? std::string() : format_double(es.zero_block_rate[k]))
                    << '\n';
            }
        }
    }
    {
        auto out = open_out(art.file("pmse.csv"));
        out << "subset,h,estimator,pmse,se\n";
        for (std::size_t sub = 0; sub < table.subsets.size(); ++sub) {
            for (std::size_t h = 0; h < table.horizons; ++h) {
                for (Estimator e : table.estimators) write_pmse_row(out, table.subsets[sub], h + 1, to_string(e), table.summary(sub, e, h));
            }
        }
    }
    {
        auto out = open_out(art.file("psi_summary.csv"));
        out << "i,j,q25,median,q75\n";
        for (Eigen::Index i = 0; i < s.psi_median.rows(); ++i) {
            for (Eigen::Index j = 0; j < s.psi_median.cols(); ++j) {
                out << i << ',' << j << ',' << format_double(s.psi_q25(i, j)) << ',' << format_double(s.psi_median(i, j))
                    << ',' << format_double(s.psi_q75(i, j)) << '\n';
            }
        }
    }
    {
        auto out = open_out(art.file("replicates.csv"));
        out << "replicate,seed,ok,estimator,block,clusters\n";
        for (const auto& f : run.fits) {
            if (!f.ok) {
                out << f.index << ',' << f.seed << ",0,,,\n";
                continue;
            }
            for (const auto& [e, counts] : f.cluster_counts) {
                for (std::size_t k = 0; k < counts.size(); ++k) {
                    out << f.index << ',' << f.seed << ",1," << to_string(e) << ',' << k + 1 << ',' << counts[k] << '\n';
                }
            }
        }
    }
    art.write_manifest();
    log << "benchmark complete: " << s.replicates_used << " replicates used\n";
    return 0;
}

}  // namespace

json fit_report_json(const FitReport& report, const Lattice& lattice) {
    json j;
    j["n"] = lattice.n();
    j["n_inner"] = lattice.n_inner();
    j["n_boundary"] = lattice.n_boundary();
    j["K"] = lattice.K();
    j["m"] = lattice.m();
    json stages = json::array();
    for (const auto& s : report.stages) stages.push_back(stage_json(s));
    j["stages"] = stages;
    if (report.gls) j["gls"] = stage_json(*report.gls);
    j["warnings"] = report.warnings;
    return j;
}

int run_command(const RunConfig& config, std::ostream& log) {
    switch (config.command) {
        case Command::simulate: return run_simulate(config, log);
        case Command::fit: return run_fit(config, log);
        case Command::forecast: return run_forecast(config, log);
        case Command::evaluate: return run_evaluate(config, log);
        case Command::benchmark: return run_benchmark(config, log);
    }
    return 1;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const DataError*>(&e)) return 3;
    if (dynamic_cast<const NumericalError*>(&e)) return 4;
    return 1;
}

}  // namespace stvar
