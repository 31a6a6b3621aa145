#pragma once

// Configuration, panel I/O and the command runner behind the stvar tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "stvar/forecast.hpp"
#include "stvar/grid.hpp"
#include "stvar/likelihood.hpp"
#include "stvar/pipeline.hpp"
#include "stvar/simulate.hpp"

namespace stvar {

enum class Command { simulate, fit, forecast, evaluate, benchmark };
std::string to_string(Command c);
Command command_from_string(const std::string& name);

enum class PanelFormat { csv, binary };

struct GridConfig {
    int nx = 7;
    int ny = 7;
    std::optional<std::vector<Cell>> mask;
    std::string stencil = "rook5";

    Lattice build() const;
};

struct DataConfig {
    std::filesystem::path panel;
    PanelFormat format = PanelFormat::csv;
    bool header = false;  // first CSV row holds timestamps
    std::optional<std::filesystem::path> day_labels;
};

struct SimulationConfig {
    std::size_t K = 5;
    std::size_t T = 500;
    std::size_t burn_in = 500;
    std::size_t replicates = 100;
    std::vector<Estimator> estimators{all_estimators.begin(), all_estimators.end()};
    BenchmarkTruth truth;
};

struct ForecastConfig {
    std::size_t horizons = 3;
    std::size_t n_mc = 2000;
    std::size_t spacing = 50;
    // Directory written by `fit`; its adaptive-stage alpha and Psi are used.
    std::optional<std::filesystem::path> model;
    std::string stage = "adaptive";
};

struct RunConfig {
    Command command = Command::benchmark;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    std::filesystem::path output = "stvar_out";
    GridConfig grid;
    PipelineOptions solver;
    std::optional<DataConfig> data;
    SimulationConfig simulation;
    ForecastConfig forecast;
    nlohmann::json source;  // normalised config as parsed, for the manifest
};

// Validates every key and value; unknown keys raise ConfigError.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

struct Overrides {
    std::optional<Command> command;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> output;
    std::optional<std::size_t> threads;
    std::optional<double> lambda;
};
void apply_overrides(RunConfig& config, const Overrides& overrides);

// Locations as rows in grid order, time as columns. Non-finite or missing
// entries raise DataError naming the row and column.
TimeSeriesPanel read_panel_csv(std::istream& in, bool header = false);
TimeSeriesPanel read_panel_csv(const std::filesystem::path& path, bool header = false);
void write_panel_csv(const std::filesystem::path& path, const TimeSeriesPanel& panel);
// int64 n, int64 T, then n * T doubles in column-major order (native endianness).
TimeSeriesPanel read_panel_binary(const std::filesystem::path& path);
void write_panel_binary(const std::filesystem::path& path, const TimeSeriesPanel& panel);
TimeSeriesPanel ingest_panel(const DataConfig& data, std::size_t expected_rows);

// 17 significant digits, enough to round-trip any finite double.
std::string format_double(double v);
void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& M);
Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path);

struct Climatology {
    std::vector<long> labels;  // distinct day labels, ascending
    Eigen::MatrixXd mean;      // n x labels.size()
};
struct Deseasonalized {
    TimeSeriesPanel residual;
    Climatology climatology;
};
// Subtracts the per-location mean over all columns sharing a day label.
Deseasonalized deseasonalize(const TimeSeriesPanel& panel, const std::vector<long>& day_labels);
std::vector<long> read_day_labels(const std::filesystem::path& path);

std::uint64_t fnv1a64(const std::string& bytes);
std::string version_string();

nlohmann::json fit_report_json(const FitReport& report, const Lattice& lattice);

// Runs one command, writing artifacts under config.output. Returns 0 on
// success; errors propagate as exceptions.
int run_command(const RunConfig& config, std::ostream& log);

// Maps an in-flight exception to the documented exit status.
int exit_code_for(const std::exception& e);

}  // namespace stvar
