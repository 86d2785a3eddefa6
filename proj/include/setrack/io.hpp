#pragma once

#include "filter.hpp"
#include "lidar.hpp"
#include "metrics.hpp"
#include "monte_carlo.hpp"
#include "scenario.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace setrack
{
/// Malformed input text; carries the source name and 1-based line number.
class ParseError : public std::runtime_error
{
public:
        ParseError(std::string source, int line, const std::string& message);

        const std::string& source() const noexcept
        {
                return source_;
        }
        int line() const noexcept
        {
                return line_;
        }

private:
        std::string source_;
        int line_;
};

/// Invalid or missing configuration values.
class ConfigError : public std::runtime_error
{
public:
        using std::runtime_error::runtime_error;
};

/// Well-formed files whose contents do not fit together, and file access failures.
class DataError : public std::runtime_error
{
public:
        using std::runtime_error::runtime_error;
};

/// `%.<digits>g` formatting; non-finite values print as nan, inf, -inf.
std::string format_number(double value, int digits);

/// Shortest text that parses back to the same double. Scan logs use it so a
/// replayed log reproduces the in-memory scans exactly.
std::string format_shortest(double value);

inline constexpr int TABLE_DIGITS = 9;

// Scan logs -----------------------------------------------------------------

using Header = std::vector<std::pair<std::string, std::string>>;

/// One scan log: `# key=value` header lines, then blank-line separated frame
/// blocks of an `F k sx sy` line followed by `P x y` lines.
struct ScanLog
{
        Header header;
        std::vector<Scan<double>> scans;

        std::optional<std::string> header_value(std::string_view key) const;
};

void write_scan_log(std::ostream& out, const ScanLog& log);
ScanLog read_scan_log(std::istream& in, const std::string& source);

void save_scan_log(const std::filesystem::path& path, const ScanLog& log);
ScanLog load_scan_log(const std::filesystem::path& path);

// Tables --------------------------------------------------------------------

/// Comma-separated table with a header row; cells are kept as text.
struct Table
{
        std::string source;
        std::vector<std::string> columns;
        std::vector<std::vector<std::string>> rows;
        /// Input line of each row, for error messages.
        std::vector<int> lines;

        bool has_column(std::string_view name) const;
        /// Throws DataError when the column is absent.
        std::size_t column(std::string_view name) const;
        double number(std::size_t row, std::size_t col) const;
        long integer(std::size_t row, std::size_t col) const;
};

Table read_table(std::istream& in, const std::string& source);
Table load_table(const std::filesystem::path& path);

/// Columns k,cx,cy,phi,vx,vy,d1,d2,q.
void write_truth_table(std::ostream& out, std::span<const StateRecord> truth);
std::vector<StateRecord> truth_from_table(const Table& table);

/// Per-frame filter log. With `truth`, true_* columns are appended and
/// matched on k.
void write_frame_log(
        std::ostream& out,
        int run,
        std::span<const FrameRecord> frames,
        std::span<const StateRecord> truth = {});

/// State estimates of all successful runs: run,k,cx,cy,phi,vx,vy,d1,d2,q,valid.
void write_estimates_table(std::ostream& out, std::span<const RunRecord> runs);

struct RunEstimates
{
        int run = 0;
        std::vector<StateRecord> states;
};

/// Groups rows by run (a missing run column means a single run 0) and sorts
/// each run by k. Rows may appear in any order.
std::vector<RunEstimates> estimates_from_table(const Table& table);

/// Strict alignment of every run with the truth steps; throws DataError
/// naming the run and the first offending step.
std::vector<std::vector<StateRecord>> align_estimates(
        std::span<const StateRecord> truth,
        const std::vector<RunEstimates>& runs);

void write_metrics_table(std::ostream& out, const MetricsReport& report);
MetricsReport metrics_from_table(const Table& table);

/// Per-run status: run,status,frames,final_q,message.
void write_runs_table(std::ostream& out, std::span<const RunRecord> runs);

// Configuration -------------------------------------------------------------

using KeyValues = std::map<std::string, std::string, std::less<>>;

/// Flat `key = value` text; `#` starts a comment, blank lines are skipped.
KeyValues parse_key_values(std::istream& in, const std::string& source);
KeyValues load_key_values(const std::filesystem::path& path);

struct RunConfig
{
        /// Exactly one of `scenario` and `data_path` is set after resolution.
        std::optional<ScenarioName> scenario;
        ScenarioParams scenario_params;
        std::string data_path;
        std::string truth_path;

        SensorConfig<double> sensor;
        FilterConfig<double> filter;

        int n_runs = 1;
        std::uint64_t seed = 0;
        std::string output_dir = ".";
};

/// Builds a RunConfig from defaults and the given keys. `filter.q = unknown`
/// selects the unknown-shape preset, which explicit filter keys then refine.
/// Throws ConfigError for unknown keys, malformed values and a missing seed.
RunConfig resolve_run_config(const KeyValues& values);

/// Every key of the resolved configuration, defaults included.
KeyValues materialize(const RunConfig& config);
void write_key_values(std::ostream& out, const KeyValues& values);
}
