#include "setrack/io.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

namespace setrack
{
namespace
{
std::string_view trim(std::string_view s)
{
        const auto first = s.find_first_not_of(" \t\r");
        if (first == std::string_view::npos)
        {
                return {};
        }
        const auto last = s.find_last_not_of(" \t\r");
        return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_whitespace(std::string_view s)
{
        std::vector<std::string_view> out;
        std::size_t i = 0;
        while (i < s.size())
        {
                while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r'))
                {
                        ++i;
                }
                const std::size_t start = i;
                while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r')
                {
                        ++i;
                }
                if (i > start)
                {
                        out.push_back(s.substr(start, i - start));
                }
        }
        return out;
}

std::vector<std::string> split_commas(std::string_view s)
{
        std::vector<std::string> out;
        std::size_t start = 0;
        while (true)
        {
                const std::size_t comma = s.find(',', start);
                out.emplace_back(trim(s.substr(start, comma == std::string_view::npos ? comma : comma - start)));
                if (comma == std::string_view::npos)
                {
                        return out;
                }
                start = comma + 1;
        }
}

std::optional<double> to_double(std::string_view text)
{
        const std::string s(trim(text));
        if (s.empty())
        {
                return std::nullopt;
        }
        char* end = nullptr;
        errno = 0;
        const double v = std::strtod(s.c_str(), &end);
        if (end != s.c_str() + s.size() || errno == ERANGE)
        {
                return std::nullopt;
        }
        return v;
}

std::optional<long long> to_integer(std::string_view text)
{
        const std::string s(trim(text));
        if (s.empty())
        {
                return std::nullopt;
        }
        char* end = nullptr;
        errno = 0;
        const long long v = std::strtoll(s.c_str(), &end, 10);
        if (end != s.c_str() + s.size() || errno == ERANGE)
        {
                return std::nullopt;
        }
        return v;
}

std::ifstream open_input(const std::filesystem::path& path)
{
        std::ifstream in(path);
        if (!in)
        {
                throw DataError("cannot open " + path.string() + " for reading");
        }
        return in;
}

std::ofstream open_output(const std::filesystem::path& path)
{
        std::ofstream out(path, std::ios::binary);
        if (!out)
        {
                throw DataError("cannot open " + path.string() + " for writing");
        }
        return out;
}

std::string join(const std::vector<std::string>& cells)
{
        std::string line;
        for (std::size_t i = 0; i < cells.size(); ++i)
        {
                if (i > 0)
                {
                        line += ',';
                }
                line += cells[i];
        }
        return line;
}

std::string num(double v)
{
        return format_number(v, TABLE_DIGITS);
}
}

ParseError::ParseError(std::string source, int line, const std::string& message)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + message), source_(std::move(source)), line_(line)
{
}

std::string format_number(double value, int digits)
{
        if (std::isnan(value))
        {
                return "nan";
        }
        if (std::isinf(value))
        {
                return value > 0 ? "inf" : "-inf";
        }
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.*g", digits, value);
        return buf;
}

std::string format_shortest(double value)
{
        if (!std::isfinite(value))
        {
                return format_number(value, 1);
        }
        char buf[64];
        const std::to_chars_result r = std::to_chars(buf, buf + sizeof buf, value);
        return std::string(buf, r.ptr);
}

// Scan logs -----------------------------------------------------------------

std::optional<std::string> ScanLog::header_value(std::string_view key) const
{
        for (const auto& [k, v] : header)
        {
                if (k == key)
                {
                        return v;
                }
        }
        return std::nullopt;
}

void write_scan_log(std::ostream& out, const ScanLog& log)
{
        for (const auto& [key, value] : log.header)
        {
                out << "# " << key << '=' << value << '\n';
        }
        for (std::size_t i = 0; i < log.scans.size(); ++i)
        {
                const Scan<double>& scan = log.scans[i];
                if (i > 0 || !log.header.empty())
                {
                        out << '\n';
                }
                out << "F " << scan.time_index << ' ' << format_shortest(scan.sensor_pose.x()) << ' '
                    << format_shortest(scan.sensor_pose.y()) << '\n';
                for (const Vector2<double>& p : scan.points)
                {
                        out << "P " << format_shortest(p.x()) << ' ' << format_shortest(p.y())
                            << '\n';
                }
        }
}

ScanLog read_scan_log(std::istream& in, const std::string& source)
{
        ScanLog log;
        std::string line;
        int line_no = 0;
        bool in_frame = false;
        auto number_at = [&](std::string_view token, std::string_view what) {
                const std::optional<double> v = to_double(token);
                if (!v || !std::isfinite(*v))
                {
                        throw ParseError(source, line_no, "bad " + std::string(what) + " '" + std::string(token) + "'");
                }
                return *v;
        };
        while (std::getline(in, line))
        {
                ++line_no;
                const std::string_view text = trim(line);
                if (text.empty())
                {
                        in_frame = false;
                        continue;
                }
                if (text.front() == '#')
                {
                        const std::string_view body = trim(text.substr(1));
                        const auto eq = body.find('=');
                        if (log.scans.empty() && eq != std::string_view::npos)
                        {
                                log.header.emplace_back(std::string(trim(body.substr(0, eq))),
                                                        std::string(trim(body.substr(eq + 1))));
                        }
                        continue;
                }
                const std::vector<std::string_view> tokens = split_whitespace(text);
                if (tokens.front() == "F")
                {
                        if (tokens.size() != 4)
                        {
                                throw ParseError(source, line_no, "frame line needs 'F k sx sy'");
                        }
                        const std::optional<long long> k = to_integer(tokens[1]);
                        if (!k)
                        {
                                throw ParseError(source, line_no, "bad frame index '" + std::string(tokens[1]) + "'");
                        }
                        if (!log.scans.empty() && *k <= log.scans.back().time_index)
                        {
                                throw ParseError(source, line_no, "frame indices must increase");
                        }
                        Scan<double> scan;
                        scan.time_index = static_cast<int>(*k);
                        scan.sensor_pose = {number_at(tokens[2], "sensor x"), number_at(tokens[3], "sensor y")};
                        log.scans.push_back(std::move(scan));
                        in_frame = true;
                }
                else if (tokens.front() == "P")
                {
                        if (!in_frame)
                        {
                                throw ParseError(source, line_no, "point outside a frame block");
                        }
                        if (tokens.size() != 3)
                        {
                                throw ParseError(source, line_no, "point line needs 'P x y'");
                        }
                        log.scans.back().points.emplace_back(number_at(tokens[1], "x"), number_at(tokens[2], "y"));
                }
                else
                {
                        throw ParseError(source, line_no, "unexpected line '" + std::string(text) + "'");
                }
        }
        return log;
}

void save_scan_log(const std::filesystem::path& path, const ScanLog& log)
{
        std::ofstream out = open_output(path);
        write_scan_log(out, log);
        if (!out)
        {
                throw DataError("write failed for " + path.string());
        }
}

ScanLog load_scan_log(const std::filesystem::path& path)
{
        std::ifstream in = open_input(path);
        return read_scan_log(in, path.string());
}

// Tables --------------------------------------------------------------------

bool Table::has_column(std::string_view name) const
{
        return std::find(columns.begin(), columns.end(), name) != columns.end();
}

std::size_t Table::column(std::string_view name) const
{
        const auto it = std::find(columns.begin(), columns.end(), name);
        if (it == columns.end())
        {
                throw DataError(source + ": missing column '" + std::string(name) + "'");
        }
        return static_cast<std::size_t>(it - columns.begin());
}

double Table::number(std::size_t row, std::size_t col) const
{
        const std::optional<double> v = to_double(rows[row][col]);
        if (!v)
        {
                throw ParseError(source, lines[row], "bad number '" + rows[row][col] + "' in column " + columns[col]);
        }
        return *v;
}

long Table::integer(std::size_t row, std::size_t col) const
{
        const std::optional<long long> v = to_integer(rows[row][col]);
        if (!v)
        {
                throw ParseError(source, lines[row], "bad integer '" + rows[row][col] + "' in column " + columns[col]);
        }
        return static_cast<long>(*v);
}

Table read_table(std::istream& in, const std::string& source)
{
        Table table;
        table.source = source;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line))
        {
                ++line_no;
                if (trim(line).empty())
                {
                        continue;
                }
                std::vector<std::string> cells = split_commas(line);
                if (table.columns.empty())
                {
                        table.columns = std::move(cells);
                        continue;
                }
                if (cells.size() != table.columns.size())
                {
                        throw ParseError(source, line_no,
                                         "expected " + std::to_string(table.columns.size()) + " fields, found " +
                                                 std::to_string(cells.size()));
                }
                table.rows.push_back(std::move(cells));
                table.lines.push_back(line_no);
        }
        if (table.columns.empty())
        {
                throw ParseError(source, line_no, "missing header row");
        }
        return table;
}

Table load_table(const std::filesystem::path& path)
{
        std::ifstream in = open_input(path);
        return read_table(in, path.string());
}

void write_truth_table(std::ostream& out, std::span<const StateRecord> truth)
{
        out << "k,cx,cy,phi,vx,vy,d1,d2,q\n";
        for (const StateRecord& s : truth)
        {
                out << join({std::to_string(s.k), num(s.center.x()), num(s.center.y()), num(s.orientation),
                             num(s.velocity.x()), num(s.velocity.y()), num(s.half_lengths.x()),
                             num(s.half_lengths.y()), num(s.exponent)})
                    << '\n';
        }
}

namespace
{
struct StateColumns
{
        std::size_t k, cx, cy, phi, vx, vy, d1, d2, q;

        explicit StateColumns(const Table& t)
            : k(t.column("k")), cx(t.column("cx")), cy(t.column("cy")), phi(t.column("phi")), vx(t.column("vx")),
              vy(t.column("vy")), d1(t.column("d1")), d2(t.column("d2")), q(t.column("q"))
        {
        }

        StateRecord read(const Table& t, std::size_t row) const
        {
                StateRecord s;
                s.k = static_cast<int>(t.integer(row, k));
                s.center = {t.number(row, cx), t.number(row, cy)};
                s.orientation = t.number(row, phi);
                s.velocity = {t.number(row, vx), t.number(row, vy)};
                s.half_lengths = {t.number(row, d1), t.number(row, d2)};
                s.exponent = t.number(row, q);
                return s;
        }
};

bool by_step(const StateRecord& a, const StateRecord& b)
{
        return a.k < b.k;
}
}

std::vector<StateRecord> truth_from_table(const Table& table)
{
        const StateColumns cols(table);
        std::vector<StateRecord> out;
        out.reserve(table.rows.size());
        for (std::size_t r = 0; r < table.rows.size(); ++r)
        {
                out.push_back(cols.read(table, r));
        }
        std::sort(out.begin(), out.end(), by_step);
        for (std::size_t i = 1; i < out.size(); ++i)
        {
                if (out[i].k == out[i - 1].k)
                {
                        throw DataError(table.source + ": duplicate truth step " + std::to_string(out[i].k));
                }
        }
        return out;
}

void write_frame_log(std::ostream& out, int run, std::span<const FrameRecord> frames, std::span<const StateRecord> truth)
{
        const bool with_truth = !truth.empty();
        out << "run,k,sx,sy,n_points,cx,cy,phi,vx,vy,lambda1,lambda2,d1,d2,q,valid,ess,max_weight,gate1_rate,"
               "gate2_rate,regularized,wall_time";
        if (with_truth)
        {
                out << ",true_cx,true_cy,true_phi,true_vx,true_vy,true_d1,true_d2,true_q";
        }
        out << '\n';
        for (const FrameRecord& f : frames)
        {
                const TrackEstimate<double>& e = f.estimate;
                const StepDiagnostics<double>& d = f.diagnostics;
                std::vector<std::string> cells{
                        std::to_string(run),        std::to_string(f.k),
                        num(f.sensor_pose.x()),     num(f.sensor_pose.y()),
                        std::to_string(f.n_points), num(e.state.center.x()),
                        num(e.state.center.y()),    num(e.state.orientation),
                        num(e.state.velocity.x()),  num(e.state.velocity.y()),
                        num(e.lambda.x()),          num(e.lambda.y()),
                        num(e.half_lengths.x()),    num(e.half_lengths.y()),
                        num(e.extent.exponent),     e.valid ? "1" : "0",
                        num(d.effective_sample_size), num(d.max_weight),
                        num(d.gate1_rate),          num(d.gate2_rate),
                        std::to_string(d.regularized_updates), num(d.wall_time)};
                if (with_truth)
                {
                        const auto it = std::lower_bound(
                                truth.begin(), truth.end(), f.k, [](const StateRecord& s, int k) { return s.k < k; });
                        if (it == truth.end() || it->k != f.k)
                        {
                                throw DataError("no truth row for frame " + std::to_string(f.k));
                        }
                        for (double v : {it->center.x(), it->center.y(), it->orientation, it->velocity.x(),
                                         it->velocity.y(), it->half_lengths.x(), it->half_lengths.y(), it->exponent})
                        {
                                cells.push_back(num(v));
                        }
                }
                out << join(cells) << '\n';
        }
}

void write_estimates_table(std::ostream& out, std::span<const RunRecord> runs)
{
        out << "run,k,cx,cy,phi,vx,vy,d1,d2,q,valid\n";
        for (const RunRecord& r : runs)
        {
                if (r.status != RunStatus::Ok)
                {
                        continue;
                }
                for (const FrameRecord& f : r.frames)
                {
                        const StateRecord s = f.state();
                        out << join({std::to_string(r.run), std::to_string(s.k), num(s.center.x()), num(s.center.y()),
                                     num(s.orientation), num(s.velocity.x()), num(s.velocity.y()),
                                     num(s.half_lengths.x()), num(s.half_lengths.y()), num(s.exponent),
                                     f.estimate.valid ? "1" : "0"})
                            << '\n';
                }
        }
}

std::vector<RunEstimates> estimates_from_table(const Table& table)
{
        const StateColumns cols(table);
        const bool has_run = table.has_column("run");
        const std::size_t run_col = has_run ? table.column("run") : 0;
        std::map<long, std::vector<StateRecord>> grouped;
        for (std::size_t r = 0; r < table.rows.size(); ++r)
        {
                const long run = has_run ? table.integer(r, run_col) : 0;
                grouped[run].push_back(cols.read(table, r));
        }
        std::vector<RunEstimates> out;
        for (auto& [run, states] : grouped)
        {
                std::sort(states.begin(), states.end(), by_step);
                out.push_back({static_cast<int>(run), std::move(states)});
        }
        return out;
}

std::vector<std::vector<StateRecord>> align_estimates(
        std::span<const StateRecord> truth,
        const std::vector<RunEstimates>& runs)
{
        std::vector<std::vector<StateRecord>> out;
        out.reserve(runs.size());
        for (const RunEstimates& r : runs)
        {
                const std::size_t n = std::min(r.states.size(), truth.size());
                for (std::size_t i = 0; i < n; ++i)
                {
                        if (r.states[i].k != truth[i].k)
                        {
                                throw DataError("step mismatch in run " + std::to_string(r.run) + ": estimate k=" +
                                                std::to_string(r.states[i].k) + " where truth has k=" +
                                                std::to_string(truth[i].k));
                        }
                }
                if (r.states.size() != truth.size())
                {
                        throw DataError("step mismatch in run " + std::to_string(r.run) + ": " +
                                        std::to_string(r.states.size()) + " estimates for " +
                                        std::to_string(truth.size()) + " truth steps");
                }
                out.push_back(r.states);
        }
        return out;
}

void write_metrics_table(std::ostream& out, const MetricsReport& m)
{
        out << "rmse_c,rmse_v,rmse_d1,rmse_d2,iou,wall_time,runs,failed_runs,steps,iou_skipped\n";
        out << join({num(m.rmse_c), num(m.rmse_v), num(m.rmse_d1), num(m.rmse_d2), num(m.iou), num(m.wall_time),
                     std::to_string(m.runs), std::to_string(m.failed_runs), std::to_string(m.steps),
                     std::to_string(m.iou_skipped)})
            << '\n';
}

MetricsReport metrics_from_table(const Table& t)
{
        if (t.rows.size() != 1)
        {
                throw DataError(t.source + ": expected exactly one metrics row");
        }
        MetricsReport m;
        m.rmse_c = t.number(0, t.column("rmse_c"));
        m.rmse_v = t.number(0, t.column("rmse_v"));
        m.rmse_d1 = t.number(0, t.column("rmse_d1"));
        m.rmse_d2 = t.number(0, t.column("rmse_d2"));
        m.iou = t.number(0, t.column("iou"));
        m.wall_time = t.number(0, t.column("wall_time"));
        m.runs = static_cast<int>(t.integer(0, t.column("runs")));
        m.failed_runs = static_cast<int>(t.integer(0, t.column("failed_runs")));
        m.steps = t.integer(0, t.column("steps"));
        m.iou_skipped = t.integer(0, t.column("iou_skipped"));
        return m;
}

void write_runs_table(std::ostream& out, std::span<const RunRecord> runs)
{
        out << "run,status,frames,final_q,message\n";
        for (const RunRecord& r : runs)
        {
                std::string message = r.failure;
                std::replace(message.begin(), message.end(), ',', ';');
                const double final_q = r.frames.empty() ? std::nan("") : r.frames.back().estimate.extent.exponent;
                out << join({std::to_string(r.run), std::string(to_string(r.status)), std::to_string(r.frames.size()),
                             num(final_q), message})
                    << '\n';
        }
}

// Configuration -------------------------------------------------------------

KeyValues parse_key_values(std::istream& in, const std::string& source)
{
        KeyValues values;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line))
        {
                ++line_no;
                std::string_view text = line;
                if (const auto hash = text.find('#'); hash != std::string_view::npos)
                {
                        text = text.substr(0, hash);
                }
                text = trim(text);
                if (text.empty())
                {
                        continue;
                }
                const auto eq = text.find('=');
                if (eq == std::string_view::npos)
                {
                        throw ParseError(source, line_no, "expected 'key = value'");
                }
                const std::string key(trim(text.substr(0, eq)));
                if (key.empty())
                {
                        throw ParseError(source, line_no, "empty key");
                }
                values[key] = std::string(trim(text.substr(eq + 1)));
        }
        return values;
}

KeyValues load_key_values(const std::filesystem::path& path)
{
        std::ifstream in(path);
        if (!in)
        {
                throw ConfigError("cannot open config file " + path.string());
        }
        return parse_key_values(in, path.string());
}

namespace
{
double parse_real(std::string_view key, const std::string& value)
{
        const std::optional<double> v = to_double(value);
        if (!v || !std::isfinite(*v))
        {
                throw ConfigError("bad value for " + std::string(key) + ": '" + value + "'");
        }
        return *v;
}

long long parse_int(std::string_view key, const std::string& value)
{
        const std::optional<long long> v = to_integer(value);
        if (!v)
        {
                throw ConfigError("bad integer for " + std::string(key) + ": '" + value + "'");
        }
        return *v;
}

bool parse_bool(std::string_view key, const std::string& value)
{
        if (value == "true" || value == "1")
        {
                return true;
        }
        if (value == "false" || value == "0")
        {
                return false;
        }
        throw ConfigError("bad boolean for " + std::string(key) + ": '" + value + "'");
}

std::string bool_text(bool b)
{
        return b ? "true" : "false";
}

std::string real_text(double v)
{
        return format_shortest(v);
}

constexpr double DEG = std::numbers::pi / 180;

struct Key
{
        std::string_view name;
        std::function<void(RunConfig&, const std::string&)> set;
        std::function<std::string(const RunConfig&)> get;
};

#define SETRACK_REAL_KEY(NAME, FIELD)                                                                                  \
        Key                                                                                                            \
        {                                                                                                              \
                NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_real(NAME, v); },                       \
                        [](const RunConfig& c) { return real_text(c.FIELD); }                                          \
        }

const std::vector<Key>& keys()
{
        static const std::vector<Key> table{
                {"scenario",
                 [](RunConfig& c, const std::string& v) {
                         if (v.empty())
                         {
                                 c.scenario.reset();
                                 return;
                         }
                         try
                         {
                                 c.scenario = parse_scenario_name(v);
                         }
                         catch (const std::invalid_argument& e)
                         {
                                 throw ConfigError(e.what());
                         }
                 },
                 [](const RunConfig& c) { return c.scenario ? std::string(to_string(*c.scenario)) : std::string(); }},
                {"data", [](RunConfig& c, const std::string& v) { c.data_path = v; },
                 [](const RunConfig& c) { return c.data_path; }},
                {"truth", [](RunConfig& c, const std::string& v) { c.truth_path = v; },
                 [](const RunConfig& c) { return c.truth_path; }},
                {"runs",
                 [](RunConfig& c, const std::string& v) {
                         const long long n = parse_int("runs", v);
                         if (n < 1 || n > 1000000)
                         {
                                 throw ConfigError("runs must be between 1 and 1000000");
                         }
                         c.n_runs = static_cast<int>(n);
                 },
                 [](const RunConfig& c) { return std::to_string(c.n_runs); }},
                {"seed",
                 [](RunConfig& c, const std::string& v) {
                         const std::string s(trim(v));
                         char* end = nullptr;
                         errno = 0;
                         const unsigned long long seed = std::strtoull(s.c_str(), &end, 10);
                         if (s.empty() || s.front() == '-' || end != s.c_str() + s.size() || errno == ERANGE)
                         {
                                 throw ConfigError("bad seed '" + v + "'");
                         }
                         c.seed = seed;
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }},
                {"out", [](RunConfig& c, const std::string& v) { c.output_dir = v; },
                 [](const RunConfig& c) { return c.output_dir; }},

                SETRACK_REAL_KEY("scenario.T", scenario_params.sampling_time),
                SETRACK_REAL_KEY("scenario.d1", scenario_params.half_lengths.x()),
                SETRACK_REAL_KEY("scenario.d2", scenario_params.half_lengths.y()),
                SETRACK_REAL_KEY("scenario.q", scenario_params.exponent),
                SETRACK_REAL_KEY("scenario.start_x", scenario_params.start.x()),
                SETRACK_REAL_KEY("scenario.start_y", scenario_params.start.y()),
                SETRACK_REAL_KEY("scenario.linear_speed", scenario_params.linear_speed),
                SETRACK_REAL_KEY("scenario.linear_length", scenario_params.linear_length),
                SETRACK_REAL_KEY("scenario.turn_deg", scenario_params.turn_deg),
                SETRACK_REAL_KEY("scenario.drift_deg", scenario_params.drift_deg),
                SETRACK_REAL_KEY("scenario.uturn_radius", scenario_params.uturn_radius),
                SETRACK_REAL_KEY("scenario.uturn_speed", scenario_params.uturn_speed),
                SETRACK_REAL_KEY("scenario.uturn_straight_time", scenario_params.uturn_straight_time),
                {"scenario.custom_steps",
                 [](RunConfig& c, const std::string& v) {
                         c.scenario_params.custom_steps = static_cast<int>(parse_int("scenario.custom_steps", v));
                 },
                 [](const RunConfig& c) { return std::to_string(c.scenario_params.custom_steps); }},
                SETRACK_REAL_KEY("scenario.custom_start_x", scenario_params.custom_start.x()),
                SETRACK_REAL_KEY("scenario.custom_start_y", scenario_params.custom_start.y()),
                SETRACK_REAL_KEY("scenario.custom_vx", scenario_params.custom_velocity.x()),
                SETRACK_REAL_KEY("scenario.custom_vy", scenario_params.custom_velocity.y()),

                SETRACK_REAL_KEY("sensor.x", sensor.position.x()),
                SETRACK_REAL_KEY("sensor.y", sensor.position.y()),
                SETRACK_REAL_KEY("sensor.heading_deg", sensor.heading),
                SETRACK_REAL_KEY("sensor.fov_deg", sensor.fov),
                SETRACK_REAL_KEY("sensor.resolution_deg", sensor.angular_resolution),
                SETRACK_REAL_KEY("sensor.sigma_range", sensor.sigma_range),
                SETRACK_REAL_KEY("sensor.sigma_bearing_deg", sensor.sigma_bearing),
                SETRACK_REAL_KEY("sensor.max_range", sensor.max_range),

                {"filter.particles",
                 [](RunConfig& c, const std::string& v) {
                         c.filter.n_particles = static_cast<int>(parse_int("filter.particles", v));
                 },
                 [](const RunConfig& c) { return std::to_string(c.filter.n_particles); }},
                SETRACK_REAL_KEY("filter.T", filter.sampling_time),
                {"filter.sigma_phi_deg",
                 [](RunConfig& c, const std::string& v) {
                         c.filter.sigma_phi = parse_real("filter.sigma_phi_deg", v) * DEG;
                 },
                 [](const RunConfig& c) { return real_text(c.filter.sigma_phi / DEG); }},
                SETRACK_REAL_KEY("filter.sigma_a", filter.sigma_a),
                SETRACK_REAL_KEY("filter.sigma_lambda", filter.sigma_lambda),
                SETRACK_REAL_KEY("filter.sigma_q", filter.sigma_q),
                SETRACK_REAL_KEY("filter.r_pseudo", filter.r_pseudo),
                SETRACK_REAL_KEY("filter.r_scale", filter.r_scale),
                SETRACK_REAL_KEY("filter.r_h", filter.r_h_target),
                {"filter.gamma",
                 [](RunConfig& c, const std::string& v) {
                         if (v == "fixed")
                         {
                                 c.filter.gamma = GammaPolicy::FixedTarget;
                         }
                         else if (v == "marginalized")
                         {
                                 c.filter.gamma = GammaPolicy::Marginalized;
                         }
                         else
                         {
                                 throw ConfigError("filter.gamma must be fixed or marginalized");
                         }
                 },
                 [](const RunConfig& c) {
                         return std::string(c.filter.gamma == GammaPolicy::FixedTarget ? "fixed" : "marginalized");
                 }},
                {"filter.covariance",
                 [](RunConfig& c, const std::string& v) {
                         if (v == "standard")
                         {
                                 c.filter.covariance_update = CovarianceUpdate::Standard;
                         }
                         else if (v == "joseph")
                         {
                                 c.filter.covariance_update = CovarianceUpdate::Joseph;
                         }
                         else
                         {
                                 throw ConfigError("filter.covariance must be standard or joseph");
                         }
                 },
                 [](const RunConfig& c) {
                         return std::string(c.filter.covariance_update == CovarianceUpdate::Standard ? "standard"
                                                                                                    : "joseph");
                 }},
                SETRACK_REAL_KEY("filter.eps1", filter.margins.eps1),
                SETRACK_REAL_KEY("filter.eps2", filter.margins.eps2),
                {"filter.q",
                 [](RunConfig& c, const std::string& v) {
                         if (v == "unknown")
                         {
                                 c.filter.q_fixed.reset();
                         }
                         else
                         {
                                 c.filter.q_fixed = parse_real("filter.q", v);
                         }
                 },
                 [](const RunConfig& c) {
                         return c.filter.q_fixed ? real_text(*c.filter.q_fixed) : std::string("unknown");
                 }},
                SETRACK_REAL_KEY("filter.q_prior_mean", filter.q_prior_mean),
                SETRACK_REAL_KEY("filter.q_prior_std", filter.q_prior_std),
                {"filter.init_phi_std_deg",
                 [](RunConfig& c, const std::string& v) {
                         c.filter.init_phi_std = parse_real("filter.init_phi_std_deg", v) * DEG;
                 },
                 [](const RunConfig& c) { return real_text(c.filter.init_phi_std / DEG); }},
                SETRACK_REAL_KEY("filter.init_center_std", filter.init_center_std),
                SETRACK_REAL_KEY("filter.init_velocity_std", filter.init_velocity_std),
                SETRACK_REAL_KEY("filter.init_d1", filter.init_half_lengths.x()),
                SETRACK_REAL_KEY("filter.init_d2", filter.init_half_lengths.y()),
                SETRACK_REAL_KEY("filter.init_lambda_variance", filter.init_lambda_variance),
                {"filter.lambda_prior_from_first_scan",
                 [](RunConfig& c, const std::string& v) {
                         c.filter.lambda_prior_from_first_scan = parse_bool("filter.lambda_prior_from_first_scan", v);
                 },
                 [](const RunConfig& c) { return bool_text(c.filter.lambda_prior_from_first_scan); }},
                {"filter.rescale_lambda_with_q",
                 [](RunConfig& c, const std::string& v) {
                         c.filter.rescale_lambda_with_q = parse_bool("filter.rescale_lambda_with_q", v);
                 },
                 [](const RunConfig& c) { return bool_text(c.filter.rescale_lambda_with_q); }},
                {"filter.resampling",
                 [](RunConfig& c, const std::string& v) {
                         if (v == "systematic")
                         {
                                 c.filter.resampling = ResamplingScheme::Systematic;
                         }
                         else if (v == "multinomial")
                         {
                                 c.filter.resampling = ResamplingScheme::Multinomial;
                         }
                         else
                         {
                                 throw ConfigError("filter.resampling must be systematic or multinomial");
                         }
                 },
                 [](const RunConfig& c) {
                         return std::string(c.filter.resampling == ResamplingScheme::Systematic ? "systematic"
                                                                                                : "multinomial");
                 }},
        };
        return table;
}

#undef SETRACK_REAL_KEY

const Key* find_key(std::string_view name)
{
        for (const Key& k : keys())
        {
                if (k.name == name)
                {
                        return &k;
                }
        }
        return nullptr;
}
}

RunConfig resolve_run_config(const KeyValues& values)
{
        for (const auto& [key, value] : values)
        {
                if (find_key(key) == nullptr)
                {
                        throw ConfigError("unknown config key '" + key + "'");
                }
        }
        RunConfig config;
        if (const auto it = values.find("filter.q"); it != values.end() && it->second == "unknown")
        {
                config.filter = unknown_shape_config(config.filter);
        }
        for (const auto& [key, value] : values)
        {
                find_key(key)->set(config, value);
        }
        if (!values.contains("seed"))
        {
                throw ConfigError("a seed is required (config key 'seed' or --seed)");
        }
        if (!values.contains("filter.T"))
        {
                config.filter.sampling_time = config.scenario_params.sampling_time;
        }
        if (config.scenario && !config.data_path.empty())
        {
                throw ConfigError("give either a scenario or a data path, not both");
        }
        if (!config.scenario && config.data_path.empty())
        {
                config.scenario = ScenarioName::Linear;
        }
        try
        {
                check_filter_config(config.filter);
                check_sensor(config.sensor);
        }
        catch (const std::invalid_argument& e)
        {
                throw ConfigError(e.what());
        }
        if (!(config.scenario_params.sampling_time > 0))
        {
                throw ConfigError("scenario.T must be positive");
        }
        if (!(config.scenario_params.half_lengths.minCoeff() > 0 && config.scenario_params.exponent > 0))
        {
                throw ConfigError("scenario half-lengths and exponent must be positive");
        }
        return config;
}

KeyValues materialize(const RunConfig& config)
{
        KeyValues values;
        for (const Key& k : keys())
        {
                values[std::string(k.name)] = k.get(config);
        }
        return values;
}

void write_key_values(std::ostream& out, const KeyValues& values)
{
        for (const auto& [key, value] : values)
        {
                out << key << " = " << value << '\n';
        }
}
}
