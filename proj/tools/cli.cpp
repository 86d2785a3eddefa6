#include "cli.hpp"

#include "setrack/io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace setrack::cli
{
namespace fs = std::filesystem;

namespace
{
struct Options
{
        std::string config_path;
        std::optional<std::string> seed;
        std::optional<int> runs;
        std::optional<std::string> out;
        std::optional<std::string> scenario;
        std::optional<double> q;
        bool unknown_q = false;
        std::optional<int> particles;
        std::optional<std::string> data;
        std::optional<std::string> truth;
        std::string estimates;
};

std::string run_file(std::string_view stem, int run, std::string_view ext)
{
        char buf[32];
        std::snprintf(buf, sizeof buf, "_run%03d", run);
        return std::string(stem) + buf + std::string(ext);
}

fs::path prepare_output(const std::string& dir)
{
        const fs::path path(dir);
        std::error_code ec;
        fs::create_directories(path, ec);
        if (ec || !fs::is_directory(path))
        {
                throw DataError("cannot create output directory " + path.string());
        }
        return path;
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& writer)
{
        std::ofstream out(path, std::ios::binary);
        if (!out)
        {
                throw DataError("cannot open " + path.string() + " for writing");
        }
        writer(out);
        out.flush();
        if (!out)
        {
                throw DataError("write failed for " + path.string());
        }
}

/// Merges the config file with flag overrides; `q_key` names the key --q sets.
RunConfig resolve(const Options& o, std::string_view q_key)
{
        KeyValues values;
        if (!o.config_path.empty())
        {
                try
                {
                        values = load_key_values(o.config_path);
                }
                catch (const ParseError& e)
                {
                        throw ConfigError(e.what());
                }
        }
        if (o.seed)
        {
                values["seed"] = *o.seed;
        }
        if (o.runs)
        {
                values["runs"] = std::to_string(*o.runs);
        }
        if (o.out)
        {
                values["out"] = *o.out;
        }
        if (o.scenario)
        {
                values["scenario"] = *o.scenario;
                values.erase("data");
        }
        if (o.data)
        {
                values["data"] = *o.data;
                values.erase("scenario");
        }
        if (o.truth)
        {
                values["truth"] = *o.truth;
        }
        if (o.unknown_q)
        {
                values["filter.q"] = "unknown";
        }
        if (o.q)
        {
                values[std::string(q_key)] = format_shortest(*o.q);
        }
        if (o.particles)
        {
                values["filter.particles"] = std::to_string(*o.particles);
        }
        return resolve_run_config(values);
}

void write_resolved(const fs::path& dir, const RunConfig& config)
{
        write_file(dir / "config.resolved.txt", [&](std::ostream& out) {
                out << "# resolved run configuration; defaults included\n";
                write_key_values(out, materialize(config));
        });
}

ScanLog make_scan_log(const RunConfig& config, int run, std::vector<Scan<double>> scans)
{
        ScanLog log;
        log.header = {{"format", "setrack-scans-1"},
                      {"scenario", config.scenario ? std::string(to_string(*config.scenario)) : "recorded"},
                      {"seed", std::to_string(config.seed)},
                      {"run", std::to_string(run)},
                      {"T", format_shortest(config.scenario_params.sampling_time)},
                      {"frames", std::to_string(scans.size())}};
        log.scans = std::move(scans);
        return log;
}

void print_metrics(std::ostream& out, const MetricsReport& m)
{
        out << "rmse_c " << format_number(m.rmse_c, 6) << '\n'
            << "rmse_v " << format_number(m.rmse_v, 6) << '\n'
            << "rmse_d1 " << format_number(m.rmse_d1, 6) << '\n'
            << "rmse_d2 " << format_number(m.rmse_d2, 6) << '\n'
            << "iou " << format_number(m.iou, 6) << '\n'
            << "wall_time " << format_number(m.wall_time, 6) << '\n'
            << "runs " << m.runs << " failed " << m.failed_runs << " steps " << m.steps << " iou_skipped "
            << m.iou_skipped << '\n';
}

int cmd_simulate(const Options& o, std::ostream& out)
{
        const RunConfig config = resolve(o, "scenario.q");
        if (!config.scenario)
        {
                throw ConfigError("simulate needs a scenario, not a data path");
        }
        const fs::path dir = prepare_output(config.output_dir);
        write_resolved(dir, config);
        const Scenario scenario = generate_scenario(*config.scenario, config.scenario_params);
        const std::vector<StateRecord> truth = truth_records(scenario);
        write_file(dir / "truth.csv", [&](std::ostream& s) { write_truth_table(s, truth); });
        for (int run = 0; run < config.n_runs; ++run)
        {
                Rng rng = make_stream(config.seed, static_cast<std::uint64_t>(run), StreamPurpose::Simulation);
                const ScanLog log = make_scan_log(config, run, simulate_scans(scenario, config.sensor, rng));
                save_scan_log(dir / run_file("scans", run, ".txt"), log);
        }
        out << "simulated " << config.n_runs << " run(s) of " << to_string(*config.scenario) << ", "
            << scenario.steps() << " frames each, into " << dir.string() << '\n';
        return Success;
}

std::vector<fs::path> scan_files(const std::string& data)
{
        const fs::path path(data);
        if (fs::is_regular_file(path))
        {
                return {path};
        }
        if (!fs::is_directory(path))
        {
                throw DataError("scan data not found: " + path.string());
        }
        std::vector<fs::path> files;
        for (const fs::directory_entry& e : fs::directory_iterator(path))
        {
                const std::string name = e.path().filename().string();
                if (e.is_regular_file() && name.starts_with("scans_run") && name.ends_with(".txt"))
                {
                        files.push_back(e.path());
                }
        }
        std::sort(files.begin(), files.end());
        if (files.empty())
        {
                throw DataError("no scans_run*.txt files in " + path.string());
        }
        return files;
}

int cmd_track(const Options& o, std::ostream& out, std::ostream& err)
{
        const RunConfig config = resolve(o, "filter.q");
        const fs::path dir = prepare_output(config.output_dir);
        write_resolved(dir, config);

        std::vector<StateRecord> truth;
        std::vector<RunRecord> runs;
        if (config.scenario)
        {
                const Scenario scenario = generate_scenario(*config.scenario, config.scenario_params);
                truth = truth_records(scenario);
                write_file(dir / "truth.csv", [&](std::ostream& s) { write_truth_table(s, truth); });
                for (int run = 0; run < config.n_runs; ++run)
                {
                        Rng rng = make_stream(config.seed, static_cast<std::uint64_t>(run), StreamPurpose::Simulation);
                        std::vector<Scan<double>> scans = simulate_scans(scenario, config.sensor, rng);
                        save_scan_log(dir / run_file("scans", run, ".txt"), make_scan_log(config, run, scans));
                        runs.push_back(track_run(run, std::move(scans), config.filter, config.seed, truth.size()));
                }
        }
        else
        {
                if (!config.truth_path.empty())
                {
                        truth = truth_from_table(load_table(config.truth_path));
                }
                const std::vector<fs::path> files = scan_files(config.data_path);
                for (std::size_t i = 0; i < files.size(); ++i)
                {
                        ScanLog log = load_scan_log(files[i]);
                        int run = static_cast<int>(i);
                        if (const std::optional<std::string> tag = log.header_value("run"))
                        {
                                try
                                {
                                        run = std::stoi(*tag);
                                }
                                catch (const std::exception&)
                                {
                                        throw DataError(files[i].string() + ": bad run header '" + *tag + "'");
                                }
                        }
                        runs.push_back(track_run(run, std::move(log.scans), config.filter, config.seed, truth.size()));
                }
        }

        for (const RunRecord& r : runs)
        {
                write_file(dir / run_file("framelog", r.run, ".csv"),
                           [&](std::ostream& s) { write_frame_log(s, r.run, r.frames, truth); });
        }
        write_file(dir / "estimates.csv", [&](std::ostream& s) { write_estimates_table(s, runs); });
        write_file(dir / "runs.csv", [&](std::ostream& s) { write_runs_table(s, runs); });

        if (!truth.empty())
        {
                const MetricsReport report = summarize_runs(truth, runs);
                write_file(dir / "metrics.csv", [&](std::ostream& s) { write_metrics_table(s, report); });
                print_metrics(out, report);
        }
        else
        {
                out << "no ground truth given; metrics.csv not written\n";
        }

        bool degenerate = false;
        bool missing = false;
        for (const RunRecord& r : runs)
        {
                if (config.filter.unknown_q() && !r.frames.empty())
                {
                        out << "run " << r.run << " final q " << format_number(r.frames.back().estimate.extent.exponent, 6)
                            << '\n';
                }
                if (r.status != RunStatus::Ok)
                {
                        err << "run " << r.run << ": " << to_string(r.status) << ": " << r.failure << '\n';
                        degenerate = degenerate || r.status == RunStatus::Degenerate;
                        missing = missing || r.status != RunStatus::Degenerate;
                }
        }
        if (degenerate)
        {
                return DegenerateFailure;
        }
        return missing ? DataFailure : Success;
}

int cmd_eval(const Options& o, std::ostream& out)
{
        if (!o.truth)
        {
                throw ConfigError("eval needs --truth");
        }
        const std::vector<StateRecord> truth = truth_from_table(load_table(*o.truth));
        const Table est_table = load_table(o.estimates);
        const std::vector<RunEstimates> runs = estimates_from_table(est_table);
        const MetricsReport report = compute_metrics(truth, align_estimates(truth, runs));
        if (o.out)
        {
                const fs::path dir = prepare_output(*o.out);
                write_file(dir / "metrics.csv", [&](std::ostream& s) { write_metrics_table(s, report); });
        }
        print_metrics(out, report);
        return Success;
}

void add_common(CLI::App& cmd, Options& o)
{
        cmd.add_option("--config", o.config_path, "flat key = value config file");
        cmd.add_option("--seed", o.seed, "64-bit unsigned seed (required here or in the config)");
        cmd.add_option("--runs", o.runs, "number of Monte Carlo runs");
        cmd.add_option("--out", o.out, "output directory");
        cmd.add_option("--scenario", o.scenario, "linear, curved, drifting, uturn or custom");
}
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
        CLI::App app{"Superellipse extended-target tracking with a Rao-Blackwellized particle filter", "setrack"};
        app.require_subcommand(1);
        Options o;

        CLI::App* simulate = app.add_subcommand("simulate", "simulate Lidar scans of a scenario");
        add_common(*simulate, o);
        simulate->add_option("--q", o.q, "true target exponent");

        CLI::App* track = app.add_subcommand("track", "run the filter on simulated or recorded scans");
        add_common(*track, o);
        track->add_flag("--unknown-q", o.unknown_q, "estimate the exponent along with the state");
        track->add_option("--q", o.q, "known exponent used by the filter");
        track->add_option("--particles", o.particles, "number of particles");
        track->add_option("--data", o.data, "scan log file or directory of scans_run*.txt");
        track->add_option("--truth", o.truth, "ground-truth table for recorded data");

        CLI::App* eval = app.add_subcommand("eval", "recompute metrics from truth and estimate tables");
        eval->add_option("--truth", o.truth, "ground-truth table")->required();
        eval->add_option("--estimates", o.estimates, "estimates table")->required();
        eval->add_option("--out", o.out, "directory for metrics.csv");

        std::vector<std::string> storage{"setrack"};
        storage.insert(storage.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const std::string& s : storage)
        {
                argv.push_back(s.c_str());
        }
        try
        {
                app.parse(static_cast<int>(argv.size()), argv.data());
        }
        catch (const CLI::ParseError& e)
        {
                const int code = app.exit(e, out, err);
                return code == 0 ? Success : ConfigFailure;
        }

        try
        {
                if (simulate->parsed())
                {
                        return cmd_simulate(o, out);
                }
                if (track->parsed())
                {
                        return cmd_track(o, out, err);
                }
                return cmd_eval(o, out);
        }
        catch (const ConfigError& e)
        {
                err << "setrack: config error: " << e.what() << '\n';
                return ConfigFailure;
        }
        catch (const ParseError& e)
        {
                err << "setrack: parse error: " << e.what() << '\n';
                return DataFailure;
        }
        catch (const DataError& e)
        {
                err << "setrack: data error: " << e.what() << '\n';
                return DataFailure;
        }
        catch (const fs::filesystem_error& e)
        {
                err << "setrack: file error: " << e.what() << '\n';
                return DataFailure;
        }
        catch (const DegenerateFilterError& e)
        {
                err << "setrack: degenerate filter: " << e.what() << '\n';
                return DegenerateFailure;
        }
        catch (const std::invalid_argument& e)
        {
                err << "setrack: data error: " << e.what() << '\n';
                return DataFailure;
        }
}
}
