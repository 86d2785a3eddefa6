#include "setrack/monte_carlo.hpp"

#include <stdexcept>

namespace setrack
{
std::string_view to_string(RunStatus status)
{
        switch (status)
        {
        case RunStatus::Ok:
                return "ok";
        case RunStatus::Degenerate:
                return "degenerate";
        case RunStatus::NoData:
                return "no_data";
        case RunStatus::Incomplete:
                return "incomplete";
        }
        return "unknown";
}

Rng make_stream(std::uint64_t seed, std::uint64_t run, StreamPurpose purpose)
{
        std::seed_seq seq{
                static_cast<std::uint32_t>(seed & 0xffffffffU),
                static_cast<std::uint32_t>(seed >> 32),
                static_cast<std::uint32_t>(run & 0xffffffffU),
                static_cast<std::uint32_t>(run >> 32),
                static_cast<std::uint32_t>(purpose)};
        return Rng(seq);
}

std::vector<StateRecord> truth_records(const Scenario& scenario)
{
        std::vector<StateRecord> out;
        out.reserve(scenario.trajectory.size());
        for (int k = 0; k < scenario.steps(); ++k)
        {
                const TruthState& s = scenario.trajectory[k];
                out.push_back({k, s.center, s.orientation, s.velocity, scenario.half_lengths, scenario.exponent});
        }
        return out;
}

std::vector<Scan<double>> simulate_scans(const Scenario& scenario, const SensorConfig<double>& sensor, Rng& rng)
{
        check_sensor(sensor);
        std::vector<Scan<double>> scans;
        scans.reserve(scenario.trajectory.size());
        for (int k = 0; k < scenario.steps(); ++k)
        {
                scans.push_back(scan_target(sensor, scenario.extent_at(k), rng, k));
        }
        return scans;
}

StateRecord FrameRecord::state() const
{
        return {k, estimate.state.center, estimate.state.orientation, estimate.state.velocity, estimate.half_lengths,
                estimate.extent.exponent};
}

std::vector<FrameRecord> track_scans(std::span<const Scan<double>> scans, const FilterConfig<double>& cfg, Rng& rng)
{
        std::size_t first = 0;
        while (first < scans.size() && scans[first].points.empty())
        {
                ++first;
        }
        std::size_t second = first + 1;
        while (second < scans.size() && scans[second].points.empty())
        {
                ++second;
        }
        if (second >= scans.size())
        {
                throw std::invalid_argument("tracking needs at least two scans with points");
        }
        ParticleSet<double> particles = init_particles(scans[first], scans[second], cfg, rng);
        std::vector<FrameRecord> frames;
        frames.reserve(scans.size() - first);
        for (std::size_t i = first; i < scans.size(); ++i)
        {
                const Scan<double>& scan = scans[i];
                const StepResult<double> r = step(particles, scan, cfg, rng);
                frames.push_back({scan.time_index, scan.sensor_pose, static_cast<int>(scan.points.size()), r.estimate,
                                  r.diagnostics});
        }
        return frames;
}

RunRecord track_run(
        int run,
        std::vector<Scan<double>> scans,
        const FilterConfig<double>& cfg,
        std::uint64_t seed,
        std::size_t expected_frames)
{
        RunRecord record;
        record.run = run;
        record.scans = std::move(scans);
        Rng rng = make_stream(seed, static_cast<std::uint64_t>(run), StreamPurpose::Filter);
        try
        {
                record.frames = track_scans(record.scans, cfg, rng);
                if (expected_frames != 0 && record.frames.size() != expected_frames)
                {
                        record.status = RunStatus::Incomplete;
                        record.failure = "track did not cover every step";
                }
        }
        catch (const DegenerateFilterError& e)
        {
                record.status = RunStatus::Degenerate;
                record.failure = e.what();
        }
        catch (const std::invalid_argument& e)
        {
                record.status = RunStatus::NoData;
                record.failure = e.what();
        }
        return record;
}

MetricsReport summarize_runs(std::span<const StateRecord> truth, std::span<const RunRecord> runs)
{
        std::vector<std::vector<StateRecord>> estimates;
        double time_sum = 0;
        long time_count = 0;
        for (const RunRecord& record : runs)
        {
                if (record.status != RunStatus::Ok)
                {
                        continue;
                }
                std::vector<StateRecord> run_est;
                run_est.reserve(record.frames.size());
                for (const FrameRecord& f : record.frames)
                {
                        run_est.push_back(f.state());
                        time_sum += f.diagnostics.wall_time;
                        ++time_count;
                }
                estimates.push_back(std::move(run_est));
        }
        MetricsReport report = compute_metrics(truth, estimates);
        report.runs = static_cast<int>(runs.size());
        report.failed_runs = report.runs - static_cast<int>(estimates.size());
        report.wall_time = time_count > 0 ? time_sum / static_cast<double>(time_count) : 0;
        return report;
}

MonteCarloResult run_monte_carlo(
        const Scenario& scenario,
        const FilterConfig<double>& filter,
        const SensorConfig<double>& sensor,
        int n_runs,
        std::uint64_t seed,
        bool keep_scans)
{
        if (n_runs < 1)
        {
                throw std::invalid_argument("run_monte_carlo needs at least one run");
        }
        check_filter_config(filter);
        check_sensor(sensor);
        const std::vector<StateRecord> truth = truth_records(scenario);

        MonteCarloResult result;
        for (int run = 0; run < n_runs; ++run)
        {
                Rng sim_rng = make_stream(seed, static_cast<std::uint64_t>(run), StreamPurpose::Simulation);
                RunRecord record = track_run(run, simulate_scans(scenario, sensor, sim_rng), filter, seed, truth.size());
                if (!keep_scans)
                {
                        record.scans.clear();
                }
                result.runs.push_back(std::move(record));
        }
        result.report = summarize_runs(truth, result.runs);
        return result;
}
}
