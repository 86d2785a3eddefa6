#pragma once

#include "filter.hpp"
#include "lidar.hpp"
#include "metrics.hpp"
#include "scenario.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace setrack
{
using Rng = std::mt19937_64;

/// Purpose tags for independent substreams of one run.
enum class StreamPurpose : std::uint32_t
{
        Simulation = 0,
        Filter = 1
};

/// Generator for (seed, run, purpose); independent of thread scheduling.
Rng make_stream(std::uint64_t seed, std::uint64_t run, StreamPurpose purpose);

std::vector<StateRecord> truth_records(const Scenario& scenario);

std::vector<Scan<double>> simulate_scans(const Scenario& scenario, const SensorConfig<double>& sensor, Rng& rng);

/// Filter output for one processed scan.
struct FrameRecord
{
        int k = 0;
        Vector2<double> sensor_pose = Vector2<double>::Zero();
        int n_points = 0;
        TrackEstimate<double> estimate;
        StepDiagnostics<double> diagnostics;

        StateRecord state() const;
};

/// Runs the filter over a scan sequence. Initialization waits for the first
/// two nonempty scans; frames before the first one produce no record.
/// Throws std::invalid_argument when fewer than two scans carry points and
/// DegenerateFilterError when the particle weights collapse.
std::vector<FrameRecord> track_scans(std::span<const Scan<double>> scans, const FilterConfig<double>& cfg, Rng& rng);

enum class RunStatus
{
        Ok,
        /// Particle weights collapsed.
        Degenerate,
        /// Fewer than two scans carried points.
        NoData,
        /// Tracking started late, so the run does not cover every truth step.
        Incomplete
};

std::string_view to_string(RunStatus status);

struct RunRecord
{
        int run = 0;
        RunStatus status = RunStatus::Ok;
        std::string failure;
        std::vector<Scan<double>> scans;
        std::vector<FrameRecord> frames;
};

/// Tracks one scan sequence with the run's filter stream and records any
/// failure instead of throwing. A nonzero `expected_frames` marks shorter
/// tracks as incomplete.
RunRecord track_run(
        int run,
        std::vector<Scan<double>> scans,
        const FilterConfig<double>& cfg,
        std::uint64_t seed,
        std::size_t expected_frames = 0);

/// Aggregate metrics over the successful runs; failures are counted.
MetricsReport summarize_runs(std::span<const StateRecord> truth, std::span<const RunRecord> runs);

struct MonteCarloResult
{
        MetricsReport report;
        std::vector<RunRecord> runs;
};

/// Independent seeded simulate-and-track runs. Failed runs are kept in
/// `runs` with their reason and left out of the aggregate metrics.
MonteCarloResult run_monte_carlo(
        const Scenario& scenario,
        const FilterConfig<double>& filter,
        const SensorConfig<double>& sensor,
        int n_runs,
        std::uint64_t seed,
        bool keep_scans = false);
}
