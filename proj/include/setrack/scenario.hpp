#pragma once

#include "geometry.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace setrack
{
enum class ScenarioName
{
        Linear,
        Curved,
        Drifting,
        UTurn,
        Custom
};

ScenarioName parse_scenario_name(std::string_view name);
std::string_view to_string(ScenarioName name);

/// Ground-truth pose and velocity at one sampling instant.
struct TruthState
{
        Vector2<double> center = Vector2<double>::Zero();
        double orientation = 0;
        Vector2<double> velocity = Vector2<double>::Zero();
};

/// Trajectory shape parameters. Defaults reproduce the four reference
/// scenarios; the turn/drift magnitudes and U-turn straights are free choices.
struct ScenarioParams
{
        double sampling_time = 0.1;
        Vector2<double> half_lengths{2.5, 1.5};
        double exponent = 5;

        Vector2<double> start{-40, -10};
        double linear_speed = 3;
        double linear_length = 75;

        double turn_deg = 30;
        double drift_deg = 25;

        double uturn_radius = 10;
        double uturn_speed = 2;
        double uturn_straight_time = 5;

        int custom_steps = 100;
        Vector2<double> custom_start{-15, -10};
        Vector2<double> custom_velocity{3, 0};
};

struct Scenario
{
        ScenarioName name = ScenarioName::Linear;
        double sampling_time = 0.1;
        Vector2<double> half_lengths{2.5, 1.5};
        double exponent = 5;
        std::vector<TruthState> trajectory;

        int steps() const
        {
                return static_cast<int>(trajectory.size());
        }

        SuperellipseExtent<double> extent_at(int k) const;
};

Scenario generate_scenario(ScenarioName name, const ScenarioParams& params = {});
}
