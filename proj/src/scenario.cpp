#include "setrack/scenario.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace setrack
{
namespace
{
constexpr double PI = std::numbers::pi;

double radians(double degrees)
{
        return degrees * PI / 180;
}

int step_count(double duration, double dt)
{
        return static_cast<int>(std::floor(duration / dt + 1e-9)) + 1;
}

TruthState heading_state(const Vector2<double>& center, double heading, double speed)
{
        return {center, normalize_angle(heading), speed * Vector2<double>{std::cos(heading), std::sin(heading)}};
}

// Straight segment, constant-rate turn over the middle third, straight segment.
// `drift` is the lag of the body axis behind the velocity direction, growing
// linearly during the turn and held afterwards.
std::vector<TruthState> curved_path(const ScenarioParams& p, double drift)
{
        const double v = p.linear_speed;
        const double duration = p.linear_length / v;
        const double t1 = duration / 3;
        const double t2 = 2 * duration / 3;
        const double turn = radians(p.turn_deg);
        const double omega = turn / (t2 - t1);
        const double radius = v / omega;
        const Vector2<double> p1 = p.start + Vector2<double>{v * t1, 0};
        const Vector2<double> p2 = p1 + radius * Vector2<double>{std::sin(turn), 1 - std::cos(turn)};

        std::vector<TruthState> out;
        const int k_total = step_count(duration, p.sampling_time);
        for (int k = 0; k < k_total; ++k)
        {
                const double t = k * p.sampling_time;
                Vector2<double> c;
                double heading = 0;
                double lag = 0;
                if (t <= t1)
                {
                        c = p.start + Vector2<double>{v * t, 0};
                }
                else if (t <= t2)
                {
                        const double tau = t - t1;
                        heading = omega * tau;
                        c = p1 + radius * Vector2<double>{std::sin(heading), 1 - std::cos(heading)};
                        lag = drift * tau / (t2 - t1);
                }
                else
                {
                        heading = turn;
                        c = p2 + v * (t - t2) * Vector2<double>{std::cos(turn), std::sin(turn)};
                        lag = drift;
                }
                TruthState s = heading_state(c, heading, v);
                s.orientation = normalize_angle(heading - lag);
                out.push_back(s);
        }
        return out;
}

// Straight approach along y = -R, counterclockwise semicircle of radius R about
// the origin, straight departure along y = +R.
std::vector<TruthState> uturn_path(const ScenarioParams& p)
{
        const double v = p.uturn_speed;
        const double r = p.uturn_radius;
        const double ts = p.uturn_straight_time;
        const double arc_time = PI * r / v;
        const double duration = 2 * ts + arc_time;
        const double straight = v * ts;

        std::vector<TruthState> out;
        const int k_total = step_count(duration, p.sampling_time);
        for (int k = 0; k < k_total; ++k)
        {
                const double t = k * p.sampling_time;
                if (t < ts)
                {
                        out.push_back(heading_state({-straight + v * t, -r}, 0, v));
                }
                else if (t < ts + arc_time)
                {
                        const double alpha = -PI / 2 + v * (t - ts) / r;
                        out.push_back(heading_state(r * Vector2<double>{std::cos(alpha), std::sin(alpha)}, alpha + PI / 2, v));
                }
                else
                {
                        out.push_back(heading_state({-v * (t - ts - arc_time), r}, PI, v));
                }
        }
        return out;
}

std::vector<TruthState> straight_path(const Vector2<double>& start, const Vector2<double>& velocity, int steps, double dt)
{
        const double heading = velocity.squaredNorm() > 0 ? std::atan2(velocity.y(), velocity.x()) : 0.0;
        std::vector<TruthState> out;
        out.reserve(steps);
        for (int k = 0; k < steps; ++k)
        {
                out.push_back({start + k * dt * velocity, normalize_angle(heading), velocity});
        }
        return out;
}
}

ScenarioName parse_scenario_name(std::string_view name)
{
        if (name == "linear" || name == "Linear")
        {
                return ScenarioName::Linear;
        }
        if (name == "curved" || name == "Curved")
        {
                return ScenarioName::Curved;
        }
        if (name == "drifting" || name == "Drifting")
        {
                return ScenarioName::Drifting;
        }
        if (name == "uturn" || name == "UTurn" || name == "u-turn")
        {
                return ScenarioName::UTurn;
        }
        if (name == "custom" || name == "Custom")
        {
                return ScenarioName::Custom;
        }
        throw std::invalid_argument("unknown scenario '" + std::string(name) + "'");
}

std::string_view to_string(ScenarioName name)
{
        switch (name)
        {
        case ScenarioName::Linear:
                return "linear";
        case ScenarioName::Curved:
                return "curved";
        case ScenarioName::Drifting:
                return "drifting";
        case ScenarioName::UTurn:
                return "uturn";
        case ScenarioName::Custom:
                return "custom";
        }
        return "unknown";
}

SuperellipseExtent<double> Scenario::extent_at(int k) const
{
        const TruthState& s = trajectory.at(k);
        return make_extent(s.center, s.orientation, half_lengths, exponent);
}

Scenario generate_scenario(ScenarioName name, const ScenarioParams& params)
{
        if (!(params.sampling_time > 0))
        {
                throw std::invalid_argument("sampling time must be positive");
        }
        Scenario s;
        s.name = name;
        s.sampling_time = params.sampling_time;
        s.half_lengths = params.half_lengths;
        s.exponent = params.exponent;
        const double dt = params.sampling_time;
        switch (name)
        {
        case ScenarioName::Linear:
        {
                const int steps = step_count(params.linear_length / params.linear_speed, dt);
                s.trajectory = straight_path(params.start, {params.linear_speed, 0}, steps, dt);
                break;
        }
        case ScenarioName::Curved:
                s.trajectory = curved_path(params, 0);
                break;
        case ScenarioName::Drifting:
                s.trajectory = curved_path(params, radians(params.drift_deg));
                break;
        case ScenarioName::UTurn:
                s.trajectory = uturn_path(params);
                break;
        case ScenarioName::Custom:
                if (params.custom_steps < 1)
                {
                        throw std::invalid_argument("custom scenario needs at least one step");
                }
                s.trajectory = straight_path(params.custom_start, params.custom_velocity, params.custom_steps, dt);
                break;
        }
        return s;
}
}
