#pragma once

#include "geometry.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace setrack
{
template <typename Scalar>
Scalar degrees_to_radians(Scalar degrees)
{
        return degrees * std::numbers::pi_v<Scalar> / 180;
}

/// 2D scanning range sensor. Angles are in degrees; beams are laid out from
/// heading - fov/2 in steps of angular_resolution, world-frame aligned.
template <typename Scalar>
struct SensorConfig
{
        Vector2<Scalar> position = Vector2<Scalar>::Zero();
        Scalar heading = 0;
        Scalar fov = 360;
        Scalar angular_resolution = Scalar(0.2);
        Scalar sigma_range = Scalar(0.01);
        Scalar sigma_bearing = Scalar(0.005);
        Scalar max_range = 200;
};

template <typename Scalar>
void check_sensor(const SensorConfig<Scalar>& sensor)
{
        if (!(sensor.angular_resolution > 0))
        {
                throw std::invalid_argument("sensor angular resolution must be positive");
        }
        if (!(sensor.fov > 0 && sensor.fov <= 360))
        {
                throw std::invalid_argument("sensor field of view must lie in (0, 360]");
        }
        if (!(sensor.sigma_range >= 0 && sensor.sigma_bearing >= 0))
        {
                throw std::invalid_argument("sensor noise deviations must be nonnegative");
        }
        if (!(sensor.max_range > 0))
        {
                throw std::invalid_argument("sensor max range must be positive");
        }
        if (!sensor.position.allFinite())
        {
                throw std::invalid_argument("sensor position must be finite");
        }
}

/// One time step of contour measurements.
template <typename Scalar>
struct Scan
{
        int time_index = 0;
        Vector2<Scalar> sensor_pose = Vector2<Scalar>::Zero();
        PointList<Scalar> points;
};

/// Beam bearings in radians. A full circle has no duplicated end beam.
template <typename Scalar>
std::vector<Scalar> beam_bearings(const SensorConfig<Scalar>& sensor)
{
        check_sensor(sensor);
        const Scalar ratio = sensor.fov / sensor.angular_resolution;
        const bool full_circle = sensor.fov >= 360;
        const long count = full_circle ? std::lround(std::floor(ratio + Scalar(1e-9)))
                                       : std::lround(std::floor(ratio + Scalar(1e-9))) + 1;
        std::vector<Scalar> bearings;
        bearings.reserve(count);
        const Scalar start = sensor.heading - sensor.fov / 2;
        for (long i = 0; i < count; ++i)
        {
                bearings.push_back(degrees_to_radians(start + i * sensor.angular_resolution));
        }
        return bearings;
}

namespace detail
{
/// Bisects a sign change of f on [lo, hi] down to 1e-9.
template <typename Scalar, typename F>
Scalar bisect_root(const F& f, Scalar lo, Scalar hi, bool lo_negative)
{
        while (hi - lo > Scalar(1e-9))
        {
                const Scalar mid = (lo + hi) / 2;
                const Scalar f_mid = f(mid);
                if (f_mid == 0)
                {
                        return mid;
                }
                if ((f_mid < 0) == lo_negative)
                {
                        lo = mid;
                }
                else
                {
                        hi = mid;
                }
        }
        return (lo + hi) / 2;
}
}

/// Nearest intersection of the beam with the contour, in meters along the beam.
/// The search is restricted to the circumscribed disk of the bounding box
/// |x1| <= d1, |x2| <= d2, which contains the contour for every q > 0.
template <typename Scalar>
std::optional<Scalar> cast_ray(const SensorConfig<Scalar>& sensor, Scalar bearing, const SuperellipseExtent<Scalar>& extent)
{
        check_extent(extent);
        const Vector2<Scalar> dir{std::cos(bearing), std::sin(bearing)};
        const Scalar radius = extent.half_lengths.norm();
        const Vector2<Scalar> w = sensor.position - extent.center;
        const Scalar half_b = w.dot(dir);
        const Scalar disc = half_b * half_b - (w.squaredNorm() - radius * radius);
        if (disc < 0)
        {
                return std::nullopt;
        }
        const Scalar root = std::sqrt(disc);
        const Scalar t_begin = std::max(-half_b - root, Scalar(0));
        const Scalar t_end = std::min(-half_b + root, sensor.max_range);
        if (!(t_end > t_begin))
        {
                return std::nullopt;
        }

        const Vector2<Scalar> lambda = half_lengths_to_lambda(extent.half_lengths, extent.exponent);
        const Scalar q = extent.exponent;
        const Vector2<Scalar> origin = body_frame(sensor.position, extent.center, extent.orientation);
        const Vector2<Scalar> body_dir = body_frame<Scalar>(dir, Vector2<Scalar>::Zero(), extent.orientation);
        const auto h = [&](Scalar t)
        {
                return lambda.dot(abs_pow<Scalar>(origin + t * body_dir, q)) - 1;
        };

        const Scalar step = extent.half_lengths.minCoeff() / 10;
        Scalar t_prev = t_begin;
        Scalar h_prev = h(t_prev);
        if (h_prev == 0 && t_prev > 0)
        {
                return t_prev;
        }
        while (t_prev < t_end)
        {
                const Scalar t = std::min(t_prev + step, t_end);
                const Scalar h_t = h(t);
                if (h_t == 0)
                {
                        return t;
                }
                if ((h_t < 0) != (h_prev < 0) && h_prev != 0)
                {
                        Scalar lo = t_prev;
                        Scalar hi = t;
                        const bool lo_negative = h_prev < 0;
                        return detail::bisect_root(h, lo, hi, lo_negative);
                }
                t_prev = t;
                h_prev = h_t;
        }

        // A grazing ray can cross a chord shorter than the march step. For q >= 1
        // h is convex along the ray, so its minimum tells whether the ray enters.
        if (q < 1 || h(t_begin) <= 0)
        {
                return std::nullopt;
        }
        Scalar lo = t_begin;
        Scalar hi = t_end;
        // (2/3)^100 shrinks any in-range interval far below a nanometre.
        for (int i = 0; i < 100; ++i)
        {
                const Scalar m1 = lo + (hi - lo) / 3;
                const Scalar m2 = hi - (hi - lo) / 3;
                if (h(m1) < h(m2))
                {
                        hi = m2;
                }
                else
                {
                        lo = m1;
                }
        }
        const Scalar t_min = (lo + hi) / 2;
        if (!(h(t_min) < 0))
        {
                return std::nullopt;
        }
        return detail::bisect_root(h, t_begin, t_min, false);
}

/// Simulates one sweep. Range and bearing noise are drawn in beam order, one
/// pair per hit, so the result depends only on the generator state.
template <typename Scalar, typename Rng>
Scan<Scalar> scan_target(
        const SensorConfig<Scalar>& sensor,
        const SuperellipseExtent<Scalar>& extent,
        Rng& rng,
        int time_index = 0)
{
        Scan<Scalar> scan;
        scan.time_index = time_index;
        scan.sensor_pose = sensor.position;
        std::normal_distribution<Scalar> normal(0, 1);
        const Scalar sigma_bearing = degrees_to_radians(sensor.sigma_bearing);
        for (const Scalar bearing : beam_bearings(sensor))
        {
                const std::optional<Scalar> range = cast_ray(sensor, bearing, extent);
                if (!range)
                {
                        continue;
                }
                const Scalar noisy_range = *range + sensor.sigma_range * normal(rng);
                const Scalar noisy_bearing = bearing + sigma_bearing * normal(rng);
                scan.points.push_back(
                        sensor.position + noisy_range * Vector2<Scalar>{std::cos(noisy_bearing), std::sin(noisy_bearing)});
        }
        return scan;
}
}
