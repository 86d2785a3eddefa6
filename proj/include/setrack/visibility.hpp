#pragma once

#include "geometry.hpp"

#include <string_view>

namespace setrack
{
/// Sensor location relative to the target footprint, in body coordinates.
/// R1 lies beyond the +minor side (|x1| <= d1, x2 > d2); labels then advance
/// counterclockwise: R2 corner (-,+), R3 beyond the -major end, R4 corner (-,-),
/// R5 beyond the -minor side, R6 corner (+,-), R7 beyond the +major end,
/// R8 corner (+,+).
enum class SensorRegion
{
        R1,
        R2,
        R3,
        R4,
        R5,
        R6,
        R7,
        R8,
        Interior
};

constexpr std::string_view to_string(SensorRegion region)
{
        constexpr std::string_view names[] = {"R1", "R2", "R3", "R4", "R5", "R6", "R7", "R8", "interior"};
        return names[static_cast<int>(region)];
}

template <typename Scalar>
struct VisibilityMargins
{
        Scalar eps1 = Scalar(0.5);
        Scalar eps2 = Scalar(0.5);
};

/// b1: the extension along the major axis is observable; b2: along the minor axis.
struct VisibilityFlags
{
        bool b1 = false;
        bool b2 = false;
        SensorRegion region = SensorRegion::Interior;

        bool operator==(const VisibilityFlags&) const = default;
};

template <typename Scalar>
SensorRegion classify_region(const Vector2<Scalar>& sensor_body, const Vector2<Scalar>& half_lengths)
{
        const int col = sensor_body.x() > half_lengths.x() ? 1 : (sensor_body.x() < -half_lengths.x() ? -1 : 0);
        const int row = sensor_body.y() > half_lengths.y() ? 1 : (sensor_body.y() < -half_lengths.y() ? -1 : 0);
        if (col == 0 && row == 0)
        {
                return SensorRegion::Interior;
        }
        if (col == 0)
        {
                return row > 0 ? SensorRegion::R1 : SensorRegion::R5;
        }
        if (row == 0)
        {
                return col > 0 ? SensorRegion::R7 : SensorRegion::R3;
        }
        if (row > 0)
        {
                return col > 0 ? SensorRegion::R8 : SensorRegion::R2;
        }
        return col > 0 ? SensorRegion::R6 : SensorRegion::R4;
}

/// Axis j is gated open when the sensor lies strictly outside the
/// margin-widened slab of the other axis.
template <typename Scalar>
VisibilityFlags axis_visibility(
        const Vector2<Scalar>& sensor_position,
        const Vector2<Scalar>& center,
        Scalar orientation,
        const Vector2<Scalar>& half_lengths,
        const VisibilityMargins<Scalar>& margins)
{
        const Vector2<Scalar> s = body_frame(sensor_position, center, orientation);
        VisibilityFlags flags;
        flags.b1 = std::abs(s.y()) > half_lengths.y() + margins.eps2;
        flags.b2 = std::abs(s.x()) > half_lengths.x() + margins.eps1;
        flags.region = classify_region(s, half_lengths);
        return flags;
}

template <typename Scalar>
VisibilityFlags axis_visibility(
        const Vector2<Scalar>& sensor_position,
        const SuperellipseExtent<Scalar>& extent,
        const VisibilityMargins<Scalar>& margins)
{
        return axis_visibility(sensor_position, extent.center, extent.orientation, extent.half_lengths, margins);
}
}
