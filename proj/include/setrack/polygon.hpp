#pragma once

#include "geometry.hpp"

#include <algorithm>
#include <cstddef>
#include <span>

namespace setrack
{
template <typename Scalar>
Scalar cross(const Vector2<Scalar>& a, const Vector2<Scalar>& b)
{
        return a.x() * b.y() - a.y() * b.x();
}

/// Signed shoelace area, positive for counterclockwise vertex order.
template <typename Scalar>
Scalar signed_area(std::span<const Vector2<Scalar>> polygon)
{
        const std::size_t n = polygon.size();
        if (n < 3)
        {
                return 0;
        }
        Scalar twice = 0;
        for (std::size_t i = 0; i < n; ++i)
        {
                twice += cross(polygon[i], polygon[(i + 1) % n]);
        }
        return twice / 2;
}

template <typename Scalar>
Scalar polygon_area(std::span<const Vector2<Scalar>> polygon)
{
        return std::abs(signed_area(polygon));
}

/// True when every turn is counterclockwise or straight (within `tolerance`).
template <typename Scalar>
bool is_convex_ccw(std::span<const Vector2<Scalar>> polygon, Scalar tolerance = 1e-12)
{
        const std::size_t n = polygon.size();
        if (n < 3)
        {
                return false;
        }
        for (std::size_t i = 0; i < n; ++i)
        {
                const Vector2<Scalar>& a = polygon[i];
                const Vector2<Scalar>& b = polygon[(i + 1) % n];
                const Vector2<Scalar>& c = polygon[(i + 2) % n];
                if (cross<Scalar>(b - a, c - b) < -tolerance)
                {
                        return false;
                }
        }
        return true;
}

/// Sutherland-Hodgman clipping of `subject` by the convex counterclockwise `clip`.
template <typename Scalar>
PointList<Scalar> clip_convex(std::span<const Vector2<Scalar>> subject, std::span<const Vector2<Scalar>> clip)
{
        PointList<Scalar> output(subject.begin(), subject.end());
        PointList<Scalar> input;
        const std::size_t n = clip.size();
        for (std::size_t e = 0; e < n && !output.empty(); ++e)
        {
                const Vector2<Scalar>& a = clip[e];
                const Vector2<Scalar> edge = clip[(e + 1) % n] - a;
                input.swap(output);
                output.clear();
                const std::size_t m = input.size();
                for (std::size_t i = 0; i < m; ++i)
                {
                        const Vector2<Scalar>& p = input[i];
                        const Vector2<Scalar>& r = input[(i + 1) % m];
                        const Scalar sp = cross<Scalar>(edge, p - a);
                        const Scalar sr = cross<Scalar>(edge, r - a);
                        if (sp >= 0)
                        {
                                output.push_back(p);
                        }
                        if ((sp >= 0) != (sr >= 0))
                        {
                                const Scalar t = sp / (sp - sr);
                                output.push_back(p + t * (r - p));
                        }
                }
        }
        return output;
}

/// Intersection-over-union of two convex counterclockwise polygons.
template <typename Scalar>
Scalar convex_iou(std::span<const Vector2<Scalar>> a, std::span<const Vector2<Scalar>> b)
{
        const Scalar area_a = polygon_area(a);
        const Scalar area_b = polygon_area(b);
        const PointList<Scalar> overlap = clip_convex(a, b);
        const Scalar inter = polygon_area<Scalar>(overlap);
        const Scalar uni = area_a + area_b - inter;
        if (!(uni > 0))
        {
                return 0;
        }
        return std::clamp(inter / uni, Scalar(0), Scalar(1));
}
}
