#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace setrack
{
template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;

template <typename Scalar>
using Matrix2 = Eigen::Matrix<Scalar, 2, 2>;

template <typename Scalar>
using PointList = std::vector<Vector2<Scalar>>;

/// Wraps an angle into (-pi, pi].
template <typename Scalar>
Scalar normalize_angle(Scalar angle)
{
        constexpr Scalar pi = std::numbers::pi_v<Scalar>;
        Scalar a = std::remainder(angle, 2 * pi);
        if (a <= -pi)
        {
                a += 2 * pi;
        }
        return a;
}

/// Counterclockwise rotation by `angle` radians.
template <typename Scalar>
Matrix2<Scalar> rotation(Scalar angle)
{
        const Scalar c = std::cos(angle);
        const Scalar s = std::sin(angle);
        Matrix2<Scalar> r;
        r << c, -s, s, c;
        return r;
}

/// |x|^q with an exact multiplication path for small integer exponents.
/// The tracker spends most of its time here when q = 5.
template <typename Scalar>
Scalar abs_pow(Scalar x, Scalar q)
{
        const Scalar a = std::abs(x);
        if (q == Scalar(2))
        {
                return a * a;
        }
        if (q == Scalar(5))
        {
                const Scalar a2 = a * a;
                return a2 * a2 * a;
        }
        if (q == Scalar(1))
        {
                return a;
        }
        return std::pow(a, q);
}

template <typename Scalar>
Vector2<Scalar> abs_pow(const Vector2<Scalar>& v, Scalar q)
{
        return {abs_pow(v.x(), q), abs_pow(v.y(), q)};
}

/// Lamé-curve target shape: the set of y with
/// |e1' R' (y - c)|^q / d1^q + |e2' R' (y - c)|^q / d2^q = 1.
template <typename Scalar>
struct SuperellipseExtent
{
        Vector2<Scalar> center = Vector2<Scalar>::Zero();
        Scalar orientation = 0;
        Vector2<Scalar> half_lengths = Vector2<Scalar>::Ones();
        Scalar exponent = 2;
};

/// The extent with half-lengths replaced by lambda_j = d_j^(-q), which makes the
/// contour equation linear in lambda once orientation and center are fixed.
template <typename Scalar>
struct ExtentStateLinear
{
        Scalar orientation = 0;
        Vector2<Scalar> center = Vector2<Scalar>::Zero();
        Vector2<Scalar> lambda = Vector2<Scalar>::Ones();
};

template <typename Scalar>
void check_extent(const SuperellipseExtent<Scalar>& extent)
{
        if (!(extent.half_lengths.x() > 0 && extent.half_lengths.y() > 0))
        {
                throw std::domain_error("superellipse half-lengths must be positive");
        }
        if (!(extent.exponent > 0))
        {
                throw std::domain_error("superellipse exponent must be positive");
        }
        if (!extent.center.allFinite() || !std::isfinite(extent.orientation))
        {
                throw std::domain_error("superellipse pose must be finite");
        }
}

/// Validating constructor; the orientation is normalized into (-pi, pi].
template <typename Scalar>
SuperellipseExtent<Scalar> make_extent(
        const Vector2<Scalar>& center,
        Scalar orientation,
        const Vector2<Scalar>& half_lengths,
        Scalar exponent)
{
        SuperellipseExtent<Scalar> e{center, normalize_angle(orientation), half_lengths, exponent};
        check_extent(e);
        return e;
}

template <typename Scalar>
Vector2<Scalar> half_lengths_to_lambda(const Vector2<Scalar>& half_lengths, Scalar q)
{
        if (!(half_lengths.x() > 0 && half_lengths.y() > 0) || !(q > 0))
        {
                throw std::domain_error("half_lengths_to_lambda requires positive half-lengths and exponent");
        }
        return {std::pow(half_lengths.x(), -q), std::pow(half_lengths.y(), -q)};
}

template <typename Scalar>
Vector2<Scalar> lambda_to_half_lengths(const Vector2<Scalar>& lambda, Scalar q)
{
        if (!(lambda.x() > 0 && lambda.y() > 0) || !(q > 0))
        {
                throw std::domain_error("lambda_to_half_lengths requires positive lambda and exponent");
        }
        return {std::pow(lambda.x(), -1 / q), std::pow(lambda.y(), -1 / q)};
}

template <typename Scalar>
ExtentStateLinear<Scalar> to_linear(const SuperellipseExtent<Scalar>& extent)
{
        return {extent.orientation, extent.center, half_lengths_to_lambda(extent.half_lengths, extent.exponent)};
}

template <typename Scalar>
SuperellipseExtent<Scalar> to_extent(const ExtentStateLinear<Scalar>& linear, Scalar q)
{
        return make_extent(linear.center, linear.orientation, lambda_to_half_lengths(linear.lambda, q), q);
}

/// Target-centric coordinates R(phi)' (y - c).
template <typename Scalar>
Vector2<Scalar> body_frame(const Vector2<Scalar>& y, const Vector2<Scalar>& center, Scalar orientation)
{
        const Scalar c = std::cos(orientation);
        const Scalar s = std::sin(orientation);
        const Vector2<Scalar> r = y - center;
        return {c * r.x() + s * r.y(), -s * r.x() + c * r.y()};
}

template <typename Scalar>
Vector2<Scalar> world_frame(const Vector2<Scalar>& body, const Vector2<Scalar>& center, Scalar orientation)
{
        return center + rotation(orientation) * body;
}

/// lambda' |R' (y - c)|^q - 1: negative inside, zero on the contour, positive outside.
template <typename Scalar>
Scalar implicit_value(const ExtentStateLinear<Scalar>& linear, Scalar q, const Vector2<Scalar>& y)
{
        const Vector2<Scalar> b = body_frame(y, linear.center, linear.orientation);
        return linear.lambda.dot(abs_pow(b, q)) - 1;
}

template <typename Scalar>
Scalar implicit_value(const SuperellipseExtent<Scalar>& extent, const Vector2<Scalar>& y)
{
        return implicit_value(to_linear(extent), extent.exponent, y);
}

/// Parametric contour sample c + R(phi) (d1 sgn(cos t)|cos t|^(2/q), d2 sgn(sin t)|sin t|^(2/q)).
template <typename Scalar>
Vector2<Scalar> contour_point(const SuperellipseExtent<Scalar>& extent, Scalar theta)
{
        const Scalar p = 2 / extent.exponent;
        const Scalar ct = std::cos(theta);
        const Scalar st = std::sin(theta);
        const Vector2<Scalar> body{
                extent.half_lengths.x() * std::copysign(std::pow(std::abs(ct), p), ct),
                extent.half_lengths.y() * std::copysign(std::pow(std::abs(st), p), st)};
        return world_frame(body, extent.center, extent.orientation);
}

inline constexpr int DEFAULT_POLYGON_VERTICES = 512;

/// Counterclockwise polygon with vertices at a uniform parameter grid.
template <typename Scalar>
PointList<Scalar> contour_polygon(const SuperellipseExtent<Scalar>& extent, int n_vertices = DEFAULT_POLYGON_VERTICES)
{
        if (n_vertices < 8)
        {
                throw std::invalid_argument("contour_polygon needs at least 8 vertices");
        }
        PointList<Scalar> vertices;
        vertices.reserve(n_vertices);
        const Scalar step = 2 * std::numbers::pi_v<Scalar> / n_vertices;
        for (int i = 0; i < n_vertices; ++i)
        {
                vertices.push_back(contour_point(extent, step * i));
        }
        return vertices;
}

/// Sum of squared implicit residuals over a point cloud.
template <typename Scalar>
Scalar total_deviation(const ExtentStateLinear<Scalar>& linear, Scalar q, std::span<const Vector2<Scalar>> points)
{
        if (points.empty())
        {
                throw std::invalid_argument("total_deviation needs at least one point");
        }
        Scalar sum = 0;
        for (const Vector2<Scalar>& y : points)
        {
                const Scalar h = implicit_value(linear, q, y);
                sum += h * h;
        }
        return sum;
}
}
