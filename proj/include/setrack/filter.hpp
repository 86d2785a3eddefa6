#pragma once

#include "geometry.hpp"
#include "lidar.hpp"
#include "visibility.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace setrack
{
/// Raised when every particle has zero weight.
class DegenerateFilterError : public std::runtime_error
{
public:
        using std::runtime_error::runtime_error;
};

/// Variance used in the pseudomeasurement likelihood.
enum class GammaPolicy
{
        /// r_h is the same configured value for every particle and measurement.
        FixedTarget,
        /// r_h = r + g' Sigma g, the fully marginalized variance.
        Marginalized
};

/// Covariance update paired with the masked Kalman gain.
enum class CovarianceUpdate
{
        /// Sigma - K S K' on the open block only. Rows and columns of gated-out
        /// axes stay untouched, which can leave an indefinite matrix when just
        /// one gate is open.
        Standard,
        /// (I - K H) Sigma (I - K H)' + K R K' with the masked gain. This is the
        /// error covariance of the masked estimator and is always positive
        /// semidefinite. Only the cross-covariance of a gated-out axis differs
        /// from Standard.
        Joseph
};

enum class ResamplingScheme
{
        Systematic,
        Multinomial
};

template <typename Scalar>
struct FilterConfig
{
        int n_particles = 1000;
        Scalar sampling_time = Scalar(0.1);

        Scalar sigma_phi = std::numbers::pi_v<Scalar> / 36;
        Scalar sigma_a = 2;
        Scalar sigma_lambda = Scalar(1e-4);
        Scalar sigma_q = Scalar(0.1);

        Scalar r_pseudo = Scalar(0.09);
        Scalar r_scale = Scalar(0.09);
        Scalar r_h_target = Scalar(0.09);
        GammaPolicy gamma = GammaPolicy::FixedTarget;
        CovarianceUpdate covariance_update = CovarianceUpdate::Joseph;

        VisibilityMargins<Scalar> margins;

        /// Known exponent; empty selects the unknown-q filter with q in the nonlinear state.
        std::optional<Scalar> q_fixed = Scalar(5);
        Scalar q_prior_mean = 2;
        Scalar q_prior_std = Scalar(0.2);

        Scalar init_phi_std = std::numbers::pi_v<Scalar> / 4;
        Scalar init_center_std = 1;
        Scalar init_velocity_std = 2;
        Vector2<Scalar> init_half_lengths{2, 1};
        Scalar init_lambda_variance = 100;
        /// Condition each particle's nominal lambda prior on the first scan,
        /// given its sampled pose, before the first weight update.
        bool lambda_prior_from_first_scan = true;
        /// Unknown-q mode: keep half-lengths fixed across exponent steps.
        bool rescale_lambda_with_q = true;

        ResamplingScheme resampling = ResamplingScheme::Systematic;

        bool unknown_q() const
        {
                return !q_fixed.has_value();
        }
};

/// Unknown-shape preset: 1500 particles, q drawn from N(2, 0.2^2) and
/// random-walked with sigma_q = 0.1. The lambda prior stays at the nominal
/// ellipse; fitting it to the first scan lets mis-shaped, rotated ellipses
/// absorb all weight before q can move.
template <typename Scalar>
FilterConfig<Scalar> unknown_shape_config(FilterConfig<Scalar> cfg = {})
{
        cfg.q_fixed.reset();
        cfg.n_particles = 1500;
        cfg.q_prior_mean = 2;
        cfg.q_prior_std = Scalar(0.2);
        cfg.sigma_q = Scalar(0.1);
        cfg.lambda_prior_from_first_scan = false;
        return cfg;
}

template <typename Scalar>
void check_filter_config(const FilterConfig<Scalar>& cfg)
{
        if (cfg.n_particles < 2)
        {
                throw std::invalid_argument("filter needs at least 2 particles");
        }
        if (!(cfg.sampling_time > 0))
        {
                throw std::invalid_argument("sampling time must be positive");
        }
        if (!(cfg.r_pseudo > 0 && cfg.r_scale > 0 && cfg.r_h_target > 0))
        {
                throw std::invalid_argument("measurement variances must be positive");
        }
        if (!(cfg.sigma_phi >= 0 && cfg.sigma_a >= 0 && cfg.sigma_lambda >= 0 && cfg.sigma_q >= 0))
        {
                throw std::invalid_argument("process noise deviations must be nonnegative");
        }
        if (cfg.q_fixed && !(*cfg.q_fixed > 0))
        {
                throw std::invalid_argument("fixed exponent must be positive");
        }
        if (!(cfg.margins.eps1 >= 0 && cfg.margins.eps2 >= 0))
        {
                throw std::invalid_argument("visibility margins must be nonnegative");
        }
}

/// Kinematic part of a hypothesis; `q` is only meaningful in unknown-q mode.
template <typename Scalar>
struct NonlinearState
{
        Scalar q = 0;
        Scalar orientation = 0;
        Vector2<Scalar> center = Vector2<Scalar>::Zero();
        Vector2<Scalar> velocity = Vector2<Scalar>::Zero();
};

/// Sampled nonlinear state with the conditional Gaussian N(mu, sigma) over lambda.
template <typename Scalar>
struct Particle
{
        NonlinearState<Scalar> state;
        Vector2<Scalar> mu = Vector2<Scalar>::Ones();
        Matrix2<Scalar> sigma = Matrix2<Scalar>::Identity();
        Scalar log_weight = 0;
};

template <typename Scalar>
using ParticleSet = std::vector<Particle<Scalar>>;

template <typename Scalar>
struct TrackEstimate
{
        NonlinearState<Scalar> state;
        Vector2<Scalar> lambda = Vector2<Scalar>::Ones();
        Vector2<Scalar> half_lengths = Vector2<Scalar>::Ones();
        SuperellipseExtent<Scalar> extent;
        /// False when the averaged lambda has a nonpositive entry.
        bool valid = true;
};

template <typename Scalar>
struct StepDiagnostics
{
        Scalar effective_sample_size = 0;
        Scalar max_weight = 0;
        Scalar gate1_rate = 0;
        Scalar gate2_rate = 0;
        int regularized_updates = 0;
        int points = 0;
        /// Sum of normalized weights before resampling.
        Scalar weight_sum = 0;
        /// Smallest eigenvalue and largest asymmetry over all updated covariances.
        Scalar min_sigma_eigenvalue = std::numeric_limits<Scalar>::infinity();
        Scalar max_sigma_asymmetry = 0;
        /// Resampled particles whose lambda (or q) is not strictly positive.
        int inadmissible_survivors = 0;
        Scalar wall_time = 0;
};

template <typename Scalar>
struct StepResult
{
        TrackEstimate<Scalar> estimate;
        StepDiagnostics<Scalar> diagnostics;
};

template <typename Scalar>
Scalar particle_exponent(const Particle<Scalar>& p, const FilterConfig<Scalar>& cfg)
{
        return cfg.q_fixed ? *cfg.q_fixed : p.state.q;
}

/// Smaller eigenvalue of the symmetric part of a 2x2 matrix.
template <typename Scalar>
Scalar min_eigenvalue(const Matrix2<Scalar>& m)
{
        const Scalar a = m(0, 0);
        const Scalar d = m(1, 1);
        const Scalar b = (m(0, 1) + m(1, 0)) / 2;
        const Scalar half_trace = (a + d) / 2;
        const Scalar radius = std::hypot((a - d) / 2, b);
        return half_trace - radius;
}

template <typename Scalar>
Scalar log_normal_pdf(Scalar x, Scalar mean, Scalar variance)
{
        const Scalar r = x - mean;
        return Scalar(-0.5) * std::log(2 * std::numbers::pi_v<Scalar> * variance) - r * r / (2 * variance);
}

/// A hypothesis is admissible when its predicted lambda (and q) are strictly positive.
template <typename Scalar>
bool admissible(const Particle<Scalar>& p, const FilterConfig<Scalar>& cfg)
{
        return p.mu.x() > 0 && p.mu.y() > 0 && particle_exponent(p, cfg) > 0 && std::isfinite(p.mu.x()) &&
               std::isfinite(p.mu.y());
}

/// Half-lengths implied by the particle's predicted lambda mean.
template <typename Scalar>
Vector2<Scalar> predicted_half_lengths(const Particle<Scalar>& p, const FilterConfig<Scalar>& cfg)
{
        return lambda_to_half_lengths(p.mu, particle_exponent(p, cfg));
}

/// Visibility gates for one hypothesis, using its own predicted extent.
template <typename Scalar>
VisibilityFlags particle_visibility(
        const Particle<Scalar>& p,
        const Vector2<Scalar>& sensor_pose,
        const FilterConfig<Scalar>& cfg)
{
        if (!admissible(p, cfg))
        {
                return {};
        }
        return axis_visibility(
                sensor_pose, p.state.center, p.state.orientation, predicted_half_lengths(p, cfg), cfg.margins);
}

/// Sufficient statistics of the stacked pseudomeasurement model 1 = H lambda + e.
template <typename Scalar>
struct MeasurementStats
{
        Matrix2<Scalar> gram = Matrix2<Scalar>::Zero();      // H' H
        Vector2<Scalar> row_sum = Vector2<Scalar>::Zero();   // H' 1
        Vector2<Scalar> body_min = Vector2<Scalar>::Zero();
        Vector2<Scalar> body_max = Vector2<Scalar>::Zero();
        Scalar log_likelihood = 0;
        int count = 0;
};

/// One pass over the scan for a single particle: H rows, body-frame extrema
/// and the pseudomeasurement log-likelihood.
template <typename Scalar>
MeasurementStats<Scalar> measurement_stats(
        const Particle<Scalar>& p,
        std::span<const Vector2<Scalar>> points,
        const FilterConfig<Scalar>& cfg)
{
        MeasurementStats<Scalar> stats;
        stats.count = static_cast<int>(points.size());
        if (points.empty())
        {
                return stats;
        }
        const Scalar q = particle_exponent(p, cfg);
        const Scalar c = std::cos(p.state.orientation);
        const Scalar s = std::sin(p.state.orientation);
        const bool marginal = cfg.gamma == GammaPolicy::Marginalized;
        const Scalar fixed_log_norm = Scalar(-0.5) * std::log(2 * std::numbers::pi_v<Scalar> * cfg.r_h_target);
        const Scalar fixed_inv = 1 / (2 * cfg.r_h_target);

        stats.body_min.setConstant(std::numeric_limits<Scalar>::infinity());
        stats.body_max.setConstant(-std::numeric_limits<Scalar>::infinity());
        Scalar g11 = 0;
        Scalar g12 = 0;
        Scalar g22 = 0;
        Scalar b1 = 0;
        Scalar b2 = 0;
        Scalar ll = 0;
        for (const Vector2<Scalar>& y : points)
        {
                const Scalar rx = y.x() - p.state.center.x();
                const Scalar ry = y.y() - p.state.center.y();
                const Scalar u = c * rx + s * ry;
                const Scalar v = -s * rx + c * ry;
                stats.body_min.x() = std::min(stats.body_min.x(), u);
                stats.body_min.y() = std::min(stats.body_min.y(), v);
                stats.body_max.x() = std::max(stats.body_max.x(), u);
                stats.body_max.y() = std::max(stats.body_max.y(), v);
                const Scalar h1 = abs_pow(u, q);
                const Scalar h2 = abs_pow(v, q);
                g11 += h1 * h1;
                g12 += h1 * h2;
                g22 += h2 * h2;
                b1 += h1;
                b2 += h2;
                const Scalar residual = p.mu.x() * h1 + p.mu.y() * h2 - 1;
                if (marginal)
                {
                        const Scalar gsg = h1 * h1 * p.sigma(0, 0) + 2 * h1 * h2 * p.sigma(0, 1) + h2 * h2 * p.sigma(1, 1);
                        ll += log_normal_pdf(residual, Scalar(0), cfg.r_pseudo + gsg);
                }
                else
                {
                        ll += fixed_log_norm - residual * residual * fixed_inv;
                }
        }
        stats.gram << g11, g12, g12, g22;
        stats.row_sum << b1, b2;
        stats.log_likelihood = ll;
        return stats;
}

/// Sum over measurements of log N(mu' g_m; 1, r_h).
template <typename Scalar>
Scalar pseudo_likelihood(const Particle<Scalar>& p, const Scan<Scalar>& scan, const FilterConfig<Scalar>& cfg)
{
        return measurement_stats<Scalar>(p, scan.points, cfg).log_likelihood;
}

template <typename Scalar>
Scalar scale_constraint_factor(
        const MeasurementStats<Scalar>& stats,
        const Vector2<Scalar>& half_lengths,
        const VisibilityFlags& flags,
        const FilterConfig<Scalar>& cfg)
{
        if (stats.count == 0)
        {
                return 0;
        }
        Scalar log_factor = 0;
        if (flags.b1)
        {
                log_factor += log_normal_pdf(stats.body_min.x(), -half_lengths.x(), cfg.r_scale);
                log_factor += log_normal_pdf(stats.body_max.x(), half_lengths.x(), cfg.r_scale);
        }
        if (flags.b2)
        {
                log_factor += log_normal_pdf(stats.body_min.y(), -half_lengths.y(), cfg.r_scale);
                log_factor += log_normal_pdf(stats.body_max.y(), half_lengths.y(), cfg.r_scale);
        }
        return log_factor;
}

/// Soft constraints tying the body-frame extrema of the scan to -d_j and +d_j
/// on every gated-open axis; d_j comes from the predicted lambda mean.
template <typename Scalar>
Scalar scale_constraint_factor(
        const Particle<Scalar>& p,
        const Scan<Scalar>& scan,
        const VisibilityFlags& flags,
        const FilterConfig<Scalar>& cfg)
{
        if (scan.points.empty() || !(flags.b1 || flags.b2))
        {
                return 0;
        }
        const MeasurementStats<Scalar> stats = measurement_stats<Scalar>(p, scan.points, cfg);
        return scale_constraint_factor(stats, predicted_half_lengths(p, cfg), flags, cfg);
}

/// Log-sum-exp normalization. Returns the effective sample size.
template <typename Scalar>
Scalar normalize_log_weights(std::span<Particle<Scalar>> particles)
{
        Scalar max_log = -std::numeric_limits<Scalar>::infinity();
        for (Particle<Scalar>& p : particles)
        {
                if (std::isnan(p.log_weight))
                {
                        p.log_weight = -std::numeric_limits<Scalar>::infinity();
                }
                max_log = std::max(max_log, p.log_weight);
        }
        if (!std::isfinite(max_log))
        {
                throw DegenerateFilterError("all particle weights vanished");
        }
        Scalar sum = 0;
        for (const Particle<Scalar>& p : particles)
        {
                sum += std::exp(p.log_weight - max_log);
        }
        const Scalar log_norm = max_log + std::log(sum);
        Scalar sum_sq = 0;
        for (Particle<Scalar>& p : particles)
        {
                p.log_weight -= log_norm;
                const Scalar w = std::exp(p.log_weight);
                sum_sq += w * w;
        }
        return 1 / sum_sq;
}

template <typename Scalar>
std::vector<Scalar> weights(std::span<const Particle<Scalar>> particles)
{
        std::vector<Scalar> w;
        w.reserve(particles.size());
        for (const Particle<Scalar>& p : particles)
        {
                w.push_back(std::exp(p.log_weight));
        }
        return w;
}

/// Incremental weight of one hypothesis under the bootstrap proposal
/// (the transition-to-proposal ratio is one).
template <typename Scalar>
Scalar incremental_log_weight(
        const Particle<Scalar>& p,
        const MeasurementStats<Scalar>& stats,
        const VisibilityFlags& flags,
        const FilterConfig<Scalar>& cfg)
{
        if (!admissible(p, cfg))
        {
                return -std::numeric_limits<Scalar>::infinity();
        }
        return stats.log_likelihood + scale_constraint_factor(stats, predicted_half_lengths(p, cfg), flags, cfg);
}

/// PF-WU followed by normalization. Returns the effective sample size.
template <typename Scalar>
Scalar weight_update(std::span<Particle<Scalar>> particles, const Scan<Scalar>& scan, const FilterConfig<Scalar>& cfg)
{
        for (Particle<Scalar>& p : particles)
        {
                if (!admissible(p, cfg))
                {
                        p.log_weight = -std::numeric_limits<Scalar>::infinity();
                        continue;
                }
                const MeasurementStats<Scalar> stats = measurement_stats<Scalar>(p, scan.points, cfg);
                const VisibilityFlags flags = particle_visibility(p, scan.sensor_pose, cfg);
                p.log_weight += incremental_log_weight(p, stats, flags, cfg);
        }
        return normalize_log_weights(particles);
}

template <typename Scalar>
struct ConditionalGaussian
{
        Vector2<Scalar> mu;
        Matrix2<Scalar> sigma;
        bool regularized = false;
};

/// Masked Kalman update of lambda given the sufficient statistics of H.
///
/// With S = H Sigma H' + r I, the identity H' S^-1 = (H'H Sigma + r I)^-1 H'
/// reduces the M x M innovation system to a 2 x 2 one:
///   K (1 - H mu) = D Sigma A^-1 (H'1 - H'H mu),  K S K' = D Sigma A^-1 H'H Sigma D,
/// where A = H'H Sigma + r I. A is singular exactly when S is.
template <typename Scalar>
ConditionalGaussian<Scalar> kf_measurement_update(
        const Vector2<Scalar>& mu,
        const Matrix2<Scalar>& sigma,
        const MeasurementStats<Scalar>& stats,
        const VisibilityFlags& flags,
        Scalar r,
        CovarianceUpdate form = CovarianceUpdate::Joseph)
{
        ConditionalGaussian<Scalar> out{mu, sigma, false};
        if (stats.count == 0 || !(flags.b1 || flags.b2))
        {
                return out;
        }
        Matrix2<Scalar> a = stats.gram * sigma + r * Matrix2<Scalar>::Identity();
        const Scalar det = a.determinant();
        const Scalar scale = a.cwiseAbs().maxCoeff();
        if (!std::isfinite(det) || std::abs(det) <= std::numeric_limits<Scalar>::epsilon() * scale * scale)
        {
                a += Scalar(1e-12) * Matrix2<Scalar>::Identity();
                out.regularized = true;
        }
        const Matrix2<Scalar> sigma_a_inv = sigma * a.inverse();
        const Vector2<Scalar> correction = sigma_a_inv * (stats.row_sum - stats.gram * mu);
        const Matrix2<Scalar> reduction = sigma_a_inv * stats.gram * sigma;

        const bool open[2] = {flags.b1, flags.b2};
        for (int i = 0; i < 2; ++i)
        {
                if (open[i])
                {
                        out.mu(i) += correction(i);
                }
        }
        for (int i = 0; i < 2; ++i)
        {
                for (int j = 0; j < 2; ++j)
                {
                        if (open[i] && open[j])
                        {
                                out.sigma(i, j) -= reduction(i, j);
                        }
                        else if (form == CovarianceUpdate::Joseph && (open[i] || open[j]))
                        {
                                // -D P - P D + D P D leaves -P on the mixed entries
                                out.sigma(i, j) -= reduction(i, j);
                        }
                }
        }
        out.sigma(0, 1) = out.sigma(1, 0) = (out.sigma(0, 1) + out.sigma(1, 0)) / 2;
        return out;
}

/// KF-MU for one particle and the full scan.
template <typename Scalar>
ConditionalGaussian<Scalar> kf_measurement_update(
        const Particle<Scalar>& p,
        const Scan<Scalar>& scan,
        const VisibilityFlags& flags,
        const FilterConfig<Scalar>& cfg)
{
        if (scan.points.empty() || !(flags.b1 || flags.b2))
        {
                return {p.mu, p.sigma, false};
        }
        const MeasurementStats<Scalar> stats = measurement_stats<Scalar>(p, scan.points, cfg);
        return kf_measurement_update(p.mu, p.sigma, stats, flags, cfg.r_pseudo, cfg.covariance_update);
}

/// KF-TU: random-walk lambda.
template <typename Scalar>
void kf_time_update(Particle<Scalar>& p, const FilterConfig<Scalar>& cfg)
{
        const Scalar var = cfg.sigma_lambda * cfg.sigma_lambda;
        p.sigma(0, 0) += var;
        p.sigma(1, 1) += var;
}

/// Draws x' ~ N(F x, G Q G') for a single state.
template <typename Scalar, typename Rng>
NonlinearState<Scalar> propagate(
        const NonlinearState<Scalar>& x,
        const FilterConfig<Scalar>& cfg,
        Rng& rng)
{
        std::normal_distribution<Scalar> normal(0, 1);
        const Scalar t = cfg.sampling_time;
        NonlinearState<Scalar> next = x;
        if (cfg.unknown_q())
        {
                next.q += cfg.sigma_q * normal(rng);
        }
        next.orientation = normalize_angle(x.orientation + cfg.sigma_phi * normal(rng));
        const Scalar ax = cfg.sigma_a * normal(rng);
        const Scalar ay = cfg.sigma_a * normal(rng);
        const Vector2<Scalar> accel{ax, ay};
        next.center = x.center + t * x.velocity + (t * t / 2) * accel;
        next.velocity = x.velocity + t * accel;
        return next;
}

/// Maps lambda for an exponent step q_prev -> q so that the half-lengths stay
/// fixed: lambda_j -> lambda_j^(q / q_prev), covariance by first-order
/// propagation. Inadmissible particles are left untouched.
template <typename Scalar>
void rescale_lambda(Particle<Scalar>& p, Scalar q_prev)
{
        const Scalar q = p.state.q;
        if (!(q_prev > 0) || !(q > 0) || !(p.mu.minCoeff() > 0))
        {
                return;
        }
        const Scalar ratio = q / q_prev;
        const Vector2<Scalar> mapped = p.mu.array().pow(ratio);
        const Vector2<Scalar> jac = ratio * mapped.array() / p.mu.array();
        p.mu = mapped;
        p.sigma = jac.asDiagonal() * p.sigma * jac.asDiagonal();
}

/// PF-S with the bootstrap (transition) proposal.
template <typename Scalar, typename Rng>
void pf_sample(std::span<Particle<Scalar>> particles, const FilterConfig<Scalar>& cfg, Rng& rng)
{
        for (Particle<Scalar>& p : particles)
        {
                const Scalar q_prev = p.state.q;
                p.state = propagate(p.state, cfg, rng);
                if (cfg.unknown_q() && cfg.rescale_lambda_with_q)
                {
                        rescale_lambda(p, q_prev);
                }
        }
}

/// Ancestor indices from normalized weights. The systematic scheme uses a
/// single uniform offset; multinomial draws are sorted into ancestor order.
template <typename Scalar, typename Rng>
std::vector<std::size_t> resample_indices(
        std::span<const Scalar> normalized_weights,
        Rng& rng,
        ResamplingScheme scheme = ResamplingScheme::Systematic)
{
        const std::size_t n = normalized_weights.size();
        std::vector<std::size_t> idx;
        idx.reserve(n);
        if (n == 0)
        {
                return idx;
        }
        std::uniform_real_distribution<Scalar> uniform(0, 1);
        std::vector<Scalar> positions(n);
        if (scheme == ResamplingScheme::Systematic)
        {
                const Scalar offset = uniform(rng);
                for (std::size_t i = 0; i < n; ++i)
                {
                        positions[i] = (static_cast<Scalar>(i) + offset) / static_cast<Scalar>(n);
                }
        }
        else
        {
                for (Scalar& u : positions)
                {
                        u = uniform(rng);
                }
                std::sort(positions.begin(), positions.end());
        }
        Scalar cumulative = normalized_weights[0];
        std::size_t j = 0;
        for (std::size_t i = 0; i < n; ++i)
        {
                while (positions[i] >= cumulative && j + 1 < n)
                {
                        ++j;
                        cumulative += normalized_weights[j];
                }
                idx.push_back(j);
        }
        return idx;
}

/// Resampling with replacement; the conditional Gaussians travel with their
/// ancestors and every output weight is 1/N.
template <typename Scalar, typename Rng>
ParticleSet<Scalar> resample(
        std::span<const Particle<Scalar>> particles,
        Rng& rng,
        ResamplingScheme scheme = ResamplingScheme::Systematic)
{
        const std::vector<Scalar> w = weights(particles);
        const std::vector<std::size_t> idx = resample_indices<Scalar>(w, rng, scheme);
        const Scalar log_uniform = -std::log(static_cast<Scalar>(particles.size()));
        ParticleSet<Scalar> out;
        out.reserve(idx.size());
        for (const std::size_t i : idx)
        {
                out.push_back(particles[i]);
                out.back().log_weight = log_uniform;
        }
        return out;
}

/// Weighted posterior summary; the orientation is a weighted circular mean.
template <typename Scalar>
TrackEstimate<Scalar> estimate(std::span<const Particle<Scalar>> particles, const FilterConfig<Scalar>& cfg)
{
        if (particles.empty())
        {
                throw std::logic_error("estimate of an empty particle set");
        }
        Scalar total = 0;
        Scalar sin_sum = 0;
        Scalar cos_sum = 0;
        TrackEstimate<Scalar> est;
        est.state.center.setZero();
        est.state.velocity.setZero();
        est.lambda.setZero();
        for (const Particle<Scalar>& p : particles)
        {
                const Scalar w = std::exp(p.log_weight);
                total += w;
                est.state.q += w * p.state.q;
                est.state.center += w * p.state.center;
                est.state.velocity += w * p.state.velocity;
                sin_sum += w * std::sin(p.state.orientation);
                cos_sum += w * std::cos(p.state.orientation);
                est.lambda += w * p.mu;
        }
        if (std::abs(total - 1) > Scalar(1e-6))
        {
                throw std::logic_error("estimate requires normalized weights");
        }
        est.state.orientation = std::atan2(sin_sum, cos_sum);
        const Scalar q = cfg.q_fixed ? *cfg.q_fixed : est.state.q;
        if (cfg.q_fixed)
        {
                est.state.q = q;
        }
        est.valid = est.lambda.x() > 0 && est.lambda.y() > 0 && q > 0;
        if (est.valid)
        {
                est.half_lengths = lambda_to_half_lengths(est.lambda, q);
                est.extent = make_extent(est.state.center, est.state.orientation, est.half_lengths, q);
        }
        else
        {
                est.half_lengths.setConstant(std::numeric_limits<Scalar>::quiet_NaN());
                est.extent = SuperellipseExtent<Scalar>{est.state.center, est.state.orientation, est.half_lengths, q};
        }
        return est;
}

/// Prior from the first two scans: bounding-box center of the first and the
/// mean displacement between them over one sampling period.
template <typename Scalar, typename Rng>
ParticleSet<Scalar> init_particles(
        const Scan<Scalar>& first,
        const Scan<Scalar>& second,
        const FilterConfig<Scalar>& cfg,
        Rng& rng)
{
        check_filter_config(cfg);
        if (first.points.empty() || second.points.empty())
        {
                throw std::invalid_argument("initialization needs two nonempty scans");
        }
        Vector2<Scalar> lo = first.points.front();
        Vector2<Scalar> hi = first.points.front();
        Vector2<Scalar> mean0 = Vector2<Scalar>::Zero();
        for (const Vector2<Scalar>& y : first.points)
        {
                lo = lo.cwiseMin(y);
                hi = hi.cwiseMax(y);
                mean0 += y;
        }
        mean0 /= static_cast<Scalar>(first.points.size());
        Vector2<Scalar> mean1 = Vector2<Scalar>::Zero();
        for (const Vector2<Scalar>& y : second.points)
        {
                mean1 += y;
        }
        mean1 /= static_cast<Scalar>(second.points.size());

        const Vector2<Scalar> center = (lo + hi) / 2;
        const Vector2<Scalar> velocity = (mean1 - mean0) / cfg.sampling_time;

        std::normal_distribution<Scalar> normal(0, 1);
        const Scalar log_uniform = -std::log(static_cast<Scalar>(cfg.n_particles));
        ParticleSet<Scalar> particles(cfg.n_particles);
        for (Particle<Scalar>& p : particles)
        {
                if (cfg.unknown_q())
                {
                        p.state.q = cfg.q_prior_mean + cfg.q_prior_std * normal(rng);
                }
                p.state.orientation = normalize_angle(cfg.init_phi_std * normal(rng));
                p.state.center.x() = center.x() + cfg.init_center_std * normal(rng);
                p.state.center.y() = center.y() + cfg.init_center_std * normal(rng);
                p.state.velocity.x() = velocity.x() + cfg.init_velocity_std * normal(rng);
                p.state.velocity.y() = velocity.y() + cfg.init_velocity_std * normal(rng);
                const Scalar q = particle_exponent(p, cfg);
                p.mu = {std::pow(cfg.init_half_lengths.x(), -q), std::pow(cfg.init_half_lengths.y(), -q)};
                p.sigma = cfg.init_lambda_variance * Matrix2<Scalar>::Identity();
                p.log_weight = log_uniform;
                if (cfg.lambda_prior_from_first_scan)
                {
                        const VisibilityFlags flags = particle_visibility(p, first.sensor_pose, cfg);
                        const ConditionalGaussian<Scalar> fitted = kf_measurement_update(
                                p.mu, p.sigma, measurement_stats<Scalar>(p, first.points, cfg), flags, cfg.r_pseudo,
                                cfg.covariance_update);
                        p.mu = fitted.mu;
                        p.sigma = fitted.sigma;
                }
        }
        return particles;
}

/// One filter cycle: PF-WU, normalize, resample, KF-MU, estimate, PF-S, KF-TU.
/// An empty scan only predicts.
template <typename Scalar, typename Rng>
StepResult<Scalar> step(ParticleSet<Scalar>& particles, const Scan<Scalar>& scan, const FilterConfig<Scalar>& cfg, Rng& rng)
{
        const auto started = std::chrono::steady_clock::now();
        StepResult<Scalar> result;
        StepDiagnostics<Scalar>& diag = result.diagnostics;
        diag.points = static_cast<int>(scan.points.size());
        const std::size_t n = particles.size();

        if (scan.points.empty())
        {
                const std::vector<Scalar> w = weights<Scalar>(particles);
                Scalar sum_sq = 0;
                for (const Scalar wi : w)
                {
                        sum_sq += wi * wi;
                        diag.max_weight = std::max(diag.max_weight, wi);
                }
                diag.effective_sample_size = 1 / sum_sq;
                for (const Scalar wi : w)
                {
                        diag.weight_sum += wi;
                }
                result.estimate = estimate<Scalar>(particles, cfg);
        }
        else
        {
                std::vector<MeasurementStats<Scalar>> stats(n);
                std::vector<VisibilityFlags> flags(n);
                for (std::size_t i = 0; i < n; ++i)
                {
                        Particle<Scalar>& p = particles[i];
                        if (!admissible(p, cfg))
                        {
                                p.log_weight = -std::numeric_limits<Scalar>::infinity();
                                continue;
                        }
                        stats[i] = measurement_stats<Scalar>(p, scan.points, cfg);
                        flags[i] = particle_visibility(p, scan.sensor_pose, cfg);
                        p.log_weight += incremental_log_weight(p, stats[i], flags[i], cfg);
                }
                diag.effective_sample_size = normalize_log_weights<Scalar>(particles);
                const std::vector<Scalar> w = weights<Scalar>(particles);
                diag.max_weight = *std::max_element(w.begin(), w.end());
                for (const Scalar wi : w)
                {
                        diag.weight_sum += wi;
                }

                const std::vector<std::size_t> ancestors = resample_indices<Scalar>(w, rng, cfg.resampling);
                const Scalar log_uniform = -std::log(static_cast<Scalar>(n));
                ParticleSet<Scalar> next;
                next.reserve(n);
                int gate1 = 0;
                int gate2 = 0;
                for (const std::size_t a : ancestors)
                {
                        Particle<Scalar> p = particles[a];
                        p.log_weight = log_uniform;
                        diag.inadmissible_survivors += admissible(p, cfg) ? 0 : 1;
                        const ConditionalGaussian<Scalar> upd = kf_measurement_update(
                                p.mu, p.sigma, stats[a], flags[a], cfg.r_pseudo, cfg.covariance_update);
                        p.mu = upd.mu;
                        p.sigma = upd.sigma;
                        diag.regularized_updates += upd.regularized ? 1 : 0;
                        diag.min_sigma_eigenvalue = std::min(diag.min_sigma_eigenvalue, min_eigenvalue(p.sigma));
                        diag.max_sigma_asymmetry =
                                std::max(diag.max_sigma_asymmetry, std::abs(p.sigma(0, 1) - p.sigma(1, 0)));
                        gate1 += flags[a].b1 ? 1 : 0;
                        gate2 += flags[a].b2 ? 1 : 0;
                        next.push_back(p);
                }
                diag.gate1_rate = static_cast<Scalar>(gate1) / static_cast<Scalar>(n);
                diag.gate2_rate = static_cast<Scalar>(gate2) / static_cast<Scalar>(n);
                particles = std::move(next);
                result.estimate = estimate<Scalar>(particles, cfg);
        }

        pf_sample<Scalar>(particles, cfg, rng);
        for (Particle<Scalar>& p : particles)
        {
                kf_time_update(p, cfg);
        }
        diag.wall_time = std::chrono::duration<Scalar>(std::chrono::steady_clock::now() - started).count();
        return result;
}
}
