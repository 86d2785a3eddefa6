#include "oracles.hpp"

#include "setrack/filter.hpp"
#include "setrack/lidar.hpp"
#include "setrack/monte_carlo.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

using namespace setrack;
using Vec = Vector2<double>;
using Mat = Matrix2<double>;

constexpr double pi = std::numbers::pi;

namespace
{
Scan<double> scan_of(std::vector<Vec> points, Vec sensor = Vec::Zero())
{
        Scan<double> s;
        s.sensor_pose = sensor;
        s.points = std::move(points);
        return s;
}

Particle<double> particle_at(Vec center, double phi, Vec d, double q)
{
        Particle<double> p;
        p.state.center = center;
        p.state.orientation = phi;
        p.state.q = q;
        p.mu = half_lengths_to_lambda(d, q);
        p.sigma = 1e-4 * Mat::Identity();
        return p;
}

Mat random_spd(std::mt19937_64& rng)
{
        std::normal_distribution<double> n(0, 1);
        Mat a;
        a << n(rng), n(rng), n(rng), n(rng);
        return a * a.transpose() + 0.01 * Mat::Identity();
}

bool same_bits(const Mat& a, const Mat& b)
{
        return std::memcmp(a.data(), b.data(), sizeof(double) * 4) == 0;
}

// Dense H with rows |R'(y - c)|^q, computed directly.
Eigen::MatrixXd h_matrix(const std::vector<Vec>& pts, Vec c, double phi, double q)
{
        Eigen::MatrixXd h(static_cast<long>(pts.size()), 2);
        for (std::size_t m = 0; m < pts.size(); ++m)
        {
                const double dx = pts[m].x() - c.x();
                const double dy = pts[m].y() - c.y();
                h(static_cast<long>(m), 0) = std::pow(std::abs(std::cos(phi) * dx + std::sin(phi) * dy), q);
                h(static_cast<long>(m), 1) = std::pow(std::abs(-std::sin(phi) * dx + std::cos(phi) * dy), q);
        }
        return h;
}
}

// Initialization ------------------------------------------------------------

TEST(InitParticles, VelocityFromScanMeans)
{
        FilterConfig<double> cfg;
        cfg.init_velocity_std = 0;
        cfg.init_center_std = 0;
        cfg.init_phi_std = 0;
        cfg.lambda_prior_from_first_scan = false;
        const Scan<double> s0 = scan_of({{-41, -11}, {-39, -9}});
        const Scan<double> s1 = scan_of({{-40.7, -11}, {-38.7, -9}});
        std::mt19937_64 rng(1);
        const ParticleSet<double> ps = init_particles(s0, s1, cfg, rng);
        ASSERT_EQ(ps.size(), 1000u);
        for (const Particle<double>& p : ps)
        {
                EXPECT_NEAR(p.state.velocity.x(), 3, 1e-9);
                EXPECT_NEAR(p.state.velocity.y(), 0, 1e-9);
                EXPECT_NEAR(p.state.center.x(), -40, 1e-12);
                EXPECT_NEAR(p.state.center.y(), -10, 1e-12);
                EXPECT_DOUBLE_EQ(p.mu.x(), 0.03125);
                EXPECT_DOUBLE_EQ(p.mu.y(), 1);
                EXPECT_EQ(p.sigma, Mat(100 * Mat::Identity()));
                EXPECT_DOUBLE_EQ(std::exp(p.log_weight), 1e-3);
        }
}

TEST(InitParticles, PriorSpread)
{
        FilterConfig<double> cfg;
        cfg.n_particles = 20000;
        cfg.lambda_prior_from_first_scan = false;
        const Scan<double> s0 = scan_of({{-1, -1}, {1, 1}});
        std::mt19937_64 rng(2);
        ParticleSet<double> ps = init_particles(s0, s0, cfg, rng);
        double var_phi = 0;
        double var_c = 0;
        double var_v = 0;
        for (const Particle<double>& p : ps)
        {
                var_phi += p.state.orientation * p.state.orientation;
                var_c += p.state.center.x() * p.state.center.x();
                var_v += p.state.velocity.y() * p.state.velocity.y();
        }
        const double n = static_cast<double>(ps.size());
        // Wrapping at +-pi trims a N(0, (pi/4)^2) draw by well under a percent.
        EXPECT_NEAR(std::sqrt(var_phi / n), pi / 4, 0.02);
        EXPECT_NEAR(std::sqrt(var_c / n), 1, 0.02);
        EXPECT_NEAR(std::sqrt(var_v / n), 2, 0.04);
}

TEST(InitParticles, UnknownExponentPrior)
{
        FilterConfig<double> cfg = unknown_shape_config<double>();
        cfg.n_particles = 20000;
        const Scan<double> s0 = scan_of({{-1, -1}, {1, 1}});
        std::mt19937_64 rng(3);
        const ParticleSet<double> ps = init_particles(s0, s0, cfg, rng);
        double mean = 0;
        double sq = 0;
        for (const Particle<double>& p : ps)
        {
                mean += p.state.q;
                sq += p.state.q * p.state.q;
                EXPECT_NEAR(p.mu.x(), std::pow(2.0, -p.state.q), 1e-15);
        }
        mean /= static_cast<double>(ps.size());
        EXPECT_NEAR(mean, 2, 0.01);
        EXPECT_NEAR(std::sqrt(sq / static_cast<double>(ps.size()) - mean * mean), 0.2, 0.005);
}

TEST(InitParticles, FirstScanFitMovesLambdaTowardTruth)
{
        SensorConfig<double> sensor;
        sensor.sigma_range = 0;
        sensor.sigma_bearing = 0;
        const SuperellipseExtent<double> truth = make_extent<double>({10, 10}, pi / 4, {2.5, 1.5}, 5);
        std::mt19937_64 sim(4);
        const Scan<double> s0 = scan_target(sensor, truth, sim);
        FilterConfig<double> cfg;
        cfg.init_phi_std = 0;
        cfg.init_center_std = 0;
        cfg.n_particles = 4;
        ParticleSet<double> nominal;
        {
                FilterConfig<double> off = cfg;
                off.lambda_prior_from_first_scan = false;
                std::mt19937_64 rng(5);
                nominal = init_particles(s0, s0, off, rng);
        }
        std::mt19937_64 rng(5);
        const ParticleSet<double> fitted = init_particles(s0, s0, cfg, rng);
        for (std::size_t i = 0; i < fitted.size(); ++i)
        {
                EXPECT_LT(fitted[i].sigma.trace(), nominal[i].sigma.trace());
                EXPECT_EQ(fitted[i].state.center, nominal[i].state.center);
        }
}

TEST(InitParticles, EmptyScanThrows)
{
        std::mt19937_64 rng(1);
        EXPECT_THROW(init_particles(scan_of({}), scan_of({{1, 1}}), FilterConfig<double>{}, rng), std::invalid_argument);
        EXPECT_THROW(init_particles(scan_of({{1, 1}}), scan_of({}), FilterConfig<double>{}, rng), std::invalid_argument);
}

TEST(FilterConfig, Validation)
{
        FilterConfig<double> cfg;
        EXPECT_NO_THROW(check_filter_config(cfg));
        cfg.n_particles = 1;
        EXPECT_THROW(check_filter_config(cfg), std::invalid_argument);
        cfg = {};
        cfg.r_pseudo = 0;
        EXPECT_THROW(check_filter_config(cfg), std::invalid_argument);
        cfg = {};
        cfg.q_fixed = -1.0;
        EXPECT_THROW(check_filter_config(cfg), std::invalid_argument);
        cfg = {};
        cfg.sigma_a = -1;
        EXPECT_THROW(check_filter_config(cfg), std::invalid_argument);
}

// Pseudomeasurement likelihood ---------------------------------------------

TEST(PseudoLikelihood, ExactFitIsPdfPeak)
{
        FilterConfig<double> cfg;
        const Particle<double> p = particle_at({0, 0}, 0, {2.5, 1.5}, 5);
        const Scan<double> one = scan_of({{2.5, 0}});
        const double peak = std::log(1 / std::sqrt(2 * pi * 0.09));
        EXPECT_NEAR(peak, 0.28504, 1e-5);
        EXPECT_NEAR(pseudo_likelihood(p, one, cfg), peak, 1e-12);
        EXPECT_EQ(pseudo_likelihood(p, scan_of({}), cfg), 0);
        const Scan<double> two = scan_of({{2.5, 0}, {2.5, 0}});
        EXPECT_EQ(pseudo_likelihood(p, two, cfg), 2 * pseudo_likelihood(p, one, cfg));
}

TEST(PseudoLikelihood, MatchesDirectSum)
{
        FilterConfig<double> cfg;
        std::mt19937_64 rng(6);
        std::uniform_real_distribution<double> u(-4, 4);
        for (const GammaPolicy g : {GammaPolicy::FixedTarget, GammaPolicy::Marginalized})
        {
                cfg.gamma = g;
                cfg.q_fixed = 4.0;
                Particle<double> p = particle_at({0.3, -0.2}, 0.7, {2.5, 1.5}, 4);
                p.sigma = random_spd(rng) * 1e-3;
                std::vector<Vec> pts;
                for (int i = 0; i < 30; ++i)
                {
                        pts.emplace_back(u(rng), u(rng));
                }
                const Eigen::MatrixXd h = h_matrix(pts, p.state.center, p.state.orientation, 4);
                double expected = 0;
                for (long m = 0; m < h.rows(); ++m)
                {
                        const Eigen::Vector2d g_m = h.row(m).transpose();
                        const double r = g == GammaPolicy::Marginalized ? 0.09 + g_m.dot(p.sigma * g_m) : 0.09;
                        const double e = p.mu.dot(g_m) - 1;
                        expected += -0.5 * std::log(2 * pi * r) - e * e / (2 * r);
                }
                EXPECT_NEAR(pseudo_likelihood(p, scan_of(pts), cfg), expected, 1e-9 * std::abs(expected));
        }
}

// Scale constraints ---------------------------------------------------------

TEST(ScaleConstraint, ModeForCorrectParticleAndMaskedAxes)
{
        FilterConfig<double> cfg;
        const Particle<double> p = particle_at({0, 0}, 0, {2.5, 1.5}, 5);
        const Scan<double> scan = scan_of({{-2.5, 0}, {2.5, 0}, {0, -1.5}, {0, 1.5}});
        const double mode = -0.5 * std::log(2 * pi * 0.09);
        EXPECT_NEAR(scale_constraint_factor(p, scan, VisibilityFlags{true, true, {}}, cfg), 4 * mode, 1e-12);
        EXPECT_NEAR(scale_constraint_factor(p, scan, VisibilityFlags{true, false, {}}, cfg), 2 * mode, 1e-12);
        EXPECT_EQ(scale_constraint_factor(p, scan, VisibilityFlags{false, false, {}}, cfg), 0);
        EXPECT_EQ(scale_constraint_factor(p, scan_of({}), VisibilityFlags{true, true, {}}, cfg), 0);
}

TEST(ScaleConstraint, PenalizesInflatedFit)
{
        FilterConfig<double> cfg;
        const Scan<double> scan = scan_of({{-2.5, 1.5}, {0, 1.5}, {2.5, 1.5}});
        const VisibilityFlags axis1{true, false, {}};
        const Particle<double> good = particle_at({0, 0}, 0, {2.5, 1.5}, 5);
        const Particle<double> inflated = particle_at({0, 0}, 0, {5, 1.5}, 5);
        const double lg = scale_constraint_factor(good, scan, axis1, cfg);
        const double li = scale_constraint_factor(inflated, scan, axis1, cfg);
        const double expected = 2 * (-0.5 * std::log(2 * pi * 0.09) - 2.5 * 2.5 / (2 * 0.09));
        EXPECT_NEAR(li, expected, 1e-9);
        EXPECT_LT(li, lg - 50);
}

// Weight update -------------------------------------------------------------

TEST(WeightUpdate, NegativeLambdaGetsZeroWeight)
{
        FilterConfig<double> cfg;
        ParticleSet<double> ps(5, particle_at({0, 0}, 0, {2.5, 1.5}, 5));
        for (Particle<double>& p : ps)
        {
                p.log_weight = std::log(0.2);
        }
        ps[2].mu.y() = -0.1;
        const Scan<double> scan = scan_of({{0, 1.5}, {1, 1.5}});
        weight_update<double>(ps, scan, cfg);
        const std::vector<double> w = weights<double>(ps);
        EXPECT_EQ(w[2], 0.0);
        double sum = 0;
        for (std::size_t i = 0; i < w.size(); ++i)
        {
                sum += w[i];
                if (i != 2)
                {
                        EXPECT_NEAR(w[i], 0.25, 1e-12);
                }
        }
        EXPECT_NEAR(sum, 1, 1e-9);
}

TEST(WeightUpdate, NonpositiveExponentIsInadmissible)
{
        FilterConfig<double> cfg = unknown_shape_config<double>();
        ParticleSet<double> ps(3, particle_at({0, 0}, 0, {2.5, 1.5}, 2));
        ps[0].state.q = -0.1;
        ps[1].state.q = 0;
        weight_update<double>(ps, scan_of({{0, 1.5}}), cfg);
        EXPECT_EQ(std::exp(ps[0].log_weight), 0.0);
        EXPECT_EQ(std::exp(ps[1].log_weight), 0.0);
        EXPECT_NEAR(std::exp(ps[2].log_weight), 1, 1e-12);
}

TEST(WeightUpdate, AllInadmissibleIsDegenerate)
{
        FilterConfig<double> cfg;
        ParticleSet<double> ps(4, particle_at({0, 0}, 0, {2.5, 1.5}, 5));
        for (Particle<double>& p : ps)
        {
                p.mu.x() = -1;
        }
        EXPECT_THROW(weight_update<double>(ps, scan_of({{0, 1.5}}), cfg), DegenerateFilterError);
}

TEST(WeightUpdate, IdenticalParticlesStayUniform)
{
        FilterConfig<double> cfg;
        ParticleSet<double> ps(8, particle_at({0.1, 0}, 0.2, {2.5, 1.5}, 5));
        for (Particle<double>& p : ps)
        {
                p.log_weight = -std::log(8.0);
        }
        const double ess = weight_update<double>(ps, scan_of({{0, 1.5}, {1, 1.4}, {-3, 0}}), cfg);
        EXPECT_NEAR(ess, 8, 1e-9);
        for (const double w : weights<double>(ps))
        {
                EXPECT_NEAR(w, 0.125, 1e-12);
        }
}

TEST(NormalizeLogWeights, ShiftInvariance)
{
        std::mt19937_64 rng(7);
        std::normal_distribution<double> n(0, 30);
        for (int trial = 0; trial < 200; ++trial)
        {
                ParticleSet<double> a(50);
                for (Particle<double>& p : a)
                {
                        p.log_weight = n(rng) - 5000;
                }
                ParticleSet<double> b = a;
                for (Particle<double>& p : b)
                {
                        p.log_weight += std::log(2.0);
                }
                normalize_log_weights<double>(a);
                normalize_log_weights<double>(b);
                double sum = 0;
                for (std::size_t i = 0; i < a.size(); ++i)
                {
                        const double wa = std::exp(a[i].log_weight);
                        EXPECT_NEAR(wa, std::exp(b[i].log_weight), 1e-12);
                        EXPECT_GE(wa, 0);
                        sum += wa;
                }
                EXPECT_NEAR(sum, 1, 1e-9);
        }
}

TEST(NormalizeLogWeights, NanCountsAsZero)
{
        ParticleSet<double> ps(3);
        ps[0].log_weight = std::numeric_limits<double>::quiet_NaN();
        ps[1].log_weight = 0;
        ps[2].log_weight = 0;
        normalize_log_weights<double>(ps);
        EXPECT_EQ(std::exp(ps[0].log_weight), 0.0);
        EXPECT_NEAR(std::exp(ps[1].log_weight), 0.5, 1e-15);
}

// Kalman measurement update -------------------------------------------------

TEST(KalmanUpdate, HRowForUnitCircleParameters)
{
        FilterConfig<double> cfg;
        cfg.q_fixed = 2.0;
        Particle<double> p;
        p.state.center = Vec::Zero();
        const MeasurementStats<double> s = measurement_stats<double>(p, std::vector<Vec>{{1, 2}}, cfg);
        EXPECT_DOUBLE_EQ(s.row_sum.x(), 1);
        EXPECT_DOUBLE_EQ(s.row_sum.y(), 4);
        EXPECT_DOUBLE_EQ(s.gram(0, 1), 4);
        EXPECT_DOUBLE_EQ(s.gram(1, 1), 16);
}

TEST(KalmanUpdate, HandArithmetic)
{
        // One row h = (0.5, 0): S = 0.25 + 1, K = (0.4, 0), innovation 1 - 0.5 = 0.5.
        MeasurementStats<double> s;
        s.count = 1;
        s.gram << 0.25, 0, 0, 0;
        s.row_sum << 0.5, 0;
        const VisibilityFlags open{true, true, {}};
        const ConditionalGaussian<double> a = kf_measurement_update<double>({1, 1}, Mat::Identity(), s, open, 1.0);
        EXPECT_NEAR(a.mu.x(), 1.2, 1e-15);
        EXPECT_NEAR(a.mu.y(), 1, 1e-15);
        EXPECT_NEAR(a.sigma(0, 0), 0.8, 1e-15);
        EXPECT_NEAR(a.sigma(1, 1), 1, 1e-15);

        // Row (1, 0) from mu = (0, 1): innovation 1, gain 0.5.
        s.gram << 1, 0, 0, 0;
        s.row_sum << 1, 0;
        const ConditionalGaussian<double> b = kf_measurement_update<double>({0, 1}, Mat::Identity(), s, open, 1.0);
        EXPECT_NEAR(b.mu.x(), 0.5, 1e-15);
        EXPECT_NEAR(b.mu.y(), 1, 1e-15);
        // Same row from mu = (1, 1): zero innovation.
        const ConditionalGaussian<double> c = kf_measurement_update<double>({1, 1}, Mat::Identity(), s, open, 1.0);
        EXPECT_NEAR(c.mu.x(), 1, 1e-15);
}

TEST(KalmanUpdate, MatchesDenseOracle)
{
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> u(-3, 3);
        std::uniform_int_distribution<int> count(1, 40);
        for (int trial = 0; trial < 500; ++trial)
        {
                std::vector<Vec> pts(static_cast<std::size_t>(count(rng)));
                for (Vec& y : pts)
                {
                        y = {u(rng), u(rng)};
                }
                FilterConfig<double> cfg;
                cfg.q_fixed = 1 + std::abs(u(rng));
                Particle<double> p;
                p.state.center = {u(rng) / 3, u(rng) / 3};
                p.state.orientation = u(rng);
                p.mu = {std::abs(u(rng)) / 10, std::abs(u(rng)) / 10};
                p.sigma = random_spd(rng) * 0.01;
                const MeasurementStats<double> stats = measurement_stats<double>(p, pts, cfg);
                const Eigen::MatrixXd h = h_matrix(pts, p.state.center, p.state.orientation, *cfg.q_fixed);
                for (const bool b1 : {false, true})
                {
                        for (const bool b2 : {false, true})
                        {
                                const VisibilityFlags f{b1, b2, {}};
                                const oracle::KalmanResult ref = oracle::masked_kalman(p.mu, p.sigma, h, 0.09, b1, b2);
                                // Standard form: Sigma - K S K' holds for any mask when the
                                // masked rows and columns are left unchanged.
                                const ConditionalGaussian<double> got =
                                        kf_measurement_update(p.mu, p.sigma, stats, f, 0.09, CovarianceUpdate::Standard);
                                const double mu_scale = 1 + ref.mu.cwiseAbs().maxCoeff();
                                EXPECT_LE((got.mu - ref.mu).cwiseAbs().maxCoeff(), 1e-8 * mu_scale);
                                Mat ref_sigma = ref.sigma;
                                ref_sigma = (ref_sigma + ref_sigma.transpose()).eval() / 2;
                                if (b1 != b2)
                                {
                                        // K S K' vanishes off the open block; Standard keeps the
                                        // prior cross terms.
                                        const int o = b1 ? 0 : 1;
                                        const int c = 1 - o;
                                        EXPECT_NEAR(got.sigma(o, o), ref_sigma(o, o), 1e-8 * p.sigma.norm());
                                        EXPECT_EQ(got.sigma(c, c), p.sigma(c, c));
                                        // Joseph form: (I - KH) P (I - KH)' + K r K'.
                                        const Eigen::MatrixXd k_mat = [&] {
                                                Mat mask = Mat::Zero();
                                                mask(o, o) = 1;
                                                const Eigen::MatrixXd s =
                                                        h * p.sigma * h.transpose() +
                                                        0.09 * Eigen::MatrixXd::Identity(h.rows(), h.rows());
                                                return Eigen::MatrixXd(mask * p.sigma * h.transpose() * s.inverse());
                                        }();
                                        const Mat ikh = Mat::Identity() - k_mat * h;
                                        const Mat joseph = ikh * p.sigma * ikh.transpose() +
                                                           0.09 * k_mat * k_mat.transpose();
                                        const ConditionalGaussian<double> jg = kf_measurement_update(
                                                p.mu, p.sigma, stats, f, 0.09, CovarianceUpdate::Joseph);
                                        EXPECT_LE((jg.sigma - joseph).cwiseAbs().maxCoeff(), 1e-8 * (1 + p.sigma.norm()));
                                }
                                else
                                {
                                        EXPECT_LE((got.sigma - ref_sigma).cwiseAbs().maxCoeff(), 1e-8 * (1 + p.sigma.norm()));
                                        const ConditionalGaussian<double> jg = kf_measurement_update(
                                                p.mu, p.sigma, stats, f, 0.09, CovarianceUpdate::Joseph);
                                        EXPECT_LE((jg.sigma - ref_sigma).cwiseAbs().maxCoeff(), 1e-8 * (1 + p.sigma.norm()));
                                }
                        }
                }
        }
}

TEST(KalmanUpdate, GainMaskLeavesClosedAxesExact)
{
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> u(-3, 3);
        for (int trial = 0; trial < 1000; ++trial)
        {
                std::vector<Vec> pts(12);
                for (Vec& y : pts)
                {
                        y = {u(rng), u(rng)};
                }
                FilterConfig<double> cfg;
                Particle<double> p;
                p.state.orientation = u(rng);
                p.mu = {std::abs(u(rng)) / 30, std::abs(u(rng)) / 3};
                p.sigma = random_spd(rng);
                const MeasurementStats<double> stats = measurement_stats<double>(p, pts, cfg);
                for (const CovarianceUpdate form : {CovarianceUpdate::Standard, CovarianceUpdate::Joseph})
                {
                        const ConditionalGaussian<double> none =
                                kf_measurement_update(p.mu, p.sigma, stats, VisibilityFlags{false, false, {}}, 0.09, form);
                        EXPECT_EQ(std::memcmp(none.mu.data(), p.mu.data(), sizeof(double) * 2), 0);
                        EXPECT_TRUE(same_bits(none.sigma, p.sigma));
                        const ConditionalGaussian<double> first =
                                kf_measurement_update(p.mu, p.sigma, stats, VisibilityFlags{true, false, {}}, 0.09, form);
                        EXPECT_EQ(first.mu.y(), p.mu.y());
                        EXPECT_EQ(first.sigma(1, 1), p.sigma(1, 1));
                        const ConditionalGaussian<double> second =
                                kf_measurement_update(p.mu, p.sigma, stats, VisibilityFlags{false, true, {}}, 0.09, form);
                        EXPECT_EQ(second.mu.x(), p.mu.x());
                        EXPECT_EQ(second.sigma(0, 0), p.sigma(0, 0));
                        for (const ConditionalGaussian<double>* g : {&none, &first, &second})
                        {
                                if (form == CovarianceUpdate::Joseph)
                                {
                                        EXPECT_GE(min_eigenvalue(g->sigma), -1e-9);
                                }
                                EXPECT_EQ(g->sigma(0, 1), g->sigma(1, 0));
                        }
                }
        }
}

TEST(KalmanUpdate, StandardFormIsIndefiniteUnderPartialMask)
{
        // Shrinking one variance while keeping the old cross-covariance can push
        // the determinant below zero. Joseph is the default for this reason.
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> u(-3, 3);
        int indefinite = 0;
        for (int trial = 0; trial < 500; ++trial)
        {
                std::vector<Vec> pts(12);
                for (Vec& y : pts)
                {
                        y = {u(rng), u(rng)};
                }
                FilterConfig<double> cfg;
                Particle<double> p;
                p.state.orientation = u(rng);
                p.mu = {std::abs(u(rng)) / 30, std::abs(u(rng)) / 3};
                p.sigma = random_spd(rng);
                const MeasurementStats<double> stats = measurement_stats<double>(p, pts, cfg);
                const ConditionalGaussian<double> g = kf_measurement_update(
                        p.mu, p.sigma, stats, VisibilityFlags{true, false, {}}, 0.09, CovarianceUpdate::Standard);
                indefinite += min_eigenvalue(g.sigma) < -1e-9 ? 1 : 0;
        }
        EXPECT_GT(indefinite, 0);
        EXPECT_EQ(FilterConfig<double>{}.covariance_update, CovarianceUpdate::Joseph);
}

TEST(KalmanUpdate, EmptyScanSkips)
{
        FilterConfig<double> cfg;
        const Particle<double> p = particle_at({0, 0}, 0, {2.5, 1.5}, 5);
        const ConditionalGaussian<double> g = kf_measurement_update(p, scan_of({}), VisibilityFlags{true, true, {}}, cfg);
        EXPECT_EQ(g.mu, p.mu);
        EXPECT_EQ(g.sigma, p.sigma);
}

TEST(KalmanUpdate, SingularSystemIsRegularized)
{
        MeasurementStats<double> s;
        s.count = 1;
        s.gram << 1, 0, 0, 0;
        s.row_sum << 1, 0;
        // r = 0 with a zero-variance second axis makes A singular.
        Mat sigma = Mat::Zero();
        sigma(0, 0) = 0;
        const ConditionalGaussian<double> g =
                kf_measurement_update<double>({1, 1}, sigma, s, VisibilityFlags{true, true, {}}, 0.0);
        EXPECT_TRUE(g.regularized);
        EXPECT_TRUE(g.mu.allFinite());
}

// Prediction ----------------------------------------------------------------

TEST(PfSample, NoiseFreeConstantVelocity)
{
        FilterConfig<double> cfg;
        cfg.sigma_a = 0;
        cfg.sigma_phi = 0;
        ParticleSet<double> ps(1);
        ps[0].state.center = {-40, -10};
        ps[0].state.velocity = {3, 0};
        ps[0].state.orientation = 0.3;
        std::mt19937_64 rng(10);
        pf_sample<double>(ps, cfg, rng);
        EXPECT_NEAR(ps[0].state.center.x(), -39.7, 1e-12);
        EXPECT_EQ(ps[0].state.center.y(), -10);
        EXPECT_EQ(ps[0].state.velocity, Vec(3, 0));
        EXPECT_EQ(ps[0].state.orientation, 0.3);
}

TEST(PfSample, MonteCarloMomentsOfTransition)
{
        FilterConfig<double> cfg = unknown_shape_config<double>();
        cfg.rescale_lambda_with_q = false;
        NonlinearState<double> x;
        x.q = 3;
        x.orientation = 0.5;
        x.center = {1, 2};
        x.velocity = {3, -1};
        std::mt19937_64 rng(11);
        const int n = 100000;
        Eigen::Matrix<double, 6, 1> sum = Eigen::Matrix<double, 6, 1>::Zero();
        Eigen::Matrix<double, 6, 1> sum_sq = Eigen::Matrix<double, 6, 1>::Zero();
        for (int i = 0; i < n; ++i)
        {
                const NonlinearState<double> y = propagate(x, cfg, rng);
                Eigen::Matrix<double, 6, 1> v;
                v << y.q, y.orientation, y.center, y.velocity;
                sum += v;
                sum_sq += v.cwiseProduct(v);
        }
        const double t = cfg.sampling_time;
        Eigen::Matrix<double, 6, 1> mean_expected;
        mean_expected << 3, 0.5, 1 + t * 3, 2 - t, 3, -1;
        Eigen::Matrix<double, 6, 1> sd_expected;
        sd_expected << cfg.sigma_q, cfg.sigma_phi, cfg.sigma_a * t * t / 2, cfg.sigma_a * t * t / 2, cfg.sigma_a * t,
                cfg.sigma_a * t;
        for (int j = 0; j < 6; ++j)
        {
                const double mean = sum(j) / n;
                const double sd = std::sqrt(sum_sq(j) / n - mean * mean);
                EXPECT_NEAR(mean, mean_expected(j), 3 * sd_expected(j) / std::sqrt(double(n))) << "component " << j;
                EXPECT_NEAR(sd, sd_expected(j), 0.02 * sd_expected(j)) << "component " << j;
        }
}

TEST(PfSample, KnownExponentIsNotPerturbed)
{
        FilterConfig<double> cfg;
        ParticleSet<double> ps(10);
        std::mt19937_64 rng(12);
        pf_sample<double>(ps, cfg, rng);
        for (const Particle<double>& p : ps)
        {
                EXPECT_EQ(p.state.q, 0);
        }
}

TEST(RescaleLambda, KeepsHalfLengthsFixed)
{
        std::mt19937_64 rng(13);
        std::uniform_real_distribution<double> u(0.5, 6);
        for (int i = 0; i < 500; ++i)
        {
                const Vec d{u(rng), u(rng)};
                const double q0 = u(rng);
                Particle<double> p;
                p.state.q = u(rng);
                p.mu = half_lengths_to_lambda(d, q0);
                p.sigma = random_spd(rng) * 1e-3;
                rescale_lambda(p, q0);
                const Vec back = lambda_to_half_lengths(p.mu, p.state.q);
                EXPECT_NEAR(back.x(), d.x(), 1e-9 * d.x());
                EXPECT_NEAR(back.y(), d.y(), 1e-9 * d.y());
                EXPECT_GE(min_eigenvalue(p.sigma), 0);
        }
        Particle<double> bad;
        bad.state.q = -1;
        const Vec before = bad.mu;
        rescale_lambda(bad, 2.0);
        EXPECT_EQ(bad.mu, before);
}

TEST(KfTimeUpdate, AddsRandomWalkVariance)
{
        FilterConfig<double> cfg;
        Particle<double> p;
        p.sigma << 2, 0.5, 0.5, 3;
        const Vec mu = p.mu;
        kf_time_update(p, cfg);
        EXPECT_EQ(p.mu, mu);
        EXPECT_NEAR(p.sigma(0, 0), 2 + 1e-8, 1e-15);
        EXPECT_NEAR(p.sigma(1, 1), 3 + 1e-8, 1e-15);
        EXPECT_EQ(p.sigma(0, 1), 0.5);
        for (int i = 0; i < 99; ++i)
        {
                kf_time_update(p, cfg);
        }
        EXPECT_NEAR(p.sigma(0, 0), 2 + 100e-8, 1e-13);
        cfg.sigma_lambda = 0;
        const Mat before = p.sigma;
        kf_time_update(p, cfg);
        EXPECT_EQ(p.sigma, before);
}

// Resampling ----------------------------------------------------------------

TEST(Resample, SystematicEnumeration)
{
        const std::vector<double> w{0.75, 0.25, 0, 0};
        std::mt19937_64 rng(14);
        for (int i = 0; i < 100; ++i)
        {
                const std::vector<std::size_t> idx = resample_indices<double>(w, rng);
                std::vector<int> copies(4, 0);
                for (const std::size_t j : idx)
                {
                        ++copies[j];
                }
                EXPECT_EQ(copies, (std::vector<int>{3, 1, 0, 0}));
        }
}

TEST(Resample, UniformWeightsAndSingleWinner)
{
        std::mt19937_64 rng(15);
        const std::vector<double> uniform(37, 1.0 / 37);
        std::vector<int> copies(37, 0);
        for (const std::size_t j : resample_indices<double>(uniform, rng))
        {
                ++copies[j];
        }
        for (const int c : copies)
        {
                EXPECT_LE(std::abs(c - 1), 1);
        }
        std::vector<double> one(20, 0.0);
        one[7] = 1;
        for (const std::size_t j : resample_indices<double>(one, rng))
        {
                EXPECT_EQ(j, 7u);
        }
}

TEST(Resample, UnbiasedCopyCounts)
{
        for (const ResamplingScheme scheme : {ResamplingScheme::Systematic, ResamplingScheme::Multinomial})
        {
                std::mt19937_64 rng(16);
                std::vector<double> w{0.05, 0.3, 0.01, 0.24, 0.4};
                const double n = static_cast<double>(w.size());
                const int trials = 10000;
                std::vector<double> sum(w.size(), 0);
                std::vector<double> sum_sq(w.size(), 0);
                for (int t = 0; t < trials; ++t)
                {
                        std::vector<double> c(w.size(), 0);
                        for (const std::size_t j : resample_indices<double>(w, rng, scheme))
                        {
                                c[j] += 1;
                        }
                        for (std::size_t i = 0; i < w.size(); ++i)
                        {
                                sum[i] += c[i];
                                sum_sq[i] += c[i] * c[i];
                        }
                }
                for (std::size_t i = 0; i < w.size(); ++i)
                {
                        const double mean = sum[i] / trials;
                        const double var = sum_sq[i] / trials - mean * mean;
                        const double se = std::sqrt(std::max(var, 1e-12) / trials);
                        EXPECT_NEAR(mean, n * w[i], 3 * se + 1e-12) << "particle " << i;
                }
        }
}

TEST(Resample, CarriesConditionalsAndResetsWeights)
{
        ParticleSet<double> ps(3);
        ps[0].log_weight = std::log(0.0);
        ps[1].log_weight = std::log(1.0);
        ps[2].log_weight = std::log(0.0);
        ps[1].mu = {0.2, 0.3};
        ps[1].sigma << 4, 1, 1, 5;
        std::mt19937_64 rng(17);
        const ParticleSet<double> out = resample<double>(ps, rng);
        ASSERT_EQ(out.size(), 3u);
        for (const Particle<double>& p : out)
        {
                EXPECT_EQ(p.mu, ps[1].mu);
                EXPECT_EQ(p.sigma, ps[1].sigma);
                EXPECT_NEAR(std::exp(p.log_weight), 1.0 / 3, 1e-15);
        }
}

// Estimate ------------------------------------------------------------------

TEST(Estimate, CircularMeanAndHalfLengths)
{
        FilterConfig<double> cfg;
        ParticleSet<double> ps(2);
        ps[0].state.orientation = pi - 0.01;
        ps[1].state.orientation = -pi + 0.01;
        for (Particle<double>& p : ps)
        {
                p.log_weight = std::log(0.5);
                p.mu = {0.01024, 0.131687242798354};
        }
        const TrackEstimate<double> e = estimate<double>(ps, cfg);
        EXPECT_NEAR(std::abs(e.state.orientation), pi, 1e-9);
        EXPECT_TRUE(e.valid);
        EXPECT_NEAR(e.half_lengths.x(), 2.5, 1e-6);
        EXPECT_NEAR(e.half_lengths.y(), 1.5, 1e-6);
        EXPECT_EQ(e.state.q, 5);
}

TEST(Estimate, SingleParticleAndContracts)
{
        FilterConfig<double> cfg;
        ParticleSet<double> ps(1, particle_at({3, 4}, 0.2, {2, 1}, 5));
        ps[0].state.velocity = {1, -1};
        ps[0].log_weight = 0;
        const TrackEstimate<double> e = estimate<double>(ps, cfg);
        EXPECT_EQ(e.state.center, Vec(3, 4));
        EXPECT_EQ(e.state.velocity, Vec(1, -1));
        EXPECT_NEAR(e.state.orientation, 0.2, 1e-15);
        ps[0].log_weight = std::log(0.5);
        EXPECT_THROW(estimate<double>(ps, cfg), std::logic_error);
        EXPECT_THROW(estimate<double>(ParticleSet<double>{}, cfg), std::logic_error);
        ps[0].log_weight = 0;
        ps[0].mu.x() = -1;
        EXPECT_FALSE(estimate<double>(ps, cfg).valid);
}

// Full step -----------------------------------------------------------------

TEST(Step, EmptyScanOnlyPredicts)
{
        FilterConfig<double> cfg;
        cfg.n_particles = 50;
        std::mt19937_64 rng(18);
        ParticleSet<double> ps(50, particle_at({0, 0}, 0, {2.5, 1.5}, 5));
        for (std::size_t i = 0; i < ps.size(); ++i)
        {
                ps[i].log_weight = std::log((i % 2 ? 1.0 : 3.0) / 100);
        }
        const ParticleSet<double> before = ps;
        const StepResult<double> r = step(ps, scan_of({}), cfg, rng);
        for (std::size_t i = 0; i < ps.size(); ++i)
        {
                EXPECT_EQ(ps[i].log_weight, before[i].log_weight);
                EXPECT_EQ(ps[i].mu, before[i].mu);
                EXPECT_NEAR(ps[i].sigma(0, 0), before[i].sigma(0, 0) + 1e-8, 1e-18);
        }
        EXPECT_NEAR(r.diagnostics.weight_sum, 1, 1e-12);
        EXPECT_EQ(r.diagnostics.points, 0);
}

TEST(Step, StationaryNoiseFreeTargetDoesNotDrift)
{
        SensorConfig<double> sensor;
        sensor.sigma_range = 0;
        sensor.sigma_bearing = 0;
        const SuperellipseExtent<double> truth = make_extent<double>({-8, 10}, 0.3, {2.5, 1.5}, 5);
        FilterConfig<double> cfg;
        std::mt19937_64 rng(19);
        ParticleSet<double> ps(cfg.n_particles, particle_at(truth.center, truth.orientation, truth.half_lengths, 5));
        for (Particle<double>& p : ps)
        {
                p.log_weight = -std::log(double(cfg.n_particles));
        }
        std::mt19937_64 sim(20);
        double worst = 0;
        for (int k = 0; k < 50; ++k)
        {
                const StepResult<double> r = step(ps, scan_target(sensor, truth, sim, k), cfg, rng);
                worst = std::max(worst, (r.estimate.state.center - truth.center).norm());
        }
        EXPECT_LE(worst, 0.1);
}

TEST(Step, ReducesFittingCostFromPrior)
{
        SensorConfig<double> sensor;
        const SuperellipseExtent<double> truth = make_extent<double>({-40, -10}, 0, {2.5, 1.5}, 5);
        std::mt19937_64 sim(21);
        const Scan<double> s0 = scan_target(sensor, truth, sim, 0);
        SuperellipseExtent<double> moved = truth;
        moved.center.x() += 0.3;
        const Scan<double> s1 = scan_target(sensor, moved, sim, 1);
        FilterConfig<double> cfg;
        cfg.lambda_prior_from_first_scan = false;
        std::mt19937_64 rng(22);
        ParticleSet<double> ps = init_particles(s0, s1, cfg, rng);
        const TrackEstimate<double> prior = estimate<double>(ps, cfg);
        const StepResult<double> r = step(ps, s0, cfg, rng);
        const auto cost = [&](const SuperellipseExtent<double>& e) {
                return total_deviation<double>(to_linear(e), 5.0, s0.points);
        };
        EXPECT_LT(cost(r.estimate.extent), cost(prior.extent));
}

TEST(Step, DiagnosticsHygiene)
{
        SensorConfig<double> sensor;
        const SuperellipseExtent<double> truth = make_extent<double>({5, -12}, 1.0, {2.5, 1.5}, 5);
        std::mt19937_64 sim(23);
        std::vector<Scan<double>> scans;
        for (int k = 0; k < 20; ++k)
        {
                scans.push_back(scan_target(sensor, truth, sim, k));
        }
        for (FilterConfig<double> cfg : {FilterConfig<double>{}, unknown_shape_config<double>()})
        {
                cfg.n_particles = 300;
                std::mt19937_64 rng(24);
                ParticleSet<double> ps = init_particles(scans[0], scans[1], cfg, rng);
                for (const Scan<double>& s : scans)
                {
                        const StepResult<double> r = step(ps, s, cfg, rng);
                        EXPECT_NEAR(r.diagnostics.weight_sum, 1, 1e-9);
                        EXPECT_GE(r.diagnostics.min_sigma_eigenvalue, -1e-9);
                        EXPECT_LE(r.diagnostics.max_sigma_asymmetry, 1e-10);
                        EXPECT_EQ(r.diagnostics.inadmissible_survivors, 0);
                        EXPECT_GT(r.diagnostics.effective_sample_size, 0);
                        EXPECT_LE(r.diagnostics.effective_sample_size, 300 + 1e-9);
                        EXPECT_GE(r.diagnostics.gate1_rate, 0);
                        EXPECT_LE(r.diagnostics.gate1_rate, 1);
                }
        }
}

TEST(Step, RigidMotionEquivariance)
{
        // Rotating and shifting every input maps the estimate by the same
        // transform. The particle noise is drawn in world coordinates, so the
        // match is statistical: compare errors relative to each truth.
        SensorConfig<double> sensor;
        sensor.sigma_range = 0;
        sensor.sigma_bearing = 0;
        const double a = 0.9;
        const Vec shift{7, -3};
        const Matrix2<double> r = rotation(a);
        const SuperellipseExtent<double> truth = make_extent<double>({-6, 11}, 0.2, {2.5, 1.5}, 5);
        SuperellipseExtent<double> truth_b = truth;
        truth_b.center = r * truth.center + shift;
        truth_b.orientation = truth.orientation + a;
        SensorConfig<double> sensor_b = sensor;
        sensor_b.position = r * sensor.position + shift;

        const auto run = [](const SensorConfig<double>& s, const SuperellipseExtent<double>& t) {
                FilterConfig<double> cfg;
                std::mt19937_64 sim(25);
                std::mt19937_64 rng(26);
                ParticleSet<double> ps(cfg.n_particles, particle_at(t.center, t.orientation, t.half_lengths, 5));
                for (Particle<double>& p : ps)
                {
                        p.log_weight = -std::log(double(cfg.n_particles));
                }
                TrackEstimate<double> e;
                for (int k = 0; k < 30; ++k)
                {
                        e = step(ps, scan_target(s, t, sim, k), cfg, rng).estimate;
                }
                return e;
        };
        const TrackEstimate<double> ea = run(sensor, truth);
        const TrackEstimate<double> eb = run(sensor_b, truth_b);
        const Vec mapped = r * ea.state.center + shift;
        EXPECT_LE((mapped - eb.state.center).norm(), 0.15);
        EXPECT_NEAR(normalize_angle(ea.state.orientation + a - eb.state.orientation), 0, 0.05);
        EXPECT_NEAR(ea.half_lengths.x(), eb.half_lengths.x(), 0.15);
        EXPECT_NEAR(ea.half_lengths.y(), eb.half_lengths.y(), 0.15);
}

TEST(TrackScans, DeterministicGivenStream)
{
        const Scenario sc = generate_scenario(ScenarioName::Custom);
        SensorConfig<double> sensor;
        Rng sim = make_stream(5, 0, StreamPurpose::Simulation);
        const std::vector<Scan<double>> scans = simulate_scans(sc, sensor, sim);
        FilterConfig<double> cfg;
        cfg.n_particles = 200;
        Rng a = make_stream(5, 0, StreamPurpose::Filter);
        Rng b = make_stream(5, 0, StreamPurpose::Filter);
        const std::vector<FrameRecord> fa = track_scans(scans, cfg, a);
        const std::vector<FrameRecord> fb = track_scans(scans, cfg, b);
        ASSERT_EQ(fa.size(), fb.size());
        for (std::size_t i = 0; i < fa.size(); ++i)
        {
                EXPECT_EQ(fa[i].estimate.state.center, fb[i].estimate.state.center);
                EXPECT_EQ(fa[i].estimate.lambda, fb[i].estimate.lambda);
                EXPECT_EQ(fa[i].diagnostics.effective_sample_size, fb[i].diagnostics.effective_sample_size);
        }
}
