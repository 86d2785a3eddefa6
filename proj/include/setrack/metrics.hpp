#pragma once

#include "geometry.hpp"

#include <span>
#include <vector>

namespace setrack
{
/// Flat state summary shared by ground truth and estimates.
struct StateRecord
{
        int k = 0;
        Vector2<double> center = Vector2<double>::Zero();
        double orientation = 0;
        Vector2<double> velocity = Vector2<double>::Zero();
        Vector2<double> half_lengths = Vector2<double>::Ones();
        double exponent = 2;

        SuperellipseExtent<double> extent() const
        {
                return {center, orientation, half_lengths, exponent};
        }
};

struct MetricsReport
{
        double rmse_c = 0;
        double rmse_v = 0;
        double rmse_d1 = 0;
        double rmse_d2 = 0;
        double iou = 0;
        /// Mean per-scan filter time in seconds; not reproducible between runs.
        double wall_time = 0;

        int runs = 0;
        int failed_runs = 0;
        long steps = 0;
        /// Steps left out of the IOU average because a shape was not convex-representable.
        long iou_skipped = 0;
};

/// Area IOU of two superellipse regions on 512-vertex polygonizations.
/// Throws std::domain_error when either exponent is below 1.
double iou(const SuperellipseExtent<double>& a, const SuperellipseExtent<double>& b, int n_vertices = DEFAULT_POLYGON_VERTICES);

/// RMSE over all steps of all runs (Euclidean norm for centroid and velocity)
/// and the mean IOU. Each run must have the same length as `truth`.
MetricsReport compute_metrics(std::span<const StateRecord> truth, const std::vector<std::vector<StateRecord>>& runs);
}
