#include "setrack/metrics.hpp"

#include "setrack/polygon.hpp"

#include <cmath>
#include <stdexcept>

namespace setrack
{
double iou(const SuperellipseExtent<double>& a, const SuperellipseExtent<double>& b, int n_vertices)
{
        if (a.exponent < 1 || b.exponent < 1)
        {
                throw std::domain_error("IOU requires convex superellipses (q >= 1)");
        }
        check_extent(a);
        check_extent(b);
        const double gap = (a.center - b.center).norm();
        if (gap > a.half_lengths.norm() + b.half_lengths.norm())
        {
                return 0;
        }
        const PointList<double> pa = contour_polygon(a, n_vertices);
        const PointList<double> pb = contour_polygon(b, n_vertices);
        return convex_iou<double>(pa, pb);
}

MetricsReport compute_metrics(std::span<const StateRecord> truth, const std::vector<std::vector<StateRecord>>& runs)
{
        MetricsReport report;
        report.runs = static_cast<int>(runs.size());
        if (runs.empty())
        {
                return report;
        }
        double se_c = 0;
        double se_v = 0;
        double se_d1 = 0;
        double se_d2 = 0;
        double iou_sum = 0;
        long iou_count = 0;
        for (const std::vector<StateRecord>& run : runs)
        {
                if (run.size() != truth.size())
                {
                        throw std::invalid_argument("estimate sequence length does not match ground truth");
                }
                for (std::size_t k = 0; k < truth.size(); ++k)
                {
                        const StateRecord& t = truth[k];
                        const StateRecord& e = run[k];
                        if (t.k != e.k)
                        {
                                throw std::invalid_argument("estimate step index does not match ground truth");
                        }
                        se_c += (t.center - e.center).squaredNorm();
                        se_v += (t.velocity - e.velocity).squaredNorm();
                        se_d1 += std::pow(t.half_lengths.x() - e.half_lengths.x(), 2);
                        se_d2 += std::pow(t.half_lengths.y() - e.half_lengths.y(), 2);
                        const bool convex = t.exponent >= 1 && e.exponent >= 1 && e.half_lengths.allFinite() &&
                                            e.half_lengths.minCoeff() > 0;
                        if (convex)
                        {
                                iou_sum += iou(t.extent(), e.extent());
                                ++iou_count;
                        }
                        else
                        {
                                ++report.iou_skipped;
                        }
                }
        }
        const double n = static_cast<double>(truth.size() * runs.size());
        report.steps = static_cast<long>(n);
        report.rmse_c = std::sqrt(se_c / n);
        report.rmse_v = std::sqrt(se_v / n);
        report.rmse_d1 = std::sqrt(se_d1 / n);
        report.rmse_d2 = std::sqrt(se_d2 / n);
        report.iou = iou_count > 0 ? iou_sum / static_cast<double>(iou_count) : 0;
        return report;
}
}
