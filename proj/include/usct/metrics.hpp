#pragma once

#include <optional>
#include <string>

#include "usct/types.hpp"

namespace usct {

struct MetricReport {
    double mae = 0.0;
    double ncc = 0.0;
    double ssim = 0.0;
    double dice = -1.0;  // -1 when no masks were supplied
    double fb_mean = 0.0;
    double folding = 0.0;

    static std::string csv_header();
    std::string csv_row() const;
};

double mae(const Image2D& a, const Image2D& b, const Mask2D* valid = nullptr);

/// Zero-normalized cross-correlation. Throws UndefinedMetric when either input
/// has variance below 1e-12 on the valid region.
double ncc(const Image2D& a, const Image2D& b, const Mask2D* valid = nullptr);

/// Mean local SSIM with a uniform window (clipped at borders), dynamic range 1.
double ssim(const Image2D& a, const Image2D& b, int window = 7, double k1 = 0.01, double k2 = 0.03);

/// 2|a. b| / (|a| + |b|). Throws UndefinedMetric when both masks are empty.
double dice(const Mask2D& a, const Mask2D& b);

/// Bidirectional post-warp metrics averaged over both directions, with
/// border-clamped samples excluded from MAE/NCC. Dice is computed on
/// nearest-warped masks when both are given.
MetricReport evaluate_pair(const Image2D& i0, const Image2D& i1, const FlowField& f01, const FlowField& f10,
                           const Mask2D* mask0 = nullptr, const Mask2D* mask1 = nullptr);

}  // namespace usct
