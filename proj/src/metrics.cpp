#include "usct/metrics.hpp"

#include <cmath>
#include <sstream>

#include "usct/errors.hpp"
#include "usct/grid.hpp"

namespace usct {

namespace {

void check_valid(const Image2D& a, const Mask2D* valid) {
    if (valid) {
        detail::require(a.same_shape(*valid), "metric: valid mask shape differs");
        detail::require(valid->count_true() > 0, "metric: valid mask is empty");
    }
}

}  // namespace

double mae(const Image2D& a, const Image2D& b, const Mask2D* valid) {
    detail::require(a.same_shape(b), "mae: image shapes differ");
    check_valid(a, valid);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (valid && !(*valid)[i]) continue;
        sum += std::abs(a[i] - b[i]);
        ++n;
    }
    return sum / static_cast<double>(n);
}

double ncc(const Image2D& a, const Image2D& b, const Mask2D* valid) {
    detail::require(a.same_shape(b), "ncc: image shapes differ");
    check_valid(a, valid);
    double sa = 0.0, sb = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (valid && !(*valid)[i]) continue;
        sa += a[i];
        sb += b[i];
        ++n;
    }
    const double ma = sa / n, mb = sb / n;
    double vaa = 0.0, vbb = 0.0, vab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (valid && !(*valid)[i]) continue;
        const double da = a[i] - ma, db = b[i] - mb;
        vaa += da * da;
        vbb += db * db;
        vab += da * db;
    }
    vaa /= n;
    vbb /= n;
    vab /= n;
    if (vaa < 1e-12 || vbb < 1e-12)
        throw UndefinedMetric("ncc: input variance below 1e-12 on the valid region");
    return vab / std::sqrt(vaa * vbb);
}

double ssim(const Image2D& a, const Image2D& b, int window, double k1, double k2) {
    detail::require(a.same_shape(b), "ssim: image shapes differ");
    detail::require(window >= 1 && window % 2 == 1, "ssim: window must be odd and positive");
    const double c1 = k1 * k1, c2 = k2 * k2;  // dynamic range 1
    const int w = a.width(), h = a.height(), r = window / 2;

    double acc = 0.0;
    for (int cy = 0; cy < h; ++cy)
        for (int cx = 0; cx < w; ++cx) {
            const int x0 = std::max(0, cx - r), x1 = std::min(w - 1, cx + r);
            const int y0 = std::max(0, cy - r), y1 = std::min(h - 1, cy + r);
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            int n = 0;
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double va = a(x, y), vb = b(x, y);
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                    ++n;
                }
            const double ma = sa / n, mb = sb / n;
            const double vaa = saa / n - ma * ma;
            const double vbb = sbb / n - mb * mb;
            const double vab = sab / n - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * vab + c2)) /
                   ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
        }
    return acc / static_cast<double>(a.size());
}

double dice(const Mask2D& a, const Mask2D& b) {
    detail::require(a.same_shape(b), "dice: mask shapes differ");
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool va = a[i] != 0, vb = b[i] != 0;
        na += va;
        nb += vb;
        inter += va && vb;
    }
    if (na + nb == 0) throw UndefinedMetric("dice: both masks are empty");
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

std::string MetricReport::csv_header() { return "mae,ncc,ssim,dice,fb_mean,folding"; }

std::string MetricReport::csv_row() const {
    std::ostringstream os;
    os.precision(9);
    os << mae << "," << ncc << "," << ssim << "," << dice << "," << fb_mean << "," << folding;
    return os.str();
}

MetricReport evaluate_pair(const Image2D& i0, const Image2D& i1, const FlowField& f01, const FlowField& f10,
                           const Mask2D* mask0, const Mask2D* mask1) {
    detail::require(i0.same_shape(i1) && i0.same_shape(f01) && i0.same_shape(f10),
                    "evaluate_pair: input shapes differ");

    const Image2D w01 = warp(i1, f01);
    const Image2D w10 = warp(i0, f10);
    const Mask2D v01 = warp_valid_mask(f01);
    const Mask2D v10 = warp_valid_mask(f10);

    MetricReport rep;
    rep.mae = 0.5 * (mae(w01, i0, &v01) + mae(w10, i1, &v10));
    rep.ncc = 0.5 * (ncc(w01, i0, &v01) + ncc(w10, i1, &v10));
    rep.ssim = 0.5 * (ssim(w01, i0) + ssim(w10, i1));
    rep.fb_mean = fb_residual(f01, f10).mean;
    rep.folding = 0.5 * (folding_ratio(f01) + folding_ratio(f10));
    if (mask0 && mask1) {
        detail::require(i0.same_shape(*mask0) && i0.same_shape(*mask1),
                        "evaluate_pair: mask shapes differ");
        rep.dice = 0.5 * (dice(warp_nearest(*mask1, f01), *mask0) + dice(warp_nearest(*mask0, f10), *mask1));
    }
    return rep;
}

}  // namespace usct
