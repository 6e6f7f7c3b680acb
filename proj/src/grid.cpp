#include "usct/grid.hpp"

#include <cmath>

namespace usct {

namespace {

struct BilinearCoeffs {
    int x0, x1, y0, y1;
    double fx, fy;
};

inline BilinearCoeffs bilinear_coeffs(int w, int h, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    BilinearCoeffs c;
    // fx/fy stay in [0,1); integer coordinates reproduce stored values exactly
    c.x0 = static_cast<int>(x);
    c.y0 = static_cast<int>(y);
    c.x1 = std::min(c.x0 + 1, w - 1);
    c.y1 = std::min(c.y0 + 1, h - 1);
    c.fx = x - c.x0;
    c.fy = y - c.y0;
    return c;
}

inline double blend(const std::vector<double>& d, int w, const BilinearCoeffs& c) {
    const double v00 = d[static_cast<std::size_t>(c.y0) * w + c.x0];
    const double v10 = d[static_cast<std::size_t>(c.y0) * w + c.x1];
    const double v01 = d[static_cast<std::size_t>(c.y1) * w + c.x0];
    const double v11 = d[static_cast<std::size_t>(c.y1) * w + c.x1];
    const double top = v00 + c.fx * (v10 - v00);
    const double bot = v01 + c.fx * (v11 - v01);
    return top + c.fy * (bot - top);
}

inline void check_coords(double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y))
        throw std::invalid_argument("sample coordinates must be finite");
}

}  // namespace

double bilinear_sample(const Image2D& img, double x, double y) {
    check_coords(x, y);
    return blend(img.data(), img.width(), bilinear_coeffs(img.width(), img.height(), x, y));
}

double bilinear_sample(const ScalarField& s, double x, double y) {
    check_coords(x, y);
    return blend(s.data(), s.width(), bilinear_coeffs(s.width(), s.height(), x, y));
}

Vec2 bilinear_sample(const FlowField& f, double x, double y) {
    check_coords(x, y);
    const auto c = bilinear_coeffs(f.width(), f.height(), x, y);
    return {blend(f.dx_plane(), f.width(), c), blend(f.dy_plane(), f.width(), c)};
}

Image2D warp(const Image2D& img, const FlowField& f) {
    detail::require(img.same_shape(f), "warp: image and flow dimensions differ");
    const int w = img.width(), h = img.height();
    std::vector<double> out(img.size());
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++i) {
            const auto c = bilinear_coeffs(w, h, x + f.dx_plane()[i], y + f.dy_plane()[i]);
            out[i] = blend(img.data(), w, c);
        }
    return Image2D(w, h, std::move(out));
}

Mask2D warp_nearest(const Mask2D& mask, const FlowField& f) {
    detail::require(mask.same_shape(f), "warp_nearest: mask and flow dimensions differ");
    const int w = mask.width(), h = mask.height();
    std::vector<std::uint8_t> out(mask.size(), 0);
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++i) {
            const long sx = std::lround(x + f.dx_plane()[i]);
            const long sy = std::lround(y + f.dy_plane()[i]);
            if (sx >= 0 && sx < w && sy >= 0 && sy < h)
                out[i] = mask(static_cast<int>(sx), static_cast<int>(sy));
        }
    return Mask2D(w, h, std::move(out));
}

Mask2D warp_valid_mask(const FlowField& f) {
    const int w = f.width(), h = f.height();
    std::vector<std::uint8_t> out(f.size(), 0);
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++i) {
            const double sx = x + f.dx_plane()[i];
            const double sy = y + f.dy_plane()[i];
            out[i] = (sx >= 0.0 && sx <= w - 1 && sy >= 0.0 && sy <= h - 1) ? 1 : 0;
        }
    return Mask2D(w, h, std::move(out));
}

FlowField compose(const FlowField& f, const FlowField& g) {
    detail::require(f.same_shape(g), "compose: field dimensions differ");
    const int w = f.width(), h = f.height();
    std::vector<double> dx(f.size()), dy(f.size());
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++i) {
            const double fx = f.dx_plane()[i], fy = f.dy_plane()[i];
            const auto c = bilinear_coeffs(w, h, x + fx, y + fy);
            dx[i] = fx + blend(g.dx_plane(), w, c);
            dy[i] = fy + blend(g.dy_plane(), w, c);
        }
    return FlowField(w, h, std::move(dx), std::move(dy));
}

namespace {

// Central differences inside, one-sided on the borders, applied to one plane.
void plane_gradient(const std::vector<double>& d, int w, int h, std::vector<double>& gx,
                    std::vector<double>& gy) {
    gx.resize(d.size());
    gy.resize(d.size());
    for (int y = 0; y < h; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            const std::size_t i = row + x;
            if (x == 0)
                gx[i] = d[i + 1] - d[i];
            else if (x == w - 1)
                gx[i] = d[i] - d[i - 1];
            else
                gx[i] = 0.5 * (d[i + 1] - d[i - 1]);
            if (y == 0)
                gy[i] = d[i + w] - d[i];
            else if (y == h - 1)
                gy[i] = d[i] - d[i - w];
            else
                gy[i] = 0.5 * (d[i + w] - d[i - w]);
        }
    }
}

}  // namespace

GradientField gradient(const Image2D& img) {
    std::vector<double> gx, gy;
    plane_gradient(img.data(), img.width(), img.height(), gx, gy);
    return GradientField(img.width(), img.height(), std::move(gx), std::move(gy));
}

Image2D gradient_magnitude(const Image2D& img) {
    std::vector<double> gx, gy;
    plane_gradient(img.data(), img.width(), img.height(), gx, gy);
    std::vector<double> mag(gx.size());
    for (std::size_t i = 0; i < gx.size(); ++i) mag[i] = std::hypot(gx[i], gy[i]);
    return Image2D(img.width(), img.height(), std::move(mag));
}

ScalarField jacobian_det(const FlowField& f) {
    const int w = f.width(), h = f.height();
    std::vector<double> axx, axy, ayx, ayy;
    plane_gradient(f.dx_plane(), w, h, axx, axy);
    plane_gradient(f.dy_plane(), w, h, ayx, ayy);
    std::vector<double> det(f.size());
    for (std::size_t i = 0; i < det.size(); ++i)
        det[i] = (1.0 + axx[i]) * (1.0 + ayy[i]) - axy[i] * ayx[i];
    return ScalarField(w, h, std::move(det));
}

double folding_ratio(const FlowField& f) {
    const int w = f.width(), h = f.height();
    if (w < 3 || h < 3) return 0.0;
    const ScalarField det = jacobian_det(f);
    std::size_t folded = 0, interior = 0;
    for (int y = 1; y < h - 1; ++y)
        for (int x = 1; x < w - 1; ++x) {
            ++interior;
            if (det(x, y) < 0.0) ++folded;
        }
    return static_cast<double>(folded) / static_cast<double>(interior);
}

FbResidual fb_residual(const FlowField& f01, const FlowField& f10) {
    detail::require(f01.same_shape(f10), "fb_residual: field dimensions differ");
    const FlowField r01 = compose(f01, f10);
    const FlowField r10 = compose(f10, f01);
    const int w = f01.width(), h = f01.height();
    std::vector<double> n01(r01.size()), n10(r10.size());
    double s01 = 0.0, s10 = 0.0;
    for (std::size_t i = 0; i < n01.size(); ++i) {
        n01[i] = std::hypot(r01.dx_plane()[i], r01.dy_plane()[i]);
        n10[i] = std::hypot(r10.dx_plane()[i], r10.dy_plane()[i]);
        s01 += n01[i];
        s10 += n10[i];
    }
    FbResidual out;
    out.mean01 = s01 / static_cast<double>(n01.size());
    out.mean10 = s10 / static_cast<double>(n10.size());
    out.mean = 0.5 * (out.mean01 + out.mean10);
    out.r01_norm = ScalarField(w, h, std::move(n01));
    out.r10_norm = ScalarField(w, h, std::move(n10));
    return out;
}

}  // namespace usct
