#include "usct/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "usct/errors.hpp"
#include "usct/grid.hpp"

namespace usct {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

// ---------------------------------------------------------------------------
// homogeneous transforms
// ---------------------------------------------------------------------------

HomTransform3D::HomTransform3D() : m_{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1} {}

HomTransform3D::HomTransform3D(const std::array<double, 16>& m) : m_(m) { validate(); }

void HomTransform3D::validate() const {
    for (double v : m_) detail::require(std::isfinite(v), "HomTransform3D entries must be finite");
    detail::require(std::abs(m_[12]) <= 1e-9 && std::abs(m_[13]) <= 1e-9 && std::abs(m_[14]) <= 1e-9 &&
                        std::abs(m_[15] - 1.0) <= 1e-9,
                    "HomTransform3D bottom row must be (0,0,0,1)");
    // R R^T = I within 1e-6 and det R = +1
    double det = 0.0;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            double dot = 0.0;
            for (int k = 0; k < 3; ++k) dot += at(r, k) * at(c, k);
            const double target = (r == c) ? 1.0 : 0.0;
            detail::require(std::abs(dot - target) <= 1e-6,
                            "HomTransform3D rotation block must be orthonormal");
        }
    det = at(0, 0) * (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) -
          at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
          at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
    detail::require(std::abs(det - 1.0) <= 1e-6, "HomTransform3D rotation must be proper (det +1)");
}

HomTransform3D HomTransform3D::inverse() const {
    std::array<double, 16> inv{};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) inv[static_cast<std::size_t>(r) * 4 + c] = at(c, r);
    for (int r = 0; r < 3; ++r) {
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) acc -= at(k, r) * at(k, 3);
        inv[static_cast<std::size_t>(r) * 4 + 3] = acc;
    }
    inv[15] = 1.0;
    return HomTransform3D(inv);
}

HomTransform3D operator*(const HomTransform3D& a, const HomTransform3D& b) {
    std::array<double, 16> m{};
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) acc += a.at(r, k) * b.at(k, c);
            m[static_cast<std::size_t>(r) * 4 + c] = acc;
        }
    return HomTransform3D(m);
}

HomTransform3D chain_calibration(const HomTransform3D& cTr, const HomTransform3D& uTr) {
    return cTr * uTr.inverse();
}

// ---------------------------------------------------------------------------
// in-plane rigid pose
// ---------------------------------------------------------------------------

RigidTransform2D RigidTransform2D::make(double tx, double ty, double theta) {
    detail::require(std::isfinite(tx) && std::isfinite(ty) && std::isfinite(theta),
                    "RigidTransform2D parameters must be finite");
    theta = std::remainder(theta, 2.0 * kPi);
    if (theta <= -kPi) theta += 2.0 * kPi;
    return RigidTransform2D{tx, ty, theta};
}

Vec2 RigidTransform2D::rotate(Vec2 v) const {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c * v.x - s * v.y, s * v.x + c * v.y};
}

Vec2 RigidTransform2D::map(Vec2 u, Vec2 center) const {
    const double c = std::cos(theta), s = std::sin(theta);
    const double rx = u.x - center.x, ry = u.y - center.y;
    return {c * rx - s * ry + center.x + tx, s * rx + c * ry + center.y + ty};
}

Vec2 RigidTransform2D::unmap(Vec2 x, Vec2 center) const {
    const double c = std::cos(theta), s = std::sin(theta);
    const double rx = x.x - center.x - tx, ry = x.y - center.y - ty;
    return {c * rx + s * ry + center.x, -s * rx + c * ry + center.y};
}

Image2D apply_rigid(const Image2D& img, const RigidTransform2D& t, Vec2 center) {
    const int w = img.width(), h = img.height();
    std::vector<double> out(img.size());
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++i) {
            const Vec2 src = t.unmap({static_cast<double>(x), static_cast<double>(y)}, center);
            out[i] = bilinear_sample(img, src.x, src.y);
        }
    return Image2D(w, h, std::move(out));
}

FlowField rigid_flow(const RigidTransform2D& t, Vec2 center, int width, int height) {
    std::vector<double> dx(static_cast<std::size_t>(width) * height), dy(dx.size());
    std::size_t i = 0;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x, ++i) {
            const Vec2 src = t.unmap({static_cast<double>(x), static_cast<double>(y)}, center);
            dx[i] = src.x - x;
            dy[i] = src.y - y;
        }
    return FlowField(width, height, std::move(dx), std::move(dy));
}

// ---------------------------------------------------------------------------
// LC2
// ---------------------------------------------------------------------------

void LC2Params::validate() const {
    detail::require(patch_radius >= 1, "LC2Params: patch_radius must be >= 1");
    detail::require(variance_floor > 0, "LC2Params: variance_floor must be positive");
    detail::require(tx_max >= 0 && ty_max >= 0 && theta_max >= 0, "LC2Params: bounds must be non-negative");
}

namespace {

// 3x3 symmetric solve with Tikhonov damping; returns false on breakdown.
bool solve3(double A[3][3], double rhs[3], double out[3]) {
    double m[3][4];
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) m[r][c] = A[r][c];
        m[r][r] += 1e-9;
        m[r][3] = rhs[r];
    }
    for (int c = 0; c < 3; ++c) {
        int piv = c;
        for (int r = c + 1; r < 3; ++r)
            if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
        if (std::abs(m[piv][c]) < 1e-30) return false;
        std::swap(m[piv], m[c]);
        for (int r = c + 1; r < 3; ++r) {
            const double f = m[r][c] / m[c][c];
            for (int k = c; k < 4; ++k) m[r][k] -= f * m[c][k];
        }
    }
    for (int r = 2; r >= 0; --r) {
        double acc = m[r][3];
        for (int k = r + 1; k < 3; ++k) acc -= m[r][k] * out[k];
        out[r] = acc / m[r][r];
    }
    return true;
}

}  // namespace

double lc2_similarity(const Image2D& us, const Image2D& ct, const Image2D& ct_grad, const LC2Params& p,
                      const Mask2D& region) {
    p.validate();
    detail::require(us.same_shape(ct) && us.same_shape(ct_grad) && us.same_shape(region),
                    "lc2_similarity: input shapes differ");
    detail::require(region.count_true() > 0, "lc2_similarity: region is empty");

    const int w = us.width(), h = us.height(), r = p.patch_radius;
    double score_sum = 0.0, weight_sum = 0.0;

    for (int cy = 0; cy < h; ++cy)
        for (int cx = 0; cx < w; ++cx) {
            if (!region.at(cx, cy)) continue;
            const int x0 = std::max(0, cx - r), x1 = std::min(w - 1, cx + r);
            const int y0 = std::max(0, cy - r), y1 = std::min(h - 1, cy + r);
            double sp = 0, sg = 0, su = 0, spp = 0, sgg = 0, suu = 0, spg = 0, sup = 0, sug = 0;
            int n = 0;
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double pv = ct(x, y), gv = ct_grad(x, y), uv = us(x, y);
                    sp += pv;
                    sg += gv;
                    su += uv;
                    spp += pv * pv;
                    sgg += gv * gv;
                    suu += uv * uv;
                    spg += pv * gv;
                    sup += uv * pv;
                    sug += uv * gv;
                    ++n;
                }
            const double inv_n = 1.0 / n;
            const double var_u = suu * inv_n - (su * inv_n) * (su * inv_n);
            if (var_u < p.variance_floor) continue;

            double A[3][3] = {{spp, spg, sp}, {spg, sgg, sg}, {sp, sg, static_cast<double>(n)}};
            double rhs[3] = {sup, sug, su};
            double c[3];
            if (!solve3(A, rhs, c)) continue;

            // Var(residual) = E[r^2] - E[r]^2 via the accumulated moments
            const double sr = su - c[0] * sp - c[1] * sg - c[2] * n;
            const double srr = suu + c[0] * c[0] * spp + c[1] * c[1] * sgg + c[2] * c[2] * n +
                               2.0 * c[0] * c[1] * spg + 2.0 * c[0] * c[2] * sp + 2.0 * c[1] * c[2] * sg -
                               2.0 * c[0] * sup - 2.0 * c[1] * sug - 2.0 * c[2] * su;
            const double var_r = std::max(0.0, srr * inv_n - (sr * inv_n) * (sr * inv_n));
            const double local = std::clamp(1.0 - var_r / var_u, 0.0, 1.0);
            score_sum += var_u * local;
            weight_sum += var_u;
        }

    if (weight_sum <= 0.0)
        throw UndefinedSimilarity("lc2_similarity: every patch fell below the variance floor");
    return score_sum / weight_sum;
}

// ---------------------------------------------------------------------------
// rigid refinement
// ---------------------------------------------------------------------------

namespace {

constexpr int kRegionStride = 3;

// Patch centers where the resampled ultrasound is valid under the pose.
Mask2D pose_region(const RigidTransform2D& t, Vec2 center, int w, int h) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(w) * h, 0);
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++i) {
            if (x % kRegionStride != 0 || y % kRegionStride != 0) continue;
            const Vec2 src = t.unmap({static_cast<double>(x), static_cast<double>(y)}, center);
            if (src.x >= 0 && src.x <= w - 1 && src.y >= 0 && src.y <= h - 1) m[i] = 1;
        }
    return Mask2D(w, h, std::move(m));
}

struct PoseScorer {
    const Image2D& us;
    const Image2D& ct;
    const Image2D& ct_grad;
    const LC2Params& p;
    Vec2 center;

    // returns -inf when the similarity is undefined for this pose
    double operator()(const RigidTransform2D& t) const {
        const Mask2D region = pose_region(t, center, us.width(), us.height());
        if (region.count_true() == 0) return -std::numeric_limits<double>::infinity();
        const Image2D moved = apply_rigid(us, t, center);
        try {
            return lc2_similarity(moved, ct, ct_grad, p, region);
        } catch (const UndefinedSimilarity&) {
            return -std::numeric_limits<double>::infinity();
        }
    }
};

std::vector<double> grid_axis(double maxv, double step) {
    std::vector<double> vals;
    if (maxv <= 0.0) {
        vals.push_back(0.0);
        return vals;
    }
    for (double v = -maxv; v < maxv + 1e-12; v += step) vals.push_back(v);
    if (std::abs(vals.back() - maxv) > 1e-9) vals.push_back(maxv);
    return vals;
}

}  // namespace

std::pair<RigidTransform2D, double> rigid_refine(const Image2D& us, const Image2D& ct_slice,
                                                 const RigidTransform2D& init, const LC2Params& p) {
    p.validate();
    detail::require(us.same_shape(ct_slice), "rigid_refine: image shapes differ");
    detail::require(std::abs(init.tx) <= p.tx_max + 1e-9 && std::abs(init.ty) <= p.ty_max + 1e-9 &&
                        std::abs(init.theta) <= p.theta_max + 1e-9,
                    "rigid_refine: init pose lies outside the search bounds");

    const Vec2 center{(us.width() - 1) / 2.0, (us.height() - 1) / 2.0};
    const Image2D ct_grad = gradient_magnitude(ct_slice);
    const PoseScorer score{us, ct_slice, ct_grad, p, center};

    auto clamp_pose = [&](RigidTransform2D t) {
        t.tx = std::clamp(t.tx, -p.tx_max, p.tx_max);
        t.ty = std::clamp(t.ty, -p.ty_max, p.ty_max);
        t.theta = std::clamp(t.theta, -p.theta_max, p.theta_max);
        return t;
    };

    RigidTransform2D best = init;
    double best_score = score(init);

    const auto xs = grid_axis(p.tx_max, 2.0);
    const auto ys = grid_axis(p.ty_max, 2.0);
    const auto ts = grid_axis(p.theta_max, kPi / 180.0);
    for (double th : ts)
        for (double gy : ys)
            for (double gx : xs) {
                const RigidTransform2D t{gx, gy, th};
                const double s = score(t);
                if (s > best_score) {
                    best = t;
                    best_score = s;
                }
            }
    if (!std::isfinite(best_score))
        throw RegistrationFailure("rigid_refine: similarity undefined over the whole search grid");

    if (p.tx_max == 0.0 && p.ty_max == 0.0 && p.theta_max == 0.0)
        return {init, best_score};

    // Nelder-Mead from the best grid node
    struct Vertex {
        RigidTransform2D t;
        double s;
    };
    auto eval = [&](RigidTransform2D t) { return Vertex{t, score(clamp_pose(t))}; };

    std::vector<Vertex> simplex;
    simplex.push_back({best, best_score});
    const double steps[3] = {1.0, 1.0, 0.5 * kPi / 180.0};
    for (int k = 0; k < 3; ++k) {
        RigidTransform2D t = best;
        if (k == 0) t.tx += steps[0];
        if (k == 1) t.ty += steps[1];
        if (k == 2) t.theta += steps[2];
        simplex.push_back(eval(clamp_pose(t)));
    }

    auto centroid_of = [&](int skip) {
        RigidTransform2D c{0, 0, 0};
        for (int k = 0; k < 4; ++k) {
            if (k == skip) continue;
            c.tx += simplex[k].t.tx / 3.0;
            c.ty += simplex[k].t.ty / 3.0;
            c.theta += simplex[k].t.theta / 3.0;
        }
        return c;
    };
    auto blend = [&](const RigidTransform2D& a, const RigidTransform2D& b, double fac) {
        return RigidTransform2D{a.tx + fac * (b.tx - a.tx), a.ty + fac * (b.ty - a.ty),
                                a.theta + fac * (b.theta - a.theta)};
    };

    for (int iter = 0; iter < 150; ++iter) {
        std::sort(simplex.begin(), simplex.end(), [](const Vertex& a, const Vertex& b) { return a.s > b.s; });
        const double spread_t = std::max({std::abs(simplex[0].t.tx - simplex[3].t.tx),
                                          std::abs(simplex[0].t.ty - simplex[3].t.ty),
                                          std::abs(simplex[1].t.tx - simplex[3].t.tx),
                                          std::abs(simplex[1].t.ty - simplex[3].t.ty)});
        const double spread_r = std::max(std::abs(simplex[0].t.theta - simplex[3].t.theta),
                                         std::abs(simplex[1].t.theta - simplex[3].t.theta));
        if (spread_t < 0.05 && spread_r < 0.05 * kPi / 180.0) break;

        const RigidTransform2D c = centroid_of(3);
        const Vertex refl = eval(clamp_pose(blend(c, simplex[3].t, -1.0)));
        if (refl.s > simplex[0].s) {
            const Vertex expd = eval(clamp_pose(blend(c, simplex[3].t, -2.0)));
            simplex[3] = (expd.s > refl.s) ? expd : refl;
        } else if (refl.s > simplex[2].s) {
            simplex[3] = refl;
        } else {
            const Vertex contr = eval(clamp_pose(blend(c, simplex[3].t, 0.5)));
            if (contr.s > simplex[3].s) {
                simplex[3] = contr;
            } else {
                for (int k = 1; k < 4; ++k) {
                    const RigidTransform2D shr = blend(simplex[0].t, simplex[k].t, 0.5);
                    simplex[k] = eval(clamp_pose(shr));
                }
            }
        }
    }
    std::sort(simplex.begin(), simplex.end(), [](const Vertex& a, const Vertex& b) { return a.s > b.s; });
    if (simplex[0].s > best_score) {
        best = clamp_pose(simplex[0].t);
        best_score = simplex[0].s;
    }
    return {RigidTransform2D::make(best.tx, best.ty, best.theta), best_score};
}

}  // namespace usct
