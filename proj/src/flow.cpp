#include "usct/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "usct/errors.hpp"

namespace usct {

void EnergyWeights::validate() const {
    detail::require(lambda_flow >= 0 && lambda_photo >= 0 && lambda_reg >= 0,
                    "energy weights must be non-negative");
    detail::require(charbonnier_eps > 0, "charbonnier_eps must be positive");
    detail::require(edge_kappa >= 0, "edge_kappa must be non-negative");
    detail::require(fold_weight >= 0 && fold_weight <= 1, "fold_weight must lie in [0,1]");
}

void PyramidSpec::validate() const {
    detail::require(levels >= 1, "pyramid needs at least one level");
    detail::require(scale_factor == 2, "pyramid scale factor is fixed at 2");
    detail::require(blur_sigma > 0, "blur_sigma must be positive");
}

FeatureMap::FeatureMap(int width, int height, int channels, std::vector<double> data)
    : w_(width), h_(height), c_(channels), data_(std::move(data)) {
    detail::require(width >= 1 && height >= 1 && channels >= 1, "FeatureMap dimensions must be positive");
    detail::require(data_.size() == static_cast<std::size_t>(width) * height * channels,
                    "FeatureMap data size does not match dimensions");
}

CorrelationVolume::CorrelationVolume(int width, int height, int radius, std::vector<double> scores)
    : w_(width), h_(height), r_(radius), scores_(std::move(scores)) {
    detail::require(width >= 1 && height >= 1 && radius >= 1, "CorrelationVolume dimensions must be positive");
    const std::size_t n = static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1);
    detail::require(scores_.size() == static_cast<std::size_t>(width) * height * n,
                    "CorrelationVolume score count does not match dimensions");
    detail::require(detail::all_finite(scores_), "CorrelationVolume scores must be finite");
}

// ---------------------------------------------------------------------------
// plane-level helpers (no type construction in hot loops)
// ---------------------------------------------------------------------------

namespace {

inline double clampd(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

inline double sample_plane(const std::vector<double>& d, int w, int h, double x, double y) {
    x = clampd(x, 0.0, w - 1.0);
    y = clampd(y, 0.0, h - 1.0);
    const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double fx = x - x0, fy = y - y0;
    const double* row0 = d.data() + static_cast<std::size_t>(y0) * w;
    const double* row1 = d.data() + static_cast<std::size_t>(y1) * w;
    const double top = row0[x0] + fx * (row0[x1] - row0[x0]);
    const double bot = row1[x0] + fx * (row1[x1] - row1[x0]);
    return top + fy * (bot - top);
}

void plane_diff(const std::vector<double>& u, int w, int h, std::vector<double>& ux, std::vector<double>& uy) {
    ux.resize(u.size());
    uy.resize(u.size());
    for (int y = 0; y < h; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            const std::size_t i = row + x;
            ux[i] = (x == 0)       ? u[i + 1] - u[i]
                    : (x == w - 1) ? u[i] - u[i - 1]
                                   : 0.5 * (u[i + 1] - u[i - 1]);
            uy[i] = (y == 0)       ? u[i + w] - u[i]
                    : (y == h - 1) ? u[i] - u[i - w]
                                   : 0.5 * (u[i + w] - u[i - w]);
        }
    }
}

// Adjoint of plane_diff's x stencil: accumulates s(p) * d(Dx u(p))/du into g.
void scatter_dx(const std::vector<double>& s, int w, int h, std::vector<double>& g) {
    for (int y = 0; y < h; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            const double v = s[row + x];
            if (v == 0.0) continue;
            if (x == 0) {
                g[row + 1] += v;
                g[row] -= v;
            } else if (x == w - 1) {
                g[row + x] += v;
                g[row + x - 1] -= v;
            } else {
                g[row + x + 1] += 0.5 * v;
                g[row + x - 1] -= 0.5 * v;
            }
        }
    }
}

void scatter_dy(const std::vector<double>& s, int w, int h, std::vector<double>& g) {
    for (int y = 0; y < h; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            const double v = s[row + x];
            if (v == 0.0) continue;
            const std::size_t i = row + x;
            if (y == 0) {
                g[i + w] += v;
                g[i] -= v;
            } else if (y == h - 1) {
                g[i] += v;
                g[i - w] -= v;
            } else {
                g[i + w] += 0.5 * v;
                g[i - w] -= 0.5 * v;
            }
        }
    }
}

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

struct EnergyScratch {
    std::vector<double> warped, ax, ay, bx, by;
};

// Exact energy of the field (dx, dy); edge weight wgt = exp(-kappa |grad i0|).
EnergyTerms energy_planes(const std::vector<double>& i0, const std::vector<double>& i1, int w, int h,
                          const std::vector<double>& dx, const std::vector<double>& dy,
                          const std::vector<double>& conf, const std::vector<double>& wgt,
                          const EnergyWeights& ew, const std::vector<double>* pdx,
                          const std::vector<double>* pdy, EnergyScratch& sc) {
    const std::size_t n = i0.size();
    const double eps2 = ew.charbonnier_eps * ew.charbonnier_eps;

    sc.warped.resize(n);
    double photo = 0.0;
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++i) {
            const double v = sample_plane(i1, w, h, x + dx[i], y + dy[i]);
            sc.warped[i] = v;
            const double r = v - i0[i];
            photo += conf[i] * std::sqrt(r * r + eps2);
        }
    photo /= static_cast<double>(n);

    plane_diff(dx, w, h, sc.ax, sc.ay);
    plane_diff(dy, w, h, sc.bx, sc.by);
    double smooth = 0.0;
    for (i = 0; i < n; ++i)
        smooth += wgt[i] * (std::abs(sc.ax[i]) + std::abs(sc.ay[i]) + std::abs(sc.bx[i]) + std::abs(sc.by[i]));
    smooth /= static_cast<double>(n);

    double fold = 0.0;
    if (w >= 3 && h >= 3) {
        std::size_t ni = 0;
        for (int y = 1; y < h - 1; ++y) {
            const std::size_t row = static_cast<std::size_t>(y) * w;
            for (int x = 1; x < w - 1; ++x, ++ni) {
                const std::size_t p = row + x;
                const double J = (1.0 + sc.ax[p]) * (1.0 + sc.by[p]) - sc.ay[p] * sc.bx[p];
                const double hinge = J < 0.0 ? -J : 0.0;
                fold += hinge * hinge;
            }
        }
        fold /= static_cast<double>(ni);
    }

    double flow = 0.0;
    if (pdx) {
        for (i = 0; i < n; ++i) flow += std::abs(dx[i] - (*pdx)[i]) + std::abs(dy[i] - (*pdy)[i]);
        flow /= static_cast<double>(n);
    }

    EnergyTerms t;
    t.photo = photo;
    t.smooth = smooth;
    t.fold = fold;
    t.flow = flow;
    t.total = ew.lambda_photo * photo +
              ew.lambda_reg * ((1.0 - ew.fold_weight) * smooth + ew.fold_weight * fold) +
              ew.lambda_flow * flow;
    return t;
}

std::vector<double> edge_weights(const std::vector<double>& i0, int w, int h, double kappa) {
    std::vector<double> gx, gy;
    plane_diff(i0, w, h, gx, gy);
    std::vector<double> wgt(i0.size());
    for (std::size_t i = 0; i < wgt.size(); ++i) wgt[i] = std::exp(-kappa * std::hypot(gx[i], gy[i]));
    return wgt;
}

}  // namespace

// ---------------------------------------------------------------------------
// pyramid
// ---------------------------------------------------------------------------

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + radius];
    }
    for (auto& v : k) v /= sum;
    return k;
}

std::vector<double> blur_plane(const std::vector<double>& d, int w, int h, const std::vector<double>& k) {
    const int radius = (static_cast<int>(k.size()) - 1) / 2;
    std::vector<double> tmp(d.size()), out(d.size());
    for (int y = 0; y < h; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t)
                acc += k[t + radius] * d[row + std::clamp(x + t, 0, w - 1)];
            tmp[row + x] = acc;
        }
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t)
                acc += k[t + radius] * tmp[static_cast<std::size_t>(std::clamp(y + t, 0, h - 1)) * w + x];
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    return out;
}

// Grid-center aligned half sampling keeps the pyramid mirror-equivariant.
inline double grid_offset(int fine, int coarse) {
    return 0.5 * ((fine - 1) - 2.0 * (coarse - 1));
}

Image2D decimate(const Image2D& img, const std::vector<double>& kernel) {
    const int w = img.width(), h = img.height();
    const int cw = (w + 1) / 2, ch = (h + 1) / 2;
    const std::vector<double> blurred = blur_plane(img.data(), w, h, kernel);
    const double ox = grid_offset(w, cw), oy = grid_offset(h, ch);
    std::vector<double> out(static_cast<std::size_t>(cw) * ch);
    std::size_t i = 0;
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x, ++i) out[i] = sample_plane(blurred, w, h, 2.0 * x + ox, 2.0 * y + oy);
    return Image2D(cw, ch, std::move(out));
}

FlowField downsample_flow(const FlowField& f) {
    const int w = f.width(), h = f.height();
    const int cw = (w + 1) / 2, ch = (h + 1) / 2;
    const double ox = grid_offset(w, cw), oy = grid_offset(h, ch);
    std::vector<double> dx(static_cast<std::size_t>(cw) * ch), dy(dx.size());
    std::size_t i = 0;
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x, ++i) {
            dx[i] = 0.5 * sample_plane(f.dx_plane(), w, h, 2.0 * x + ox, 2.0 * y + oy);
            dy[i] = 0.5 * sample_plane(f.dy_plane(), w, h, 2.0 * x + ox, 2.0 * y + oy);
        }
    return FlowField(cw, ch, std::move(dx), std::move(dy));
}

FlowField upsample_flow(const FlowField& f, int fw, int fh) {
    const int cw = f.width(), ch = f.height();
    const double ox = grid_offset(fw, cw), oy = grid_offset(fh, ch);
    std::vector<double> dx(static_cast<std::size_t>(fw) * fh), dy(dx.size());
    std::size_t i = 0;
    for (int y = 0; y < fh; ++y)
        for (int x = 0; x < fw; ++x, ++i) {
            dx[i] = 2.0 * sample_plane(f.dx_plane(), cw, ch, (x - ox) / 2.0, (y - oy) / 2.0);
            dy[i] = 2.0 * sample_plane(f.dy_plane(), cw, ch, (x - ox) / 2.0, (y - oy) / 2.0);
        }
    return FlowField(fw, fh, std::move(dx), std::move(dy));
}

}  // namespace

std::vector<Image2D> build_pyramid(const Image2D& img, const PyramidSpec& spec) {
    spec.validate();
    int w = img.width(), h = img.height();
    for (int l = 1; l < spec.levels; ++l) {
        w = (w + 1) / 2;
        h = (h + 1) / 2;
    }
    detail::require(w >= 8 && h >= 8, "build_pyramid: coarsest level would fall below 8x8");

    std::vector<Image2D> pyr;
    pyr.reserve(spec.levels);
    pyr.push_back(img);
    const std::vector<double> kernel = gaussian_kernel(spec.blur_sigma);
    for (int l = 1; l < spec.levels; ++l) pyr.push_back(decimate(pyr.back(), kernel));
    return pyr;
}

// ---------------------------------------------------------------------------
// features and correlation
// ---------------------------------------------------------------------------

FeatureMap extract_features(const Image2D& img, int patch_radius) {
    detail::require(patch_radius >= 1, "extract_features: patch_radius must be >= 1");
    const int w = img.width(), h = img.height();
    const int side = 2 * patch_radius + 1;
    const int c = 2 * side * side;

    std::vector<double> gx, gy;
    plane_diff(img.data(), w, h, gx, gy);
    std::vector<double> gm(gx.size());
    for (std::size_t i = 0; i < gm.size(); ++i) gm[i] = std::hypot(gx[i], gy[i]);

    std::vector<double> data(static_cast<std::size_t>(w) * h * c);
    std::vector<double> v(c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int k = 0;
            for (int dy = -patch_radius; dy <= patch_radius; ++dy) {
                const int sy = std::clamp(y + dy, 0, h - 1);
                for (int dx = -patch_radius; dx <= patch_radius; ++dx) {
                    const int sx = std::clamp(x + dx, 0, w - 1);
                    v[k] = img(sx, sy);
                    v[k + side * side] = gm[static_cast<std::size_t>(sy) * w + sx];
                    ++k;
                }
            }
            double mean = 0.0;
            for (int j = 0; j < c; ++j) mean += v[j];
            mean /= c;
            double ss = 0.0;
            for (int j = 0; j < c; ++j) {
                v[j] -= mean;
                ss += v[j] * v[j];
            }
            double* out = data.data() + (static_cast<std::size_t>(y) * w + x) * c;
            if (ss / c < 1e-8) {
                std::fill(out, out + c, 0.0);
            } else {
                const double inv = 1.0 / std::sqrt(ss);
                for (int j = 0; j < c; ++j) out[j] = v[j] * inv;
            }
        }
    return FeatureMap(w, h, c, std::move(data));
}

CorrelationVolume correlation_volume(const FeatureMap& f0, const FeatureMap& f1, int radius) {
    detail::require(f0.same_shape(f1) && f0.channels() == f1.channels(),
                    "correlation_volume: feature map shapes differ");
    detail::require(radius >= 1, "correlation_volume: radius must be >= 1");
    const int w = f0.width(), h = f0.height(), c = f0.channels();
    const int side = 2 * radius + 1;
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));

    std::vector<double> scores(static_cast<std::size_t>(w) * h * side * side);
    std::size_t out = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double* a = f0.at(x, y);
            for (int dy = -radius; dy <= radius; ++dy) {
                const int sy = std::clamp(y + dy, 0, h - 1);
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int sx = std::clamp(x + dx, 0, w - 1);
                    const double* b = f1.at(sx, sy);
                    double dot = 0.0;
                    for (int j = 0; j < c; ++j) dot += a[j] * b[j];
                    scores[out++] = dot * inv_sqrt_c;
                }
            }
        }
    return CorrelationVolume(w, h, radius, std::move(scores));
}

FlowField coarse_match(const CorrelationVolume& cv) {
    const int w = cv.width(), h = cv.height(), r = cv.radius();
    const int side = cv.window();
    const int cells = side * side;

    // scan order: by displacement norm, then (dx, dy) lexicographic
    std::vector<int> order(cells);
    std::iota(order.begin(), order.end(), 0);
    auto disp = [&](int idx) {
        return std::pair<int, int>(idx % side - r, idx / side - r);
    };
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const auto [ax, ay] = disp(a);
        const auto [bx, by] = disp(b);
        const int na = ax * ax + ay * ay, nb = bx * bx + by * by;
        if (na != nb) return na < nb;
        if (ax != bx) return ax < bx;
        return ay < by;
    });

    std::vector<double> dx(static_cast<std::size_t>(w) * h), dy(dx.size());
    const std::vector<double>& s = cv.scores();
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++i) {
            const double* cell = s.data() + i * cells;
            int best = order[0];
            double best_score = cell[best];
            for (int k = 1; k < cells; ++k)
                if (cell[order[k]] > best_score) {
                    best = order[k];
                    best_score = cell[best];
                }
            auto [bx, by] = disp(best);
            double sub_x = 0.0, sub_y = 0.0;
            if (bx > -r && bx < r) {
                const double sm = cell[best - 1], sp = cell[best + 1];
                const double den = sp + sm - 2.0 * best_score;
                if (den < -1e-12) sub_x = clampd((sm - sp) / (2.0 * den), -0.5, 0.5);
            }
            if (by > -r && by < r) {
                const double sm = cell[best - side], sp = cell[best + side];
                const double den = sp + sm - 2.0 * best_score;
                if (den < -1e-12) sub_y = clampd((sm - sp) / (2.0 * den), -0.5, 0.5);
            }
            dx[i] = bx + sub_x;
            dy[i] = by + sub_y;
        }
    return FlowField(w, h, std::move(dx), std::move(dy));
}

// ---------------------------------------------------------------------------
// energy and refinement
// ---------------------------------------------------------------------------

EnergyTerms energy(const Image2D& i0, const Image2D& i1, const FlowField& f, const ConfidenceMap& conf,
                   const EnergyWeights& w, const FlowField* pseudo) {
    w.validate();
    detail::require(i0.same_shape(i1) && i0.same_shape(f) && i0.same_shape(conf),
                    "energy: input shapes differ");
    if (pseudo) detail::require(i0.same_shape(*pseudo), "energy: pseudo flow shape differs");
    const std::vector<double> wgt = edge_weights(i0.data(), i0.width(), i0.height(), w.edge_kappa);
    EnergyScratch sc;
    return energy_planes(i0.data(), i1.data(), i0.width(), i0.height(), f.dx_plane(), f.dy_plane(),
                         conf.data(), wgt, w, pseudo ? &pseudo->dx_plane() : nullptr,
                         pseudo ? &pseudo->dy_plane() : nullptr, sc);
}

FlowField refine_variational(const Image2D& i0, const Image2D& i1, const FlowField& f_init,
                             const ConfidenceMap& conf, const EnergyWeights& ew, const FlowField* pseudo,
                             int iters, double step) {
    ew.validate();
    detail::require(i0.same_shape(i1) && i0.same_shape(f_init) && i0.same_shape(conf),
                    "refine_variational: input shapes differ");
    if (pseudo) detail::require(i0.same_shape(*pseudo), "refine_variational: pseudo flow shape differs");
    detail::require(iters >= 1, "refine_variational: iters must be >= 1");
    detail::require(step > 0, "refine_variational: step must be positive");

    const int w = i0.width(), h = i0.height();
    const std::size_t n = i0.size();
    const double eps2 = ew.charbonnier_eps * ew.charbonnier_eps;

    const std::vector<double>& p0 = i0.data();
    const std::vector<double>& p1 = i1.data();
    const std::vector<double>& cw = conf.data();
    const std::vector<double> wgt = edge_weights(p0, w, h, ew.edge_kappa);
    const std::vector<double>* pdx = pseudo ? &pseudo->dx_plane() : nullptr;
    const std::vector<double>* pdy = pseudo ? &pseudo->dy_plane() : nullptr;

    std::vector<double> g1x, g1y;
    plane_diff(p1, w, h, g1x, g1y);

    std::vector<double> dx = f_init.dx_plane(), dy = f_init.dy_plane();
    EnergyScratch sc;
    EnergyTerms cur = energy_planes(p0, p1, w, h, dx, dy, cw, wgt, ew, pdx, pdy, sc);
    std::vector<double> best_dx = dx, best_dy = dy;
    double best_total = cur.total;

    // linearization state per outer warp
    std::vector<double> warp0(n), gx0(n), gy0(n), lin_dx(n), lin_dy(n);
    std::vector<double> grad_x(n), grad_y(n), scat(n);
    std::vector<double> ax, ay, bx, by;
    std::vector<double> trial_x(n), trial_y(n);

    const int outers = 3;
    const int inner_base = std::max(1, iters / outers);
    double cur_step = step;
    bool stalled = false;

    const double c_photo = ew.lambda_photo;
    const double c_smooth = ew.lambda_reg * (1.0 - ew.fold_weight);
    const double c_fold = ew.lambda_reg * ew.fold_weight;

    for (int outer = 0; outer < outers && !stalled; ++outer) {
        std::size_t i = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x, ++i) {
                const double sx = x + dx[i], sy = y + dy[i];
                warp0[i] = sample_plane(p1, w, h, sx, sy);
                gx0[i] = sample_plane(g1x, w, h, sx, sy);
                gy0[i] = sample_plane(g1y, w, h, sx, sy);
            }
        lin_dx = dx;
        lin_dy = dy;

        const int inner = (outer == outers - 1) ? std::max(1, iters - inner_base * (outers - 1)) : inner_base;
        for (int it = 0; it < inner && !stalled; ++it) {
            std::fill(grad_x.begin(), grad_x.end(), 0.0);
            std::fill(grad_y.begin(), grad_y.end(), 0.0);

            // photometric term, linearized residual (gradient scaled by N)
            for (i = 0; i < n; ++i) {
                const double r = warp0[i] + gx0[i] * (dx[i] - lin_dx[i]) + gy0[i] * (dy[i] - lin_dy[i]) - p0[i];
                const double rho = c_photo * cw[i] * r / std::sqrt(r * r + eps2);
                grad_x[i] += rho * gx0[i];
                grad_y[i] += rho * gy0[i];
            }

            // edge-aware smoothness (L1 of flow gradients)
            plane_diff(dx, w, h, ax, ay);
            plane_diff(dy, w, h, bx, by);
            for (i = 0; i < n; ++i) scat[i] = c_smooth * wgt[i] * sgn(ax[i]);
            scatter_dx(scat, w, h, grad_x);
            for (i = 0; i < n; ++i) scat[i] = c_smooth * wgt[i] * sgn(ay[i]);
            scatter_dy(scat, w, h, grad_x);
            for (i = 0; i < n; ++i) scat[i] = c_smooth * wgt[i] * sgn(bx[i]);
            scatter_dx(scat, w, h, grad_y);
            for (i = 0; i < n; ++i) scat[i] = c_smooth * wgt[i] * sgn(by[i]);
            scatter_dy(scat, w, h, grad_y);

            // folding penalty on interior Jacobians
            if (w >= 3 && h >= 3 && c_fold > 0.0) {
                const double scale = c_fold * static_cast<double>(n) /
                                     (static_cast<double>(w - 2) * static_cast<double>(h - 2));
                for (int y = 1; y < h - 1; ++y) {
                    const std::size_t row = static_cast<std::size_t>(y) * w;
                    for (int x = 1; x < w - 1; ++x) {
                        const std::size_t p = row + x;
                        const double J = (1.0 + ax[p]) * (1.0 + by[p]) - ay[p] * bx[p];
                        if (J >= 0.0) continue;
                        const double dJ = scale * 2.0 * J;  // d(hinge^2)/dJ = -2 hinge = 2J
                        // dJ/d(ax) = 1+by ; dJ/d(by) = 1+ax ; dJ/d(ay) = -bx ; dJ/d(bx) = -ay
                        const double ca = dJ * (1.0 + by[p]);
                        const double cb = dJ * (1.0 + ax[p]);
                        const double cay = -dJ * bx[p];
                        const double cbx = -dJ * ay[p];
                        grad_x[p + 1] += 0.5 * ca;
                        grad_x[p - 1] -= 0.5 * ca;
                        grad_x[p + w] += 0.5 * cay;
                        grad_x[p - w] -= 0.5 * cay;
                        grad_y[p + w] += 0.5 * cb;
                        grad_y[p - w] -= 0.5 * cb;
                        grad_y[p + 1] += 0.5 * cbx;
                        grad_y[p - 1] -= 0.5 * cbx;
                    }
                }
            }

            // distillation toward the pseudo label
            if (pdx) {
                for (i = 0; i < n; ++i) {
                    grad_x[i] += ew.lambda_flow * sgn(dx[i] - (*pdx)[i]);
                    grad_y[i] += ew.lambda_flow * sgn(dy[i] - (*pdy)[i]);
                }
            }

            // backtracking step on the true energy
            int halvings = 0;
            for (;;) {
                for (i = 0; i < n; ++i) {
                    trial_x[i] = dx[i] - cur_step * grad_x[i];
                    trial_y[i] = dy[i] - cur_step * grad_y[i];
                }
                const EnergyTerms trial = energy_planes(p0, p1, w, h, trial_x, trial_y, cw, wgt, ew, pdx, pdy, sc);
                if (trial.total <= cur.total) {
                    dx.swap(trial_x);
                    dy.swap(trial_y);
                    cur = trial;
                    if (cur.total < best_total) {
                        best_total = cur.total;
                        best_dx = dx;
                        best_dy = dy;
                    }
                    break;
                }
                if (++halvings > 5) {
                    stalled = true;
                    break;
                }
                cur_step *= 0.5;
            }
        }
    }
    return FlowField(w, h, std::move(best_dx), std::move(best_dy));
}

// ---------------------------------------------------------------------------
// coarse-to-fine estimation
// ---------------------------------------------------------------------------

namespace {

constexpr int kCorrelationRadius = 4;
constexpr int kFeaturePatchRadius = 3;

int iters_for_level(int level, int levels) {
    if (level == 0) return 12;            // full resolution: polish only
    if (level == levels - 1) return 45;   // coarsest: largest corrections
    return 30;
}

constexpr double kLevelStep = 8.0;

FlowField estimate_one_direction(const std::vector<Image2D>& pyr_a, const std::vector<Image2D>& pyr_b,
                                 const std::vector<Image2D>& pyr_conf_a, const EnergyWeights& w,
                                 const FlowField* pseudo) {
    const int levels = static_cast<int>(pyr_a.size());

    std::vector<FlowField> pseudo_pyr;
    if (pseudo) {
        pseudo_pyr.reserve(levels);
        pseudo_pyr.push_back(*pseudo);
        for (int l = 1; l < levels; ++l) pseudo_pyr.push_back(downsample_flow(pseudo_pyr.back()));
    }

    FlowField f;
    for (int l = levels - 1; l >= 0; --l) {
        const Image2D& a = pyr_a[l];
        const Image2D& b = pyr_b[l];
        if (l == levels - 1) {
            const FeatureMap fa = extract_features(a, kFeaturePatchRadius);
            const FeatureMap fb = extract_features(b, kFeaturePatchRadius);
            f = coarse_match(correlation_volume(fa, fb, kCorrelationRadius));
        } else {
            f = upsample_flow(f, a.width(), a.height());
        }
        const FlowField* pl = pseudo ? &pseudo_pyr[l] : nullptr;
        f = refine_variational(a, b, f, pyr_conf_a[l], w, pl, iters_for_level(l, levels), kLevelStep);
    }
    return f;
}

}  // namespace

std::pair<FlowField, FlowField> estimate_bidirectional(const Image2D& i0, const Image2D& i1,
                                                       const ConfidenceMap& conf0, const ConfidenceMap& conf1,
                                                       const PyramidSpec& spec, const EnergyWeights& w,
                                                       const FlowField* pseudo01, const FlowField* pseudo10) {
    detail::require(i0.same_shape(i1) && i0.same_shape(conf0) && i0.same_shape(conf1),
                    "estimate_bidirectional: input shapes differ");
    w.validate();

    const auto pyr0 = build_pyramid(i0, spec);
    const auto pyr1 = build_pyramid(i1, spec);
    const auto pyr_c0 = build_pyramid(conf0, spec);
    const auto pyr_c1 = build_pyramid(conf1, spec);

    FlowField f01 = estimate_one_direction(pyr0, pyr1, pyr_c0, w, pseudo01);
    FlowField f10 = estimate_one_direction(pyr1, pyr0, pyr_c1, w, pseudo10);
    return {std::move(f01), std::move(f10)};
}

std::pair<FlowField, FlowField> bisect_pair(const Image2D& i0, const Image2D& imid, const Image2D& i1,
                                            const ConfidenceMap& conf0, const ConfidenceMap& confmid,
                                            const ConfidenceMap& conf1, const PyramidSpec& spec,
                                            const EnergyWeights& w) {
    detail::require(i0.same_shape(imid) && i0.same_shape(i1), "bisect_pair: frame shapes differ");
    auto [f_0m, f_m0] = estimate_bidirectional(i0, imid, conf0, confmid, spec, w);
    auto [f_m1, f_1m] = estimate_bidirectional(imid, i1, confmid, conf1, spec, w);
    return {compose(f_0m, f_m1), compose(f_1m, f_m0)};
}

FlowField bisect_candidate(const Image2D& i0, const Image2D& imid, const Image2D& i1,
                           const ConfidenceMap& conf0, const ConfidenceMap& confmid, const ConfidenceMap& conf1,
                           const PyramidSpec& spec, const EnergyWeights& w) {
    auto [f_0m, f_m0] = estimate_bidirectional(i0, imid, conf0, confmid, spec, w);
    auto [f_m1, f_m1_back] = estimate_bidirectional(imid, i1, confmid, conf1, spec, w);
    (void)f_m0;
    (void)f_m1_back;
    return compose(f_0m, f_m1);
}

double warp_misalignment(const Image2D& i0, const Image2D& i1, const FlowField& f) {
    detail::require(i0.same_shape(i1) && i0.same_shape(f), "warp_misalignment: shapes differ");
    const int w = i0.width(), h = i0.height();
    double sum = 0.0;
    std::size_t count = 0;
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++i) {
            const double sx = x + f.dx_plane()[i], sy = y + f.dy_plane()[i];
            if (sx < 0.0 || sx > w - 1 || sy < 0.0 || sy > h - 1) continue;
            sum += std::abs(sample_plane(i1.data(), w, h, sx, sy) - i0.data()[i]);
            ++count;
        }
    if (count == 0) return std::numeric_limits<double>::infinity();
    return sum / static_cast<double>(count);
}

std::pair<int, FlowField> select_candidate(const Image2D& i0, const Image2D& i1,
                                           const std::vector<FlowField>& candidates) {
    detail::require(!candidates.empty(), "select_candidate: candidate list is empty");
    int best = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        const double cost = warp_misalignment(i0, i1, candidates[k]);
        if (cost < best_cost) {
            best = static_cast<int>(k);
            best_cost = cost;
        }
    }
    return {best, candidates[static_cast<std::size_t>(best)]};
}

}  // namespace usct
