#include "usct/confidence.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "usct/errors.hpp"

namespace usct {

void ConfidenceParams::validate() const {
    detail::require(alpha >= 0 && beta >= 0, "confidence: alpha and beta must be non-negative");
    detail::require(gamma > 0 && gamma <= 1, "confidence: gamma must lie in (0, 1]");
    detail::require(cg_tol > 0, "confidence: cg_tol must be positive");
    detail::require(cg_max_iters >= 1, "confidence: cg_max_iters must be >= 1");
}

namespace {

// 9-point stencil stored per offset, row-major offsets:
//   0:(-1,-1) 1:(0,-1) 2:(1,-1)
//   3:(-1, 0) 4:(0, 0) 5:(1, 0)
//   6:(-1, 1) 7:(0, 1) 8:(1, 1)
struct StencilGrid {
    int w = 0, h = 0;
    std::array<std::vector<double>, 9> a;

    void init(int width, int height) {
        w = width;
        h = height;
        for (auto& plane : a) plane.assign(static_cast<std::size_t>(w) * h, 0.0);
    }
    std::size_t n() const { return static_cast<std::size_t>(w) * h; }
};

constexpr int kOffX[9] = {-1, 0, 1, -1, 0, 1, -1, 0, 1};
constexpr int kOffY[9] = {-1, -1, -1, 0, 0, 0, 1, 1, 1};

void stencil_matvec(const StencilGrid& s, const std::vector<double>& x, std::vector<double>& y) {
    y.assign(x.size(), 0.0);
    for (int j = 0; j < s.h; ++j) {
        const std::size_t row = static_cast<std::size_t>(j) * s.w;
        for (int i = 0; i < s.w; ++i) {
            const std::size_t p = row + i;
            double acc = s.a[4][p] * x[p];
            for (int k = 0; k < 9; ++k) {
                if (k == 4) continue;
                const double c = s.a[k][p];
                if (c == 0.0) continue;
                acc += c * x[p + static_cast<std::ptrdiff_t>(kOffY[k]) * s.w + kOffX[k]];
            }
            y[p] = acc;
        }
    }
}

struct MgLevel {
    StencilGrid A;
    std::vector<double> inv_diag;
    std::vector<double> r, z, tmp, resid, cr, cz;
    std::unique_ptr<MgLevel> coarse;
    // dense factorization on the coarsest level
    std::vector<double> dense;
    int dn = 0;
};

// Bilinear interpolation parents of fine index f along one axis. Coarse node I
// sits at fine 2I; out-of-range parents are clamped and merged so constants
// are reproduced exactly at the edges.
int axis_parents(int f, int cn, int* idx, double* wgt) {
    if (f % 2 == 0) {
        idx[0] = std::min(f / 2, cn - 1);
        wgt[0] = 1.0;
        return 1;
    }
    const int lo = std::min((f - 1) / 2, cn - 1);
    const int hi = std::min((f + 1) / 2, cn - 1);
    if (lo == hi) {
        idx[0] = lo;
        wgt[0] = 1.0;
        return 1;
    }
    idx[0] = lo;
    wgt[0] = 0.5;
    idx[1] = hi;
    wgt[1] = 0.5;
    return 2;
}

std::unique_ptr<MgLevel> build_hierarchy(StencilGrid fine) {
    auto level = std::make_unique<MgLevel>();
    level->A = std::move(fine);
    const StencilGrid& A = level->A;

    level->inv_diag.resize(A.n());
    for (std::size_t p = 0; p < A.n(); ++p) level->inv_diag[p] = 1.0 / A.a[4][p];

    if (std::min(A.w, A.h) <= 6 || A.n() <= 64) {
        // dense Cholesky-free Gaussian elimination on the coarsest level
        const int n = static_cast<int>(A.n());
        level->dn = n;
        level->dense.assign(static_cast<std::size_t>(n) * n, 0.0);
        for (int j = 0; j < A.h; ++j)
            for (int i = 0; i < A.w; ++i) {
                const int p = j * A.w + i;
                for (int k = 0; k < 9; ++k) {
                    const int qi = i + kOffX[k], qj = j + kOffY[k];
                    if (qi < 0 || qi >= A.w || qj < 0 || qj >= A.h) continue;
                    level->dense[static_cast<std::size_t>(p) * n + (qj * A.w + qi)] = A.a[k][p];
                }
            }
        return level;
    }

    const int cw = (A.w + 1) / 2, chh = (A.h + 1) / 2;
    StencilGrid C;
    C.init(cw, chh);

    int xi[2], yi[2];
    double xw[2], yw[2];
    for (int J = 0; J < chh; ++J)
        for (int I = 0; I < cw; ++I) {
            for (int dj = -1; dj <= 1; ++dj) {
                const int fj = 2 * J + dj;
                if (fj < 0 || fj >= A.h) continue;
                for (int di = -1; di <= 1; ++di) {
                    const int fi = 2 * I + di;
                    if (fi < 0 || fi >= A.w) continue;
                    const double pw = (di == 0 ? 1.0 : 0.5) * (dj == 0 ? 1.0 : 0.5);
                    const std::size_t fp = static_cast<std::size_t>(fj) * A.w + fi;
                    for (int k = 0; k < 9; ++k) {
                        const double av = A.a[k][fp];
                        if (av == 0.0) continue;
                        const int gi = fi + kOffX[k], gj = fj + kOffY[k];
                        if (gi < 0 || gi >= A.w || gj < 0 || gj >= A.h) continue;
                        const int nx = axis_parents(gi, cw, xi, xw);
                        const int ny = axis_parents(gj, chh, yi, yw);
                        for (int b = 0; b < ny; ++b)
                            for (int a2 = 0; a2 < nx; ++a2) {
                                const int dI = xi[a2] - I, dJ = yi[b] - J;
                                if (dI < -1 || dI > 1 || dJ < -1 || dJ > 1) continue;
                                const int off = (dJ + 1) * 3 + (dI + 1);
                                C.a[off][static_cast<std::size_t>(J) * cw + I] += pw * av * xw[a2] * yw[b];
                            }
                    }
                }
            }
        }

    level->coarse = build_hierarchy(std::move(C));
    return level;
}

void restrict_full(const MgLevel& fine, const std::vector<double>& r, std::vector<double>& rc) {
    const StencilGrid& A = fine.A;
    const StencilGrid& C = fine.coarse->A;
    rc.assign(C.n(), 0.0);
    int xi[2], yi[2];
    double xw[2], yw[2];
    for (int fj = 0; fj < A.h; ++fj)
        for (int fi = 0; fi < A.w; ++fi) {
            const double v = r[static_cast<std::size_t>(fj) * A.w + fi];
            if (v == 0.0) continue;
            const int nx = axis_parents(fi, C.w, xi, xw);
            const int ny = axis_parents(fj, C.h, yi, yw);
            for (int b = 0; b < ny; ++b)
                for (int a2 = 0; a2 < nx; ++a2)
                    rc[static_cast<std::size_t>(yi[b]) * C.w + xi[a2]] += v * xw[a2] * yw[b];
        }
}

void prolong_add(const MgLevel& fine, const std::vector<double>& zc, std::vector<double>& z) {
    const StencilGrid& A = fine.A;
    const StencilGrid& C = fine.coarse->A;
    int xi[2], yi[2];
    double xw[2], yw[2];
    for (int fj = 0; fj < A.h; ++fj)
        for (int fi = 0; fi < A.w; ++fi) {
            const int nx = axis_parents(fi, C.w, xi, xw);
            const int ny = axis_parents(fj, C.h, yi, yw);
            double acc = 0.0;
            for (int b = 0; b < ny; ++b)
                for (int a2 = 0; a2 < nx; ++a2)
                    acc += zc[static_cast<std::size_t>(yi[b]) * C.w + xi[a2]] * xw[a2] * yw[b];
            z[static_cast<std::size_t>(fj) * A.w + fi] += acc;
        }
}

void dense_solve(const MgLevel& lvl, const std::vector<double>& b, std::vector<double>& x) {
    const int n = lvl.dn;
    std::vector<double> m = lvl.dense;  // small copies only
    x = b;
    for (int c = 0; c < n; ++c) {
        const double piv = m[static_cast<std::size_t>(c) * n + c];
        for (int r2 = c + 1; r2 < n; ++r2) {
            const double f = m[static_cast<std::size_t>(r2) * n + c] / piv;
            if (f == 0.0) continue;
            for (int k = c; k < n; ++k)
                m[static_cast<std::size_t>(r2) * n + k] -= f * m[static_cast<std::size_t>(c) * n + k];
            x[r2] -= f * x[c];
        }
    }
    for (int r2 = n - 1; r2 >= 0; --r2) {
        double acc = x[r2];
        for (int k = r2 + 1; k < n; ++k) acc -= m[static_cast<std::size_t>(r2) * n + k] * x[k];
        x[r2] = acc / m[static_cast<std::size_t>(r2) * n + r2];
    }
}

// One Gauss-Seidel sweep; `forward` fixes the node order so the pre/post pair
// stays a symmetric preconditioner.
void gs_sweep(const StencilGrid& A, const std::vector<double>& inv_diag, const std::vector<double>& r,
              std::vector<double>& z, bool forward) {
    const int w = A.w, h = A.h;
    const int jb = forward ? 0 : h - 1, je = forward ? h : -1, js = forward ? 1 : -1;
    for (int j = jb; j != je; j += js) {
        const int ib = forward ? 0 : w - 1, ie = forward ? w : -1;
        for (int i = ib; i != ie; i += js) {
            const std::size_t p = static_cast<std::size_t>(j) * w + i;
            double acc = r[p];
            for (int k = 0; k < 9; ++k) {
                if (k == 4) continue;
                const double c = A.a[k][p];
                if (c == 0.0) continue;
                acc -= c * z[p + static_cast<std::ptrdiff_t>(kOffY[k]) * w + kOffX[k]];
            }
            z[p] = acc * inv_diag[p];
        }
    }
}

void vcycle(MgLevel& lvl, const std::vector<double>& r, std::vector<double>& z) {
    if (!lvl.coarse) {
        dense_solve(lvl, r, z);
        return;
    }
    z.assign(r.size(), 0.0);
    gs_sweep(lvl.A, lvl.inv_diag, r, z, true);

    stencil_matvec(lvl.A, z, lvl.tmp);
    lvl.resid.resize(r.size());
    for (std::size_t p = 0; p < r.size(); ++p) lvl.resid[p] = r[p] - lvl.tmp[p];

    restrict_full(lvl, lvl.resid, lvl.cr);
    vcycle(*lvl.coarse, lvl.cr, lvl.cz);
    prolong_add(lvl, lvl.cz, z);

    gs_sweep(lvl.A, lvl.inv_diag, r, z, false);
}

}  // namespace

ConfidenceMap confidence(const Image2D& img, const ConfidenceParams& p, double* residual_out) {
    p.validate();
    const int w = img.width(), h = img.height();
    detail::require(h >= 3, "confidence: image height must be >= 3");

    // depth-attenuated intensities
    std::vector<double> g(img.size());
    for (int y = 0; y < h; ++y) {
        const double att = std::exp(-p.alpha * static_cast<double>(y) / (h - 1));
        for (int x = 0; x < w; ++x) g[static_cast<std::size_t>(y) * w + x] = img(x, y) * att;
    }

    const int hu = h - 2;  // unknown rows 1 .. h-2
    const double diag_scale = p.gamma / std::sqrt(2.0);
    // 1e-6 floor keeps the lattice connected when beta crushes an edge weight
    auto weight = [&](int x0, int y0, int x1, int y1, double scale) {
        const double d = std::abs(g[static_cast<std::size_t>(y0) * w + x0] -
                                  g[static_cast<std::size_t>(y1) * w + x1]);
        return scale * (std::exp(-p.beta * d) + 1e-6);
    };

    StencilGrid A;
    A.init(w, hu);
    std::vector<double> b(A.n(), 0.0);

    for (int ju = 0; ju < hu; ++ju) {
        const int y = ju + 1;
        for (int x = 0; x < w; ++x) {
            const std::size_t pidx = static_cast<std::size_t>(ju) * w + x;
            double diag = 0.0;
            auto add_edge = [&](int nx, int ny, double scale) {
                if (nx < 0 || nx >= w || ny < 0 || ny >= h) return;
                const double wij = weight(x, y, nx, ny, scale);
                diag += wij;
                if (ny == 0) {
                    b[pidx] += wij;  // top boundary, value 1
                } else if (ny == h - 1) {
                    // bottom boundary, value 0: diagonal only
                } else {
                    const int off = (ny - y + 1) * 3 + (nx - x + 1);
                    A.a[off][pidx] = -wij;
                }
            };
            add_edge(x - 1, y, p.gamma);
            add_edge(x + 1, y, p.gamma);
            add_edge(x, y - 1, 1.0);
            add_edge(x, y + 1, 1.0);
            add_edge(x - 1, y - 1, diag_scale);
            add_edge(x + 1, y - 1, diag_scale);
            add_edge(x - 1, y + 1, diag_scale);
            add_edge(x + 1, y + 1, diag_scale);
            A.a[4][pidx] = diag;
        }
    }

    double bnorm = 0.0;
    for (double v : b) bnorm += v * v;
    bnorm = std::sqrt(bnorm);
    if (bnorm == 0.0) bnorm = 1.0;

    auto hierarchy = build_hierarchy(std::move(A));
    MgLevel& top = *hierarchy;

    // initial guess: per-column vertical chain solve (Thomas algorithm)
    std::vector<double> x(top.A.n(), 0.0);
    {
        std::vector<double> low(hu), mid(hu), up(hu), rhs(hu);
        for (int cx = 0; cx < w; ++cx) {
            for (int ju = 0; ju < hu; ++ju) {
                const int y = ju + 1;
                const double wn = weight(cx, y, cx, y - 1, 1.0);
                const double ws = weight(cx, y, cx, y + 1, 1.0);
                mid[ju] = wn + ws;
                low[ju] = (ju > 0) ? -wn : 0.0;
                up[ju] = (ju < hu - 1) ? -ws : 0.0;
                rhs[ju] = (ju == 0) ? wn : 0.0;
            }
            for (int i = 1; i < hu; ++i) {
                const double f = low[i] / mid[i - 1];
                mid[i] -= f * up[i - 1];
                rhs[i] -= f * rhs[i - 1];
            }
            if (hu > 0) {
                rhs[hu - 1] /= mid[hu - 1];
                for (int i = hu - 2; i >= 0; --i) rhs[i] = (rhs[i] - up[i] * rhs[i + 1]) / mid[i];
            }
            for (int ju = 0; ju < hu; ++ju) x[static_cast<std::size_t>(ju) * w + cx] = rhs[ju];
        }
    }

    // preconditioned conjugate gradient
    std::vector<double> r(x.size()), z(x.size()), d(x.size()), Ad(x.size());
    stencil_matvec(top.A, x, Ad);
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = b[i] - Ad[i];

    auto rel_resid = [&]() {
        double s = 0.0;
        for (double v : r) s += v * v;
        const double rel = std::sqrt(s) / bnorm;
        if (!std::isfinite(rel)) throw SolverFailure("confidence: solver produced non-finite values", rel);
        return rel;
    };

    double rel = rel_resid();
    int iter = 0;
    if (rel > p.cg_tol) {
        if (top.coarse && p.multigrid_precond)
            vcycle(top, r, z);
        else
            for (std::size_t i = 0; i < r.size(); ++i) z[i] = top.inv_diag[i] * r[i];
        d = z;
        double rz = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) rz += r[i] * z[i];

        for (iter = 1; iter <= p.cg_max_iters; ++iter) {
            stencil_matvec(top.A, d, Ad);
            double dAd = 0.0;
            for (std::size_t i = 0; i < d.size(); ++i) dAd += d[i] * Ad[i];
            const double alpha = rz / dAd;
            for (std::size_t i = 0; i < x.size(); ++i) {
                x[i] += alpha * d[i];
                r[i] -= alpha * Ad[i];
            }
            rel = rel_resid();
            if (rel <= p.cg_tol) {
                // guard against recursive-residual drift
                stencil_matvec(top.A, x, Ad);
                for (std::size_t i = 0; i < x.size(); ++i) r[i] = b[i] - Ad[i];
                rel = rel_resid();
                if (rel <= p.cg_tol) break;
            }
            if (iter == p.cg_max_iters)
                throw SolverFailure("confidence: conjugate gradient did not converge", rel);

            if (top.coarse && p.multigrid_precond)
                vcycle(top, r, z);
            else
                for (std::size_t i = 0; i < r.size(); ++i) z[i] = top.inv_diag[i] * r[i];
            double rz_new = 0.0;
            for (std::size_t i = 0; i < r.size(); ++i) rz_new += r[i] * z[i];
            const double beta = rz_new / rz;
            rz = rz_new;
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = z[i] + beta * d[i];
        }
    }
    if (residual_out) *residual_out = rel;

    std::vector<double> out(img.size());
    for (int cx = 0; cx < w; ++cx) out[cx] = 1.0;
    for (int cx = 0; cx < w; ++cx) out[static_cast<std::size_t>(h - 1) * w + cx] = 0.0;
    for (int ju = 0; ju < hu; ++ju)
        for (int cx = 0; cx < w; ++cx)
            out[static_cast<std::size_t>(ju + 1) * w + cx] =
                std::clamp(x[static_cast<std::size_t>(ju) * w + cx], 0.0, 1.0);
    return ConfidenceMap(w, h, std::move(out));
}

std::pair<ConfidenceMap, ConfidenceMap> confidence_pair(const Image2D& i0, const Image2D& i1,
                                                        const ConfidenceParams& p) {
    return {confidence(i0, p), confidence(i1, p)};
}

}  // namespace usct
