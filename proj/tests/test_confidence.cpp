#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "usct/confidence.hpp"
#include "usct/errors.hpp"

using namespace usct;
using testutil::Rng;

namespace {

// Independent oracle: dense solve of the vertical 1D chain with Dirichlet ends
// (top = 1, bottom = 0) by Gaussian elimination on the tridiagonal system.
std::vector<double> chain_solve(const std::vector<double>& attenuated_column, double beta) {
    const int h = static_cast<int>(attenuated_column.size());
    const int n = h - 2;
    std::vector<double> sub(n), diag(n), sup(n), rhs(n, 0.0);
    auto wv = [&](int y0, int y1) {
        return std::exp(-beta * std::abs(attenuated_column[y0] - attenuated_column[y1])) + 1e-6;
    };
    for (int i = 0; i < n; ++i) {
        const int y = i + 1;
        const double wn = wv(y, y - 1), ws = wv(y, y + 1);
        diag[i] = wn + ws;
        sub[i] = (i > 0) ? -wn : 0.0;
        sup[i] = (i < n - 1) ? -ws : 0.0;
        if (i == 0) rhs[i] = wn;
    }
    for (int i = 1; i < n; ++i) {
        const double f = sub[i] / diag[i - 1];
        diag[i] -= f * sup[i - 1];
        rhs[i] -= f * rhs[i - 1];
    }
    std::vector<double> c(n);
    c[n - 1] = rhs[n - 1] / diag[n - 1];
    for (int i = n - 2; i >= 0; --i) c[i] = (rhs[i] - sup[i] * c[i + 1]) / diag[i];
    std::vector<double> full(h);
    full[0] = 1.0;
    full[h - 1] = 0.0;
    for (int i = 0; i < n; ++i) full[i + 1] = c[i];
    return full;
}

// Relative residual of the returned map against an independently assembled
// lattice (interior node equations; boundary rows enter through c itself).
double recompute_residual(const Image2D& img, const ConfidenceMap& c, const ConfidenceParams& p) {
    const int w = img.width(), h = img.height();
    std::vector<double> g(img.size());
    for (int y = 0; y < h; ++y) {
        const double att = std::exp(-p.alpha * static_cast<double>(y) / (h - 1));
        for (int x = 0; x < w; ++x) g[static_cast<std::size_t>(y) * w + x] = img(x, y) * att;
    }
    auto wgt = [&](int x0, int y0, int x1, int y1) {
        double scale = 1.0;
        if (y0 == y1)
            scale = p.gamma;
        else if (x0 != x1)
            scale = p.gamma / std::sqrt(2.0);
        return scale * (std::exp(-p.beta * std::abs(g[static_cast<std::size_t>(y0) * w + x0] -
                                                    g[static_cast<std::size_t>(y1) * w + x1])) +
                        1e-6);
    };
    double rr = 0.0, bb = 0.0;
    for (int y = 1; y < h - 1; ++y)
        for (int x = 0; x < w; ++x) {
            double net = 0.0;
            double bv = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                    const double wij = wgt(x, y, nx, ny);
                    net += wij * (c(x, y) - c(nx, ny));
                    if (ny == 0) bv += wij;
                }
            rr += net * net;
            bb += bv * bv;
        }
    return std::sqrt(rr) / std::sqrt(bb);
}

}  // namespace

TEST_CASE("confidence boundary rows are exact") {
    Rng rng(31);
    const Image2D img = testutil::random_image(24, 20, rng);
    const ConfidenceMap c = confidence(img);
    for (int x = 0; x < 24; ++x) {
        CHECK(c(x, 0) == 1.0);
        CHECK(c(x, 19) == 0.0);
    }
}

TEST_CASE("uniform image matches the dense 1D chain solve per column") {
    const int w = 32, h = 40;
    const Image2D img(w, h, 0.6);
    ConfidenceParams p;
    double resid = 0.0;
    const ConfidenceMap c = confidence(img, p, &resid);
    CHECK(resid <= p.cg_tol);

    std::vector<double> col(h);
    for (int y = 0; y < h; ++y) col[y] = 0.6 * std::exp(-p.alpha * static_cast<double>(y) / (h - 1));
    const std::vector<double> oracle = chain_solve(col, p.beta);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) CHECK(c(x, y) == doctest::Approx(oracle[y]).epsilon(1e-5));

    for (int y = 0; y < h; ++y)
        for (int x = 1; x < w; ++x) CHECK(std::abs(c(x, y) - c(0, y)) < 1e-6);
}

TEST_CASE("confidence values stay in [0,1]") {
    Rng rng(32);
    for (int trial = 0; trial < 50; ++trial) {
        const Image2D img = testutil::random_image(16, 14, rng);
        const ConfidenceMap c = confidence(img);
        for (std::size_t i = 0; i < c.size(); ++i) {
            CHECK(c[i] >= 0.0);
            CHECK(c[i] <= 1.0);
        }
    }
}

TEST_CASE("confidence decays monotonically with depth on uniform images") {
    const Image2D uni(20, 30, 0.4);
    const ConfidenceMap c = confidence(uni);
    for (int x = 0; x < 20; ++x)
        for (int y = 0; y + 1 < 30; ++y) CHECK(c(x, y + 1) <= c(x, y) + 1e-6);
}

TEST_CASE("solver residual meets the tolerance on textured images") {
    Rng rng(33);
    ConfidenceParams p;
    for (int trial = 0; trial < 3; ++trial) {
        const Image2D img = testutil::random_image(48, 42, rng);
        double resid = 0.0;
        const ConfidenceMap c = confidence(img, p, &resid);
        CHECK(resid <= p.cg_tol);
        CHECK(recompute_residual(img, c, p) <= 5.0 * p.cg_tol);
    }
}

TEST_CASE("jacobi preconditioner path reaches the same solution") {
    const int w = 24, h = 22;
    std::vector<double> d(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            d[static_cast<std::size_t>(y) * w + x] =
                0.5 + 0.3 * std::sin(0.4 * x) * std::cos(0.3 * y);
    const Image2D img(w, h, std::move(d));
    ConfidenceParams pj;
    pj.multigrid_precond = false;
    const ConfidenceMap a = confidence(img, pj);
    const ConfidenceMap b = confidence(img, ConfidenceParams{});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-4);
}

TEST_CASE("confidence_pair applies the solver per frame") {
    Rng rng(35);
    const Image2D i0 = testutil::random_image(20, 18, rng);
    const Image2D i1 = testutil::random_image(20, 18, rng);
    const auto [c0, c0_again] = confidence_pair(i0, i0);
    for (std::size_t i = 0; i < c0.size(); ++i) CHECK(c0[i] == c0_again[i]);

    const auto [a, b] = confidence_pair(i0, i1);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
    CHECK(diff > 0.0);
}

TEST_CASE("intensity scaling preserves the boundary rows") {
    Rng rng(36);
    const Image2D img = testutil::random_image(16, 16, rng);
    std::vector<double> scaled(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) scaled[i] = 0.5 * img[i];
    const ConfidenceMap c = confidence(Image2D(16, 16, std::move(scaled)));
    for (int x = 0; x < 16; ++x) {
        CHECK(c(x, 0) == 1.0);
        CHECK(c(x, 15) == 0.0);
    }
}

TEST_CASE("height below three rows is rejected") {
    CHECK_THROWS_AS(confidence(Image2D(8, 2, 0.5)), std::invalid_argument);
}

TEST_CASE("non-convergence raises SolverFailure with the residual") {
    Rng rng(37);
    const Image2D img = testutil::random_image(32, 32, rng);
    ConfidenceParams p;
    p.cg_max_iters = 1;
    p.cg_tol = 1e-14;
    p.multigrid_precond = false;
    CHECK_THROWS_AS(confidence(img, p), SolverFailure);
}
