#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "test_util.hpp"
#include "usct/grid.hpp"

using namespace usct;
using testutil::Rng;

namespace {

Image2D ramp_x(int w, int h) {
    std::vector<double> d(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) d[static_cast<std::size_t>(y) * w + x] = static_cast<double>(x) / (w - 1);
    return Image2D(w, h, std::move(d));
}

Image2D checkerboard(int w, int h) {
    std::vector<double> d(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) d[static_cast<std::size_t>(y) * w + x] = (x + y) % 2;
    return Image2D(w, h, std::move(d));
}

}  // namespace

TEST_CASE("bilinear_sample hits stored values at grid nodes") {
    Rng rng(11);
    const Image2D img = testutil::random_image(7, 6, rng);
    CHECK(bilinear_sample(img, 3.0, 5.0) == img(3, 5));
    CHECK(bilinear_sample(img, 0.0, 0.0) == img(0, 0));
    CHECK(bilinear_sample(img, 6.0, 5.0) == img(6, 5));
}

TEST_CASE("bilinear_sample interpolates midpoints linearly") {
    std::vector<double> d = {0.0, 1.0, 0.0, 1.0};
    const Image2D img(2, 2, std::move(d));
    CHECK(bilinear_sample(img, 0.5, 0.0) == doctest::Approx(0.5));
    CHECK(bilinear_sample(img, 0.5, 1.0) == doctest::Approx(0.5));
}

TEST_CASE("bilinear_sample clamps to the border") {
    Rng rng(12);
    const Image2D img = testutil::random_image(5, 5, rng);
    CHECK(bilinear_sample(img, -2.5, 0.0) == img(0, 0));
    CHECK(bilinear_sample(img, 100.0, 2.0) == img(4, 2));
    CHECK_THROWS_AS(bilinear_sample(img, std::nan(""), 0.0), std::invalid_argument);
}

TEST_CASE("warp with zero flow is the identity, bit for bit") {
    Rng rng(13);
    const Image2D img = testutil::random_image(17, 13, rng);
    const FlowField zero(17, 13);
    CHECK(warp(img, zero) == img);
}

TEST_CASE("warp inverts an integer translation on the interior") {
    Rng rng(14);
    const int w = 24, h = 18, t = 3;
    const Image2D i0 = testutil::random_image(w, h, rng);
    // i1 = i0 shifted right by t: i1(x) = i0(x - t)
    std::vector<double> d(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            d[static_cast<std::size_t>(y) * w + x] = i0(std::clamp(x - t, 0, w - 1), y);
    const Image2D i1(w, h, std::move(d));
    const Image2D back = warp(i1, testutil::constant_flow(w, h, t, 0));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w - t; ++x) CHECK(back(x, y) == doctest::Approx(i0(x, y)));
}

TEST_CASE("warp of a ramp under half-pixel flow matches the analytic ramp") {
    const int w = 16, h = 8;
    const Image2D img = ramp_x(w, h);
    const Image2D out = warp(img, testutil::constant_flow(w, h, 0.5, 0.0));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w - 1; ++x)
            CHECK(out(x, y) == doctest::Approx((x + 0.5) / (w - 1)).epsilon(1e-6));
}

TEST_CASE("warp rejects mismatched dimensions") {
    Rng rng(15);
    const Image2D img = testutil::random_image(8, 8, rng);
    CHECK_THROWS_AS(warp(img, FlowField(9, 8)), std::invalid_argument);
}

TEST_CASE("warp_nearest moves a single pixel against the flow direction") {
    std::vector<std::uint8_t> m(25, 0);
    m[2 * 5 + 3] = 1;  // true at (3,2)
    const Mask2D mask(5, 5, std::move(m));

    CHECK(warp_nearest(mask, FlowField(5, 5)) == mask);

    // backward sampling: out(x) = mask(x+1), so the pixel appears at x-1
    const Mask2D moved = warp_nearest(mask, testutil::constant_flow(5, 5, 1, 0));
    CHECK(moved.at(2, 2));
    CHECK(moved.count_true() == 1);

    const Mask2D gone = warp_nearest(mask, testutil::constant_flow(5, 5, 100, 0));
    CHECK(gone.count_true() == 0);
}

TEST_CASE("compose with zero first field returns the second exactly") {
    Rng rng(16);
    const FlowField g = testutil::smooth_flow(12, 10, 2.0, rng);
    CHECK(compose(FlowField(12, 10), g) == g);
}

TEST_CASE("compose adds constant fields") {
    const FlowField f = testutil::constant_flow(9, 9, 1.5, -0.5);
    const FlowField g = testutil::constant_flow(9, 9, 0.25, 2.0);
    const FlowField fg = compose(f, g);
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 9; ++x) {
            CHECK(fg.dx(x, y) == doctest::Approx(1.75));
            CHECK(fg.dy(x, y) == doctest::Approx(1.5));
        }
}

TEST_CASE("compose substitutes positions in a linear field") {
    const int w = 16, h = 8;
    std::vector<double> gx(static_cast<std::size_t>(w) * h), gy(gx.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) gx[static_cast<std::size_t>(y) * w + x] = 0.1 * x;
    const FlowField f = testutil::constant_flow(w, h, 1.0, 0.0);
    const FlowField g(w, h, std::move(gx), std::move(gy));
    const FlowField fg = compose(f, g);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w - 2; ++x)  // interior: sampling g at x+1 must not clamp
            CHECK(fg.dx(x, y) == doctest::Approx(1.0 + 0.1 * (x + 1)).epsilon(1e-9));
}

TEST_CASE("gradient of a constant image vanishes") {
    const Image2D img(10, 10, 0.37);
    const GradientField g = gradient(img);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) {
            CHECK(g.gx(x, y) == 0.0);
            CHECK(g.gy(x, y) == 0.0);
        }
}

TEST_CASE("gradient of a ramp is its slope in the interior") {
    const int w = 12, h = 6;
    const GradientField g = gradient(ramp_x(w, h));
    for (int y = 0; y < h; ++y)
        for (int x = 1; x < w - 1; ++x) CHECK(g.gx(x, y) == doctest::Approx(1.0 / (w - 1)).epsilon(1e-12));
}

TEST_CASE("gradient of a checkerboard: zero central differences, one-sided borders") {
    const GradientField g = gradient(checkerboard(4, 4));
    for (int y = 0; y < 4; ++y) {
        for (int x = 1; x < 3; ++x) CHECK(g.gx(x, y) == 0.0);
        CHECK(std::abs(g.gx(0, y)) == 1.0);
        CHECK(std::abs(g.gx(3, y)) == 1.0);
    }
}

TEST_CASE("jacobian determinant closed forms") {
    const int w = 12, h = 12;

    SUBCASE("zero flow") {
        const ScalarField det = jacobian_det(FlowField(w, h));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) CHECK(det(x, y) == doctest::Approx(1.0));
        CHECK(folding_ratio(FlowField(w, h)) == 0.0);
    }

    SUBCASE("contracting field folds everywhere") {
        std::vector<double> dx(static_cast<std::size_t>(w) * h), dy(dx.size(), 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) dx[static_cast<std::size_t>(y) * w + x] = -2.0 * x;
        const FlowField f(w, h, std::move(dx), std::move(dy));
        const ScalarField det = jacobian_det(f);
        for (int y = 1; y < h - 1; ++y)
            for (int x = 1; x < w - 1; ++x) CHECK(det(x, y) == doctest::Approx(-1.0));
        CHECK(folding_ratio(f) == doctest::Approx(1.0));
    }

    SUBCASE("expanding field does not fold") {
        std::vector<double> dx(static_cast<std::size_t>(w) * h), dy(dx.size(), 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) dx[static_cast<std::size_t>(y) * w + x] = 0.5 * x;
        const FlowField f(w, h, std::move(dx), std::move(dy));
        const ScalarField det = jacobian_det(f);
        for (int y = 1; y < h - 1; ++y)
            for (int x = 1; x < w - 1; ++x) CHECK(det(x, y) == doctest::Approx(1.5));
        CHECK(folding_ratio(f) == 0.0);
    }
}

TEST_CASE("scaled constant fields never fold") {
    for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0})
        CHECK(folding_ratio(testutil::constant_flow(10, 10, alpha * 5.0, alpha * -3.0)) == 0.0);
}

TEST_CASE("fb_residual of exact inverse constants is zero") {
    const auto r = fb_residual(testutil::constant_flow(8, 8, 2.0, 0.0), testutil::constant_flow(8, 8, -2.0, 0.0));
    CHECK(r.mean == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("fb_residual of equal constants doubles the magnitude") {
    const double t = 1.25;
    const auto r = fb_residual(testutil::constant_flow(8, 8, t, 0.0), testutil::constant_flow(8, 8, t, 0.0));
    CHECK(r.mean == doctest::Approx(2.0 * t).epsilon(1e-9));
}

TEST_CASE("fb_residual of an affine pair with its analytic inverse") {
    const int w = 22, h = 10;
    std::vector<double> f01x(static_cast<std::size_t>(w) * h), f01y(f01x.size(), 0.0);
    std::vector<double> f10x(f01x.size()), f10y(f01x.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            f01x[static_cast<std::size_t>(y) * w + x] = 0.1 * x;
            f10x[static_cast<std::size_t>(y) * w + x] = -0.1 * x / 1.1;
        }
    const FlowField f01(w, h, std::move(f01x), std::move(f01y));
    const FlowField f10(w, h, std::move(f10x), std::move(f10y));
    const auto r = fb_residual(f01, f10);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (1.1 * x <= w - 1) CHECK(r.r01_norm(x, y) < 1e-6);
}

TEST_CASE("fb_residual rejects mismatched dimensions") {
    CHECK_THROWS_AS(fb_residual(FlowField(4, 4), FlowField(5, 4)), std::invalid_argument);
}

TEST_CASE("compose is associative within tolerance") {
    SUBCASE("constant fields are exact") {
        const FlowField f = testutil::constant_flow(16, 16, 1.0, -2.0);
        const FlowField g = testutil::constant_flow(16, 16, -0.5, 0.25);
        const FlowField h = testutil::constant_flow(16, 16, 2.0, 1.0);
        CHECK(testutil::max_abs_diff(compose(compose(f, g), h), compose(f, compose(g, h))) < 1e-4);
    }
    SUBCASE("smooth fields stay within 0.05 px") {
        Rng rng(77);
        for (int trial = 0; trial < 5; ++trial) {
            const FlowField f = testutil::smooth_flow(48, 40, 2.5, rng);
            const FlowField g = testutil::smooth_flow(48, 40, 2.0, rng);
            const FlowField h = testutil::smooth_flow(48, 40, 1.5, rng);
            CHECK(testutil::max_abs_diff(compose(compose(f, g), h), compose(f, compose(g, h))) < 0.05);
        }
    }
}

TEST_CASE("warp and warp_nearest agree on thresholded images under integer flow") {
    Rng rng(21);
    const int w = 20, h = 20;
    const Image2D img = testutil::random_image(w, h, rng);
    std::vector<std::uint8_t> m(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) m[i] = img[i] > 0.5 ? 1 : 0;
    const Mask2D mask(w, h, std::move(m));

    const FlowField f = testutil::constant_flow(w, h, 2, -1);
    const Image2D wi = warp(img, f);
    const Mask2D wm = warp_nearest(mask, f);
    const Mask2D valid = warp_valid_mask(f);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (valid.at(x, y)) CHECK((wi(x, y) > 0.5) == wm.at(x, y));
}
