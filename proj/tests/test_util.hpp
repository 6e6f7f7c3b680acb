#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "usct/types.hpp"

namespace testutil {

// small deterministic generator for test data (xorshift-style)
struct Rng {
    std::uint64_t s;
    explicit Rng(std::uint64_t seed) : s(seed * 2654435769u + 1) {}
    std::uint64_t next() {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        return s;
    }
    double uniform(double lo = 0.0, double hi = 1.0) {
        return lo + (hi - lo) * (static_cast<double>(next() >> 11) / 9007199254740992.0);
    }
};

inline usct::Image2D random_image(int w, int h, Rng& rng) {
    std::vector<double> d(static_cast<std::size_t>(w) * h);
    for (auto& v : d) v = rng.uniform();
    return usct::Image2D(w, h, std::move(d));
}

inline usct::FlowField constant_flow(int w, int h, double dx, double dy) {
    return usct::FlowField(w, h, usct::Vec2{dx, dy});
}

// smooth random field: low-frequency sinusoids tapered to zero at the borders
// so composed samples stay inside the grid
inline usct::FlowField smooth_flow(int w, int h, double amplitude, Rng& rng) {
    const double fx = rng.uniform(0.5, 1.2), fy = rng.uniform(0.5, 1.2);
    const double px = rng.uniform(0, 6.28), py = rng.uniform(0, 6.28);
    std::vector<double> dx(static_cast<std::size_t>(w) * h), dy(dx.size());
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++i) {
            const double u = 6.28318530717958647692 * x / w, v = 6.28318530717958647692 * y / h;
            const double taper = std::sin(3.14159265358979323846 * x / (w - 1)) *
                                 std::sin(3.14159265358979323846 * y / (h - 1));
            dx[i] = taper * amplitude * std::sin(fx * u + px) * std::cos(fy * v + py);
            dy[i] = taper * amplitude * std::cos(fx * u + py) * std::sin(fy * v + px);
        }
    return usct::FlowField(w, h, std::move(dx), std::move(dy));
}

inline double max_abs_diff(const usct::FlowField& a, const usct::FlowField& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.dx_plane()[i] - b.dx_plane()[i]));
        m = std::max(m, std::abs(a.dy_plane()[i] - b.dy_plane()[i]));
    }
    return m;
}

inline double mean_epe(const usct::FlowField& a, const usct::FlowField& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += std::hypot(a.dx_plane()[i] - b.dx_plane()[i], a.dy_plane()[i] - b.dy_plane()[i]);
    return acc / static_cast<double>(a.size());
}

inline double mean_mag(const usct::FlowField& f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) acc += std::hypot(f.dx_plane()[i], f.dy_plane()[i]);
    return acc / static_cast<double>(f.size());
}

}  // namespace testutil
