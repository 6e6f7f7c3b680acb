#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace usct {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline bool operator==(const Vec2& a, const Vec2& b) { return a.x == b.x && a.y == b.y; }

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
class Grid {
  public:
    Grid() = default;
    Grid(int width, int height, T fill = T{})
        : w_(width), h_(height), data_(static_cast<std::size_t>(width) * height, fill) {
        require(width >= 1 && height >= 1, "grid dimensions must be positive");
    }
    Grid(int width, int height, std::vector<T> data) : w_(width), h_(height), data_(std::move(data)) {
        require(width >= 1 && height >= 1, "grid dimensions must be positive");
        require(data_.size() == static_cast<std::size_t>(width) * height,
                "grid data size does not match dimensions");
    }

    int width() const { return w_; }
    int height() const { return h_; }
    std::size_t size() const { return data_.size(); }

    const T& operator()(int x, int y) const {
        assert(x >= 0 && x < w_ && y >= 0 && y < h_);
        return data_[static_cast<std::size_t>(y) * w_ + x];
    }
    const T& operator[](std::size_t i) const { return data_[i]; }
    const std::vector<T>& data() const { return data_; }

    template <typename G>
    bool same_shape(const G& other) const {
        return w_ == other.width() && h_ == other.height();
    }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.w_ == b.w_ && a.h_ == b.h_ && a.data_ == b.data_;
    }

  protected:
    int w_ = 0;
    int h_ = 0;
    std::vector<T> data_;
};

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace detail

/// Normalized intensity grid. Values are clamped into [0,1] at construction;
/// non-finite input is rejected.
class Image2D : public detail::Grid<double> {
  public:
    Image2D() = default;
    Image2D(int width, int height, double fill = 0.0) : Grid(width, height, fill) {
        detail::require(width >= 2 && height >= 2, "Image2D requires width, height >= 2");
        detail::require(std::isfinite(fill), "Image2D values must be finite");
        for (auto& v : data_) v = std::clamp(v, 0.0, 1.0);
    }
    Image2D(int width, int height, std::vector<double> data) : Grid(width, height, std::move(data)) {
        detail::require(width >= 2 && height >= 2, "Image2D requires width, height >= 2");
        detail::require(detail::all_finite(data_), "Image2D values must be finite");
        for (auto& v : data_) v = std::clamp(v, 0.0, 1.0);
    }
};

/// Per-pixel ultrasound reliability in [0,1]; produced by the random-walk solver
/// but any [0,1] image works as a weight map.
using ConfidenceMap = Image2D;

/// Unclamped finite scalar grid (distances, determinants, residual norms).
class ScalarField : public detail::Grid<double> {
  public:
    ScalarField() = default;
    ScalarField(int width, int height, double fill = 0.0) : Grid(width, height, fill) {
        detail::require(std::isfinite(fill), "ScalarField values must be finite");
    }
    ScalarField(int width, int height, std::vector<double> data) : Grid(width, height, std::move(data)) {
        detail::require(detail::all_finite(data_), "ScalarField values must be finite");
    }
};

class Mask2D : public detail::Grid<std::uint8_t> {
  public:
    Mask2D() = default;
    Mask2D(int width, int height, bool fill = false)
        : Grid(width, height, static_cast<std::uint8_t>(fill ? 1 : 0)) {}
    Mask2D(int width, int height, std::vector<std::uint8_t> data) : Grid(width, height, std::move(data)) {
        for (auto& v : data_) v = v ? 1 : 0;
    }

    bool at(int x, int y) const { return (*this)(x, y) != 0; }
    std::size_t count_true() const {
        std::size_t n = 0;
        for (auto v : data_) n += v;
        return n;
    }
};

/// Dense displacement field in pixels, stored as separate x/y planes.
/// Convention: a field F_ab satisfies warp(I_b, F_ab) ~ I_a, i.e. the vector at x
/// points from x into frame b's coordinates (backward warping).
class FlowField {
  public:
    FlowField() = default;
    FlowField(int width, int height, Vec2 fill = {})
        : w_(width), h_(height),
          dx_(static_cast<std::size_t>(width) * height, fill.x),
          dy_(static_cast<std::size_t>(width) * height, fill.y) {
        detail::require(width >= 1 && height >= 1, "FlowField dimensions must be positive");
        detail::require(std::isfinite(fill.x) && std::isfinite(fill.y), "FlowField components must be finite");
    }
    FlowField(int width, int height, std::vector<double> dx, std::vector<double> dy)
        : w_(width), h_(height), dx_(std::move(dx)), dy_(std::move(dy)) {
        detail::require(width >= 1 && height >= 1, "FlowField dimensions must be positive");
        const auto n = static_cast<std::size_t>(width) * height;
        detail::require(dx_.size() == n && dy_.size() == n, "FlowField data size does not match dimensions");
        detail::require(detail::all_finite(dx_) && detail::all_finite(dy_),
                        "FlowField components must be finite");
    }

    int width() const { return w_; }
    int height() const { return h_; }
    std::size_t size() const { return dx_.size(); }

    double dx(int x, int y) const { return dx_[idx(x, y)]; }
    double dy(int x, int y) const { return dy_[idx(x, y)]; }
    Vec2 at(int x, int y) const { return {dx_[idx(x, y)], dy_[idx(x, y)]}; }

    const std::vector<double>& dx_plane() const { return dx_; }
    const std::vector<double>& dy_plane() const { return dy_; }

    template <typename G>
    bool same_shape(const G& other) const {
        return w_ == other.width() && h_ == other.height();
    }

    friend bool operator==(const FlowField& a, const FlowField& b) {
        return a.w_ == b.w_ && a.h_ == b.h_ && a.dx_ == b.dx_ && a.dy_ == b.dy_;
    }

  private:
    std::size_t idx(int x, int y) const {
        assert(x >= 0 && x < w_ && y >= 0 && y < h_);
        return static_cast<std::size_t>(y) * w_ + x;
    }
    int w_ = 0;
    int h_ = 0;
    std::vector<double> dx_;
    std::vector<double> dy_;
};

/// Per-pixel (d/dx, d/dy) pairs in intensity per pixel.
class GradientField {
  public:
    GradientField() = default;
    GradientField(int width, int height, std::vector<double> gx, std::vector<double> gy)
        : w_(width), h_(height), gx_(std::move(gx)), gy_(std::move(gy)) {
        detail::require(width >= 1 && height >= 1, "GradientField dimensions must be positive");
        const auto n = static_cast<std::size_t>(width) * height;
        detail::require(gx_.size() == n && gy_.size() == n, "GradientField data size does not match dimensions");
        detail::require(detail::all_finite(gx_) && detail::all_finite(gy_),
                        "GradientField components must be finite");
    }

    int width() const { return w_; }
    int height() const { return h_; }

    double gx(int x, int y) const { return gx_[idx(x, y)]; }
    double gy(int x, int y) const { return gy_[idx(x, y)]; }

    const std::vector<double>& gx_plane() const { return gx_; }
    const std::vector<double>& gy_plane() const { return gy_; }

    template <typename G>
    bool same_shape(const G& other) const {
        return w_ == other.width() && h_ == other.height();
    }

  private:
    std::size_t idx(int x, int y) const {
        assert(x >= 0 && x < w_ && y >= 0 && y < h_);
        return static_cast<std::size_t>(y) * w_ + x;
    }
    int w_ = 0;
    int h_ = 0;
    std::vector<double> gx_;
    std::vector<double> gy_;
};

}  // namespace usct
