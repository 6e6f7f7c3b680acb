#pragma once

#include <array>
#include <utility>

#include "usct/types.hpp"

namespace usct {

/// 4x4 homogeneous rigid transform (orthonormal rotation block, mm translation).
/// Row-major storage.
class HomTransform3D {
  public:
    HomTransform3D();  // identity
    explicit HomTransform3D(const std::array<double, 16>& m);

    const std::array<double, 16>& m() const { return m_; }
    double at(int r, int c) const { return m_[static_cast<std::size_t>(r) * 4 + c]; }

    HomTransform3D inverse() const;  // rigid inverse [R^T | -R^T t]
    friend HomTransform3D operator*(const HomTransform3D& a, const HomTransform3D& b);

  private:
    void validate() const;
    std::array<double, 16> m_;
};

/// ^C T_U = ^C T_R * (^U T_R)^-1.
HomTransform3D chain_calibration(const HomTransform3D& cTr, const HomTransform3D& uTr);

/// In-plane rigid pose. Interpreted as the forward (content) map about a caller
/// supplied center c:  phi(u) = R(theta) (u - c) + c + (tx, ty).
/// theta is wrapped into (-pi, pi] at construction.
struct RigidTransform2D {
    double tx = 0.0;
    double ty = 0.0;
    double theta = 0.0;

    static RigidTransform2D make(double tx, double ty, double theta);

    Vec2 map(Vec2 u, Vec2 center) const;      // phi(u)
    Vec2 unmap(Vec2 x, Vec2 center) const;    // phi^-1(x)
    Vec2 rotate(Vec2 v) const;                // R(theta) v, vectors only
};

struct LC2Params {
    int patch_radius = 4;
    double variance_floor = 1e-6;
    double tx_max = 10.0;   // px
    double ty_max = 10.0;   // px
    double theta_max = 5.0 * 3.14159265358979323846 / 180.0;  // rad

    void validate() const;
};

/// LC2 similarity: per patch, least-squares fit of ultrasound intensities as
/// alpha*ct + beta*ct_grad + gamma; local score 1 - Var(residual)/Var(us patch),
/// aggregated as the variance-weighted mean over patches above the variance
/// floor. Throws UndefinedSimilarity when every patch is filtered out.
double lc2_similarity(const Image2D& us, const Image2D& ct, const Image2D& ct_grad, const LC2Params& p,
                      const Mask2D& region);

/// Resamples img under the pose about `center`: out(x) = img(phi^-1(x)),
/// border-replicated. Equivalent to warp() with flow(x) = phi^-1(x) - x.
Image2D apply_rigid(const Image2D& img, const RigidTransform2D& t, Vec2 center);

/// The flow equivalent of apply_rigid, for cross-module consistency.
FlowField rigid_flow(const RigidTransform2D& t, Vec2 center, int width, int height);

/// Maximizes LC2 over the bounded 3-DoF box (coarse grid, then Nelder-Mead).
/// Poses are about the ultrasound image center. The returned score is never
/// below the initialization score. Throws RegistrationFailure if the similarity
/// is undefined over the whole grid.
std::pair<RigidTransform2D, double> rigid_refine(const Image2D& us, const Image2D& ct_slice,
                                                 const RigidTransform2D& init, const LC2Params& p);

}  // namespace usct
