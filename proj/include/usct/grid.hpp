#pragma once

#include "usct/types.hpp"

namespace usct {

/// Bilinear interpolation with border replication: coordinates are clamped to
/// [0, W-1] x [0, H-1] before the four-neighbor blend.
double bilinear_sample(const Image2D& img, double x, double y);
Vec2 bilinear_sample(const FlowField& f, double x, double y);
double bilinear_sample(const ScalarField& s, double x, double y);

/// out(x) = img(x + f(x)), border-replicated, clamped to [0,1].
Image2D warp(const Image2D& img, const FlowField& f);

/// out(x) = mask(round(x + f(x))); false when the sample lands out of bounds.
Mask2D warp_nearest(const Mask2D& mask, const FlowField& f);

/// True where x + f(x) stays inside the grid, so metrics can exclude
/// border-clamped samples.
Mask2D warp_valid_mask(const FlowField& f);

/// (f (+) g)(x) = f(x) + g(x + f(x)); g is sampled bilinearly with border clamping.
FlowField compose(const FlowField& f, const FlowField& g);

/// Central differences in the interior, one-sided at borders.
GradientField gradient(const Image2D& img);
Image2D gradient_magnitude(const Image2D& img);

/// Per-pixel det(I + grad F).
ScalarField jacobian_det(const FlowField& f);

/// Fraction of interior pixels with det(I + grad F) < 0.
double folding_ratio(const FlowField& f);

struct FbResidual {
    double mean = 0.0;    // average L2 norm over both residual maps
    double mean01 = 0.0;  // f01 (+) f10 direction alone
    double mean10 = 0.0;
    ScalarField r01_norm;
    ScalarField r10_norm;
};

/// Forward-backward consistency: residual maps compose(f01,f10) and
/// compose(f10,f01), reported as per-pixel L2 norms.
FbResidual fb_residual(const FlowField& f01, const FlowField& f10);

}  // namespace usct
