#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "usct/confidence.hpp"
#include "usct/flow.hpp"
#include "usct/registration.hpp"
#include "usct/types.hpp"

namespace usct {

/// Gaussian compression profile of the probe:
/// P(x) = d_robot * exp(-(x - c_x)^2 / (2 sigma_probe^2)).
struct ProbeProfile {
    double d_robot = 0.0;  // px
    double c_x = 0.0;      // px
    double sigma_probe = 1.0;

    void validate(int width) const;
};

struct TransferParams {
    double sigma_smooth = 40.0;      // px, decay length of the EDT weighting
    RigidTransform2D placement;      // maps the US pixel frame into the CT slice frame

    void validate() const;
};

std::vector<double> probe_profile(const ProbeProfile& p, int width);

/// D_geo^y = D_raw^y - P(x) per column; x components pass through untouched.
FlowField correct_probe_compression(const FlowField& d_raw, const std::vector<double>& profile);

/// Embeds a US-frame field into the CT grid: each CT pixel inside the
/// transformed US region receives the bilinearly resampled displacement,
/// rotated by the placement angle; zero outside. The placement acts about the
/// US image center. Throws EmptyOverlap when no CT pixel is covered.
std::pair<FlowField, Mask2D> embed_field(const FlowField& d_geo, const Mask2D& us_mask, int ct_width,
                                         int ct_height, const RigidTransform2D& placement);

/// Exact Euclidean distance to the nearest true pixel (two-pass algorithm).
ScalarField edt(const Mask2D& mask);

/// W = exp(-dist / sigma_smooth), in (0,1].
Image2D decay_weight(const ScalarField& dist, double sigma_smooth);

/// Both components scaled pointwise by w.
FlowField final_field(const FlowField& d_pad, const Image2D& w);

/// warp(ct0, d_final).
Image2D update_slice(const Image2D& ct0, const FlowField& d_final);

struct UpdateStageTiming {
    std::string stage;
    double ms = 0.0;
};

struct UpdateReport {
    std::vector<UpdateStageTiming> timings;
    double total_ms = 0.0;
    double fb_mean = 0.0;       // forward-backward residual of the selected pair
    double folding = 0.0;       // folding ratio of the transferred field
    double us_mae = 0.0;        // post-warp misalignment of the selected field
    int selected = 0;           // 0 = direct, 1 = bisect
    double stage_ms(const std::string& name) const;

    static std::string csv_header();
    std::string csv_row() const;
};

struct UpdateParams {
    EnergyWeights energy;
    PyramidSpec pyramid;
    ConfidenceParams confidence;
    TransferParams transfer;
    ProbeProfile probe;
};

struct UpdateResult {
    Image2D updated;
    FlowField d_final;
    UpdateReport report;
};

/// Full chain: confidence -> bidirectional estimation -> candidate selection
/// (direct vs. bisect when i_mid is given) -> probe correction -> embedding ->
/// EDT weighting -> slice warp.
UpdateResult update_pipeline(const Image2D& ct0, const Image2D& i_prev, const Image2D& i_curr,
                             const UpdateParams& params, const Image2D* i_mid = nullptr,
                             const FlowField* pseudo01 = nullptr, const FlowField* pseudo10 = nullptr);

}  // namespace usct
