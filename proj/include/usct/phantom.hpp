#pragma once

#include <cstdint>
#include <vector>

#include "usct/registration.hpp"
#include "usct/transfer.hpp"
#include "usct/types.hpp"

namespace usct {

/// Synthetic deformation between two frames. Kinds describe the apparent
/// content motion: flow_gt_01 equals the analytic motion field.
struct DeformSpec {
    enum class Kind { none, translation, gaussian_bump, probe_press };

    Kind kind = Kind::none;
    double tx = 0.0, ty = 0.0;       // translation
    Vec2 center{};                   // gaussian_bump
    double amplitude = 0.0;          // gaussian_bump, <= 8 px
    double sigma = 16.0;             // gaussian_bump, >= 8 px
    ProbeProfile probe;              // probe_press
    std::uint64_t seed = 0;

    void validate(int width, int height) const;
};

/// One frame pair with exact ground truth, rendered from continuous geometry.
/// The CT slice lives on a larger padded grid; `placement` maps the US frame
/// into it (about the US image center) and `us_window` marks the covered region.
struct PhantomScene {
    Image2D i0, i1;
    FlowField flow_gt_01, flow_gt_10;
    Mask2D bone_mask0, bone_mask1;
    Image2D ct_slice;
    Mask2D us_window;

    // CT-frame ground truth for end-to-end checks
    Image2D ct_slice_deformed;
    Mask2D ct_bone_mask, ct_bone_mask_deformed;
    FlowField world_flow_ct;  // sampling field: ct_slice_deformed ~ warp(ct_slice, world_flow_ct)
    RigidTransform2D placement;
    int ct_pad = 0;
};

/// Multi-frame sequence sharing one geometry; per-step and cumulative flows are
/// analytic (step k deforms frame k-1 into frame k).
struct PhantomSequence {
    std::vector<Image2D> frames;
    std::vector<FlowField> step_flow_01, step_flow_10;  // per consecutive pair
    FlowField cum_flow_01, cum_flow_10;                 // first -> last
};

PhantomScene generate(const DeformSpec& spec, int width, int height);

PhantomSequence generate_sequence(const std::vector<DeformSpec>& specs, int width, int height);

}  // namespace usct
