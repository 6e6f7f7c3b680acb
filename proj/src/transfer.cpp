#include "usct/transfer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "usct/errors.hpp"
#include "usct/grid.hpp"

namespace usct {

void ProbeProfile::validate(int width) const {
    detail::require(sigma_probe > 0, "ProbeProfile: sigma_probe must be positive");
    detail::require(d_robot >= 0, "ProbeProfile: d_robot must be non-negative");
    detail::require(c_x >= 0 && c_x <= width - 1, "ProbeProfile: c_x must lie within the image width");
}

void TransferParams::validate() const {
    detail::require(sigma_smooth > 0, "TransferParams: sigma_smooth must be positive");
}

std::vector<double> probe_profile(const ProbeProfile& p, int width) {
    detail::require(width >= 1, "probe_profile: width must be >= 1");
    p.validate(width);
    std::vector<double> out(static_cast<std::size_t>(width));
    for (int x = 0; x < width; ++x) {
        const double d = (x - p.c_x) / p.sigma_probe;
        out[static_cast<std::size_t>(x)] = p.d_robot * std::exp(-0.5 * d * d);
    }
    return out;
}

FlowField correct_probe_compression(const FlowField& d_raw, const std::vector<double>& profile) {
    detail::require(static_cast<int>(profile.size()) == d_raw.width(),
                    "correct_probe_compression: profile length must equal the field width");
    std::vector<double> dy = d_raw.dy_plane();
    const int w = d_raw.width(), h = d_raw.height();
    for (int y = 0; y < h; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) dy[row + x] -= profile[static_cast<std::size_t>(x)];
    }
    return FlowField(w, h, d_raw.dx_plane(), std::move(dy));
}

std::pair<FlowField, Mask2D> embed_field(const FlowField& d_geo, const Mask2D& us_mask, int ct_width,
                                         int ct_height, const RigidTransform2D& placement) {
    detail::require(d_geo.same_shape(us_mask), "embed_field: field and mask dimensions differ");
    detail::require(ct_width >= 2 && ct_height >= 2, "embed_field: CT dimensions must be >= 2");
    detail::require(us_mask.count_true() > 0, "embed_field: ultrasound mask is empty");

    const int uw = d_geo.width(), uh = d_geo.height();
    const Vec2 center{(uw - 1) / 2.0, (uh - 1) / 2.0};
    std::vector<double> dx(static_cast<std::size_t>(ct_width) * ct_height, 0.0), dy(dx.size(), 0.0);
    std::vector<std::uint8_t> m(dx.size(), 0);

    std::size_t covered = 0;
    std::size_t i = 0;
    for (int y = 0; y < ct_height; ++y)
        for (int x = 0; x < ct_width; ++x, ++i) {
            const Vec2 u = placement.unmap({static_cast<double>(x), static_cast<double>(y)}, center);
            const long ux = std::lround(u.x), uy = std::lround(u.y);
            if (ux < 0 || ux >= uw || uy < 0 || uy >= uh) continue;
            if (!us_mask.at(static_cast<int>(ux), static_cast<int>(uy))) continue;
            m[i] = 1;
            ++covered;
            const Vec2 v = placement.rotate(bilinear_sample(d_geo, u.x, u.y));
            dx[i] = v.x;
            dy[i] = v.y;
        }
    if (covered == 0) throw EmptyOverlap("embed_field: transformed ultrasound region misses the CT grid");
    return {FlowField(ct_width, ct_height, std::move(dx), std::move(dy)),
            Mask2D(ct_width, ct_height, std::move(m))};
}

// ---------------------------------------------------------------------------
// exact two-pass Euclidean distance transform
// ---------------------------------------------------------------------------

ScalarField edt(const Mask2D& mask) {
    detail::require(mask.count_true() > 0, "edt: mask has no true pixel");
    const int w = mask.width(), h = mask.height();
    const double kInf = 1e18;

    // pass 1: squared vertical distance per column
    std::vector<double> f(static_cast<std::size_t>(w) * h, kInf);
    for (int x = 0; x < w; ++x) {
        double last = kInf;
        for (int y = 0; y < h; ++y) {
            if (mask.at(x, y))
                last = 0.0;
            else if (last < kInf)
                last += 1.0;
            f[static_cast<std::size_t>(y) * w + x] = (last < kInf) ? last * last : kInf;
        }
        last = kInf;
        for (int y = h - 1; y >= 0; --y) {
            if (mask.at(x, y))
                last = 0.0;
            else if (last < kInf)
                last += 1.0;
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (last < kInf) f[i] = std::min(f[i], last * last);
        }
    }

    // pass 2: lower envelope of parabolas per row. The kInf sentinel flows
    // through the intersection arithmetic; a row always has one finite column
    // because the mask is non-empty.
    std::vector<double> out(f.size());
    std::vector<int> v(static_cast<std::size_t>(w));
    std::vector<double> z(static_cast<std::size_t>(w) + 1);
    for (int y = 0; y < h; ++y) {
        const double* fr = f.data() + static_cast<std::size_t>(y) * w;
        auto intersect = [&](int q, int p) {
            return ((fr[q] + static_cast<double>(q) * q) - (fr[p] + static_cast<double>(p) * p)) /
                   (2.0 * q - 2.0 * p);
        };
        int k = 0;
        v[0] = 0;
        z[0] = -kInf * 10.0;
        z[1] = kInf * 10.0;
        for (int q = 1; q < w; ++q) {
            double s = intersect(q, v[static_cast<std::size_t>(k)]);
            while (s <= z[static_cast<std::size_t>(k)]) {
                --k;
                s = intersect(q, v[static_cast<std::size_t>(k)]);
            }
            ++k;
            v[static_cast<std::size_t>(k)] = q;
            z[static_cast<std::size_t>(k)] = s;
            z[static_cast<std::size_t>(k) + 1] = kInf * 10.0;
        }
        k = 0;
        for (int q = 0; q < w; ++q) {
            while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
            const int p = v[static_cast<std::size_t>(k)];
            out[static_cast<std::size_t>(y) * w + q] = std::sqrt((q - p) * static_cast<double>(q - p) + fr[p]);
        }
    }
    return ScalarField(w, h, std::move(out));
}

Image2D decay_weight(const ScalarField& dist, double sigma_smooth) {
    detail::require(sigma_smooth > 0, "decay_weight: sigma_smooth must be positive");
    std::vector<double> out(dist.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        detail::require(dist[i] >= 0.0, "decay_weight: distances must be non-negative");
        out[i] = std::exp(-dist[i] / sigma_smooth);
    }
    return Image2D(dist.width(), dist.height(), std::move(out));
}

FlowField final_field(const FlowField& d_pad, const Image2D& w) {
    detail::require(d_pad.same_shape(w), "final_field: shapes differ");
    std::vector<double> dx(d_pad.size()), dy(d_pad.size());
    for (std::size_t i = 0; i < dx.size(); ++i) {
        dx[i] = d_pad.dx_plane()[i] * w[i];
        dy[i] = d_pad.dy_plane()[i] * w[i];
    }
    return FlowField(d_pad.width(), d_pad.height(), std::move(dx), std::move(dy));
}

Image2D update_slice(const Image2D& ct0, const FlowField& d_final) {
    detail::require(ct0.same_shape(d_final), "update_slice: shapes differ");
    return warp(ct0, d_final);
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

double UpdateReport::stage_ms(const std::string& name) const {
    for (const auto& t : timings)
        if (t.stage == name) return t.ms;
    return -1.0;
}

std::string UpdateReport::csv_header() {
    return "confidence_ms,flow_ms,select_ms,correct_ms,embed_ms,edt_ms,weight_ms,final_ms,warp_ms,"
           "total_ms,fb_mean,folding,us_mae,selected";
}

std::string UpdateReport::csv_row() const {
    std::ostringstream os;
    os.precision(9);
    const char* stages[] = {"confidence", "flow", "select", "correct", "embed", "edt", "weight", "final", "warp"};
    for (const char* s : stages) os << stage_ms(s) << ",";
    os << total_ms << "," << fb_mean << "," << folding << "," << us_mae << "," << selected;
    return os.str();
}

UpdateResult update_pipeline(const Image2D& ct0, const Image2D& i_prev, const Image2D& i_curr,
                             const UpdateParams& params, const Image2D* i_mid, const FlowField* pseudo01,
                             const FlowField* pseudo10) {
    detail::require(i_prev.same_shape(i_curr), "update_pipeline: frame shapes differ");
    if (i_mid) detail::require(i_prev.same_shape(*i_mid), "update_pipeline: mid frame shape differs");
    params.transfer.validate();

    using clock = std::chrono::steady_clock;
    UpdateReport report;
    auto t0 = clock::now();
    auto lap = [&](const char* stage) {
        const auto t1 = clock::now();
        report.timings.push_back({stage, std::chrono::duration<double, std::milli>(t1 - t0).count()});
        t0 = t1;
    };

    auto [conf_prev, conf_curr] = confidence_pair(i_prev, i_curr, params.confidence);
    ConfidenceMap conf_mid;
    if (i_mid) conf_mid = confidence(*i_mid, params.confidence);
    lap("confidence");

    auto [f01, f10] = estimate_bidirectional(i_prev, i_curr, conf_prev, conf_curr, params.pyramid,
                                             params.energy, pseudo01, pseudo10);
    std::pair<FlowField, FlowField> bisect;
    if (i_mid)
        bisect = bisect_pair(i_prev, *i_mid, i_curr, conf_prev, conf_mid, conf_curr, params.pyramid,
                             params.energy);
    lap("flow");

    // the transferred field is the prev->curr sampling field (F10); candidates
    // are judged by post-warp misalignment in the current frame
    FlowField d_raw = f10;
    FlowField d_raw_01 = f01;
    report.selected = 0;
    if (i_mid) {
        auto [idx, chosen] = select_candidate(i_curr, i_prev, {f10, bisect.second});
        d_raw = std::move(chosen);
        if (idx == 1) d_raw_01 = bisect.first;
        report.selected = idx;
    }
    report.us_mae = warp_misalignment(i_curr, i_prev, d_raw);
    report.fb_mean = fb_residual(d_raw_01, d_raw).mean;
    report.folding = folding_ratio(d_raw);
    lap("select");

    const std::vector<double> profile = probe_profile(params.probe, i_prev.width());
    const FlowField d_geo = correct_probe_compression(d_raw, profile);
    lap("correct");

    const Mask2D us_mask(i_prev.width(), i_prev.height(), true);
    auto [d_pad, m_ct] = embed_field(d_geo, us_mask, ct0.width(), ct0.height(), params.transfer.placement);
    lap("embed");

    const ScalarField dist = edt(m_ct);
    lap("edt");

    const Image2D wgt = decay_weight(dist, params.transfer.sigma_smooth);
    lap("weight");

    const FlowField d_final = final_field(d_pad, wgt);
    lap("final");

    Image2D updated = update_slice(ct0, d_final);
    lap("warp");

    for (const auto& t : report.timings) report.total_ms += t.ms;
    return UpdateResult{std::move(updated), d_final, std::move(report)};
}

}  // namespace usct
