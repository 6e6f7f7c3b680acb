#include "usct/phantom.hpp"

#include <cmath>
#include <functional>

#include "usct/errors.hpp"
#include "usct/grid.hpp"

namespace usct {

namespace {

// ---- counter-based RNG: every draw is a pure hash of (seed, stream, i, j) ----

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_counter(std::uint64_t seed, std::uint64_t stream, std::int64_t a, std::int64_t b) {
    std::uint64_t h = splitmix64(seed ^ 0x5851f42d4c957f2dULL);
    h = splitmix64(h ^ stream);
    h = splitmix64(h ^ static_cast<std::uint64_t>(a));
    h = splitmix64(h ^ static_cast<std::uint64_t>(b));
    return h;
}

inline double u01(std::uint64_t seed, std::uint64_t stream, std::int64_t a = 0, std::int64_t b = 0) {
    return (static_cast<double>(hash_counter(seed, stream, a, b) >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

inline double normal(std::uint64_t seed, std::uint64_t stream, std::int64_t a, std::int64_t b) {
    const double u1 = u01(seed, stream * 2 + 1, a, b);
    const double u2 = u01(seed, stream * 2 + 2, a, b);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

// Smooth value noise on a lattice (smoothstep-weighted bilinear blend of
// per-node normals); evaluable at arbitrary material coordinates.
double value_noise(std::uint64_t seed, std::uint64_t stream, double x, double y, double cell) {
    const double gx = x / cell, gy = y / cell;
    const auto ix = static_cast<std::int64_t>(std::floor(gx));
    const auto iy = static_cast<std::int64_t>(std::floor(gy));
    double fx = gx - static_cast<double>(ix), fy = gy - static_cast<double>(iy);
    fx = fx * fx * (3.0 - 2.0 * fx);
    fy = fy * fy * (3.0 - 2.0 * fy);
    const double v00 = normal(seed, stream, ix, iy);
    const double v10 = normal(seed, stream, ix + 1, iy);
    const double v01 = normal(seed, stream, ix, iy + 1);
    const double v11 = normal(seed, stream, ix + 1, iy + 1);
    const double top = v00 + fx * (v10 - v00);
    const double bot = v01 + fx * (v11 - v01);
    return top + fy * (bot - top);
}

inline double smooth01(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// ---- continuous scene shared by the ultrasound and CT appearances ----

struct SceneGeometry {
    std::uint64_t seed = 0;
    int us_w = 0, us_h = 0, pad = 0;
    double wave_len1 = 37, wave_ph1 = 0, wave_len2 = 61, wave_ph2 = 0;
    struct Blob {
        double cx, cy, sigma, amp;
    };
    Blob blobs[3];
    double bone_cx = 0, bone_cy = 0, bone_rx = 1, bone_ry = 1;

    static SceneGeometry make(std::uint64_t seed, int us_w, int us_h, int pad) {
        SceneGeometry s;
        s.seed = seed;
        s.us_w = us_w;
        s.us_h = us_h;
        s.pad = pad;
        s.wave_len1 = 31.0 + 12.0 * u01(seed, 10);
        s.wave_ph1 = 6.28318530717958647692 * u01(seed, 11);
        s.wave_len2 = 53.0 + 16.0 * u01(seed, 12);
        s.wave_ph2 = 6.28318530717958647692 * u01(seed, 13);
        for (int k = 0; k < 3; ++k) {
            s.blobs[k].cx = pad + us_w * (0.15 + 0.7 * u01(seed, 20 + k));
            s.blobs[k].cy = pad + us_h * (0.15 + 0.7 * u01(seed, 30 + k));
            s.blobs[k].sigma = 14.0 + 12.0 * u01(seed, 40 + k);
            s.blobs[k].amp = (u01(seed, 50 + k) - 0.5) * 0.26;
        }
        s.bone_cx = pad + us_w * (0.5 + 0.12 * (u01(seed, 60) - 0.5));
        s.bone_cy = pad + us_h * (0.54 + 0.08 * (u01(seed, 61) - 0.5));
        s.bone_rx = us_w * (0.13 + 0.04 * u01(seed, 62));
        s.bone_ry = us_h * (0.085 + 0.03 * u01(seed, 63));
        return s;
    }

    double soft_tissue(double x, double y) const {
        double v = 0.5 + 0.15 * std::sin(6.28318530717958647692 * y / wave_len1 + wave_ph1) +
                   0.10 * std::sin(6.28318530717958647692 * y / wave_len2 + wave_ph2);
        for (const auto& b : blobs) {
            const double dx = x - b.cx, dy = y - b.cy;
            v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
        }
        return v;
    }

    double ellipse_level(double x, double y) const {
        const double ex = (x - bone_cx) / bone_rx, ey = (y - bone_cy) / bone_ry;
        return ex * ex + ey * ey - 1.0;
    }

    bool bone_inside(double x, double y) const { return ellipse_level(x, y) < 0.0; }

    // bright interface along the upper bone boundary, acoustic shadow below it
    double us_intensity(double x, double y) const {
        const double soft = soft_tissue(x, y);
        const double e = ellipse_level(x, y);
        const double upper = smooth01((bone_cy + 0.15 * bone_ry - y) / (0.6 * bone_ry));
        const double rim = std::exp(-(e * e) / (2.0 * 0.25 * 0.25)) * upper;

        double shadow = 0.0;
        const double xr = (x - bone_cx) / bone_rx;
        if (std::abs(xr) < 1.05) {
            const double lateral = smooth01((1.05 - std::abs(xr)) / 0.25);
            const double arg = std::max(0.0, 1.0 - xr * xr);
            const double y_top = bone_cy - bone_ry * std::sqrt(arg);
            shadow = lateral / (1.0 + std::exp(-(y - y_top) / 2.5));
        }
        return std::clamp(soft * (1.0 - 0.55 * shadow) + 0.40 * rim, 0.02, 0.98);
    }

    double ct_intensity(double x, double y) const {
        const double soft = 0.28 + 0.34 * (soft_tissue(x, y) - 0.5);
        const double bone_blend = 1.0 / (1.0 + std::exp(ellipse_level(x, y) / 0.06));
        return std::clamp(soft + bone_blend * (0.9 - soft), 0.02, 0.98);
    }

    double speckle(double x, double y) const {
        const double z = value_noise(seed, 70, x, y, 2.0);
        return std::clamp(std::exp(0.2 * z), 0.55, 1.80);
    }

    double attenuation(int image_y) const {
        return std::exp(-0.35 * static_cast<double>(image_y) / (us_h - 1));
    }
};

// ---- deformation maps (US-local coordinates) ----
// render map phi = sampling map of frame 1 (i1(x) = scene(phi(x)), so
// flow_10 = phi - id); psi = phi^-1 is the content motion (flow_01 = psi - id).

struct DeformMaps {
    std::function<Vec2(Vec2)> phi;        // sampling map
    std::function<Vec2(Vec2)> psi;        // content motion map (inverse of phi)
    std::function<Vec2(Vec2)> world_disp; // CT-frame sampling displacement after probe removal
};

Vec2 fixed_point_inverse(const std::function<Vec2(Vec2)>& forward_disp, Vec2 x) {
    // solves q + disp(q) = x for q when disp is a contraction
    Vec2 q = x;
    for (int it = 0; it < 80; ++it) {
        const Vec2 d = forward_disp(q);
        const Vec2 next{x.x - d.x, x.y - d.y};
        const double delta = std::abs(next.x - q.x) + std::abs(next.y - q.y);
        q = next;
        if (delta < 1e-13) break;
    }
    return q;
}

DeformMaps make_maps(const DeformSpec& spec, int w, int h) {
    DeformMaps m;
    switch (spec.kind) {
        case DeformSpec::Kind::none: {
            m.phi = [](Vec2 x) { return x; };
            m.psi = [](Vec2 x) { return x; };
            m.world_disp = [](Vec2) { return Vec2{0.0, 0.0}; };
            break;
        }
        case DeformSpec::Kind::translation: {
            const double tx = spec.tx, ty = spec.ty;
            m.phi = [tx, ty](Vec2 x) { return Vec2{x.x - tx, x.y - ty}; };
            m.psi = [tx, ty](Vec2 x) { return Vec2{x.x + tx, x.y + ty}; };
            m.world_disp = [tx, ty](Vec2) { return Vec2{-tx, -ty}; };
            break;
        }
        case DeformSpec::Kind::gaussian_bump: {
            const Vec2 c = spec.center;
            const double a = spec.amplitude, s2 = 2.0 * spec.sigma * spec.sigma;
            const double ang = 6.28318530717958647692 * u01(spec.seed, 90);
            const double ux = std::cos(ang), uy = std::sin(ang);
            auto motion = [c, a, s2, ux, uy](Vec2 q) {
                const double dx = q.x - c.x, dy = q.y - c.y;
                const double g = a * std::exp(-(dx * dx + dy * dy) / s2);
                return Vec2{g * ux, g * uy};
            };
            m.psi = [motion](Vec2 q) {
                const Vec2 d = motion(q);
                return Vec2{q.x + d.x, q.y + d.y};
            };
            m.phi = [motion](Vec2 x) { return fixed_point_inverse(motion, x); };
            auto phi_local = m.phi;
            m.world_disp = [phi_local](Vec2 x) {
                const Vec2 q = phi_local(x);
                return Vec2{q.x - x.x, q.y - x.y};
            };
            break;
        }
        case DeformSpec::Kind::probe_press: {
            const ProbeProfile pr = spec.probe;
            const double hm1 = static_cast<double>(h - 1);
            auto profile = [pr](double x) {
                const double d = (x - pr.c_x) / pr.sigma_probe;
                return pr.d_robot * std::exp(-0.5 * d * d);
            };
            m.phi = [profile, hm1](Vec2 x) {
                return Vec2{x.x, x.y + profile(x.x) * (1.0 - x.y / hm1)};
            };
            m.psi = [profile, hm1](Vec2 x) {
                const double p = profile(x.x);
                return Vec2{x.x, (x.y - p) / (1.0 - p / hm1)};
            };
            m.world_disp = [profile, hm1](Vec2 x) {
                return Vec2{0.0, -profile(x.x) * x.y / hm1};
            };
            break;
        }
    }
    (void)w;
    return m;
}

Image2D render_us(const SceneGeometry& geo, const std::function<Vec2(Vec2)>& sample_map) {
    const int w = geo.us_w, h = geo.us_h;
    std::vector<double> out(static_cast<std::size_t>(w) * h);
    std::size_t i = 0;
    for (int y = 0; y < h; ++y) {
        const double att = geo.attenuation(y);
        for (int x = 0; x < w; ++x, ++i) {
            const Vec2 q = sample_map({static_cast<double>(x), static_cast<double>(y)});
            const double gx = q.x + geo.pad, gy = q.y + geo.pad;
            out[i] = std::clamp(geo.us_intensity(gx, gy) * geo.speckle(gx, gy) * att, 0.0, 1.0);
        }
    }
    return Image2D(w, h, std::move(out));
}

Mask2D render_bone(const SceneGeometry& geo, const std::function<Vec2(Vec2)>& sample_map) {
    const int w = geo.us_w, h = geo.us_h;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h);
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++i) {
            const Vec2 q = sample_map({static_cast<double>(x), static_cast<double>(y)});
            out[i] = geo.bone_inside(q.x + geo.pad, q.y + geo.pad) ? 1 : 0;
        }
    return Mask2D(w, h, std::move(out));
}

FlowField field_from(const std::function<Vec2(Vec2)>& map_minus_id_arg, int w, int h, bool subtract_id) {
    std::vector<double> dx(static_cast<std::size_t>(w) * h), dy(dx.size());
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x, ++i) {
            const Vec2 v = map_minus_id_arg({static_cast<double>(x), static_cast<double>(y)});
            dx[i] = subtract_id ? v.x - x : v.x;
            dy[i] = subtract_id ? v.y - y : v.y;
        }
    return FlowField(w, h, std::move(dx), std::move(dy));
}

}  // namespace

void DeformSpec::validate(int width, int height) const {
    switch (kind) {
        case Kind::none:
            break;
        case Kind::translation:
            detail::require(std::isfinite(tx) && std::isfinite(ty), "translation must be finite");
            break;
        case Kind::gaussian_bump:
            detail::require(amplitude >= 0 && amplitude <= 8.0, "bump amplitude must lie in [0, 8] px");
            detail::require(sigma >= 8.0, "bump sigma must be >= 8 px");
            detail::require(center.x >= 0 && center.x <= width - 1 && center.y >= 0 && center.y <= height - 1,
                            "bump center must lie inside the frame");
            break;
        case Kind::probe_press:
            probe.validate(width);
            detail::require(probe.d_robot <= 8.0, "probe_press d_robot must stay within 8 px");
            break;
    }
}

PhantomScene generate(const DeformSpec& spec, int width, int height) {
    detail::require(width >= 64 && height >= 64, "phantom frames must be at least 64x64");
    spec.validate(width, height);

    const int pad = std::min(width, height) / 4;
    const SceneGeometry geo = SceneGeometry::make(spec.seed, width, height, pad);
    const DeformMaps maps = make_maps(spec, width, height);

    PhantomScene scene;
    scene.ct_pad = pad;
    scene.placement = RigidTransform2D::make(pad, pad, 0.0);

    auto identity = [](Vec2 x) { return x; };
    scene.i0 = render_us(geo, identity);
    scene.i1 = render_us(geo, maps.phi);
    scene.bone_mask0 = render_bone(geo, identity);
    scene.bone_mask1 = render_bone(geo, maps.phi);
    scene.flow_gt_01 = field_from(maps.psi, width, height, true);
    scene.flow_gt_10 = field_from(maps.phi, width, height, true);

    const int cw = width + 2 * pad, chh = height + 2 * pad;
    {
        std::vector<double> ct(static_cast<std::size_t>(cw) * chh), ctd(ct.size());
        std::vector<std::uint8_t> cb(ct.size()), cbd(ct.size()), win(ct.size());
        std::vector<double> wdx(ct.size()), wdy(ct.size());
        std::size_t i = 0;
        for (int y = 0; y < chh; ++y)
            for (int x = 0; x < cw; ++x, ++i) {
                ct[i] = geo.ct_intensity(x, y);
                cb[i] = geo.bone_inside(x, y) ? 1 : 0;
                const Vec2 d = maps.world_disp({static_cast<double>(x - pad), static_cast<double>(y - pad)});
                wdx[i] = d.x;
                wdy[i] = d.y;
                ctd[i] = geo.ct_intensity(x + d.x, y + d.y);
                cbd[i] = geo.bone_inside(x + d.x, y + d.y) ? 1 : 0;
                win[i] = (x >= pad && x < pad + width && y >= pad && y < pad + height) ? 1 : 0;
            }
        scene.ct_slice = Image2D(cw, chh, std::move(ct));
        scene.ct_slice_deformed = Image2D(cw, chh, std::move(ctd));
        scene.ct_bone_mask = Mask2D(cw, chh, std::move(cb));
        scene.ct_bone_mask_deformed = Mask2D(cw, chh, std::move(cbd));
        scene.us_window = Mask2D(cw, chh, std::move(win));
        scene.world_flow_ct = FlowField(cw, chh, std::move(wdx), std::move(wdy));
    }
    return scene;
}

PhantomSequence generate_sequence(const std::vector<DeformSpec>& specs, int width, int height) {
    detail::require(!specs.empty(), "generate_sequence: need at least one step");
    detail::require(width >= 64 && height >= 64, "phantom frames must be at least 64x64");
    for (const auto& s : specs) s.validate(width, height);

    const int pad = std::min(width, height) / 4;
    const SceneGeometry geo = SceneGeometry::make(specs[0].seed, width, height, pad);

    std::vector<DeformMaps> steps;
    steps.reserve(specs.size());
    for (const auto& s : specs) steps.push_back(make_maps(s, width, height));

    PhantomSequence seq;
    // frame-k sampling map is phi_1 o phi_2 o ... o phi_k (phi_k innermost)
    auto cumulative_phi = [&](std::size_t upto) {
        return [&steps, upto](Vec2 x) {
            for (std::size_t k = 0; k < upto; ++k) x = steps[upto - 1 - k].phi(x);
            return x;
        };
    };

    seq.frames.reserve(specs.size() + 1);
    for (std::size_t k = 0; k <= specs.size(); ++k) seq.frames.push_back(render_us(geo, cumulative_phi(k)));

    for (std::size_t k = 0; k < specs.size(); ++k) {
        seq.step_flow_01.push_back(field_from(steps[k].psi, width, height, true));
        seq.step_flow_10.push_back(field_from(steps[k].phi, width, height, true));
    }

    auto cum_psi = [&](Vec2 x) {
        for (auto& st : steps) x = st.psi(x);
        return x;
    };
    seq.cum_flow_01 = field_from(cum_psi, width, height, true);
    seq.cum_flow_10 = field_from(cumulative_phi(specs.size()), width, height, true);
    return seq;
}

}  // namespace usct
