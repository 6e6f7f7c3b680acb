#include "usct/io.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "usct/errors.hpp"

namespace usct {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg, std::size_t offset) { throw ParseError(msg, offset); }

std::string read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_all(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + path.string());
}

// ---- PGM ----

struct PgmHeader {
    int width = 0, height = 0, maxval = 0;
    std::size_t data_offset = 0;
};

PgmHeader parse_pgm_header(const std::string& bytes) {
    std::size_t pos = 0;
    auto skip_space = [&]() {
        while (pos < bytes.size()) {
            if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&](const char* what) {
        skip_space();
        if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
            fail(std::string("PGM: expected ") + what, pos);
        long v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1 << 30) fail(std::string("PGM: ") + what + " out of range", pos);
            ++pos;
        }
        return static_cast<int>(v);
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("PGM: missing P5 magic", 0);
    pos = 2;
    PgmHeader h;
    h.width = read_int("width");
    h.height = read_int("height");
    h.maxval = read_int("maxval");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        fail("PGM: expected single whitespace after maxval", pos);
    ++pos;
    h.data_offset = pos;
    if (h.width < 1 || h.height < 1) fail("PGM: non-positive dimensions", pos);
    if (h.maxval != 255 && h.maxval != 65535) fail("PGM: unsupported maxval (must be 255 or 65535)", pos);
    return h;
}

std::vector<double> parse_pgm_payload(const std::string& bytes, const PgmHeader& h) {
    const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
    const std::size_t bpp = (h.maxval > 255) ? 2 : 1;
    if (bytes.size() - h.data_offset < n * bpp)
        fail("PGM: truncated payload", bytes.size());
    std::vector<double> data(n);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + h.data_offset;
    if (bpp == 1) {
        for (std::size_t i = 0; i < n; ++i) data[i] = p[i] / 255.0;
    } else {
        for (std::size_t i = 0; i < n; ++i)
            data[i] = ((static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1]) / 65535.0;
    }
    return data;
}

}  // namespace

Image2D read_pgm(const std::filesystem::path& path) {
    const std::string bytes = read_all(path);
    const PgmHeader h = parse_pgm_header(bytes);
    if (h.width < 2 || h.height < 2) fail("PGM: image must be at least 2x2", h.data_offset);
    return Image2D(h.width, h.height, parse_pgm_payload(bytes, h));
}

void write_pgm(const std::filesystem::path& path, const Image2D& img, int maxval) {
    detail::require(maxval == 255 || maxval == 65535, "write_pgm: maxval must be 255 or 65535");
    std::ostringstream os;
    os << "P5\n" << img.width() << " " << img.height() << "\n" << maxval << "\n";
    std::string bytes = os.str();
    bytes.reserve(bytes.size() + img.size() * (maxval > 255 ? 2 : 1));
    for (std::size_t i = 0; i < img.size(); ++i) {
        const long v = std::lround(img[i] * maxval);
        if (maxval > 255) {
            bytes.push_back(static_cast<char>((v >> 8) & 0xff));
            bytes.push_back(static_cast<char>(v & 0xff));
        } else {
            bytes.push_back(static_cast<char>(v & 0xff));
        }
    }
    write_all(path, bytes);
}

Mask2D read_pgm_mask(const std::filesystem::path& path) {
    const std::string bytes = read_all(path);
    const PgmHeader h = parse_pgm_header(bytes);
    const std::vector<double> data = parse_pgm_payload(bytes, h);
    std::vector<std::uint8_t> m(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) m[i] = data[i] >= 0.5 ? 1 : 0;
    return Mask2D(h.width, h.height, std::move(m));
}

void write_pgm_mask(const std::filesystem::path& path, const Mask2D& mask) {
    std::ostringstream os;
    os << "P5\n" << mask.width() << " " << mask.height() << "\n255\n";
    std::string bytes = os.str();
    for (std::size_t i = 0; i < mask.size(); ++i) bytes.push_back(mask[i] ? '\xff' : '\0');
    write_all(path, bytes);
}

// ---- .flo ----

namespace {
constexpr float kFloMagic = 202021.25f;
}

FlowField read_flo(const std::filesystem::path& path) {
    const std::string bytes = read_all(path);
    if (bytes.size() < 12) fail(".flo: file too short for header", bytes.size());
    float magic;
    std::int32_t w, h;
    std::memcpy(&magic, bytes.data(), 4);
    std::memcpy(&w, bytes.data() + 4, 4);
    std::memcpy(&h, bytes.data() + 8, 4);
    if (magic != kFloMagic) fail(".flo: wrong magic number", 0);
    if (w < 1 || h < 1 || w > (1 << 20) || h > (1 << 20)) fail(".flo: implausible dimensions", 4);
    const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (bytes.size() - 12 != n * 8) fail(".flo: payload size does not match dimensions", bytes.size());
    std::vector<double> dx(n), dy(n);
    const char* p = bytes.data() + 12;
    for (std::size_t i = 0; i < n; ++i) {
        float u, v;
        std::memcpy(&u, p + 8 * i, 4);
        std::memcpy(&v, p + 8 * i + 4, 4);
        if (!std::isfinite(u) || !std::isfinite(v)) fail(".flo: non-finite flow component", 12 + 8 * i);
        dx[i] = u;
        dy[i] = v;
    }
    return FlowField(w, h, std::move(dx), std::move(dy));
}

void write_flo(const std::filesystem::path& path, const FlowField& f) {
    std::string bytes;
    bytes.resize(12 + f.size() * 8);
    const std::int32_t w = f.width(), h = f.height();
    std::memcpy(bytes.data(), &kFloMagic, 4);
    std::memcpy(bytes.data() + 4, &w, 4);
    std::memcpy(bytes.data() + 8, &h, 4);
    char* p = bytes.data() + 12;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const float u = static_cast<float>(f.dx_plane()[i]);
        const float v = static_cast<float>(f.dy_plane()[i]);
        std::memcpy(p + 8 * i, &u, 4);
        std::memcpy(p + 8 * i + 4, &v, 4);
    }
    write_all(path, bytes);
}

// ---- JSON helpers ----

namespace {

json parse_json(const std::filesystem::path& path) {
    const std::string bytes = read_all(path);
    json j = json::parse(bytes, nullptr, false);
    if (j.is_discarded()) fail(path.string() + ": invalid JSON", 0);
    return j;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) throw Error(where + ": unknown key '" + it.key() + "'");
    }
}

double num(const json& j, const char* key, double fallback, bool* present = nullptr) {
    if (!j.contains(key)) {
        if (present) *present = false;
        return fallback;
    }
    if (present) *present = true;
    if (!j[key].is_number()) throw Error(std::string("expected number for key '") + key + "'");
    return j[key].get<double>();
}

}  // namespace

RigidTransform2D read_pose_json(const std::filesystem::path& path) {
    const json j = parse_json(path);
    check_keys(j, {"tx", "ty", "theta_deg"}, path.string());
    const double deg = num(j, "theta_deg", 0.0);
    return RigidTransform2D::make(num(j, "tx", 0.0), num(j, "ty", 0.0), deg * 3.14159265358979323846 / 180.0);
}

void write_pose_json(const std::filesystem::path& path, const RigidTransform2D& pose) {
    json j;
    j["tx"] = pose.tx;
    j["ty"] = pose.ty;
    j["theta_deg"] = pose.theta * 180.0 / 3.14159265358979323846;
    write_all(path, j.dump(2) + "\n");
}

HomTransform3D read_hom_json(const std::filesystem::path& path) {
    const json j = parse_json(path);
    check_keys(j, {"matrix"}, path.string());
    if (!j.contains("matrix") || !j["matrix"].is_array() || j["matrix"].size() != 16)
        throw Error(path.string() + ": 'matrix' must be a 16-element row-major array");
    std::array<double, 16> m{};
    for (int i = 0; i < 16; ++i) m[static_cast<std::size_t>(i)] = j["matrix"][static_cast<std::size_t>(i)].get<double>();
    return HomTransform3D(m);
}

void write_hom_json(const std::filesystem::path& path, const HomTransform3D& t) {
    json j;
    j["matrix"] = t.m();
    write_all(path, j.dump(2) + "\n");
}

ProbeProfile read_probe_json(const std::filesystem::path& path) {
    const json j = parse_json(path);
    check_keys(j, {"d_robot", "c_x", "sigma_probe"}, path.string());
    ProbeProfile p;
    p.d_robot = num(j, "d_robot", 0.0);
    p.c_x = num(j, "c_x", 0.0);
    p.sigma_probe = num(j, "sigma_probe", 1.0);
    return p;
}

void write_probe_json(const std::filesystem::path& path, const ProbeProfile& probe) {
    json j;
    j["d_robot"] = probe.d_robot;
    j["c_x"] = probe.c_x;
    j["sigma_probe"] = probe.sigma_probe;
    write_all(path, j.dump(2) + "\n");
}

// ---- Config ----

void Config::validate() const {
    energy.validate();
    pyramid.validate();
    confidence.validate();
    lc2.validate();
    detail::require(sigma_smooth > 0, "config: transfer.sigma_smooth must be positive");
}

Config read_config_json(const std::filesystem::path& path) {
    const json j = parse_json(path);
    check_keys(j, {"energy", "pyramid", "confidence", "lc2", "transfer"}, path.string());
    Config c;
    if (j.contains("energy")) {
        const json& e = j["energy"];
        check_keys(e, {"lambda_flow", "lambda_photo", "lambda_reg", "charbonnier_eps", "edge_kappa", "fold_weight"},
                   "config.energy");
        c.energy.lambda_flow = num(e, "lambda_flow", c.energy.lambda_flow);
        c.energy.lambda_photo = num(e, "lambda_photo", c.energy.lambda_photo);
        c.energy.lambda_reg = num(e, "lambda_reg", c.energy.lambda_reg);
        c.energy.charbonnier_eps = num(e, "charbonnier_eps", c.energy.charbonnier_eps);
        c.energy.edge_kappa = num(e, "edge_kappa", c.energy.edge_kappa);
        c.energy.fold_weight = num(e, "fold_weight", c.energy.fold_weight);
    }
    if (j.contains("pyramid")) {
        const json& p = j["pyramid"];
        check_keys(p, {"levels", "scale_factor", "blur_sigma"}, "config.pyramid");
        c.pyramid.levels = static_cast<int>(num(p, "levels", c.pyramid.levels));
        c.pyramid.scale_factor = static_cast<int>(num(p, "scale_factor", c.pyramid.scale_factor));
        c.pyramid.blur_sigma = num(p, "blur_sigma", c.pyramid.blur_sigma);
    }
    if (j.contains("confidence")) {
        const json& p = j["confidence"];
        check_keys(p, {"alpha", "beta", "gamma", "cg_tol", "cg_max_iters", "multigrid_precond"}, "config.confidence");
        c.confidence.alpha = num(p, "alpha", c.confidence.alpha);
        c.confidence.beta = num(p, "beta", c.confidence.beta);
        c.confidence.gamma = num(p, "gamma", c.confidence.gamma);
        c.confidence.cg_tol = num(p, "cg_tol", c.confidence.cg_tol);
        c.confidence.cg_max_iters = static_cast<int>(num(p, "cg_max_iters", c.confidence.cg_max_iters));
        if (p.contains("multigrid_precond")) {
            if (!p["multigrid_precond"].is_boolean()) throw Error("config.confidence.multigrid_precond must be a bool");
            c.confidence.multigrid_precond = p["multigrid_precond"].get<bool>();
        }
    }
    if (j.contains("lc2")) {
        const json& p = j["lc2"];
        check_keys(p, {"patch_radius", "variance_floor", "tx_max", "ty_max", "theta_max_deg"}, "config.lc2");
        c.lc2.patch_radius = static_cast<int>(num(p, "patch_radius", c.lc2.patch_radius));
        c.lc2.variance_floor = num(p, "variance_floor", c.lc2.variance_floor);
        c.lc2.tx_max = num(p, "tx_max", c.lc2.tx_max);
        c.lc2.ty_max = num(p, "ty_max", c.lc2.ty_max);
        c.lc2.theta_max = num(p, "theta_max_deg", c.lc2.theta_max * 180.0 / 3.14159265358979323846) *
                          3.14159265358979323846 / 180.0;
    }
    if (j.contains("transfer")) {
        const json& p = j["transfer"];
        check_keys(p, {"sigma_smooth"}, "config.transfer");
        c.sigma_smooth = num(p, "sigma_smooth", c.sigma_smooth);
    }
    c.validate();
    return c;
}

void write_config_json(const std::filesystem::path& path, const Config& cfg) {
    json j;
    j["energy"] = {{"lambda_flow", cfg.energy.lambda_flow},
                   {"lambda_photo", cfg.energy.lambda_photo},
                   {"lambda_reg", cfg.energy.lambda_reg},
                   {"charbonnier_eps", cfg.energy.charbonnier_eps},
                   {"edge_kappa", cfg.energy.edge_kappa},
                   {"fold_weight", cfg.energy.fold_weight}};
    j["pyramid"] = {{"levels", cfg.pyramid.levels},
                    {"scale_factor", cfg.pyramid.scale_factor},
                    {"blur_sigma", cfg.pyramid.blur_sigma}};
    j["confidence"] = {{"alpha", cfg.confidence.alpha},
                       {"beta", cfg.confidence.beta},
                       {"gamma", cfg.confidence.gamma},
                       {"cg_tol", cfg.confidence.cg_tol},
                       {"cg_max_iters", cfg.confidence.cg_max_iters},
                       {"multigrid_precond", cfg.confidence.multigrid_precond}};
    j["lc2"] = {{"patch_radius", cfg.lc2.patch_radius},
                {"variance_floor", cfg.lc2.variance_floor},
                {"tx_max", cfg.lc2.tx_max},
                {"ty_max", cfg.lc2.ty_max},
                {"theta_max_deg", cfg.lc2.theta_max * 180.0 / 3.14159265358979323846}};
    j["transfer"] = {{"sigma_smooth", cfg.sigma_smooth}};
    write_all(path, j.dump(2) + "\n");
}

// ---- phantom specs and fixtures ----

namespace {

DeformSpec parse_deform_spec(const json& j, const std::string& where) {
    check_keys(j,
               {"kind", "tx", "ty", "center", "amplitude", "sigma", "d_robot", "c_x", "sigma_probe", "seed"},
               where);
    if (!j.contains("kind") || !j["kind"].is_string()) throw Error(where + ": missing 'kind'");
    const std::string kind = j["kind"].get<std::string>();
    DeformSpec s;
    if (kind == "none") {
        s.kind = DeformSpec::Kind::none;
    } else if (kind == "translation") {
        s.kind = DeformSpec::Kind::translation;
        s.tx = num(j, "tx", 0.0);
        s.ty = num(j, "ty", 0.0);
    } else if (kind == "gaussian_bump") {
        s.kind = DeformSpec::Kind::gaussian_bump;
        if (j.contains("center")) {
            if (!j["center"].is_array() || j["center"].size() != 2)
                throw Error(where + ": 'center' must be [x, y]");
            s.center = {j["center"][0].get<double>(), j["center"][1].get<double>()};
        }
        s.amplitude = num(j, "amplitude", 4.0);
        s.sigma = num(j, "sigma", 16.0);
    } else if (kind == "probe_press") {
        s.kind = DeformSpec::Kind::probe_press;
        s.probe.d_robot = num(j, "d_robot", 4.0);
        s.probe.c_x = num(j, "c_x", 0.0);
        s.probe.sigma_probe = num(j, "sigma_probe", 40.0);
    } else {
        throw Error(where + ": unknown kind '" + kind + "'");
    }
    s.seed = static_cast<std::uint64_t>(num(j, "seed", 0.0));
    return s;
}

}  // namespace

PhantomRequest read_phantom_request_json(const std::filesystem::path& path) {
    const json j = parse_json(path);
    PhantomRequest req;
    if (j.contains("sequence")) {
        check_keys(j, {"sequence", "width", "height"}, path.string());
        if (!j["sequence"].is_array() || j["sequence"].empty())
            throw Error(path.string() + ": 'sequence' must be a non-empty array");
        for (const auto& item : j["sequence"])
            req.specs.push_back(parse_deform_spec(item, path.string() + ".sequence"));
    } else {
        json spec = j;  // width/height ride along with a single spec
        spec.erase("width");
        spec.erase("height");
        req.specs.push_back(parse_deform_spec(spec, path.string()));
    }
    req.width = static_cast<int>(num(j, "width", 256.0));
    req.height = static_cast<int>(num(j, "height", 256.0));
    return req;
}

void write_scene(const std::filesystem::path& dir, const PhantomScene& scene) {
    std::filesystem::create_directories(dir);
    write_pgm(dir / "i0.pgm", scene.i0);
    write_pgm(dir / "i1.pgm", scene.i1);
    write_flo(dir / "flow01.flo", scene.flow_gt_01);
    write_flo(dir / "flow10.flo", scene.flow_gt_10);
    write_pgm_mask(dir / "bone0.pgm", scene.bone_mask0);
    write_pgm_mask(dir / "bone1.pgm", scene.bone_mask1);
    write_pgm(dir / "ct.pgm", scene.ct_slice);
    write_pgm(dir / "ct_deformed.pgm", scene.ct_slice_deformed);
    write_pgm_mask(dir / "ct_bone.pgm", scene.ct_bone_mask);
    write_pgm_mask(dir / "ct_bone_deformed.pgm", scene.ct_bone_mask_deformed);
    write_pgm_mask(dir / "us_window.pgm", scene.us_window);
    write_flo(dir / "world_flow.flo", scene.world_flow_ct);
    write_pose_json(dir / "placement.json", scene.placement);

    json manifest;
    manifest["us_width"] = scene.i0.width();
    manifest["us_height"] = scene.i0.height();
    manifest["ct_width"] = scene.ct_slice.width();
    manifest["ct_height"] = scene.ct_slice.height();
    manifest["ct_pad"] = scene.ct_pad;
    manifest["files"] = {"i0.pgm",          "i1.pgm",      "flow01.flo",         "flow10.flo",
                         "bone0.pgm",       "bone1.pgm",   "ct.pgm",             "ct_deformed.pgm",
                         "ct_bone.pgm",     "ct_bone_deformed.pgm",              "us_window.pgm",
                         "world_flow.flo",  "placement.json"};
    write_all(dir / "manifest.json", manifest.dump(2) + "\n");
}

void write_sequence(const std::filesystem::path& dir, const PhantomSequence& seq) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["frames"] = json::array();
    for (std::size_t k = 0; k < seq.frames.size(); ++k) {
        const std::string name = "frame" + std::to_string(k) + ".pgm";
        write_pgm(dir / name, seq.frames[k]);
        manifest["frames"].push_back(name);
    }
    for (std::size_t k = 0; k < seq.step_flow_01.size(); ++k) {
        write_flo(dir / ("step" + std::to_string(k) + "_01.flo"), seq.step_flow_01[k]);
        write_flo(dir / ("step" + std::to_string(k) + "_10.flo"), seq.step_flow_10[k]);
    }
    write_flo(dir / "cum01.flo", seq.cum_flow_01);
    write_flo(dir / "cum10.flo", seq.cum_flow_10);
    manifest["steps"] = seq.step_flow_01.size();
    write_all(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace usct
