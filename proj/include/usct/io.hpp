#pragma once

#include <filesystem>
#include <string>
#include <utility>

#include "usct/confidence.hpp"
#include "usct/flow.hpp"
#include "usct/phantom.hpp"
#include "usct/registration.hpp"
#include "usct/transfer.hpp"
#include "usct/types.hpp"

namespace usct {

// ---- PGM (P5, maxval 255 or 65535) ----
// Intensities are normalized to [0,1] on read (value / maxval); 16-bit samples
// are big-endian per the Netpbm convention. Malformed input raises ParseError
// with the byte offset.

Image2D read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image2D& img, int maxval = 65535);

Mask2D read_pgm_mask(const std::filesystem::path& path);  // threshold at 0.5
void write_pgm_mask(const std::filesystem::path& path, const Mask2D& mask);

// ---- Middlebury .flo ----
// Magic float 202021.25 ("PIEH"), little-endian int32 width/height, then
// row-major interleaved little-endian float32 (u, v) pairs.

FlowField read_flo(const std::filesystem::path& path);
void write_flo(const std::filesystem::path& path, const FlowField& f);

// ---- JSON transforms and parameter files ----

RigidTransform2D read_pose_json(const std::filesystem::path& path);   // {tx, ty, theta_deg}
void write_pose_json(const std::filesystem::path& path, const RigidTransform2D& pose);

HomTransform3D read_hom_json(const std::filesystem::path& path);      // {"matrix": [16 row-major]}
void write_hom_json(const std::filesystem::path& path, const HomTransform3D& t);

ProbeProfile read_probe_json(const std::filesystem::path& path);      // {d_robot, c_x, sigma_probe}
void write_probe_json(const std::filesystem::path& path, const ProbeProfile& probe);

/// All tunable parameter blocks with their defaults. Unknown keys anywhere in
/// the file are rejected.
struct Config {
    EnergyWeights energy;
    PyramidSpec pyramid;
    ConfidenceParams confidence;
    LC2Params lc2;
    double sigma_smooth = 40.0;

    void validate() const;
};

Config read_config_json(const std::filesystem::path& path);
void write_config_json(const std::filesystem::path& path, const Config& cfg);

/// Phantom spec files: either a single {"kind": ...} object or
/// {"sequence": [...]} of them, plus optional width/height/seed.
struct PhantomRequest {
    std::vector<DeformSpec> specs;  // one entry = single scene; more = sequence
    int width = 256;
    int height = 256;
};

PhantomRequest read_phantom_request_json(const std::filesystem::path& path);

/// Writes a scene as PGM/.flo fixtures plus a manifest.json into a directory.
void write_scene(const std::filesystem::path& dir, const PhantomScene& scene);
void write_sequence(const std::filesystem::path& dir, const PhantomSequence& seq);

}  // namespace usct
