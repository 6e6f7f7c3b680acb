#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "usct/errors.hpp"
#include "usct/grid.hpp"
#include "usct/io.hpp"
#include "usct/metrics.hpp"
#include "usct/phantom.hpp"
#include "usct/transfer.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config_path;
    std::uint64_t seed = 0;

    usct::Config load() const {
        if (config_path.empty()) return usct::Config{};
        return usct::read_config_json(config_path);
    }
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "JSON config file; flags override its values");
    cmd->add_option("--seed", c.seed, "random seed (phantom generation)");
}

void write_csv(const fs::path& path, const std::string& header, const std::string& row) {
    std::ofstream out(path);
    if (!out) throw usct::Error("cannot write " + path.string());
    out << header << "\n" << row << "\n";
}

double mean_epe(const usct::FlowField& est, const usct::FlowField& gt) {
    double acc = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i)
        acc += std::hypot(est.dx_plane()[i] - gt.dx_plane()[i], est.dy_plane()[i] - gt.dy_plane()[i]);
    return acc / static_cast<double>(est.size());
}

int run(int argc, char** argv) {
    CLI::App app{"ultrasound-driven CT slice updating"};
    app.require_subcommand(1);

    // ---- phantom ----
    auto* cmd_phantom = app.add_subcommand("phantom", "generate a synthetic fixture directory");
    Common phantom_common;
    std::string phantom_spec, phantom_out;
    cmd_phantom->add_option("--spec", phantom_spec, "deformation spec JSON")->required();
    cmd_phantom->add_option("--out", phantom_out, "output directory")->required();
    add_common(cmd_phantom, phantom_common);

    // ---- confidence ----
    auto* cmd_conf = app.add_subcommand("confidence", "random-walk confidence map");
    Common conf_common;
    std::string conf_in, conf_out;
    double conf_alpha = -1, conf_beta = -1, conf_gamma = -1;
    cmd_conf->add_option("--in", conf_in, "input PGM")->required();
    cmd_conf->add_option("--out", conf_out, "output 16-bit PGM")->required();
    cmd_conf->add_option("--alpha", conf_alpha, "depth attenuation rate");
    cmd_conf->add_option("--beta", conf_beta, "contrast sensitivity");
    cmd_conf->add_option("--gamma", conf_gamma, "lateral edge penalty");
    add_common(cmd_conf, conf_common);

    // ---- flow ----
    auto* cmd_flow = app.add_subcommand("flow", "bidirectional deformation estimation");
    Common flow_common;
    std::string flow_i0, flow_i1, flow_mid, flow_pseudo01, flow_pseudo10, flow_report;
    std::string flow_gt01, flow_gt10;
    std::vector<std::string> flow_out;
    cmd_flow->add_option("--i0", flow_i0, "frame 0 PGM")->required();
    cmd_flow->add_option("--i1", flow_i1, "frame 1 PGM")->required();
    cmd_flow->add_option("--mid", flow_mid, "intermediate frame for the bisect candidate");
    cmd_flow->add_option("--pseudo,--pseudo01", flow_pseudo01, "pseudo-label .flo for the 0->1 direction");
    cmd_flow->add_option("--pseudo10", flow_pseudo10, "pseudo-label .flo for the 1->0 direction");
    cmd_flow->add_option("--out", flow_out, "output files: f01.flo f10.flo")->expected(2)->required();
    cmd_flow->add_option("--report", flow_report, "CSV report path");
    cmd_flow->add_option("--gt01", flow_gt01, "ground-truth .flo for EPE reporting");
    cmd_flow->add_option("--gt10", flow_gt10, "ground-truth .flo for EPE reporting");
    add_common(cmd_flow, flow_common);

    // ---- register ----
    auto* cmd_reg = app.add_subcommand("register", "LC2 rigid refinement");
    Common reg_common;
    std::string reg_us, reg_ct, reg_init, reg_out;
    std::vector<double> reg_bounds;
    cmd_reg->add_option("--us", reg_us, "ultrasound PGM")->required();
    cmd_reg->add_option("--ct", reg_ct, "CT slice PGM")->required();
    cmd_reg->add_option("--init", reg_init, "initial pose JSON")->required();
    cmd_reg->add_option("--out", reg_out, "refined pose JSON")->required();
    cmd_reg->add_option("--bounds", reg_bounds, "search bounds: tx_max ty_max theta_max_deg")->expected(3);
    add_common(cmd_reg, reg_common);

    // ---- update ----
    auto* cmd_up = app.add_subcommand("update", "deform a CT slice from an ultrasound frame pair");
    Common up_common;
    std::string up_ct, up_prev, up_curr, up_mid, up_pose, up_probe, up_out, up_field, up_report;
    double up_sigma_smooth = -1;
    cmd_up->add_option("--ct", up_ct, "CT slice PGM")->required();
    cmd_up->add_option("--i-prev", up_prev, "previous ultrasound frame")->required();
    cmd_up->add_option("--i-curr", up_curr, "current ultrasound frame")->required();
    cmd_up->add_option("--i-mid", up_mid, "intermediate frame enabling the bisect candidate");
    cmd_up->add_option("--pose", up_pose, "US->CT placement pose JSON")->required();
    cmd_up->add_option("--probe", up_probe, "probe profile JSON")->required();
    cmd_up->add_option("--out", up_out, "updated slice PGM")->required();
    cmd_up->add_option("--field", up_field, "final field .flo");
    cmd_up->add_option("--report", up_report, "CSV report path");
    cmd_up->add_option("--sigma-smooth", up_sigma_smooth, "EDT decay length in px");
    add_common(cmd_up, up_common);

    // ---- eval ----
    auto* cmd_eval = app.add_subcommand("eval", "metric report");
    Common eval_common;
    std::string ev_i0, ev_i1, ev_f01, ev_f10, ev_mask0, ev_mask1;
    std::string ev_pred, ev_gt, ev_pred_mask, ev_gt_mask, ev_out;
    cmd_eval->add_option("--i0", ev_i0, "frame 0 (pair mode)");
    cmd_eval->add_option("--i1", ev_i1, "frame 1 (pair mode)");
    cmd_eval->add_option("--f01", ev_f01, "flow 0->1 (pair mode)");
    cmd_eval->add_option("--f10", ev_f10, "flow 1->0 (pair mode)");
    cmd_eval->add_option("--mask0", ev_mask0, "mask for frame 0");
    cmd_eval->add_option("--mask1", ev_mask1, "mask for frame 1");
    cmd_eval->add_option("--pred", ev_pred, "predicted image (direct mode)");
    cmd_eval->add_option("--gt", ev_gt, "reference image (direct mode)");
    cmd_eval->add_option("--pred-mask", ev_pred_mask, "predicted mask (direct mode)");
    cmd_eval->add_option("--gt-mask", ev_gt_mask, "reference mask (direct mode)");
    cmd_eval->add_option("--out", ev_out, "metrics CSV")->required();
    add_common(cmd_eval, eval_common);

    CLI11_PARSE(app, argc, argv);

    if (cmd_phantom->parsed()) {
        usct::PhantomRequest req = usct::read_phantom_request_json(phantom_spec);
        if (cmd_phantom->count("--seed") > 0)
            for (auto& s : req.specs) s.seed = phantom_common.seed;
        if (req.specs.size() == 1) {
            usct::write_scene(phantom_out, usct::generate(req.specs[0], req.width, req.height));
        } else {
            usct::write_sequence(phantom_out, usct::generate_sequence(req.specs, req.width, req.height));
        }
        std::cout << "wrote fixture to " << phantom_out << "\n";
        return 0;
    }

    if (cmd_conf->parsed()) {
        usct::Config cfg = conf_common.load();
        if (conf_alpha >= 0) cfg.confidence.alpha = conf_alpha;
        if (conf_beta >= 0) cfg.confidence.beta = conf_beta;
        if (conf_gamma >= 0) cfg.confidence.gamma = conf_gamma;
        const usct::Image2D img = usct::read_pgm(conf_in);
        usct::write_pgm(conf_out, usct::confidence(img, cfg.confidence), 65535);
        std::cout << "wrote " << conf_out << "\n";
        return 0;
    }

    if (cmd_flow->parsed()) {
        const usct::Config cfg = flow_common.load();
        const usct::Image2D i0 = usct::read_pgm(flow_i0);
        const usct::Image2D i1 = usct::read_pgm(flow_i1);
        auto [conf0, conf1] = usct::confidence_pair(i0, i1, cfg.confidence);

        std::optional<usct::FlowField> pseudo01, pseudo10;
        if (!flow_pseudo01.empty()) pseudo01 = usct::read_flo(flow_pseudo01);
        if (!flow_pseudo10.empty()) pseudo10 = usct::read_flo(flow_pseudo10);

        auto [f01, f10] = usct::estimate_bidirectional(i0, i1, conf0, conf1, cfg.pyramid, cfg.energy,
                                                       pseudo01 ? &*pseudo01 : nullptr,
                                                       pseudo10 ? &*pseudo10 : nullptr);
        int selected = 0;
        if (!flow_mid.empty()) {
            const usct::Image2D imid = usct::read_pgm(flow_mid);
            const usct::ConfidenceMap confm = usct::confidence(imid, cfg.confidence);
            auto [b01, b10] = usct::bisect_pair(i0, imid, i1, conf0, confm, conf1, cfg.pyramid, cfg.energy);
            auto [sel01, chosen01] = usct::select_candidate(i0, i1, {f01, b01});
            auto [sel10, chosen10] = usct::select_candidate(i1, i0, {f10, b10});
            f01 = chosen01;
            f10 = chosen10;
            selected = std::max(sel01, sel10);
        }
        usct::write_flo(flow_out[0], f01);
        usct::write_flo(flow_out[1], f10);

        if (!flow_report.empty()) {
            const usct::MetricReport rep = usct::evaluate_pair(i0, i1, f01, f10);
            std::string header = usct::MetricReport::csv_header() + ",selected";
            std::string row = rep.csv_row() + "," + std::to_string(selected);
            if (!flow_gt01.empty() && !flow_gt10.empty()) {
                const double epe01 = mean_epe(f01, usct::read_flo(flow_gt01));
                const double epe10 = mean_epe(f10, usct::read_flo(flow_gt10));
                header += ",epe01,epe10,epe_mean";
                row += "," + std::to_string(epe01) + "," + std::to_string(epe10) + "," +
                       std::to_string(0.5 * (epe01 + epe10));
            }
            write_csv(flow_report, header, row);
        }
        std::cout << "wrote " << flow_out[0] << " and " << flow_out[1] << "\n";
        return 0;
    }

    if (cmd_reg->parsed()) {
        usct::Config cfg = reg_common.load();
        if (!reg_bounds.empty()) {
            cfg.lc2.tx_max = reg_bounds[0];
            cfg.lc2.ty_max = reg_bounds[1];
            cfg.lc2.theta_max = reg_bounds[2] * 3.14159265358979323846 / 180.0;
        }
        const usct::Image2D us = usct::read_pgm(reg_us);
        const usct::Image2D ct = usct::read_pgm(reg_ct);
        const usct::RigidTransform2D init = usct::read_pose_json(reg_init);
        auto [pose, score] = usct::rigid_refine(us, ct, init, cfg.lc2);
        usct::write_pose_json(reg_out, pose);
        std::cout << "pose tx=" << pose.tx << " ty=" << pose.ty
                  << " theta_deg=" << pose.theta * 180.0 / 3.14159265358979323846 << " lc2=" << score << "\n";
        return 0;
    }

    if (cmd_up->parsed()) {
        const usct::Config cfg = up_common.load();
        usct::UpdateParams params;
        params.energy = cfg.energy;
        params.pyramid = cfg.pyramid;
        params.confidence = cfg.confidence;
        params.transfer.sigma_smooth = (up_sigma_smooth > 0) ? up_sigma_smooth : cfg.sigma_smooth;
        params.transfer.placement = usct::read_pose_json(up_pose);
        params.probe = usct::read_probe_json(up_probe);

        const usct::Image2D ct0 = usct::read_pgm(up_ct);
        const usct::Image2D prev = usct::read_pgm(up_prev);
        const usct::Image2D curr = usct::read_pgm(up_curr);
        std::optional<usct::Image2D> mid;
        if (!up_mid.empty()) mid = usct::read_pgm(up_mid);

        const usct::UpdateResult res = usct::update_pipeline(ct0, prev, curr, params, mid ? &*mid : nullptr);
        usct::write_pgm(up_out, res.updated, 65535);
        if (!up_field.empty()) usct::write_flo(up_field, res.d_final);
        if (!up_report.empty())
            write_csv(up_report, usct::UpdateReport::csv_header(), res.report.csv_row());
        std::cout << "wrote " << up_out << " (total " << res.report.total_ms << " ms)\n";
        return 0;
    }

    if (cmd_eval->parsed()) {
        if (!ev_pred.empty() || !ev_gt.empty()) {
            if (ev_pred.empty() || ev_gt.empty())
                throw usct::Error("eval: direct mode needs both --pred and --gt");
            const usct::Image2D pred = usct::read_pgm(ev_pred);
            const usct::Image2D gt = usct::read_pgm(ev_gt);
            usct::MetricReport rep;
            rep.mae = usct::mae(pred, gt);
            rep.ncc = usct::ncc(pred, gt);
            rep.ssim = usct::ssim(pred, gt);
            if (!ev_pred_mask.empty() && !ev_gt_mask.empty())
                rep.dice = usct::dice(usct::read_pgm_mask(ev_pred_mask), usct::read_pgm_mask(ev_gt_mask));
            write_csv(ev_out, usct::MetricReport::csv_header(), rep.csv_row());
        } else {
            if (ev_i0.empty() || ev_i1.empty() || ev_f01.empty() || ev_f10.empty())
                throw usct::Error("eval: pair mode needs --i0 --i1 --f01 --f10");
            const usct::Image2D i0 = usct::read_pgm(ev_i0);
            const usct::Image2D i1 = usct::read_pgm(ev_i1);
            const usct::FlowField f01 = usct::read_flo(ev_f01);
            const usct::FlowField f10 = usct::read_flo(ev_f10);
            std::optional<usct::Mask2D> m0, m1;
            if (!ev_mask0.empty()) m0 = usct::read_pgm_mask(ev_mask0);
            if (!ev_mask1.empty()) m1 = usct::read_pgm_mask(ev_mask1);
            const usct::MetricReport rep =
                usct::evaluate_pair(i0, i1, f01, f10, m0 ? &*m0 : nullptr, m1 ? &*m1 : nullptr);
            write_csv(ev_out, usct::MetricReport::csv_header(), rep.csv_row());
        }
        std::cout << "wrote " << ev_out << "\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
