#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bts/fusion.hpp"
#include "bts/metrics.hpp"
#include "bts/phantom.hpp"
#include "bts/pipeline.hpp"

namespace {

std::vector<double> parse_triplet(const std::string& csv, const char* what) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    if (out.size() != 3 && out.size() != 4)
        throw std::runtime_error(std::string(what) + ": expected 3 or 4 comma-separated values");
    return out;
}

void apply_theta_overrides(bts::PostprocessThresholds& th,
                           const std::vector<std::string>& pairs) {
    for (const std::string& p : pairs) {
        auto eq = p.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("--theta expects NAME=VALUE, got " + p);
        std::string name = p.substr(0, eq);
        double value = std::stod(p.substr(eq + 1));
        if (name == "theta11") th.t11 = value;
        else if (name == "theta12") th.t12 = value;
        else if (name == "theta21") th.t21 = value;
        else if (name == "theta22") th.t22 = value;
        else if (name == "theta23") th.t23 = value;
        else if (name == "theta31") th.t31 = value;
        else if (name == "theta41") th.t41 = value;
        else if (name == "theta61") th.t61 = value;
        else if (name == "theta62") th.t62 = value;
        else throw std::runtime_error("unknown threshold name: " + name);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-modal volumetric tumor segmentation pipeline"};
    app.require_subcommand(1);

    // ---- phantom ----
    auto* cmd_phantom = app.add_subcommand("phantom", "generate a synthetic labeled volume");
    std::uint64_t ph_seed = 0;
    int ph_dim = 32;
    double ph_noise = 8.0;
    std::string ph_out, ph_labels;
    cmd_phantom->add_option("--seed", ph_seed);
    cmd_phantom->add_option("--dim", ph_dim, "cubic volume side length");
    cmd_phantom->add_option("--noise", ph_noise);
    cmd_phantom->add_option("--out", ph_out)->required();
    cmd_phantom->add_option("--labels", ph_labels)->required();

    // ---- preprocess ----
    auto* cmd_pre = app.add_subcommand("preprocess", "intensity normalization");
    std::string pre_in, pre_out, pre_sigma, pre_offset;
    cmd_pre->add_option("--in", pre_in)->required();
    cmd_pre->add_option("--out", pre_out)->required();
    cmd_pre->add_option("--sigma", pre_sigma, "per-channel target deviations, comma separated");
    cmd_pre->add_option("--offset", pre_offset, "per-channel target offsets, comma separated");

    // ---- train-fcnn ----
    auto* cmd_tf = app.add_subcommand("train-fcnn", "step 1: patch training");
    bts::PipelineConfig tf;
    std::string tf_axis = "axial", tf_out, tf_config;
    cmd_tf->add_option("--config", tf_config);
    cmd_tf->add_option("--data", tf.data_dir);
    cmd_tf->add_option("--axis", tf_axis)->check(CLI::IsMember({"axial", "coronal", "sagittal"}));
    cmd_tf->add_option("--n", tf.n);
    cmd_tf->add_option("--hidden", tf.hidden);
    cmd_tf->add_option("--per-class", tf.per_class);
    cmd_tf->add_option("--epochs", tf.schedule.epochs);
    cmd_tf->add_option("--lr", tf.schedule.base_lr);
    cmd_tf->add_option("--batch", tf.schedule.batch_size);
    cmd_tf->add_option("--seed", tf.seed);
    cmd_tf->add_option("--out", tf_out);

    // ---- train-crf ----
    auto* cmd_tc = app.add_subcommand("train-crf", "step 2: CRF training, FCNN frozen");
    bts::PipelineConfig tc;
    std::string tc_fcnn, tc_axis = "axial", tc_out, tc_config;
    cmd_tc->add_option("--config", tc_config);
    cmd_tc->add_option("--fcnn", tc_fcnn);
    cmd_tc->add_option("--slices", tc.data_dir);
    cmd_tc->add_option("--axis", tc_axis)->check(CLI::IsMember({"axial", "coronal", "sagittal"}));
    cmd_tc->add_option("--lr", tc.crf_lr);
    cmd_tc->add_option("--epochs", tc.crf_epochs);
    cmd_tc->add_option("--iterations", tc.crf_iterations);
    cmd_tc->add_option("--max-slices", tc.max_train_slices);
    cmd_tc->add_option("--out", tc_out);

    // ---- finetune ----
    auto* cmd_ft = app.add_subcommand("finetune", "step 3: joint fine-tuning");
    bts::PipelineConfig ft;
    std::string ft_fcnn, ft_crf, ft_axis = "axial", ft_config;
    cmd_ft->add_option("--config", ft_config);
    cmd_ft->add_option("--fcnn", ft_fcnn);
    cmd_ft->add_option("--crf", ft_crf);
    cmd_ft->add_option("--slices", ft.data_dir);
    cmd_ft->add_option("--axis", ft_axis)->check(CLI::IsMember({"axial", "coronal", "sagittal"}));
    cmd_ft->add_option("--lr", ft.finetune_lr);
    cmd_ft->add_option("--epochs", ft.finetune_epochs);
    cmd_ft->add_option("--max-slices", ft.max_train_slices);

    // ---- segment ----
    auto* cmd_seg = app.add_subcommand("segment", "full segmentation flow");
    bts::PipelineConfig seg;
    std::string seg_config, seg_model_a, seg_model_c, seg_model_s;
    bool seg_no_post = false, seg_no_crf = false, seg_no_norm = false;
    cmd_seg->add_option("--config", seg_config);
    cmd_seg->add_option("--in", seg.input);
    cmd_seg->add_option("--out", seg.output);
    cmd_seg->add_option("--views", seg.views)->delimiter(',');
    cmd_seg->add_option("--model-axial", seg_model_a);
    cmd_seg->add_option("--model-coronal", seg_model_c);
    cmd_seg->add_option("--model-sagittal", seg_model_s);
    cmd_seg->add_option("--crf", seg.crf_model);
    cmd_seg->add_option("--crf-iterations", seg.crf_iterations);
    cmd_seg->add_option("--message-mode", seg.message_mode)
        ->check(CLI::IsMember({"windowed", "exact"}));
    cmd_seg->add_option("--dump-dir", seg.dump_dir);
    cmd_seg->add_flag("--no-postprocess", seg_no_post);
    cmd_seg->add_flag("--no-crf", seg_no_crf);
    cmd_seg->add_flag("--no-normalize", seg_no_norm);

    // ---- fuse ----
    auto* cmd_fuse = app.add_subcommand("fuse", "majority-vote fusion of three views");
    std::string fu_a, fu_c, fu_s, fu_out;
    cmd_fuse->add_option("--axial", fu_a)->required();
    cmd_fuse->add_option("--coronal", fu_c)->required();
    cmd_fuse->add_option("--sagittal", fu_s)->required();
    cmd_fuse->add_option("--out", fu_out)->required();

    // ---- postprocess ----
    auto* cmd_post = app.add_subcommand("postprocess", "six-step rule-based cleanup");
    std::string po_labels, po_volume, po_out;
    std::vector<int> po_skip;
    std::vector<std::string> po_theta;
    cmd_post->add_option("--labels", po_labels)->required();
    cmd_post->add_option("--volume", po_volume)->required();
    cmd_post->add_option("--out", po_out)->required();
    cmd_post->add_option("--skip-step", po_skip);
    cmd_post->add_option("--theta", po_theta, "NAME=VALUE threshold override");

    // ---- evaluate ----
    auto* cmd_eval = app.add_subcommand("evaluate", "region-wise Dice/PPV/Sensitivity");
    std::string ev_pred, ev_truth, ev_out;
    cmd_eval->add_option("--pred", ev_pred)->required();
    cmd_eval->add_option("--truth", ev_truth)->required();
    cmd_eval->add_option("--out", ev_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*cmd_phantom) {
            bts::PhantomConfig cfg;
            cfg.dims = {ph_dim, ph_dim, ph_dim};
            cfg.noise_scale = ph_noise;
            auto [vol, lab] = bts::generate_phantom(ph_seed, cfg);
            bts::save_volume(ph_out, vol);
            bts::save_label_volume(ph_labels, lab);
        } else if (*cmd_pre) {
            auto vol = bts::load_volume(pre_in);
            bts::NormalizationTargets targets = bts::default_targets();
            if (!pre_sigma.empty()) targets.sigma = parse_triplet(pre_sigma, "--sigma");
            if (!pre_offset.empty()) targets.offset = parse_triplet(pre_offset, "--offset");
            bts::save_volume(pre_out, bts::normalize_volume(vol, targets));
        } else if (*cmd_tf) {
            if (!tf_config.empty()) {
                auto base = bts::config_from_file(tf_config);
                base.views = {tf_axis};
                tf = base;
            }
            tf.views = {tf_axis};
            tf.train_steps = {1};
            if (!tf_out.empty()) tf.models[tf_axis] = tf_out;
            bts::run_train(tf);
        } else if (*cmd_tc) {
            if (!tc_config.empty()) {
                auto base = bts::config_from_file(tc_config);
                tc = base;
            }
            tc.views = {tc_axis};
            tc.train_steps = {2};
            if (!tc_fcnn.empty()) tc.models[tc_axis] = tc_fcnn;
            if (!tc_out.empty()) tc.crf_model = tc_out;
            bts::run_train(tc);
        } else if (*cmd_ft) {
            if (!ft_config.empty()) {
                auto base = bts::config_from_file(ft_config);
                ft = base;
            }
            ft.views = {ft_axis};
            ft.train_steps = {3};
            if (!ft_fcnn.empty()) ft.models[ft_axis] = ft_fcnn;
            if (!ft_crf.empty()) ft.crf_model = ft_crf;
            bts::run_train(ft);
        } else if (*cmd_seg) {
            if (!seg_config.empty()) {
                auto base = bts::config_from_file(seg_config);
                // explicit flags override the config file
                if (seg.input.empty()) seg.input = base.input;
                if (seg.output.empty()) seg.output = base.output;
                if (seg.models.empty()) seg.models = base.models;
                if (seg.crf_model.empty()) seg.crf_model = base.crf_model;
                if (seg.dump_dir.empty()) seg.dump_dir = base.dump_dir;
                seg.n = base.n;
                seg.hidden = base.hidden;
                seg.channels = base.channels;
                seg.sigma = base.sigma;
                seg.offset = base.offset;
                seg.thresholds = base.thresholds;
                seg.post_steps = base.post_steps;
                if (seg.views == std::vector<std::string>{"axial"}) seg.views = base.views;
            }
            if (!seg_model_a.empty()) seg.models["axial"] = seg_model_a;
            if (!seg_model_c.empty()) seg.models["coronal"] = seg_model_c;
            if (!seg_model_s.empty()) seg.models["sagittal"] = seg_model_s;
            if (seg_no_post) seg.do_postprocess = false;
            if (seg_no_crf) seg.use_crf = false;
            if (seg_no_norm) seg.do_normalize = false;
            bts::run_segment(seg);
        } else if (*cmd_fuse) {
            auto fused = bts::fuse_volumes(bts::load_label_volume(fu_a),
                                           bts::load_label_volume(fu_c),
                                           bts::load_label_volume(fu_s));
            bts::save_label_volume(fu_out, fused);
        } else if (*cmd_post) {
            auto labels = bts::load_label_volume(po_labels);
            auto volume = bts::load_volume(po_volume);
            bts::PostprocessThresholds th;
            apply_theta_overrides(th, po_theta);
            std::set<int> steps = {1, 2, 3, 4, 5, 6};
            for (int s : po_skip) steps.erase(s);
            bts::save_label_volume(po_out, bts::postprocess(labels, volume, th, steps));
        } else if (*cmd_eval) {
            auto report = bts::score_all(bts::load_label_volume(ev_pred),
                                         bts::load_label_volume(ev_truth));
            std::string text = bts::report_to_json(report);
            if (!ev_out.empty()) {
                std::ofstream out(ev_out);
                out << text << '\n';
            }
            std::cout << text << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
