#include "bts/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "bts/fusion.hpp"

namespace bts {

namespace fs = std::filesystem;
using nlohmann::json;

void apply_config_json(PipelineConfig& cfg, const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("config: malformed JSON: ") + e.what());
    }
    auto get = [&](const char* key, auto& field) {
        if (doc.contains(key)) field = doc[key].template get<std::decay_t<decltype(field)>>();
    };
    get("n", cfg.n);
    get("hidden", cfg.hidden);
    get("channels", cfg.channels);
    get("seed", cfg.seed);
    get("input", cfg.input);
    get("output", cfg.output);
    get("views", cfg.views);
    if (doc.contains("models"))
        cfg.models = doc["models"].get<std::map<std::string, std::string>>();
    get("crf_model", cfg.crf_model);
    get("use_crf", cfg.use_crf);
    get("crf_iterations", cfg.crf_iterations);
    get("message_mode", cfg.message_mode);
    get("normalize", cfg.do_normalize);
    get("sigma", cfg.sigma);
    get("offset", cfg.offset);
    get("postprocess", cfg.do_postprocess);
    if (doc.contains("post_steps")) {
        cfg.post_steps.clear();
        for (int s : doc["post_steps"]) cfg.post_steps.insert(s);
    }
    if (doc.contains("thresholds")) {
        auto& t = doc["thresholds"];
        auto th = [&](const char* key, double& field) {
            if (t.contains(key)) field = t[key].get<double>();
        };
        th("theta11", cfg.thresholds.t11);
        th("theta12", cfg.thresholds.t12);
        th("theta21", cfg.thresholds.t21);
        th("theta22", cfg.thresholds.t22);
        th("theta23", cfg.thresholds.t23);
        th("theta31", cfg.thresholds.t31);
        th("theta41", cfg.thresholds.t41);
        th("theta61", cfg.thresholds.t61);
        th("theta62", cfg.thresholds.t62);
    }
    get("dump_dir", cfg.dump_dir);
    get("data_dir", cfg.data_dir);
    get("per_class", cfg.per_class);
    if (doc.contains("schedule")) {
        auto& s = doc["schedule"];
        if (s.contains("base_lr")) cfg.schedule.base_lr = s["base_lr"].get<double>();
        if (s.contains("decay_every")) cfg.schedule.decay_every = s["decay_every"].get<int>();
        if (s.contains("decay_factor"))
            cfg.schedule.decay_factor = s["decay_factor"].get<double>();
        if (s.contains("epochs")) cfg.schedule.epochs = s["epochs"].get<int>();
        if (s.contains("batch_size")) cfg.schedule.batch_size = s["batch_size"].get<int>();
        if (s.contains("momentum")) cfg.schedule.momentum = s["momentum"].get<double>();
        if (s.contains("seed")) cfg.schedule.seed = s["seed"].get<std::uint64_t>();
    }
    get("crf_lr", cfg.crf_lr);
    get("crf_epochs", cfg.crf_epochs);
    get("finetune_lr", cfg.finetune_lr);
    get("finetune_epochs", cfg.finetune_epochs);
    get("max_train_slices", cfg.max_train_slices);
    if (doc.contains("train_steps")) {
        cfg.train_steps.clear();
        for (int s : doc["train_steps"]) cfg.train_steps.insert(s);
    }
}

PipelineConfig config_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open config");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    PipelineConfig cfg;
    apply_config_json(cfg, text);
    return cfg;
}

namespace {

MessageMode mode_from_name(const std::string& name) {
    if (name == "exact") return MessageMode::Exact;
    if (name == "windowed") return MessageMode::Windowed;
    throw std::runtime_error("unknown message mode: " + name);
}

std::vector<std::uint8_t> argmax_labels(const Tensor& q) {
    const std::size_t plane = std::size_t(q.h) * q.w;
    std::vector<std::uint8_t> out(plane);
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        for (int c = 1; c < q.c; ++c)
            if (q.v[c * plane + i] > q.v[best * plane + i]) best = c;  // ties -> lower label
        out[i] = std::uint8_t(best);
    }
    return out;
}

}  // namespace

LabelVolume segment_view(const NetworkParameters& fcnn, const CrfParameters* crf,
                         const MultiModalVolume& normalized, ViewAxis axis, MessageMode mode) {
    LabelVolume out = make_label_volume(normalized.dims);
    const int extent = axis_extent(normalized.dims, axis);
    for (int idx = 0; idx < extent; ++idx) {
        SliceTensor slice = extract_slice(normalized, axis, idx);
        ProbabilityMaps maps = segment_slice(fcnn, slice);
        Tensor q = crf ? crf_rnn_forward(maps.scores, slice, *crf, mode) : maps.probs;
        insert_label_slice(out, axis, idx, argmax_labels(q));
    }
    return out;
}

namespace {

[[noreturn]] void stage_error(const std::string& stage, const std::exception& e) {
    throw std::runtime_error("[" + stage + "] " + e.what());
}

}  // namespace

LabelVolume run_segment(const PipelineConfig& cfg) {
    if (cfg.views.empty()) throw std::runtime_error("[config] no views requested");
    MultiModalVolume vol;
    try {
        vol = load_volume(cfg.input);
    } catch (const std::exception& e) {
        stage_error("load", e);
    }

    MultiModalVolume normalized = vol;
    if (cfg.do_normalize) {
        try {
            normalized = normalize_volume(vol, {cfg.sigma, cfg.offset});
        } catch (const std::exception& e) {
            stage_error("preprocess", e);
        }
    }

    CrfParameters crf;
    if (cfg.use_crf) {
        crf = cfg.crf_model.empty() ? default_crf() : load_crf(cfg.crf_model);
        if (cfg.crf_model.empty()) crf.iterations = cfg.crf_iterations;
    }
    MessageMode mode = mode_from_name(cfg.message_mode);

    std::map<std::string, LabelVolume> per_view;
    for (const std::string& view : cfg.views) {
        try {
            auto it = cfg.models.find(view);
            if (it == cfg.models.end())
                throw std::runtime_error("missing model for view " + view);
            NetworkParameters fcnn = load_model(it->second);
            per_view.emplace(view, segment_view(fcnn, cfg.use_crf ? &crf : nullptr, normalized,
                                                axis_from_name(view), mode));
        } catch (const std::exception& e) {
            stage_error("segment:" + view, e);
        }
    }

    auto dump = [&](const std::string& name, const LabelVolume& lab) {
        if (!cfg.dump_dir.empty())
            save_label_volume((fs::path(cfg.dump_dir) / (name + ".mmv")).string(), lab);
    };
    if (!cfg.dump_dir.empty()) {
        fs::create_directories(cfg.dump_dir);
        save_volume((fs::path(cfg.dump_dir) / "normalized.mmv").string(), normalized);
        for (const auto& [view, lab] : per_view) dump("view_" + view, lab);
    }

    LabelVolume fused;
    try {
        if (per_view.size() == 1) {
            fused = per_view.begin()->second;
        } else if (per_view.size() == 3) {
            fused = fuse_volumes(per_view.at("axial"), per_view.at("coronal"),
                                 per_view.at("sagittal"));
        } else {
            throw std::runtime_error("fusion requires exactly 1 or 3 views");
        }
    } catch (const std::exception& e) {
        stage_error("fuse", e);
    }
    dump("fused", fused);

    LabelVolume final_labels = fused;
    if (cfg.do_postprocess) {
        try {
            final_labels = postprocess(fused, normalized, cfg.thresholds, cfg.post_steps);
        } catch (const std::exception& e) {
            stage_error("postprocess", e);
        }
    }

    if (!cfg.output.empty()) {
        try {
            save_label_volume(cfg.output, final_labels);
        } catch (const std::exception& e) {
            stage_error("write", e);
        }
    }
    return final_labels;
}

std::vector<std::pair<std::string, std::string>> find_training_cases(const std::string& dir) {
    std::vector<std::pair<std::string, std::string>> cases;
    if (!fs::is_directory(dir)) throw std::runtime_error(dir + ": not a directory");
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    for (const std::string& f : files) {
        if (!f.ends_with(".mmv") || f.ends_with("_labels.mmv")) continue;
        std::string labels = f.substr(0, f.size() - 4) + "_labels.mmv";
        if (fs::exists(labels)) cases.emplace_back(f, labels);
    }
    if (cases.empty()) throw std::runtime_error(dir + ": no (volume, labels) pairs found");
    return cases;
}

namespace {

// Slices along `axis` containing tumor, round-robin over volumes.
std::vector<SliceSample> gather_training_slices(
    const std::vector<MultiModalVolume>& vols, const std::vector<LabelVolume>& labs,
    ViewAxis axis, int max_slices) {
    std::vector<std::vector<SliceSample>> per_vol(vols.size());
    for (std::size_t v = 0; v < vols.size(); ++v) {
        int extent = axis_extent(vols[v].dims, axis);
        for (int idx = 0; idx < extent; ++idx) {
            auto plane = extract_label_slice(labs[v], axis, idx);
            bool positive = std::any_of(plane.begin(), plane.end(),
                                        [](std::uint8_t l) { return l > 0; });
            if (!positive) continue;
            per_vol[v].push_back({extract_slice(vols[v], axis, idx), std::move(plane)});
        }
    }
    std::vector<SliceSample> out;
    for (std::size_t round = 0; int(out.size()) < max_slices; ++round) {
        bool any = false;
        for (auto& pv : per_vol) {
            if (round < pv.size()) {
                any = true;
                out.push_back(std::move(pv[round]));
                if (int(out.size()) >= max_slices) break;
            }
        }
        if (!any) break;
    }
    if (out.empty()) throw std::runtime_error("no tumor-bearing training slices found");
    return out;
}

void write_trace(const std::string& path, const std::vector<double>& trace) {
    std::ofstream out(path);
    out << json(trace).dump() << '\n';
}

}  // namespace

void run_train(const PipelineConfig& cfg) {
    auto cases = find_training_cases(cfg.data_dir);
    std::vector<MultiModalVolume> vols;
    std::vector<LabelVolume> labs;
    for (const auto& [vp, lp] : cases) {
        try {
            MultiModalVolume v = load_volume(vp);
            if (cfg.do_normalize) v = normalize_volume(v, {cfg.sigma, cfg.offset});
            vols.push_back(std::move(v));
            labs.push_back(load_label_volume(lp));
        } catch (const std::exception& e) {
            stage_error("load", e);
        }
    }

    for (const std::string& view : cfg.views) {
        auto model_it = cfg.models.find(view);
        if (model_it == cfg.models.end())
            throw std::runtime_error("[config] no output model path for view " + view);
        const std::string& model_path = model_it->second;
        ViewAxis axis = axis_from_name(view);

        NetworkParameters fcnn = make_network(cfg.n, cfg.channels, cfg.hidden, cfg.seed);
        if (cfg.train_steps.count(1)) {
            try {
                PatchBatch all;
                for (std::size_t v = 0; v < vols.size(); ++v) {
                    PatchBatch b = sample_training_patches(
                        vols[v], labs[v], cfg.per_class, cfg.n, axis,
                        cfg.seed + 0x1000 * (v + 1) + std::hash<std::string>{}(view));
                    for (auto& p : b.patches) all.patches.push_back(std::move(p));
                    for (int c = 0; c < 5; ++c) all.per_class[c] += b.per_class[c];
                }
                auto trace = train_step1(fcnn, all, cfg.schedule);
                save_model(model_path, fcnn);
                write_trace(model_path + ".trace.json", trace);
            } catch (const std::exception& e) {
                stage_error("train-fcnn:" + view, e);
            }
        } else {
            fcnn = load_model(model_path);
        }

        if (!cfg.train_steps.count(2) && !cfg.train_steps.count(3)) continue;
        if (cfg.crf_model.empty())
            throw std::runtime_error("[config] steps 2/3 need a crf_model output path");
        auto slices = gather_training_slices(vols, labs, axis, cfg.max_train_slices);
        CrfParameters crf = default_crf();
        crf.iterations = cfg.crf_iterations;

        if (cfg.train_steps.count(2)) {
            try {
                auto trace = train_step2(fcnn, crf, slices, cfg.crf_lr, cfg.crf_epochs);
                save_crf(cfg.crf_model, crf);
                write_trace(cfg.crf_model + ".trace.json", trace);
            } catch (const std::exception& e) {
                stage_error("train-crf:" + view, e);
            }
        }
        if (cfg.train_steps.count(3)) {
            try {
                auto trace =
                    finetune_step3(fcnn, crf, slices, cfg.finetune_lr, cfg.finetune_epochs);
                save_model(model_path, fcnn);
                save_crf(cfg.crf_model, crf);
                write_trace(model_path + ".finetune.trace.json", trace);
            } catch (const std::exception& e) {
                stage_error("finetune:" + view, e);
            }
        }
    }
}

}  // namespace bts
