#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "bts/fusion.hpp"
#include "bts/phantom.hpp"
#include "bts/pipeline.hpp"

using namespace bts;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::path("/tmp") / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

PhantomConfig small_phantom() {
    PhantomConfig cfg;
    cfg.dims = {24, 24, 24};
    cfg.brain_radius = 11.4;
    cfg.edema_radius = 7.0;
    cfg.enhancing_radius = 5.0;
    cfg.nonenhancing_radius = 4.0;
    cfg.necrosis_radius = 3.0;
    return cfg;
}

}  // namespace

TEST_CASE("config files override the defaults field by field") {
    PipelineConfig cfg;
    apply_config_json(cfg, R"({
        "n": 1, "hidden": 8, "views": ["axial", "coronal", "sagittal"],
        "message_mode": "exact", "post_steps": [1, 4],
        "thresholds": {"theta41": 90.5},
        "schedule": {"base_lr": 0.01, "epochs": 3},
        "train_steps": [1]
    })");
    CHECK(cfg.n == 1);
    CHECK(cfg.hidden == 8);
    CHECK(cfg.views.size() == 3);
    CHECK(cfg.message_mode == "exact");
    CHECK(cfg.post_steps == std::set<int>{1, 4});
    CHECK(cfg.thresholds.t41 == 90.5);
    CHECK(cfg.thresholds.t11 == 150.0);  // untouched default
    CHECK(cfg.schedule.base_lr == 0.01);
    CHECK(cfg.schedule.epochs == 3);
    CHECK(cfg.schedule.momentum == 0.9);
    CHECK(cfg.train_steps == std::set<int>{1});
    CHECK_THROWS_WITH_AS(apply_config_json(cfg, "{nope"), doctest::Contains("malformed JSON"),
                         std::runtime_error);
}

TEST_CASE("single view without cleanup reproduces the per-view argmax") {
    TempDir dir("bts_pipe_single");
    auto [vol, labels] = generate_phantom(301, small_phantom());
    save_volume(dir.file("case.mmv"), vol);
    auto fcnn = make_network(1, 3, 2, 5);
    save_model(dir.file("axial.fcnn"), fcnn);

    PipelineConfig cfg;
    cfg.n = 1;
    cfg.hidden = 2;
    cfg.input = dir.file("case.mmv");
    cfg.output = dir.file("out.mmv");
    cfg.views = {"axial"};
    cfg.models["axial"] = dir.file("axial.fcnn");
    cfg.use_crf = false;
    cfg.do_postprocess = false;
    LabelVolume got = run_segment(cfg);

    auto normalized = normalize_volume(vol, default_targets());
    LabelVolume want = segment_view(fcnn, nullptr, normalized, ViewAxis::Axial,
                                    MessageMode::Windowed);
    CHECK(got.data == want.data);
    CHECK(load_label_volume(dir.file("out.mmv")).data == got.data);
}

TEST_CASE("identical per-view results survive fusion unchanged") {
    TempDir dir("bts_pipe_fuse");
    auto [vol, labels] = generate_phantom(302, small_phantom());
    save_volume(dir.file("case.mmv"), vol);
    auto fcnn = make_network(1, 3, 2, 6);
    // one model reused by all three views on an isotropic phantom would
    // still differ per view, so fuse a single view against itself instead
    save_model(dir.file("m.fcnn"), fcnn);

    PipelineConfig cfg;
    cfg.n = 1;
    cfg.hidden = 2;
    cfg.input = dir.file("case.mmv");
    cfg.views = {"axial"};
    cfg.models["axial"] = dir.file("m.fcnn");
    cfg.use_crf = false;
    cfg.do_postprocess = false;
    LabelVolume single = run_segment(cfg);
    LabelVolume fused = fuse_volumes(single, single, single);
    CHECK(fused.data == single.data);
}

TEST_CASE("dump directory receives the staged volumes") {
    TempDir dir("bts_pipe_dump");
    auto [vol, labels] = generate_phantom(303, small_phantom());
    save_volume(dir.file("case.mmv"), vol);
    auto fcnn = make_network(1, 3, 2, 7);
    save_model(dir.file("m.fcnn"), fcnn);

    PipelineConfig cfg;
    cfg.n = 1;
    cfg.hidden = 2;
    cfg.input = dir.file("case.mmv");
    cfg.views = {"axial"};
    cfg.models["axial"] = dir.file("m.fcnn");
    cfg.use_crf = false;
    cfg.do_postprocess = false;
    cfg.dump_dir = dir.file("stages");
    run_segment(cfg);
    CHECK(fs::exists(dir.file("stages/normalized.mmv")));
    CHECK(fs::exists(dir.file("stages/view_axial.mmv")));
    CHECK(fs::exists(dir.file("stages/fused.mmv")));
}

TEST_CASE("segmentation failures carry their stage tag") {
    PipelineConfig cfg;
    cfg.input = "/tmp/bts_definitely_missing.mmv";
    cfg.views = {"axial"};
    CHECK_THROWS_WITH_AS(run_segment(cfg), doctest::Contains("[load]"), std::runtime_error);

    TempDir dir("bts_pipe_err");
    auto [vol, labels] = generate_phantom(304, small_phantom());
    save_volume(dir.file("case.mmv"), vol);
    cfg.input = dir.file("case.mmv");
    cfg.models.clear();  // no model for the requested view
    CHECK_THROWS_WITH_AS(run_segment(cfg), doctest::Contains("[segment:axial]"),
                         std::runtime_error);
}

TEST_CASE("training case discovery pairs volumes with their labels") {
    TempDir dir("bts_pipe_cases");
    auto [vol, labels] = generate_phantom(305, small_phantom());
    save_volume(dir.file("b.mmv"), vol);
    save_label_volume(dir.file("b_labels.mmv"), labels);
    save_volume(dir.file("a.mmv"), vol);
    save_label_volume(dir.file("a_labels.mmv"), labels);
    save_volume(dir.file("orphan.mmv"), vol);  // no labels, skipped
    auto cases = find_training_cases(dir.path.string());
    REQUIRE(cases.size() == 2);
    CHECK(cases[0].first == dir.file("a.mmv"));
    CHECK(cases[1].first == dir.file("b.mmv"));
    CHECK(cases[0].second == dir.file("a_labels.mmv"));
    CHECK_THROWS(find_training_cases(dir.file("nowhere")));
}

TEST_CASE("step filtering and trace files behave as declared") {
    TempDir dir("bts_pipe_train");
    auto [vol, labels] = generate_phantom(306, small_phantom());
    save_volume(dir.file("case.mmv"), vol);
    save_label_volume(dir.file("case_labels.mmv"), labels);

    PipelineConfig cfg;
    cfg.n = 1;
    cfg.hidden = 2;
    cfg.seed = 9;
    cfg.data_dir = dir.path.string();
    cfg.views = {"axial"};
    cfg.models["axial"] = dir.file("model.fcnn");
    cfg.per_class = 2;
    cfg.schedule.epochs = 2;
    cfg.schedule.batch_size = 4;
    cfg.train_steps = {1};
    run_train(cfg);
    CHECK(fs::exists(dir.file("model.fcnn")));
    CHECK(!fs::exists(dir.file("crf.json")));
    {
        std::ifstream in(dir.file("model.fcnn.trace.json"));
        REQUIRE(bool(in));
        std::string text((std::istreambuf_iterator<char>(in)), {});
        CHECK(std::count(text.begin(), text.end(), ',') == 1);  // two epochs
    }

    // step 2 alone: CRF file appears, FCNN file stays byte-identical
    auto read_all = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), {});
    };
    std::string before = read_all(dir.file("model.fcnn"));
    cfg.train_steps = {2};
    cfg.crf_model = dir.file("crf.json");
    cfg.crf_epochs = 1;
    cfg.crf_iterations = 2;
    cfg.max_train_slices = 2;
    run_train(cfg);
    CHECK(fs::exists(dir.file("crf.json")));
    CHECK(fs::exists(dir.file("crf.json.trace.json")));
    CHECK(read_all(dir.file("model.fcnn")) == before);

    // steps 2/3 without a CRF output path are rejected up front
    cfg.crf_model.clear();
    CHECK_THROWS_WITH_AS(run_train(cfg), doctest::Contains("crf_model"), std::runtime_error);
}

TEST_CASE("same seed produces byte-identical models and segmentations") {
    TempDir dir("bts_pipe_det");
    auto [vol, labels] = generate_phantom(307, small_phantom());
    save_volume(dir.file("case.mmv"), vol);
    save_label_volume(dir.file("case_labels.mmv"), labels);

    auto read_all = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), {});
    };

    PipelineConfig cfg;
    cfg.n = 1;
    cfg.hidden = 2;
    cfg.seed = 12;
    cfg.data_dir = dir.path.string();
    cfg.views = {"axial"};
    cfg.per_class = 2;
    cfg.schedule.epochs = 1;
    cfg.schedule.batch_size = 4;
    cfg.train_steps = {1};

    cfg.models["axial"] = dir.file("m1.fcnn");
    run_train(cfg);
    cfg.models["axial"] = dir.file("m2.fcnn");
    run_train(cfg);
    CHECK(read_all(dir.file("m1.fcnn")) == read_all(dir.file("m2.fcnn")));

    PipelineConfig seg;
    seg.n = 1;
    seg.hidden = 2;
    seg.input = dir.file("case.mmv");
    seg.views = {"axial"};
    seg.models["axial"] = dir.file("m1.fcnn");
    seg.use_crf = true;
    seg.crf_iterations = 2;
    seg.do_postprocess = false;
    seg.output = dir.file("s1.mmv");
    run_segment(seg);
    seg.output = dir.file("s2.mmv");
    run_segment(seg);
    CHECK(read_all(dir.file("s1.mmv")) == read_all(dir.file("s2.mmv")));
}
