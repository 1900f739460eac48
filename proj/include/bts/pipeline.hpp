#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bts/crf.hpp"
#include "bts/fcnn.hpp"
#include "bts/postprocess.hpp"
#include "bts/preprocess.hpp"
#include "bts/volume.hpp"

namespace bts {

/// Everything the segment/train commands need; reference defaults baked in,
/// every field overridable from a JSON config or CLI flags.
struct PipelineConfig {
    // model shape
    int n = 5;
    int hidden = 64;
    int channels = 3;
    std::uint64_t seed = 0;

    // segmentation
    std::string input, output;
    std::vector<std::string> views = {"axial"};
    std::map<std::string, std::string> models;  // view -> FCNN model path
    std::string crf_model;                      // empty -> default parameters
    bool use_crf = true;
    int crf_iterations = 5;
    std::string message_mode = "windowed";  // or "exact"
    bool do_normalize = true;
    std::vector<double> sigma = {30, 31, 37};
    std::vector<double> offset = {75, 99, 55};
    bool do_postprocess = true;
    std::set<int> post_steps = {1, 2, 3, 4, 5, 6};
    PostprocessThresholds thresholds;
    std::string dump_dir;  // when set, intermediate volumes are written here

    // training
    std::string data_dir;
    int per_class = 1000;  // patches per class per volume
    TrainingSchedule schedule;
    double crf_lr = 1e-8;
    int crf_epochs = 1;
    double finetune_lr = 1e-10;
    int finetune_epochs = 1;
    int max_train_slices = 20;
    std::set<int> train_steps = {1, 2, 3};
};

PipelineConfig config_from_file(const std::string& path);
void apply_config_json(PipelineConfig& cfg, const std::string& json_text);

/// One view of one pre-processed volume through FCNN (+ optional CRF),
/// per-pixel argmax with ties toward the lower label.
LabelVolume segment_view(const NetworkParameters& fcnn, const CrfParameters* crf,
                         const MultiModalVolume& normalized, ViewAxis axis, MessageMode mode);

/// Full flow: normalize, segment every requested view, fuse, post-process,
/// write the output volume. Returns the final labels.
LabelVolume run_segment(const PipelineConfig& cfg);

/// Training steps 1-3 per view; persists model files and loss traces.
void run_train(const PipelineConfig& cfg);

/// Sorted (volume, label) path pairs: every "X.mmv" in dir with a matching
/// "X_labels.mmv".
std::vector<std::pair<std::string, std::string>> find_training_cases(const std::string& dir);

}  // namespace bts
