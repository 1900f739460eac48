#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bts/tensor.hpp"
#include "bts/volume.hpp"

namespace bts {

enum class LayerKind { Conv, Pool };

struct Layer {
    LayerKind kind = LayerKind::Conv;
    // Conv fields; cross-correlation semantics, valid (no padding).
    int in_ch = 0, out_ch = 0, k = 0;
    bool relu = true;
    std::vector<double> w;   // [out_ch][in_ch][k][k]
    std::vector<double> b;   // [out_ch]
    std::vector<double> gw, gb;  // gradient slots
    std::vector<double> mw, mb;  // momentum slots
    // Pool field; stride-1 max pooling.
    int pool_n = 0;
};

/// Two-branch network: `front` maps the large input down to the small
/// input's spatial size; the trunk consumes [front output; small input]
/// channel-concatenated and ends in a 1x1 score conv with 5 outputs.
struct NetworkParameters {
    int pool_n = 5;
    int in_channels = 3;
    int hidden = 64;
    int num_classes = 5;
    std::uint64_t seed = 0;
    std::vector<Layer> front;
    std::vector<Layer> trunk;

    std::size_t parameter_count() const;
};

/// Spatial shrink per branch: 6 conv3x3 + 3 pool nxn + 4 conv3x3 = 17+3n.
int reduction_per_side(int n);
/// Small training-patch side s = 18+3n; the large patch is 2s-1.
int small_patch_side(int n);

NetworkParameters make_network(int n, int in_channels, int hidden, std::uint64_t seed);

struct ProbabilityMaps {
    Tensor scores;  // 5 x H x W
    Tensor probs;   // per-pixel softmax of scores
};

Tensor conv_valid(const Tensor& input, const Layer& conv);
Tensor max_pool_stride1(const Tensor& input, int n);

ProbabilityMaps forward(const NetworkParameters& params, const Tensor& small,
                        const Tensor& large);

/// Zero-pads the slice by (17+3n)/2 (small path) and 17+3n (large path)
/// per side and runs the network densely; output matches the slice size.
ProbabilityMaps segment_slice(const NetworkParameters& params, const SliceTensor& slice);

Tensor slice_to_tensor(const SliceTensor& slice);
Tensor pad_tensor(const Tensor& t, int pad);

// ---- training ----

struct PatchSample {
    Tensor small, large;
    int label = 0;
};

struct PatchBatch {
    std::vector<PatchSample> patches;
    std::array<int, 5> per_class{};
};

PatchBatch sample_training_patches(const MultiModalVolume& vol, const LabelVolume& labels,
                                   int per_class, int n, ViewAxis axis, std::uint64_t seed);

struct TrainingSchedule {
    double base_lr = 1e-5;      // divided by decay_factor every decay_every epochs
    int decay_every = 20;
    double decay_factor = 10.0;
    int epochs = 20;
    int batch_size = 128;
    double momentum = 0.9;
    std::uint64_t seed = 0;
};

double learning_rate_at_epoch(const TrainingSchedule& s, int epoch);

/// Mini-batch SGD with momentum on the mean softmax cross-entropy of
/// patch scores. Returns the per-epoch mean loss trace.
std::vector<double> train_step1(NetworkParameters& params, const PatchBatch& batch,
                                const TrainingSchedule& schedule);

/// Max relative discrepancy between reverse-mode gradients and central
/// finite differences over a sampled subset of parameters.
double gradient_check(NetworkParameters& params, const PatchBatch& batch, double epsilon);

// ---- tape API (used by slice-mode training and the CRF composition) ----

struct BranchTape {
    std::vector<Tensor> inputs;             // input to each layer
    std::vector<Tensor> outputs;            // convs: pre-activation; pools: output
    std::vector<std::vector<int>> argmax;   // pool layers: winner index per output
};

struct FcnnTape {
    BranchTape front, trunk;
    Tensor concat_in;
};

Tensor forward_branch(const std::vector<Layer>& layers, const Tensor& in, BranchTape* tape);
ProbabilityMaps forward_tape(const NetworkParameters& params, const Tensor& small,
                             const Tensor& large, FcnnTape& tape);
/// Accumulates parameter gradients from dL/dscores; optionally returns
/// input gradients.
void backward_tape(NetworkParameters& params, const FcnnTape& tape, const Tensor& dscores,
                   Tensor* dsmall = nullptr, Tensor* dlarge = nullptr);

void zero_gradients(NetworkParameters& params);
void sgd_update(NetworkParameters& params, double lr, double momentum);

/// Mean cross-entropy of probs against per-pixel labels; fills dscores
/// (softmax-fused gradient, scaled by 1/pixels).
double softmax_xent_loss(const ProbabilityMaps& maps, const std::vector<std::uint8_t>& labels,
                         Tensor* dscores);

// Model container: JSON header line, then f32le weight tensors in
// declaration order (front then trunk; per conv: weights then biases).
void save_model(const std::string& path, const NetworkParameters& params);
NetworkParameters load_model(const std::string& path);

}  // namespace bts
