#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bts/fcnn.hpp"
#include "bts/tensor.hpp"
#include "bts/volume.hpp"

namespace bts {

/// Fully connected pairwise model: two Gaussian kernels (appearance and
/// smoothness) weighted by w1/w2 and mixed through a labels x labels
/// compatibility table. Bandwidths stay fixed; w and mu are trainable.
struct CrfParameters {
    int labels = 5;
    double w1 = 1.0, w2 = 1.0;
    std::vector<double> mu;  // [labels][labels], Potts by default
    double theta_alpha = 160.0, theta_beta = 3.0, theta_gamma = 3.0;
    int iterations = 5;

    double mu_at(int u, int v) const { return mu[std::size_t(u) * labels + v]; }
    double& mu_at(int u, int v) { return mu[std::size_t(u) * labels + v]; }
};

CrfParameters default_crf(int labels = 5);

void save_crf(const std::string& path, const CrfParameters& params);
CrfParameters load_crf(const std::string& path);

/// Per-pixel features: implicit integer coordinates plus the slice's
/// normalized intensity vector.
struct PixelFeatures {
    int h = 0, w = 0, c = 0;
    std::vector<double> intensity;  // [c][y][x]

    std::size_t pixels() const { return std::size_t(h) * w; }
};

PixelFeatures features_from_slice(const SliceTensor& slice);

/// (appearance, smoothness) kernel values for pixel pair (i, j), linear
/// row-major pixel indices.
std::pair<double, double> pairwise_kernels(const PixelFeatures& feats, std::size_t i,
                                           std::size_t j, const CrfParameters& params);

enum class MessageMode {
    Exact,     // full O(M^2) pair sums
    Windowed,  // spatial truncation at radius 3*theta per kernel
};

/// One Jacobi-style mean-field update: all messages read Qin.
Tensor mean_field_iteration(const Tensor& qin, const Tensor& unary, const PixelFeatures& feats,
                            const CrfParameters& params, MessageMode mode = MessageMode::Windowed);

/// Softmax initialization from FCNN scores followed by T iterations.
/// The unary potential is the negated score.
Tensor crf_rnn_forward(const Tensor& scores, const SliceTensor& slice,
                       const CrfParameters& params, MessageMode mode = MessageMode::Windowed);

/// Mean-field free energy of belief Q (unary + pairwise + entropy).
double free_energy(const Tensor& q, const Tensor& unary, const PixelFeatures& feats,
                   const CrfParameters& params);

// ---- unrolled training ----

struct CrfGradients {
    double w1 = 0.0, w2 = 0.0;
    std::vector<double> mu;  // same layout as CrfParameters::mu
};

struct CrfTape {
    PixelFeatures feats;
    std::vector<double> k1, k2;  // dense MxM kernel matrices, zero diagonal
    Tensor scores;
    std::vector<Tensor> q;        // q[0] = softmax(P) ... q[T]
    std::vector<Tensor> msg1, msg2;  // per-iteration messages
};

Tensor crf_forward_tape(const Tensor& scores, const PixelFeatures& feats,
                        const CrfParameters& params, CrfTape& tape);

/// Backward through the unrolled iterations; accumulates into `grads` and,
/// when requested, returns dL/dscores (covering both the unary path and the
/// softmax initialization path).
void crf_backward_tape(const Tensor& dq_final, const CrfTape& tape, const CrfParameters& params,
                       CrfGradients& grads, Tensor* dscores);

struct SliceSample {
    SliceTensor slice;
    std::vector<std::uint8_t> labels;  // [y][x]
};

/// Step 2: CRF parameters (w, mu) trained on slices with the FCNN frozen.
/// Returns the per-epoch mean loss trace.
std::vector<double> train_step2(const NetworkParameters& fcnn, CrfParameters& crf,
                                const std::vector<SliceSample>& samples, double learning_rate,
                                int epochs);

/// Step 3: joint fine-tuning; gradients also reach FCNN weights.
std::vector<double> finetune_step3(NetworkParameters& fcnn, CrfParameters& crf,
                                   const std::vector<SliceSample>& samples, double learning_rate,
                                   int epochs);

}  // namespace bts
