#include "bts/fcnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace bts {

using nlohmann::json;

// ---- softmax ----

Tensor softmax_channels(const Tensor& scores) {
    Tensor out(scores.c, scores.h, scores.w);
    const std::size_t plane = std::size_t(scores.h) * scores.w;
    for (std::size_t p = 0; p < plane; ++p) {
        double mx = scores.v[p];
        for (int c = 1; c < scores.c; ++c) mx = std::max(mx, scores.v[c * plane + p]);
        double sum = 0.0;
        for (int c = 0; c < scores.c; ++c) {
            double e = std::exp(scores.v[c * plane + p] - mx);
            out.v[c * plane + p] = e;
            sum += e;
        }
        for (int c = 0; c < scores.c; ++c) out.v[c * plane + p] /= sum;
    }
    return out;
}

Tensor softmax_channels_backward(const Tensor& probs, const Tensor& dprobs) {
    Tensor dscores(probs.c, probs.h, probs.w);
    const std::size_t plane = std::size_t(probs.h) * probs.w;
    for (std::size_t p = 0; p < plane; ++p) {
        double dot = 0.0;
        for (int c = 0; c < probs.c; ++c) dot += dprobs.v[c * plane + p] * probs.v[c * plane + p];
        for (int c = 0; c < probs.c; ++c)
            dscores.v[c * plane + p] =
                probs.v[c * plane + p] * (dprobs.v[c * plane + p] - dot);
    }
    return dscores;
}

// ---- architecture ----

int reduction_per_side(int n) { return 17 + 3 * n; }
int small_patch_side(int n) { return 18 + 3 * n; }

namespace {

Layer conv_layer(int in_ch, int out_ch, int k, bool relu) {
    Layer l;
    l.kind = LayerKind::Conv;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.k = k;
    l.relu = relu;
    std::size_t nw = std::size_t(out_ch) * in_ch * k * k;
    l.w.assign(nw, 0.0);
    l.b.assign(out_ch, 0.0);
    l.gw.assign(nw, 0.0);
    l.gb.assign(out_ch, 0.0);
    l.mw.assign(nw, 0.0);
    l.mb.assign(out_ch, 0.0);
    return l;
}

Layer pool_layer(int n) {
    Layer l;
    l.kind = LayerKind::Pool;
    l.pool_n = n;
    return l;
}

// 3 blocks of [conv3, conv3, pool n] then 4 conv3; shrink = 17+3n.
std::vector<Layer> make_branch(int in_ch, int hidden, int n) {
    std::vector<Layer> layers;
    int cur = in_ch;
    for (int blk = 0; blk < 3; ++blk) {
        layers.push_back(conv_layer(cur, hidden, 3, true));
        cur = hidden;
        layers.push_back(conv_layer(cur, hidden, 3, true));
        layers.push_back(pool_layer(n));
    }
    for (int i = 0; i < 4; ++i) layers.push_back(conv_layer(cur, hidden, 3, true));
    return layers;
}

void init_layer(Layer& l, std::mt19937_64& rng) {
    if (l.kind != LayerKind::Conv) return;
    double stddev = std::sqrt(2.0 / (double(l.in_ch) * l.k * l.k));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& w : l.w) w = dist(rng);
}

}  // namespace

NetworkParameters make_network(int n, int in_channels, int hidden, std::uint64_t seed) {
    if (n < 1 || n % 2 == 0) throw std::runtime_error("make_network: pool kernel n must be odd and >= 1");
    if (in_channels != 3 && in_channels != 4)
        throw std::runtime_error("make_network: in_channels must be 3 or 4");
    if (hidden < 1) throw std::runtime_error("make_network: hidden width must be positive");
    NetworkParameters p;
    p.pool_n = n;
    p.in_channels = in_channels;
    p.hidden = hidden;
    p.seed = seed;
    p.front = make_branch(in_channels, hidden, n);
    p.trunk = make_branch(hidden + in_channels, hidden, n);
    p.trunk.push_back(conv_layer(hidden, p.num_classes, 1, false));  // score layer
    std::mt19937_64 rng(seed);
    for (auto& l : p.front) init_layer(l, rng);
    for (auto& l : p.trunk) init_layer(l, rng);
    return p;
}

std::size_t NetworkParameters::parameter_count() const {
    std::size_t n = 0;
    for (const auto* branch : {&front, &trunk})
        for (const auto& l : *branch)
            if (l.kind == LayerKind::Conv) n += l.w.size() + l.b.size();
    return n;
}

// ---- primitives ----

namespace {

// Pre-activation valid convolution; the rectifier is applied by callers so
// the backward pass can mask from the exact pre-activation values.
Tensor conv_raw(const Tensor& in, const Layer& l) {
    if (l.kind != LayerKind::Conv) throw std::runtime_error("conv_valid: layer is not a conv");
    if (in.c != l.in_ch) throw std::runtime_error("conv_valid: channel mismatch");
    if (l.k > in.h || l.k > in.w) throw std::runtime_error("conv_valid: kernel larger than input");
    const int oh = in.h - l.k + 1, ow = in.w - l.k + 1;
    Tensor out(l.out_ch, oh, ow);
    for (int oc = 0; oc < l.out_ch; ++oc) {
        double* op0 = out.plane(oc);
        std::fill(op0, op0 + std::size_t(oh) * ow, l.b[oc]);
        for (int ic = 0; ic < l.in_ch; ++ic)
            for (int ky = 0; ky < l.k; ++ky)
                for (int kx = 0; kx < l.k; ++kx) {
                    const double wv = l.w[((std::size_t(oc) * l.in_ch + ic) * l.k + ky) * l.k + kx];
                    for (int y = 0; y < oh; ++y) {
                        const double* ip = in.plane(ic) + std::size_t(y + ky) * in.w + kx;
                        double* op = op0 + std::size_t(y) * ow;
                        for (int x = 0; x < ow; ++x) op[x] += wv * ip[x];
                    }
                }
    }
    return out;
}

Tensor apply_relu(Tensor pre) {
    for (double& v : pre.v) v = v > 0.0 ? v : 0.0;
    return pre;
}

}  // namespace

Tensor conv_valid(const Tensor& in, const Layer& l) {
    Tensor out = conv_raw(in, l);
    return l.relu ? apply_relu(std::move(out)) : out;
}

namespace {

Tensor pool_forward(const Tensor& in, int n, std::vector<int>* argmax) {
    if (n > in.h || n > in.w) throw std::runtime_error("max_pool_stride1: kernel exceeds input");
    const int oh = in.h - n + 1, ow = in.w - n + 1;
    Tensor out(in.c, oh, ow);
    if (argmax) argmax->assign(std::size_t(in.c) * oh * ow, 0);
    for (int c = 0; c < in.c; ++c) {
        const double* ip = in.plane(c);
        double* op = out.plane(c);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double best = ip[std::size_t(y) * in.w + x];
                int besti = y * in.w + x;
                for (int ky = 0; ky < n; ++ky)
                    for (int kx = 0; kx < n; ++kx) {
                        int idx = (y + ky) * in.w + (x + kx);
                        if (ip[idx] > best) {
                            best = ip[idx];
                            besti = idx;
                        }
                    }
                op[std::size_t(y) * ow + x] = best;
                if (argmax) (*argmax)[(std::size_t(c) * oh + y) * ow + x] = besti;
            }
    }
    return out;
}

void conv_backward(Layer& l, const Tensor& in, const Tensor& out_pre, const Tensor& dout,
                   Tensor& din) {
    // Fold the rectifier from the pre-activation values. Exactly-zero
    // pre-activations (common with zero biases over clipped regions) take
    // the mean of the one-sided slopes so central differences agree.
    Tensor dz = dout;
    if (l.relu)
        for (std::size_t i = 0; i < dz.v.size(); ++i) {
            double p = out_pre.v[i];
            if (p < 0.0) dz.v[i] = 0.0;
            else if (p == 0.0) dz.v[i] *= 0.5;
        }
    const int oh = dz.h, ow = dz.w;
    din = Tensor(in.c, in.h, in.w);
    for (int oc = 0; oc < l.out_ch; ++oc) {
        const double* dzp = dz.plane(oc);
        double gb = 0.0;
        for (std::size_t i = 0; i < std::size_t(oh) * ow; ++i) gb += dzp[i];
        l.gb[oc] += gb;
        for (int ic = 0; ic < l.in_ch; ++ic)
            for (int ky = 0; ky < l.k; ++ky)
                for (int kx = 0; kx < l.k; ++kx) {
                    const std::size_t wi =
                        ((std::size_t(oc) * l.in_ch + ic) * l.k + ky) * l.k + kx;
                    const double wv = l.w[wi];
                    double gw = 0.0;
                    for (int y = 0; y < oh; ++y) {
                        const double* ip = in.plane(ic) + std::size_t(y + ky) * in.w + kx;
                        double* dp = din.plane(ic) + std::size_t(y + ky) * in.w + kx;
                        const double* dzr = dzp + std::size_t(y) * ow;
                        for (int x = 0; x < ow; ++x) {
                            gw += dzr[x] * ip[x];
                            dp[x] += wv * dzr[x];
                        }
                    }
                    l.gw[wi] += gw;
                }
    }
}

void pool_backward(const Tensor& in, const Tensor& dout, const std::vector<int>& argmax,
                   Tensor& din) {
    din = Tensor(in.c, in.h, in.w);
    const int oh = dout.h, ow = dout.w;
    for (int c = 0; c < in.c; ++c) {
        double* dp = din.plane(c);
        const double* dop = dout.plane(c);
        const int* am = argmax.data() + std::size_t(c) * oh * ow;
        for (std::size_t i = 0; i < std::size_t(oh) * ow; ++i) dp[am[i]] += dop[i];
    }
}

}  // namespace

Tensor max_pool_stride1(const Tensor& in, int n) { return pool_forward(in, n, nullptr); }

Tensor forward_branch(const std::vector<Layer>& layers, const Tensor& in, BranchTape* tape) {
    Tensor cur = in;
    if (tape) {
        tape->inputs.clear();
        tape->outputs.clear();
        tape->argmax.assign(layers.size(), {});
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        if (tape) tape->inputs.push_back(cur);
        Tensor next;
        if (l.kind == LayerKind::Conv) {
            // Conv tape entries hold the pre-activation for the rectifier mask.
            Tensor pre = conv_raw(cur, l);
            if (tape) tape->outputs.push_back(pre);
            next = l.relu ? apply_relu(std::move(pre)) : std::move(pre);
        } else {
            next = pool_forward(cur, l.pool_n, tape ? &tape->argmax[i] : nullptr);
            if (tape) tape->outputs.push_back(next);
        }
        cur = std::move(next);
    }
    return cur;
}

namespace {

Tensor backward_branch(std::vector<Layer>& layers, const BranchTape& tape, Tensor dout) {
    for (std::size_t ri = layers.size(); ri-- > 0;) {
        Layer& l = layers[ri];
        Tensor din;
        if (l.kind == LayerKind::Conv)
            conv_backward(l, tape.inputs[ri], tape.outputs[ri], dout, din);
        else
            pool_backward(tape.inputs[ri], dout, tape.argmax[ri], din);
        dout = std::move(din);
    }
    return dout;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    Tensor out(a.c + b.c, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + std::ptrdiff_t(a.v.size()));
    return out;
}

}  // namespace

ProbabilityMaps forward_tape(const NetworkParameters& params, const Tensor& small,
                             const Tensor& large, FcnnTape& tape) {
    if (small.c != params.in_channels || large.c != params.in_channels)
        throw std::runtime_error("forward: input channel count mismatch");
    Tensor feats = forward_branch(params.front, large, &tape.front);
    if (feats.h != small.h || feats.w != small.w)
        throw std::runtime_error("forward: size mismatch between front-branch output (" +
                                 std::to_string(feats.h) + "x" + std::to_string(feats.w) +
                                 ") and small input (" + std::to_string(small.h) + "x" +
                                 std::to_string(small.w) + ")");
    tape.concat_in = concat_channels(feats, small);
    ProbabilityMaps maps;
    maps.scores = forward_branch(params.trunk, tape.concat_in, &tape.trunk);
    maps.probs = softmax_channels(maps.scores);
    return maps;
}

ProbabilityMaps forward(const NetworkParameters& params, const Tensor& small,
                        const Tensor& large) {
    FcnnTape tape;  // TODO: tape-free inference path if memory ever matters
    return forward_tape(params, small, large, tape);
}

void backward_tape(NetworkParameters& params, const FcnnTape& tape, const Tensor& dscores,
                   Tensor* dsmall, Tensor* dlarge) {
    Tensor dconcat = backward_branch(params.trunk, tape.trunk, dscores);
    // Split concat gradient: first `hidden` channels feed the front branch.
    Tensor dfeats(params.hidden, dconcat.h, dconcat.w);
    std::copy(dconcat.v.begin(), dconcat.v.begin() + std::ptrdiff_t(dfeats.v.size()),
              dfeats.v.begin());
    if (dsmall) {
        *dsmall = Tensor(params.in_channels, dconcat.h, dconcat.w);
        std::copy(dconcat.v.begin() + std::ptrdiff_t(dfeats.v.size()), dconcat.v.end(),
                  dsmall->v.begin());
    }
    Tensor dl = backward_branch(params.front, tape.front, std::move(dfeats));
    if (dlarge) *dlarge = std::move(dl);
}

Tensor slice_to_tensor(const SliceTensor& slice) {
    // intensities enter the network on a unit scale; raw 0..255 inputs leave
    // early-layer gradients two orders of magnitude larger than bias
    // gradients and stall the optimizer
    Tensor t(slice.channels, slice.height, slice.width);
    for (std::size_t i = 0; i < t.v.size(); ++i) t.v[i] = double(slice.data[i]) / 255.0;
    return t;
}

Tensor pad_tensor(const Tensor& t, int pad) {
    Tensor out(t.c, t.h + 2 * pad, t.w + 2 * pad);
    for (int c = 0; c < t.c; ++c)
        for (int y = 0; y < t.h; ++y)
            std::copy(t.plane(c) + std::size_t(y) * t.w, t.plane(c) + std::size_t(y + 1) * t.w,
                      out.plane(c) + std::size_t(y + pad) * out.w + pad);
    return out;
}

ProbabilityMaps segment_slice(const NetworkParameters& params, const SliceTensor& slice) {
    const int red = reduction_per_side(params.pool_n);
    if (red % 2 != 0) throw std::runtime_error("segment_slice: padding does not split evenly");
    const int p = red / 2;
    Tensor base = slice_to_tensor(slice);
    Tensor small = pad_tensor(base, p);
    Tensor large = pad_tensor(base, 2 * p);
    ProbabilityMaps maps = forward(params, small, large);
    if (maps.scores.h != slice.height || maps.scores.w != slice.width)
        throw std::runtime_error("segment_slice: output size mismatch");
    return maps;
}

// ---- patch sampling ----

namespace {

void slice_coords(ViewAxis axis, int z, int y, int x, int& index, int& py, int& px) {
    switch (axis) {
        case ViewAxis::Axial: index = z; py = y; px = x; break;
        case ViewAxis::Coronal: index = y; py = z; px = x; break;
        case ViewAxis::Sagittal: index = x; py = z; px = y; break;
    }
}

Tensor patch_from_slice(const SliceTensor& s, int cy, int cx, int side) {
    const int half = (side - 1) / 2;
    Tensor t(s.channels, side, side);
    for (int c = 0; c < s.channels; ++c)
        for (int y = 0; y < side; ++y) {
            int sy = cy - half + y;
            if (sy < 0 || sy >= s.height) continue;  // zero padding
            for (int x = 0; x < side; ++x) {
                int sx = cx - half + x;
                if (sx < 0 || sx >= s.width) continue;
                t.at(c, y, x) = double(s.at(c, sy, sx)) / 255.0;  // same scale as slice_to_tensor
            }
        }
    return t;
}

const char* class_name(int c) {
    static const char* names[5] = {"healthy", "necrosis", "edema", "non-enhancing core",
                                   "enhancing core"};
    return names[c];
}

}  // namespace

PatchBatch sample_training_patches(const MultiModalVolume& vol, const LabelVolume& labels,
                                   int per_class, int n, ViewAxis axis, std::uint64_t seed) {
    if (per_class < 1) throw std::runtime_error("sample_training_patches: per_class must be >= 1");
    if (vol.dims != labels.dims)
        throw std::runtime_error("sample_training_patches: volume/label dims mismatch");
    const int s = small_patch_side(n);
    const int ls = 2 * s - 1;

    std::array<std::vector<std::size_t>, 5> by_class;
    for (std::size_t i = 0; i < labels.data.size(); ++i) by_class[labels.data[i]].push_back(i);
    for (int c = 0; c < 5; ++c)
        if (by_class[c].empty())
            throw std::runtime_error(std::string("sample_training_patches: class absent from "
                                                 "volume: ") + class_name(c));

    std::mt19937_64 rng(seed);
    std::map<int, SliceTensor> slice_cache;
    PatchBatch batch;
    for (int c = 0; c < 5; ++c) {
        std::vector<std::size_t> chosen;
        auto& pool = by_class[c];
        if (pool.size() >= std::size_t(per_class)) {
            std::vector<std::size_t> idx = pool;
            for (int i = 0; i < per_class; ++i) {
                std::uniform_int_distribution<std::size_t> d(i, idx.size() - 1);
                std::swap(idx[i], idx[d(rng)]);
                chosen.push_back(idx[i]);
            }
        } else {
            std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
            for (int i = 0; i < per_class; ++i) chosen.push_back(pool[d(rng)]);
        }
        for (std::size_t vi : chosen) {
            int z = int(vi / (std::size_t(labels.dims.y) * labels.dims.x));
            int rem = int(vi % (std::size_t(labels.dims.y) * labels.dims.x));
            int y = rem / labels.dims.x;
            int x = rem % labels.dims.x;
            int index, py, px;
            slice_coords(axis, z, y, x, index, py, px);
            auto it = slice_cache.find(index);
            if (it == slice_cache.end())
                it = slice_cache.emplace(index, extract_slice(vol, axis, index)).first;
            PatchSample sample;
            sample.small = patch_from_slice(it->second, py, px, s);
            sample.large = patch_from_slice(it->second, py, px, ls);
            sample.label = c;
            batch.patches.push_back(std::move(sample));
            ++batch.per_class[c];
        }
    }
    return batch;
}

// ---- training ----

double learning_rate_at_epoch(const TrainingSchedule& s, int epoch) {
    return s.base_lr / std::pow(s.decay_factor, double(epoch / s.decay_every));
}

void zero_gradients(NetworkParameters& params) {
    for (auto* branch : {&params.front, &params.trunk})
        for (auto& l : *branch) {
            std::fill(l.gw.begin(), l.gw.end(), 0.0);
            std::fill(l.gb.begin(), l.gb.end(), 0.0);
        }
}

void sgd_update(NetworkParameters& params, double lr, double momentum) {
    for (auto* branch : {&params.front, &params.trunk})
        for (auto& l : *branch) {
            if (l.kind != LayerKind::Conv) continue;
            for (std::size_t i = 0; i < l.w.size(); ++i) {
                l.mw[i] = momentum * l.mw[i] - lr * l.gw[i];
                l.w[i] += l.mw[i];
            }
            for (std::size_t i = 0; i < l.b.size(); ++i) {
                l.mb[i] = momentum * l.mb[i] - lr * l.gb[i];
                l.b[i] += l.mb[i];
            }
        }
}

double softmax_xent_loss(const ProbabilityMaps& maps, const std::vector<std::uint8_t>& labels,
                         Tensor* dscores) {
    const std::size_t plane = std::size_t(maps.probs.h) * maps.probs.w;
    if (labels.size() != plane)
        throw std::runtime_error("softmax_xent_loss: label count does not match pixels");
    double loss = 0.0;
    if (dscores) *dscores = maps.probs;  // start from probs, subtract one-hot
    for (std::size_t p = 0; p < plane; ++p) {
        int lab = labels[p];
        double q = std::max(maps.probs.v[std::size_t(lab) * plane + p], 1e-300);
        loss -= std::log(q);
        if (dscores) dscores->v[std::size_t(lab) * plane + p] -= 1.0;
    }
    if (dscores)
        for (double& g : dscores->v) g /= double(plane);
    return loss / double(plane);
}

std::vector<double> train_step1(NetworkParameters& params, const PatchBatch& batch,
                                const TrainingSchedule& schedule) {
    if (batch.patches.empty()) throw std::runtime_error("train_step1: empty batch");
    if (!(schedule.base_lr >= 0)) throw std::runtime_error("train_step1: negative learning rate");
    std::mt19937_64 rng(schedule.seed);
    std::vector<std::size_t> order(batch.patches.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<double> epoch_losses;
    FcnnTape tape;
    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
        const double lr = learning_rate_at_epoch(schedule, epoch);
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t pos = 0;
        int batch_index = 0;
        while (pos < order.size()) {
            std::size_t take = std::min(std::size_t(schedule.batch_size), order.size() - pos);
            zero_gradients(params);
            double bl = 0.0;
            for (std::size_t i = 0; i < take; ++i) {
                const PatchSample& ps = batch.patches[order[pos + i]];
                ProbabilityMaps maps = forward_tape(params, ps.small, ps.large, tape);
                Tensor dscores;
                bl += softmax_xent_loss(maps, {std::uint8_t(ps.label)}, &dscores);
                for (double& g : dscores.v) g /= double(take);
                backward_tape(params, tape, dscores);
            }
            bl /= double(take);
            if (!std::isfinite(bl))
                throw std::runtime_error("train_step1: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(batch_index));
            sgd_update(params, lr, schedule.momentum);
            epoch_loss += bl * double(take);
            pos += take;
            ++batch_index;
        }
        epoch_losses.push_back(epoch_loss / double(order.size()));
    }
    return epoch_losses;
}

// ---- gradient check ----

namespace {

double batch_mean_loss(const NetworkParameters& params, const PatchBatch& batch) {
    double total = 0.0;
    for (const auto& ps : batch.patches) {
        ProbabilityMaps maps = forward(params, ps.small, ps.large);
        total += softmax_xent_loss(maps, {std::uint8_t(ps.label)}, nullptr);
    }
    return total / double(batch.patches.size());
}

void batch_mean_grads(NetworkParameters& params, const PatchBatch& batch) {
    zero_gradients(params);
    FcnnTape tape;
    for (const auto& ps : batch.patches) {
        ProbabilityMaps maps = forward_tape(params, ps.small, ps.large, tape);
        Tensor dscores;
        softmax_xent_loss(maps, {std::uint8_t(ps.label)}, &dscores);
        for (double& g : dscores.v) g /= double(batch.patches.size());
        backward_tape(params, tape, dscores);
    }
}

}  // namespace

double gradient_check(NetworkParameters& params, const PatchBatch& batch, double epsilon) {
    if (!(epsilon > 0)) throw std::runtime_error("gradient_check: degenerate step");
    if (batch.patches.empty()) throw std::runtime_error("gradient_check: empty batch");
    batch_mean_grads(params, batch);

    std::vector<double*> values;
    std::vector<double> analytic;
    for (auto* branch : {&params.front, &params.trunk})
        for (auto& l : *branch) {
            if (l.kind != LayerKind::Conv) continue;
            for (std::size_t i = 0; i < l.w.size(); ++i) {
                values.push_back(&l.w[i]);
                analytic.push_back(l.gw[i]);
            }
            for (std::size_t i = 0; i < l.b.size(); ++i) {
                values.push_back(&l.b[i]);
                analytic.push_back(l.gb[i]);
            }
        }

    std::vector<std::size_t> picks;
    if (values.size() <= 200) {
        for (std::size_t i = 0; i < values.size(); ++i) picks.push_back(i);
    } else {
        std::mt19937_64 rng(params.seed ^ 0x9e3779b97f4a7c15ull);
        std::uniform_int_distribution<std::size_t> d(0, values.size() - 1);
        for (int i = 0; i < 200; ++i) picks.push_back(d(rng));
    }

    double worst = 0.0;
    for (std::size_t pi : picks) {
        double* p = values[pi];
        const double orig = *p;
        *p = orig + epsilon;
        double lp = batch_mean_loss(params, batch);
        *p = orig - epsilon;
        double lm = batch_mean_loss(params, batch);
        *p = orig;
        double numeric = (lp - lm) / (2.0 * epsilon);
        double denom = std::max({std::abs(analytic[pi]), std::abs(numeric), 1e-3});
        worst = std::max(worst, std::abs(analytic[pi] - numeric) / denom);
    }
    return worst;
}

// ---- model io ----

void save_model(const std::string& path, const NetworkParameters& params) {
    json hdr = {{"magic", "FCNN1"},
                {"n", params.pool_n},
                {"in_channels", params.in_channels},
                {"hidden", params.hidden},
                {"classes", params.num_classes},
                {"seed", params.seed}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << hdr.dump() << '\n';
    auto write_doubles = [&](const std::vector<double>& xs) {
        std::vector<float> buf(xs.begin(), xs.end());
        out.write(reinterpret_cast<const char*>(buf.data()),
                  std::streamsize(buf.size() * sizeof(float)));
    };
    for (const auto* branch : {&params.front, &params.trunk})
        for (const auto& l : *branch) {
            if (l.kind != LayerKind::Conv) continue;
            write_doubles(l.w);
            write_doubles(l.b);
        }
    if (!out) throw std::runtime_error(path + ": write failed");
}

NetworkParameters load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": missing model header");
    json hdr = json::parse(line);
    if (hdr.value("magic", "") != "FCNN1") throw std::runtime_error(path + ": not a FCNN1 model");
    NetworkParameters params =
        make_network(hdr.at("n").get<int>(), hdr.at("in_channels").get<int>(),
                     hdr.at("hidden").get<int>(), hdr.value("seed", std::uint64_t(0)));
    auto read_doubles = [&](std::vector<double>& xs) {
        std::vector<float> buf(xs.size());
        in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
        if (std::size_t(in.gcount()) != buf.size() * sizeof(float))
            throw std::runtime_error(path + ": truncated model payload");
        for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = double(buf[i]);
    };
    for (auto* branch : {&params.front, &params.trunk})
        for (auto& l : *branch) {
            if (l.kind != LayerKind::Conv) continue;
            read_doubles(l.w);
            read_doubles(l.b);
        }
    return params;
}

}  // namespace bts
