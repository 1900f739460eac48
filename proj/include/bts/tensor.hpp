#pragma once

#include <cstddef>
#include <vector>

namespace bts {

/// Dense (channels, height, width) value grid, double precision.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(std::size_t(c_) * h_ * w_, 0.0) {}

    std::size_t size() const { return v.size(); }
    std::size_t index(int ci, int y, int x) const {
        return (std::size_t(ci) * h + y) * w + x;
    }
    double at(int ci, int y, int x) const { return v[index(ci, y, x)]; }
    double& at(int ci, int y, int x) { return v[index(ci, y, x)]; }
    double* plane(int ci) { return v.data() + std::size_t(ci) * h * w; }
    const double* plane(int ci) const { return v.data() + std::size_t(ci) * h * w; }
};

/// Per-pixel softmax across channels.
Tensor softmax_channels(const Tensor& scores);

/// Backward of softmax_channels: given dL/dprobs, returns dL/dscores.
Tensor softmax_channels_backward(const Tensor& probs, const Tensor& dprobs);

}  // namespace bts
