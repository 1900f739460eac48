#include "bts/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bts {

NormalizationTargets default_targets() {
    return {{30.0, 31.0, 37.0}, {75.0, 99.0, 55.0}};
}

std::vector<float> rescale_to_255(std::span<const float> channel) {
    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (float v : channel) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (channel.empty() || !(hi > lo))
        throw std::runtime_error("rescale_to_255: degenerate intensity range");
    std::vector<float> out(channel.size());
    const double scale = 255.0 / (double(hi) - double(lo));
    for (std::size_t i = 0; i < channel.size(); ++i)
        out[i] = float((double(channel[i]) - double(lo)) * scale);
    return out;
}

IntensityHistogram histogram_mode(std::span<const float> channel) {
    IntensityHistogram h;
    for (float v : channel) {
        if (v == 0.0f) continue;
        int bin = std::clamp(int(std::floor(v)), 0, 255);
        ++h.bins[bin];
        ++h.voxel_count;
    }
    if (h.voxel_count == 0) throw std::runtime_error("histogram_mode: empty foreground");
    for (int b = 0; b < 256; ++b)
        if (h.bins[b] > h.bins[h.mode_bin]) h.mode_bin = b;
    return h;
}

double robust_deviation(std::span<const float> channel, double mode_value) {
    double sum = 0.0;
    std::uint64_t n = 0;
    for (float v : channel) {
        if (v == 0.0f) continue;
        double d = mode_value - double(v);
        sum += d * d;
        ++n;
    }
    if (n == 0) throw std::runtime_error("robust_deviation: zero counted voxels");
    return std::sqrt(sum / double(n));
}

std::vector<float> normalize_channel(std::span<const float> channel, double sigma_target,
                                     double offset) {
    IntensityHistogram h = histogram_mode(channel);
    const double mode = double(h.mode_bin);
    const double dev = robust_deviation(channel, mode);
    if (!(dev > 0.0)) throw std::runtime_error("normalize_channel: degenerate deviation");
    std::vector<float> out(channel.size(), 0.0f);
    for (std::size_t i = 0; i < channel.size(); ++i) {
        float v = channel[i];
        if (v == 0.0f) continue;
        double mapped = (double(v) - mode) / dev * sigma_target + offset;
        out[i] = float(std::clamp(mapped, 0.0, 255.0));
    }
    return out;
}

MultiModalVolume normalize_volume(const MultiModalVolume& vol,
                                  const NormalizationTargets& targets) {
    if (targets.sigma.size() != std::size_t(vol.channels) ||
        targets.offset.size() != std::size_t(vol.channels))
        throw std::runtime_error("normalize_volume: one (sigma, offset) pair per channel required");
    MultiModalVolume out = vol;
    const std::size_t stride = vol.dims.voxels();
    for (int c = 0; c < vol.channels; ++c) {
        std::span<const float> in(vol.data.data() + std::size_t(c) * stride, stride);
        auto rescaled = rescale_to_255(in);
        auto normalized = normalize_channel(rescaled, targets.sigma[c], targets.offset[c]);
        std::copy(normalized.begin(), normalized.end(),
                  out.data.begin() + std::ptrdiff_t(std::size_t(c) * stride));
    }
    return out;
}

}  // namespace bts
