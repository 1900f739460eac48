#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "bts/volume.hpp"

namespace bts {

/// 256 unit-width bins over [0,255]. Voxels with intensity exactly 0 are
/// excluded from counting (skull-stripped background).
struct IntensityHistogram {
    std::array<std::uint64_t, 256> bins{};
    int mode_bin = 0;          // ties break to the lowest index
    std::uint64_t voxel_count = 0;
};

struct NormalizationTargets {
    std::vector<double> sigma;   // per channel, > 0
    std::vector<double> offset;  // per channel, in [0,255]
};

/// Published reference targets for (flair, t1c, t2).
NormalizationTargets default_targets();

/// Affine map sending the observed min to 0 and max to 255; values stay real.
std::vector<float> rescale_to_255(std::span<const float> channel);

IntensityHistogram histogram_mode(std::span<const float> channel);

/// RMS deviation from the histogram mode over counted (nonzero) voxels.
double robust_deviation(std::span<const float> channel, double mode_value);

/// Full per-channel normalization: rescale is assumed done; maps counted
/// voxels to ((I - mode)/dev)*sigma + offset, clamped to [0,255]. Zero
/// voxels stay zero.
std::vector<float> normalize_channel(std::span<const float> channel, double sigma_target,
                                     double offset);

/// Steps 1-4 applied to every channel of a volume.
MultiModalVolume normalize_volume(const MultiModalVolume& vol, const NormalizationTargets& targets);

}  // namespace bts
