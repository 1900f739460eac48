#pragma once

#include <cstdint>
#include <utility>

#include "bts/volume.hpp"

namespace bts {

/// Synthetic multi-modal tumor volume with known ground truth.
/// A healthy "brain" ellipsoid sits on a zero background; nested tumor
/// ellipsoids carry labels 2 (edema), 4 (enhancing rim), 3 (optional
/// non-enhancing shell) and 1 (necrotic center).
struct PhantomConfig {
    Dims3 dims{32, 32, 32};
    double brain_radius = 14.0;
    double edema_radius = 10.0;
    double enhancing_radius = 7.0;
    double nonenhancing_radius = 5.5;
    double necrosis_radius = 4.0;
    bool nonenhancing_shell = true;
    double noise_scale = 8.0;
    int channels = 3;
};

/// Per-channel class mean intensities; all pairwise gaps are >= 3x the
/// default noise scale so classes stay separable.
double phantom_class_mean(const std::string& channel_name, int label);

std::pair<MultiModalVolume, LabelVolume> generate_phantom(std::uint64_t seed,
                                                          const PhantomConfig& cfg);

}  // namespace bts
