#pragma once

#include <set>
#include <vector>

#include "bts/components.hpp"
#include "bts/volume.hpp"

namespace bts {

struct PostprocessThresholds {
    double t11 = 150.0, t12 = 150.0;          // step 1: bright-region means
    double t21 = 0.8, t22 = 125.0, t23 = 0.9; // step 2: low-signal clearing
    double t31 = 0.1;                         // step 3: size ratio
    double t41 = 100.0;                       // step 5: enhancing -> necrosis
    double t61 = 0.05, t62 = 85.0;            // step 6: edema -> non-enhancing
};

/// Mean of a channel over a voxel index set.
double region_mean_intensity(const MultiModalVolume& vol, int channel,
                             const std::vector<std::size_t>& voxels);

/// Six-step rule-based cleanup; `steps` selects which rules run, always in
/// ascending order, with component statistics and global means recomputed
/// at each step's entry.
LabelVolume postprocess(const LabelVolume& res, const MultiModalVolume& vol,
                        const PostprocessThresholds& th,
                        const std::set<int>& steps = {1, 2, 3, 4, 5, 6});

}  // namespace bts
