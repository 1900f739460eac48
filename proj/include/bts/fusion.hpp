#pragma once

#include <cstdint>

#include "bts/volume.hpp"

namespace bts {

/// Majority vote over the three per-view labels for one voxel. Steps apply
/// in order, later steps overriding: any positive majority defaults to
/// edema; a pair agreeing on 1, 3 or 4 wins that label.
std::uint8_t fuse_voxel(std::uint8_t axial, std::uint8_t coronal, std::uint8_t sagittal);

LabelVolume fuse_volumes(const LabelVolume& axial, const LabelVolume& coronal,
                         const LabelVolume& sagittal);

}  // namespace bts
