#pragma once

#include <cstdint>
#include <vector>

#include "bts/volume.hpp"

namespace bts {

/// Partition of a boolean mask into maximal connected components.
/// Ids are 1..component_count in first-encounter z-major scan order;
/// 0 marks voxels outside the mask.
struct ComponentLabeling {
    Dims3 dims;
    std::vector<int> component_id;            // [z][y][x]
    int component_count = 0;
    std::vector<std::size_t> component_sizes; // component_sizes[id-1]
};

ComponentLabeling connected_components_3d(const std::vector<std::uint8_t>& mask, Dims3 dims,
                                          int connectivity);

/// True for every voxel 6-connected-reachable from the volume border
/// through mask-true voxels. Used for hole detection on the background.
std::vector<std::uint8_t> border_reachable_6(const std::vector<std::uint8_t>& mask, Dims3 dims);

}  // namespace bts
