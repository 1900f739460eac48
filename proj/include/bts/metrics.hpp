#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bts/volume.hpp"

namespace bts {

enum class RegionKind { Complete, Core, Enhancing };

const char* region_name(RegionKind kind);
bool label_in_region(std::uint8_t label, RegionKind kind);

std::vector<std::uint8_t> region_mask(const LabelVolume& labels, RegionKind kind);

struct RegionScore {
    double dice = 0.0, ppv = 0.0, sensitivity = 0.0;
    std::size_t pred_count = 0, truth_count = 0, overlap = 0;
};

/// If both masks are empty all metrics report 1; if exactly one is empty
/// the affected metrics report 0.
RegionScore score(const LabelVolume& pred, const LabelVolume& truth, RegionKind kind);

struct ScoreReport {
    std::array<RegionScore, 3> regions;  // complete, core, enhancing
};

ScoreReport score_all(const LabelVolume& pred, const LabelVolume& truth);
std::string report_to_json(const ScoreReport& report);

}  // namespace bts
