#include "bts/metrics.hpp"

#include <stdexcept>

#include "json.hpp"

namespace bts {

const char* region_name(RegionKind kind) {
    switch (kind) {
        case RegionKind::Complete: return "complete";
        case RegionKind::Core: return "core";
        case RegionKind::Enhancing: return "enhancing";
    }
    return "?";
}

bool label_in_region(std::uint8_t label, RegionKind kind) {
    switch (kind) {
        case RegionKind::Complete: return label >= 1 && label <= 4;
        case RegionKind::Core: return label == 1 || label == 3 || label == 4;
        case RegionKind::Enhancing: return label == 4;
    }
    return false;
}

std::vector<std::uint8_t> region_mask(const LabelVolume& labels, RegionKind kind) {
    std::vector<std::uint8_t> mask(labels.data.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = label_in_region(labels.data[i], kind);
    return mask;
}

RegionScore score(const LabelVolume& pred, const LabelVolume& truth, RegionKind kind) {
    if (pred.dims != truth.dims) throw std::runtime_error("score: dims mismatch");
    RegionScore s;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        bool p = label_in_region(pred.data[i], kind);
        bool t = label_in_region(truth.data[i], kind);
        s.pred_count += p;
        s.truth_count += t;
        s.overlap += p && t;
    }
    if (s.pred_count == 0 && s.truth_count == 0) {
        s.dice = s.ppv = s.sensitivity = 1.0;
        return s;
    }
    s.dice = double(s.overlap) / (double(s.pred_count + s.truth_count) / 2.0);
    s.ppv = s.pred_count ? double(s.overlap) / double(s.pred_count) : 0.0;
    s.sensitivity = s.truth_count ? double(s.overlap) / double(s.truth_count) : 0.0;
    return s;
}

ScoreReport score_all(const LabelVolume& pred, const LabelVolume& truth) {
    return {{score(pred, truth, RegionKind::Complete), score(pred, truth, RegionKind::Core),
             score(pred, truth, RegionKind::Enhancing)}};
}

std::string report_to_json(const ScoreReport& report) {
    nlohmann::json doc;
    const RegionKind kinds[3] = {RegionKind::Complete, RegionKind::Core, RegionKind::Enhancing};
    for (int k = 0; k < 3; ++k) {
        const RegionScore& s = report.regions[k];
        doc[region_name(kinds[k])] = {{"dice", s.dice},
                                      {"ppv", s.ppv},
                                      {"sensitivity", s.sensitivity},
                                      {"pred_voxels", s.pred_count},
                                      {"truth_voxels", s.truth_count},
                                      {"overlap_voxels", s.overlap}};
    }
    return doc.dump(2);
}

}  // namespace bts
