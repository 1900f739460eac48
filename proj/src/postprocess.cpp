#include "bts/postprocess.hpp"

#include <algorithm>
#include <stdexcept>

namespace bts {

double region_mean_intensity(const MultiModalVolume& vol, int channel,
                             const std::vector<std::size_t>& voxels) {
    if (voxels.empty()) throw std::runtime_error("region_mean_intensity: empty component");
    const float* ch = vol.data.data() + std::size_t(channel) * vol.dims.voxels();
    double sum = 0.0;
    for (std::size_t i : voxels) sum += double(ch[i]);
    return sum / double(voxels.size());
}

namespace {

int channel_or(const MultiModalVolume& vol, const char* name, int fallback) {
    int c = vol.channel(name);
    return c >= 0 ? c : fallback;
}

std::vector<std::vector<std::size_t>> component_voxels(const ComponentLabeling& cl) {
    std::vector<std::vector<std::size_t>> out(cl.component_count);
    for (int k = 0; k < cl.component_count; ++k) out[k].reserve(cl.component_sizes[k]);
    for (std::size_t i = 0; i < cl.component_id.size(); ++i)
        if (cl.component_id[i] > 0) out[cl.component_id[i] - 1].push_back(i);
    return out;
}

}  // namespace

LabelVolume postprocess(const LabelVolume& res_in, const MultiModalVolume& vol,
                        const PostprocessThresholds& th, const std::set<int>& steps) {
    if (res_in.dims != vol.dims) throw std::runtime_error("postprocess: dims mismatch");
    for (int s : steps)
        if (s < 1 || s > 6) throw std::runtime_error("postprocess: step outside {1..6}");
    const int c_flair = channel_or(vol, "flair", 0);
    const int c_t1c = channel_or(vol, "t1c", vol.channels == 4 ? 2 : 1);
    const int c_t2 = channel_or(vol, "t2", vol.channels - 1);
    const float* flair = vol.data.data() + std::size_t(c_flair) * vol.dims.voxels();
    const float* t1c = vol.data.data() + std::size_t(c_t1c) * vol.dims.voxels();
    const float* t2 = vol.data.data() + std::size_t(c_t2) * vol.dims.voxels();

    LabelVolume res = res_in;
    auto tumor_mask = [&] {
        std::vector<std::uint8_t> m(res.data.size());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = res.data[i] > 0;
        return m;
    };

    if (steps.count(1)) {
        auto cl = connected_components_3d(tumor_mask(), res.dims, 26);
        for (const auto& voxels : component_voxels(cl)) {
            if (region_mean_intensity(vol, c_flair, voxels) > th.t11 &&
                region_mean_intensity(vol, c_t2, voxels) > th.t12)
                for (std::size_t i : voxels) res.data[i] = 0;
        }
    }

    if (steps.count(2)) {
        double sum_flair = 0.0, sum_t2 = 0.0;
        std::size_t positive = 0;
        for (std::size_t i = 0; i < res.data.size(); ++i)
            if (res.data[i] > 0) {
                sum_flair += double(flair[i]);
                sum_t2 += double(t2[i]);
                ++positive;
            }
        if (positive > 0) {
            const double mean_flair = sum_flair / double(positive);
            const double mean_t2 = sum_t2 / double(positive);
            for (std::size_t i = 0; i < res.data.size(); ++i)
                if (res.data[i] < 4 && double(flair[i]) < th.t21 * mean_flair &&
                    double(t1c[i]) < th.t22 && double(t2[i]) < th.t23 * mean_t2)
                    res.data[i] = 0;
        }
    }

    if (steps.count(3)) {
        auto cl = connected_components_3d(tumor_mask(), res.dims, 26);
        if (cl.component_count > 0) {
            std::size_t vmax =
                *std::max_element(cl.component_sizes.begin(), cl.component_sizes.end());
            for (std::size_t i = 0; i < res.data.size(); ++i) {
                int id = cl.component_id[i];
                if (id > 0 && double(cl.component_sizes[id - 1]) / double(vmax) < th.t31)
                    res.data[i] = 0;
            }
        }
    }

    if (steps.count(4)) {
        std::vector<std::uint8_t> background(res.data.size());
        for (std::size_t i = 0; i < res.data.size(); ++i) background[i] = res.data[i] == 0;
        auto reach = border_reachable_6(background, res.dims);
        for (std::size_t i = 0; i < res.data.size(); ++i)
            if (background[i] && !reach[i]) res.data[i] = 1;
    }

    if (steps.count(5)) {
        for (std::size_t i = 0; i < res.data.size(); ++i)
            if (res.data[i] == 4 && double(t1c[i]) < th.t41) res.data[i] = 1;
    }

    if (steps.count(6)) {
        std::size_t vol_e = 0, vol_t = 0;
        for (std::uint8_t lab : res.data) {
            if (lab == 4) ++vol_e;
            if (lab > 0) ++vol_t;
        }
        if (vol_t > 0 && double(vol_e) / double(vol_t) < th.t61) {
            for (std::size_t i = 0; i < res.data.size(); ++i)
                if (res.data[i] == 2 && double(t1c[i]) < th.t62) res.data[i] = 3;
        }
    }

    return res;
}

}  // namespace bts
