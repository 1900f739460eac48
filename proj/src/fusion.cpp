#include "bts/fusion.hpp"

#include <stdexcept>

namespace bts {

std::uint8_t fuse_voxel(std::uint8_t ra, std::uint8_t rc, std::uint8_t rs) {
    if (ra > 4 || rc > 4 || rs > 4)
        throw std::runtime_error("fuse_voxel: label outside {0..4}");
    int positive = (ra > 0) + (rc > 0) + (rs > 0);
    std::uint8_t r = 0;
    if (positive >= 2) r = 2;
    for (std::uint8_t lab : {std::uint8_t(1), std::uint8_t(3), std::uint8_t(4)}) {
        int agree = (ra == lab) + (rc == lab) + (rs == lab);
        if (agree >= 2) r = lab;
    }
    return r;
}

LabelVolume fuse_volumes(const LabelVolume& va, const LabelVolume& vc, const LabelVolume& vs) {
    if (va.dims != vc.dims || va.dims != vs.dims)
        throw std::runtime_error("fuse_volumes: dims mismatch");
    LabelVolume out = make_label_volume(va.dims);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = fuse_voxel(va.data[i], vc.data[i], vs.data[i]);
    return out;
}

}  // namespace bts
