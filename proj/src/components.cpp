#include "bts/components.hpp"

#include <array>
#include <cstdlib>
#include <stdexcept>

namespace bts {

namespace {

std::vector<std::array<int, 3>> neighbor_offsets(int connectivity) {
    std::vector<std::array<int, 3>> offs;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dz == 0 && dy == 0 && dx == 0) continue;
                int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
                if (connectivity == 6 && manhattan != 1) continue;
                offs.push_back({dz, dy, dx});
            }
    return offs;
}

}  // namespace

ComponentLabeling connected_components_3d(const std::vector<std::uint8_t>& mask, Dims3 dims,
                                          int connectivity) {
    if (dims.z <= 0 || dims.y <= 0 || dims.x <= 0)
        throw std::runtime_error("connected_components_3d: dims must be positive");
    if (mask.size() != dims.voxels())
        throw std::runtime_error("connected_components_3d: mask size does not match dims");
    if (connectivity != 6 && connectivity != 26)
        throw std::runtime_error("connected_components_3d: connectivity must be 6 or 26");

    auto offs = neighbor_offsets(connectivity);
    ComponentLabeling out;
    out.dims = dims;
    out.component_id.assign(mask.size(), 0);

    std::vector<std::size_t> stack;
    for (int z = 0; z < dims.z; ++z)
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x) {
                std::size_t seed = (std::size_t(z) * dims.y + y) * dims.x + x;
                if (!mask[seed] || out.component_id[seed] != 0) continue;
                int id = ++out.component_count;
                std::size_t size = 0;
                stack.assign(1, seed);
                out.component_id[seed] = id;
                while (!stack.empty()) {
                    std::size_t cur = stack.back();
                    stack.pop_back();
                    ++size;
                    int cz = int(cur / (std::size_t(dims.y) * dims.x));
                    int rem = int(cur % (std::size_t(dims.y) * dims.x));
                    int cy = rem / dims.x;
                    int cx = rem % dims.x;
                    for (const auto& o : offs) {
                        int nz = cz + o[0], ny = cy + o[1], nx = cx + o[2];
                        if (nz < 0 || nz >= dims.z || ny < 0 || ny >= dims.y || nx < 0 ||
                            nx >= dims.x)
                            continue;
                        std::size_t ni = (std::size_t(nz) * dims.y + ny) * dims.x + nx;
                        if (mask[ni] && out.component_id[ni] == 0) {
                            out.component_id[ni] = id;
                            stack.push_back(ni);
                        }
                    }
                }
                out.component_sizes.push_back(size);
            }
    return out;
}

std::vector<std::uint8_t> border_reachable_6(const std::vector<std::uint8_t>& mask, Dims3 dims) {
    if (mask.size() != dims.voxels())
        throw std::runtime_error("border_reachable_6: mask size does not match dims");
    std::vector<std::uint8_t> reach(mask.size(), 0);
    std::vector<std::size_t> stack;
    auto push = [&](int z, int y, int x) {
        std::size_t i = (std::size_t(z) * dims.y + y) * dims.x + x;
        if (mask[i] && !reach[i]) {
            reach[i] = 1;
            stack.push_back(i);
        }
    };
    for (int z = 0; z < dims.z; ++z)
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x)
                if (z == 0 || z == dims.z - 1 || y == 0 || y == dims.y - 1 || x == 0 ||
                    x == dims.x - 1)
                    push(z, y, x);
    const int dzs[6] = {1, -1, 0, 0, 0, 0};
    const int dys[6] = {0, 0, 1, -1, 0, 0};
    const int dxs[6] = {0, 0, 0, 0, 1, -1};
    while (!stack.empty()) {
        std::size_t cur = stack.back();
        stack.pop_back();
        int cz = int(cur / (std::size_t(dims.y) * dims.x));
        int rem = int(cur % (std::size_t(dims.y) * dims.x));
        int cy = rem / dims.x;
        int cx = rem % dims.x;
        for (int k = 0; k < 6; ++k) {
            int nz = cz + dzs[k], ny = cy + dys[k], nx = cx + dxs[k];
            if (nz < 0 || nz >= dims.z || ny < 0 || ny >= dims.y || nx < 0 || nx >= dims.x)
                continue;
            push(nz, ny, nx);
        }
    }
    return reach;
}

}  // namespace bts
