#include "bts/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace bts {

double phantom_class_mean(const std::string& channel_name, int label) {
    // label order: healthy, necrosis, edema, non-enhancing core, enhancing core
    static const double flair[5] = {60, 120, 180, 90, 150};
    static const double t1[5] = {70, 110, 45, 150, 190};
    static const double t1c[5] = {80, 40, 110, 140, 200};
    static const double t2[5] = {50, 140, 180, 100, 220};
    if (label < 0 || label > 4) throw std::runtime_error("phantom_class_mean: bad label");
    if (channel_name == "flair") return flair[label];
    if (channel_name == "t1") return t1[label];
    if (channel_name == "t1c") return t1c[label];
    if (channel_name == "t2") return t2[label];
    throw std::runtime_error("phantom_class_mean: unknown channel " + channel_name);
}

std::pair<MultiModalVolume, LabelVolume> generate_phantom(std::uint64_t seed,
                                                          const PhantomConfig& cfg) {
    const Dims3 d = cfg.dims;
    if (d.z < 24 || d.y < 24 || d.x < 24)
        throw std::runtime_error("generate_phantom: dims must be at least 24^3");
    if (cfg.noise_scale < 0) throw std::runtime_error("generate_phantom: negative noise scale");
    if (cfg.channels != 3 && cfg.channels != 4)
        throw std::runtime_error("generate_phantom: channels must be 3 or 4");
    if (!(cfg.necrosis_radius > 0 && cfg.enhancing_radius > cfg.necrosis_radius &&
          cfg.edema_radius > cfg.enhancing_radius))
        throw std::runtime_error("generate_phantom: radii must nest (necrosis < enhancing < edema)");
    if (cfg.nonenhancing_shell &&
        !(cfg.nonenhancing_radius > cfg.necrosis_radius &&
          cfg.nonenhancing_radius < cfg.enhancing_radius))
        throw std::runtime_error("generate_phantom: non-enhancing radius must lie between "
                                 "necrosis and enhancing radii");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);

    const double cz0 = (d.z - 1) / 2.0, cy0 = (d.y - 1) / 2.0, cx0 = (d.x - 1) / 2.0;
    // Shared axis scales keep the shells nested; small center jitter per case.
    double sz = 1.0 + 0.1 * uni(rng), sy = 1.0 + 0.1 * uni(rng), sx = 1.0 + 0.1 * uni(rng);
    double jz = 1.5 * uni(rng), jy = 1.5 * uni(rng), jx = 1.5 * uni(rng);
    const double tz = cz0 + jz, ty = cy0 + jy, tx = cx0 + jx;

    double min_half = std::min({cz0, cy0, cx0});
    if (cfg.brain_radius > min_half)
        throw std::runtime_error("generate_phantom: brain does not fit in the volume");
    double max_scale = std::max({sz, sy, sx});
    double jitter = std::sqrt(jz * jz + jy * jy + jx * jx);
    if (cfg.edema_radius * max_scale + jitter > cfg.brain_radius)
        throw std::runtime_error("generate_phantom: tumor does not fit inside the brain");

    MultiModalVolume vol = make_volume(d, cfg.channels);
    LabelVolume lab = make_label_volume(d);

    auto tumor_r2 = [&](int z, int y, int x) {
        double az = (z - tz) / sz, ay = (y - ty) / sy, ax = (x - tx) / sx;
        return az * az + ay * ay + ax * ax;
    };
    auto brain_r2 = [&](int z, int y, int x) {
        double az = z - cz0, ay = y - cy0, ax = x - cx0;
        return az * az + ay * ay + ax * ax;
    };

    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                if (brain_r2(z, y, x) > cfg.brain_radius * cfg.brain_radius) continue;
                double r2 = tumor_r2(z, y, x);
                int label = 0;
                if (r2 <= cfg.necrosis_radius * cfg.necrosis_radius) label = 1;
                else if (cfg.nonenhancing_shell &&
                         r2 <= cfg.nonenhancing_radius * cfg.nonenhancing_radius) label = 3;
                else if (r2 <= cfg.enhancing_radius * cfg.enhancing_radius) label = 4;
                else if (r2 <= cfg.edema_radius * cfg.edema_radius) label = 2;
                lab.at(z, y, x) = std::uint8_t(label);
            }

    std::normal_distribution<double> noise(0.0, 1.0);
    for (int c = 0; c < cfg.channels; ++c)
        for (int z = 0; z < d.z; ++z)
            for (int y = 0; y < d.y; ++y)
                for (int x = 0; x < d.x; ++x) {
                    if (brain_r2(z, y, x) > cfg.brain_radius * cfg.brain_radius) continue;
                    double v = phantom_class_mean(vol.channel_names[c], lab.at(z, y, x));
                    if (cfg.noise_scale > 0) v += cfg.noise_scale * noise(rng);
                    // Background stays exactly zero; brain voxels must not
                    // collide with the zero sentinel.
                    vol.at(c, z, y, x) = float(std::max(v, 1.0));
                }
    return {std::move(vol), std::move(lab)};
}

}  // namespace bts
