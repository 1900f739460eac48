#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bts {

struct Dims3 {
    int z = 0, y = 0, x = 0;
    bool operator==(const Dims3&) const = default;
    std::size_t voxels() const { return std::size_t(z) * y * x; }
};

enum class ViewAxis { Axial, Coronal, Sagittal };

const char* axis_name(ViewAxis axis);
ViewAxis axis_from_name(const std::string& name);

/// Multi-channel intensity volume, channel-major, x fastest.
struct MultiModalVolume {
    Dims3 dims;
    int channels = 0;
    std::vector<std::string> channel_names;
    std::vector<float> data;  // [c][z][y][x]

    std::size_t index(int c, int z, int y, int x) const {
        return ((std::size_t(c) * dims.z + z) * dims.y + y) * std::size_t(dims.x) + x;
    }
    float at(int c, int z, int y, int x) const { return data[index(c, z, y, x)]; }
    float& at(int c, int z, int y, int x) { return data[index(c, z, y, x)]; }

    // Index of a named channel, -1 if absent.
    int channel(const std::string& name) const;
};

MultiModalVolume make_volume(Dims3 dims, int channels,
                             std::vector<std::string> channel_names = {});

/// Per-voxel class labels in {0..4}.
struct LabelVolume {
    Dims3 dims;
    std::vector<std::uint8_t> data;  // [z][y][x]

    std::size_t index(int z, int y, int x) const {
        return (std::size_t(z) * dims.y + y) * std::size_t(dims.x) + x;
    }
    std::uint8_t at(int z, int y, int x) const { return data[index(z, y, x)]; }
    std::uint8_t& at(int z, int y, int x) { return data[index(z, y, x)]; }
};

LabelVolume make_label_volume(Dims3 dims);

/// One 2D slice of a volume, channel-major, copied out of the parent.
struct SliceTensor {
    ViewAxis axis = ViewAxis::Axial;
    int index = 0;
    int height = 0, width = 0, channels = 0;
    std::vector<float> data;  // [c][y][x]

    float at(int c, int y, int x) const {
        return data[(std::size_t(c) * height + y) * width + x];
    }
    float& at(int c, int y, int x) {
        return data[(std::size_t(c) * height + y) * width + x];
    }
};

int axis_extent(Dims3 dims, ViewAxis axis);

SliceTensor extract_slice(const MultiModalVolume& vol, ViewAxis axis, int index);
void insert_slice(MultiModalVolume& vol, const SliceTensor& slice);

// Label-plane counterparts used when assembling per-view segmentations.
std::vector<std::uint8_t> extract_label_slice(const LabelVolume& lab, ViewAxis axis, int index,
                                              int* height = nullptr, int* width = nullptr);
void insert_label_slice(LabelVolume& lab, ViewAxis axis, int index,
                        const std::vector<std::uint8_t>& plane);

// MMV1 container: one JSON header line, then a raw little-endian payload
// in [c][z][y][x] order. Intensities are f32le, labels u8 with channels=1.
MultiModalVolume load_volume(const std::string& path);
void save_volume(const std::string& path, const MultiModalVolume& vol);
LabelVolume load_label_volume(const std::string& path);
void save_label_volume(const std::string& path, const LabelVolume& lab);

}  // namespace bts
