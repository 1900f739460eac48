#include "bts/volume.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace bts {

using nlohmann::json;

const char* axis_name(ViewAxis axis) {
    switch (axis) {
        case ViewAxis::Axial: return "axial";
        case ViewAxis::Coronal: return "coronal";
        case ViewAxis::Sagittal: return "sagittal";
    }
    return "?";
}

ViewAxis axis_from_name(const std::string& name) {
    if (name == "axial") return ViewAxis::Axial;
    if (name == "coronal") return ViewAxis::Coronal;
    if (name == "sagittal") return ViewAxis::Sagittal;
    throw std::runtime_error("unknown view axis: " + name);
}

int MultiModalVolume::channel(const std::string& name) const {
    for (int c = 0; c < int(channel_names.size()); ++c)
        if (channel_names[c] == name) return c;
    return -1;
}

MultiModalVolume make_volume(Dims3 dims, int channels, std::vector<std::string> channel_names) {
    if (dims.z <= 0 || dims.y <= 0 || dims.x <= 0 || channels <= 0)
        throw std::runtime_error("volume dims and channels must be positive");
    if (channel_names.empty()) {
        if (channels == 3) channel_names = {"flair", "t1c", "t2"};
        else if (channels == 4) channel_names = {"flair", "t1", "t1c", "t2"};
        else
            for (int c = 0; c < channels; ++c) channel_names.push_back("ch" + std::to_string(c));
    }
    if (int(channel_names.size()) != channels)
        throw std::runtime_error("channel_names size does not match channel count");
    MultiModalVolume v;
    v.dims = dims;
    v.channels = channels;
    v.channel_names = std::move(channel_names);
    v.data.assign(std::size_t(channels) * dims.voxels(), 0.0f);
    return v;
}

LabelVolume make_label_volume(Dims3 dims) {
    if (dims.z <= 0 || dims.y <= 0 || dims.x <= 0)
        throw std::runtime_error("label volume dims must be positive");
    LabelVolume l;
    l.dims = dims;
    l.data.assign(dims.voxels(), 0);
    return l;
}

int axis_extent(Dims3 dims, ViewAxis axis) {
    switch (axis) {
        case ViewAxis::Axial: return dims.z;
        case ViewAxis::Coronal: return dims.y;
        case ViewAxis::Sagittal: return dims.x;
    }
    return 0;
}

namespace {

// Slice plane coordinates: axial (y,x) of fixed z, coronal (z,x) of fixed y,
// sagittal (z,y) of fixed x.
void slice_shape(Dims3 dims, ViewAxis axis, int& h, int& w) {
    switch (axis) {
        case ViewAxis::Axial: h = dims.y; w = dims.x; break;
        case ViewAxis::Coronal: h = dims.z; w = dims.x; break;
        case ViewAxis::Sagittal: h = dims.z; w = dims.y; break;
    }
}

void slice_to_voxel(ViewAxis axis, int index, int py, int px, int& z, int& y, int& x) {
    switch (axis) {
        case ViewAxis::Axial: z = index; y = py; x = px; break;
        case ViewAxis::Coronal: y = index; z = py; x = px; break;
        case ViewAxis::Sagittal: x = index; z = py; y = px; break;
    }
}

void check_index(Dims3 dims, ViewAxis axis, int index) {
    int n = axis_extent(dims, axis);
    if (index < 0 || index >= n)
        throw std::runtime_error(std::string("slice index out of range for ") + axis_name(axis) +
                                 " axis: " + std::to_string(index));
}

}  // namespace

SliceTensor extract_slice(const MultiModalVolume& vol, ViewAxis axis, int index) {
    check_index(vol.dims, axis, index);
    SliceTensor s;
    s.axis = axis;
    s.index = index;
    s.channels = vol.channels;
    slice_shape(vol.dims, axis, s.height, s.width);
    s.data.resize(std::size_t(s.channels) * s.height * s.width);
    for (int c = 0; c < s.channels; ++c)
        for (int py = 0; py < s.height; ++py)
            for (int px = 0; px < s.width; ++px) {
                int z, y, x;
                slice_to_voxel(axis, index, py, px, z, y, x);
                s.at(c, py, px) = vol.at(c, z, y, x);
            }
    return s;
}

void insert_slice(MultiModalVolume& vol, const SliceTensor& slice) {
    check_index(vol.dims, slice.axis, slice.index);
    int h, w;
    slice_shape(vol.dims, slice.axis, h, w);
    if (h != slice.height || w != slice.width || slice.channels != vol.channels)
        throw std::runtime_error("slice shape does not match volume");
    for (int c = 0; c < slice.channels; ++c)
        for (int py = 0; py < h; ++py)
            for (int px = 0; px < w; ++px) {
                int z, y, x;
                slice_to_voxel(slice.axis, slice.index, py, px, z, y, x);
                vol.at(c, z, y, x) = slice.at(c, py, px);
            }
}

std::vector<std::uint8_t> extract_label_slice(const LabelVolume& lab, ViewAxis axis, int index,
                                              int* height, int* width) {
    check_index(lab.dims, axis, index);
    int h, w;
    slice_shape(lab.dims, axis, h, w);
    std::vector<std::uint8_t> plane(std::size_t(h) * w);
    for (int py = 0; py < h; ++py)
        for (int px = 0; px < w; ++px) {
            int z, y, x;
            slice_to_voxel(axis, index, py, px, z, y, x);
            plane[std::size_t(py) * w + px] = lab.at(z, y, x);
        }
    if (height) *height = h;
    if (width) *width = w;
    return plane;
}

void insert_label_slice(LabelVolume& lab, ViewAxis axis, int index,
                        const std::vector<std::uint8_t>& plane) {
    check_index(lab.dims, axis, index);
    int h, w;
    slice_shape(lab.dims, axis, h, w);
    if (plane.size() != std::size_t(h) * w)
        throw std::runtime_error("label plane size does not match volume");
    for (int py = 0; py < h; ++py)
        for (int px = 0; px < w; ++px) {
            int z, y, x;
            slice_to_voxel(axis, index, py, px, z, y, x);
            lab.at(z, y, x) = plane[std::size_t(py) * w + px];
        }
}

namespace {

json read_header(std::istream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": missing MMV1 header");
    json hdr;
    try {
        hdr = json::parse(line);
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": malformed MMV1 header: " + e.what());
    }
    if (!hdr.is_object() || hdr.value("magic", "") != "MMV1")
        throw std::runtime_error(path + ": not an MMV1 file");
    return hdr;
}

Dims3 header_dims(const json& hdr, const std::string& path) {
    if (!hdr.contains("dims") || !hdr["dims"].is_array() || hdr["dims"].size() != 3)
        throw std::runtime_error(path + ": MMV1 header dims must be [Z,Y,X]");
    Dims3 d{hdr["dims"][0].get<int>(), hdr["dims"][1].get<int>(), hdr["dims"][2].get<int>()};
    if (d.z <= 0 || d.y <= 0 || d.x <= 0)
        throw std::runtime_error(path + ": MMV1 dims must be positive");
    return d;
}

void read_payload(std::istream& in, char* dst, std::size_t bytes, const std::string& path) {
    in.read(dst, std::streamsize(bytes));
    if (std::size_t(in.gcount()) != bytes)
        throw std::runtime_error(path + ": payload length mismatch (expected " +
                                 std::to_string(bytes) + " bytes, got " +
                                 std::to_string(in.gcount()) + ")");
    char extra;
    if (in.read(&extra, 1))
        throw std::runtime_error(path + ": payload length mismatch (trailing bytes)");
}

}  // namespace

MultiModalVolume load_volume(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    json hdr = read_header(in, path);
    if (hdr.value("dtype", "") != "f32le")
        throw std::runtime_error(path + ": expected dtype f32le");
    Dims3 dims = header_dims(hdr, path);
    int channels = hdr.value("channels", 0);
    if (channels < 1) throw std::runtime_error(path + ": invalid channel count");
    std::vector<std::string> names;
    if (hdr.contains("channel_names"))
        names = hdr["channel_names"].get<std::vector<std::string>>();
    MultiModalVolume vol = make_volume(dims, channels, names);
    read_payload(in, reinterpret_cast<char*>(vol.data.data()), vol.data.size() * sizeof(float),
                 path);
    for (std::size_t i = 0; i < vol.data.size(); ++i)
        if (!std::isfinite(vol.data[i]))
            throw std::runtime_error(path + ": non-finite value at payload offset " +
                                     std::to_string(i));
    return vol;
}

void save_volume(const std::string& path, const MultiModalVolume& vol) {
    json hdr = {{"magic", "MMV1"},
                {"dtype", "f32le"},
                {"dims", {vol.dims.z, vol.dims.y, vol.dims.x}},
                {"channels", vol.channels},
                {"channel_names", vol.channel_names}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << hdr.dump() << '\n';
    out.write(reinterpret_cast<const char*>(vol.data.data()),
              std::streamsize(vol.data.size() * sizeof(float)));
    if (!out) throw std::runtime_error(path + ": write failed");
}

LabelVolume load_label_volume(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    json hdr = read_header(in, path);
    if (hdr.value("dtype", "") != "u8")
        throw std::runtime_error(path + ": expected dtype u8 for labels");
    if (hdr.value("channels", 1) != 1)
        throw std::runtime_error(path + ": label volumes must have 1 channel");
    LabelVolume lab = make_label_volume(header_dims(hdr, path));
    read_payload(in, reinterpret_cast<char*>(lab.data.data()), lab.data.size(), path);
    for (std::size_t i = 0; i < lab.data.size(); ++i)
        if (lab.data[i] > 4)
            throw std::runtime_error(path + ": label out of range {0..4} at offset " +
                                     std::to_string(i));
    return lab;
}

void save_label_volume(const std::string& path, const LabelVolume& lab) {
    json hdr = {{"magic", "MMV1"},
                {"dtype", "u8"},
                {"dims", {lab.dims.z, lab.dims.y, lab.dims.x}},
                {"channels", 1},
                {"channel_names", {"label"}}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << hdr.dump() << '\n';
    out.write(reinterpret_cast<const char*>(lab.data.data()), std::streamsize(lab.data.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace bts
