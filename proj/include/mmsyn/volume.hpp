#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmsyn/modality.hpp"

namespace mmsyn {

// Voxel storage follows NIfTI order: the first axis varies fastest, the third
// (axial) axis slowest, so one axial slice is a contiguous block of H*W values.
template <typename T>
struct Grid3D {
    std::array<std::int64_t, 3> dims{0, 0, 0};  // H, W, D
    std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
    std::vector<T> voxels;

    Grid3D() = default;
    Grid3D(std::int64_t h, std::int64_t w, std::int64_t d, T fill = T{})
        : dims{h, w, d}, voxels(static_cast<std::size_t>(h * w * d), fill) {}

    std::int64_t height() const { return dims[0]; }
    std::int64_t width() const { return dims[1]; }
    std::int64_t depth() const { return dims[2]; }
    std::size_t size() const { return voxels.size(); }
    std::size_t slice_size() const { return static_cast<std::size_t>(dims[0] * dims[1]); }

    std::size_t offset(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return static_cast<std::size_t>(i + dims[0] * (j + dims[1] * k));
    }
    T& at(std::int64_t i, std::int64_t j, std::int64_t k) { return voxels[offset(i, j, k)]; }
    const T& at(std::int64_t i, std::int64_t j, std::int64_t k) const { return voxels[offset(i, j, k)]; }

    std::span<const T> axial_plane(std::int64_t k) const {
        return std::span<const T>(voxels).subspan(static_cast<std::size_t>(k) * slice_size(), slice_size());
    }
};

struct Volume3D : Grid3D<float> {
    using Grid3D<float>::Grid3D;
    std::string subject_id;
    Modality modality = Modality::T1;
};

// Labels: 0 background, 1 NCR, 2 ED, 3 ET.
struct SegVolume3D : Grid3D<std::uint8_t> {
    using Grid3D<std::uint8_t>::Grid3D;
    std::string subject_id;
};

inline constexpr int kNumSegClasses = 4;

// Row-major 2D image: value(i, j) = data[i * width + j], i indexing the
// volume's first axis.
template <typename T>
struct Image2D {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<T> data;

    Image2D() = default;
    Image2D(std::int64_t h, std::int64_t w, T fill = T{})
        : height(h), width(w), data(static_cast<std::size_t>(h * w), fill) {}

    T& operator()(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * width + j)]; }
    const T& operator()(std::int64_t i, std::int64_t j) const {
        return data[static_cast<std::size_t>(i * width + j)];
    }
    friend bool operator==(const Image2D&, const Image2D&) = default;
};

using Slice2D = Image2D<float>;
using LabelSlice2D = Image2D<std::uint8_t>;

}  // namespace mmsyn
