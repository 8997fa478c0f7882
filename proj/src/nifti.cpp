#include "mmsyn/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <type_traits>

#include "mmsyn/errors.hpp"

namespace mmsyn::nifti {
namespace {

// NIfTI-1 header, 348 bytes. Natural alignment reproduces the on-disk layout.
struct Header {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
static_assert(sizeof(Header) == 348, "NIfTI-1 header layout");

enum DataType : std::int16_t {
    kUInt8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
    kInt8 = 256,
    kUInt16 = 512,
};

template <typename T>
T byteswap_value(T v) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

template <typename T>
void swap_inplace(T& v) {
    v = byteswap_value(v);
}

void swap_header(Header& h) {
    swap_inplace(h.sizeof_hdr);
    for (auto& d : h.dim) swap_inplace(d);
    swap_inplace(h.datatype);
    swap_inplace(h.bitpix);
    for (auto& p : h.pixdim) swap_inplace(p);
    swap_inplace(h.vox_offset);
    swap_inplace(h.scl_slope);
    swap_inplace(h.scl_inter);
}

struct GzCloser {
    void operator()(gzFile f) const {
        if (f) gzclose(f);
    }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

void read_exact(gzFile f, void* dst, std::size_t n, const std::filesystem::path& path) {
    auto* out = static_cast<unsigned char*>(dst);
    while (n > 0) {
        const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
        const int got = gzread(f, out, chunk);
        if (got <= 0) throw DataError("truncated NIfTI file: " + path.string());
        out += got;
        n -= static_cast<std::size_t>(got);
    }
}

struct RawImage {
    std::array<std::int64_t, 3> dims{1, 1, 1};
    std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
    std::vector<double> values;
};

template <typename T>
void decode(const std::vector<unsigned char>& bytes, bool swap, std::vector<double>& out) {
    const std::size_t n = bytes.size() / sizeof(T);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        T v;
        std::memcpy(&v, bytes.data() + i * sizeof(T), sizeof(T));
        if (swap) v = byteswap_value(v);
        out[i] = static_cast<double>(v);
    }
}

RawImage read_raw(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("NIfTI file not found: " + path.string());
    GzHandle f(gzopen(path.c_str(), "rb"));
    if (!f) throw DataError("cannot open NIfTI file: " + path.string());

    Header h{};
    read_exact(f.get(), &h, sizeof(h), path);
    bool swap = false;
    if (h.sizeof_hdr != 348) {
        if (byteswap_value(h.sizeof_hdr) != 348) throw DataError("not a NIfTI-1 file: " + path.string());
        swap = true;
        swap_header(h);
    }
    if (std::memcmp(h.magic, "n+1", 4) != 0 && std::memcmp(h.magic, "ni1", 4) != 0) {
        throw DataError("bad NIfTI-1 magic in " + path.string());
    }
    if (std::memcmp(h.magic, "ni1", 4) == 0) {
        throw DataError("detached header/image pairs are not supported: " + path.string());
    }

    const int ndim = h.dim[0];
    if (ndim < 1 || ndim > 7) throw DataError("invalid dim[0] in " + path.string());
    for (int d = 4; d <= ndim; ++d) {
        if (h.dim[d] > 1) {
            throw DataError("expected 3D volume, got " + std::to_string(ndim) + "D image in " + path.string());
        }
    }
    RawImage img;
    for (int d = 0; d < 3; ++d) {
        img.dims[d] = d < ndim ? h.dim[d + 1] : 1;
        if (img.dims[d] < 1) throw DataError("non-positive dimension in " + path.string());
        if (d < ndim && h.pixdim[d + 1] > 0.0f) img.spacing[d] = h.pixdim[d + 1];
    }

    std::size_t elem = 0;
    switch (h.datatype) {
        case kUInt8:
        case kInt8: elem = 1; break;
        case kInt16:
        case kUInt16: elem = 2; break;
        case kInt32:
        case kFloat32: elem = 4; break;
        case kFloat64: elem = 8; break;
        default: throw DataError("unsupported NIfTI datatype " + std::to_string(h.datatype) + " in " + path.string());
    }

    const auto skip = static_cast<std::int64_t>(h.vox_offset) - static_cast<std::int64_t>(sizeof(Header));
    if (skip < 0) throw DataError("invalid vox_offset in " + path.string());
    std::vector<unsigned char> pad(static_cast<std::size_t>(skip));
    if (skip > 0) read_exact(f.get(), pad.data(), pad.size(), path);

    const auto count = static_cast<std::size_t>(img.dims[0] * img.dims[1] * img.dims[2]);
    std::vector<unsigned char> bytes(count * elem);
    read_exact(f.get(), bytes.data(), bytes.size(), path);

    switch (h.datatype) {
        case kUInt8: decode<std::uint8_t>(bytes, swap, img.values); break;
        case kInt8: decode<std::int8_t>(bytes, swap, img.values); break;
        case kInt16: decode<std::int16_t>(bytes, swap, img.values); break;
        case kUInt16: decode<std::uint16_t>(bytes, swap, img.values); break;
        case kInt32: decode<std::int32_t>(bytes, swap, img.values); break;
        case kFloat32: decode<float>(bytes, swap, img.values); break;
        case kFloat64: decode<double>(bytes, swap, img.values); break;
        default: break;
    }

    const bool scaled = h.scl_slope != 0.0f && std::isfinite(h.scl_slope) &&
                        (h.scl_slope != 1.0f || h.scl_inter != 0.0f);
    if (scaled) {
        for (auto& v : img.values) v = v * h.scl_slope + h.scl_inter;
    }
    return img;
}

Header make_header(const std::array<std::int64_t, 3>& dims, const std::array<float, 3>& spacing,
                   DataType type, std::int16_t bitpix) {
    Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    for (int d = 0; d < 3; ++d) {
        if (dims[d] > 32767) throw DataError("dimension too large for NIfTI-1");
        h.dim[d + 1] = static_cast<std::int16_t>(dims[d]);
        h.pixdim[d + 1] = spacing[d];
    }
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.pixdim[0] = 1.0f;
    h.datatype = type;
    h.bitpix = bitpix;
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.xyzt_units = 2;  // millimetres
    std::memcpy(h.magic, "n+1", 4);
    return h;
}

bool ends_with_gz(const std::filesystem::path& p) { return p.extension() == ".gz"; }

void write_bytes(const std::filesystem::path& path, const Header& h, const void* data, std::size_t nbytes) {
    const char extension[4] = {0, 0, 0, 0};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (ends_with_gz(path)) {
        GzHandle f(gzopen(path.c_str(), "wb6"));
        if (!f) throw DataError("cannot write " + path.string());
        bool ok = gzwrite(f.get(), &h, sizeof(h)) == static_cast<int>(sizeof(h));
        ok = ok && gzwrite(f.get(), extension, 4) == 4;
        const auto* p = static_cast<const unsigned char*>(data);
        while (ok && nbytes > 0) {
            const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(nbytes, 1u << 30));
            ok = gzwrite(f.get(), p, chunk) == static_cast<int>(chunk);
            p += chunk;
            nbytes -= chunk;
        }
        if (!ok || gzclose(f.release()) != Z_OK) throw DataError("failed writing " + path.string());
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(&h), sizeof(h));
    out.write(extension, 4);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(nbytes));
    if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

Volume3D read_volume(const std::filesystem::path& path, Modality modality) {
    RawImage raw = read_raw(path);
    std::size_t nan_count = 0;
    std::size_t inf_count = 0;
    Volume3D v(raw.dims[0], raw.dims[1], raw.dims[2]);
    v.spacing = raw.spacing;
    v.modality = modality;
    for (std::size_t i = 0; i < raw.values.size(); ++i) {
        const float x = static_cast<float>(raw.values[i]);
        if (std::isnan(x)) ++nan_count;
        else if (std::isinf(x)) ++inf_count;
        v.voxels[i] = x;
    }
    if (nan_count + inf_count > 0) {
        throw DataError(path.string() + ": volume contains non-finite voxels (NaN: " + std::to_string(nan_count) +
                        ", Inf: " + std::to_string(inf_count) + ")");
    }
    return v;
}

SegVolume3D read_segmentation(const std::filesystem::path& path) {
    RawImage raw = read_raw(path);
    SegVolume3D s(raw.dims[0], raw.dims[1], raw.dims[2]);
    s.spacing = raw.spacing;
    std::size_t bad = 0;
    for (std::size_t i = 0; i < raw.values.size(); ++i) {
        const double x = raw.values[i];
        // BraTS releases before 2021 stored enhancing tumor as label 4.
        const double label = x == 4.0 ? 3.0 : x;
        if (!(label >= 0.0 && label <= 3.0) || label != std::floor(label)) {
            ++bad;
            continue;
        }
        s.voxels[i] = static_cast<std::uint8_t>(label);
    }
    if (bad > 0) {
        throw DataError(path.string() + ": " + std::to_string(bad) + " voxels carry labels outside {0,1,2,3}");
    }
    return s;
}

void write_volume(const Volume3D& v, const std::filesystem::path& path) {
    const Header h = make_header(v.dims, v.spacing, kFloat32, 32);
    write_bytes(path, h, v.voxels.data(), v.voxels.size() * sizeof(float));
}

void write_segmentation(const SegVolume3D& s, const std::filesystem::path& path) {
    const Header h = make_header(s.dims, s.spacing, kUInt8, 8);
    write_bytes(path, h, s.voxels.data(), s.voxels.size());
}

}  // namespace mmsyn::nifti
