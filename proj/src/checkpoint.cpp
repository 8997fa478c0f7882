#include "mmsyn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "mmsyn/digest.hpp"
#include "mmsyn/errors.hpp"

namespace mmsyn {
namespace {

constexpr char kMagic[8] = {'M', 'M', 'S', 'Y', 'N', 'C', 'K', '1'};

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1, Int64 = 2 };

DType to_dtype(torch::ScalarType t) {
    switch (t) {
        case torch::kFloat32: return DType::Float32;
        case torch::kFloat64: return DType::Float64;
        case torch::kInt64: return DType::Int64;
        default: throw std::invalid_argument("checkpoint: unsupported tensor dtype " + std::string(c10::toString(t)));
    }
}

torch::ScalarType from_dtype(std::uint8_t d) {
    switch (static_cast<DType>(d)) {
        case DType::Float32: return torch::kFloat32;
        case DType::Float64: return torch::kFloat64;
        case DType::Int64: return torch::kInt64;
    }
    throw DataError("checkpoint: unknown dtype code " + std::to_string(d));
}

class Writer {
public:
    void raw(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    template <typename T>
    void pod(T v) { raw(&v, sizeof(v)); }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        raw(s.data(), s.size());
    }
    const std::vector<char>& bytes() const { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    Reader(const std::vector<char>& buf, std::size_t end, std::string source)
        : buf_(buf), end_(end), source_(std::move(source)) {}

    void raw(void* p, std::size_t n) {
        if (n > end_ - pos_) throw DataError("corrupt checkpoint (truncated): " + source_);
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    template <typename T>
    T pod() {
        T v;
        raw(&v, sizeof(v));
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        if (n > end_ - pos_) throw DataError("corrupt checkpoint (truncated): " + source_);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == end_; }

private:
    const std::vector<char>& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;
    std::string source_;
};

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    Writer w;
    w.raw(kMagic, sizeof(kMagic));
    w.str(ckpt.fingerprint);
    w.str(ckpt.metadata.dump());
    w.pod<std::uint64_t>(ckpt.tensors.size());
    for (const auto& [name, tensor] : ckpt.tensors) {
        const auto t = tensor.detach().to(torch::kCPU).contiguous();
        w.str(name);
        w.pod(static_cast<std::uint8_t>(to_dtype(t.scalar_type())));
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.dim()));
        for (auto d : t.sizes()) w.pod<std::int64_t>(d);
        const auto nbytes = static_cast<std::uint64_t>(t.numel() * t.element_size());
        w.pod(nbytes);
        w.raw(t.data_ptr(), nbytes);
    }
    Fnv1a h;
    h.update(w.bytes().data(), w.bytes().size());
    w.pod(h.value());

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint not found: " + path.string());
    const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kMagic) + sizeof(std::uint64_t) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw DataError("corrupt checkpoint (bad header): " + path.string());
    }
    const std::size_t body = buf.size() - sizeof(std::uint64_t);
    std::uint64_t stored = 0;
    std::memcpy(&stored, buf.data() + body, sizeof(stored));
    Fnv1a h;
    h.update(buf.data(), body);
    if (h.value() != stored) throw DataError("corrupt checkpoint (checksum mismatch or truncated): " + path.string());

    Reader r(buf, body, path.string());
    char magic[sizeof(kMagic)];
    r.raw(magic, sizeof(magic));
    Checkpoint ckpt;
    ckpt.fingerprint = r.str();
    try {
        ckpt.metadata = nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception&) {
        throw DataError("corrupt checkpoint (metadata): " + path.string());
    }
    const auto count = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.str();
        const auto dtype = from_dtype(r.pod<std::uint8_t>());
        const auto ndim = r.pod<std::uint32_t>();
        if (ndim > 16) throw DataError("corrupt checkpoint (rank): " + path.string());
        std::vector<std::int64_t> dims(ndim);
        for (auto& d : dims) d = r.pod<std::int64_t>();
        const auto nbytes = r.pod<std::uint64_t>();
        auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
        if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != nbytes) {
            throw DataError("corrupt checkpoint (size of '" + name + "'): " + path.string());
        }
        r.raw(t.data_ptr(), nbytes);
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    if (!r.done()) throw DataError("corrupt checkpoint (trailing bytes): " + path.string());
    return ckpt;
}

std::map<std::string, torch::Tensor> named_state(const torch::nn::Module& module) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& p : module.named_parameters(true)) out.emplace(p.key(), p.value());
    for (const auto& b : module.named_buffers(true)) out.emplace(b.key(), b.value());
    return out;
}

void save_params(const TranslationModel& model, const std::filesystem::path& path, const nlohmann::json& metadata) {
    Checkpoint ckpt;
    ckpt.fingerprint = model->config().fingerprint();
    ckpt.metadata = metadata;
    ckpt.metadata["net"] = model->config().to_json();
    ckpt.tensors = named_state(*model);
    write_checkpoint(ckpt, path);
}

nlohmann::json load_params(TranslationModel& model, const std::filesystem::path& path) {
    Checkpoint ckpt = read_checkpoint(path);
    const std::string expected = model->config().fingerprint();
    if (ckpt.fingerprint != expected) {
        throw DataError("checkpoint fingerprint mismatch: file " + ckpt.fingerprint + ", model " + expected + " (" +
                        path.string() + ")");
    }
    torch::NoGradGuard no_grad;
    auto state = named_state(*model);
    for (auto& [name, dst] : state) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw DataError("checkpoint lacks tensor '" + name + "': " + path.string());
        if (it->second.sizes() != dst.sizes()) throw DataError("checkpoint tensor '" + name + "' has wrong shape");
        dst.copy_(it->second);
    }
    if (ckpt.tensors.size() != state.size()) throw DataError("checkpoint has unexpected extra tensors: " + path.string());
    return ckpt.metadata;
}

}  // namespace mmsyn
