#include "rmsd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rmsd {
namespace {

constexpr char kMagic[4] = {'R', 'M', 'S', 'D'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
public:
    void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_ += s;
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& in) : in_(in) {}

    void need(std::size_t n, const char* what) const {
        if (in_.size() - pos_ < n)
            throw CheckpointError(CheckpointError::Code::Truncated,
                                  std::string("checkpoint truncated while reading ") + what);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(in_[pos_++]);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        const std::uint64_t lo = u32(what);
        const std::uint64_t hi = u32(what);
        return lo | (hi << 32);
    }
    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    const std::string& in_;
    std::size_t pos_ = 0;
};

struct ManifestEntry {
    std::string name;
    std::uint8_t dtype;
    ParamKind kind;
    Shape shape;
};

}  // namespace

std::string encode_checkpoint(const ModelParams<float>& params, const NetworkConfig& cfg, const nlohmann::json& meta) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(kCheckpointVersion);
    w.str(nlohmann::json{{"network", cfg}, {"meta", meta}}.dump());
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& e : params.entries()) {
        w.str(e.name);
        w.u8(kDtypeF32);
        w.u8(static_cast<std::uint8_t>(e.kind));
        const Shape& s = e.value.shape();
        for (int d : {s.b, s.c, s.h, s.w}) w.u32(static_cast<std::uint32_t>(d));
    }
    for (const auto& e : params.entries())
        for (float v : e.value.data()) w.f32(v);
    return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw CheckpointError(CheckpointError::Code::BadMagic, "not a checkpoint file (bad magic bytes)");
    for (int i = 0; i < 4; ++i) r.u8("magic");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw CheckpointError(CheckpointError::Code::Version,
                              "unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                  std::to_string(kCheckpointVersion) + ")");

    Checkpoint ck;
    try {
        const auto header = nlohmann::json::parse(r.str("config"));
        ck.network = header.at("network").get<NetworkConfig>();
        ck.meta = header.value("meta", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Code::Malformed, std::string("checkpoint config: ") + e.what());
    }

    const std::uint32_t count = r.u32("tensor count");
    std::vector<ManifestEntry> manifest;
    manifest.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ManifestEntry m;
        m.name = r.str("tensor name");
        m.dtype = r.u8("dtype");
        const std::uint8_t kind = r.u8("kind");
        if (m.dtype != kDtypeF32 && m.dtype != kDtypeF64)
            throw CheckpointError(CheckpointError::Code::Malformed, "unknown dtype for " + m.name);
        if (kind > static_cast<std::uint8_t>(ParamKind::RunningVar))
            throw CheckpointError(CheckpointError::Code::Malformed, "unknown parameter kind for " + m.name);
        m.kind = static_cast<ParamKind>(kind);
        std::array<std::uint32_t, 4> dims{};
        for (auto& d : dims) d = r.u32("shape");
        m.shape = Shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                        static_cast<int>(dims[3])};
        if (!m.shape.valid())
            throw CheckpointError(CheckpointError::Code::Malformed, "invalid shape for " + m.name);
        manifest.push_back(std::move(m));
    }

    for (const auto& m : manifest) {
        std::vector<float> data(m.shape.size());
        for (auto& v : data) {
            if (m.dtype == kDtypeF32) {
                v = std::bit_cast<float>(r.u32("tensor payload"));
            } else {
                v = static_cast<float>(std::bit_cast<double>(r.u64("tensor payload")));
            }
        }
        try {
            ck.params.add(m.name, m.kind, Tensor<float>(m.shape, std::move(data)));
        } catch (const ContractError& e) {
            throw CheckpointError(CheckpointError::Code::Malformed, e.what());
        }
    }
    if (r.remaining() != 0)
        throw CheckpointError(CheckpointError::Code::Malformed, "trailing bytes after checkpoint payload");
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params, const NetworkConfig& cfg,
                     const nlohmann::json& meta) {
    const std::string bytes = encode_checkpoint(params, cfg, meta);
    // Write-then-rename so an interrupted save never clobbers the previous file.
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError(CheckpointError::Code::Io, "cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError(CheckpointError::Code::Io, "failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw CheckpointError(CheckpointError::Code::Io, "cannot move checkpoint into " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Code::Io, "cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str());
}

void verify_layout(const ModelParams<float>& loaded, const ModelParams<float>& reference) {
    const auto& a = loaded.entries();
    const auto& b = reference.entries();
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (a[i].name != b[i].name || a[i].kind != b[i].kind || a[i].value.shape() != b[i].value.shape())
            throw CheckpointError(CheckpointError::Code::Mismatch,
                                  "checkpoint entry " + std::to_string(i) + " is '" + a[i].name + "' " +
                                      a[i].value.shape().str() + " but the model expects '" + b[i].name + "' " +
                                      b[i].value.shape().str());
    }
    if (a.size() != b.size()) {
        const std::string first = a.size() > b.size() ? "unexpected entry '" + a[n].name + "'"
                                                       : "missing entry '" + b[n].name + "'";
        throw CheckpointError(CheckpointError::Code::Mismatch,
                              "checkpoint has " + std::to_string(a.size()) + " tensors, model expects " +
                                  std::to_string(b.size()) + ": " + first);
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected) {
    Checkpoint ck = load_checkpoint(path);
    verify_layout(ck.params, Network(expected).init<float>(0));
    return ck;
}

}  // namespace rmsd
