#include "nledn/checkpoint.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>

namespace nledn {

namespace {

const char kMagic[6] = {'N', 'L', 'E', 'D', 'N', '\0'};
const char kStateMagic[8] = {'N', 'L', 'E', 'D', 'N', 'S', 'T', '\0'};

class Writer {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& bytes, std::size_t pos, const std::string& path)
        : bytes_(bytes), pos_(pos), path_(path) {}

    std::uint8_t u8() { return take(1)[0]; }
    std::uint16_t u16() {
        const auto* p = take(2);
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32() {
        const auto* p = take(4);
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) |
               (static_cast<std::uint32_t>(p[3]) << 24);
    }
    std::uint64_t u64() {
        std::uint64_t lo = u32();
        std::uint64_t hi = u32();
        return lo | (hi << 32);
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        const auto* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    void raw(void* dst, std::size_t n) { std::memcpy(dst, take(n), n); }
    std::size_t pos() const { return pos_; }

private:
    const std::uint8_t* take(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw Error("checkpoint: truncated file " + path_);
        const std::uint8_t* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_;
    std::string path_;
};

void write_config(Writer& w, const ModelConfig& cfg) {
    w.u32(static_cast<std::uint32_t>(cfg.base_channels));
    w.u32(static_cast<std::uint32_t>(cfg.growth_rate));
    w.u32(static_cast<std::uint32_t>(cfg.dense_layers));
    for (int k : cfg.encoder_grids) w.u32(static_cast<std::uint32_t>(k));
    for (int k : cfg.decoder_grids) w.u32(static_cast<std::uint32_t>(k));
    w.u8(cfg.nonlocal_enabled ? 1 : 0);
    w.u8(cfg.dense_connections ? 1 : 0);
    w.u8(cfg.pooling_enabled ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(cfg.num_blocks));
    w.u8(cfg.affinity_mode == AffinityMode::kRawSum ? 1 : 0);
    w.u64(cfg.seed);
}

ModelConfig read_config(Reader& r) {
    ModelConfig cfg;
    cfg.base_channels = static_cast<int>(r.u32());
    cfg.growth_rate = static_cast<int>(r.u32());
    cfg.dense_layers = static_cast<int>(r.u32());
    for (int& k : cfg.encoder_grids) k = static_cast<int>(r.u32());
    for (int& k : cfg.decoder_grids) k = static_cast<int>(r.u32());
    cfg.nonlocal_enabled = r.u8() != 0;
    cfg.dense_connections = r.u8() != 0;
    cfg.pooling_enabled = r.u8() != 0;
    cfg.num_blocks = static_cast<int>(r.u32());
    cfg.affinity_mode = r.u8() != 0 ? AffinityMode::kRawSum : AffinityMode::kSoftmax;
    cfg.seed = r.u64();
    return cfg;
}

void write_tensor(Writer& w, const std::string& name, const Tensor& t) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (int e : t.shape) w.u32(static_cast<std::uint32_t>(e));
    for (float v : t.data) w.f32(v);
}

std::pair<std::string, Tensor> read_tensor(Reader& r) {
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw Error("checkpoint: implausible tensor rank for " + name);
    std::vector<int> shape(rank);
    for (auto& e : shape) e = static_cast<int>(r.u32());
    Tensor t(shape);
    for (auto& v : t.data) v = r.f32();
    return {name, std::move(t)};
}

void atomic_write(const std::string& path, const void* header, std::size_t header_len,
                  const std::vector<std::uint8_t>& body) {
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, body.data(), static_cast<uInt>(body.size())));
    Writer tail;
    tail.u32(crc);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("checkpoint: cannot write " + tmp);
        f.write(static_cast<const char*>(header), static_cast<std::streamsize>(header_len));
        f.write(reinterpret_cast<const char*>(body.data()),
                static_cast<std::streamsize>(body.size()));
        f.write(reinterpret_cast<const char*>(tail.bytes().data()), 4);
        if (!f) throw Error("checkpoint: short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw Error("checkpoint: cannot move " + tmp + " into place");
    }
}

std::vector<std::uint8_t> read_file_checked(const std::string& path, const void* magic,
                                            std::size_t magic_len) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < magic_len + 4 || std::memcmp(bytes.data(), magic, magic_len) != 0) {
        throw Error("checkpoint: " + path + " is not a recognized checkpoint file");
    }
    // trailing CRC covers everything after the magic + u16 version
    const std::size_t body_start = magic_len + 2;
    const std::size_t body_len = bytes.size() - body_start - 4;
    const std::uint32_t actual = static_cast<std::uint32_t>(
        crc32(0L, bytes.data() + body_start, static_cast<uInt>(body_len)));
    const std::uint8_t* tp = bytes.data() + bytes.size() - 4;
    const std::uint32_t stored = static_cast<std::uint32_t>(tp[0]) |
                                 (static_cast<std::uint32_t>(tp[1]) << 8) |
                                 (static_cast<std::uint32_t>(tp[2]) << 16) |
                                 (static_cast<std::uint32_t>(tp[3]) << 24);
    if (stored != actual) {
        throw Error("checkpoint: CRC mismatch in " + path + " (file is corrupt)");
    }
    return bytes;
}

}  // namespace

void save_checkpoint(const NlednModel& model, const std::string& path) {
    Writer body;
    write_config(body, model.config);
    body.u32(static_cast<std::uint32_t>(model.num_tensors()));
    for (std::size_t i = 0; i < model.num_tensors(); ++i) {
        write_tensor(body, model.name(i), *model.tensor(i));
    }

    Writer head;
    head.raw(kMagic, sizeof(kMagic));
    head.u16(kCheckpointVersion);
    atomic_write(path, head.bytes().data(), head.bytes().size(), body.bytes());
}

NlednModel load_checkpoint(const std::string& path) {
    const auto bytes = read_file_checked(path, kMagic, sizeof(kMagic));
    Reader r(bytes, sizeof(kMagic), path);
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion) {
        throw Error("checkpoint: unsupported format version " + std::to_string(version) +
                    " in " + path);
    }
    const ModelConfig cfg = read_config(r);
    NlednModel model(cfg);
    const std::uint32_t count = r.u32();
    if (count != model.num_tensors()) {
        throw Error("checkpoint: " + path + " holds " + std::to_string(count) +
                    " tensors but the config implies " + std::to_string(model.num_tensors()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        auto [name, tensor] = read_tensor(r);
        auto dst = model.find(name);
        if (!dst->same_shape(tensor)) {
            throw Error("checkpoint: shape mismatch for '" + name + "': file " +
                        shape_str(tensor.shape) + " vs model " + shape_str(dst->shape));
        }
        *dst = std::move(tensor);
    }
    return model;
}

const Tensor* TensorBundle::find_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

std::string TensorBundle::scalar(const std::string& key) const {
    for (const auto& [k, v] : scalars) {
        if (k == key) return v;
    }
    throw Error("state bundle is missing field '" + key + "'");
}

void save_bundle(const TensorBundle& bundle, const std::string& path) {
    Writer body;
    body.u32(static_cast<std::uint32_t>(bundle.scalars.size()));
    for (const auto& [k, v] : bundle.scalars) {
        body.str(k);
        body.str(v);
    }
    body.u32(static_cast<std::uint32_t>(bundle.tensors.size()));
    for (const auto& [name, t] : bundle.tensors) write_tensor(body, name, t);

    Writer head;
    head.raw(kStateMagic, sizeof(kStateMagic));
    head.u16(kCheckpointVersion);
    atomic_write(path, head.bytes().data(), head.bytes().size(), body.bytes());
}

TensorBundle load_bundle(const std::string& path) {
    const auto bytes = read_file_checked(path, kStateMagic, sizeof(kStateMagic));
    Reader r(bytes, sizeof(kStateMagic), path);
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion) {
        throw Error("state bundle: unsupported version in " + path);
    }
    TensorBundle bundle;
    const std::uint32_t nscalars = r.u32();
    for (std::uint32_t i = 0; i < nscalars; ++i) {
        std::string k = r.str();
        std::string v = r.str();
        bundle.scalars.emplace_back(std::move(k), std::move(v));
    }
    const std::uint32_t ntensors = r.u32();
    for (std::uint32_t i = 0; i < ntensors; ++i) {
        bundle.tensors.push_back(read_tensor(r));
    }
    return bundle;
}

}  // namespace nledn
