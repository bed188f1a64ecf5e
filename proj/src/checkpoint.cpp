#include "flatland/checkpoint.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace flatland::checkpoint {

namespace {

using Kind = CheckpointError::Kind;

constexpr char kMagic[4] = {'F', 'L', 'N', 'D'};

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(char(v & 0xFF));
    out.push_back(char((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xFF));
}

struct Reader {
    const unsigned char* data;
    std::size_t size;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > size)
            throw CheckpointError(Kind::Truncated, "checkpoint payload ends mid-field");
    }
    std::uint16_t u16() {
        need(2);
        const std::uint16_t v = std::uint16_t(data[pos]) | std::uint16_t(data[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(data[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return data[pos++];
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(data[pos + i]) << (8 * i);
        pos += 8;
        return std::bit_cast<double>(v);
    }
};

std::uint8_t activation_code(nn::Activation a) {
    return a == nn::Activation::Tanh ? 0 : 1;
}

std::uint8_t loss_code(nn::LossKind k) { return k == nn::LossKind::Mse ? 0 : 1; }

}  // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t n = 0; n < 256; ++n) {
            std::uint32_t c = n;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[n] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

std::string encode_checkpoint(const nn::ModelSpec& spec, const nn::ParamVector& params) {
    spec.validate();
    if (long(params.size()) != spec.param_count())
        throw DimensionError("parameter vector does not match the model spec");
    for (double v : params)
        if (!std::isfinite(v)) throw NumericError("refusing to store non-finite parameters");

    std::string out(kMagic, 4);
    put_u16(out, kFormatVersion);
    put_u16(out, std::uint16_t(spec.layer_widths.size()));
    for (int w : spec.layer_widths) put_u32(out, std::uint32_t(w));
    out.push_back(char(activation_code(spec.activation)));
    out.push_back(char(loss_code(spec.loss_kind)));
    for (double v : params) put_f64(out, v);

    const auto* payload = reinterpret_cast<const unsigned char*>(out.data()) + 4;
    put_u32(out, crc32(payload, out.size() - 4));
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 4)
        throw CheckpointError(Kind::Truncated, "checkpoint is shorter than its magic header");
    if (std::memcmp(data, kMagic, 4) != 0)
        throw CheckpointError(Kind::BadMagic, "not a checkpoint file (bad magic bytes)");
    if (bytes.size() < 8)
        throw CheckpointError(Kind::Truncated, "checkpoint is too short to carry a crc");

    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= std::uint32_t(data[bytes.size() - 4 + i]) << (8 * i);
    if (crc32(data + 4, bytes.size() - 8) != stored)
        throw CheckpointError(Kind::BadCrc, "checkpoint crc mismatch (corrupted file)");

    Reader r{data + 4, bytes.size() - 8};
    const std::uint16_t version = r.u16();
    if (version != kFormatVersion)
        throw CheckpointError(Kind::UnsupportedVersion,
                              "unsupported checkpoint format version " + std::to_string(version));

    Checkpoint cp;
    const std::uint16_t layer_count = r.u16();
    if (layer_count < 2)
        throw CheckpointError(Kind::BadField, "checkpoint needs at least two layer widths");
    cp.spec.layer_widths.reserve(layer_count);
    for (std::uint16_t i = 0; i < layer_count; ++i) {
        const std::uint32_t w = r.u32();
        if (w == 0 || w > 0x7FFFFFFFu)
            throw CheckpointError(Kind::BadField, "checkpoint layer width out of range");
        cp.spec.layer_widths.push_back(int(w));
    }
    const std::uint8_t act = r.u8();
    if (act > 1) throw CheckpointError(Kind::BadField, "unknown activation code");
    cp.spec.activation = act == 0 ? nn::Activation::Tanh : nn::Activation::Relu;
    const std::uint8_t lk = r.u8();
    if (lk > 1) throw CheckpointError(Kind::BadField, "unknown loss code");
    cp.spec.loss_kind = lk == 0 ? nn::LossKind::Mse : nn::LossKind::SoftmaxCrossEntropy;

    const long expected = cp.spec.param_count();
    if (r.size - r.pos != std::size_t(expected) * 8)
        throw CheckpointError(Kind::Truncated,
                              "checkpoint parameter payload does not match the layer widths");
    cp.params.reserve(expected);
    for (long i = 0; i < expected; ++i) cp.params.push_back(r.f64());
    return cp;
}

void save_checkpoint(const std::string& path, const nn::ModelSpec& spec,
                     const nn::ParamVector& params) {
    const std::string bytes = encode_checkpoint(spec, params);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw CheckpointError(Kind::OpenFailed, "cannot open for writing: " + path);
    const std::size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
    const bool flushed = std::fclose(f) == 0;
    if (written != bytes.size() || !flushed)
        throw CheckpointError(Kind::WriteFailed, "short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw CheckpointError(Kind::OpenFailed, "cannot open checkpoint: " + path);
    std::string bytes;
    char buf[65536];
    std::size_t got = 0;
    while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) bytes.append(buf, got);
    std::fclose(f);
    return decode_checkpoint(bytes);
}

}  // namespace flatland::checkpoint
