#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "copi/errors.hpp"
#include "copi/network.hpp"

namespace copi {

namespace io {

inline std::uint32_t crc32(const unsigned char* p, std::size_t n, std::uint32_t seed = 0) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

/// Append-only little-endian byte buffer.
struct Sink {
    std::vector<unsigned char> bytes;

    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f64(double v) {
        std::uint64_t u;
        std::memcpy(&u, &v, 8);
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>(u >> (8 * i)));
    }
    void matrix(const Matrix& m) {
        u32(static_cast<std::uint32_t>(m.rows));
        u32(static_cast<std::uint32_t>(m.cols));
        for (double v : m.data) f64(v);
    }
};

struct Source {
    const std::vector<unsigned char>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* field) {
        if (pos + n > bytes.size())
            throw FormatError(std::string("checkpoint: truncated while reading ") + field);
    }
    std::uint8_t u8(const char* field) {
        need(1, field);
        return bytes[pos++];
    }
    std::uint32_t u32(const char* field) {
        need(4, field);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
        return v;
    }
    double f64(const char* field) {
        need(8, field);
        std::uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
    Matrix matrix(const char* field) {
        const std::uint32_t r = u32(field), c = u32(field);
        if (r == 0 || c == 0) throw FormatError(std::string("checkpoint: zero dimension in ") + field);
        Matrix m(r, c);
        need(8 * m.size(), field);
        for (double& v : m.data) v = f64(field);
        return m;
    }
};

inline void write_file(const std::string& path, Sink& sink) {
    // trailing CRC over everything written so far
    const std::uint32_t crc = crc32(sink.bytes.data(), sink.bytes.size());
    sink.u32(crc);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(sink.bytes.data()),
              static_cast<std::streamsize>(sink.bytes.size()));
    if (!out) throw FormatError("write failed: " + path);
}

inline std::vector<unsigned char> read_file_checked(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12) throw FormatError("checkpoint: file too short: " + path);
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<std::uint32_t>(bytes[bytes.size() - 4 + i]) << (8 * i);
    bytes.resize(bytes.size() - 4);
    const std::uint32_t actual = crc32(bytes.data(), bytes.size());
    if (stored != actual) throw FormatError("checkpoint: CRC32 mismatch in " + path);
    return bytes;
}

} // namespace io

namespace detail {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kFlagFeedback = 1u << 0;
constexpr std::uint32_t kFlagReadout = 1u << 1;

inline void put_magic(io::Sink& s) {
    for (char c : {'C', 'O', 'P', 'I'}) s.u8(static_cast<std::uint8_t>(c));
}

inline void check_magic_version(io::Source& s) {
    char magic[5] = {0};
    for (int i = 0; i < 4; ++i) magic[i] = static_cast<char>(s.u8("magic"));
    if (std::string(magic) != "COPI") throw FormatError("checkpoint: bad magic bytes");
    const std::uint32_t version = s.u32("version");
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
}

/// Body shared by plain and compressed checkpoints. input_dim is written
/// explicitly so a body with zero layers (fully replaced network) stays
/// self-describing.
inline void put_layers_body(io::Sink& s, const std::vector<Layer>& layers,
                            const std::vector<Matrix>& feedback, std::size_t input_dim,
                            std::uint32_t extra_flags) {
    std::uint32_t flags = extra_flags;
    if (!feedback.empty()) flags |= kFlagFeedback;
    s.u32(flags);
    s.u32(static_cast<std::uint32_t>(layers.size()));
    s.u32(static_cast<std::uint32_t>(input_dim));
    for (const Layer& l : layers) s.u32(static_cast<std::uint32_t>(l.out_dim()));
    for (const Layer& l : layers) {
        s.u8(static_cast<std::uint8_t>(l.activation.kind));
        s.f64(l.activation.slope);
    }
    for (const Layer& l : layers) {
        s.matrix(l.W);
        s.matrix(l.R);
    }
    for (const Matrix& b : feedback) s.matrix(b);
}

inline Activation get_activation(io::Source& s) {
    const std::uint8_t tag = s.u8("activation tag");
    const double slope = s.f64("activation slope");
    if (tag > 1) throw FormatError("checkpoint: unknown activation tag " + std::to_string(tag));
    Activation a;
    a.kind = static_cast<ActKind>(tag);
    a.slope = slope;
    if (a.kind == ActKind::LeakyRelu && !(slope > 0.0 && slope <= 1.0))
        throw FormatError("checkpoint: leaky-relu slope out of range");
    return a;
}

inline void get_layers_body(io::Source& s, std::uint32_t& flags_out, std::vector<Layer>& layers,
                            std::vector<Matrix>& feedback, std::size_t& input_dim) {
    flags_out = s.u32("flags");
    if (flags_out & ~(kFlagFeedback | kFlagReadout))
        throw FormatError("checkpoint: unknown flag bits");
    const std::uint32_t n_layers = s.u32("layer count");
    std::vector<std::size_t> dims(n_layers + 1);
    for (auto& d : dims) {
        d = s.u32("dims");
        if (d == 0) throw FormatError("checkpoint: zero entry in dims");
    }
    input_dim = dims[0];
    std::vector<Activation> acts(n_layers);
    for (auto& a : acts) a = get_activation(s);

    layers.clear();
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        Layer layer;
        layer.W = s.matrix("W");
        layer.R = s.matrix("R");
        layer.activation = acts[l];
        if (layer.W.rows != dims[l + 1] || layer.W.cols != dims[l] || layer.R.rows != dims[l] ||
            layer.R.cols != dims[l])
            throw FormatError("checkpoint: layer " + std::to_string(l + 1) + " shape disagrees with dims");
        layers.push_back(std::move(layer));
    }
    feedback.clear();
    if (flags_out & kFlagFeedback) {
        for (std::uint32_t l = 0; l + 1 < n_layers; ++l) {
            Matrix b = s.matrix("B");
            if (b.rows != dims[l + 1] || b.cols != dims[l + 2])
                throw FormatError("checkpoint: feedback " + std::to_string(l + 1) + " shape mismatch");
            feedback.push_back(std::move(b));
        }
    }
}

} // namespace detail

/// Writes magic "COPI", version, dims, activations, then W_l, R_l (and
/// optional feedback) as row-major little-endian doubles, with a trailing
/// CRC32 of everything before it.
inline void save_network(const std::string& path, const Network& net) {
    if (net.layers.empty()) throw ContractError("save_network: empty network");
    io::Sink s;
    detail::put_magic(s);
    s.u32(detail::kCheckpointVersion);
    detail::put_layers_body(s, net.layers, net.feedback, net.in_dim(), 0);
    io::write_file(path, s);
}

inline Network load_network(const std::string& path) {
    const std::vector<unsigned char> bytes = io::read_file_checked(path);
    io::Source s{bytes};
    detail::check_magic_version(s);
    std::uint32_t flags = 0;
    Network net;
    std::size_t input_dim = 0;
    detail::get_layers_body(s, flags, net.layers, net.feedback, input_dim);
    if (flags & detail::kFlagReadout)
        throw FormatError("checkpoint: contains a readout section; use load_compressed");
    if (s.pos != bytes.size()) throw FormatError("checkpoint: trailing bytes after payload");
    if (net.layers.empty()) throw FormatError("checkpoint: no layers");
    return net;
}

} // namespace copi
