#include "lakd/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lakd {

namespace {

constexpr std::uint16_t kVersion = 1;

void put_u16(std::ostream& out, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint16_t get_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out.write("LAKD", 4);
    put_u16(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff)
            throw std::invalid_argument("checkpoint entry name too long: " + name);
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        out.put(static_cast<char>(t.shape().size()));
        for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        static_assert(sizeof(float) == 4);
        // host is little-endian; payload is written as-is
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "LAKD", 4) != 0)
        throw std::runtime_error(path + ": not a LAKD checkpoint");
    const std::uint16_t version = get_u16(in);
    if (version != kVersion)
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(version));
    const std::uint32_t count = get_u32(in);

    std::map<std::string, Tensor> tensors;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint16_t name_len = get_u16(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const int ndim = in.get();
        if (ndim < 0) throw std::runtime_error(path + ": truncated checkpoint");
        Shape shape(ndim);
        for (int i = 0; i < ndim; ++i) shape[i] = static_cast<int>(get_u32(in));
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!in)
            throw std::runtime_error(path + ": truncated payload for entry '" + name + "'");
        tensors.emplace(std::move(name), std::move(t));
    }
    return tensors;
}

}  // namespace lakd
