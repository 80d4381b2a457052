#include "lakd/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace lakd {

namespace {

[[noreturn]] void bad(const std::string& path, std::streampos offset, const std::string& why) {
    throw std::runtime_error(path + ": " + why + " at byte offset " +
                             std::to_string(static_cast<long long>(offset)));
}

// reads the next whitespace/comment-delimited token of a PNM header
std::string next_token(std::istream& in, const std::string& path) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) bad(path, in.tellg(), "unexpected end of header");
    return tok;
}

int parse_int(const std::string& tok, std::istream& in, const std::string& path,
              const char* what) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        bad(path, in.tellg(), std::string("malformed ") + what + " '" + tok + "'");
    }
}

}  // namespace

Tensor read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image " + path);

    const std::string magic = next_token(in, path);
    int channels;
    if (magic == "P6")
        channels = 3;
    else if (magic == "P5")
        channels = 1;
    else
        bad(path, in.tellg(), "unsupported magic '" + magic + "' (want P5 or P6)");

    const int w = parse_int(next_token(in, path), in, path, "width");
    const int h = parse_int(next_token(in, path), in, path, "height");
    const int maxval = parse_int(next_token(in, path), in, path, "maxval");
    if (w <= 0 || h <= 0) bad(path, in.tellg(), "non-positive image dimensions");
    if (maxval != 255) bad(path, in.tellg(), "maxval must be 255, got " + std::to_string(maxval));

    const std::size_t count = static_cast<std::size_t>(w) * h * channels;
    std::vector<unsigned char> bytes(count);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
    if (in.gcount() != static_cast<std::streamsize>(count))
        bad(path, in.tellg(), "truncated pixel payload (" + std::to_string(in.gcount()) +
                                  " of " + std::to_string(count) + " bytes)");

    Tensor t({1, channels, h, w});
    float* d = t.data();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < channels; ++c)
            d[c * plane + i] = static_cast<float>(bytes[i * channels + c]) / 255.0f;
    return t;
}

void write_image(const std::string& path, const Tensor& image) {
    const Shape& s = image.shape();
    if (s.size() != 4 || s[0] != 1 || (s[1] != 1 && s[1] != 3))
        throw std::invalid_argument("write_image expects [1,1,H,W] or [1,3,H,W], got " +
                                    shape_str(s));
    const int channels = s[1], h = s[2], w = s[3];

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write image " + path);
    out << (channels == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";

    const float* d = image.data();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<unsigned char> bytes(plane * channels);
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < channels; ++c) {
            const float v = std::clamp(d[c * plane + i], 0.0f, 1.0f);
            bytes[i * channels + c] =
                static_cast<unsigned char>(std::floor(v * 255.0f + 0.5f));
        }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing pixel payload to " + path);
}

}  // namespace lakd
