#include "lakd/erf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "lakd/rng.hpp"

#include "json.hpp"

namespace lakd {

ErfMap compute_erf(const ProbeFn& probe, int in_channels, int patch_h, int patch_w,
                   int n_patches, std::uint64_t seed, const std::vector<Tensor>* inputs,
                   const std::string& layer_name) {
    if (n_patches < 1) throw std::invalid_argument("n_patches must be >= 1");
    if (inputs && static_cast<int>(inputs->size()) < n_patches)
        throw std::invalid_argument("input source has fewer patches than requested");

    Rng rng(seed);
    std::vector<double> acc(static_cast<std::size_t>(patch_h) * patch_w, 0.0);

    for (int p = 0; p < n_patches; ++p) {
        Tensor input;
        if (inputs) {
            input = Tensor((*inputs)[p].shape(), (*inputs)[p].vec());
            if (input.shape() != Shape{1, in_channels, patch_h, patch_w})
                throw std::invalid_argument("probe input patch has shape " +
                                            shape_str(input.shape()));
        } else {
            input = Tensor({1, in_channels, patch_h, patch_w});
            for (auto& v : input.vec()) v = rng.next_float();
        }
        input.set_requires_grad(true);

        Tensor feat = probe(input);
        if (feat.shape().size() != 4)
            throw std::invalid_argument("probed layer must produce a [B,C,H,W] map");
        const int fh = feat.shape()[2], fw = feat.shape()[3];
        Tensor root = spatial_pick_sum(feat, fh / 2, fw / 2);
        backward(root, 1.0f);

        const auto& g = input.grad();
        const std::size_t plane = static_cast<std::size_t>(patch_h) * patch_w;
        for (int c = 0; c < in_channels; ++c)
            for (std::size_t i = 0; i < plane; ++i)
                acc[i] += std::abs(static_cast<double>(g[c * plane + i]));
    }

    ErfMap map;
    map.height = patch_h;
    map.width = patch_w;
    map.patch_count = n_patches;
    map.layer = layer_name;
    map.values.resize(acc.size());
    double mx = 0.0;
    for (std::size_t i = 0; i < acc.size(); ++i) {
        map.values[i] = static_cast<float>(acc[i] / n_patches);
        mx = std::max(mx, static_cast<double>(map.values[i]));
    }
    map.max_value = static_cast<float>(mx);
    return map;
}

ErfProfile extract_scanline(const ErfMap& map) {
    if (map.height < 1 || map.width < 1)
        throw std::invalid_argument("scanline of empty ERF map");
    ErfProfile prof;
    prof.max_value = map.max_value;
    prof.layer = map.layer;
    const int row = map.height / 2;
    prof.xs.resize(map.width);
    prof.ys.resize(map.width);
    for (int i = 0; i < map.width; ++i) {
        prof.xs[i] = map.width == 1
                         ? 0.0
                         : -30.0 + 60.0 * static_cast<double>(i) / (map.width - 1);
        prof.ys[i] = map.values[static_cast<std::size_t>(row) * map.width + i];
    }
    return prof;
}

BBox erf_support(const ErfMap& map, float threshold) {
    if (threshold < 0.0f) throw std::invalid_argument("support threshold must be >= 0");
    BBox box;
    for (int r = 0; r < map.height; ++r)
        for (int c = 0; c < map.width; ++c)
            if (map.values[static_cast<std::size_t>(r) * map.width + c] > threshold) {
                if (box.empty) {
                    box = BBox{r, c, r, c, false};
                } else {
                    box.row0 = std::min(box.row0, r);
                    box.col0 = std::min(box.col0, c);
                    box.row1 = std::max(box.row1, r);
                    box.col1 = std::max(box.col1, c);
                }
            }
    return box;
}

void save_erf(const ErfMap& map, const std::string& dir) {
    {
        std::ofstream raw(dir + "/erf.f32", std::ios::binary);
        if (!raw) throw std::runtime_error("cannot write " + dir + "/erf.f32");
        raw.write(reinterpret_cast<const char*>(map.values.data()),
                  static_cast<std::streamsize>(map.values.size() * sizeof(float)));
    }
    {
        nlohmann::json j;
        j["height"] = map.height;
        j["width"] = map.width;
        j["patch_count"] = map.patch_count;
        j["layer"] = map.layer;
        j["max_value"] = map.max_value;
        std::ofstream side(dir + "/erf.json");
        if (!side) throw std::runtime_error("cannot write " + dir + "/erf.json");
        side << j.dump(2) << "\n";
    }
    {
        std::ofstream pgm(dir + "/erf.pgm", std::ios::binary);
        if (!pgm) throw std::runtime_error("cannot write " + dir + "/erf.pgm");
        pgm << "P5\n" << map.width << " " << map.height << "\n255\n";
        const double denom = std::log1p(static_cast<double>(map.max_value));
        for (float v : map.values) {
            const double t = denom > 0.0 ? std::log1p(static_cast<double>(v)) / denom : 0.0;
            const int byte = static_cast<int>(std::floor(t * 255.0 + 0.5));
            pgm.put(static_cast<char>(std::clamp(byte, 0, 255)));
        }
    }
}

ErfMap load_erf(const std::string& dir) {
    std::ifstream side(dir + "/erf.json");
    if (!side) throw std::runtime_error("cannot read " + dir + "/erf.json");
    nlohmann::json j = nlohmann::json::parse(side);
    ErfMap map;
    map.height = j.at("height").get<int>();
    map.width = j.at("width").get<int>();
    map.patch_count = j.at("patch_count").get<int>();
    map.layer = j.at("layer").get<std::string>();
    map.max_value = j.at("max_value").get<float>();

    std::ifstream raw(dir + "/erf.f32", std::ios::binary);
    if (!raw) throw std::runtime_error("cannot read " + dir + "/erf.f32");
    map.values.resize(static_cast<std::size_t>(map.height) * map.width);
    raw.read(reinterpret_cast<char*>(map.values.data()),
             static_cast<std::streamsize>(map.values.size() * sizeof(float)));
    if (raw.gcount() != static_cast<std::streamsize>(map.values.size() * sizeof(float)))
        throw std::runtime_error("truncated ERF payload in " + dir + "/erf.f32");
    return map;
}

}  // namespace lakd
