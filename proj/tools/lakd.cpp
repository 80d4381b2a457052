// lakd: train/inspect the deblurring network and measure receptive fields.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "lakd/checkpoint.hpp"
#include "lakd/erf.hpp"
#include "lakd/erfmeter.hpp"
#include "lakd/image_io.hpp"
#include "lakd/lakdnet.hpp"
#include "lakd/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct CliError {
    int code;
    std::string message;
};

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliError{kExitData, "cannot open " + path.string()};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CliError{kExitData, "cannot write " + path.string()};
    out << text;
}

/// Top-level config: {"network": {...}, "train": {...}}; both optional,
/// unknown keys rejected.
void parse_config(const std::string& text, lakd::NetworkConfig& net,
                  lakd::TrainConfig& train) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw CliError{kExitConfig, std::string("config is not valid JSON: ") + e.what()};
    }
    if (!j.is_object()) throw CliError{kExitConfig, "config root must be a JSON object"};
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "network")
                net = lakd::NetworkConfig::from_json(value.dump());
            else if (key == "train")
                train = lakd::TrainConfig::from_json(value.dump());
            else
                throw CliError{kExitConfig, "unknown config section \"" + key + "\""};
        } catch (const std::invalid_argument& e) {
            throw CliError{kExitConfig, std::string("config error: ") + e.what()};
        }
    }
}

lakd::NetworkConfig load_sidecar_config(const fs::path& ckpt) {
    const fs::path sidecar = ckpt.string() + ".json";
    if (!fs::exists(sidecar))
        throw CliError{kExitData, "missing network config sidecar " + sidecar.string()};
    try {
        return lakd::NetworkConfig::from_json(read_text(sidecar));
    } catch (const std::invalid_argument& e) {
        throw CliError{kExitConfig, std::string("bad sidecar config: ") + e.what()};
    }
}

lakd::ParamMap load_params(const fs::path& ckpt) {
    try {
        return lakd::load_checkpoint(ckpt.string());
    } catch (const std::exception& e) {
        throw CliError{kExitData, std::string("cannot load checkpoint: ") + e.what()};
    }
}

/// Loads NNNN_blur.ppm / NNNN_sharp.ppm pairs from a directory.
std::vector<lakd::ImagePair> load_pairs(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw CliError{kExitData, dir.string() + " is not a directory"};
    std::vector<fs::path> sharps;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > 10 && name.ends_with("_sharp.ppm")) sharps.push_back(entry.path());
    }
    std::sort(sharps.begin(), sharps.end());
    std::vector<lakd::ImagePair> pairs;
    for (const fs::path& sharp_path : sharps) {
        std::string blur_name = sharp_path.filename().string();
        blur_name.replace(blur_name.size() - 10, 10, "_blur.ppm");
        const fs::path blur_path = sharp_path.parent_path() / blur_name;
        if (!fs::exists(blur_path))
            throw CliError{kExitData, "missing blurry counterpart " + blur_path.string()};
        lakd::ImagePair p;
        try {
            p.sharp = lakd::read_image(sharp_path.string());
            p.blurry = lakd::read_image(blur_path.string());
        } catch (const std::exception& e) {
            throw CliError{kExitData, e.what()};
        }
        pairs.push_back(std::move(p));
    }
    if (pairs.empty())
        throw CliError{kExitData, "no *_sharp.ppm / *_blur.ppm pairs in " + dir.string()};
    return pairs;
}

int cmd_synth(const fs::path& out_dir, int count, int size, const std::string& kind,
              double radius_min, double radius_max, std::uint64_t seed) {
    lakd::BlurSpec spec;
    if (kind == "gaussian")
        spec.kind = lakd::BlurSpec::Kind::Gaussian;
    else if (kind == "disk")
        spec.kind = lakd::BlurSpec::Kind::Disk;
    else
        throw CliError{kExitConfig, "blur kind must be gaussian or disk, got " + kind};
    spec.radius_min = radius_min;
    spec.radius_max = radius_max;
    spec.rng_seed = seed;

    lakd::Rng rng(seed);
    std::vector<lakd::Tensor> sharp;
    for (int i = 0; i < count; ++i) sharp.push_back(lakd::make_texture(3, size, size, rng));
    const auto pairs = lakd::synth_dataset(sharp, spec);

    fs::create_directories(out_dir);
    char name[32];
    for (int i = 0; i < count; ++i) {
        std::snprintf(name, sizeof name, "%04d_sharp.ppm", i);
        lakd::write_image((out_dir / name).string(), pairs[i].sharp);
        std::snprintf(name, sizeof name, "%04d_blur.ppm", i);
        lakd::write_image((out_dir / name).string(), pairs[i].blurry);
    }
    std::cout << "wrote " << count << " pairs to " << out_dir.string() << "\n";
    return 0;
}

int cmd_train(const fs::path& config_path, const fs::path& data_dir, const fs::path& out) {
    lakd::NetworkConfig net;
    lakd::TrainConfig cfg;
    parse_config(read_text(config_path), net, cfg);

    const auto dataset = load_pairs(data_dir);
    std::cout << "training on " << dataset.size() << " pairs, " << cfg.total_iters
              << " iterations, " << lakd::count_params(net) << " parameters\n";

    const lakd::TrainResult result = lakd::train(net, cfg, dataset);

    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    lakd::save_checkpoint(out.string(), result.params);
    write_text(out.string() + ".json", net.to_json());

    std::ostringstream trace;
    trace << "iter,loss\n";
    for (std::size_t i = 0; i < result.loss_trace.size(); ++i)
        trace << i + 1 << "," << result.loss_trace[i] << "\n";
    write_text(out.string() + ".loss.csv", trace.str());

    if (result.aborted) {
        std::cerr << "loss became non-finite at iteration " << result.completed_iters + 1
                  << "; wrote last good checkpoint\n";
        return kExitNumerical;
    }
    std::cout << "final loss " << result.loss_trace.back() << ", checkpoint " << out.string()
              << "\n";
    return 0;
}

int cmd_infer(const fs::path& ckpt, const fs::path& in_path, const fs::path& out_path,
              int tile) {
    const lakd::NetworkConfig net = load_sidecar_config(ckpt);
    const lakd::ParamMap params = load_params(ckpt);
    lakd::Tensor img;
    try {
        img = lakd::read_image(in_path.string());
    } catch (const std::exception& e) {
        throw CliError{kExitData, e.what()};
    }
    if (img.shape()[1] != net.input_channels())
        throw CliError{kExitData, "image has " + std::to_string(img.shape()[1]) +
                                      " channels but the network expects " +
                                      std::to_string(net.input_channels())};
    lakd::Tensor out;
    try {
        out = lakd::infer_tiled(img, params, net, tile);
    } catch (const std::invalid_argument& e) {
        throw CliError{kExitData, e.what()};
    }
    for (float v : out.vec())
        if (!std::isfinite(v)) throw CliError{kExitNumerical, "non-finite output"};
    lakd::write_image(out_path.string(), out);
    std::cout << "wrote " << out_path.string() << "\n";
    return 0;
}

int cmd_erf(const fs::path& ckpt, const std::string& layer, int patches, int size,
            const fs::path& out_dir, std::uint64_t seed) {
    const lakd::NetworkConfig net = load_sidecar_config(ckpt);
    const lakd::ParamMap params = load_params(ckpt);
    static const std::vector<std::string> known = {"enc1", "enc2", "enc3", "enc4",
                                                   "bt_neck", "dec3", "dec2", "dec1"};
    if (std::find(known.begin(), known.end(), layer) == known.end())
        throw CliError{kExitConfig, "unknown layer \"" + layer + "\""};
    if (size % 8 != 0 || size <= 0)
        throw CliError{kExitConfig, "patch size must be a positive multiple of 8"};

    lakd::ProbeFn probe = [&](const lakd::Tensor& x) {
        lakd::TapMap taps;
        lakd::lakdnet_forward(x, params, net, &taps);
        return taps.at(layer);
    };
    lakd::ErfMap map;
    try {
        map = lakd::compute_erf(probe, net.input_channels(), size, size, patches, seed,
                                nullptr, layer);
    } catch (const std::invalid_argument& e) {
        throw CliError{kExitConfig, e.what()};
    }
    fs::create_directories(out_dir);
    lakd::save_erf(map, out_dir.string());
    std::cout << "erf over " << patches << " patches, max " << map.max_value << ", saved to "
              << out_dir.string() << "\n";
    return 0;
}

int cmd_fitgnd(const fs::path& erf_dir, const fs::path& out_json) {
    lakd::ErfMap map;
    try {
        map = lakd::load_erf(erf_dir.string());
    } catch (const std::exception& e) {
        throw CliError{kExitData, e.what()};
    }
    const lakd::ErfProfile profile = lakd::extract_scanline(map);
    const lakd::GndParams fit = lakd::fit_gnd(profile);
    if (!std::isfinite(fit.sigma) || !std::isfinite(fit.beta) || !std::isfinite(fit.mu))
        throw CliError{kExitNumerical, "fit produced non-finite parameters"};

    if (out_json.has_parent_path()) fs::create_directories(out_json.parent_path());
    write_text(out_json, lakd::fit_report_json(fit, map.max_value, map.layer));
    write_text(out_json.string() + ".curve.csv", lakd::fit_curve_csv(profile, fit));
    std::cout << "sigma " << fit.sigma << " beta " << fit.beta << " r2 " << fit.r_squared
              << (fit.converged ? "" : " (not converged)") << "\n";
    return 0;
}

int cmd_erfm(const fs::path& fit_json) {
    double max_value = 0.0;
    std::string layer;
    lakd::GndParams p;
    try {
        p = lakd::fit_report_from_json(read_text(fit_json), &max_value, &layer);
    } catch (const std::invalid_argument& e) {
        throw CliError{kExitData, std::string("bad fit report: ") + e.what()};
    }
    const lakd::ErfmScore score = lakd::erfm(p, max_value);
    std::cout << score.value << "\n";
    return 0;
}

int cmd_correlate(const fs::path& pairs_csv) {
    std::istringstream in(read_text(pairs_csv));
    std::string line;
    if (!std::getline(in, line) || line.rfind("erfm,psnr", 0) != 0)
        throw CliError{kExitData, "pairs CSV must start with header erfm,psnr"};
    std::vector<double> xs, ys;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        double x = 0.0, y = 0.0;
        if (std::sscanf(line.c_str(), "%lf,%lf", &x, &y) != 2)
            throw CliError{kExitData,
                           "bad CSV row at line " + std::to_string(lineno) + ": " + line};
        xs.push_back(x);
        ys.push_back(y);
    }
    lakd::CorrelationResult r;
    try {
        r = lakd::pearson_r(xs, ys);
    } catch (const std::invalid_argument& e) {
        throw CliError{kExitData, e.what()};
    }
    std::cout << "r = " << r.r << " (n = " << r.n << ")\n";
    return 0;
}

int cmd_report(const fs::path& runs_dir, const fs::path& out_csv) {
    if (!fs::is_directory(runs_dir))
        throw CliError{kExitData, runs_dir.string() + " is not a directory"};
    std::ostringstream csv;
    csv << "run,layer,sigma,beta,mu,c1,c2,r_squared,erfm,max_value,converged\n";
    int rows = 0;
    std::vector<fs::path> fits;
    for (const auto& entry : fs::recursive_directory_iterator(runs_dir))
        if (entry.is_regular_file() && entry.path().filename() == "fit.json")
            fits.push_back(entry.path());
    std::sort(fits.begin(), fits.end());
    for (const fs::path& path : fits) {
        double max_value = 0.0;
        std::string layer;
        lakd::GndParams p;
        try {
            p = lakd::fit_report_from_json(read_text(path), &max_value, &layer);
        } catch (const std::invalid_argument& e) {
            throw CliError{kExitData, path.string() + ": " + e.what()};
        }
        const fs::path rel = fs::relative(path.parent_path(), runs_dir);
        csv << rel.string() << "," << layer << "," << p.sigma << "," << p.beta << ","
            << p.mu << "," << p.c1 << "," << p.c2 << "," << p.r_squared << ","
            << lakd::erfm(p, max_value).value << "," << max_value << ","
            << (p.converged ? 1 : 0) << "\n";
        ++rows;
    }
    if (rows == 0) throw CliError{kExitData, "no fit.json files under " + runs_dir.string()};
    if (out_csv.empty())
        std::cout << csv.str();
    else
        write_text(out_csv, csv.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LaKD deblurring network: training, inference and ERF analysis"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic blur/sharp dataset");
    std::string synth_out;
    int synth_count = 200, synth_size = 64;
    std::string synth_kind = "gaussian";
    double synth_rmin = 1.0, synth_rmax = 2.0;
    std::uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--count", synth_count, "number of pairs");
    synth->add_option("--size", synth_size, "square image size");
    synth->add_option("--kind", synth_kind, "blur kind: gaussian|disk");
    synth->add_option("--radius-min", synth_rmin, "minimum blur radius/sigma");
    synth->add_option("--radius-max", synth_rmax, "maximum blur radius/sigma");
    synth->add_option("--seed", synth_seed, "rng seed");

    // train
    auto* train = app.add_subcommand("train", "Train on paired blurry/sharp images");
    std::string train_config, train_data, train_out;
    train->add_option("--config", train_config, "JSON config with network/train sections")
        ->required();
    train->add_option("--data", train_data, "directory of *_blur.ppm / *_sharp.ppm pairs")
        ->required();
    train->add_option("--out", train_out, "output checkpoint path")->required();

    // infer
    auto* infer = app.add_subcommand("infer", "Deblur one image with a checkpoint");
    std::string infer_ckpt, infer_in, infer_out;
    int infer_tile = 128;
    infer->add_option("--ckpt", infer_ckpt, "checkpoint file")->required();
    infer->add_option("--in", infer_in, "input PPM")->required();
    infer->add_option("--out", infer_out, "output PPM")->required();
    infer->add_option("--tile", infer_tile, "tile size for large inputs");

    // erf
    auto* erf = app.add_subcommand("erf", "Compute an effective receptive field map");
    std::string erf_ckpt, erf_layer = "bt_neck", erf_out;
    int erf_patches = 16, erf_size = 512;
    std::uint64_t erf_seed = 0;
    erf->add_option("--ckpt", erf_ckpt, "checkpoint file")->required();
    erf->add_option("--layer", erf_layer, "probed tap (enc1..enc4, bt_neck, dec3..dec1)");
    erf->add_option("--patches", erf_patches, "number of averaged noise patches");
    erf->add_option("--size", erf_size, "square patch size (multiple of 8)");
    erf->add_option("--out", erf_out, "output directory")->required();
    erf->add_option("--seed", erf_seed, "rng seed");

    // fitgnd
    auto* fitgnd = app.add_subcommand("fitgnd", "Fit a generalized normal to an ERF scanline");
    std::string fit_erf, fit_out;
    fitgnd->add_option("--erf", fit_erf, "directory produced by the erf command")->required();
    fitgnd->add_option("--out", fit_out, "output fit report JSON")->required();

    // erfm
    auto* erfm_cmd = app.add_subcommand("erfm", "Print the ERFM score of a fit report");
    std::string erfm_fit;
    erfm_cmd->add_option("--fit", erfm_fit, "fit report JSON")->required();

    // correlate
    auto* correlate = app.add_subcommand("correlate", "Pearson r of erfm,psnr pairs");
    std::string corr_pairs;
    correlate->add_option("--pairs", corr_pairs, "CSV with header erfm,psnr")->required();

    // report
    auto* report = app.add_subcommand("report", "Aggregate fit reports into one CSV");
    std::string report_runs, report_out;
    report->add_option("--runs", report_runs, "directory tree containing fit.json files")
        ->required();
    report->add_option("--out", report_out, "output CSV (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (synth->parsed())
            return cmd_synth(synth_out, synth_count, synth_size, synth_kind, synth_rmin,
                             synth_rmax, synth_seed);
        if (train->parsed()) return cmd_train(train_config, train_data, train_out);
        if (infer->parsed()) return cmd_infer(infer_ckpt, infer_in, infer_out, infer_tile);
        if (erf->parsed())
            return cmd_erf(erf_ckpt, erf_layer, erf_patches, erf_size, erf_out, erf_seed);
        if (fitgnd->parsed()) return cmd_fitgnd(fit_erf, fit_out);
        if (erfm_cmd->parsed()) return cmd_erfm(erfm_fit);
        if (correlate->parsed()) return cmd_correlate(corr_pairs);
        if (report->parsed()) return cmd_report(report_runs, report_out);
    } catch (const CliError& e) {
        std::cerr << "error: " << e.message << "\n";
        return e.code;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
