#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "rareunet/error.hpp"
#include "rareunet/eval.hpp"
#include "rareunet/gradcheck_suite.hpp"
#include "rareunet/hash.hpp"
#include "rareunet/trainer.hpp"

using namespace rareunet;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot open '" + p.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw DataError("cannot open '" + p.string() + "' for writing");
    out << text;
    if (!out) throw DataError("write failed for '" + p.string() + "'");
}

std::vector<int64_t> parse_scales(const std::string& list) {
    std::vector<int64_t> out;
    std::stringstream ss(list);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_scale(item));
    if (out.empty()) throw ConfigError("empty scale list");
    return out;
}

std::vector<uint64_t> parse_seeds(const std::string& list) {
    std::vector<uint64_t> out;
    std::stringstream ss(list);
    for (std::string item; std::getline(ss, item, ',');) {
        KeyValues kv{{"seed", item}};
        const int64_t v = kv_int(kv, "seed", 0);
        if (v < 0) throw ConfigError("seeds must be >= 0");
        out.push_back(static_cast<uint64_t>(v));
    }
    return out;
}

std::vector<Sample> load_split(const fs::path& dir, const std::string& split) {
    std::vector<Sample> out;
    for (const auto& e : read_manifest(dir))
        if (e.split == split) out.push_back(load_volume(dir / e.file));
    if (out.empty()) throw DataError("dataset '" + dir.string() + "' has no " + split + " volumes");
    return out;
}

std::string variant_name(TrainMode mode, InputHandling h) {
    switch (mode) {
        case TrainMode::rare: return "RARE-UNet";
        case TrainMode::unet: return h == InputHandling::pad ? "UNet-Pad" : "UNet-Up";
        case TrainMode::unet_aug: return h == InputHandling::pad ? "UNet+Aug-Pad" : "UNet+Aug-Up";
    }
    return "?";
}

// ---- make-data

struct MakeDataArgs {
    std::string preset = "hippocampus-like";
    int64_t count = 64;
    uint64_t seed = 0;
    std::string out;
};

int cmd_make_data(const MakeDataArgs& a) {
    const GeneratedDataset data = generate_dataset(a.preset, a.count, a.seed);
    write_dataset(a.out, data);
    const auto n_test = std::count(data.split.begin(), data.split.end(), "test");
    std::cout << "wrote " << a.count << " volumes (" << a.count - n_test << " train, " << n_test << " test) at "
              << data.shape[0] << "x" << data.shape[1] << "x" << data.shape[2] << " to " << a.out << "\n";
    return kOk;
}

// ---- train

struct TrainArgs {
    std::string config;
    std::string out;
    std::string data;
    int64_t seed = -1;
    int64_t epochs = -1;
};

const std::set<std::string>& train_keys() {
    static const std::set<std::string> keys = [] {
        std::set<std::string> k{"data", "out"};
        for (const auto& [key, _] : ModelConfig{}.to_key_values()) k.insert(key);
        for (const auto& [key, _] : TrainHyper{}.to_key_values()) k.insert(key);
        return k;
    }();
    return keys;
}

int cmd_train(const TrainArgs& a) {
    KeyValues kv = parse_key_values(read_text(a.config));
    for (const auto& [key, _] : kv)
        if (!train_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    if (!a.data.empty()) kv["data"] = a.data;
    if (!a.out.empty()) kv["out"] = a.out;
    if (a.seed >= 0) kv["seed"] = std::to_string(a.seed);
    if (a.epochs >= 0) kv["epochs"] = std::to_string(a.epochs);
    const std::string data = kv_string(kv, "data", "");
    const std::string out = kv_string(kv, "out", "");
    if (data.empty() || out.empty()) throw ConfigError("config needs data= and out= (or --data/--out)");

    const TrainHyper hyper = TrainHyper::from_key_values(kv);
    const std::vector<Sample> train_split = load_split(data, "train");
    const Sample& first = train_split.front();
    KeyValues model_kv = kv;
    const Extent3 e = first.extent();
    for (auto [key, value] : std::vector<std::pair<std::string, int64_t>>{{"full_d", e[0]},
                                                                           {"full_h", e[1]},
                                                                           {"full_w", e[2]},
                                                                           {"in_channels", first.channels()},
                                                                           {"num_classes", first.num_classes}}) {
        if (kv.count(key) && kv_int(kv, key, 0) != value)
            throw ConfigError(key + "=" + kv.at(key) + " does not match the dataset (" + std::to_string(value) + ")");
        model_kv[key] = std::to_string(value);
    }
    if (kv.count("msb_enabled") && kv_bool(kv, "msb_enabled", true) != (hyper.mode == TrainMode::rare))
        throw ConfigError("msb_enabled contradicts mode=" + to_string(hyper.mode));
    model_kv["msb_enabled"] = hyper.mode == TrainMode::rare ? "true" : "false";
    const ModelConfig config = ModelConfig::from_key_values(model_kv);
    config.validate();

    fs::create_directories(out);
    KeyValues resolved = config.to_key_values();
    for (const auto& [key, value] : hyper.to_key_values()) resolved[key] = value;
    resolved["data"] = data;
    resolved["out"] = out;
    write_text(fs::path(out) / "config.txt", format_key_values(resolved));

    const TrainResult r = train(config, hyper, train_split, out, [](const EpochRecord& rec) {
        std::cout << "epoch " << rec.epoch << " step " << rec.step << " total_loss " << format_double(rec.total);
        if (!rec.val_dsc.empty()) {
            std::cout << " val_dsc";
            for (double v : rec.val_dsc) std::cout << ' ' << format_double(v);
        }
        std::cout << std::endl;
    });
    std::cout << "last checkpoint " << r.last_checkpoint.string() << "\n";
    if (!r.best_checkpoint.empty()) std::cout << "best checkpoint " << r.best_checkpoint.string() << " (epoch " << r.best_epoch << ")\n";
    return kOk;
}

// ---- eval

struct EvalArgs {
    std::vector<std::string> checkpoints;
    std::string data;
    std::string scales = "1,1/2,1/4,1/8";
    std::string handling = "pad,up";
    std::string split = "test";
    std::string out;
};

int cmd_eval(const EvalArgs& a) {
    const std::vector<Sample> samples = load_split(a.data, a.split);
    std::vector<InputHandling> baseline;
    {
        std::stringstream ss(a.handling);
        for (std::string h; std::getline(ss, h, ',');) {
            const InputHandling ih = parse_input_handling(h);
            if (ih == InputHandling::route) throw ConfigError("baseline handling must be pad or up");
            baseline.push_back(ih);
        }
    }
    EvalReport report;
    report.scales = parse_scales(a.scales);
    for (const auto& path : a.checkpoints) {
        const Checkpoint ck = load_checkpoint(path);
        const auto& c = ck.model.config();
        const Sample& s = samples.front();
        if (s.num_classes != c.num_classes || s.channels() != c.in_channels || s.extent() != c.full_shape)
            throw FormatError("checkpoint '" + path + "' is incompatible with dataset '" + a.data + "'");
        if (report.num_classes == 0) report.num_classes = c.num_classes;
        if (report.num_classes != c.num_classes) throw FormatError("checkpoints disagree on the class count");
        if (ck.mode == TrainMode::rare) {
            report.variants.push_back(evaluate_variant(ck.model, samples, InputHandling::route, report.scales,
                                                       variant_name(ck.mode, InputHandling::route)));
        } else {
            for (InputHandling h : baseline)
                report.variants.push_back(evaluate_variant(ck.model, samples, h, report.scales, variant_name(ck.mode, h)));
        }
    }
    const std::string table = report.table();
    std::cout << table;
    if (!a.out.empty()) {
        write_text(fs::path(a.out) / "eval.md", table);
        write_text(fs::path(a.out) / "eval.json", report.to_json().dump(2) + "\n");
    }
    return kOk;
}

// ---- infer

struct InferArgs {
    std::string checkpoint;
    std::string in;
    std::string out;
    bool full_res = false;
    bool no_normalize = false;
};

int cmd_infer(const InferArgs& a) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const Sample vol = load_volume(a.in);
    if (!vol.image.defined()) throw DataError("'" + a.in + "' has no image channels");
    const InferResult r = infer(ck.model, vol.image, !a.no_normalize);
    Sample out;
    out.labels = a.full_res ? resample_nearest(r.labels, ck.model.config().full_shape) : r.labels;
    out.num_classes = ck.model.config().num_classes;
    out.seed = vol.seed;
    out.native_shape = vol.native_shape;
    save_volume(a.out, out);
    std::cout << "route " << r.route.describe() << "\n";
    return kOk;
}

// ---- bench

struct BenchArgs {
    std::string checkpoint;
    std::string scales = "1,1/2,1/4,1/8";
    int64_t repeats = 10;
    uint64_t seed = 0;
    std::string out;
};

int cmd_bench(const BenchArgs& a) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const BenchReport r = run_bench(ck.model, parse_scales(a.scales), a.repeats, a.seed);
    std::cout << r.table();
    if (!a.out.empty()) write_text(fs::path(a.out) / "bench.json", r.to_json().dump(2) + "\n");
    return kOk;
}

// ---- gradcheck

struct GradcheckArgs {
    std::string scope = "all";
    std::string seeds = "1,2,3,4,5";
    bool inject_fault = false;
    std::string out;
};

int cmd_gradcheck(const GradcheckArgs& a) {
    const GradcheckSummary s = run_gradcheck_suite(a.scope, parse_seeds(a.seeds), a.inject_fault);
    for (const auto& c : s.cases)
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.op << " seed " << c.seed << " max_rel " << c.max_rel_error << "\n";
    std::cout << (s.pass() ? "PASS" : "FAIL") << " " << s.cases.size() << " cases in " << s.seconds << " s\n";
    if (!a.out.empty()) write_text(fs::path(a.out) / "gradcheck.json", s.to_json().dump(2) + "\n");
    return s.pass() ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RARE-UNet resolution-adaptive segmentation at desk scale"};
    app.require_subcommand(1);

    MakeDataArgs md;
    auto* make_data = app.add_subcommand("make-data", "Generate a synthetic phantom dataset with an 80/20 manifest");
    make_data->add_option("--preset", md.preset, "hippocampus-like | tumor-like")->capture_default_str();
    make_data->add_option("--count", md.count, "Number of volumes")->capture_default_str();
    make_data->add_option("--seed", md.seed, "Dataset seed")->capture_default_str();
    make_data->add_option("--out", md.out, "Output directory")->required();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand(
        "train",
        "Train from a key=value config. Keys: data, out, mode (rare|unet|unet_aug), handling (pad|up), epochs (30), "
        "batch_size (2), lr (1e-3), weight_decay (1e-2), beta1 (0.9), beta2 (0.999), adam_eps (1e-8), alpha (0.5), "
        "lambda_con (1), dice_epsilon (1e-5), seed (0), val_fraction (0.2), log_wall_time (false), sample_paths (false), "
        "depth (4), base_channels (8), norm (batch|instance), init_seed (0)");
    train_cmd->add_option("--config", tr.config, "Config file")->required();
    train_cmd->add_option("--out", tr.out, "Override out=");
    train_cmd->add_option("--data", tr.data, "Override data=");
    train_cmd->add_option("--seed", tr.seed, "Override seed=");
    train_cmd->add_option("--epochs", tr.epochs, "Override epochs=");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Per-scale DSC tables for one or more checkpoints");
    eval_cmd->add_option("--checkpoint", ev.checkpoints, "Checkpoint(s)")->required();
    eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
    eval_cmd->add_option("--scales", ev.scales, "Comma list of 1, 1/2, 1/4, 1/8")->capture_default_str();
    eval_cmd->add_option("--handling", ev.handling, "Baseline input handlings")->capture_default_str();
    eval_cmd->add_option("--split", ev.split, "Manifest split to score")->capture_default_str();
    eval_cmd->add_option("--out", ev.out, "Directory for eval.md and eval.json");

    InferArgs in;
    auto* infer_cmd = app.add_subcommand("infer", "Routed prediction for one volume");
    infer_cmd->add_option("--checkpoint", in.checkpoint, "Checkpoint")->required();
    infer_cmd->add_option("--in", in.in, "Input .vvol")->required();
    infer_cmd->add_option("--out", in.out, "Output label .vvol")->required();
    infer_cmd->add_flag("--full-res", in.full_res, "Nearest-upsample the prediction to the full grid");
    infer_cmd->add_flag("--no-normalize", in.no_normalize, "Skip intensity normalization");

    BenchArgs be;
    auto* bench_cmd = app.add_subcommand("bench", "Forward latency, MACs and parameters per scale");
    bench_cmd->add_option("--checkpoint", be.checkpoint, "Checkpoint")->required();
    bench_cmd->add_option("--scales", be.scales, "Comma list of 1, 1/2, 1/4, 1/8")->capture_default_str();
    bench_cmd->add_option("--repeats", be.repeats, "Timed runs per scale")->capture_default_str();
    bench_cmd->add_option("--seed", be.seed, "Input seed")->capture_default_str();
    bench_cmd->add_option("--out", be.out, "Directory for bench.json");

    GradcheckArgs gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Central-difference gradient checks");
    gc_cmd->add_option("--scope", gc.scope, "all or one op name")->capture_default_str();
    gc_cmd->add_option("--seed", gc.seeds, "Comma list of seeds")->capture_default_str();
    gc_cmd->add_option("--out", gc.out, "Directory for gradcheck.json");
    gc_cmd->add_flag("--inject-fault", gc.inject_fault)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }
    try {
        if (*make_data) return cmd_make_data(md);
        if (*train_cmd) return cmd_train(tr);
        if (*eval_cmd) return cmd_eval(ev);
        if (*infer_cmd) return cmd_infer(in);
        if (*bench_cmd) return cmd_bench(be);
        if (*gc_cmd) return cmd_gradcheck(gc);
    } catch (const TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kCheckFailed;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
