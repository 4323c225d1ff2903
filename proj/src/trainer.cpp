#include "rareunet/trainer.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "rareunet/error.hpp"
#include "rareunet/hash.hpp"

namespace rareunet {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are little-endian f32");

namespace {

constexpr char kCheckpointMagic[8] = {'R', 'U', 'C', 'K', 'P', 'T', '0', '1'};
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void shuffle(std::vector<size_t>& order, std::mt19937_64& rng) {
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
}

std::string cell(double v) { return std::isnan(v) ? std::string() : format_double(v); }

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint32_t get_u32(const unsigned char* p) {
    return uint32_t{p[0]} | (uint32_t{p[1]} << 8) | (uint32_t{p[2]} << 16) | (uint32_t{p[3]} << 24);
}

uint64_t fnv1a(std::string_view bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void append_floats(std::string& out, std::span<const float> v) {
    out.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
}

void check_finite(const StepLosses& l) {
    if (std::isfinite(l.total)) return;
    std::ostringstream msg;
    msg << "non-finite total loss (" << l.total << "); seg:";
    for (double s : l.seg) msg << ' ' << s;
    msg << " con:";
    for (double c : l.con) msg << ' ' << c;
    throw TrainingError(msg.str());
}

InputHandling validation_handling(const TrainHyper& hyper) {
    return hyper.mode == TrainMode::rare ? InputHandling::route : hyper.handling;
}

}  // namespace

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::rare: return "rare";
        case TrainMode::unet: return "unet";
        case TrainMode::unet_aug: return "unet_aug";
    }
    return "?";
}

TrainMode parse_train_mode(const std::string& text) {
    if (text == "rare") return TrainMode::rare;
    if (text == "unet") return TrainMode::unet;
    if (text == "unet_aug") return TrainMode::unet_aug;
    throw ConfigError("unknown training mode '" + text + "' (expected rare|unet|unet_aug)");
}

void TrainHyper::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0,1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in [0,1)");
    if (mode != TrainMode::rare && handling == InputHandling::route)
        throw ConfigError("unet modes need pad or up handling");
    loss.validate();
}

KeyValues TrainHyper::to_key_values() const {
    return {{"lr", format_double(lr)},
            {"weight_decay", format_double(weight_decay)},
            {"beta1", format_double(beta1)},
            {"beta2", format_double(beta2)},
            {"adam_eps", format_double(adam_eps)},
            {"epochs", std::to_string(epochs)},
            {"batch_size", std::to_string(batch_size)},
            {"alpha", format_double(loss.alpha)},
            {"lambda_con", format_double(loss.lambda_con)},
            {"dice_epsilon", format_double(loss.dice_epsilon)},
            {"mode", to_string(mode)},
            {"handling", to_string(handling)},
            {"seed", std::to_string(seed)},
            {"val_fraction", format_double(val_fraction)},
            {"log_wall_time", log_wall_time ? "true" : "false"},
            {"sample_paths", sample_paths ? "true" : "false"}};
}

TrainHyper TrainHyper::from_key_values(const KeyValues& kv) {
    TrainHyper h;
    h.lr = kv_double(kv, "lr", h.lr);
    h.weight_decay = kv_double(kv, "weight_decay", h.weight_decay);
    h.beta1 = kv_double(kv, "beta1", h.beta1);
    h.beta2 = kv_double(kv, "beta2", h.beta2);
    h.adam_eps = kv_double(kv, "adam_eps", h.adam_eps);
    h.epochs = kv_int(kv, "epochs", h.epochs);
    h.batch_size = kv_int(kv, "batch_size", h.batch_size);
    h.loss.alpha = kv_double(kv, "alpha", h.loss.alpha);
    h.loss.lambda_con = kv_double(kv, "lambda_con", h.loss.lambda_con);
    h.loss.dice_epsilon = kv_double(kv, "dice_epsilon", h.loss.dice_epsilon);
    h.mode = parse_train_mode(kv_string(kv, "mode", to_string(h.mode)));
    h.handling = parse_input_handling(kv_string(kv, "handling", to_string(h.handling)));
    h.seed = kv_u64(kv, "seed", h.seed);
    h.val_fraction = kv_double(kv, "val_fraction", h.val_fraction);
    h.log_wall_time = kv_bool(kv, "log_wall_time", h.log_wall_time);
    h.sample_paths = kv_bool(kv, "sample_paths", h.sample_paths);
    h.validate();
    return h;
}

TrainState TrainState::init(const Model& model, uint64_t rng_seed) {
    TrainState s;
    s.rng_seed = rng_seed;
    for (const auto& p : model.parameters()) {
        s.m.emplace_back(static_cast<size_t>(p.value.numel()), 0.0f);
        s.v.emplace_back(static_cast<size_t>(p.value.numel()), 0.0f);
    }
    return s;
}

void adamw_step(std::vector<Parameter>& params, TrainState& state, const TrainHyper& hyper,
                const std::vector<bool>* active) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ContractError("optimizer state does not match the parameter list");
    if (active && active->size() != params.size()) throw ContractError("active mask does not match the parameter list");
    for (size_t i = 0; i < params.size(); ++i) {
        if (active && !(*active)[i]) continue;
        if (!params[i].value.has_grad()) throw ContractError("parameter '" + params[i].name + "' has no gradient");
        if (state.m[i].size() != static_cast<size_t>(params[i].value.numel()))
            throw ContractError("moment shape mismatch for '" + params[i].name + "'");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(hyper.beta1, t);
    const double c2 = 1.0 - std::pow(hyper.beta2, t);
    const float b1 = static_cast<float>(hyper.beta1), b2 = static_cast<float>(hyper.beta2);
    for (size_t i = 0; i < params.size(); ++i) {
        if (active && !(*active)[i]) continue;
        std::span<float> theta = params[i].value.data();
        std::span<const float> g = params[i].value.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (size_t k = 0; k < theta.size(); ++k) {
            m[k] = b1 * m[k] + (1.0f - b1) * g[k];
            v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            const double update = mhat / (std::sqrt(vhat) + hyper.adam_eps) + hyper.weight_decay * theta[k];
            theta[k] = static_cast<float>(theta[k] - hyper.lr * update);
        }
    }
}

Batch make_batch(const std::vector<const Sample*>& samples) {
    if (samples.empty()) throw ContractError("empty batch");
    const Shape& s0 = samples.front()->image.shape();
    const Shape& l0 = samples.front()->labels.shape;
    std::vector<float> img;
    std::vector<uint8_t> lab;
    for (const Sample* s : samples) {
        if (!s->image.defined()) throw DataError("training sample without an image");
        if (s->image.shape() != s0 || s->labels.shape != l0) throw ShapeError("batch samples differ in shape");
        img.insert(img.end(), s->image.data().begin(), s->image.data().end());
        lab.insert(lab.end(), s->labels.values.begin(), s->labels.values.end());
    }
    const auto n = static_cast<int64_t>(samples.size());
    Shape is = s0, ls = l0;
    is.insert(is.begin(), n);
    ls.insert(ls.begin(), n);
    return {Tensor::from_vector(is, std::move(img)), LabelVolume::from_vector(ls, std::move(lab))};
}

StepLosses train_step_rare(Model& model, const Batch& batch, const TrainHyper& hyper, TrainState& state,
                           const std::vector<int64_t>* paths) {
    const auto& c = model.config();
    if (!c.msb_enabled) throw ContractError("rare training needs a model with MSBs");
    std::vector<int64_t> run;
    if (paths) {
        run = *paths;
    } else {
        for (int64_t d = 1; d < c.depth; ++d) run.push_back(d);
    }
    model.set_training(true);
    model.zero_grad();
    StepLosses out{std::vector<double>(static_cast<size_t>(c.depth), kNaN),
                   std::vector<double>(static_cast<size_t>(c.depth - 1), kNaN), 0.0};
    const FullPathOutput full = model.forward_full(batch.images);
    std::vector<Tensor> seg{seg_loss(full.logits, batch.labels, hyper.loss)};
    std::vector<Tensor> con;
    out.seg[0] = seg[0].item();
    for (int64_t d : run) {
        if (d < 1 || d >= c.depth) throw ContractError("scale path " + std::to_string(d) + " out of range");
        const int64_t f = int64_t{1} << d;
        const ScalePathOutput sp = model.forward_scale(downsample_image(batch.images, f), d);
        seg.push_back(seg_loss(sp.logits, downsample_labels(batch.labels, f), hyper.loss));
        con.push_back(consistency_loss(sp.f_msb, full.enc_feats[static_cast<size_t>(d - 1)]));
        out.seg[d] = seg.back().item();
        out.con[d - 1] = con.back().item();
    }
    const Tensor total = total_loss(seg, con, hyper.loss);
    out.total = total.item();
    check_finite(out);
    total.backward();
    if (paths) {
        std::vector<bool> active;
        for (const auto& p : model.parameters()) active.push_back(p.value.has_grad());
        adamw_step(model.parameters(), state, hyper, &active);
    } else {
        adamw_step(model.parameters(), state, hyper);
    }
    return out;
}

StepLosses train_step_unet(Model& model, const Batch& batch, const TrainHyper& hyper, TrainState& state) {
    const auto& c = model.config();
    model.set_training(true);
    model.zero_grad();
    StepLosses out{std::vector<double>(static_cast<size_t>(c.depth), kNaN),
                   std::vector<double>(static_cast<size_t>(c.depth - 1), kNaN), 0.0};
    const Tensor loss = seg_loss(model.forward_full(batch.images).logits, batch.labels, hyper.loss);
    out.seg[0] = out.total = loss.item();
    check_finite(out);
    loss.backward();
    adamw_step(model.parameters(), state, hyper);
    return out;
}

AugmentResult augment_multires(const Tensor& image, std::mt19937_64& rng, InputHandling handling,
                               const Extent3& full_shape) {
    if (handling == InputHandling::route) throw ContractError("augmentation restores with pad or up");
    if (unit_draw(rng) < 0.5) return {image, 1};
    const int64_t factor = int64_t{2} << (rng() % 3);
    return {baseline_prepare(downsample_image(image, factor), handling, full_shape), factor};
}

std::string metrics_header(int64_t depth) {
    std::string h = "epoch,step";
    for (int64_t d = 0; d < depth; ++d) h += ",seg_loss_d" + std::to_string(d);
    for (int64_t d = 1; d < depth; ++d) h += ",con_loss_d" + std::to_string(d);
    h += ",total_loss";
    for (int64_t s = 0; s < depth; ++s) h += ",val_dsc_s" + std::to_string(s);
    return h + ",wall_seconds";
}

std::string metrics_row(const EpochRecord& r, int64_t depth) {
    std::string row = std::to_string(r.epoch) + "," + std::to_string(r.step);
    for (int64_t d = 0; d < depth; ++d) row += "," + cell(d < static_cast<int64_t>(r.seg.size()) ? r.seg[d] : kNaN);
    for (int64_t d = 1; d < depth; ++d)
        row += "," + cell(d - 1 < static_cast<int64_t>(r.con.size()) ? r.con[d - 1] : kNaN);
    row += "," + cell(r.total);
    for (int64_t s = 0; s < depth; ++s)
        row += "," + cell(s < static_cast<int64_t>(r.val_dsc.size()) ? r.val_dsc[s] : kNaN);
    return row + "," + format_double(r.wall_seconds);
}

TrainResult train(const ModelConfig& config, const TrainHyper& hyper, const std::vector<Sample>& train_split,
                  const fs::path& out_dir, const EpochCallback& on_epoch) {
    config.validate();
    hyper.validate();
    if (train_split.empty()) throw ContractError("training needs a non-empty train split");
    if (config.msb_enabled != (hyper.mode == TrainMode::rare))
        throw ConfigError("mode " + to_string(hyper.mode) + " needs msb_enabled=" +
                          (hyper.mode == TrainMode::rare ? "true" : "false"));
    const Shape want{config.in_channels, config.full_shape[0], config.full_shape[1], config.full_shape[2]};
    for (const auto& s : train_split) {
        if (!s.image.defined() || s.image.shape() != want)
            throw DataError("training volume shape does not match " + shape_string(want));
        if (s.num_classes != config.num_classes) throw DataError("training volume class count does not match the model");
    }

    std::vector<Sample> fit = train_split, val;
    if (hyper.val_fraction > 0.0 && train_split.size() >= 2) {
        auto parts = split_dataset(train_split, 1.0 - hyper.val_fraction, hash_combine(hyper.seed, hash_string("validation")));
        fit = std::move(parts.first);
        val = std::move(parts.second);
    }

    fs::create_directories(out_dir);
    TrainResult result{Model::build(config), {}, {}, 0, out_dir / "last.ckpt", {}, out_dir / "metrics.csv"};
    Model& model = result.model;
    TrainState& state = result.state;
    state = TrainState::init(model, hyper.seed);
    save_checkpoint(result.last_checkpoint, model, state, hyper.mode);

    std::ofstream csv(result.metrics, std::ios::trunc);
    if (!csv) throw DataError("cannot open '" + result.metrics.string() + "' for writing");
    csv << metrics_header(config.depth) << '\n';
    csv.flush();

    const auto start = std::chrono::steady_clock::now();
    const InputHandling val_handling = validation_handling(hyper);
    for (int64_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
        std::mt19937_64 rng(hash_combine(hyper.seed, static_cast<uint64_t>(epoch)));
        std::vector<size_t> order(fit.size());
        std::iota(order.begin(), order.end(), size_t{0});
        shuffle(order, rng);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.seg.assign(static_cast<size_t>(config.depth), 0.0);
        rec.con.assign(static_cast<size_t>(config.depth - 1), 0.0);
        std::vector<int64_t> seg_n(rec.seg.size(), 0), con_n(rec.con.size(), 0);
        int64_t steps = 0;
        for (size_t b = 0; b < order.size(); b += static_cast<size_t>(hyper.batch_size)) {
            std::vector<const Sample*> members;
            std::vector<Sample> augmented;
            const size_t end = std::min(order.size(), b + static_cast<size_t>(hyper.batch_size));
            augmented.reserve(end - b);
            for (size_t i = b; i < end; ++i) {
                const Sample& s = fit[order[i]];
                if (hyper.mode == TrainMode::unet_aug) {
                    Sample a = s;
                    a.image = augment_multires(s.image, rng, hyper.handling, config.full_shape).image;
                    augmented.push_back(std::move(a));
                    members.push_back(&augmented.back());
                } else {
                    members.push_back(&s);
                }
            }
            const Batch batch = make_batch(members);
            StepLosses l;
            try {
                if (hyper.mode == TrainMode::rare) {
                    if (hyper.sample_paths && config.depth > 1) {
                        const std::vector<int64_t> one{1 + static_cast<int64_t>(rng() % static_cast<uint64_t>(config.depth - 1))};
                        l = train_step_rare(model, batch, hyper, state, &one);
                    } else {
                        l = train_step_rare(model, batch, hyper, state);
                    }
                } else {
                    l = train_step_unet(model, batch, hyper, state);
                }
            } catch (const TrainingError& e) {
                throw TrainingError("epoch " + std::to_string(epoch) + " step " + std::to_string(state.step + 1) + ": " +
                                    e.what());
            }
            for (size_t d = 0; d < l.seg.size(); ++d)
                if (!std::isnan(l.seg[d])) rec.seg[d] += l.seg[d], ++seg_n[d];
            for (size_t d = 0; d < l.con.size(); ++d)
                if (!std::isnan(l.con[d])) rec.con[d] += l.con[d], ++con_n[d];
            rec.total += l.total;
            ++steps;
        }
        for (size_t d = 0; d < rec.seg.size(); ++d) rec.seg[d] = seg_n[d] ? rec.seg[d] / seg_n[d] : kNaN;
        for (size_t d = 0; d < rec.con.size(); ++d) rec.con[d] = con_n[d] ? rec.con[d] / con_n[d] : kNaN;
        rec.total /= static_cast<double>(steps);
        rec.step = state.step;
        if (!val.empty()) rec.val_dsc = mean_dsc_per_scale(model, val, val_handling);
        if (hyper.log_wall_time)
            rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        csv << metrics_row(rec, config.depth) << '\n';
        csv.flush();
        if (!csv) throw DataError("write failed for '" + result.metrics.string() + "'");

        state.epoch = epoch;
        const double score = rec.val_dsc.empty()
                                 ? static_cast<double>(epoch)
                                 : std::accumulate(rec.val_dsc.begin(), rec.val_dsc.end(), 0.0) /
                                       static_cast<double>(rec.val_dsc.size());
        const bool improved = score > state.best_val_dsc;
        if (improved) {
            state.best_val_dsc = score;
            result.best_epoch = epoch;
        }
        save_checkpoint(result.last_checkpoint, model, state, hyper.mode);
        if (improved) {
            result.best_checkpoint = out_dir / "best.ckpt";
            save_checkpoint(result.best_checkpoint, model, state, hyper.mode);
        }
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

void save_checkpoint(const fs::path& path, const Model& model, const TrainState& state, TrainMode mode) {
    const auto& params = model.parameters();
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ContractError("optimizer state does not match the model");
    std::string payload;
    int64_t param_floats = 0, buffer_floats = 0;
    for (const auto& p : params) {
        append_floats(payload, p.value.data());
        param_floats += p.value.numel();
    }
    for (const auto& b : model.buffers()) {
        append_floats(payload, b.mean);
        append_floats(payload, b.var);
        buffer_floats += static_cast<int64_t>(b.mean.size() + b.var.size());
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != static_cast<size_t>(params[i].value.numel()) || state.v[i].size() != state.m[i].size())
            throw ContractError("moment shape mismatch for '" + params[i].name + "'");
        append_floats(payload, state.m[i]);
    }
    for (const auto& v : state.v) append_floats(payload, v);

    KeyValues header = model.config().to_key_values();
    header["mode"] = to_string(mode);
    header["step"] = std::to_string(state.step);
    header["epoch"] = std::to_string(state.epoch);
    header["rng_seed"] = std::to_string(state.rng_seed);
    header["best_val_dsc"] = format_double(state.best_val_dsc);
    header["param_floats"] = std::to_string(param_floats);
    header["buffer_floats"] = std::to_string(buffer_floats);
    header["payload_bytes"] = std::to_string(payload.size());
    header["payload_fnv1a"] = std::to_string(fnv1a(payload));
    const std::string text = format_key_values(header);

    std::string bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_u32(bytes, static_cast<uint32_t>(text.size()));
    bytes += text;
    bytes += payload;

    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw DataError("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 12 || std::memcmp(p, kCheckpointMagic, 8) != 0)
        throw FormatError("'" + path.string() + "' is not a RUCKPT01 checkpoint");
    const uint32_t hlen = get_u32(p + 8);
    if (bytes.size() < 12 + static_cast<size_t>(hlen)) throw FormatError("truncated checkpoint header");
    KeyValues kv;
    ModelConfig config;
    TrainMode mode;
    TrainState state;
    int64_t param_floats, buffer_floats, payload_bytes;
    uint64_t checksum;
    try {
        kv = parse_key_values(bytes.substr(12, hlen));
        config = ModelConfig::from_key_values(kv);
        mode = parse_train_mode(kv_string(kv, "mode", ""));
        state.step = kv_int(kv, "step", -1);
        state.epoch = kv_int(kv, "epoch", -1);
        state.rng_seed = kv_u64(kv, "rng_seed", 0);
        state.best_val_dsc = kv_double(kv, "best_val_dsc", -1.0);
        param_floats = kv_int(kv, "param_floats", -1);
        buffer_floats = kv_int(kv, "buffer_floats", -1);
        payload_bytes = kv_int(kv, "payload_bytes", -1);
        checksum = std::stoull(kv_string(kv, "payload_fnv1a", ""));
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError("bad checkpoint header: " + std::string(e.what()));
    }
    if (state.step < 0 || state.epoch < 0) throw FormatError("bad checkpoint step counters");
    const std::string_view payload(bytes.data() + 12 + hlen, bytes.size() - 12 - hlen);
    if (static_cast<int64_t>(payload.size()) != payload_bytes)
        throw FormatError("checkpoint payload is " + std::to_string(payload.size()) + " bytes, header says " +
                          std::to_string(payload_bytes));
    if (fnv1a(payload) != checksum) throw FormatError("checkpoint payload checksum mismatch");

    Checkpoint ck{Model::build(config), TrainState::init(Model::build(config), state.rng_seed), mode};
    auto& params = ck.model.parameters();
    int64_t want_params = 0, want_buffers = 0;
    for (const auto& prm : params) want_params += prm.value.numel();
    for (const auto& b : ck.model.buffers()) want_buffers += static_cast<int64_t>(b.mean.size() + b.var.size());
    if (want_params != param_floats || want_buffers != buffer_floats ||
        payload_bytes != static_cast<int64_t>(sizeof(float)) * (3 * want_params + want_buffers))
        throw FormatError("checkpoint payload does not match its model config");
    const char* cursor = payload.data();
    auto read = [&cursor](std::span<float> dst) {
        std::memcpy(dst.data(), cursor, dst.size_bytes());
        cursor += dst.size_bytes();
    };
    for (auto& prm : params) read(prm.value.data());
    for (auto& b : ck.model.buffers()) {
        read(b.mean);
        read(b.var);
    }
    for (auto& m : ck.state.m) read(m);
    for (auto& v : ck.state.v) read(v);
    ck.state.step = state.step;
    ck.state.epoch = state.epoch;
    ck.state.best_val_dsc = state.best_val_dsc;
    return ck;
}

Checkpoint load_checkpoint(const fs::path& path, const ModelConfig& expected, TrainMode expected_mode) {
    Checkpoint ck = load_checkpoint(path);
    if (!(ck.model.config() == expected)) throw FormatError("checkpoint model config does not match the expected config");
    if (ck.mode != expected_mode)
        throw FormatError("checkpoint was trained in mode " + to_string(ck.mode) + ", expected " + to_string(expected_mode));
    return ck;
}

}  // namespace rareunet
