#include "rareunet/eval.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "rareunet/error.hpp"
#include "rareunet/kv.hpp"
#include "rareunet/losses.hpp"

namespace rareunet {

namespace {

std::string stat_text(const DscStat& s) { return format_double(s.mean) + "±" + format_double(s.sd); }

std::vector<std::string> split_row(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    std::istringstream in(line);
    for (std::string part; std::getline(in, part, '|');) {
        const auto b = part.find_first_not_of(' ');
        const auto e = part.find_last_not_of(' ');
        cells.push_back(b == std::string::npos ? std::string() : part.substr(b, e - b + 1));
    }
    // A leading '|' yields an empty first cell.
    if (!cells.empty() && cells.front().empty()) cells.erase(cells.begin());
    return cells;
}

double parse_number(const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad number '" + s + "' in table");
    return v;
}

DscStat parse_stat(const std::string& cell) {
    const std::string pm = "±";
    const auto at = cell.find(pm);
    if (at == std::string::npos) throw FormatError("expected mean±sd, got '" + cell + "'");
    return {parse_number(cell.substr(0, at)), parse_number(cell.substr(at + pm.size()))};
}

}  // namespace

int64_t parse_scale(const std::string& s) {
    if (s == "1") return 0;
    if (s.rfind("1/", 0) != 0) throw FormatError("bad scale label '" + s + "'");
    const auto den = static_cast<int64_t>(parse_number(s.substr(2)));
    if (den < 2 || (den & (den - 1)) != 0) throw FormatError("bad scale label '" + s + "'");
    return std::countr_zero(static_cast<uint64_t>(den));
}

namespace {

nlohmann::json stat_json(const DscStat& s) { return {{"mean", s.mean}, {"sd", s.sd}}; }
DscStat stat_from(const nlohmann::json& j) { return {j.at("mean").get<double>(), j.at("sd").get<double>()}; }

Model eval_copy(const Model& model) {
    Model m = model;
    m.set_training(false);
    return m;
}

}  // namespace

std::string scale_label(int64_t scale) { return scale == 0 ? "1" : "1/" + std::to_string(int64_t{1} << scale); }

DscStat summarize(const std::vector<double>& values) {
    if (values.empty()) return {};
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / n)};
}

std::string EvalReport::table() const {
    std::ostringstream out;
    out << "| variant |";
    for (int64_t s : scales) out << ' ' << scale_label(s) << " |";
    out << " overall |\n|---|";
    for (size_t i = 0; i < scales.size(); ++i) out << "---|";
    out << "---|\n";
    for (const auto& v : variants) {
        out << "| " << v.name << " |";
        for (const auto& s : v.scale) out << ' ' << stat_text(s) << " |";
        out << ' ' << stat_text(v.overall) << " |\n";
    }
    out << "\n| variant | class |";
    for (int64_t s : scales) out << ' ' << scale_label(s) << " |";
    out << "\n|---|---|";
    for (size_t i = 0; i < scales.size(); ++i) out << "---|";
    out << '\n';
    for (const auto& v : variants) {
        for (int64_t c = 1; c < num_classes; ++c) {
            out << "| " << v.name << " | " << c << " |";
            for (size_t s = 0; s < scales.size(); ++s) out << ' ' << stat_text(v.per_class[s][c - 1]) << " |";
            out << '\n';
        }
    }
    return out.str();
}

EvalReport EvalReport::parse_table(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::vector<std::string>> first, second;
    std::vector<std::string> header;
    int section = 0;
    bool seen_header = false;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) {
            if (seen_header) ++section, seen_header = false;
            continue;
        }
        if (line.rfind("|---", 0) == 0) continue;
        auto cells = split_row(line);
        if (!seen_header) {
            seen_header = true;
            if (section == 0) header = cells;
            continue;
        }
        (section == 0 ? first : second).push_back(std::move(cells));
    }
    if (header.size() < 2 || header.front() != "variant" || header.back() != "overall")
        throw FormatError("table header must read 'variant | scales... | overall'");
    EvalReport r;
    for (size_t i = 1; i + 1 < header.size(); ++i) r.scales.push_back(parse_scale(header[i]));
    const size_t ns = r.scales.size();
    for (const auto& row : first) {
        if (row.size() != ns + 2) throw FormatError("summary row has " + std::to_string(row.size()) + " cells");
        VariantReport v;
        v.name = row[0];
        for (size_t i = 0; i < ns; ++i) v.scale.push_back(parse_stat(row[1 + i]));
        v.overall = parse_stat(row.back());
        v.per_class.assign(ns, {});
        r.variants.push_back(std::move(v));
    }
    int64_t max_class = 0;
    for (const auto& row : second) {
        if (row.size() != ns + 2) throw FormatError("class row has " + std::to_string(row.size()) + " cells");
        auto it = std::find_if(r.variants.begin(), r.variants.end(), [&](const VariantReport& v) { return v.name == row[0]; });
        if (it == r.variants.end()) throw FormatError("class row for unknown variant '" + row[0] + "'");
        const auto c = static_cast<int64_t>(parse_number(row[1]));
        if (c != static_cast<int64_t>(it->per_class[0].size()) + 1) throw FormatError("class rows out of order");
        for (size_t i = 0; i < ns; ++i) it->per_class[i].push_back(parse_stat(row[2 + i]));
        max_class = std::max(max_class, c);
    }
    r.num_classes = max_class + 1;
    return r;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["scales"] = scales;
    j["num_classes"] = num_classes;
    j["variants"] = nlohmann::json::array();
    for (const auto& v : variants) {
        nlohmann::json jv;
        jv["name"] = v.name;
        jv["overall"] = stat_json(v.overall);
        jv["scale"] = nlohmann::json::array();
        for (const auto& s : v.scale) jv["scale"].push_back(stat_json(s));
        jv["per_class"] = nlohmann::json::array();
        for (const auto& row : v.per_class) {
            nlohmann::json jr = nlohmann::json::array();
            for (const auto& s : row) jr.push_back(stat_json(s));
            jv["per_class"].push_back(jr);
        }
        j["variants"].push_back(jv);
    }
    return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    try {
        EvalReport r;
        r.scales = j.at("scales").get<std::vector<int64_t>>();
        r.num_classes = j.at("num_classes").get<int64_t>();
        for (const auto& jv : j.at("variants")) {
            VariantReport v;
            v.name = jv.at("name").get<std::string>();
            v.overall = stat_from(jv.at("overall"));
            for (const auto& s : jv.at("scale")) v.scale.push_back(stat_from(s));
            for (const auto& jr : jv.at("per_class")) {
                std::vector<DscStat> row;
                for (const auto& s : jr) row.push_back(stat_from(s));
                v.per_class.push_back(std::move(row));
            }
            r.variants.push_back(std::move(v));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad report json: ") + e.what());
    }
}

VariantReport evaluate_variant(const Model& model, const std::vector<Sample>& samples, InputHandling handling,
                               const std::vector<int64_t>& scales, const std::string& name) {
    const int64_t C = model.config().num_classes;
    if (samples.empty()) throw DataError("evaluation needs at least one volume");
    VariantReport v;
    v.name = name;
    std::vector<double> scale_means;
    for (int64_t s : scales) {
        if (s < 0 || s >= model.config().depth) throw ConfigError("scale 1/2^" + std::to_string(s) + " is not evaluable");
        std::vector<double> volume_means;
        std::vector<std::vector<double>> by_class(static_cast<size_t>(C - 1));
        for (const auto& sample : samples) {
            if (sample.num_classes != C) throw DataError("volume class count does not match the checkpoint");
            const auto dsc = score_at_scale(model, sample, s, handling);
            volume_means.push_back(std::accumulate(dsc.begin(), dsc.end(), 0.0) / static_cast<double>(dsc.size()));
            for (size_t c = 0; c < dsc.size(); ++c) by_class[c].push_back(dsc[c]);
        }
        v.scale.push_back(summarize(volume_means));
        scale_means.push_back(v.scale.back().mean);
        std::vector<DscStat> row;
        for (const auto& values : by_class) row.push_back(summarize(values));
        v.per_class.push_back(std::move(row));
    }
    v.overall = summarize(scale_means);
    return v;
}

std::string BenchReport::table() const {
    std::ostringstream out;
    out << "| scale | entry depth | time s (mean±SD) | MACs | params | speedup |\n|---|---|---|---|---|---|\n";
    out << std::setprecision(4);
    for (const auto& r : rows)
        out << "| " << scale_label(r.scale) << " | " << r.entry_depth << " | " << r.seconds.mean << "±" << r.seconds.sd
            << " | " << r.macs << " | " << r.params << " | " << r.speedup << " |\n";
    return out.str();
}

nlohmann::json BenchReport::to_json() const {
    nlohmann::json j;
    j["repeats"] = repeats;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows)
        j["rows"].push_back({{"scale", r.scale},
                             {"entry_depth", r.entry_depth},
                             {"seconds", stat_json(r.seconds)},
                             {"macs", r.macs},
                             {"params", r.params},
                             {"speedup", r.speedup}});
    return j;
}

BenchReport run_bench(const Model& model, const std::vector<int64_t>& scales, int64_t repeats, uint64_t seed) {
    if (repeats < 1) throw ConfigError("bench needs at least one repeat");
    const auto& c = model.config();
    const Model m = eval_copy(model);
    NoGradGuard no_grad;
    BenchReport report;
    report.repeats = repeats;
    for (int64_t s : scales) {
        if (s < 0 || s >= c.depth) throw ConfigError("scale 1/2^" + std::to_string(s) + " is not benchmarkable");
        const Extent3 e = c.extent(s);
        Tensor x = Tensor::uniform({1, c.in_channels, e[0], e[1], e[2]}, seed + static_cast<uint64_t>(s), 0.0f, 1.0f);
        BenchRow row;
        row.scale = s;
        row.entry_depth = c.msb_enabled ? s : 0;
        if (!c.msb_enabled && s > 0) x = pad_or_crop(x, c.full_shape);
        ForwardTrace trace;
        m.forward_at(x, row.entry_depth, &trace);
        row.macs = trace.macs;
        for (const auto& name : trace.params) row.params += m.param(name).numel();
        std::vector<double> times;
        for (int64_t r = 0; r < repeats; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            const Tensor y = m.forward_at(x, row.entry_depth);
            times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        row.seconds = summarize(times);
        report.rows.push_back(row);
    }
    const auto base = std::find_if(report.rows.begin(), report.rows.end(), [](const BenchRow& r) { return r.scale == 0; });
    const double ref = base != report.rows.end() ? base->seconds.mean : report.rows.front().seconds.mean;
    for (auto& r : report.rows) r.speedup = ref / r.seconds.mean;
    return report;
}

}  // namespace rareunet
