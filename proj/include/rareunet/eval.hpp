#ifndef RAREUNET_EVAL_HPP
#define RAREUNET_EVAL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rareunet/data.hpp"
#include "rareunet/model.hpp"
#include "rareunet/routing.hpp"

namespace rareunet {

struct DscStat {
    double mean = 0.0;
    double sd = 0.0;  // population SD
    bool operator==(const DscStat&) const = default;
};

struct VariantReport {
    std::string name;          // e.g. "RARE-UNet", "UNet-Pad"
    std::vector<DscStat> scale;  // per requested scale: foreground-mean DSC over volumes
    std::vector<std::vector<DscStat>> per_class;  // [scale][class - 1]
    DscStat overall;  // mean of the scale means; SD of the scale means
    bool operator==(const VariantReport&) const = default;
};

struct EvalReport {
    std::vector<int64_t> scales;  // exponents: scale 1/2^s
    int64_t num_classes = 0;
    std::vector<VariantReport> variants;

    // Variant x scale table of mean±SD with an overall column, then a
    // variant/class x scale table. Values print in shortest round-trip form.
    std::string table() const;
    static EvalReport parse_table(const std::string& text);

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    bool operator==(const EvalReport&) const = default;
};

std::string scale_label(int64_t scale);  // "1", "1/2", ...
// Inverse of scale_label; FormatError otherwise.
int64_t parse_scale(const std::string& label);

DscStat summarize(const std::vector<double>& values);

// Scores every sample at every requested scale with `handling`.
VariantReport evaluate_variant(const Model& model, const std::vector<Sample>& samples, InputHandling handling,
                               const std::vector<int64_t>& scales, const std::string& name);

struct BenchRow {
    int64_t scale = 0;
    int64_t entry_depth = 0;
    DscStat seconds;  // mean±SD over repeats
    int64_t macs = 0;
    int64_t params = 0;
    double speedup = 1.0;  // scale-1 mean time / this mean time
};

struct BenchReport {
    std::vector<BenchRow> rows;
    int64_t repeats = 0;
    std::string table() const;
    nlohmann::json to_json() const;
};

// Steady-state forward timing on seeded inputs at each scale; one warm-up
// pass per scale is excluded. RARE models route; plain models take the full
// path on padded input.
BenchReport run_bench(const Model& model, const std::vector<int64_t>& scales, int64_t repeats, uint64_t seed = 0);

}  // namespace rareunet

#endif  // RAREUNET_EVAL_HPP
