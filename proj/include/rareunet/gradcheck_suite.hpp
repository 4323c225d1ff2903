#ifndef RAREUNET_GRADCHECK_SUITE_HPP
#define RAREUNET_GRADCHECK_SUITE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace rareunet {

struct GradcheckCase {
    std::string op;
    uint64_t seed = 0;
    bool pass = false;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
};

struct GradcheckSummary {
    std::vector<GradcheckCase> cases;
    double seconds = 0.0;
    bool pass() const;
    nlohmann::json to_json() const;
};

// Every differentiable op covered by the suite.
std::vector<std::string> gradcheck_ops();

// Runs "all" or a single op over the seeds. `inject_fault` adds a spurious
// gradient term to each checked function without changing its value, so
// every case must fail.
GradcheckSummary run_gradcheck_suite(const std::string& scope, const std::vector<uint64_t>& seeds,
                                     bool inject_fault = false);

}  // namespace rareunet

#endif  // RAREUNET_GRADCHECK_SUITE_HPP
