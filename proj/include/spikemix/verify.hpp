#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace spikemix {

struct CheckResult {
    std::string suite;
    std::string name;
    bool passed = false;
    std::string detail;
};

struct SuiteSummary {
    std::string name;
    std::size_t passed = 0;
    std::size_t failed = 0;
    double seconds = 0.0;
};

struct VerifyReport {
    std::vector<CheckResult> checks;
    std::vector<SuiteSummary> suites;

    std::size_t passed() const;
    std::size_t failed() const;
    bool ok() const { return failed() == 0 && !checks.empty(); }
    const SuiteSummary* suite(std::string_view name) const;
};

// dft, wavelet, ssa, gradient, census
const std::vector<std::string>& verify_suite_names();

// Runs the named suites (all when empty). `sink` sees every check as it
// completes. Unknown names throw InvalidArgument.
VerifyReport run_verify(const std::vector<std::string>& suites = {},
                        const std::function<void(const CheckResult&)>& sink = {});

}  // namespace spikemix
