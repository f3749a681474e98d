#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spikemix/config.hpp"
#include "spikemix/mixers.hpp"

namespace spikemix {

struct TimingOptions {
    std::size_t warmup = 3;
    std::size_t iters = 20;
    std::size_t reps = 1;

    // warmup >= 3, iters >= 20, reps >= 1
    void validate() const;
};

struct LatencyStats {
    double median_ms = 0.0;
    double mean_ms = 0.0;
    double stddev_ms = 0.0;
    double min_ms = 0.0;
    double max_ms = 0.0;
    std::vector<double> samples_ms;
};

LatencyStats summarize(std::vector<double> samples_ms);

// Runs `f` warmup times untimed, then reps x iters timed calls on the
// monotonic clock. Inputs must be prepared by the caller.
LatencyStats time_kernel(const std::function<void()>& f, const TimingOptions& opt);

// Least-squares slope of log(latency) against log(N). Needs at least 4
// points with strictly increasing N and positive latencies.
double fit_loglog_slope(std::span<const std::pair<double, double>> points);

struct BenchConfig {
    std::vector<MixerKind> mixers{MixerKind::ssa, MixerKind::fft1d};
    std::vector<std::size_t> ns{256, 512, 1024, 2048, 4096};
    std::size_t dim = 256;
    std::size_t head_dim = 32;
    std::size_t timesteps = 1;
    std::size_t batch = 1;
    SsaOrder ssa_order = SsaOrder::qk_first;
    WaveletFamily wavelet = WaveletFamily::haar;
    TimingOptions timing;

    // Whole sub-layer comparison (projections, BN, SN included).
    bool sublayer = true;
    std::size_t sub_n = 64;
    std::size_t sub_dim = 256;
    std::size_t sub_timesteps = 4;
    std::size_t sub_batch = 16;
    bool sub_backward = true;

    // Full-model parameter census.
    std::size_t census_layers = 4;
    std::size_t census_dim = 384;

    std::uint64_t seed = 0;

    void validate() const;
    static BenchConfig from_config(const Config& cfg);
    void to_config(Config& cfg) const;
};

const std::vector<std::string_view>& bench_config_keys();

struct SweepSeries {
    MixerKind mixer;
    std::vector<std::size_t> ns;
    std::vector<LatencyStats> stats;
    std::optional<double> slope;
};

struct SublayerResult {
    MixerKind mixer;
    LatencyStats forward;
    std::optional<LatencyStats> forward_backward;
    std::size_t mixer_params = 0;  // dense weights; batch-norm affine excluded
    std::size_t norm_params = 0;
    std::size_t param_bytes = 0;
    std::size_t activation_bytes = 0;
};

struct CensusRow {
    MixerKind mixer;
    std::size_t total = 0;
    std::size_t weights = 0;
    std::size_t mixer_total = 0;
    std::size_t mixer_weights = 0;
};

struct BenchReport {
    BenchConfig config;
    std::vector<SweepSeries> sweep;
    std::vector<SublayerResult> sublayers;
    std::vector<CensusRow> census;

    const SweepSeries* series(MixerKind kind) const;
    const SublayerResult* sublayer(MixerKind kind) const;
    const CensusRow* census_row(MixerKind kind) const;
};

// Pure mixing kernel for one sweep point: SSA products on binary heads or
// the LT plan applied to a binary [T, B, N, D] input.
std::function<void()> make_mixing_kernel(MixerKind kind, std::size_t n, const BenchConfig& cfg, Rng& rng);

BenchReport compare_mixers(const BenchConfig& cfg, const std::function<void(std::string_view)>& log = {});

std::string report_json(const BenchReport& report);
// Checks a report document against the declared schema; throws FormatError
// naming the first violation.
void validate_report_json(std::string_view json_text);
void write_report(const BenchReport& report, const std::string& json_path, const std::string& csv_path = {});

}  // namespace spikemix
