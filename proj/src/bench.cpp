#include "spikemix/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "spikemix/error.hpp"
#include "spikemix/model.hpp"
#include "malloc_tuning.hpp"

namespace spikemix {

using json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kSchema = "spikemix.bench/1";

void log_line(const std::function<void(std::string_view)>& log, const std::string& msg) {
    if (log) log(msg);
}

std::vector<MixerKind> parse_mixer_list(const std::vector<std::string>& names) {
    std::vector<MixerKind> out;
    for (const auto& n : names) out.push_back(parse_mixer(n));
    return out;
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) out += (out.empty() ? "" : ",") + p;
    return out;
}

MixerSpec spec_for(MixerKind kind, const BenchConfig& cfg, std::size_t dim) {
    MixerSpec spec;
    spec.kind = kind;
    spec.order = cfg.ssa_order;
    spec.wavelet = cfg.wavelet;
    spec.heads = std::max<std::size_t>(1, dim / cfg.head_dim);
    return spec;
}

json stats_json(const LatencyStats& s) {
    return json{{"median_ms", s.median_ms}, {"mean_ms", s.mean_ms}, {"stddev_ms", s.stddev_ms},
                {"min_ms", s.min_ms},       {"max_ms", s.max_ms},   {"samples", s.samples_ms.size()}};
}

}  // namespace

void TimingOptions::validate() const {
    if (warmup < 3) throw InvalidArgument("bench: warmup must be at least 3 iterations");
    if (iters < 20) throw InvalidArgument("bench: measured iterations must be at least 20");
    if (reps < 1) throw InvalidArgument("bench: repetitions must be at least 1");
}

LatencyStats summarize(std::vector<double> samples) {
    if (samples.empty()) throw InvalidArgument("summarize: no samples");
    LatencyStats s;
    const double n = static_cast<double>(samples.size());
    s.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    double var = 0.0;
    for (double x : samples) var += (x - s.mean_ms) * (x - s.mean_ms);
    s.stddev_ms = samples.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    s.median_ms = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    s.min_ms = sorted.front();
    s.max_ms = sorted.back();
    s.samples_ms = std::move(samples);
    return s;
}

LatencyStats time_kernel(const std::function<void()>& f, const TimingOptions& opt) {
    opt.validate();
    using clock = std::chrono::steady_clock;
    for (std::size_t i = 0; i < opt.warmup; ++i) f();
    std::vector<double> samples;
    samples.reserve(opt.iters * opt.reps);
    for (std::size_t r = 0; r < opt.reps; ++r)
        for (std::size_t i = 0; i < opt.iters; ++i) {
            const auto t0 = clock::now();
            f();
            const auto t1 = clock::now();
            // A kernel faster than the clock tick still took time.
            samples.push_back(std::max(std::chrono::duration<double, std::milli>(t1 - t0).count(), 1e-6));
        }
    return summarize(std::move(samples));
}

double fit_loglog_slope(std::span<const std::pair<double, double>> points) {
    if (points.size() < 4) throw InvalidArgument("fit_loglog_slope: need at least 4 points");
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!(points[i].first > 0.0) || !(points[i].second > 0.0)) {
            throw InvalidArgument("fit_loglog_slope: N and latency must be positive");
        }
        if (i && !(points[i].first > points[i - 1].first)) {
            throw InvalidArgument("fit_loglog_slope: degenerate input, N must be strictly increasing");
        }
    }
    const double n = static_cast<double>(points.size());
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : points) {
        mx += std::log(x);
        my += std::log(y);
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (const auto& [x, y] : points) {
        const double dx = std::log(x) - mx;
        sxy += dx * (std::log(y) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

void BenchConfig::validate() const {
    if (mixers.empty()) throw InvalidArgument("bench: empty mixer list");
    if (ns.empty()) throw InvalidArgument("bench: empty N sweep");
    for (std::size_t i = 0; i < ns.size(); ++i) {
        if (!is_power_of_two(ns[i])) throw InvalidArgument("bench: sweep N=" + std::to_string(ns[i]) + " is not a power of 2");
        if (i && ns[i] <= ns[i - 1]) throw InvalidArgument("bench: sweep N values must be strictly increasing");
    }
    if (!dim || !head_dim || dim % head_dim) throw InvalidArgument("bench: dim must be a positive multiple of head_dim");
    if (!timesteps || !batch) throw InvalidArgument("bench: timesteps and batch must be positive");
    if (sublayer && (!sub_n || !sub_dim || !sub_timesteps || !sub_batch || sub_dim % head_dim)) {
        throw InvalidArgument("bench: sub-layer shape must be positive with sub_dim a multiple of head_dim");
    }
    timing.validate();
}

const std::vector<std::string_view>& bench_config_keys() {
    static const std::vector<std::string_view> keys{
        "mixers",    "n",           "bench_dim",  "head_dim",      "bench_timesteps", "bench_batch",
        "ssa_order", "wavelet",     "warmup",     "iters",         "reps",            "sublayer",
        "sub_n",     "sub_dim",     "sub_timesteps", "sub_batch",  "sub_backward",    "census_layers",
        "census_dim", "seed"};
    return keys;
}

BenchConfig BenchConfig::from_config(const Config& c) {
    BenchConfig b;
    if (c.has("mixers")) b.mixers = parse_mixer_list(c.get_list("mixers", ""));
    if (c.has("n")) b.ns = c.get_size_list("n", "");
    b.dim = c.get_size("bench_dim", b.dim);
    b.head_dim = c.get_size("head_dim", b.head_dim);
    b.timesteps = c.get_size("bench_timesteps", b.timesteps);
    b.batch = c.get_size("bench_batch", b.batch);
    if (c.has("ssa_order")) b.ssa_order = parse_ssa_order(c.get("ssa_order", ""));
    if (c.has("wavelet")) b.wavelet = parse_wavelet(c.get("wavelet", ""));
    b.timing.warmup = c.get_size("warmup", b.timing.warmup);
    b.timing.iters = c.get_size("iters", b.timing.iters);
    b.timing.reps = c.get_size("reps", b.timing.reps);
    b.sublayer = c.get_bool("sublayer", b.sublayer);
    b.sub_n = c.get_size("sub_n", b.sub_n);
    b.sub_dim = c.get_size("sub_dim", b.sub_dim);
    b.sub_timesteps = c.get_size("sub_timesteps", b.sub_timesteps);
    b.sub_batch = c.get_size("sub_batch", b.sub_batch);
    b.sub_backward = c.get_bool("sub_backward", b.sub_backward);
    b.census_layers = c.get_size("census_layers", b.census_layers);
    b.census_dim = c.get_size("census_dim", b.census_dim);
    b.seed = c.get_u64("seed", b.seed);
    return b;
}

void BenchConfig::to_config(Config& c) const {
    std::vector<std::string> names, nvals;
    for (auto m : mixers) names.emplace_back(to_string(m));
    for (auto n : ns) nvals.push_back(std::to_string(n));
    c.set("mixers", join(names));
    c.set("n", join(nvals));
    c.set("bench_dim", std::to_string(dim));
    c.set("head_dim", std::to_string(head_dim));
    c.set("bench_timesteps", std::to_string(timesteps));
    c.set("bench_batch", std::to_string(batch));
    c.set("ssa_order", std::string(to_string(ssa_order)));
    c.set("wavelet", std::string(to_string(wavelet)));
    c.set("warmup", std::to_string(timing.warmup));
    c.set("iters", std::to_string(timing.iters));
    c.set("reps", std::to_string(timing.reps));
    c.set("sublayer", sublayer ? "true" : "false");
    c.set("sub_n", std::to_string(sub_n));
    c.set("sub_dim", std::to_string(sub_dim));
    c.set("sub_timesteps", std::to_string(sub_timesteps));
    c.set("sub_batch", std::to_string(sub_batch));
    c.set("sub_backward", sub_backward ? "true" : "false");
    c.set("census_layers", std::to_string(census_layers));
    c.set("census_dim", std::to_string(census_dim));
    c.set("seed", std::to_string(seed));
}

const SweepSeries* BenchReport::series(MixerKind kind) const {
    for (const auto& s : sweep)
        if (s.mixer == kind) return &s;
    return nullptr;
}

const SublayerResult* BenchReport::sublayer(MixerKind kind) const {
    for (const auto& s : sublayers)
        if (s.mixer == kind) return &s;
    return nullptr;
}

const CensusRow* BenchReport::census_row(MixerKind kind) const {
    for (const auto& s : census)
        if (s.mixer == kind) return &s;
    return nullptr;
}

std::function<void()> make_mixing_kernel(MixerKind kind, std::size_t n, const BenchConfig& cfg, Rng& rng) {
    const MixerSpec spec = spec_for(kind, cfg, cfg.dim);
    if (kind == MixerKind::ssa) {
        const std::size_t h = cfg.dim / cfg.head_dim;
        const Shape s{cfg.timesteps, cfg.batch, h, n, cfg.head_dim};
        auto q = std::make_shared<Tensor>(rng.bernoulli_tensor(s, 0.5));
        auto k = std::make_shared<Tensor>(rng.bernoulli_tensor(s, 0.5));
        auto v = std::make_shared<Tensor>(rng.bernoulli_tensor(s, 0.5));
        return [q, k, v, spec] {
            Tensor out = ssa_mix(*q, *k, *v, spec.scale, spec.order);
            if (out.empty()) throw Error("empty SSA output");
        };
    }
    auto plan = std::make_shared<TransformPlan>(make_transform_plan(spec, n, cfg.dim));
    auto x = std::make_shared<Tensor>(rng.bernoulli_tensor(Shape{cfg.timesteps, cfg.batch, n, cfg.dim}, 0.5));
    return [plan, x] {
        Tensor out = plan->apply(*x);
        if (out.empty()) throw Error("empty transform output");
    };
}

namespace {

SublayerResult bench_sublayer(MixerKind kind, const BenchConfig& cfg, Rng& rng) {
    SublayerResult r;
    r.mixer = kind;
    const MixerSpec spec = spec_for(kind, cfg, cfg.sub_dim);
    auto mixer = make_mixer("mixer", spec, cfg.sub_n, cfg.sub_dim, rng);
    StateRefs refs;
    mixer->collect(refs);
    for (Parameter* p : refs.params) {
        if (p->name.ends_with(".gamma") || p->name.ends_with(".beta")) {
            r.norm_params += p->numel();
        } else {
            r.mixer_params += p->numel();
        }
    }
    r.param_bytes = (r.mixer_params + r.norm_params) * sizeof(double);

    const Tensor x = rng.bernoulli_tensor(Shape{cfg.sub_timesteps, cfg.sub_batch, cfg.sub_n, cfg.sub_dim}, 0.5);
    const Tensor seed_grad = rng.normal_tensor(x.shape());
    const LifParams lif;
    {
        Tape tape;
        ForwardContext ctx{tape, Mode::train, lif, cfg.sub_timesteps, nullptr};
        mixer->forward(ctx, tape.constant(x));
        r.activation_bytes = tape.value_bytes();
    }
    r.forward = time_kernel(
        [&] {
            Tape tape(false);
            ForwardContext ctx{tape, Mode::eval, lif, cfg.sub_timesteps, nullptr};
            mixer->forward(ctx, tape.constant(x));
        },
        cfg.timing);
    if (cfg.sub_backward) {
        r.forward_backward = time_kernel(
            [&] {
                for (Parameter* p : refs.params) p->zero_grad();
                Tape tape;
                ForwardContext ctx{tape, Mode::train, lif, cfg.sub_timesteps, nullptr};
                Var y = mixer->forward(ctx, tape.constant(x));
                tape.backward(ad::sum(ad::mul(y, tape.constant(seed_grad))));
            },
            cfg.timing);
    }
    return r;
}

CensusRow census_for(MixerKind kind, const BenchConfig& cfg) {
    ModelConfig mc;
    mc.layers = cfg.census_layers;
    mc.dim = cfg.census_dim;
    mc.height = mc.width = 32;
    mc.channels = 3;
    mc.patch = 4;
    mc.num_classes = 10;
    mc.mixer = spec_for(kind, cfg, cfg.census_dim);
    Spikformer model(mc, cfg.seed);
    const ParamCensus c = model.param_count();
    return {kind, c.total(), c.weights(), c.group_total(".mixer"), c.group_weights(".mixer")};
}

}  // namespace

BenchReport compare_mixers(const BenchConfig& cfg, const std::function<void(std::string_view)>& log) {
    cfg.validate();
    detail::keep_freed_memory();
    BenchReport report;
    report.config = cfg;
    Rng rng(cfg.seed);
    for (MixerKind kind : cfg.mixers) {
        SweepSeries series{kind, {}, {}, std::nullopt};
        std::vector<std::pair<double, double>> pts;
        for (std::size_t n : cfg.ns) {
            auto kernel = make_mixing_kernel(kind, n, cfg, rng);
            LatencyStats st = time_kernel(kernel, cfg.timing);
            log_line(log, std::string(to_string(kind)) + " N=" + std::to_string(n) +
                              " median_ms=" + format_double(st.median_ms));
            pts.emplace_back(static_cast<double>(n), st.median_ms);
            series.ns.push_back(n);
            series.stats.push_back(std::move(st));
        }
        if (pts.size() >= 4) series.slope = fit_loglog_slope(pts);
        report.sweep.push_back(std::move(series));
    }
    if (cfg.sublayer) {
        for (MixerKind kind : cfg.mixers) {
            report.sublayers.push_back(bench_sublayer(kind, cfg, rng));
            log_line(log, std::string(to_string(kind)) + " sub-layer forward median_ms=" +
                              format_double(report.sublayers.back().forward.median_ms));
        }
    }
    for (MixerKind kind : cfg.mixers) report.census.push_back(census_for(kind, cfg));
    return report;
}

std::string report_json(const BenchReport& r) {
    const BenchConfig& c = r.config;
    json doc;
    doc["schema"] = kSchema;
    json conf;
    for (const auto& [k, v] : [&] {
             Config cc;
             c.to_config(cc);
             return cc.entries();
         }())
        conf[k] = v;
    doc["config"] = conf;

    json sweep = json::array();
    for (const auto& s : r.sweep) {
        json pts = json::array();
        for (std::size_t i = 0; i < s.ns.size(); ++i) {
            json p = stats_json(s.stats[i]);
            p["n"] = s.ns[i];
            pts.push_back(p);
        }
        json e{{"mixer", std::string(to_string(s.mixer))}, {"points", pts}};
        if (s.mixer == MixerKind::ssa) e["order"] = std::string(to_string(c.ssa_order));
        e["slope"] = s.slope ? json(*s.slope) : json(nullptr);
        sweep.push_back(e);
    }
    doc["sweep"] = sweep;

    const SublayerResult* ssa = r.sublayer(MixerKind::ssa);
    json subs = json::array();
    for (const auto& s : r.sublayers) {
        json e{{"mixer", std::string(to_string(s.mixer))},
               {"forward", stats_json(s.forward)},
               {"forward_backward", s.forward_backward ? stats_json(*s.forward_backward) : json(nullptr)},
               {"mixer_params", s.mixer_params},
               {"norm_params", s.norm_params},
               {"param_bytes", s.param_bytes},
               {"activation_bytes", s.activation_bytes}};
        if (ssa) {
            e["forward_ratio_vs_ssa"] = s.forward.median_ms / ssa->forward.median_ms;
            e["train_ratio_vs_ssa"] = s.forward_backward && ssa->forward_backward
                                          ? json(s.forward_backward->median_ms / ssa->forward_backward->median_ms)
                                          : json(nullptr);
            e["mixer_param_delta_vs_ssa"] =
                static_cast<long long>(s.mixer_params) - static_cast<long long>(ssa->mixer_params);
        }
        subs.push_back(e);
    }
    doc["sublayer"] = json{{"n", c.sub_n},
                           {"dim", c.sub_dim},
                           {"timesteps", c.sub_timesteps},
                           {"batch", c.sub_batch},
                           {"results", subs}};

    const CensusRow* ssa_row = r.census_row(MixerKind::ssa);
    json census = json::array();
    for (const auto& row : r.census) {
        json e{{"mixer", std::string(to_string(row.mixer))},
               {"total", row.total},
               {"weights", row.weights},
               {"mixer_total", row.mixer_total},
               {"mixer_weights", row.mixer_weights}};
        if (ssa_row) {
            e["weight_delta_vs_ssa"] = static_cast<long long>(ssa_row->weights) - static_cast<long long>(row.weights);
            e["total_delta_vs_ssa"] = static_cast<long long>(ssa_row->total) - static_cast<long long>(row.total);
        }
        census.push_back(e);
    }
    doc["census"] = json{{"layers", c.census_layers}, {"dim", c.census_dim}, {"models", census}};
    doc["memory_method"] =
        "analytic: parameter bytes plus bytes of every value recorded on a training-mode forward tape (f64); "
        "not process RSS";
    return doc.dump(2);
}

namespace {

[[noreturn]] void schema_fail(const std::string& path, const std::string& what) {
    throw FormatError("bench report: " + path + " " + what);
}

const json& need(const json& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object() || !obj.contains(key)) schema_fail(path + "." + key, "is missing");
    return obj.at(key);
}

void need_stats(const json& s, const std::string& path) {
    for (const char* k : {"median_ms", "mean_ms", "stddev_ms", "min_ms", "max_ms"}) {
        const json& v = need(s, k, path);
        if (!v.is_number()) schema_fail(path + "." + k, "is not a number");
        if (std::string(k) != "stddev_ms" && !(v.get<double>() > 0.0)) schema_fail(path + "." + k, "is not positive");
        if (std::string(k) == "stddev_ms" && v.get<double>() < 0.0) schema_fail(path + "." + k, "is negative");
    }
    if (!need(s, "samples", path).is_number_unsigned()) schema_fail(path + ".samples", "is not a count");
}

}  // namespace

void validate_report_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("bench report: not JSON: ") + e.what());
    }
    if (need(doc, "schema", "$") != kSchema) schema_fail("$.schema", "is not " + std::string(kSchema));
    if (!need(doc, "config", "$").is_object()) schema_fail("$.config", "is not an object");
    const json& sweep = need(doc, "sweep", "$");
    if (!sweep.is_array()) schema_fail("$.sweep", "is not an array");
    for (std::size_t i = 0; i < sweep.size(); ++i) {
        const std::string p = "$.sweep[" + std::to_string(i) + "]";
        if (!need(sweep[i], "mixer", p).is_string()) schema_fail(p + ".mixer", "is not a string");
        const json& slope = need(sweep[i], "slope", p);
        if (!slope.is_null() && !slope.is_number()) schema_fail(p + ".slope", "is not a number or null");
        const json& pts = need(sweep[i], "points", p);
        if (!pts.is_array() || pts.empty()) schema_fail(p + ".points", "is not a non-empty array");
        for (std::size_t j = 0; j < pts.size(); ++j) {
            const std::string pp = p + ".points[" + std::to_string(j) + "]";
            if (!need(pts[j], "n", pp).is_number_unsigned()) schema_fail(pp + ".n", "is not a count");
            need_stats(pts[j], pp);
        }
    }
    const json& sub = need(doc, "sublayer", "$");
    const json& results = need(sub, "results", "$.sublayer");
    if (!results.is_array()) schema_fail("$.sublayer.results", "is not an array");
    for (std::size_t i = 0; i < results.size(); ++i) {
        const std::string p = "$.sublayer.results[" + std::to_string(i) + "]";
        need_stats(need(results[i], "forward", p), p + ".forward");
        const json& fb = need(results[i], "forward_backward", p);
        if (!fb.is_null()) need_stats(fb, p + ".forward_backward");
        for (const char* k : {"mixer_params", "norm_params", "param_bytes", "activation_bytes"})
            if (!need(results[i], k, p).is_number_unsigned()) schema_fail(p + "." + k, "is not a count");
    }
    const json& models = need(need(doc, "census", "$"), "models", "$.census");
    if (!models.is_array()) schema_fail("$.census.models", "is not an array");
    for (std::size_t i = 0; i < models.size(); ++i) {
        const std::string p = "$.census.models[" + std::to_string(i) + "]";
        for (const char* k : {"total", "weights", "mixer_total", "mixer_weights"})
            if (!need(models[i], k, p).is_number_unsigned()) schema_fail(p + "." + k, "is not a count");
    }
    if (!need(doc, "memory_method", "$").is_string()) schema_fail("$.memory_method", "is not a string");
}

void write_report(const BenchReport& report, const std::string& json_path, const std::string& csv_path) {
    const std::string text = report_json(report);
    validate_report_json(text);
    {
        std::ofstream out(json_path, std::ios::trunc);
        if (!out) throw IoError("cannot open '" + json_path + "' for writing");
        out << text << '\n';
        if (!out) throw IoError("write to '" + json_path + "' failed");
    }
    if (csv_path.empty()) return;
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot open '" + csv_path + "' for writing");
    csv << "section,mixer,n,sample,ms\n";
    for (const auto& s : report.sweep)
        for (std::size_t i = 0; i < s.ns.size(); ++i)
            for (std::size_t j = 0; j < s.stats[i].samples_ms.size(); ++j)
                csv << "sweep," << to_string(s.mixer) << ',' << s.ns[i] << ',' << j << ','
                    << format_double(s.stats[i].samples_ms[j]) << '\n';
    for (const auto& s : report.sublayers) {
        for (std::size_t j = 0; j < s.forward.samples_ms.size(); ++j)
            csv << "sublayer_forward," << to_string(s.mixer) << ',' << report.config.sub_n << ',' << j << ','
                << format_double(s.forward.samples_ms[j]) << '\n';
        if (s.forward_backward)
            for (std::size_t j = 0; j < s.forward_backward->samples_ms.size(); ++j)
                csv << "sublayer_forward_backward," << to_string(s.mixer) << ',' << report.config.sub_n << ',' << j
                    << ',' << format_double(s.forward_backward->samples_ms[j]) << '\n';
    }
    if (!csv) throw IoError("write to '" + csv_path + "' failed");
}

}  // namespace spikemix
