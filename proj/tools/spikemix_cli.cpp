// spikemix command-line front end; talks to the library only through the C API.
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spikemix/spikemix.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitVerify = 3;

struct RuntimeFailure {
    std::string message;
};

struct UsageFailure {
    std::string message;
};

void check(spk_status s, const std::string& what) {
    if (s != SPK_OK) throw RuntimeFailure{what + ": " + spk_status_name(s) + ": " + spk_last_error()};
}

struct ModelDeleter {
    void operator()(spk_model* m) const { spk_model_free(m); }
};
struct DatasetDeleter {
    void operator()(spk_dataset* d) const { spk_dataset_free(d); }
};
using ModelPtr = std::unique_ptr<spk_model, ModelDeleter>;
using DatasetPtr = std::unique_ptr<spk_dataset, DatasetDeleter>;

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageFailure{"cannot read config file '" + path + "'"};
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Config file text followed by flag overrides; later lines win.
struct RunSettings {
    std::string config_file;
    std::vector<std::pair<std::string, std::string>> overrides;
    std::vector<std::string> sets;

    void put(const std::string& key, const std::string& value) { overrides.emplace_back(key, value); }

    std::string text(std::size_t threads) const {
        std::string t = config_file.empty() ? "" : read_file(config_file);
        if (!t.empty() && t.back() != '\n') t += '\n';
        for (const auto& s : sets) {
            if (s.find('=') == std::string::npos) throw UsageFailure{"--set expects key=value, got '" + s + "'"};
            t += s + "\n";
        }
        for (const auto& [k, v] : overrides) t += k + "=" + v + "\n";
        t += "threads=" + std::to_string(threads) + "\n";
        t += std::string("spikemix_version=") + spk_version() + "\n";
        return t;
    }
};

std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

std::string resolve(const RunSettings& s, std::size_t threads) {
    char* out = nullptr;
    const spk_status st = spk_config_resolve(s.text(threads).c_str(), &out);
    if (st != SPK_OK) throw UsageFailure{std::string("invalid configuration: ") + spk_last_error()};
    std::string text(out);
    spk_string_free(out);
    return text;
}

std::size_t threads_from_env() {
    const char* env = std::getenv("SPIKEMIX_THREADS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (*end != '\0' || v == 0) throw UsageFailure{"SPIKEMIX_THREADS must be a positive integer"};
    return v;
}

fs::path prepare_out(const std::map<std::string, std::string>& cfg, const std::string& resolved) {
    const fs::path out = cfg.count("out") ? fs::path(cfg.at("out")) : fs::path(".");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw RuntimeFailure{"cannot create output directory '" + out.string() + "': " + ec.message()};
    std::ofstream manifest(out / "manifest.txt");
    if (!manifest) throw RuntimeFailure{"cannot write manifest in '" + out.string() + "'"};
    manifest << resolved;
    return out;
}

std::size_t to_size(const std::map<std::string, std::string>& cfg, const std::string& key) {
    return std::stoull(cfg.at(key));
}

DatasetPtr generate(const std::map<std::string, std::string>& cfg, std::size_t n, std::uint64_t seed) {
    spk_dataset* ds = nullptr;
    check(spk_dataset_generate(cfg.at("task").c_str(), n, to_size(cfg, "channels"), to_size(cfg, "height"),
                               to_size(cfg, "width"), to_size(cfg, "timesteps"), seed, &ds),
          "generate dataset");
    return DatasetPtr(ds);
}

// The test split uses a seed offset so that it never repeats the train draw.
constexpr std::uint64_t kTestSeedOffset = 7919;

DatasetPtr load_or_generate(const std::map<std::string, std::string>& cfg, const char* path_key,
                            const char* count_key, std::uint64_t seed) {
    auto it = cfg.find(path_key);
    if (it != cfg.end() && !it->second.empty()) {
        spk_dataset* ds = nullptr;
        check(spk_dataset_load(it->second.c_str(), &ds), "load '" + it->second + "'");
        return DatasetPtr(ds);
    }
    return generate(cfg, to_size(cfg, count_key), seed);
}

int cmd_gen_data(const std::map<std::string, std::string>& cfg, const std::string& resolved) {
    const fs::path out = prepare_out(cfg, resolved);
    const std::uint64_t seed = std::stoull(cfg.at("seed"));
    DatasetPtr train = generate(cfg, to_size(cfg, "train_samples"), seed);
    DatasetPtr test = generate(cfg, to_size(cfg, "test_samples"), seed + kTestSeedOffset);
    check(spk_dataset_save(train.get(), (out / "train.spkd").c_str()), "save train set");
    check(spk_dataset_save(test.get(), (out / "test.spkd").c_str()), "save test set");
    std::cout << "wrote " << (out / "train.spkd").string() << " (" << spk_dataset_size(train.get()) << " samples), "
              << (out / "test.spkd").string() << " (" << spk_dataset_size(test.get()) << " samples)\n";
    return 0;
}

void print_epoch(const spk_epoch_info* info, void*) {
    std::printf("epoch %3u  loss %.6f  train_acc %.4f", info->epoch, info->loss, info->train_acc);
    if (!std::isnan(info->eval_acc)) std::printf("  eval_acc %.4f", info->eval_acc);
    std::printf("  lr %.3g  %.1f ms/batch\n", info->lr, info->ms_per_batch);
    std::fflush(stdout);
}

int cmd_train(const std::map<std::string, std::string>& cfg, const std::string& resolved) {
    const fs::path out = prepare_out(cfg, resolved);
    const std::uint64_t seed = std::stoull(cfg.at("seed"));
    DatasetPtr train = load_or_generate(cfg, "train_data", "train_samples", seed);
    DatasetPtr test = load_or_generate(cfg, "test_data", "test_samples", seed + kTestSeedOffset);
    spk_model* raw = nullptr;
    check(spk_model_create(resolved.c_str(), &raw), "create model");
    ModelPtr model(raw);
    std::size_t total = 0, weights = 0;
    check(spk_model_param_count(model.get(), &total, &weights), "count parameters");
    std::cout << "model: " << cfg.at("mixer") << ", " << total << " parameters (" << weights << " weights)\n";
    double acc = 0.0;
    check(spk_train(model.get(), train.get(), test.get(), resolved.c_str(), (out / "metrics.jsonl").c_str(),
                    print_epoch, nullptr, &acc),
          "train");
    check(spk_model_save(model.get(), (out / "model.spkm").c_str()), "save checkpoint");
    std::printf("top1=%.4f\n", acc);
    return 0;
}

int cmd_eval(const std::map<std::string, std::string>& cfg, const std::string& resolved) {
    prepare_out(cfg, resolved);
    auto ck = cfg.find("checkpoint");
    if (ck == cfg.end() || ck->second.empty()) throw UsageFailure{"eval needs --checkpoint"};
    spk_model* raw = nullptr;
    check(spk_model_load(ck->second.c_str(), &raw), "load checkpoint");
    ModelPtr model(raw);
    // Generated data must match the checkpoint's geometry, not the defaults.
    char* mc = nullptr;
    check(spk_model_config(model.get(), &mc), "read model config");
    auto merged = cfg;
    for (const auto& [k, v] : parse_kv(mc)) merged[k] = v;
    spk_string_free(mc);
    DatasetPtr data =
        load_or_generate(merged, "test_data", "test_samples", std::stoull(cfg.at("seed")) + kTestSeedOffset);
    double acc = 0.0;
    check(spk_evaluate(model.get(), data.get(), to_size(cfg, "batch"), &acc), "evaluate");
    std::printf("top1=%.4f\n", acc);
    return 0;
}

void print_line(const char* line, void*) {
    std::printf("%s\n", line);
    std::fflush(stdout);
}

int cmd_bench(const std::map<std::string, std::string>& cfg, const std::string& resolved, bool csv) {
    const fs::path out = prepare_out(cfg, resolved);
    const fs::path report = out / "bench.json";
    const fs::path samples = out / "bench_samples.csv";
    check(spk_bench_run(resolved.c_str(), report.c_str(), csv ? samples.c_str() : nullptr, print_line, nullptr),
          "bench");
    std::cout << "wrote " << report.string() << (csv ? " and " + samples.string() : std::string()) << "\n";
    return 0;
}

struct VerifyTally {
    std::map<std::string, std::pair<std::size_t, std::size_t>> suites;
    std::vector<std::string> order;
};

void on_check(const char* suite, const char* name, int passed, const char* detail, void* user) {
    auto& t = *static_cast<VerifyTally*>(user);
    if (!t.suites.count(suite)) t.order.emplace_back(suite);
    auto& [ok, bad] = t.suites[suite];
    (passed ? ok : bad)++;
    if (!passed) std::printf("FAIL [%s] %s: %s\n", suite, name, detail);
    std::fflush(stdout);
}

int cmd_verify(const std::string& suites) {
    VerifyTally tally;
    std::size_t passed = 0, failed = 0;
    check(spk_verify_run(suites.empty() ? nullptr : suites.c_str(), on_check, &tally, &passed, &failed), "verify");
    for (const auto& s : tally.order) {
        const auto& [ok, bad] = tally.suites[s];
        std::printf("%-10s %zu passed, %zu failed\n", s.c_str(), ok, bad);
    }
    std::printf("total      %zu passed, %zu failed\n", passed, failed);
    return failed ? kExitVerify : 0;
}

template <typename T>
void flag(CLI::App* app, RunSettings& s, const std::string& name, const std::string& key, const std::string& help) {
    app->add_option_function<T>(
        name,
        [&s, key](const T& v) {
            std::ostringstream os;
            os << v;
            s.put(key, os.str());
        },
        help);
}

void common_flags(CLI::App* app, RunSettings& s) {
    app->add_option("--config", s.config_file, "key=value settings file; flags override it")->check(CLI::ExistingFile);
    app->add_option("--set", s.sets, "extra key=value setting (repeatable)");
    flag<std::string>(app, s, "--out", "out", "output directory (default .)");
    flag<std::uint64_t>(app, s, "--seed", "seed", "seed for data, initialization and shuffling (default 1)");
}

void model_flags(CLI::App* app, RunSettings& s) {
    flag<std::string>(app, s, "--mixer", "mixer", "ssa|fft1d|fft2d|wt1d|wt2d|wt2d-combination (default ssa)");
    flag<std::string>(app, s, "--wavelet", "wavelet", "haar|db1|bior1.1|rbio1.1 (default haar)");
    flag<std::string>(app, s, "--ssa-order", "ssa_order", "qk-first|kv-first (default qk-first)");
    flag<std::size_t>(app, s, "--layers", "layers", "encoder layers L (default 2)");
    flag<std::size_t>(app, s, "--dim", "dim", "feature dimension D (default 64)");
    flag<std::size_t>(app, s, "--timesteps", "timesteps", "time steps T (default 4)");
    flag<std::size_t>(app, s, "--patch", "patch", "patch size, a power of 2 (default 4)");
}

void data_flags(CLI::App* app, RunSettings& s) {
    flag<std::string>(app, s, "--task", "task", "bars|checker|moving_dot (default bars)");
    flag<std::size_t>(app, s, "--train-samples", "train_samples", "generated train samples (default 400)");
    flag<std::size_t>(app, s, "--test-samples", "test_samples", "generated test samples (default 200)");
    flag<std::size_t>(app, s, "--height", "height", "image height (default 16)");
    flag<std::size_t>(app, s, "--width", "width", "image width (default 16)");
    flag<std::size_t>(app, s, "--channels", "channels", "image channels (default 1)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spikemix: spiking transformer with swappable token mixers"};
    app.require_subcommand(1);
    app.set_version_flag("--version", spk_version());

    RunSettings settings;
    auto* gen = app.add_subcommand("gen-data", "write synthetic SPKD train/test files");
    common_flags(gen, settings);
    data_flags(gen, settings);
    flag<std::size_t>(gen, settings, "--timesteps", "timesteps", "frames per moving_dot sample (default 4)");

    auto* train = app.add_subcommand("train", "train a model; writes metrics.jsonl and model.spkm");
    common_flags(train, settings);
    model_flags(train, settings);
    data_flags(train, settings);
    flag<std::size_t>(train, settings, "--epochs", "epochs", "maximum epochs (default 50)");
    flag<std::size_t>(train, settings, "--batch", "batch", "batch size (default 16)");
    flag<double>(train, settings, "--lr", "lr", "peak learning rate (default 5e-4)");
    flag<double>(train, settings, "--wd", "wd", "decoupled weight decay (default 0.01)");
    flag<double>(train, settings, "--target-acc", "target_acc", "stop once test accuracy reaches this (0 = off)");
    flag<std::string>(train, settings, "--train-data", "train_data", "SPKD train file instead of generated data");
    flag<std::string>(train, settings, "--test-data", "test_data", "SPKD test file instead of generated data");

    auto* eval = app.add_subcommand("eval", "print Top-1 accuracy of a checkpoint");
    common_flags(eval, settings);
    data_flags(eval, settings);
    flag<std::string>(eval, settings, "--checkpoint", "checkpoint", "SPKM checkpoint to evaluate");
    flag<std::string>(eval, settings, "--data", "test_data", "SPKD file (default: generated test split)");
    flag<std::size_t>(eval, settings, "--batch", "batch", "batch size (default 16)");

    auto* bench = app.add_subcommand("bench", "time mixers; writes bench.json");
    common_flags(bench, settings);
    flag<std::string>(bench, settings, "--mixers", "mixers", "comma-separated mixer list (default ssa,fft1d)");
    flag<std::string>(bench, settings, "--n", "n", "comma-separated sweep of N (default 256,...,4096)");
    flag<std::size_t>(bench, settings, "--dim", "bench_dim", "feature dimension of the sweep (default 256)");
    flag<std::string>(bench, settings, "--ssa-order", "ssa_order", "qk-first|kv-first (default qk-first)");
    flag<std::string>(bench, settings, "--wavelet", "wavelet", "wavelet family of wt mixers (default haar)");
    flag<std::size_t>(bench, settings, "--iters", "iters", "measured iterations, at least 20");
    flag<std::size_t>(bench, settings, "--warmup", "warmup", "warmup iterations, at least 3");
    bool csv = false;
    bench->add_flag("--csv", csv, "also write raw samples to bench_samples.csv");

    auto* verify = app.add_subcommand("verify", "run the oracle and invariant suites");
    std::string suites;
    verify->add_option("--suites", suites, "comma-separated subset of dft,wavelet,ssa,gradient,census");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (verify->parsed()) return cmd_verify(suites);
        const std::size_t threads = threads_from_env();
        const std::string resolved = resolve(settings, threads);
        const auto cfg = parse_kv(resolved);
        if (gen->parsed()) return cmd_gen_data(cfg, resolved);
        if (train->parsed()) return cmd_train(cfg, resolved);
        if (eval->parsed()) return cmd_eval(cfg, resolved);
        if (bench->parsed()) return cmd_bench(cfg, resolved, csv);
    } catch (const UsageFailure& e) {
        std::cerr << "usage error: " << e.message << "\n";
        return kExitUsage;
    } catch (const RuntimeFailure& e) {
        std::cerr << "error: " << e.message << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
