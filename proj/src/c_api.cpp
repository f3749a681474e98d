#include "spikemix/spikemix.h"

#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <string>

#include "spikemix/bench.hpp"
#include "spikemix/config.hpp"
#include "spikemix/data.hpp"
#include "spikemix/error.hpp"
#include "spikemix/model.hpp"
#include "spikemix/train.hpp"
#include "spikemix/verify.hpp"

struct spk_model {
    std::unique_ptr<spikemix::Spikformer> impl;
};

struct spk_dataset {
    spikemix::Dataset impl;
};

namespace {

thread_local std::string g_last_error;

// Settings owned by the command-line front end; accepted so that manifests
// round-trip through spk_config_resolve.
const std::vector<std::string_view> kRunKeys{"task",      "train_samples", "test_samples", "train_data",
                                             "test_data", "checkpoint",    "out",          "threads",
                                             "spikemix_version"};

std::vector<std::string_view> known_keys() {
    std::vector<std::string_view> keys = spikemix::model_config_keys();
    for (auto k : spikemix::train_config_keys()) keys.push_back(k);
    for (auto k : spikemix::bench_config_keys()) keys.push_back(k);
    for (auto k : kRunKeys) keys.push_back(k);
    return keys;
}

spk_status fail(spk_status s, const std::string& msg) {
    g_last_error = msg;
    return s;
}

template <typename F>
spk_status guard(F&& body) {
    try {
        g_last_error.clear();
        body();
        return SPK_OK;
    } catch (const spikemix::BadMagicError& e) {
        return fail(SPK_ERR_BAD_MAGIC, e.what());
    } catch (const spikemix::TruncatedError& e) {
        return fail(SPK_ERR_TRUNCATED, e.what());
    } catch (const spikemix::LabelOverflowError& e) {
        return fail(SPK_ERR_LABEL_OVERFLOW, e.what());
    } catch (const spikemix::FormatError& e) {
        return fail(SPK_ERR_FORMAT, e.what());
    } catch (const spikemix::ShapeError& e) {
        return fail(SPK_ERR_SHAPE, e.what());
    } catch (const spikemix::LengthError& e) {
        return fail(SPK_ERR_LENGTH, e.what());
    } catch (const spikemix::InvalidArgument& e) {
        return fail(SPK_ERR_INVALID_ARGUMENT, e.what());
    } catch (const spikemix::IoError& e) {
        return fail(SPK_ERR_IO, e.what());
    } catch (const spikemix::TapeError& e) {
        return fail(SPK_ERR_TAPE, e.what());
    } catch (const std::exception& e) {
        return fail(SPK_ERR_INTERNAL, e.what());
    } catch (...) {
        return fail(SPK_ERR_INTERNAL, "unknown exception");
    }
}

void require(const void* p, const char* what) {
    if (!p) throw spikemix::InvalidArgument(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

spikemix::Config parse_checked(const char* text) {
    spikemix::Config c = spikemix::Config::parse(text ? text : "");
    c.require_known(known_keys());
    return c;
}

}  // namespace

extern "C" {

const char* spk_version(void) { return "0.1.0"; }

const char* spk_last_error(void) { return g_last_error.c_str(); }

const char* spk_status_name(spk_status s) {
    switch (s) {
        case SPK_OK: return "ok";
        case SPK_ERR_INVALID_ARGUMENT: return "invalid argument";
        case SPK_ERR_SHAPE: return "shape error";
        case SPK_ERR_LENGTH: return "length error";
        case SPK_ERR_FORMAT: return "format error";
        case SPK_ERR_BAD_MAGIC: return "bad magic";
        case SPK_ERR_TRUNCATED: return "truncated";
        case SPK_ERR_LABEL_OVERFLOW: return "label overflow";
        case SPK_ERR_IO: return "i/o error";
        case SPK_ERR_TAPE: return "tape error";
        case SPK_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

spk_status spk_config_resolve(const char* config_text, char** out) {
    return guard([&] {
        require(out, "out");
        const spikemix::Config in = parse_checked(config_text);
        const auto model = spikemix::ModelConfig::from_config(in);
        model.validate();
        const auto train = spikemix::TrainConfig::from_config(in);
        train.validate();
        const auto bench = spikemix::BenchConfig::from_config(in);
        bench.validate();
        spikemix::Config r;
        r.set("task", "bars");
        r.set("train_samples", "400");
        r.set("test_samples", "200");
        r.merge(in);
        model.to_config(r);
        train.to_config(r);
        bench.to_config(r);
        *out = dup_string(r.to_text());
    });
}

void spk_string_free(char* s) { delete[] s; }

spk_status spk_dataset_generate(const char* task, size_t n, size_t channels, size_t height, size_t width,
                                size_t timesteps, uint64_t seed, spk_dataset** out) {
    return guard([&] {
        require(task, "task");
        require(out, "out");
        const spikemix::SynthDims dims{channels, height, width, timesteps};
        auto ds = std::make_unique<spk_dataset>();
        ds->impl = spikemix::synth_generate(spikemix::parse_task(task), n, dims, seed);
        *out = ds.release();
    });
}

spk_status spk_dataset_load(const char* path, spk_dataset** out) {
    return guard([&] {
        require(path, "path");
        require(out, "out");
        auto ds = std::make_unique<spk_dataset>();
        ds->impl = spikemix::load_dataset(path);
        *out = ds.release();
    });
}

spk_status spk_dataset_save(const spk_dataset* ds, const char* path) {
    return guard([&] {
        require(ds, "dataset");
        require(path, "path");
        spikemix::save_dataset(ds->impl, path);
    });
}

size_t spk_dataset_size(const spk_dataset* ds) { return ds ? ds->impl.size() : 0; }

void spk_dataset_free(spk_dataset* ds) { delete ds; }

spk_status spk_model_create(const char* config_text, spk_model** out) {
    return guard([&] {
        require(out, "out");
        const spikemix::Config c = parse_checked(config_text);
        auto m = std::make_unique<spk_model>();
        m->impl = std::make_unique<spikemix::Spikformer>(spikemix::ModelConfig::from_config(c), c.get_u64("seed", 1));
        *out = m.release();
    });
}

spk_status spk_model_load(const char* path, spk_model** out) {
    return guard([&] {
        require(path, "path");
        require(out, "out");
        auto m = std::make_unique<spk_model>();
        m->impl = spikemix::Spikformer::load(path);
        *out = m.release();
    });
}

spk_status spk_model_save(spk_model* model, const char* path) {
    return guard([&] {
        require(model, "model");
        require(path, "path");
        model->impl->save(path);
    });
}

spk_status spk_model_param_count(spk_model* model, size_t* total, size_t* weights) {
    return guard([&] {
        require(model, "model");
        const spikemix::ParamCensus c = model->impl->param_count();
        if (total) *total = c.total();
        if (weights) *weights = c.weights();
    });
}

spk_status spk_model_config(const spk_model* model, char** out) {
    return guard([&] {
        require(model, "model");
        require(out, "out");
        spikemix::Config c;
        model->impl->config().to_config(c);
        *out = dup_string(c.to_text());
    });
}

void spk_model_free(spk_model* model) { delete model; }

spk_status spk_train(spk_model* model, const spk_dataset* train, const spk_dataset* test, const char* config_text,
                     const char* metrics_path, spk_epoch_callback callback, void* user, double* final_acc) {
    return guard([&] {
        require(model, "model");
        require(train, "train dataset");
        require(test, "test dataset");
        const auto cfg = spikemix::TrainConfig::from_config(parse_checked(config_text));
        std::function<void(const spikemix::EpochMetrics&)> on_epoch;
        if (callback) {
            on_epoch = [&](const spikemix::EpochMetrics& m) {
                spk_epoch_info info{static_cast<uint32_t>(m.epoch),
                                    m.loss,
                                    m.train_acc,
                                    m.eval_acc ? *m.eval_acc : std::numeric_limits<double>::quiet_NaN(),
                                    m.lr,
                                    m.ms_per_batch};
                callback(&info, user);
            };
        }
        const auto result = spikemix::fit(*model->impl, train->impl, test->impl, cfg,
                                          metrics_path ? metrics_path : "", on_epoch);
        if (final_acc) *final_acc = result.final_eval_acc;
    });
}

spk_status spk_evaluate(spk_model* model, const spk_dataset* data, size_t batch, double* top1) {
    return guard([&] {
        require(model, "model");
        require(data, "dataset");
        require(top1, "top1");
        *top1 = spikemix::evaluate_top1(*model->impl, data->impl, batch ? batch : 32);
    });
}

spk_status spk_bench_run(const char* config_text, const char* report_path, const char* csv_path,
                         spk_log_callback log, void* user) {
    return guard([&] {
        require(report_path, "report path");
        const auto cfg = spikemix::BenchConfig::from_config(parse_checked(config_text));
        std::function<void(std::string_view)> sink;
        if (log) sink = [&](std::string_view line) { log(std::string(line).c_str(), user); };
        const auto report = spikemix::compare_mixers(cfg, sink);
        spikemix::write_report(report, report_path, csv_path ? csv_path : "");
    });
}

spk_status spk_verify_run(const char* suites, spk_check_callback callback, void* user, size_t* passed,
                          size_t* failed) {
    return guard([&] {
        const auto names = spikemix::split_list(suites ? suites : "");
        std::function<void(const spikemix::CheckResult&)> sink;
        if (callback) {
            sink = [&](const spikemix::CheckResult& r) {
                callback(r.suite.c_str(), r.name.c_str(), r.passed ? 1 : 0, r.detail.c_str(), user);
            };
        }
        const auto report = spikemix::run_verify(names, sink);
        if (passed) *passed = report.passed();
        if (failed) *failed = report.failed();
    });
}

}  // extern "C"
