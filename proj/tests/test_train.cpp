#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "spikemix/error.hpp"
#include "spikemix/train.hpp"

using namespace spikemix;

namespace {

ModelConfig tiny(MixerKind kind = MixerKind::ssa) {
    ModelConfig c;
    c.layers = 1;
    c.dim = 32;
    c.timesteps = 2;
    c.mixer.kind = kind;
    return c;
}

TrainConfig quick(std::size_t epochs) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch = 16;
    t.lr = 2e-3;
    t.seed = 3;
    return t;
}

}  // namespace

TEST_CASE("cross-entropy oracles") {
    const std::vector<std::uint16_t> one{3};
    CHECK(cross_entropy(Tensor(Shape{1, 10}, 0.25), one) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    Tensor margin(Shape{1, 4});
    margin[3] = 100.0;
    CHECK(cross_entropy(margin, one) < 1e-8);
    const std::vector<std::uint16_t> bad{4};
    CHECK_THROWS_AS(cross_entropy(Tensor(Shape{1, 4}), bad), InvalidArgument);

    Rng rng(1);
    Parameter logits("logits", rng.normal_tensor(Shape{5, 3}, 0.0, 2.0));
    const std::vector<std::uint16_t> labels{0, 2, 1, 1, 0};
    std::vector<Parameter*> ps{&logits};
    CHECK(finite_difference_check([&](Tape& t) { return ad::cross_entropy(t.param(logits), labels); }, ps) < 1e-6);
    Tape t;
    CHECK(ad::cross_entropy(t.constant(logits.value), labels).value().item() == cross_entropy(logits.value, labels));
}

TEST_CASE("AdamW update rules") {
    SUBCASE("first step moves by lr against the gradient sign") {
        Parameter p("p", Tensor(Shape{4}, {1.0, -2.0, 0.5, 3.0}));
        p.grad = Tensor(Shape{4}, {0.3, -7.0, 1e-3, -0.01});
        AdamW opt({&p}, {.weight_decay = 0.0});
        opt.step(0.01);
        const Tensor want(Shape{4}, {0.99, -1.99, 0.49, 3.01});
        CHECK(max_abs_diff(p.value, want) < 1e-6);
        CHECK(opt.steps() == 1);
    }
    SUBCASE("zero gradient gives pure decoupled shrinkage") {
        Parameter p("p", Tensor(Shape{3}, {1.0, -2.0, 4.0}));
        p.grad = Tensor(Shape{3});
        AdamW opt({&p}, {.weight_decay = 0.1});
        opt.step(0.05);
        for (std::size_t i = 0; i < 3; ++i) CHECK(p.value[i] == doctest::Approx((i == 0 ? 1.0 : i == 1 ? -2.0 : 4.0) * (1 - 0.05 * 0.1)));
    }
    SUBCASE("scaling the loss leaves the adaptive step unchanged") {
        Parameter a("a", Tensor::scalar(0.7)), b("b", Tensor::scalar(0.7));
        AdamW oa({&a}, {.weight_decay = 0.0}), ob({&b}, {.weight_decay = 0.0});
        for (int s = 0; s < 5; ++s) {
            const double g = std::sin(1.0 + s) * 0.3;
            a.grad = Tensor::scalar(g);
            b.grad = Tensor::scalar(250.0 * g);
            oa.step(0.01);
            ob.step(0.01);
        }
        CHECK(a.value.item() == doctest::Approx(b.value.item()).epsilon(1e-6));
    }
    SUBCASE("zero_grad clears every accumulator") {
        Parameter p("p", Tensor(Shape{2}, 1.0));
        p.grad = Tensor(Shape{2}, 5.0);
        AdamW opt({&p});
        opt.zero_grad();
        CHECK(sum(p.grad) == 0.0);
    }
}

TEST_CASE("identical runs give identical parameters after 10 steps") {
    auto run = [] {
        Spikformer m(tiny(), 4);
        const Dataset ds = synth_generate(SynthTask::bars, 48, {}, 2);
        AdamW opt(m.parameters());
        std::size_t step = 0;
        TrainConfig cfg = quick(1);
        for (int e = 0; e < 4 && step < 10; ++e) train_epoch(m, ds, cfg, opt, e + 1, step, 10);
        std::vector<Tensor> values;
        for (Parameter* p : m.parameters()) values.push_back(p->value);
        return values;
    };
    const auto a = run(), b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(0, 100, 5e-4) == 5e-4);
    CHECK(cosine_lr(100, 100, 5e-4, 1e-5) == doctest::Approx(1e-5));
    CHECK(cosine_lr(50, 100, 4e-4, 2e-4) == doctest::Approx(3e-4));
}

TEST_CASE("metrics JSON line") {
    EpochMetrics m;
    m.epoch = 3;
    m.loss = 0.25;
    m.train_acc = 0.5;
    m.lr = 1e-4;
    m.ms_per_batch = 12.5;
    const std::string line = metrics_json_line(m);
    CHECK(line.find('\n') == std::string::npos);
    const auto j = nlohmann::json::parse(line);
    CHECK(j["epoch"] == 3);
    CHECK(j["eval_acc"].is_null());
    CHECK(j["ms_per_batch"] == 12.5);
    std::vector<std::string> keys;
    const auto ordered = nlohmann::ordered_json::parse(line);
    for (auto it = ordered.begin(); it != ordered.end(); ++it) keys.push_back(it.key());
    CHECK(keys == std::vector<std::string>{"epoch", "loss", "train_acc", "eval_acc", "lr", "ms_per_batch"});
    m.eval_acc = 0.75;
    CHECK(nlohmann::json::parse(metrics_json_line(m))["eval_acc"] == 0.75);
}

TEST_CASE("evaluation: chance level untrained, perfect after memorizing") {
    const Dataset test = synth_generate(SynthTask::bars, 200, {}, 9);
    Spikformer fresh(tiny(), 1);
    const double chance = evaluate_top1(fresh, test);
    CHECK(chance >= 0.4);
    CHECK(chance <= 0.6);

    const Dataset small = synth_generate(SynthTask::bars, 32, {}, 5);
    Spikformer m(tiny(), 2);
    TrainConfig cfg = quick(20);
    cfg.batch = 8;
    cfg.lr = 5e-3;
    const FitResult r = fit(m, small, small, cfg);
    CHECK(r.final_eval_acc == 1.0);
    CHECK(evaluate_top1(m, small, 7) == 1.0);
}

TEST_CASE("loss falls over the first epochs for every mixer kind") {
    const Dataset train = synth_generate(SynthTask::bars, 96, {}, 1);
    const Dataset test = synth_generate(SynthTask::bars, 32, {}, 2);
    for (MixerKind kind : all_mixer_kinds()) {
        Spikformer m(tiny(kind), 1);
        TrainConfig cfg = quick(5);
        cfg.eval_every = 5;
        const FitResult r = fit(m, train, test, cfg);
        REQUIRE(r.history.size() == 5);
        CAPTURE(to_string(kind));
        CHECK(r.history[4].loss < r.history[0].loss);
        for (std::size_t e = 1; e + 1 < 5; ++e)
            CHECK(r.history[e + 1].loss + r.history[e].loss < r.history[e].loss + r.history[e - 1].loss);
        CHECK(!r.history[0].eval_acc.has_value());
        CHECK(r.history[4].eval_acc.has_value());
    }
}

TEST_CASE("fit writes metrics, is deterministic and stops early") {
    const Dataset train = synth_generate(SynthTask::bars, 64, {}, 1);
    const Dataset test = synth_generate(SynthTask::bars, 32, {}, 2);
    const std::string p1 = (std::filesystem::temp_directory_path() / "spikemix_test_m1.jsonl").string();
    const std::string p2 = (std::filesystem::temp_directory_path() / "spikemix_test_m2.jsonl").string();
    TrainConfig cfg = quick(12);
    cfg.target_acc = 0.9;
    cfg.min_epochs = 3;
    Spikformer a(tiny(MixerKind::fft1d), 8), b(tiny(MixerKind::fft1d), 8);
    std::size_t callbacks = 0;
    const FitResult ra = fit(a, train, test, cfg, p1, [&](const EpochMetrics&) { ++callbacks; });
    const FitResult rb = fit(b, train, test, cfg, p2);
    CHECK(callbacks == ra.history.size());
    CHECK(ra.reached_target);
    CHECK(ra.history.size() >= 3);
    CHECK(ra.history.size() < 12);
    REQUIRE(ra.history.size() == rb.history.size());
    for (std::size_t i = 0; i < ra.history.size(); ++i) {
        CHECK(ra.history[i].loss == rb.history[i].loss);
        CHECK(ra.history[i].train_acc == rb.history[i].train_acc);
        CHECK(ra.history[i].eval_acc == rb.history[i].eval_acc);
        CHECK(ra.history[i].lr == rb.history[i].lr);
    }
    std::ifstream in(p1);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j["epoch"] == lines + 1);
        ++lines;
    }
    CHECK(lines == ra.history.size());
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("LT models hand the optimizer no mixer weights") {
    Spikformer m(tiny(MixerKind::wt2d), 1);
    for (Parameter* p : m.parameters())
        if (p->name.find(".mixer.") != std::string::npos)
            CHECK((p->name.ends_with(".gamma") || p->name.ends_with(".beta")));
}

TEST_CASE("train config keys and validation") {
    Config c = Config::parse("epochs=7\nlr=0.001\ntarget_acc=0.9\n");
    const TrainConfig t = TrainConfig::from_config(c);
    CHECK(t.epochs == 7);
    CHECK(t.lr == 0.001);
    CHECK(t.target_acc == 0.9);
    TrainConfig bad;
    bad.batch = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}
