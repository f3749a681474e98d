#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "spikemix/spikemix.h"

TEST_CASE("version and status names") {
    CHECK(std::strlen(spk_version()) > 0);
    CHECK(std::string(spk_status_name(SPK_OK)) == "ok");
    CHECK(std::string(spk_status_name(SPK_ERR_BAD_MAGIC)) == "bad magic");
}

TEST_CASE("config resolution") {
    char* out = nullptr;
    REQUIRE(spk_config_resolve("mixer=fft1d\ndim=32\n", &out) == SPK_OK);
    const std::string text(out);
    spk_string_free(out);
    CHECK(text.find("mixer=fft1d\n") != std::string::npos);
    CHECK(text.find("dim=32\n") != std::string::npos);
    CHECK(text.find("epochs=50\n") != std::string::npos);
    CHECK(text.find("task=bars\n") != std::string::npos);

    CHECK(spk_config_resolve("colour=blue\n", &out) == SPK_ERR_INVALID_ARGUMENT);
    CHECK(std::string(spk_last_error()).find("colour") != std::string::npos);
    CHECK(spk_config_resolve("mixer=fft1d\nheight=24\nwidth=24\n", &out) == SPK_ERR_LENGTH);
    CHECK(spk_config_resolve("x=1", nullptr) == SPK_ERR_INVALID_ARGUMENT);
}

TEST_CASE("datasets through the C surface") {
    spk_dataset* ds = nullptr;
    REQUIRE(spk_dataset_generate("bars", 40, 1, 16, 16, 4, 3, &ds) == SPK_OK);
    CHECK(spk_dataset_size(ds) == 40);
    REQUIRE(spk_dataset_save(ds, "capi.spkd") == SPK_OK);
    spk_dataset* back = nullptr;
    REQUIRE(spk_dataset_load("capi.spkd", &back) == SPK_OK);
    CHECK(spk_dataset_size(back) == 40);
    spk_dataset_free(back);
    spk_dataset_free(ds);

    {
        std::ofstream f("capi_bad.spkd", std::ios::binary);
        f << "XXXXjunk";
    }
    CHECK(spk_dataset_load("capi_bad.spkd", &back) == SPK_ERR_BAD_MAGIC);
    CHECK(spk_dataset_load("no_such_file.spkd", &back) == SPK_ERR_IO);
    CHECK(spk_dataset_generate("mnist", 4, 1, 16, 16, 4, 3, &ds) == SPK_ERR_INVALID_ARGUMENT);
    std::remove("capi.spkd");
    std::remove("capi_bad.spkd");
}

namespace {

void count_epochs(const spk_epoch_info* info, void* user) {
    auto* seen = static_cast<std::vector<spk_epoch_info>*>(user);
    seen->push_back(*info);
}

void count_checks(const char*, const char*, int passed, const char*, void* user) {
    auto* tally = static_cast<int*>(user);
    tally[passed ? 0 : 1]++;
}

}  // namespace

TEST_CASE("model lifecycle, training and evaluation") {
    const char* cfg = "layers=1\ndim=32\ntimesteps=2\nmixer=wt2d\nepochs=2\nbatch=16\nlr=0.002\nseed=4\n";
    spk_model* m = nullptr;
    REQUIRE(spk_model_create(cfg, &m) == SPK_OK);
    std::size_t total = 0, weights = 0;
    REQUIRE(spk_model_param_count(m, &total, &weights) == SPK_OK);
    CHECK(total > weights);

    spk_dataset *train = nullptr, *test = nullptr;
    REQUIRE(spk_dataset_generate("bars", 48, 1, 16, 16, 2, 1, &train) == SPK_OK);
    REQUIRE(spk_dataset_generate("bars", 32, 1, 16, 16, 2, 2, &test) == SPK_OK);
    std::vector<spk_epoch_info> seen;
    double acc = -1.0;
    REQUIRE(spk_train(m, train, test, cfg, "capi_metrics.jsonl", count_epochs, &seen, &acc) == SPK_OK);
    CHECK(seen.size() == 2);
    CHECK(seen[1].epoch == 2);
    CHECK(!std::isnan(seen[1].eval_acc));
    CHECK(acc == seen[1].eval_acc);

    double top1 = -1.0;
    REQUIRE(spk_evaluate(m, test, 8, &top1) == SPK_OK);
    CHECK(top1 == acc);

    REQUIRE(spk_model_save(m, "capi.spkm") == SPK_OK);
    spk_model* back = nullptr;
    REQUIRE(spk_model_load("capi.spkm", &back) == SPK_OK);
    char* text = nullptr;
    REQUIRE(spk_model_config(back, &text) == SPK_OK);
    CHECK(std::string(text).find("mixer=wt2d\n") != std::string::npos);
    spk_string_free(text);

    spk_dataset* wrong = nullptr;
    REQUIRE(spk_dataset_generate("bars", 4, 1, 32, 32, 2, 1, &wrong) == SPK_OK);
    CHECK(spk_evaluate(back, wrong, 8, &top1) == SPK_ERR_SHAPE);
    CHECK(spk_train(m, train, test, "epochs=0\n", nullptr, nullptr, nullptr, nullptr) == SPK_ERR_INVALID_ARGUMENT);
    CHECK(spk_evaluate(nullptr, test, 8, &top1) == SPK_ERR_INVALID_ARGUMENT);

    spk_dataset_free(wrong);
    spk_model_free(back);
    spk_model_free(m);
    spk_dataset_free(train);
    spk_dataset_free(test);
    std::remove("capi.spkm");
    std::remove("capi_metrics.jsonl");
}

TEST_CASE("verify suites") {
    int tally[2] = {0, 0};
    std::size_t passed = 0, failed = 0;
    REQUIRE(spk_verify_run("census", count_checks, tally, &passed, &failed) == SPK_OK);
    CHECK(failed == 0);
    CHECK(passed > 0);
    CHECK(static_cast<std::size_t>(tally[0]) == passed);
    CHECK(spk_verify_run("astrology", nullptr, nullptr, &passed, &failed) == SPK_ERR_INVALID_ARGUMENT);
}
