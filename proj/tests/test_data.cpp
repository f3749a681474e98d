#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "spikemix/data.hpp"
#include "spikemix/error.hpp"

using namespace spikemix;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("spikemix_test_" + name)).string();
}

std::string read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_all(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out << bytes;
}

// Plain logistic regression on raw pixels, full-batch gradient descent.
double logistic_accuracy(const Dataset& train, const Dataset& test) {
    const std::size_t f = train.samples.size() / train.size();
    std::vector<double> w(f, 0.0);
    double b = 0.0;
    const double lr = 0.5;
    for (int epoch = 0; epoch < 300; ++epoch) {
        std::vector<double> gw(f, 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < train.size(); ++i) {
            const double* x = train.samples.ptr() + i * f;
            double z = b;
            for (std::size_t j = 0; j < f; ++j) z += w[j] * x[j];
            const double err = 1.0 / (1.0 + std::exp(-z)) - train.labels[i];
            for (std::size_t j = 0; j < f; ++j) gw[j] += err * x[j];
            gb += err;
        }
        for (std::size_t j = 0; j < f; ++j) w[j] -= lr * gw[j] / train.size();
        b -= lr * gb / train.size();
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const double* x = test.samples.ptr() + i * f;
        double z = b;
        for (std::size_t j = 0; j < f; ++j) z += w[j] * x[j];
        if ((z > 0.0 ? 1 : 0) == test.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / test.size();
}

}  // namespace

TEST_CASE("bars: balanced, deterministic, byte-identical files") {
    const Dataset a = synth_generate(SynthTask::bars, 200, {}, 7);
    std::size_t ones = 0;
    for (auto l : a.labels) ones += l;
    CHECK(ones == 100);
    CHECK(a.sample_shape == Shape{1, 16, 16});
    for (double v : a.samples.data()) CHECK((v >= 0.0 && v <= 1.0));
    const std::string p1 = temp_path("bars1.spkd"), p2 = temp_path("bars2.spkd");
    save_dataset(a, p1);
    save_dataset(synth_generate(SynthTask::bars, 200, {}, 7), p2);
    CHECK(read_all(p1) == read_all(p2));
    CHECK(!(synth_generate(SynthTask::bars, 200, {}, 8).samples == a.samples));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("task shapes") {
    const Dataset md = synth_generate(SynthTask::moving_dot, 10, {1, 16, 16, 4}, 1);
    CHECK(md.sample_shape == Shape{4, 1, 16, 16});
    CHECK(md.has_time_axis());
    const Dataset ch = synth_generate(SynthTask::checker, 10, {2, 8, 8, 4}, 1);
    CHECK(ch.sample_shape == Shape{2, 8, 8});
    CHECK(parse_task("moving_dot") == SynthTask::moving_dot);
    CHECK_THROWS_AS(parse_task("mnist"), InvalidArgument);
}

TEST_CASE("moving_dot defeats a linear pixel classifier") {
    const SynthDims dims{1, 16, 16, 4};
    const Dataset train = synth_generate(SynthTask::moving_dot, 400, dims, 3);
    const Dataset test = synth_generate(SynthTask::moving_dot, 400, dims, 4);
    const double acc = logistic_accuracy(train, test);
    MESSAGE("logistic regression on moving_dot: " << acc);
    CHECK(acc < 0.75);
    // Control: a label-keyed brightness offset is linearly separable, so the
    // baseline itself works.
    auto brighten = [](Dataset ds) {
        const std::size_t f = ds.samples.size() / ds.size();
        for (std::size_t i = 0; i < ds.size(); ++i)
            for (std::size_t j = 0; j < f; ++j) ds.samples.ptr()[i * f + j] += 0.3 * ds.labels[i];
        return ds;
    };
    CHECK(logistic_accuracy(brighten(synth_generate(SynthTask::bars, 200, {}, 3)),
                            brighten(synth_generate(SynthTask::bars, 200, {}, 4))) > 0.9);
}

TEST_CASE("static sequence encoding") {
    const Tensor img = synth_generate(SynthTask::bars, 1, {}, 1).samples.reshaped(Shape{1, 16, 16});
    CHECK(encode_static_sequence(img, 1).reshaped(Shape{1, 16, 16}) == img);
    const Tensor s = encode_static_sequence(img, 4);
    CHECK(s.shape() == Shape{4, 1, 16, 16});
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t i = 0; i < 256; ++i) CHECK(s[t * 256 + i] == img[i]);
    CHECK(max_abs_diff(reduce_mean(s, 0), img) == 0.0);
}

TEST_CASE("file round trips") {
    const Dataset a = synth_generate(SynthTask::moving_dot, 12, {1, 8, 8, 4}, 2);
    const std::string path = temp_path("rt.spkd");
    save_dataset(a, path);
    const Dataset b = load_dataset(path);
    CHECK(b.sample_shape == a.sample_shape);
    CHECK(b.samples == a.samples);
    CHECK(b.labels == a.labels);
    CHECK(b.dtype == DataType::f32);

    Dataset q = a;
    q.dtype = DataType::u8;
    for (double& v : q.samples.data()) v = std::round(v * 255.0) / 255.0;
    save_dataset(q, path);
    const Dataset r = load_dataset(path);
    CHECK(r.dtype == DataType::u8);
    CHECK(r.samples == q.samples);
    std::remove(path.c_str());
}

TEST_CASE("loader errors are distinct") {
    const Dataset a = synth_generate(SynthTask::bars, 6, {1, 4, 4, 1}, 2);
    const std::string path = temp_path("bad.spkd");
    save_dataset(a, path);
    const std::string bytes = read_all(path);

    write_all(path, "XXXX" + bytes.substr(4));
    CHECK_THROWS_AS(load_dataset(path), BadMagicError);
    write_all(path, bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(load_dataset(path), TruncatedError);
    std::string overflow = bytes;
    overflow[overflow.size() - 1] = '\x7f';
    write_all(path, overflow);
    CHECK_THROWS_AS(load_dataset(path), LabelOverflowError);
    write_all(path, bytes + "z");
    CHECK_THROWS_AS(load_dataset(path), FormatError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_dataset(temp_path("absent.spkd")), IoError);

    Dataset bad = a;
    bad.labels[0] = 5;
    CHECK_THROWS_AS(bad.validate(), LabelOverflowError);
}

TEST_CASE("batching") {
    const auto batches = batch_iter(10, 4);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 4);
    CHECK(batches[1].size() == 4);
    CHECK(batches[2].size() == 2);
    CHECK(batches[0][0] == 0);
    CHECK(batch_iter(10, 4, 9) == batch_iter(10, 4, 9));
    CHECK(batch_iter(50, 50, 9) != batch_iter(50, 50, 10));
    std::vector<std::size_t> seen;
    for (const auto& b : batch_iter(10, 3, 5)) seen.insert(seen.end(), b.begin(), b.end());
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < 10; ++i) CHECK(seen[i] == i);

    const Dataset s = synth_generate(SynthTask::bars, 5, {}, 1);
    const Batch b = make_batch(s, {4, 1}, 3);
    CHECK(b.images.shape() == Shape{3, 2, 1, 16, 16});
    CHECK(b.labels == std::vector<std::uint16_t>{s.labels[4], s.labels[1]});
    CHECK(b.images[(2 * 2 + 1) * 256 + 7] == s.samples[1 * 256 + 7]);
    const Dataset md = synth_generate(SynthTask::moving_dot, 3, {1, 16, 16, 4}, 1);
    CHECK_THROWS(make_batch(md, {0}, 2));
}
