#include "spikemix/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "binary_io.hpp"
#include "spikemix/error.hpp"
#include "spikemix/rng.hpp"

namespace spikemix {

namespace {

constexpr char kDataMagic[4] = {'S', 'P', 'K', 'D'};
constexpr std::uint32_t kDataVersion = 1;
constexpr double kNoise = 0.1;

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void paint_bars(double* img, const SynthDims& d, bool vertical, Rng& rng) {
    const std::size_t width = 1 + rng.below(2);
    const std::size_t phase = rng.below(2 * width);
    for (std::size_t c = 0; c < d.channels; ++c)
        for (std::size_t y = 0; y < d.height; ++y)
            for (std::size_t x = 0; x < d.width; ++x) {
                const std::size_t coord = vertical ? x : y;
                img[(c * d.height + y) * d.width + x] = ((coord + phase) / width) % 2 == 0 ? 1.0 : 0.0;
            }
}

void paint_checker(double* img, const SynthDims& d, std::size_t phase, Rng& rng) {
    const std::size_t cell = std::size_t{1} << (1 + rng.below(2));
    for (std::size_t c = 0; c < d.channels; ++c)
        for (std::size_t y = 0; y < d.height; ++y)
            for (std::size_t x = 0; x < d.width; ++x)
                img[(c * d.height + y) * d.width + x] = (y / cell + x / cell + phase) % 2 == 0 ? 1.0 : 0.0;
}

// 2x2 dot; frame t sits at x0 + dir * speed * t (mod W).
void paint_moving_dot(double* seq, const SynthDims& d, bool right, Rng& rng) {
    const std::size_t x0 = rng.below(d.width);
    const std::size_t y0 = rng.below(d.height);
    const std::size_t speed = 1 + rng.below(2);
    const std::size_t frame = d.channels * d.height * d.width;
    for (std::size_t t = 0; t < d.timesteps; ++t) {
        const std::size_t shift = (speed * t) % d.width;
        const std::size_t xt = right ? (x0 + shift) % d.width : (x0 + d.width - shift) % d.width;
        for (std::size_t c = 0; c < d.channels; ++c)
            for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx) {
                    const std::size_t y = (y0 + dy) % d.height, x = (xt + dx) % d.width;
                    seq[t * frame + (c * d.height + y) * d.width + x] = 1.0;
                }
    }
}

}  // namespace

std::string_view to_string(SynthTask task) {
    switch (task) {
        case SynthTask::bars: return "bars";
        case SynthTask::checker: return "checker";
        case SynthTask::moving_dot: return "moving_dot";
    }
    return "?";
}

SynthTask parse_task(std::string_view name) {
    if (name == "bars") return SynthTask::bars;
    if (name == "checker") return SynthTask::checker;
    if (name == "moving_dot" || name == "moving-dot") return SynthTask::moving_dot;
    throw InvalidArgument("unknown task '" + std::string(name) + "' (expected bars|checker|moving_dot)");
}

void Dataset::validate() const {
    if (sample_shape.size() != 3 && sample_shape.size() != 4) {
        throw FormatError("dataset: sample dims must be (C,H,W) or (T,C,H,W), got " + shape_str(sample_shape));
    }
    if (shape_size(sample_shape) == 0) throw FormatError("dataset: zero-sized sample dims");
    Shape expect{labels.size()};
    expect.insert(expect.end(), sample_shape.begin(), sample_shape.end());
    if (samples.shape() != expect) {
        throw ShapeError("dataset: samples " + shape_str(samples.shape()) + " do not match " + shape_str(expect));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_labels) {
            throw LabelOverflowError("dataset: label " + std::to_string(labels[i]) + " of sample " +
                                     std::to_string(i) + " is not below label count " + std::to_string(num_labels));
        }
    }
}

Dataset synth_generate(SynthTask task, std::size_t n, const SynthDims& d, std::uint64_t seed) {
    if (n == 0 || d.channels == 0 || d.height == 0 || d.width == 0) {
        throw InvalidArgument("synth_generate: sample count and dims must be positive");
    }
    if (task == SynthTask::moving_dot && (d.timesteps < 2 || d.width < 4)) {
        throw InvalidArgument("synth_generate: moving_dot needs T >= 2 and width >= 4");
    }
    Rng rng(seed);
    Dataset ds;
    ds.num_labels = 2;
    ds.sample_shape = {d.channels, d.height, d.width};
    if (task == SynthTask::moving_dot) ds.sample_shape.insert(ds.sample_shape.begin(), d.timesteps);

    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<std::uint16_t>(i % 2);
    const auto order = rng.permutation(n);
    std::vector<std::uint16_t> shuffled(n);
    for (std::size_t i = 0; i < n; ++i) shuffled[i] = ds.labels[order[i]];
    ds.labels = std::move(shuffled);

    Shape full{n};
    full.insert(full.end(), ds.sample_shape.begin(), ds.sample_shape.end());
    ds.samples = Tensor(full);
    const std::size_t per = shape_size(ds.sample_shape);
    for (std::size_t i = 0; i < n; ++i) {
        double* img = ds.samples.ptr() + i * per;
        const bool cls = ds.labels[i] == 1;
        switch (task) {
            case SynthTask::bars: paint_bars(img, d, cls, rng); break;
            case SynthTask::checker: paint_checker(img, d, cls ? 1 : 0, rng); break;
            case SynthTask::moving_dot: paint_moving_dot(img, d, cls, rng); break;
        }
        for (std::size_t j = 0; j < per; ++j) img[j] = to_f32(std::clamp(img[j] + rng.normal(0.0, kNoise), 0.0, 1.0));
    }
    return ds;
}

Tensor encode_static_sequence(const Tensor& img, std::size_t timesteps) {
    if (timesteps == 0) throw InvalidArgument("encode_static_sequence: T must be at least 1");
    if (img.rank() != 3) throw ShapeError("encode_static_sequence: expected [C, H, W], got " + shape_str(img.shape()));
    Shape s{timesteps};
    s.insert(s.end(), img.shape().begin(), img.shape().end());
    Tensor out(s);
    for (std::size_t t = 0; t < timesteps; ++t) std::copy_n(img.ptr(), img.size(), out.ptr() + t * img.size());
    return out;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    ds.validate();
    auto out = io::open_out(path);
    io::write_bytes(out, kDataMagic, 4);
    io::write_le<std::uint32_t>(out, kDataVersion);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.size()));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.num_labels));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.sample_shape.size()));
    for (std::size_t d : ds.sample_shape) io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.dtype));
    if (ds.dtype == DataType::f32) {
        std::vector<float> buf(ds.samples.size());
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(ds.samples[i]);
        io::write_bytes(out, buf.data(), buf.size() * sizeof(float));
    } else {
        std::vector<std::uint8_t> buf(ds.samples.size());
        for (std::size_t i = 0; i < buf.size(); ++i)
            buf[i] = static_cast<std::uint8_t>(std::lround(std::clamp(ds.samples[i], 0.0, 1.0) * 255.0));
        io::write_bytes(out, buf.data(), buf.size());
    }
    io::write_bytes(out, ds.labels.data(), ds.labels.size() * sizeof(std::uint16_t));
    io::finish(out, path);
}

Dataset load_dataset(const std::string& path) {
    auto in = io::open_in(path);
    const std::string what = "dataset '" + path + "'";
    char magic[4] = {};
    io::read_bytes(in, magic, 4, what);
    if (std::memcmp(magic, kDataMagic, 4) != 0) throw BadMagicError(what + ": bad magic (expected SPKD)");
    const auto version = io::read_le<std::uint32_t>(in, what);
    if (version != kDataVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
    const auto count = io::read_le<std::uint32_t>(in, what);
    Dataset ds;
    ds.num_labels = io::read_le<std::uint32_t>(in, what);
    const auto rank = io::read_le<std::uint32_t>(in, what);
    if (rank != 3 && rank != 4) throw FormatError(what + ": sample rank " + std::to_string(rank) + " is not 3 or 4");
    for (std::uint32_t i = 0; i < rank; ++i) ds.sample_shape.push_back(io::read_le<std::uint32_t>(in, what));
    const auto dtype = io::read_le<std::uint32_t>(in, what);
    if (dtype > 1) throw FormatError(what + ": unknown dtype code " + std::to_string(dtype));
    ds.dtype = static_cast<DataType>(dtype);

    Shape full{count};
    full.insert(full.end(), ds.sample_shape.begin(), ds.sample_shape.end());
    ds.samples = Tensor(full);
    if (ds.dtype == DataType::f32) {
        std::vector<float> buf(ds.samples.size());
        io::read_bytes(in, buf.data(), buf.size() * sizeof(float), what);
        for (std::size_t i = 0; i < buf.size(); ++i) ds.samples[i] = buf[i];
    } else {
        std::vector<std::uint8_t> buf(ds.samples.size());
        io::read_bytes(in, buf.data(), buf.size(), what);
        for (std::size_t i = 0; i < buf.size(); ++i) ds.samples[i] = buf[i] / 255.0;
    }
    ds.labels.resize(count);
    io::read_bytes(in, ds.labels.data(), ds.labels.size() * sizeof(std::uint16_t), what);
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(what + ": trailing bytes after labels");
    ds.validate();
    return ds;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch,
                                                 std::optional<std::uint64_t> shuffle_seed) {
    if (batch == 0) throw InvalidArgument("batch size must be positive");
    std::vector<std::size_t> order;
    if (shuffle_seed) {
        Rng rng(*shuffle_seed);
        order = rng.permutation(n);
    } else {
        order.resize(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch) {
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch)));
    }
    return out;
}

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices, std::size_t timesteps) {
    if (indices.empty()) throw InvalidArgument("make_batch: empty batch");
    if (ds.has_time_axis() && ds.sample_shape[0] != timesteps) {
        throw ShapeError("make_batch: samples carry " + std::to_string(ds.sample_shape[0]) +
                         " frames but the model runs T=" + std::to_string(timesteps));
    }
    const std::size_t b = indices.size();
    const std::size_t frame = ds.channels() * ds.height() * ds.width();
    const std::size_t per = shape_size(ds.sample_shape);
    Batch out;
    out.images = Tensor(Shape{timesteps, b, ds.channels(), ds.height(), ds.width()});
    for (std::size_t j = 0; j < b; ++j) {
        const std::size_t i = indices[j];
        if (i >= ds.size()) throw InvalidArgument("make_batch: index " + std::to_string(i) + " out of range");
        out.labels.push_back(ds.labels[i]);
        const double* src = ds.samples.ptr() + i * per;
        for (std::size_t t = 0; t < timesteps; ++t) {
            const double* frame_src = ds.has_time_axis() ? src + t * frame : src;
            std::copy_n(frame_src, frame, out.images.ptr() + (t * b + j) * frame);
        }
    }
    return out;
}

}  // namespace spikemix
