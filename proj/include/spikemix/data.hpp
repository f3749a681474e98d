#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spikemix/tensor.hpp"

namespace spikemix {

enum class SynthTask { bars, checker, moving_dot };

std::string_view to_string(SynthTask task);
SynthTask parse_task(std::string_view name);

enum class DataType : std::uint32_t { u8 = 0, f32 = 1 };

// In-memory form of an SPKD file. Samples are stored as [count, dims...]
// with dims = (C, H, W) for static images or (T, C, H, W) for sequences.
struct Dataset {
    Shape sample_shape;
    std::size_t num_labels = 2;
    DataType dtype = DataType::f32;
    Tensor samples;
    std::vector<std::uint16_t> labels;

    std::size_t size() const { return labels.size(); }
    bool has_time_axis() const { return sample_shape.size() == 4; }
    std::size_t channels() const { return sample_shape[sample_shape.size() - 3]; }
    std::size_t height() const { return sample_shape[sample_shape.size() - 2]; }
    std::size_t width() const { return sample_shape[sample_shape.size() - 1]; }
    void validate() const;
};

struct SynthDims {
    std::size_t channels = 1;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t timesteps = 4;  // moving_dot only
};

// Two balanced classes, pixel values in [0, 1] with additive N(0, 0.1^2)
// noise then clamping. Values are rounded to f32 so that the file form is
// exact. Same arguments give the same dataset.
//   bars:       horizontal (0) vs vertical (1) stripes
//   checker:    checkerboard phase 0 vs 1
//   moving_dot: dot drifting left (0) vs right (1) over T frames, wrapping
//               around; random start and speed
Dataset synth_generate(SynthTask task, std::size_t n_samples, const SynthDims& dims, std::uint64_t seed);

// [C, H, W] -> [T, C, H, W] with T identical copies.
Tensor encode_static_sequence(const Tensor& img, std::size_t timesteps);

void save_dataset(const Dataset& ds, const std::string& path);
// Errors: BadMagicError, TruncatedError, LabelOverflowError, FormatError.
Dataset load_dataset(const std::string& path);

// ceil(n / batch) index lists in order, the last possibly short. With a
// seed the order is a seeded permutation.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch,
                                                 std::optional<std::uint64_t> shuffle_seed = std::nullopt);

struct Batch {
    Tensor images;  // [T, B, C, H, W]
    std::vector<std::uint16_t> labels;
};

// Static samples are repeated T times; sequence samples must carry T frames.
Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices, std::size_t timesteps);

}  // namespace spikemix
