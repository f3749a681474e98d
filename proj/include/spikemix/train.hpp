#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spikemix/config.hpp"
#include "spikemix/data.hpp"
#include "spikemix/model.hpp"

namespace spikemix {

// Mean over the batch of -log softmax(logits)[label], max-subtracted.
double cross_entropy(const Tensor& logits, std::span<const std::uint16_t> labels);

namespace ad {
Var cross_entropy(Var logits, std::span<const std::uint16_t> labels);
}

// lr_min + (lr_max - lr_min) (1 + cos(pi step / total)) / 2
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min = 0.0);

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
public:
    AdamW(std::vector<Parameter*> params, AdamWOptions options = {});

    // theta -= lr * (m_hat / (sqrt(v_hat) + eps)) + lr * wd * theta
    void step(double lr);
    void zero_grad();

    std::size_t steps() const { return step_; }
    const std::vector<Parameter*>& params() const { return params_; }
    const Tensor& first_moment(std::size_t i) const { return m_[i]; }
    const Tensor& second_moment(std::size_t i) const { return v_[i]; }

private:
    std::vector<Parameter*> params_;
    AdamWOptions opt_;
    std::vector<Tensor> m_, v_;
    std::size_t step_ = 0;
};

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch = 16;
    double lr = 5e-4;
    double lr_min = 0.0;
    double weight_decay = 0.01;
    std::uint64_t seed = 1;
    std::size_t eval_every = 1;
    // Stop once test accuracy reaches target_acc after at least min_epochs
    // epochs; 0 disables early stopping.
    double target_acc = 0.0;
    std::size_t min_epochs = 5;

    void validate() const;
    static TrainConfig from_config(const Config& cfg);
    void to_config(Config& cfg) const;
};

const std::vector<std::string_view>& train_config_keys();

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss = 0.0;
    double train_acc = 0.0;
    std::optional<double> eval_acc;
    double lr = 0.0;
    double ms_per_batch = 0.0;
};

// {"epoch", "loss", "train_acc", "eval_acc", "lr", "ms_per_batch"} on one line.
std::string metrics_json_line(const EpochMetrics& m);

std::size_t argmax_row(const Tensor& logits, std::size_t row);
double evaluate_top1(Spikformer& model, const Dataset& data, std::size_t batch = 32);

// One pass over `data` with full BPTT per batch. `global_step` advances by
// the number of batches and drives the cosine schedule over `total_steps`.
EpochMetrics train_epoch(Spikformer& model, const Dataset& data, const TrainConfig& cfg, AdamW& opt,
                         std::size_t epoch, std::size_t& global_step, std::size_t total_steps);

struct FitResult {
    std::vector<EpochMetrics> history;
    double final_eval_acc = 0.0;
    double best_eval_acc = 0.0;
    bool reached_target = false;
};

// Trains for cfg.epochs (or until the target), appending one JSON line per
// epoch to `metrics_path` when it is not empty.
FitResult fit(Spikformer& model, const Dataset& train, const Dataset& test, const TrainConfig& cfg,
              const std::string& metrics_path = {},
              const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace spikemix
