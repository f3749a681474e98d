#include "spikemix/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "spikemix/error.hpp"
#include "malloc_tuning.hpp"

namespace spikemix {

namespace {

void check_logits(const Tensor& logits, std::span<const std::uint16_t> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size() || logits.dim(0) == 0) {
        throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    for (auto y : labels)
        if (y >= logits.dim(1)) {
            throw InvalidArgument("cross_entropy: label " + std::to_string(y) + " out of range for " +
                                  std::to_string(logits.dim(1)) + " classes");
        }
}

// Row-wise softmax probabilities and the mean loss.
double softmax_xent(const Tensor& logits, std::span<const std::uint16_t> labels, Tensor* probs) {
    check_logits(logits, labels);
    const std::size_t b = logits.dim(0), k = logits.dim(1);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double* row = logits.ptr() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        const double log_z = std::log(z);
        total += log_z - (row[labels[i]] - mx);
        if (probs)
            for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(row[j] - mx - log_z);
    }
    return total / static_cast<double>(b);
}

}  // namespace

double cross_entropy(const Tensor& logits, std::span<const std::uint16_t> labels) {
    return softmax_xent(logits, labels, nullptr);
}

namespace ad {

Var cross_entropy(Var logits, std::span<const std::uint16_t> labels) {
    Tensor probs(logits.shape());
    const double loss = softmax_xent(logits.value(), labels, &probs);
    const std::size_t il = logits.id();
    std::vector<std::uint16_t> ys(labels.begin(), labels.end());
    return logits.tape().record(Tensor::scalar(loss), {logits},
                                [il, ys = std::move(ys), probs = std::move(probs)](Tape& t, const Tensor& g) {
                                    const std::size_t b = probs.dim(0), k = probs.dim(1);
                                    const double s = g.item() / static_cast<double>(b);
                                    Tensor gl = probs;
                                    for (std::size_t i = 0; i < b; ++i) gl[i * k + ys[i]] -= 1.0;
                                    for (double& v : gl.data()) v *= s;
                                    t.accumulate(il, std::move(gl));
                                });
}

}  // namespace ad

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
    if (total_steps == 0) return lr_max;
    if (step > total_steps) throw InvalidArgument("cosine_lr: step beyond total_steps");
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

AdamW::AdamW(std::vector<Parameter*> params, AdamWOptions options) : params_(std::move(params)), opt_(options) {
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
        if (p->grad.shape() != p->value.shape()) p->grad = Tensor(p->value.shape());
    }
}

void AdamW::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

void AdamW::step(double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        if (!p.trainable) continue;
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j];
            m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g;
            v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            const double theta = p.value[j];
            p.value[j] = theta - lr * (m_hat / (std::sqrt(v_hat) + opt_.eps)) - lr * opt_.weight_decay * theta;
        }
    }
}

void TrainConfig::validate() const {
    if (!epochs || !batch || !eval_every) throw InvalidArgument("train config: epochs, batch and eval_every must be positive");
    if (!(lr > 0.0) || lr_min < 0.0 || lr_min > lr) throw InvalidArgument("train config: need 0 <= lr_min <= lr, lr > 0");
    if (weight_decay < 0.0) throw InvalidArgument("train config: weight decay must be non-negative");
    if (target_acc < 0.0 || target_acc > 1.0) throw InvalidArgument("train config: target_acc must be in [0, 1]");
}

const std::vector<std::string_view>& train_config_keys() {
    static const std::vector<std::string_view> keys{"epochs",     "batch",      "lr",        "lr_min",
                                                    "wd",         "seed",       "eval_every", "target_acc",
                                                    "min_epochs"};
    return keys;
}

TrainConfig TrainConfig::from_config(const Config& c) {
    TrainConfig t;
    t.epochs = c.get_size("epochs", t.epochs);
    t.batch = c.get_size("batch", t.batch);
    t.lr = c.get_double("lr", t.lr);
    t.lr_min = c.get_double("lr_min", t.lr_min);
    t.weight_decay = c.get_double("wd", t.weight_decay);
    t.seed = c.get_u64("seed", t.seed);
    t.eval_every = c.get_size("eval_every", t.eval_every);
    t.target_acc = c.get_double("target_acc", t.target_acc);
    t.min_epochs = c.get_size("min_epochs", t.min_epochs);
    return t;
}

void TrainConfig::to_config(Config& c) const {
    c.set("epochs", std::to_string(epochs));
    c.set("batch", std::to_string(batch));
    c.set("lr", format_double(lr));
    c.set("lr_min", format_double(lr_min));
    c.set("wd", format_double(weight_decay));
    c.set("seed", std::to_string(seed));
    c.set("eval_every", std::to_string(eval_every));
    c.set("target_acc", format_double(target_acc));
    c.set("min_epochs", std::to_string(min_epochs));
}

std::string metrics_json_line(const EpochMetrics& m) {
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["loss"] = m.loss;
    j["train_acc"] = m.train_acc;
    j["eval_acc"] = m.eval_acc ? nlohmann::ordered_json(*m.eval_acc) : nlohmann::ordered_json(nullptr);
    j["lr"] = m.lr;
    j["ms_per_batch"] = m.ms_per_batch;
    return j.dump();
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t k = logits.dim(1);
    const double* r = logits.ptr() + row * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
        if (r[j] > r[best]) best = j;
    return best;
}

double evaluate_top1(Spikformer& model, const Dataset& data, std::size_t batch) {
    if (data.size() == 0) throw InvalidArgument("evaluate_top1: empty dataset");
    std::size_t correct = 0;
    for (const auto& idx : batch_iter(data.size(), batch)) {
        Batch b = make_batch(data, idx, model.config().timesteps);
        Tensor logits = model.predict(b.images);
        for (std::size_t i = 0; i < idx.size(); ++i) correct += argmax_row(logits, i) == b.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

EpochMetrics train_epoch(Spikformer& model, const Dataset& data, const TrainConfig& cfg, AdamW& opt,
                         std::size_t epoch, std::size_t& global_step, std::size_t total_steps) {
    using clock = std::chrono::steady_clock;
    EpochMetrics m;
    m.epoch = epoch;
    const auto batches = batch_iter(data.size(), cfg.batch, cfg.seed * 1000003ULL + epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    double elapsed_ms = 0.0;
    for (const auto& idx : batches) {
        Batch b = make_batch(data, idx, model.config().timesteps);
        const double lr = cosine_lr(std::min(global_step, total_steps), total_steps, cfg.lr, cfg.lr_min);
        const auto t0 = clock::now();
        opt.zero_grad();
        Tape tape;
        Var logits = model.forward(tape, b.images, Mode::train);
        Var loss = ad::cross_entropy(logits, b.labels);
        tape.backward(loss);
        opt.step(lr);
        elapsed_ms += std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        ++global_step;
        m.lr = lr;
        loss_sum += loss.value().item() * static_cast<double>(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) correct += argmax_row(logits.value(), i) == b.labels[i];
    }
    m.loss = loss_sum / static_cast<double>(data.size());
    m.train_acc = static_cast<double>(correct) / static_cast<double>(data.size());
    m.ms_per_batch = elapsed_ms / static_cast<double>(batches.size());
    return m;
}

FitResult fit(Spikformer& model, const Dataset& train, const Dataset& test, const TrainConfig& cfg,
              const std::string& metrics_path, const std::function<void(const EpochMetrics&)>& on_epoch) {
    cfg.validate();
    detail::keep_freed_memory();
    std::ofstream metrics;
    if (!metrics_path.empty()) {
        metrics.open(metrics_path, std::ios::trunc);
        if (!metrics) throw IoError("cannot open '" + metrics_path + "' for writing");
    }
    AdamW opt(model.parameters(), AdamWOptions{.weight_decay = cfg.weight_decay});
    const std::size_t per_epoch = (train.size() + cfg.batch - 1) / cfg.batch;
    const std::size_t total_steps = per_epoch * cfg.epochs;
    std::size_t step = 0;
    FitResult result;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochMetrics m = train_epoch(model, train, cfg, opt, epoch, step, total_steps);
        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            m.eval_acc = evaluate_top1(model, test, cfg.batch);
            result.final_eval_acc = *m.eval_acc;
            result.best_eval_acc = std::max(result.best_eval_acc, *m.eval_acc);
        }
        result.history.push_back(m);
        if (metrics.is_open()) {
            metrics << metrics_json_line(m) << '\n';
            metrics.flush();
        }
        if (on_epoch) on_epoch(m);
        if (cfg.target_acc > 0.0 && m.eval_acc && *m.eval_acc >= cfg.target_acc && epoch >= cfg.min_epochs) {
            result.reached_target = true;
            break;
        }
    }
    if (result.history.back().eval_acc) result.final_eval_acc = *result.history.back().eval_acc;
    if (!result.reached_target && cfg.target_acc > 0.0) result.reached_target = result.final_eval_acc >= cfg.target_acc;
    return result;
}

}  // namespace spikemix
