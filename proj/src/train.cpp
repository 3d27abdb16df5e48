#include "uavseg/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "uavseg/errors.hpp"

namespace uavseg {

double learning_rate(const OptimizerConfig& config, int step) {
    if (step < 1) throw InputError("optimizer steps are 1-based");
    if (config.warmup_steps > 0 && step <= config.warmup_steps) {
        return config.lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
    }
    return config.lr;
}

AdamW::AdamW(OptimizerConfig config, ParameterStore& store) : config_(config), store_(store) {
    for (const auto& [name, tensor] : store_.entries()) {
        m_.emplace_back(tensor.numel(), 0.0f);
        v_.emplace_back(tensor.numel(), 0.0f);
    }
}

void AdamW::step(int step) {
    const double lr = learning_rate(config_, step);
    const double bc1 = 1.0 - std::pow(config_.beta1, step);
    const double bc2 = 1.0 - std::pow(config_.beta2, step);
    const auto b1 = static_cast<float>(config_.beta1);
    const auto b2 = static_cast<float>(config_.beta2);
    std::size_t index = 0;
    for (const auto& entry : store_.entries()) {
        Tensor param = entry.second;
        auto& m = m_[index];
        auto& v = v_[index];
        ++index;
        if (!param.has_grad()) continue;
        const auto g = param.grad();
        auto w = param.mutable_data();
        const bool decay = param.rank() >= 2 && config_.weight_decay > 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double update = mhat / (std::sqrt(vhat) + config_.eps);
            if (decay) update += config_.weight_decay * w[i];
            w[i] = static_cast<float>(w[i] - lr * update);
        }
    }
}

std::vector<TrainingSample> prepare_samples(const SegmentationModel& model,
                                            const std::vector<Example>& examples, CotMode mode,
                                            std::uint64_t seed) {
    Rng rng(seed ^ 0xc07c07c07ull);
    std::vector<TrainingSample> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        TrainingSample s;
        s.id = ex.record.id;
        s.type = ex.record.reasoning_type;
        s.input = model.encoder().prepare(ex.image);
        s.tokens = tokenize_sample(apply_cot_mode(ex.record, mode, rng), model.vocab());
        s.mask = ex.mask;
        out.push_back(std::move(s));
    }
    return out;
}

nlohmann::json to_json(const LossLogEntry& e) {
    nlohmann::json j{{"step", e.step}, {"epoch", e.epoch}, {"lr", e.lr}};
    j["total"] = e.loss.total;
    j["txt"] = e.loss.txt;
    j["ref"] = e.loss.ref;
    j["dice"] = e.loss.dice;
    return j;
}

namespace {

// Endless stream of sample indices: a fresh seeded permutation per pass.
class SampleStream {
public:
    SampleStream(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed ^ 0x5a5a5a5aull) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        reshuffle();
    }

    std::size_t next() {
        if (pos_ == order_.size()) reshuffle();
        return order_[pos_++];
    }

private:
    void reshuffle() {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
    }

    std::vector<std::size_t> order_;
    Rng rng_;
    std::size_t pos_ = 0;
};

}  // namespace

TrainResult train_model(SegmentationModel& model, const std::vector<TrainingSample>& samples,
                        const RunConfig& config, const TrainOptions& options) {
    if (samples.empty()) throw InputError("training set is empty");
    config.validate();
    const int total_steps = options.max_steps > 0 ? options.max_steps : config.total_steps();
    const int per_step = config.batch_size * config.grad_accum_steps;
    const float grad_scale = 1.0f / static_cast<float>(per_step);

    std::ofstream log_file;
    if (options.loss_log) {
        if (options.loss_log->has_parent_path()) std::filesystem::create_directories(options.loss_log->parent_path());
        log_file.open(*options.loss_log);
        if (!log_file) throw std::runtime_error("cannot write " + options.loss_log->string());
    }

    ParameterStore& store = model.parameters();
    AdamW optimizer(config.optimizer, store);
    SampleStream stream(samples.size(), config.seed);
    TrainResult result;
    double epoch_sum = 0.0;
    int epoch_count = 0;

    for (int step = 1; step <= total_steps; ++step) {
        store.zero_grad();
        LossLogEntry entry;
        entry.step = step;
        entry.epoch = (step - 1) / config.steps_per_epoch + 1;
        entry.lr = learning_rate(config.optimizer, step);
        for (int micro = 0; micro < per_step; ++micro) {
            const TrainingSample& s = samples[stream.next()];
            auto loss = model.sample_loss(s.input, s.tokens, s.mask, config.loss, config.cot_in_text_loss);
            if (!std::isfinite(loss.report.total)) {
                throw DivergenceError(step, "non-finite loss on sample " + s.id);
            }
            scale(loss.total, grad_scale).backward();
            entry.loss.total += loss.report.total / per_step;
            entry.loss.txt += loss.report.txt / per_step;
            entry.loss.ref += loss.report.ref / per_step;
            entry.loss.dice += loss.report.dice / per_step;
            entry.loss.text_active = loss.report.text_active;
        }
        optimizer.step(step);

        if (log_file) log_file << to_json(entry).dump() << '\n';
        if (options.on_step) options.on_step(entry);
        result.log.push_back(entry);
        epoch_sum += entry.loss.total;
        ++epoch_count;
        if (step % config.steps_per_epoch == 0 || step == total_steps) {
            result.epoch_mean_loss.push_back(epoch_sum / epoch_count);
            epoch_sum = 0.0;
            epoch_count = 0;
        }
    }
    return result;
}

}  // namespace uavseg
