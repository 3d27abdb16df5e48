#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "uavseg/config.hpp"
#include "uavseg/model.hpp"

namespace uavseg {

/// Linear warm-up to the base rate over `warmup_steps` (1-based step index),
/// constant afterwards.
double learning_rate(const OptimizerConfig& config, int step);

/// Adam with decoupled weight decay on rank >= 2 parameters.
class AdamW {
public:
    AdamW(OptimizerConfig config, ParameterStore& store);

    /// Applies the gradients currently held by the parameters as update `step` (1-based).
    void step(int step);

private:
    OptimizerConfig config_;
    ParameterStore& store_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
};

/// Model-ready form of an example: resized inputs and token ids.
struct TrainingSample {
    std::string id;
    ReasoningType type = ReasoningType::Spatial;
    PreparedImage input;
    SampleTokens tokens;
    BinaryMask mask;
};

/// Applies the CoT treatment (seeded) and caches encoder inputs.
std::vector<TrainingSample> prepare_samples(const SegmentationModel& model,
                                            const std::vector<Example>& examples, CotMode mode,
                                            std::uint64_t seed);

struct LossLogEntry {
    int step = 0;
    int epoch = 0;
    double lr = 0.0;
    LossReport loss;  // mean over the samples of the step
};

nlohmann::json to_json(const LossLogEntry& entry);

struct TrainResult {
    std::vector<LossLogEntry> log;
    std::vector<double> epoch_mean_loss;
};

struct TrainOptions {
    /// JSON-lines loss log, one line per optimizer step.
    std::optional<std::filesystem::path> loss_log;
    std::function<void(const LossLogEntry&)> on_step;
    /// Overrides the configured total when positive.
    int max_steps = 0;
};

/// Each optimizer step consumes batch_size * grad_accum_steps samples from a
/// seeded stream of per-epoch permutations; gradients are averaged over them.
/// Throws DivergenceError on a non-finite loss.
TrainResult train_model(SegmentationModel& model, const std::vector<TrainingSample>& samples,
                        const RunConfig& config, const TrainOptions& options = {});

}  // namespace uavseg
