#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavseg/data.hpp"
#include "uavseg/losses.hpp"
#include "uavseg/model.hpp"

namespace uavseg {

struct OptimizerConfig {
    double lr = 3e-4;
    int warmup_steps = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Decoupled decay, applied to matrices and kernels only.
    double weight_decay = 0.01;
};

struct RunConfig {
    ModelConfig model;
    LossWeights loss;
    OptimizerConfig optimizer;
    int batch_size = 4;
    int grad_accum_steps = 1;
    int epochs = 4;
    int steps_per_epoch = 100;
    std::string data_root = "data";
    /// "train", "val", "test" or "all".
    std::string train_split = "train";
    std::string eval_split = "val";
    std::uint64_t seed = 0;
    CotMode cot_mode = CotMode::On;
    /// Supervise the CoT tokens as well as the answer.
    bool cot_in_text_loss = false;

    int total_steps() const { return epochs * steps_per_epoch; }
    /// Throws ConfigError naming the first invalid field.
    void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);

/// TOML or JSON by extension.
nlohmann::json read_config_document(const std::filesystem::path& path);
/// Applies "a.b.c=value" to a config document. The value is parsed as JSON when
/// possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});

/// FNV-1a hash of the canonical JSON form, as 16 hex digits.
std::string config_fingerprint(const RunConfig& config);

}  // namespace uavseg
