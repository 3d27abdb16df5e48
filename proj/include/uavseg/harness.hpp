#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "uavseg/config.hpp"
#include "uavseg/metrics.hpp"
#include "uavseg/model.hpp"
#include "uavseg/train.hpp"

namespace uavseg {

// ---- evaluation ----------------------------------------------------------------

using Predictor = std::function<BinaryMask(const Example&)>;

Predictor model_predictor(const SegmentationModel& model);
MetricAccumulator evaluate(const std::vector<Example>& examples, const Predictor& predict);
/// Examples whose index is congruent to `shard` modulo `shard_count`.
MetricAccumulator evaluate_shard(const std::vector<Example>& examples, const Predictor& predict,
                                 int shard, int shard_count);

/// Writes report.csv and report.md into `dir`.
void write_report_tables(const std::filesystem::path& dir, const std::vector<MetricRow>& rows);

// ---- runs ----------------------------------------------------------------------

/// Vocabulary over every question, CoT step and answer of the corpus.
Vocabulary corpus_vocabulary(const Corpus& corpus);

/// checkpoint.bin, config.json and vocab.json.
void save_run(const SegmentationModel& model, const RunConfig& config, const std::filesystem::path& dir);
std::unique_ptr<SegmentationModel> load_run(const std::filesystem::path& dir, RunConfig* config = nullptr);

struct RunReport {
    std::string fingerprint;
    std::vector<double> epoch_mean_loss;
    std::vector<LossLogEntry> log;
    /// Keyed by split name.
    std::map<std::string, MetricAccumulator> metrics;
    double seconds = 0.0;
};

/// Trains on the configured split, saves the run into `out_dir` with loss.jsonl,
/// evaluates the train and eval splits and writes report.{csv,md,json}.
RunReport run_training(const RunConfig& config, const std::filesystem::path& out_dir);

// ---- ablations -----------------------------------------------------------------

struct GridRow {
    std::string label;
    std::function<void(RunConfig&)> apply;
};

std::vector<std::string> grid_names();
/// Throws ConfigError listing the valid names for an unknown grid.
std::vector<GridRow> ablation_grid(const std::string& name);
/// Trains every row from the base seed and evaluates the eval split; one table row each.
std::vector<MetricRow> ablate(const std::string& grid, const RunConfig& base,
                              const std::filesystem::path& out_dir);

// ---- overlays ------------------------------------------------------------------

std::string overlay_caption(double iou);
/// Translucent prediction, target contour and IoU caption at the image's size.
void render_overlay(const Image& image, const BinaryMask& pred, const BinaryMask& target,
                    const std::filesystem::path& out_path);

}  // namespace uavseg
