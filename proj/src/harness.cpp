#include "uavseg/harness.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "uavseg/errors.hpp"

namespace uavseg {

namespace fs = std::filesystem;
using nlohmann::json;

Predictor model_predictor(const SegmentationModel& model) {
    return [&model](const Example& ex) { return model.predict(ex.image, ex.record.question); };
}

MetricAccumulator evaluate(const std::vector<Example>& examples, const Predictor& predict) {
    return evaluate_shard(examples, predict, 0, 1);
}

MetricAccumulator evaluate_shard(const std::vector<Example>& examples, const Predictor& predict,
                                 int shard, int shard_count) {
    if (shard_count < 1 || shard < 0 || shard >= shard_count) {
        throw InputError("shard index must be in [0, shard_count)");
    }
    MetricAccumulator acc;
    for (std::size_t i = static_cast<std::size_t>(shard); i < examples.size();
         i += static_cast<std::size_t>(shard_count)) {
        const Example& ex = examples[i];
        acc.add(ex.record.reasoning_type, predict(ex), ex.mask);
    }
    return acc;
}

void write_report_tables(const fs::path& dir, const std::vector<MetricRow>& rows) {
    fs::create_directories(dir);
    std::ofstream(dir / "report.csv") << render_csv(rows);
    std::ofstream(dir / "report.md") << render_markdown(rows);
}

Vocabulary corpus_vocabulary(const Corpus& corpus) {
    std::vector<std::string> texts;
    for (const auto& r : corpus.records) {
        texts.push_back(r.question);
        texts.insert(texts.end(), r.cot.begin(), r.cot.end());
        texts.push_back(r.answer);
    }
    return Vocabulary::build(texts);
}

void save_run(const SegmentationModel& model, const RunConfig& config, const fs::path& dir) {
    fs::create_directories(dir);
    save_checkpoint(model.parameters(), dir / "checkpoint.bin");
    std::ofstream(dir / "config.json") << to_json(config).dump(2) << '\n';
    std::ofstream(dir / "vocab.json") << model.vocab().to_json().dump() << '\n';
}

std::unique_ptr<SegmentationModel> load_run(const fs::path& dir, RunConfig* config_out) {
    const RunConfig config = load_run_config(dir / "config.json");
    std::ifstream vin(dir / "vocab.json");
    if (!vin) throw InputError("cannot read " + (dir / "vocab.json").string());
    json vj = json::parse(vin, nullptr, false);
    if (vj.is_discarded()) throw InputError("invalid vocab.json in " + dir.string());
    auto model = std::make_unique<SegmentationModel>(config.model, Vocabulary::from_json(vj));
    load_checkpoint(model->parameters(), dir / "checkpoint.bin");
    if (config_out) *config_out = config;
    return model;
}

namespace {

json metrics_json(const MetricAccumulator& acc) {
    json j = json::object();
    for (ReasoningType t : kReasoningTypes) {
        if (acc.count(t) == 0) continue;
        j[std::string(to_string(t))] = {{"giou", giou(acc, t)}, {"ciou", ciou(acc, t)}, {"count", acc.count(t)}};
    }
    if (acc.count() > 0) j["overall"] = {{"giou", giou(acc)}, {"ciou", ciou(acc)}, {"count", acc.count()}};
    return j;
}

std::string directory_label(const std::string& label) {
    std::string out;
    for (char c : label) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    return out;
}

}  // namespace

RunReport run_training(const RunConfig& config, const fs::path& out_dir) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    const Corpus corpus = load_corpus(config.data_root);
    const auto train_examples = load_examples(corpus, config.train_split);
    if (train_examples.empty()) throw InputError("split '" + config.train_split + "' of " + config.data_root + " is empty");

    SegmentationModel model(config.model, corpus_vocabulary(corpus));
    const auto samples = prepare_samples(model, train_examples, config.cot_mode, config.seed);
    TrainOptions options;
    options.loss_log = out_dir / "loss.jsonl";
    TrainResult trained = train_model(model, samples, config, options);
    save_run(model, config, out_dir);

    RunReport report;
    report.fingerprint = config_fingerprint(config);
    report.epoch_mean_loss = trained.epoch_mean_loss;
    report.log = std::move(trained.log);
    const Predictor predict = model_predictor(model);
    std::vector<MetricRow> rows;
    for (const std::string& split : {config.train_split, config.eval_split}) {
        if (report.metrics.count(split)) continue;
        const auto examples = split == config.train_split ? train_examples : load_examples(corpus, split);
        report.metrics[split] = evaluate(examples, predict);
        rows.push_back({split, "uavseg", report.metrics[split]});
    }
    write_report_tables(out_dir, rows);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    json j;
    j["fingerprint"] = report.fingerprint;
    j["epoch_mean_loss"] = report.epoch_mean_loss;
    j["wall_clock_seconds"] = report.seconds;
    for (const auto& [split, acc] : report.metrics) j["metrics"][split] = metrics_json(acc);
    std::ofstream(out_dir / "report.json") << j.dump(2) << '\n';
    return report;
}

std::vector<std::string> grid_names() { return {"fusion_layers", "decoder_depth", "fusion_direction", "cot"}; }

std::vector<GridRow> ablation_grid(const std::string& name) {
    std::vector<GridRow> rows;
    if (name == "fusion_layers") {
        const std::vector<std::pair<std::string, std::set<int>>> patterns{
            {"none", {}}, {"4", {4}}, {"3+4", {3, 4}}, {"2+3+4", {2, 3, 4}}, {"1+2+3+4", {1, 2, 3, 4}}};
        for (const auto& [label, stages] : patterns) {
            rows.push_back({"layers " + label, [stages](RunConfig& c) { c.model.encoder.active_fusion_stages = stages; }});
        }
    } else if (name == "decoder_depth") {
        for (int depth = 1; depth <= 3; ++depth) {
            rows.push_back({"depth " + std::to_string(depth), [depth](RunConfig& c) { c.model.decoder.depth = depth; }});
        }
    } else if (name == "fusion_direction") {
        for (auto direction : {FusionDirection::FineIntoGlobal, FusionDirection::Sum, FusionDirection::GlobalIntoFine}) {
            rows.push_back({std::string(to_string(direction)),
                            [direction](RunConfig& c) { c.model.encoder.fusion_direction = direction; }});
        }
    } else if (name == "cot") {
        rows.push_back({"cot on", [](RunConfig& c) { c.cot_mode = CotMode::On; }});
        rows.push_back({"cot off", [](RunConfig& c) { c.cot_mode = CotMode::Off; }});
    } else {
        std::string valid;
        for (const auto& n : grid_names()) valid += (valid.empty() ? "" : ", ") + n;
        throw ConfigError("unknown grid '" + name + "'; valid grids: " + valid);
    }
    return rows;
}

std::vector<MetricRow> ablate(const std::string& grid, const RunConfig& base, const fs::path& out_dir) {
    const auto rows = ablation_grid(grid);
    std::vector<MetricRow> table;
    for (const auto& row : rows) {
        RunConfig config = base;
        row.apply(config);
        config.validate();
        const RunReport report = run_training(config, out_dir / grid / directory_label(row.label));
        table.push_back({row.label, "uavseg", report.metrics.at(config.eval_split)});
    }
    write_report_tables(out_dir, table);
    return table;
}

std::string overlay_caption(double iou_value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "IoU %.3f", iou_value);
    return buf;
}

void render_overlay(const Image& image, const BinaryMask& pred, const BinaryMask& target,
                    const fs::path& out_path) {
    image.validate();
    if (pred.height != image.height || pred.width != image.width || !pred.same_shape(target)) {
        throw InputError("overlay masks must match the image size");
    }
    const double score = iou(pred, target).iou;

    cv::Mat canvas(image.height, image.width, CV_8UC3);
    cv::Mat target_mat(image.height, image.width, CV_8UC1);
    constexpr float kAlpha = 0.45f;
    const cv::Vec3f pred_bgr(0.0f, 0.0f, 255.0f);
    for (int y = 0; y < image.height; ++y) {
        auto* row = canvas.ptr<cv::Vec3b>(y);
        auto* trow = target_mat.ptr<unsigned char>(y);
        for (int x = 0; x < image.width; ++x) {
            cv::Vec3f px(image.at(2, y, x) * 255.0f, image.at(1, y, x) * 255.0f, image.at(0, y, x) * 255.0f);
            if (pred.at(y, x)) px = (1.0f - kAlpha) * px + kAlpha * pred_bgr;
            row[x] = cv::Vec3b(cv::saturate_cast<uchar>(px[0]), cv::saturate_cast<uchar>(px[1]),
                               cv::saturate_cast<uchar>(px[2]));
            trow[x] = target.at(y, x) ? 255 : 0;
        }
    }
    std::vector<std::vector<cv::Point>> contours;
    cv::findContours(target_mat, contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_NONE);
    cv::drawContours(canvas, contours, -1, cv::Scalar(0, 255, 0), 1);

    const double font_scale = std::max(0.3, image.width / 320.0);
    const cv::Point origin(2, std::max(10, static_cast<int>(12 * font_scale / 0.4)));
    const std::string caption = overlay_caption(score);
    cv::putText(canvas, caption, origin, cv::FONT_HERSHEY_SIMPLEX, font_scale, cv::Scalar(0, 0, 0), 3);
    cv::putText(canvas, caption, origin, cv::FONT_HERSHEY_SIMPLEX, font_scale, cv::Scalar(255, 255, 255), 1);

    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    if (!cv::imwrite(out_path.string(), canvas)) throw std::runtime_error("cannot write overlay " + out_path.string());
}

}  // namespace uavseg
