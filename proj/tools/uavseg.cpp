#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uavseg/errors.hpp"
#include "uavseg/harness.hpp"
#include "uavseg/synth.hpp"

namespace fs = std::filesystem;
using namespace uavseg;

namespace {

struct RunFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> cot;
    std::optional<std::string> data;
    std::vector<std::string> overrides;
};

void add_run_flags(CLI::App* cmd, RunFlags& flags) {
    cmd->add_option("--config", flags.config, "TOML or JSON run config");
    cmd->add_option("--seed", flags.seed, "Seed override");
    cmd->add_option("--cot", flags.cot, "CoT treatment")
        ->check(CLI::IsMember({"on", "off", "mask", "shuffle", "semantic"}));
    cmd->add_option("--data", flags.data, "Corpus root override");
    cmd->add_option("--set", flags.overrides, "Config override key=value (repeatable)");
}

RunConfig resolve_config(const RunFlags& flags) {
    std::vector<std::string> overrides = flags.overrides;
    if (flags.seed) overrides.push_back("seed=" + std::to_string(*flags.seed));
    if (flags.cot) overrides.push_back("train.cot_mode=\"" + *flags.cot + "\"");
    if (flags.data) overrides.push_back("data.root=\"" + *flags.data + "\"");
    return load_run_config(flags.config, overrides);
}

void print_table(const std::vector<MetricRow>& rows) { std::cout << render_markdown(rows); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reasoning segmentation toolkit: synthetic data, training, evaluation and ablations"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
    SynthOptions synth_opts;
    std::string synth_out = "data";
    synth->add_option("--out", synth_out, "Corpus root");
    synth->add_option("--seed", synth_opts.seed, "Generator seed");
    synth->add_option("-n,--count", synth_opts.count, "Number of samples");
    synth->add_option("--canvas", synth_opts.canvas_size, "Image side in pixels");

    // train
    auto* train = app.add_subcommand("train", "Train a model and evaluate it");
    RunFlags train_flags;
    std::string train_out = "runs/train";
    add_run_flags(train, train_flags);
    train->add_option("--out", train_out, "Run directory");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a saved run on a split");
    std::string eval_run;
    std::string eval_split = "val";
    std::string eval_out;
    std::optional<std::string> eval_data;
    eval->add_option("--checkpoint", eval_run, "Run directory holding checkpoint.bin")->required();
    eval->add_option("--split", eval_split, "Split")->check(CLI::IsMember({"train", "val", "test", "all"}));
    eval->add_option("--out", eval_out, "Directory for report.csv/report.md");
    eval->add_option("--data", eval_data, "Corpus root override");

    // ablate
    auto* abl = app.add_subcommand("ablate", "Run an ablation grid");
    RunFlags abl_flags;
    std::string grid;
    std::string abl_out = "runs/ablate";
    add_run_flags(abl, abl_flags);
    abl->add_option("--grid", grid, "fusion_layers, decoder_depth, fusion_direction or cot")->required();
    abl->add_option("--out", abl_out, "Output directory");

    // stats
    auto* stats = app.add_subcommand("stats", "Corpus statistics as JSON");
    std::string stats_data = "data";
    std::string stats_split = "all";
    stats->add_option("--data", stats_data, "Corpus root");
    stats->add_option("--split", stats_split, "Split")->check(CLI::IsMember({"train", "val", "test", "all"}));

    // overlay
    auto* overlay = app.add_subcommand("overlay", "Render prediction overlays for a split");
    std::string overlay_run;
    std::string overlay_split = "val";
    std::string overlay_out = "overlays";
    std::optional<std::string> overlay_data;
    overlay->add_option("--checkpoint", overlay_run, "Run directory holding checkpoint.bin")->required();
    overlay->add_option("--split", overlay_split, "Split")->check(CLI::IsMember({"train", "val", "test", "all"}));
    overlay->add_option("--out", overlay_out, "Output directory");
    overlay->add_option("--data", overlay_data, "Corpus root override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) {
            const auto samples = synthesize_dataset(synth_opts, synth_out);
            std::cout << "wrote " << samples.size() << " samples to " << synth_out << '\n';
        } else if (*train) {
            const RunConfig config = resolve_config(train_flags);
            const RunReport report = run_training(config, train_out);
            std::vector<MetricRow> rows;
            for (const auto& [split, acc] : report.metrics) rows.push_back({split, "uavseg", acc});
            print_table(rows);
            std::cout << "run saved to " << train_out << " (" << report.seconds << " s)\n";
        } else if (*eval) {
            RunConfig config;
            auto model = load_run(eval_run, &config);
            const Corpus corpus = load_corpus(eval_data ? *eval_data : config.data_root);
            const auto examples = load_examples(corpus, eval_split);
            const std::vector<MetricRow> rows{{eval_split, "uavseg", evaluate(examples, model_predictor(*model))}};
            write_report_tables(eval_out.empty() ? fs::path(eval_run) : fs::path(eval_out), rows);
            print_table(rows);
        } else if (*abl) {
            const RunConfig config = resolve_config(abl_flags);
            print_table(ablate(grid, config, abl_out));
        } else if (*stats) {
            const Corpus corpus = load_corpus(stats_data);
            std::cout << corpus_stats(load_examples(corpus, stats_split)).to_json().dump(2) << '\n';
        } else if (*overlay) {
            RunConfig config;
            auto model = load_run(overlay_run, &config);
            const Corpus corpus = load_corpus(overlay_data ? *overlay_data : config.data_root);
            for (const auto& ex : load_examples(corpus, overlay_split)) {
                render_overlay(ex.image, model->predict(ex.image, ex.record.question), ex.mask,
                               fs::path(overlay_out) / (ex.record.id + ".png"));
            }
            std::cout << "overlays written to " << overlay_out << '\n';
        }
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return 2;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
