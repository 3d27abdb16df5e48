// Acceptance suite: one PASS/FAIL line per criterion. Arguments select a subset
// of criterion numbers; the exit status is non-zero when any selected one fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "backbone_probe.hpp"
#include "generators.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "stage_probes.hpp"
#include "tempdir.hpp"
#include "tiny.hpp"
#include "uavseg/config.hpp"
#include "uavseg/data.hpp"
#include "uavseg/decoder.hpp"
#include "uavseg/errors.hpp"
#include "uavseg/harness.hpp"
#include "uavseg/losses.hpp"
#include "uavseg/metrics.hpp"
#include "uavseg/synth.hpp"

using namespace uavseg;
using namespace uavseg::testing;
namespace fs = std::filesystem;

namespace {

// Records the first failed expectation and a short summary for the report line.
class Check {
public:
    void expect(bool ok, const std::string& what) {
        ++count_;
        if (!ok && failure_.empty()) failure_ = what;
    }
    void near(double got, double want, double tol, const std::string& what) {
        std::ostringstream msg;
        msg << what << ": got " << got << ", want " << want << " +/- " << tol;
        expect(std::abs(got - want) <= tol, msg.str());
    }
    void below(double got, double limit, const std::string& what) {
        std::ostringstream msg;
        msg << what << ": " << got << " not below " << limit;
        expect(got < limit, msg.str());
    }
    bool ok() const { return failure_.empty(); }
    const std::string& failure() const { return failure_; }
    int count() const { return count_; }

    std::string summary;

private:
    std::string failure_;
    int count_ = 0;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << std::fixed << v;
    return s.str();
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---- 1: metric oracles -----------------------------------------------------------

void metric_oracles(Check& c) {
    Rng rng(101);
    struct Pair {
        ReasoningType type;
        BinaryMask pred, target;
    };
    std::vector<Pair> pairs;
    for (int i = 0; i < 100; ++i) {
        const int h = uniform_int(rng, 1, 64), w = uniform_int(rng, 1, 64);
        const double density = uniform_real(rng, 0.0, 1.0);
        pairs.push_back({kReasoningTypes[uniform_int(rng, 0, 2)], random_mask(rng, h, w, density),
                         random_mask(rng, h, w, uniform_real(rng, 0.0, 1.0))});
    }
    MetricAccumulator whole;
    std::map<ReasoningType, std::vector<double>> ious;
    std::map<ReasoningType, PixelCounts> totals;
    for (const auto& p : pairs) {
        const IouResult r = whole.add(p.type, p.pred, p.target);
        const PixelCounts counts = count_pixels(p.pred, p.target);
        c.near(r.iou, oracle_iou(p.pred, p.target), 1e-9, "iou");
        c.expect(r.intersection == static_cast<std::uint64_t>(counts.intersection), "intersection count");
        c.expect(r.union_count == static_cast<std::uint64_t>(counts.uni), "union count");
        ious[p.type].push_back(oracle_iou(p.pred, p.target));
        totals[p.type].intersection += counts.intersection;
        totals[p.type].uni += counts.uni;
    }
    for (ReasoningType t : kReasoningTypes) {
        if (ious[t].empty()) continue;
        const double mean = std::accumulate(ious[t].begin(), ious[t].end(), 0.0) / ious[t].size();
        const double cumulative = totals[t].uni == 0 ? 1.0 : double(totals[t].intersection) / double(totals[t].uni);
        c.near(giou(whole, t), mean, 1e-9, "gIoU " + std::string(to_string(t)));
        c.near(ciou(whole, t), cumulative, 1e-9, "cIoU " + std::string(to_string(t)));
    }
    double worst = 0.0;
    for (int sharding = 0; sharding < 5; ++sharding) {
        const int shards = uniform_int(rng, 2, 7);
        std::vector<MetricAccumulator> parts(shards);
        for (const auto& p : pairs) parts[uniform_int(rng, 0, shards - 1)].add(p.type, p.pred, p.target);
        MetricAccumulator merged;
        for (const auto& part : parts) merged = merge(merged, part);
        c.expect(merged.count() == whole.count(), "merged sample count");
        for (ReasoningType t : kReasoningTypes) {
            if (whole.count(t) == 0) continue;
            worst = std::max({worst, std::abs(giou(merged, t) - giou(whole, t)), std::abs(ciou(merged, t) - ciou(whole, t))});
        }
        worst = std::max({worst, std::abs(giou(merged) - giou(whole)), std::abs(ciou(merged) - ciou(whole))});
    }
    c.expect(worst <= 1e-12, "merge deviation " + std::to_string(worst));
    c.summary = "100 pairs, 5 shardings, max merge deviation " + std::to_string(worst);
}

// ---- 2: operator identities --------------------------------------------------------

void fill(Tensor t, float value) {
    auto v = t.mutable_data();
    std::fill(v.begin(), v.end(), value);
}

bool identical(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

void operator_identities(Check& c) {
    // Closed gate: the fused latent is the stage transform of its input, bit for bit.
    for (int k = 1; k <= 3; ++k) {
        ParameterStore store;
        Rng rng(200 + k);
        DualPathEncoder enc(tiny_encoder_config(), store, rng);
        FusionStageState& s = enc.stage(k);
        fill(s.gate_weight, 0.0f);
        fill(s.gate_bias, -1000.0f);
        const FeatureMap prev = random_stage_input(rng, s);
        const FeatureMap source(random_tensor(rng, {s.align_weight.dim(1), 4, 4}));
        const FeatureMap fused = fuse_stage(prev, align(source, s), s);
        c.expect(identical(fused.values(), s.transform.forward(prev.values())), "closed gate, stage " + std::to_string(k));
    }
    // Identity channel projection at the native size leaves features unchanged.
    {
        ParameterStore store;
        Rng rng(210);
        DualPathEncoder enc(tiny_encoder_config(), store, rng);
        FusionStageState s = enc.stage(1);
        s.target_height = 4;
        s.target_width = 4;
        s.align_weight = Tensor::from({2, 2}, {1, 0, 0, 1});
        const FeatureMap src(random_tensor(rng, {2, 4, 4}));
        c.expect(identical(align(src, s).values(), src.values()), "identity alignment");
    }
    // Identity mask projection: the embedding is the Mask Token's hidden state.
    {
        const Vocabulary vocab = Vocabulary::build({"which shape is leftmost", "the red circle"});
        BackboneConfig bc = tiny_backbone_config(vocab.size());
        bc.embedding_dim = bc.d_model;
        ParameterStore store;
        Rng rng(211);
        ReasoningBackbone backbone(bc, 2, store, rng);
        backbone.set_mask_projection_identity();
        const TokenSequence seq = backbone.assemble(FeatureMap(random_tensor(rng, {2, 2, 2})), {5, 6, 7});
        const Tensor hidden = backbone.forward_reasoning(seq);
        const Tensor e = backbone.extract_mask_embedding(hidden, seq);
        bool same = e.numel() == static_cast<std::size_t>(bc.d_model);
        for (int i = 0; same && i < bc.d_model; ++i) same = e.at(i) == hidden.at(seq.mask_token_index * bc.d_model + i);
        c.expect(same, "identity mask projection");
    }
    // Modulation multipliers.
    Rng rng(220);
    const FeatureMap f(random_tensor(rng, {3, 4, 4}));
    const auto modulated = [&](float logit) {
        return modulate_features(f, MaskLogits(Tensor::full({2, 2}, logit))).values();
    };
    const Tensor mid = modulated(0.0f), low = modulated(-40.0f), high = modulated(40.0f);
    double low_err = 0.0, high_err = 0.0;
    for (std::size_t i = 0; i < f.values().numel(); ++i) {
        const float x = f.values().at(i);
        c.expect(mid.at(i) == 1.5f * x, "multiplier 1.5 at logit 0");
        low_err = std::max(low_err, std::abs(double(low.at(i)) - x));
        high_err = std::max(high_err, std::abs(double(high.at(i)) - 2.0 * x));
    }
    c.below(low_err, 1e-6, "multiplier at -40");
    c.below(high_err, 1e-6, "multiplier at +40");
    // Weighted level fusion: one-hot weights select, and fusion is linear.
    std::vector<MaskLogits> masks{MaskLogits(random_tensor(rng, {4, 4})), MaskLogits(random_tensor(rng, {2, 2})),
                                  MaskLogits(random_tensor(rng, {1, 1}))};
    for (int pick = 0; pick < 3; ++pick) {
        std::vector<float> onehot(3, 0.0f);
        onehot[pick] = 1.0f;
        const Tensor fused = fuse_level_masks(masks, Tensor::from({3}, onehot), 8, 8).values();
        const int side = masks[pick].height();
        const auto expected = naive_bilinear({masks[pick].values().data().begin(), masks[pick].values().data().end()},
                                             1, side, side, 8, 8);
        double err = 0.0;
        for (std::size_t i = 0; i < expected.size(); ++i) err = std::max(err, std::abs(fused.at(i) - expected[i]));
        c.below(err, 1e-6, "level selection " + std::to_string(pick));
    }
    double lin_err = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<MaskLogits> a, b, ab;
        const float alpha = uniform_real(rng, -1.0, 1.0), beta = uniform_real(rng, -1.0, 1.0);
        for (int l = 0; l < 3; ++l) {
            const int h = uniform_int(rng, 1, 5), w = uniform_int(rng, 1, 5);
            const Tensor x = random_tensor(rng, {h, w}), y = random_tensor(rng, {h, w});
            a.emplace_back(x);
            b.emplace_back(y);
            ab.emplace_back(add(scale(x, alpha), scale(y, beta)));
        }
        const Tensor gamma = random_tensor(rng, {3});
        const Tensor fa = fuse_level_masks(a, gamma, 6, 6).values(), fb = fuse_level_masks(b, gamma, 6, 6).values();
        const Tensor fab = fuse_level_masks(ab, gamma, 6, 6).values();
        for (std::size_t i = 0; i < 36; ++i) {
            lin_err = std::max(lin_err, std::abs(double(fab.at(i)) - (alpha * fa.at(i) + beta * fb.at(i))));
        }
    }
    c.below(lin_err, 1e-6, "fusion linearity");
    c.summary = "closed gates exact, multipliers within " + fmt(std::max(low_err, high_err), 9) + ", linearity " +
                fmt(lin_err, 9);
}

// ---- 3: gradients ---------------------------------------------------------------------

void gradients(Check& c) {
    double worst = 0.0;
    int groups = 0;
    auto record = [&](const GradCheck& r, const std::string& what) {
        ++groups;
        worst = std::max(worst, r.relative_error);
        c.below(r.relative_error, 1e-3, what);
    };
    // Gates, alignments and stage transforms, stage by stage.
    for (auto direction : {FusionDirection::FineIntoGlobal, FusionDirection::GlobalIntoFine}) {
        ParameterStore store;
        Rng rng(300);
        DualPathEncoder enc(tiny_encoder_config(direction), store, rng);
        for (FusionStageState* s : gated_stages(enc)) {
            Rng in_rng(310 + s->stage);
            const FeatureMap prev = random_stage_input(in_rng, *s);
            const FeatureMap source(random_tensor(in_rng, {s->align_weight.dim(1), 4, 4}));
            auto loss = [&] { return probe(fuse_stage(prev, align(source, *s), *s).values()); };
            for (const Tensor& p : stage_tensors(*s)) {
                record(check_gradient(loss, p), std::string(to_string(direction)) + " stage " + std::to_string(s->stage));
            }
        }
    }
    // Output fusion projections.
    {
        ParameterStore store;
        Rng rng(320);
        DualPathEncoder enc(tiny_encoder_config(), store, rng);
        const OutputFusion& out = enc.output_fusion();
        const FeatureMap f3(random_tensor(rng, {out.global_weight.dim(1), 2, 2}));
        FeaturePyramid pyramid;
        for (int l = 0; l < 3; ++l) pyramid.levels[l] = FeatureMap(random_tensor(rng, {out.fine_weight.dim(1), 4 >> l, 4 >> l}));
        auto loss = [&] { return probe(final_fuse(f3, pyramid, out, true).values()); };
        record(check_gradient(loss, out.global_weight), "output fusion global");
        record(check_gradient(loss, out.fine_weight), "output fusion fine");
    }
    // The rest of the encoder end to end.
    for (auto direction : {FusionDirection::FineIntoGlobal, FusionDirection::Sum, FusionDirection::GlobalIntoFine}) {
        ParameterStore store;
        Rng rng(330);
        DualPathEncoder enc(tiny_encoder_config(direction), store, rng);
        std::set<const float*> isolated;
        for (FusionStageState* s : gated_stages(enc)) {
            for (const Tensor& p : stage_tensors(*s)) isolated.insert(storage(p));
        }
        Rng img_rng(331);
        const PreparedImage in = enc.prepare(random_image(img_rng, 16, 16));
        auto loss = [&] {
            EncodedImage e = enc.encode(in);
            return add(probe(e.tokens.values()), probe(e.pyramid.levels[0].values()));
        };
        for (const auto& [name, p] : store.entries()) {
            if (!isolated.count(storage(p))) record(check_gradient(loss, p), name);
        }
    }
    // Decoder projections and level weights.
    for (int depth : {1, 2, 3}) {
        ParameterStore store;
        Rng rng(340);
        HierarchicalDecoder dec(DecoderConfig{depth, 3, 0, 0}, {2, 3, 4}, store, rng);
        FeaturePyramid p;
        for (int l = 0; l < 3; ++l) p.levels[l] = FeatureMap(random_tensor(rng, {2 + l, 4 >> l, 4 >> l}));
        Tensor e = random_parameter(rng, {3});
        auto loss = [&] { return probe(dec.decode(p, e, 4, 4).fused.values()); };
        record(check_gradient(loss, e), "decoder embedding input");
        for (const auto& [name, param] : store.entries()) {
            const GradCheck r = check_gradient(loss, param);
            if (r.analytic_norm == 0.0 && r.numeric_norm == 0.0) continue;  // level unused at this depth
            record(r, "depth " + std::to_string(depth) + " " + name);
        }
    }
    // Backbone, through the mask embedding, the text head and every hidden row.
    {
        const BackboneProbe p(350);
        for (const auto& [name, param] : p.store.entries()) {
            record(check_gradient([&] { return p.loss(); }, param, BackboneProbe::kStep), name);
        }
    }
    // Loss paths.
    {
        Rng rng(360);
        const BinaryMask t = random_mask(rng, 4, 4, 0.5);
        Tensor z = random_parameter(rng, {4, 4}, -2.0f, 2.0f);
        record(check_gradient([&] { return dice_loss_tensor(sigmoid(z), t); }, z), "dice");
        record(check_gradient([&] { return bce_mask_loss_tensor(MaskLogits(z), t); }, z), "bce");
        Tensor logits = random_parameter(rng, {4, 6}, -2.0f, 2.0f);
        const std::vector<int> target_ids{5, 0, 2, 3};
        record(check_gradient([&] { return text_loss_tensor(logits, target_ids, Span{1, 4}); }, logits), "text");
    }
    c.summary = std::to_string(groups) + " parameter groups, worst relative error " + fmt(worst, 6);
}

// ---- 4: token budget ---------------------------------------------------------------

void token_budget(Check& c) {
    Rng img_rng(400);
    const Image img = random_image(img_rng, 128, 128);
    const Vocabulary vocab = Vocabulary::build({"which shape is leftmost"});
    std::vector<int> counts;
    for (int fine : {128, 256, 512}) {
        EncoderConfig ec;
        ec.fine_input_size = fine;
        ec.global_channels = {8, 8, 8, 8};
        ec.fine_channels = {4, 4, 4};
        ParameterStore store;
        Rng rng(401);
        DualPathEncoder enc(ec, store, rng);
        BackboneConfig bc = tiny_backbone_config(vocab.size());
        bc.max_positions = 128;
        ReasoningBackbone backbone(bc, 8, store, rng);
        const EncodedImage encoded = enc.encode(img);
        const TokenSequence seq = backbone.assemble(encoded.tokens, {5, 6, 7});
        counts.push_back(seq.visual_span.size());
        c.expect(encoded.tokens.tokens() == seq.visual_span.size(), "grid and sequence agree");
    }
    c.expect(counts[0] == counts[1] && counts[1] == counts[2], "visual token count varies with fine input size");
    c.summary = "visual tokens " + std::to_string(counts[0]) + "/" + std::to_string(counts[1]) + "/" +
                std::to_string(counts[2]) + " for fine inputs 128/256/512";
}

// ---- 5: overfit ------------------------------------------------------------------------

constexpr int kOverfitSteps = 1500;

void overfit(Check& c) {
    TempDir dir("uavseg-overfit");
    synthesize_dataset({16, 0, 128}, dir / "data");
    RunConfig config;
    config.data_root = (dir / "data").string();
    config.train_split = "all";
    config.eval_split = "all";
    config.steps_per_epoch = 100;
    config.epochs = kOverfitSteps / config.steps_per_epoch;
    const RunReport r = run_training(config, dir / "run");
    const double g = giou(r.metrics.at("all"));
    const double at10 = r.log.at(9).loss.total;
    const double last = r.log.back().loss.total;
    c.expect(static_cast<int>(r.log.size()) <= 2000, "step budget");
    c.expect(g >= 0.90, "train gIoU " + fmt(g) + " below 0.90");
    c.expect(last < 0.1 * at10, "final loss " + fmt(last) + " not below 10% of step-10 loss " + fmt(at10));
    c.summary = std::to_string(r.log.size()) + " steps, train gIoU " + fmt(g) + ", loss " + fmt(at10) + " -> " + fmt(last);
}

// ---- 6: decoder depth ------------------------------------------------------------------

constexpr int kDepthSteps = 600;

void depth_ablation(Check& c) {
    TempDir dir("uavseg-depth");
    synthesize_dataset({64, 0, 128}, dir / "data");
    std::map<int, double> score;
    for (int depth : {1, 3}) {
        RunConfig config;
        config.data_root = (dir / "data").string();
        config.model.decoder.depth = depth;
        config.steps_per_epoch = 100;
        config.epochs = kDepthSteps / config.steps_per_epoch;
        const RunReport r = run_training(config, dir / ("depth" + std::to_string(depth)));
        score[depth] = giou(r.metrics.at("val"));
    }
    c.expect(score[3] >= score[1], "depth-3 val gIoU " + fmt(score[3]) + " below depth-1 " + fmt(score[1]));
    c.summary = "val gIoU depth 1 " + fmt(score[1]) + ", depth 3 " + fmt(score[3]) + " after " +
                std::to_string(kDepthSteps) + " steps each";
}

// ---- 7: loss values ----------------------------------------------------------------------

BinaryMask mask_of(int h, int w, std::vector<std::uint8_t> bits) {
    BinaryMask m = BinaryMask::zeros(h, w);
    m.bits = std::move(bits);
    return m;
}

void loss_values(Check& c) {
    c.near(dice_loss(Tensor::full({2, 2}, 1.0f), mask_of(2, 2, {1, 1, 1, 1})), 0.0, 1e-12, "dice perfect");
    c.near(dice_loss(Tensor::zeros({2, 2}), BinaryMask::zeros(2, 2)), 0.0, 1e-12, "dice both empty");
    c.near(dice_loss(Tensor::from({2, 2}, {0.5f, 0.5f, 0.0f, 0.0f}), mask_of(2, 2, {1, 1, 0, 0})), 0.25, 1e-12,
           "dice half");
    const BinaryMask t = mask_of(2, 3, {1, 0, 1, 0, 0, 1});
    std::vector<float> z;
    for (auto b : t.bits) z.push_back(b ? 40.0f : -40.0f);
    c.below(bce_mask_loss(MaskLogits(Tensor::from({2, 3}, z)), t), 1e-12, "bce saturated");
    c.near(bce_mask_loss(MaskLogits(Tensor::zeros({2, 3})), t), std::log(2.0), 1e-12, "bce zero logits");
    const LossWeights w;
    c.expect(w.txt == 1.0 && w.ref == 2.0 && w.dice == 0.5, "default weights 1.0/2.0/0.5");
    c.near(total_loss(0.2, 0.1, 0.4, w).total, 0.6, 1e-6, "total 0.2/0.1/0.4");
    c.near(total_loss(1, 1, 1, w).total, 3.5, 1e-6, "total 1/1/1");
    Rng rng(700);
    for (int i = 0; i < 100; ++i) {
        const double a = uniform_real(rng, 0, 5), b = uniform_real(rng, 0, 5), d = uniform_real(rng, 0, 1);
        c.near(total_loss(a, b, d, w).total, a + 2.0 * b + 0.5 * d, 1e-6, "random total");
    }
    c.summary = "dice 0/0/0.25, bce ~0 and ln 2, weighted totals exact";
}

// ---- 8: data layer --------------------------------------------------------------------------

BinaryMask strip(int n, int on, int offset = 0) {
    BinaryMask m = BinaryMask::zeros(1, n);
    for (int i = offset; i < offset + on; ++i) m.bits[i] = 1;
    return m;
}

void data_layer(Check& c) {
    TempDir dir("uavseg-codec");
    Rng rng(800);
    for (int i = 0; i < 200; ++i) {
        const BinaryMask m = random_mask(rng, 48);
        const fs::path path = dir / ("m" + std::to_string(i) + ".png");
        encode_mask(m, path, true);
        c.expect(decode_mask(path).bits == m.bits, "png round trip " + std::to_string(i));
        c.expect(decode_mask(rle_sidecar_path(path)).bits == m.bits, "rle file round trip " + std::to_string(i));
        c.expect(decode_rle(encode_rle(m)).bits == m.bits, "rle round trip " + std::to_string(i));
    }
    for (int n : {10, 100, 10000}) {
        std::vector<std::string> ids;
        for (int i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
        const DatasetSplit s = split_dataset(ids, 8);
        c.expect(s.train.size() == std::size_t(3 * n / 10) && s.val.size() == std::size_t(2 * n / 10) &&
                     s.test.size() == std::size_t(n / 2),
                 "split sizes for n=" + std::to_string(n));
    }
    const BinaryMask ref = strip(200, 100);
    BinaryMask pred = strip(200, 95);
    for (int i = 100; i < 105; ++i) pred.bits[i] = 1;
    const AlignmentCheck edge = mask_alignment_check(pred, ref);
    c.expect(edge.coverage == 0.95 && edge.miscoverage == 0.05 && edge.aligned, "0.95/0.05 is aligned");
    pred.bits[105] = 1;
    c.expect(!mask_alignment_check(pred, ref).aligned, "extra spill is not aligned");
    BinaryMask thin = strip(200, 94);
    c.expect(!mask_alignment_check(thin, ref).aligned, "0.94 coverage is not aligned");
    // 100x100 image: 199 pixels is small, 200 (exactly 2%) is not.
    BinaryMask small = BinaryMask::zeros(100, 100);
    for (int i = 0; i < 199; ++i) small.bits[i] = 1;
    c.expect(is_small_object(small), "1.99% is small");
    small.bits[199] = 1;
    c.expect(!is_small_object(small), "2% is not small");
    c.summary = "200 masks round-trip, splits 3:2:5 exact, alignment and small-object boundaries hold";
}

// ---- 9: reproducibility -------------------------------------------------------------------

RunConfig small_run(const fs::path& data) {
    RunConfig c;
    c.data_root = data.string();
    c.model.encoder.global_input_size = 16;
    c.model.encoder.patch_size = 4;
    c.model.encoder.fine_input_size = 32;
    c.model.encoder.global_channels = {4, 4, 4, 4};
    c.model.encoder.fine_channels = {4, 4, 4};
    c.model.backbone.d_model = 8;
    c.model.backbone.depth = 1;
    c.model.backbone.heads = 2;
    c.model.backbone.ffn_multiplier = 2;
    c.model.backbone.max_positions = 160;
    c.model.backbone.embedding_dim = 4;
    c.model.decoder.embedding_dim = 4;
    c.model.decoder.output_height = 64;
    c.model.decoder.output_width = 64;
    c.train_split = "all";
    c.batch_size = 2;
    c.epochs = 2;
    c.steps_per_epoch = 5;
    c.seed = 4;
    return c;
}

void reproducibility(Check& c) {
    TempDir dir("uavseg-repro");
    synthesize_dataset({12, 9, 64}, dir / "data");
    const RunConfig config = small_run(dir / "data");
    run_training(config, dir / "a");
    run_training(config, dir / "b");
    for (const char* f : {"loss.jsonl", "report.csv", "report.md", "checkpoint.bin"}) {
        const std::string a = read_file(dir / "a" / f);
        c.expect(!a.empty() && a == read_file(dir / "b" / f), std::string(f) + " differs between identical runs");
    }
    auto model = load_run(dir / "a");
    const Corpus corpus = load_corpus(config.data_root);
    const auto examples = load_examples(corpus, config.eval_split);
    const std::vector<MetricRow> reloaded{{config.eval_split, "uavseg", evaluate(examples, model_predictor(*model))}};
    // The run's report lists the train split first, then the eval split.
    const std::string table = read_file(dir / "a" / "report.csv");
    const std::string row = render_csv(reloaded).substr(render_csv(reloaded).find('\n') + 1);
    c.expect(table.find(row) != std::string::npos, "reloaded evaluation differs from the saved report");
    save_run(*model, config, dir / "c");
    c.expect(read_file(dir / "a" / "checkpoint.bin") == read_file(dir / "c" / "checkpoint.bin"), "checkpoint re-save");
    c.summary = "loss logs, tables and checkpoints bit-identical; reload reproduces the eval row";
}

struct Criterion {
    int number;
    const char* name;
    void (*run)(Check&);
    double max_seconds;  // 0: no runtime bound
};

const Criterion kCriteria[] = {
    {1, "metric oracle equivalence", metric_oracles, 10.0},
    {2, "operator identities", operator_identities, 0.0},
    {3, "gradient checks", gradients, 60.0},
    {4, "token budget invariance", token_budget, 0.0},
    {5, "overfit experiment", overfit, 900.0},
    {6, "decoder depth ablation", depth_ablation, 0.0},
    {7, "loss analytic values", loss_values, 0.0},
    {8, "data layer", data_layer, 0.0},
    {9, "reproducibility", reproducibility, 0.0},
};

}  // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    int failed = 0;
    for (const Criterion& crit : kCriteria) {
        if (!selected.empty() && !selected.count(crit.number)) continue;
        Check check;
        const auto start = std::chrono::steady_clock::now();
        try {
            crit.run(check);
        } catch (const std::exception& e) {
            check.expect(false, std::string("exception: ") + e.what());
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (crit.max_seconds > 0.0 && seconds >= crit.max_seconds) {
            check.expect(false, "runtime " + fmt(seconds, 1) + " s exceeds " + fmt(crit.max_seconds, 0) + " s");
        }
        const bool pass = check.ok();
        failed += pass ? 0 : 1;
        std::printf("%s %d %s (%.1f s): %s\n", pass ? "PASS" : "FAIL", crit.number, crit.name, seconds,
                    pass ? check.summary.c_str() : check.failure().c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
