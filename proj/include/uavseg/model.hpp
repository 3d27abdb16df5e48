#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavseg/backbone.hpp"
#include "uavseg/data.hpp"
#include "uavseg/decoder.hpp"
#include "uavseg/encoder.hpp"
#include "uavseg/losses.hpp"

namespace uavseg {

struct ModelConfig {
    EncoderConfig encoder;
    BackboneConfig backbone;
    DecoderConfig decoder;
    std::uint64_t seed = 0;

    /// Also checks that the decoder and backbone agree on the embedding width.
    void validate() const;
};

/// Token ids for one training sample: the instruction and the teacher-forced
/// suffix [<ans>, cot..., <sep>, answer...] placed after the Mask Token.
struct SampleTokens {
    std::vector<int> question;
    std::vector<int> suffix;
    /// Suffix offset of the first answer token.
    int answer_offset = 0;
};

SampleTokens tokenize_sample(const ReasoningSample& record, const Vocabulary& vocab);

/// Encoder, backbone and decoder sharing one parameter store.
class SegmentationModel {
public:
    SegmentationModel(ModelConfig config, Vocabulary vocab);
    SegmentationModel(const SegmentationModel&) = delete;
    SegmentationModel& operator=(const SegmentationModel&) = delete;

    struct Output {
        DecodeResult decoded;
        Tensor hidden;
        Tensor text_logits;  // [L, vocab]; undefined when not requested
        TokenSequence sequence;
        Tensor embedding;
    };

    Output forward(const PreparedImage& input, const std::vector<int>& question,
                   const std::vector<int>& suffix, int out_h, int out_w, bool with_text) const;

    struct SampleLoss {
        Tensor total;
        LossReport report;
    };

    /// Weighted text + BCE + Dice loss. The text term covers the answer tokens,
    /// or the CoT and answer when `text_includes_cot` is set.
    SampleLoss sample_loss(const PreparedImage& input, const SampleTokens& tokens,
                           const BinaryMask& target, const LossWeights& weights,
                           bool text_includes_cot) const;

    MaskLogits predict_logits(const Image& image, std::string_view question) const;
    BinaryMask predict(const Image& image, std::string_view question) const;

    const ModelConfig& config() const { return config_; }
    const Vocabulary& vocab() const { return vocab_; }
    ParameterStore& parameters() { return store_; }
    const ParameterStore& parameters() const { return store_; }
    const DualPathEncoder& encoder() const { return *encoder_; }
    const ReasoningBackbone& backbone() const { return *backbone_; }
    const HierarchicalDecoder& decoder() const { return *decoder_; }

private:
    ModelConfig config_;
    Vocabulary vocab_;
    ParameterStore store_;
    std::unique_ptr<DualPathEncoder> encoder_;
    std::unique_ptr<ReasoningBackbone> backbone_;
    std::unique_ptr<HierarchicalDecoder> decoder_;
};

// ---- checkpoints -------------------------------------------------------------

/// "UAVSEG01", u32 tensor count, then per tensor: u32 name length, name bytes,
/// u32 rank, u32 dims, float32 values. Integers and floats are little-endian.
void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path);
/// Names, order and shapes must match the store; throws InputError otherwise.
void load_checkpoint(ParameterStore& store, const std::filesystem::path& path);

}  // namespace uavseg
