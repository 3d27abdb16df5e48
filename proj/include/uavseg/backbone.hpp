#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavseg/nn.hpp"
#include "uavseg/types.hpp"

namespace uavseg {

/// Word-level vocabulary. Ids are dense from 0; the first five are reserved.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kAnswerStart = 2;
    static constexpr int kMaskToken = 3;
    static constexpr int kSeparator = 4;
    static constexpr int kSpecialCount = 5;

    Vocabulary();

    /// Specials followed by every distinct word of `texts` in lexicographic order.
    static Vocabulary build(const std::vector<std::string>& texts);
    /// Lower-cased alphanumeric runs.
    static std::vector<std::string> tokenize(std::string_view text);

    std::vector<int> encode(std::string_view text) const;
    int id(std::string_view token) const;
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(tokens_.size()); }

    nlohmann::json to_json() const;
    /// Expects {token: id}; throws InputError unless ids are dense and specials intact.
    static Vocabulary from_json(const nlohmann::json& j);

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    void push(const std::string& token);
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

/// Half-open [start, end) position range.
struct Span {
    int start = 0;
    int end = 0;
    int size() const { return end - start; }
    bool contains(int p) const { return p >= start && p < end; }
    bool operator==(const Span&) const = default;
};

struct TokenSequence {
    Tensor embeddings;     // [L, d]
    std::vector<int> ids;  // vocabulary id per position, -1 for visual tokens
    int mask_token_index = -1;
    Span visual_span;
    Span text_span;
    /// Teacher-forced answer tokens placed after the Mask Token (training only).
    Span suffix_span;

    int length() const { return static_cast<int>(ids.size()); }
};

struct BackboneConfig {
    int d_model = 128;
    int depth = 2;
    int heads = 4;
    int ffn_multiplier = 4;
    int max_positions = 256;
    bool positional_encoding = true;
    /// Mask embedding width handed to the decoder.
    int embedding_dim = 64;
    int vocab_size = Vocabulary::kSpecialCount;

    void validate() const;
};

/// Attention probabilities captured during a forward pass, one [L, L] per (layer, head).
struct AttentionTrace {
    std::vector<Tensor> probabilities;
};

class ReasoningBackbone {
public:
    ReasoningBackbone(BackboneConfig config, int visual_channels, ParameterStore& store, Rng& rng,
                      const std::string& prefix = "backbone");

    const BackboneConfig& config() const { return config_; }

    /// [visual tokens] ++ [instruction tokens] ++ [Mask Token].
    TokenSequence assemble_tokens(const FeatureMap& visual, std::string_view instruction,
                                  const Vocabulary& vocab) const;
    /// Same layout from pre-tokenized ids, with an optional suffix after the Mask Token.
    TokenSequence assemble(const FeatureMap& visual, const std::vector<int>& text_ids,
                           const std::vector<int>& suffix_ids = {}) const;

    /// Causal transformer stack; returns [L, d] hidden states.
    Tensor forward_reasoning(const TokenSequence& seq, AttentionTrace* trace = nullptr) const;
    /// Two-layer ReLU projection of the Mask Token's hidden state: {embedding_dim}.
    Tensor extract_mask_embedding(const Tensor& hidden, const TokenSequence& seq) const;
    /// [L, vocab] next-token logits.
    Tensor text_logits(const Tensor& hidden) const;

    /// Makes the mask projection an exact identity (requires d_model == embedding_dim).
    void set_mask_projection_identity();

private:
    struct Block {
        LayerNorm ln_attn;
        Linear qkv;
        Linear attn_out;
        LayerNorm ln_ffn;
        Linear ffn_in;
        Linear ffn_out;
    };

    Tensor attention(const Block& block, const Tensor& x, AttentionTrace* trace) const;

    BackboneConfig config_;
    Linear visual_proj_;
    Tensor token_embedding_;
    Tensor position_embedding_;
    std::vector<Block> blocks_;
    LayerNorm final_ln_;
    Linear mask_fc1_;
    Linear mask_fc2_;
    Linear lm_head_;
};

}  // namespace uavseg
