#include "uavseg/backbone.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "uavseg/errors.hpp"

namespace uavseg {

namespace {
constexpr std::array<const char*, Vocabulary::kSpecialCount> kSpecials{
    "<pad>", "<unk>", "<ans>", "<mask>", "<sep>"};
}

Vocabulary::Vocabulary() {
    for (const char* s : kSpecials) push(s);
}

void Vocabulary::push(const std::string& token) {
    ids_.emplace(token, static_cast<int>(tokens_.size()));
    tokens_.push_back(token);
}

std::vector<std::string> Vocabulary::tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            out.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
    std::set<std::string> words;
    for (const auto& t : texts) {
        for (auto& w : tokenize(t)) words.insert(std::move(w));
    }
    Vocabulary v;
    for (const auto& w : words) {
        if (!v.ids_.count(w)) v.push(w);
    }
    return v;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& w : tokenize(text)) ids.push_back(id(w));
    return ids;
}

int Vocabulary::id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw InternalError("token id out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

nlohmann::json Vocabulary::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = static_cast<int>(i);
    return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InputError("vocabulary must be a JSON object");
    std::vector<std::string> tokens(j.size());
    std::vector<bool> filled(j.size(), false);
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.value().is_number_integer()) throw InputError("vocabulary id for '" + it.key() + "' is not an integer");
        const auto id = it.value().get<long long>();
        if (id < 0 || id >= static_cast<long long>(tokens.size()) || filled[id]) {
            throw InputError("vocabulary ids must be dense and unique");
        }
        tokens[id] = it.key();
        filled[id] = true;
    }
    for (int i = 0; i < kSpecialCount; ++i) {
        if (static_cast<int>(tokens.size()) <= i || tokens[i] != kSpecials[i]) {
            throw InputError(std::string("vocabulary is missing special token ") + kSpecials[i]);
        }
    }
    Vocabulary v;
    for (std::size_t i = kSpecialCount; i < tokens.size(); ++i) v.push(tokens[i]);
    return v;
}

void BackboneConfig::validate() const {
    if (d_model < 1 || heads < 1 || d_model % heads != 0) {
        throw ConfigError("backbone.d_model must be a positive multiple of backbone.heads");
    }
    if (depth < 1) throw ConfigError("backbone.depth must be >= 1");
    if (ffn_multiplier < 1) throw ConfigError("backbone.ffn_multiplier must be >= 1");
    if (max_positions < 2) throw ConfigError("backbone.max_positions must be >= 2");
    if (embedding_dim < 1) throw ConfigError("backbone.embedding_dim must be >= 1");
    if (vocab_size < Vocabulary::kSpecialCount) throw ConfigError("vocabulary too small");
}

ReasoningBackbone::ReasoningBackbone(BackboneConfig config, int visual_channels,
                                     ParameterStore& store, Rng& rng, const std::string& prefix)
    : config_(config) {
    config_.validate();
    const int d = config_.d_model;
    visual_proj_ = Linear::create(store, prefix + ".visual_proj", visual_channels, d, true, rng);
    token_embedding_ = store.add_uniform(prefix + ".token_embedding", {config_.vocab_size, d}, 0.1f, rng);
    if (config_.positional_encoding) {
        position_embedding_ =
            store.add_uniform(prefix + ".position_embedding", {config_.max_positions, d}, 0.05f, rng);
    }
    for (int i = 0; i < config_.depth; ++i) {
        const std::string name = prefix + ".block" + std::to_string(i);
        Block b;
        b.ln_attn = LayerNorm::create(store, name + ".ln_attn", d);
        b.qkv = Linear::create(store, name + ".qkv", d, 3 * d, true, rng);
        b.attn_out = Linear::create(store, name + ".attn_out", d, d, true, rng);
        b.ln_ffn = LayerNorm::create(store, name + ".ln_ffn", d);
        b.ffn_in = Linear::create(store, name + ".ffn_in", d, config_.ffn_multiplier * d, true, rng);
        b.ffn_out = Linear::create(store, name + ".ffn_out", config_.ffn_multiplier * d, d, true, rng);
        blocks_.push_back(std::move(b));
    }
    final_ln_ = LayerNorm::create(store, prefix + ".final_ln", d);
    mask_fc1_ = Linear::create(store, prefix + ".mask_proj.fc1", d, 2 * d, true, rng);
    mask_fc2_ = Linear::create(store, prefix + ".mask_proj.fc2", 2 * d, config_.embedding_dim, true, rng);
    lm_head_ = Linear::create(store, prefix + ".lm_head", d, config_.vocab_size, true, rng);
}

TokenSequence ReasoningBackbone::assemble_tokens(const FeatureMap& visual,
                                                 std::string_view instruction,
                                                 const Vocabulary& vocab) const {
    std::vector<int> ids = vocab.encode(instruction);
    if (ids.empty()) {
        throw InputError("instruction is empty after tokenization");
    }
    return assemble(visual, ids);
}

TokenSequence ReasoningBackbone::assemble(const FeatureMap& visual, const std::vector<int>& text_ids,
                                          const std::vector<int>& suffix_ids) const {
    if (text_ids.empty()) {
        throw InputError("instruction is empty after tokenization");
    }
    const int n_visual = visual.tokens();
    const int n_text = static_cast<int>(text_ids.size());
    const int n_suffix = static_cast<int>(suffix_ids.size());
    const int length = n_visual + n_text + 1 + n_suffix;
    if (config_.positional_encoding && length > config_.max_positions) {
        throw InputError("token sequence of length " + std::to_string(length) +
                         " exceeds backbone.max_positions " + std::to_string(config_.max_positions));
    }
    for (int id : text_ids) {
        if (id < 0 || id >= config_.vocab_size) throw InputError("token id outside vocabulary");
    }
    for (int id : suffix_ids) {
        if (id < 0 || id >= config_.vocab_size) throw InputError("token id outside vocabulary");
    }

    TokenSequence seq;
    seq.visual_span = {0, n_visual};
    seq.text_span = {n_visual, n_visual + n_text};
    seq.mask_token_index = n_visual + n_text;
    seq.suffix_span = {seq.mask_token_index + 1, length};
    seq.ids.assign(static_cast<std::size_t>(n_visual), -1);
    seq.ids.insert(seq.ids.end(), text_ids.begin(), text_ids.end());
    seq.ids.push_back(Vocabulary::kMaskToken);
    seq.ids.insert(seq.ids.end(), suffix_ids.begin(), suffix_ids.end());

    Tensor grid = reshape(visual.values(), {visual.channels(), n_visual});
    Tensor visual_tokens = visual_proj_.forward(transpose(grid));
    std::vector<int> token_ids(seq.ids.begin() + n_visual, seq.ids.end());
    Tensor text_tokens = embedding(token_embedding_, token_ids);
    Tensor x = concat_rows({visual_tokens, text_tokens});
    if (config_.positional_encoding) {
        x = add(x, slice_rows(position_embedding_, 0, length));
    }
    seq.embeddings = x;
    return seq;
}

Tensor ReasoningBackbone::attention(const Block& block, const Tensor& x, AttentionTrace* trace) const {
    const int d = config_.d_model;
    const int dh = d / config_.heads;
    const float inv = 1.0f / std::sqrt(static_cast<float>(dh));
    Tensor qkv = block.qkv.forward(x);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(config_.heads));
    for (int h = 0; h < config_.heads; ++h) {
        Tensor q = slice_cols(qkv, h * dh, dh);
        Tensor k = slice_cols(qkv, d + h * dh, dh);
        Tensor v = slice_cols(qkv, 2 * d + h * dh, dh);
        Tensor p = softmax_rows(scale(matmul(q, k, false, true), inv), true);
        if (trace) trace->probabilities.push_back(p);
        heads.push_back(matmul(p, v));
    }
    return block.attn_out.forward(heads.size() == 1 ? heads.front() : concat_cols(heads));
}

Tensor ReasoningBackbone::forward_reasoning(const TokenSequence& seq, AttentionTrace* trace) const {
    Tensor x = seq.embeddings;
    for (const Block& b : blocks_) {
        x = add(x, attention(b, b.ln_attn.forward(x), trace));
        Tensor f = b.ffn_out.forward(gelu(b.ffn_in.forward(b.ln_ffn.forward(x))));
        x = add(x, f);
    }
    return final_ln_.forward(x);
}

Tensor ReasoningBackbone::extract_mask_embedding(const Tensor& hidden, const TokenSequence& seq) const {
    if (seq.mask_token_index < 0 || seq.mask_token_index >= hidden.dim(0)) {
        throw InternalError("mask token index " + std::to_string(seq.mask_token_index) +
                            " outside hidden states of length " + std::to_string(hidden.dim(0)));
    }
    Tensor h = slice_rows(hidden, seq.mask_token_index, 1);
    Tensor e = mask_fc2_.forward(relu(mask_fc1_.forward(h)));
    return reshape(e, {config_.embedding_dim});
}

Tensor ReasoningBackbone::text_logits(const Tensor& hidden) const { return lm_head_.forward(hidden); }

void ReasoningBackbone::set_mask_projection_identity() {
    const int d = config_.d_model;
    if (config_.embedding_dim != d) {
        throw InternalError("identity mask projection needs embedding_dim == d_model");
    }
    // relu(h) - relu(-h) == h
    auto w1 = mask_fc1_.weight.mutable_data();
    auto w2 = mask_fc2_.weight.mutable_data();
    std::fill(w1.begin(), w1.end(), 0.0f);
    std::fill(w2.begin(), w2.end(), 0.0f);
    for (int i = 0; i < d; ++i) {
        w1[static_cast<std::size_t>(i) * d + i] = 1.0f;
        w1[static_cast<std::size_t>(d + i) * d + i] = -1.0f;
        w2[static_cast<std::size_t>(i) * 2 * d + i] = 1.0f;
        w2[static_cast<std::size_t>(i) * 2 * d + d + i] = -1.0f;
    }
    auto b1 = mask_fc1_.bias.mutable_data();
    auto b2 = mask_fc2_.bias.mutable_data();
    std::fill(b1.begin(), b1.end(), 0.0f);
    std::fill(b2.begin(), b2.end(), 0.0f);
}

}  // namespace uavseg
