#include "uavseg/model.hpp"

#include <bit>
#include <fstream>

#include "uavseg/errors.hpp"

namespace uavseg {

void ModelConfig::validate() const {
    encoder.validate();
    backbone.validate();
    decoder.validate();
    if (decoder.embedding_dim != backbone.embedding_dim) {
        throw ConfigError("decoder.embedding_dim (" + std::to_string(decoder.embedding_dim) +
                          ") must equal backbone.embedding_dim (" +
                          std::to_string(backbone.embedding_dim) + ")");
    }
}

SampleTokens tokenize_sample(const ReasoningSample& record, const Vocabulary& vocab) {
    SampleTokens t;
    t.question = vocab.encode(record.question);
    if (t.question.empty()) throw InputError("question of " + record.id + " has no tokens");
    t.suffix.push_back(Vocabulary::kAnswerStart);
    for (const auto& step : record.cot) {
        auto ids = vocab.encode(step);
        t.suffix.insert(t.suffix.end(), ids.begin(), ids.end());
    }
    t.suffix.push_back(Vocabulary::kSeparator);
    t.answer_offset = static_cast<int>(t.suffix.size());
    auto answer = vocab.encode(record.answer);
    t.suffix.insert(t.suffix.end(), answer.begin(), answer.end());
    return t;
}

SegmentationModel::SegmentationModel(ModelConfig config, Vocabulary vocab)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
    config_.backbone.vocab_size = vocab_.size();
    config_.validate();
    Rng rng(config_.seed);
    encoder_ = std::make_unique<DualPathEncoder>(config_.encoder, store_, rng);
    backbone_ = std::make_unique<ReasoningBackbone>(config_.backbone, config_.encoder.output_channels(),
                                                    store_, rng);
    decoder_ = std::make_unique<HierarchicalDecoder>(config_.decoder, config_.encoder.fine_channels,
                                                     store_, rng);
}

SegmentationModel::Output SegmentationModel::forward(const PreparedImage& input,
                                                     const std::vector<int>& question,
                                                     const std::vector<int>& suffix, int out_h,
                                                     int out_w, bool with_text) const {
    EncodedImage encoded = encoder_->encode(input);
    Output out;
    out.sequence = backbone_->assemble(encoded.tokens, question, suffix);
    out.hidden = backbone_->forward_reasoning(out.sequence);
    out.embedding = backbone_->extract_mask_embedding(out.hidden, out.sequence);
    out.decoded = decoder_->decode(encoded.pyramid, out.embedding, out_h, out_w);
    if (with_text) out.text_logits = backbone_->text_logits(out.hidden);
    return out;
}

SegmentationModel::SampleLoss SegmentationModel::sample_loss(const PreparedImage& input,
                                                             const SampleTokens& tokens,
                                                             const BinaryMask& target,
                                                             const LossWeights& weights,
                                                             bool text_includes_cot) const {
    const int out_h = config_.decoder.output_height > 0 ? config_.decoder.output_height : target.height;
    const int out_w = config_.decoder.output_width > 0 ? config_.decoder.output_width : target.width;
    if (out_h != target.height || out_w != target.width) {
        throw InputError("decoder output size differs from the target mask size");
    }
    Output out = forward(input, tokens.question, tokens.suffix, out_h, out_w, weights.txt != 0.0);

    // Row p predicts the token at p + 1.
    Tensor txt = Tensor::scalar(0.0f);
    bool text_active = false;
    if (out.text_logits.defined()) {
        const int length = out.sequence.length();
        std::vector<int> next(static_cast<std::size_t>(length), -1);
        for (int p = 0; p + 1 < length; ++p) next[static_cast<std::size_t>(p)] = out.sequence.ids[p + 1];
        const int mask_index = out.sequence.mask_token_index;
        const int start = text_includes_cot ? mask_index : mask_index + tokens.answer_offset;
        const Span span{start, length - 1};
        txt = text_loss_tensor(out.text_logits, next, span);
        text_active = span.size() > 0;
    }
    Tensor ref = bce_mask_loss_tensor(out.decoded.fused, target);
    Tensor dice = dice_loss_tensor(sigmoid(out.decoded.fused.values()), target,
                                   static_cast<float>(weights.dice_smooth));

    SampleLoss result;
    result.total = add(add(scale(txt, static_cast<float>(weights.txt)),
                           scale(ref, static_cast<float>(weights.ref))),
                       scale(dice, static_cast<float>(weights.dice)));
    result.report.txt = txt.item();
    result.report.ref = ref.item();
    result.report.dice = dice.item();
    result.report.text_active = text_active;
    result.report.total = weights.txt * result.report.txt + weights.ref * result.report.ref +
                          weights.dice * result.report.dice;
    return result;
}

MaskLogits SegmentationModel::predict_logits(const Image& image, std::string_view question) const {
    NoGradGuard no_grad;
    const auto ids = vocab_.encode(question);
    if (ids.empty()) throw InputError("instruction is empty after tokenization");
    const int out_h = config_.decoder.output_height > 0 ? config_.decoder.output_height : image.height;
    const int out_w = config_.decoder.output_width > 0 ? config_.decoder.output_width : image.width;
    return forward(encoder_->prepare(image), ids, {}, out_h, out_w, false).decoded.fused;
}

BinaryMask SegmentationModel::predict(const Image& image, std::string_view question) const {
    return predict_logits(image, question).binarize();
}

// ---- checkpoints -------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'U', 'A', 'V', 'S', 'E', 'G', '0', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        throw InputError("truncated checkpoint " + path.string());
    }
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put_u32(out, static_cast<std::uint32_t>(store.size()));
    for (const auto& [name, tensor] : store.entries()) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
        for (int d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

void load_checkpoint(ParameterStore& store, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kMagic)) {
        throw InputError(path.string() + " is not a UAVSEG01 checkpoint");
    }
    const std::uint32_t count = get_u32(in, path);
    if (count != store.size()) {
        throw InputError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                         std::to_string(store.size()));
    }
    // Read everything first so a mismatch leaves the store untouched.
    std::vector<std::vector<float>> values;
    for (const auto& [name, tensor] : store.entries()) {
        const std::uint32_t name_len = get_u32(in, path);
        if (name_len > 4096) throw InputError("corrupt checkpoint " + path.string());
        std::string stored(name_len, '\0');
        if (!in.read(stored.data(), name_len)) throw InputError("truncated checkpoint " + path.string());
        if (stored != name) throw InputError("checkpoint tensor '" + stored + "' where '" + name + "' expected");
        const std::uint32_t rank = get_u32(in, path);
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(get_u32(in, path)));
        if (shape != tensor.shape()) {
            throw InputError("checkpoint shape " + shape_string(shape) + " for " + name + ", model has " +
                             shape_string(tensor.shape()));
        }
        std::vector<float> v(tensor.numel());
        for (float& x : v) x = std::bit_cast<float>(get_u32(in, path));
        values.push_back(std::move(v));
    }
    std::size_t i = 0;
    for (const auto& entry : store.entries()) {
        Tensor t = entry.second;
        std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
        ++i;
    }
}

}  // namespace uavseg
