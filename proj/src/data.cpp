#include "uavseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "uavseg/errors.hpp"
#include "uavseg/synth.hpp"

namespace uavseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Illumination illumination) {
    return illumination == Illumination::Day ? "day" : "night";
}

json to_json(const ReasoningSample& s) {
    return json{{"id", s.id},
                {"image_path", s.image_path},
                {"mask_path", s.mask_path},
                {"reasoning_type", std::string(to_string(s.reasoning_type))},
                {"question", s.question},
                {"cot", s.cot},
                {"answer", s.answer},
                {"altitude_m", s.altitude_m},
                {"illumination", std::string(to_string(s.illumination))}};
}

std::string serialize_record(const ReasoningSample& sample) { return to_json(sample).dump(); }

namespace {

const std::set<std::string>& known_fields() {
    static const std::set<std::string> fields{"id",     "image_path", "mask_path",
                                              "reasoning_type", "question", "cot",
                                              "answer", "altitude_m", "illumination"};
    return fields;
}

const json& field(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) throw ValidationError(name, "missing field");
    return *it;
}

std::string string_field(const json& j, const char* name, bool non_empty) {
    const json& v = field(j, name);
    if (!v.is_string()) throw ValidationError(name, "must be a string");
    std::string s = v.get<std::string>();
    if (non_empty && s.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw ValidationError(name, "must not be empty");
    }
    return s;
}

}  // namespace

ReasoningSample parse_record(std::string_view json_text, const ParseOptions& options,
                             std::vector<std::string>* warnings) {
    json j = json::parse(json_text.begin(), json_text.end(), nullptr, false);
    if (j.is_discarded()) throw ValidationError("record", "not valid JSON");
    return parse_record(j, options, warnings);
}

ReasoningSample parse_record(const json& j, const ParseOptions& options,
                             std::vector<std::string>* warnings) {
    if (!j.is_object()) throw ValidationError("record", "must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known_fields().count(it.key())) {
            if (!options.lenient) throw ValidationError(it.key(), "unknown field");
            if (warnings) warnings->push_back("unknown field '" + it.key() + "' ignored");
        }
    }

    ReasoningSample s;
    s.id = string_field(j, "id", true);
    s.image_path = string_field(j, "image_path", true);
    s.mask_path = string_field(j, "mask_path", true);
    const std::string type = string_field(j, "reasoning_type", true);
    auto parsed_type = parse_reasoning_type(type);
    if (!parsed_type) {
        throw ValidationError("reasoning_type", "'" + type + "' is not one of spatial, attribute, scene");
    }
    s.reasoning_type = *parsed_type;
    s.question = string_field(j, "question", true);
    s.answer = string_field(j, "answer", true);

    const json& cot = field(j, "cot");
    if (!cot.is_array()) throw ValidationError("cot", "must be an array of strings");
    for (const auto& step : cot) {
        if (!step.is_string()) throw ValidationError("cot", "must be an array of strings");
        s.cot.push_back(step.get<std::string>());
    }

    const json& altitude = field(j, "altitude_m");
    if (!altitude.is_number_integer()) throw ValidationError("altitude_m", "must be an integer");
    s.altitude_m = altitude.get<int>();
    if (s.altitude_m != 30 && s.altitude_m != 60 && s.altitude_m != 100) {
        throw ValidationError("altitude_m", "must be one of 30, 60, 100");
    }

    const std::string illum = string_field(j, "illumination", true);
    if (illum == "day") {
        s.illumination = Illumination::Day;
    } else if (illum == "night") {
        s.illumination = Illumination::Night;
    } else {
        throw ValidationError("illumination", "'" + illum + "' is not one of day, night");
    }

    if (options.root) {
        const fs::path image_file = *options.root / s.image_path;
        const fs::path mask_file = *options.root / s.mask_path;
        if (!fs::exists(image_file)) throw ValidationError("image_path", "cannot resolve " + image_file.string());
        if (!fs::exists(mask_file)) throw ValidationError("mask_path", "cannot resolve " + mask_file.string());
        const Image image = load_image(image_file);
        const BinaryMask mask = decode_mask(mask_file);
        if (mask.height != image.height || mask.width != image.width) {
            throw ValidationError("mask_path", "mask " + std::to_string(mask.height) + "x" +
                                                   std::to_string(mask.width) +
                                                   " does not match image " +
                                                   std::to_string(image.height) + "x" +
                                                   std::to_string(image.width));
        }
    }
    return s;
}

// ---- images and masks ------------------------------------------------------

Image load_image(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw InputError("cannot read image " + path.string());
    Image img = Image::zeros(bgr.rows, bgr.cols);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][2 - c] / 255.0f;
        }
    }
    return img;
}

void save_image(const Image& image, const fs::path& path) {
    image.validate();
    cv::Mat bgr(image.height, image.width, CV_8UC3);
    for (int y = 0; y < image.height; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                row[x][2 - c] = static_cast<unsigned char>(std::lround(image.at(c, y, x) * 255.0f));
            }
        }
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), bgr)) throw std::runtime_error("cannot write " + path.string());
}

RleMask encode_rle(const BinaryMask& mask) {
    RleMask rle;
    rle.height = mask.height;
    rle.width = mask.width;
    std::uint8_t current = 0;
    std::uint32_t run = 0;
    for (std::uint8_t bit : mask.bits) {
        if (bit > 1) throw InputError("mask values must be 0 or 1");
        if (bit != current) {
            rle.counts.push_back(run);
            run = 0;
            current = bit;
        }
        ++run;
    }
    rle.counts.push_back(run);
    return rle;
}

BinaryMask decode_rle(const RleMask& rle) {
    if (rle.height < 0 || rle.width < 0) throw InputError("RLE size must be non-negative");
    BinaryMask mask = BinaryMask::zeros(rle.height, rle.width);
    std::size_t pos = 0;
    std::uint8_t value = 0;
    for (std::uint32_t run : rle.counts) {
        if (pos + run > mask.bits.size()) throw InputError("RLE counts exceed mask size");
        std::fill_n(mask.bits.begin() + static_cast<std::ptrdiff_t>(pos), run, value);
        pos += run;
        value ^= 1;
    }
    if (pos != mask.bits.size()) throw InputError("RLE counts do not cover the mask");
    return mask;
}

json to_json(const RleMask& rle) {
    return json{{"size", {rle.height, rle.width}}, {"counts", rle.counts}};
}

RleMask rle_from_json(const json& j) {
    if (!j.is_object() || !j.contains("size") || !j.contains("counts")) {
        throw InputError("RLE JSON needs 'size' and 'counts'");
    }
    const json& size = j.at("size");
    if (!size.is_array() || size.size() != 2) throw InputError("RLE size must be [H, W]");
    RleMask rle;
    rle.height = size[0].get<int>();
    rle.width = size[1].get<int>();
    rle.counts = j.at("counts").get<std::vector<std::uint32_t>>();
    return rle;
}

fs::path rle_sidecar_path(const fs::path& mask_path) {
    fs::path p = mask_path;
    p.replace_extension(".rle.json");
    return p;
}

void encode_mask(const BinaryMask& mask, const fs::path& path, bool write_rle) {
    cv::Mat img(mask.height, mask.width, CV_8UC1);
    for (int y = 0; y < mask.height; ++y) {
        auto* row = img.ptr<unsigned char>(y);
        for (int x = 0; x < mask.width; ++x) {
            const std::uint8_t bit = mask.at(y, x);
            if (bit > 1) throw InputError("mask values must be 0 or 1");
            row[x] = bit ? 255 : 0;
        }
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) throw std::runtime_error("cannot write " + path.string());
    if (write_rle) {
        std::ofstream out(rle_sidecar_path(path));
        out << to_json(encode_rle(mask)).dump() << '\n';
    }
}

BinaryMask decode_mask(const fs::path& path) {
    const std::string name = path.filename().string();
    if (name.size() > 5 && name.ends_with(".json")) {
        std::ifstream in(path);
        if (!in) throw InputError("cannot read " + path.string());
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw InputError("invalid RLE JSON in " + path.string());
        return decode_rle(rle_from_json(j));
    }
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (img.empty()) throw InputError("cannot read mask " + path.string());
    if (img.type() != CV_8UC1) throw InputError("mask " + path.string() + " is not single-channel 8-bit");
    BinaryMask mask = BinaryMask::zeros(img.rows, img.cols);
    for (int y = 0; y < img.rows; ++y) {
        const auto* row = img.ptr<unsigned char>(y);
        for (int x = 0; x < img.cols; ++x) {
            if (row[x] != 0 && row[x] != 255) {
                throw InputError("non-binary mask value " + std::to_string(row[x]) + " at (" +
                                 std::to_string(y) + "," + std::to_string(x) + ") in " + path.string());
            }
            mask.at(y, x) = row[x] ? 1 : 0;
        }
    }
    return mask;
}

// ---- splits and statistics -------------------------------------------------

const std::vector<std::string>& DatasetSplit::by_name(std::string_view name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw InputError("unknown split '" + std::string(name) + "' (expected train, val, test)");
}

DatasetSplit split_dataset(std::vector<std::string> ids, std::uint64_t seed) {
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
        throw InputError("duplicate id in split input");
    }
    Rng rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n = ids.size();
    const std::size_t n_train = 3 * n / 10;
    const std::size_t n_val = 2 * n / 10;
    DatasetSplit split;
    split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                     ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
    return split;
}

bool is_small_object(const BinaryMask& mask) {
    // area / (H W) < 0.02, compared exactly in integers.
    return 50 * mask.area() < mask.size();
}

double CorpusStats::type_fraction(ReasoningType type) const {
    if (total == 0) return 0.0;
    auto it = by_type.find(type);
    return it == by_type.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(total);
}

double CorpusStats::small_object_fraction() const {
    return total == 0 ? 0.0 : static_cast<double>(small_objects) / static_cast<double>(total);
}

json CorpusStats::to_json() const {
    json j;
    j["total"] = total;
    for (ReasoningType t : kReasoningTypes) {
        const auto it = by_type.find(t);
        j["reasoning_type"][std::string(to_string(t))] = it == by_type.end() ? 0 : it->second;
        j["reasoning_type_fraction"][std::string(to_string(t))] = type_fraction(t);
    }
    for (const auto& [alt, n] : by_altitude) j["altitude_m"][std::to_string(alt)] = n;
    for (const auto& [il, n] : by_illumination) j["illumination"][std::string(to_string(il))] = n;
    j["small_objects"] = small_objects;
    j["small_object_fraction"] = small_object_fraction();
    return j;
}

CorpusStats corpus_stats(const std::vector<Example>& examples) {
    CorpusStats stats;
    for (const Example& ex : examples) {
        ++stats.total;
        ++stats.by_type[ex.record.reasoning_type];
        ++stats.by_altitude[ex.record.altitude_m];
        ++stats.by_illumination[ex.record.illumination];
        if (is_small_object(ex.mask)) ++stats.small_objects;
    }
    return stats;
}

// ---- corpus on disk --------------------------------------------------------

const ReasoningSample& Corpus::record(const std::string& id) const {
    for (const auto& r : records) {
        if (r.id == id) return r;
    }
    throw InputError("unknown record id " + id);
}

void write_records(const fs::path& root, const std::vector<ReasoningSample>& records) {
    fs::create_directories(root);
    std::ofstream out(root / "records.jsonl");
    for (const auto& r : records) out << serialize_record(r) << '\n';
}

void write_manifest(const fs::path& root, const std::vector<ReasoningSample>& records,
                    const DatasetSplit& split, std::uint64_t seed) {
    json j;
    std::vector<std::string> ids;
    for (const auto& r : records) ids.push_back(r.id);
    j["ids"] = ids;
    j["seed"] = seed;
    j["split"] = {{"train", split.train}, {"val", split.val}, {"test", split.test}};
    fs::create_directories(root);
    std::ofstream out(root / "manifest.json");
    out << j.dump(2) << '\n';
}

Corpus load_corpus(const fs::path& root, const ParseOptions& options) {
    Corpus corpus;
    corpus.root = root;
    ParseOptions opts = options;
    if (!opts.root) opts.root = root;

    const fs::path jsonl = root / "records.jsonl";
    if (fs::exists(jsonl)) {
        std::ifstream in(jsonl);
        std::string line;
        while (std::getline(in, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            corpus.records.push_back(parse_record(std::string_view(line), opts));
        }
    } else if (fs::is_directory(root / "records")) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(root / "records")) {
            if (entry.path().extension() == ".json") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            std::ifstream in(f);
            std::stringstream buf;
            buf << in.rdbuf();
            corpus.records.push_back(parse_record(std::string_view(buf.str()), opts));
        }
    } else {
        throw InputError("no records.jsonl or records/ under " + root.string());
    }
    if (corpus.records.empty()) throw InputError("corpus " + root.string() + " is empty");

    std::vector<std::string> ids;
    for (const auto& r : corpus.records) ids.push_back(r.id);
    const fs::path manifest = root / "manifest.json";
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.contains("split")) throw InputError("invalid manifest.json");
        corpus.split.train = j["split"].value("train", std::vector<std::string>{});
        corpus.split.val = j["split"].value("val", std::vector<std::string>{});
        corpus.split.test = j["split"].value("test", std::vector<std::string>{});
        std::set<std::string> known(ids.begin(), ids.end());
        for (const auto* part : {&corpus.split.train, &corpus.split.val, &corpus.split.test}) {
            for (const auto& id : *part) {
                if (!known.count(id)) throw InputError("manifest references unknown id " + id);
            }
        }
    } else {
        corpus.split = split_dataset(ids, 0);
    }
    return corpus;
}

Example load_example(const Corpus& corpus, const ReasoningSample& record) {
    Example ex;
    ex.record = record;
    ex.image = load_image(corpus.root / record.image_path);
    ex.mask = decode_mask(corpus.root / record.mask_path);
    return ex;
}

std::vector<Example> load_examples(const Corpus& corpus, std::string_view split) {
    std::vector<Example> out;
    if (split == "all") {
        for (const auto& r : corpus.records) out.push_back(load_example(corpus, r));
        return out;
    }
    for (const auto& id : corpus.split.by_name(split)) {
        out.push_back(load_example(corpus, corpus.record(id)));
    }
    return out;
}

// ---- chain-of-thought treatments ------------------------------------------

std::string_view to_string(CotMode mode) {
    switch (mode) {
        case CotMode::On: return "on";
        case CotMode::Off: return "off";
        case CotMode::Mask: return "mask";
        case CotMode::Shuffle: return "shuffle";
        case CotMode::Semantic: return "semantic";
    }
    return "unknown";
}

std::optional<CotMode> parse_cot_mode(std::string_view text) {
    for (auto m : {CotMode::On, CotMode::Off, CotMode::Mask, CotMode::Shuffle, CotMode::Semantic}) {
        if (to_string(m) == text) return m;
    }
    return std::nullopt;
}

namespace {

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) out += (i ? " " : "") + words[i];
    return out;
}

// Replaces a descriptive word with a different member of its category, keeping
// trailing punctuation.
std::string corrupt_word(const std::string& word, Rng& rng) {
    std::string core = word;
    std::string tail;
    while (!core.empty() && !std::isalnum(static_cast<unsigned char>(core.back()))) {
        tail.insert(tail.begin(), core.back());
        core.pop_back();
    }
    auto pick_other = [&](auto const& names) -> std::string {
        std::vector<std::string_view> others;
        for (auto n : names) {
            if (n != core) others.push_back(n);
        }
        std::uniform_int_distribution<std::size_t> d(0, others.size() - 1);
        return std::string(others[d(rng)]);
    };
    static const std::vector<std::pair<std::string, std::string>> opposites{
        {"left", "right"}, {"top", "bottom"}, {"largest", "smallest"},
        {"nearest", "farthest"}, {"smallest", "largest"}, {"farthest", "nearest"},
        {"right", "left"}, {"bottom", "top"}, {"leftmost", "rightmost"},
        {"rightmost", "leftmost"}, {"topmost", "bottommost"}, {"bottommost", "topmost"}};
    if (std::find(kColorNames.begin(), kColorNames.end(), core) != kColorNames.end()) {
        return pick_other(kColorNames) + tail;
    }
    if (std::find(kShapeNames.begin(), kShapeNames.end(), core) != kShapeNames.end()) {
        return pick_other(kShapeNames) + tail;
    }
    for (const auto& [from, to] : opposites) {
        if (core == from) return to + tail;
    }
    return word;
}

}  // namespace

ReasoningSample apply_cot_mode(ReasoningSample sample, CotMode mode, Rng& rng) {
    switch (mode) {
        case CotMode::On:
            break;
        case CotMode::Off:
            sample.cot.clear();
            break;
        case CotMode::Mask: {
            std::bernoulli_distribution coin(0.5);
            for (auto& step : sample.cot) {
                auto words = split_words(step);
                for (auto& w : words) {
                    if (coin(rng)) w = "masked";
                }
                step = join_words(words);
            }
            break;
        }
        case CotMode::Shuffle:
            std::shuffle(sample.cot.begin(), sample.cot.end(), rng);
            break;
        case CotMode::Semantic:
            for (auto& step : sample.cot) {
                auto words = split_words(step);
                for (auto& w : words) w = corrupt_word(w, rng);
                step = join_words(words);
            }
            break;
    }
    return sample;
}

}  // namespace uavseg
