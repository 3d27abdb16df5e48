#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "uavseg/nn.hpp"
#include "uavseg/types.hpp"

namespace uavseg {

enum class Illumination { Day, Night };

std::string_view to_string(Illumination illumination);

/// One corpus record. Paths are relative to the corpus root.
struct ReasoningSample {
    std::string id;
    std::string image_path;
    std::string mask_path;
    ReasoningType reasoning_type = ReasoningType::Spatial;
    std::string question;
    std::vector<std::string> cot;
    std::string answer;
    int altitude_m = 60;
    Illumination illumination = Illumination::Day;

    bool operator==(const ReasoningSample&) const = default;
};

nlohmann::json to_json(const ReasoningSample& sample);
std::string serialize_record(const ReasoningSample& sample);

struct ParseOptions {
    /// When set, image/mask paths must resolve under this root and agree in size.
    std::optional<std::filesystem::path> root;
    /// Unknown fields become warnings instead of errors.
    bool lenient = false;
};

/// Strict schema validation; throws ValidationError naming the offending field.
ReasoningSample parse_record(std::string_view json_text, const ParseOptions& options = {},
                             std::vector<std::string>* warnings = nullptr);
ReasoningSample parse_record(const nlohmann::json& j, const ParseOptions& options = {},
                             std::vector<std::string>* warnings = nullptr);

// ---- image and mask files --------------------------------------------------

Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);

/// Run-length form: counts alternate 0-runs and 1-runs in row-major order,
/// starting with a (possibly empty) 0-run.
struct RleMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint32_t> counts;
};

RleMask encode_rle(const BinaryMask& mask);
BinaryMask decode_rle(const RleMask& rle);
nlohmann::json to_json(const RleMask& rle);
RleMask rle_from_json(const nlohmann::json& j);

/// Sidecar path for a mask image: "x.png" -> "x.rle.json".
std::filesystem::path rle_sidecar_path(const std::filesystem::path& mask_path);
/// Single-channel {0,255} PNG, plus the RLE sidecar when requested.
void encode_mask(const BinaryMask& mask, const std::filesystem::path& path, bool write_rle = false);
/// Reads a {0,255} image (or an .rle.json file); throws InputError on other values.
BinaryMask decode_mask(const std::filesystem::path& path);

// ---- splits and statistics -------------------------------------------------

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;

    const std::vector<std::string>& by_name(std::string_view name) const;
};

/// Sorted ids shuffled by `seed`, cut floor(3n/10) / floor(2n/10) / remainder.
DatasetSplit split_dataset(std::vector<std::string> ids, std::uint64_t seed);

/// A record with its decoded image and mask.
struct Example {
    ReasoningSample record;
    Image image;
    BinaryMask mask;
};

struct CorpusStats {
    std::size_t total = 0;
    std::map<ReasoningType, std::size_t> by_type;
    std::map<int, std::size_t> by_altitude;
    std::map<Illumination, std::size_t> by_illumination;
    std::size_t small_objects = 0;

    double type_fraction(ReasoningType type) const;
    double small_object_fraction() const;
    nlohmann::json to_json() const;
};

/// Small object: mask area / (H * W) < 0.02.
bool is_small_object(const BinaryMask& mask);
CorpusStats corpus_stats(const std::vector<Example>& examples);

// ---- corpus on disk --------------------------------------------------------

/// Layout: records.jsonl, manifest.json, images/, masks/.
struct Corpus {
    std::filesystem::path root;
    std::vector<ReasoningSample> records;
    DatasetSplit split;

    const ReasoningSample& record(const std::string& id) const;
};

Corpus load_corpus(const std::filesystem::path& root, const ParseOptions& options = {});
void write_manifest(const std::filesystem::path& root, const std::vector<ReasoningSample>& records,
                    const DatasetSplit& split, std::uint64_t seed);
void write_records(const std::filesystem::path& root, const std::vector<ReasoningSample>& records);
Example load_example(const Corpus& corpus, const ReasoningSample& record);
/// Examples of one split, in manifest order; "all" selects every record.
std::vector<Example> load_examples(const Corpus& corpus, std::string_view split);

// ---- chain-of-thought treatments ------------------------------------------

enum class CotMode { On, Off, Mask, Shuffle, Semantic };

std::string_view to_string(CotMode mode);
std::optional<CotMode> parse_cot_mode(std::string_view text);

/// Dataset transform for the CoT ablation: drop, mask words, shuffle steps, or
/// swap descriptive words (colors, shapes, directions) for wrong ones.
ReasoningSample apply_cot_mode(ReasoningSample sample, CotMode mode, Rng& rng);

}  // namespace uavseg
