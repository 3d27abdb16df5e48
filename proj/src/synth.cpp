#include "uavseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>

#include "uavseg/errors.hpp"

namespace uavseg {

namespace {

struct Rgb {
    float r, g, b;
};

constexpr std::array<Rgb, 7> kColorValues{{{0.85f, 0.15f, 0.15f},
                                           {0.15f, 0.30f, 0.90f},
                                           {0.95f, 0.85f, 0.15f},
                                           {0.95f, 0.95f, 0.95f},
                                           {0.60f, 0.20f, 0.75f},
                                           {0.95f, 0.55f, 0.10f},
                                           {0.10f, 0.85f, 0.90f}}};

// grass, asphalt, sand
constexpr std::array<Rgb, 3> kBackgrounds{{{0.30f, 0.42f, 0.22f},
                                           {0.35f, 0.35f, 0.37f},
                                           {0.72f, 0.64f, 0.45f}}};

constexpr Rgb kLandmarkColor{0.10f, 0.90f, 0.10f};
constexpr float kNightFactor = 0.45f;

double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double altitude_scale(int altitude) {
    switch (altitude) {
        case 30: return 1.3;
        case 60: return 1.0;
        default: return 0.75;
    }
}

struct Scene {
    std::vector<SceneObject> objects;
    SceneObject landmark;  // green marker used by the landmark selector; never a target
    int background = 0;
    int altitude = 60;
    Illumination illumination = Illumination::Day;
};

bool overlaps(const SceneObject& a, const SceneObject& b) {
    return std::hypot(a.cx - b.cx, a.cy - b.cy) < a.radius + b.radius + 2.0;
}

bool place(SceneObject& obj, const std::vector<SceneObject>& placed, int canvas, Rng& rng) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        obj.cx = uniform(rng, obj.radius + 1.0, canvas - obj.radius - 1.0);
        obj.cy = uniform(rng, obj.radius + 1.0, canvas - obj.radius - 1.0);
        if (std::none_of(placed.begin(), placed.end(),
                         [&](const SceneObject& o) { return overlaps(o, obj); })) {
            return true;
        }
    }
    return false;
}

std::optional<Scene> random_scene(int canvas, Rng& rng) {
    static constexpr std::array<int, 3> kAltitudes{30, 60, 100};
    Scene scene;
    scene.altitude = kAltitudes[static_cast<std::size_t>(uniform_int(rng, 0, 2))];
    scene.illumination = uniform(rng, 0.0, 1.0) < 0.7 ? Illumination::Day : Illumination::Night;
    scene.background = uniform_int(rng, 0, 2);
    const double scale = altitude_scale(scene.altitude);
    const int count = uniform_int(rng, 3, 10);

    std::vector<SceneObject> placed;
    scene.landmark.kind = ObjectKind::Square;
    scene.landmark.radius = std::max(3.0, 0.04 * canvas);
    if (!place(scene.landmark, placed, canvas, rng)) return std::nullopt;
    placed.push_back(scene.landmark);

    std::vector<std::pair<int, int>> used;  // (color, shape) pairs already present
    for (int i = 0; i < count; ++i) {
        SceneObject obj;
        do {
            obj.color = uniform_int(rng, 0, static_cast<int>(kColorNames.size()) - 1);
            obj.kind = static_cast<ObjectKind>(uniform_int(rng, 0, 2));
        } while (std::find(used.begin(), used.end(),
                           std::pair{obj.color, static_cast<int>(obj.kind)}) != used.end());
        obj.radius = std::max(4.0, uniform(rng, 0.05, 0.1) * canvas * scale);
        if (!place(obj, placed, canvas, rng)) return std::nullopt;
        used.emplace_back(obj.color, static_cast<int>(obj.kind));
        placed.push_back(obj);
        scene.objects.push_back(obj);
    }
    return scene;
}

// ---- selectors --------------------------------------------------------------

struct Selection {
    std::size_t target = 0;
    std::string question;
    std::vector<std::string> cot;
};

using Selector = std::function<std::optional<Selection>(const Scene&, int canvas, Rng&)>;

std::string count_step(const Scene& s) {
    return "There are " + std::to_string(s.objects.size()) + " objects in the scene.";
}

// Picks the object minimising `key`, requiring the runner-up to trail by `margin`.
std::optional<std::size_t> argmin_with_margin(const std::vector<double>& key, double margin) {
    std::vector<std::size_t> order(key.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
    if (order.size() < 2 || key[order[1]] - key[order[0]] < margin) return std::nullopt;
    return order[0];
}

Selector extreme_selector(std::string word, std::string axis_step, std::function<double(const SceneObject&)> key) {
    return [=](const Scene& s, int canvas, Rng&) -> std::optional<Selection> {
        std::vector<double> k;
        for (const auto& o : s.objects) k.push_back(key(o));
        auto t = argmin_with_margin(k, 0.05 * canvas);
        if (!t) return std::nullopt;
        const std::string name = s.objects[*t].description();
        Selection sel;
        sel.target = *t;
        sel.question = "Which object is the " + word + " one in the image?";
        sel.cot = {count_step(s), axis_step, "The " + name + " is the " + word + " object.",
                   "The target is the " + name + "."};
        return sel;
    };
}

std::optional<Selection> nearest_to_landmark(const Scene& s, int canvas, Rng&) {
    std::vector<double> d;
    for (const auto& o : s.objects) d.push_back(std::hypot(o.cx - s.landmark.cx, o.cy - s.landmark.cy));
    auto t = argmin_with_margin(d, 0.05 * canvas);
    if (!t) return std::nullopt;
    const std::string name = s.objects[*t].description();
    return Selection{*t, "Which object is nearest to the green landmark?",
                     {count_step(s), "Locate the green landmark.",
                      "Measure the distance from each object to the landmark.",
                      "The " + name + " is the nearest to the landmark.",
                      "The target is the " + name + "."}};
}

std::optional<Selection> unique_color(const Scene& s, int, Rng& rng) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
        const int c = s.objects[i].color;
        if (std::count_if(s.objects.begin(), s.objects.end(), [&](const SceneObject& o) { return o.color == c; }) == 1) {
            candidates.push_back(i);
        }
    }
    if (candidates.empty()) return std::nullopt;
    const std::size_t t = candidates[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(candidates.size()) - 1))];
    const std::string color(kColorNames[static_cast<std::size_t>(s.objects[t].color)]);
    const std::string name = s.objects[t].description();
    return Selection{t, "Segment the only " + color + " object.",
                     {count_step(s), "Group the objects by color.",
                      "Only one object is " + color + ".", "The target is the " + name + "."}};
}

std::optional<Selection> unique_shape(const Scene& s, int, Rng& rng) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
        const ObjectKind k = s.objects[i].kind;
        if (std::count_if(s.objects.begin(), s.objects.end(), [&](const SceneObject& o) { return o.kind == k; }) == 1) {
            candidates.push_back(i);
        }
    }
    if (candidates.empty()) return std::nullopt;
    const std::size_t t = candidates[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(candidates.size()) - 1))];
    const std::string shape(kShapeNames[static_cast<std::size_t>(s.objects[t].kind)]);
    const std::string name = s.objects[t].description();
    return Selection{t, "Segment the only " + shape + " in the image.",
                     {count_step(s), "Group the objects by shape.",
                      "Only one object is a " + shape + ".", "The target is the " + name + "."}};
}

Selector size_selector(bool largest) {
    return [largest](const Scene& s, int, Rng&) -> std::optional<Selection> {
        std::vector<std::size_t> order(s.objects.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return largest ? s.objects[a].radius > s.objects[b].radius
                           : s.objects[a].radius < s.objects[b].radius;
        });
        const double r0 = s.objects[order[0]].radius;
        const double r1 = s.objects[order[1]].radius;
        if (std::max(r0, r1) < 1.25 * std::min(r0, r1)) return std::nullopt;
        const std::string word = largest ? "largest" : "smallest";
        const std::string name = s.objects[order[0]].description();
        return Selection{order[0], "Which object is the " + word + " in the image?",
                         {count_step(s), "Compare the sizes of all objects.",
                          "The " + name + " is the " + word + ".", "The target is the " + name + "."}};
    };
}

std::optional<Selection> most_isolated(const Scene& s, int, Rng&) {
    // Largest open area: the object whose nearest neighbour is farthest away.
    std::vector<double> neg_gap;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
        double gap = 1e300;
        for (std::size_t j = 0; j < s.objects.size(); ++j) {
            if (i != j) gap = std::min(gap, std::hypot(s.objects[i].cx - s.objects[j].cx, s.objects[i].cy - s.objects[j].cy));
        }
        neg_gap.push_back(-gap);
    }
    std::vector<double> sorted = neg_gap;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.size() < 2 || -sorted[0] < 1.2 * -sorted[1]) return std::nullopt;
    const auto t = static_cast<std::size_t>(std::min_element(neg_gap.begin(), neg_gap.end()) - neg_gap.begin());
    const std::string name = s.objects[t].description();
    return Selection{t, "Which object sits in the largest open area?",
                     {count_step(s), "Find the distance from each object to its closest neighbour.",
                      "The " + name + " has the most open space around it.",
                      "The target is the " + name + "."}};
}

Selector center_selector(bool closest) {
    return [closest](const Scene& s, int canvas, Rng&) -> std::optional<Selection> {
        const double c = canvas / 2.0;
        std::vector<double> d;
        for (const auto& o : s.objects) {
            const double dist = std::hypot(o.cx - c, o.cy - c);
            d.push_back(closest ? dist : -dist);
        }
        auto t = argmin_with_margin(d, 0.05 * canvas);
        if (!t) return std::nullopt;
        const std::string word = closest ? "closest to" : "farthest from";
        const std::string name = s.objects[*t].description();
        return Selection{*t, "Which object is " + word + " the center of the scene?",
                         {count_step(s), "Measure the distance from each object to the image center.",
                          "The " + name + " is " + word + " the center.",
                          "The target is the " + name + "."}};
    };
}

const std::vector<std::pair<std::string, Selector>>& selectors_for(ReasoningType type) {
    static const std::vector<std::pair<std::string, Selector>> spatial{
        {"leftmost", extreme_selector("leftmost", "Compare the horizontal positions of all objects.",
                                      [](const SceneObject& o) { return o.cx; })},
        {"rightmost", extreme_selector("rightmost", "Compare the horizontal positions of all objects.",
                                       [](const SceneObject& o) { return -o.cx; })},
        {"topmost", extreme_selector("topmost", "Compare the vertical positions of all objects.",
                                     [](const SceneObject& o) { return o.cy; })},
        {"bottommost", extreme_selector("bottommost", "Compare the vertical positions of all objects.",
                                        [](const SceneObject& o) { return -o.cy; })},
        {"nearest_to_landmark", nearest_to_landmark}};
    static const std::vector<std::pair<std::string, Selector>> attribute{
        {"unique_color", unique_color},
        {"unique_shape", unique_shape},
        {"largest", size_selector(true)},
        {"smallest", size_selector(false)}};
    static const std::vector<std::pair<std::string, Selector>> scene{
        {"most_isolated", most_isolated},
        {"closest_to_center", center_selector(true)},
        {"farthest_from_center", center_selector(false)}};
    switch (type) {
        case ReasoningType::Spatial: return spatial;
        case ReasoningType::Attribute: return attribute;
        case ReasoningType::Scene: return scene;
    }
    throw InternalError("unknown reasoning type");
}

float quantize(float v) { return std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f; }

Image render(const Scene& scene, int canvas, Rng& rng) {
    Image img = Image::zeros(canvas, canvas);
    const Rgb base = kBackgrounds[static_cast<std::size_t>(scene.background)];
    const double phase = uniform(rng, 0.0, 6.283);
    const double freq = uniform(rng, 0.05, 0.2);
    std::normal_distribution<float> noise(0.0f, 0.03f);
    const float light = scene.illumination == Illumination::Day ? 1.0f : kNightFactor;

    auto paint = [&](int y, int x, Rgb c) {
        img.at(0, y, x) = c.r;
        img.at(1, y, x) = c.g;
        img.at(2, y, x) = c.b;
    };
    for (int y = 0; y < canvas; ++y) {
        for (int x = 0; x < canvas; ++x) {
            const float stripe = 0.04f * static_cast<float>(std::sin(freq * (x + 0.6 * y) + phase));
            const float n = noise(rng);
            paint(y, x, {base.r + stripe + n, base.g + stripe + n, base.b + stripe + n});
        }
    }
    auto fill = [&](const SceneObject& obj, Rgb c) {
        for (int y = 0; y < canvas; ++y) {
            for (int x = 0; x < canvas; ++x) {
                if (obj.contains(x + 0.5, y + 0.5)) paint(y, x, c);
            }
        }
    };
    fill(scene.landmark, kLandmarkColor);
    for (const auto& obj : scene.objects) fill(obj, kColorValues[static_cast<std::size_t>(obj.color)]);
    for (float& v : img.pixels) v = quantize(v * light);
    return img;
}

}  // namespace

bool SceneObject::contains(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    switch (kind) {
        case ObjectKind::Circle:
            return dx * dx + dy * dy <= radius * radius;
        case ObjectKind::Square:
            return std::abs(dx) <= 0.85 * radius && std::abs(dy) <= 0.85 * radius;
        case ObjectKind::Triangle: {
            // Apex at cy - r, base at cy + 0.7 r with half-width 0.95 r.
            const double top = cy - radius;
            const double bottom = cy + 0.7 * radius;
            if (y < top || y > bottom) return false;
            const double half = 0.95 * radius * (y - top) / (bottom - top);
            return std::abs(dx) <= half;
        }
    }
    return false;
}

BinaryMask SceneObject::rasterize(int height, int width) const {
    BinaryMask mask = BinaryMask::zeros(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) mask.at(y, x) = contains(x + 0.5, y + 0.5) ? 1 : 0;
    }
    return mask;
}

std::string SceneObject::description() const {
    return std::string(kColorNames[static_cast<std::size_t>(color)]) + " " +
           std::string(kShapeNames[static_cast<std::size_t>(kind)]);
}

std::vector<SynthesizedSample> synthesize_samples(const SynthOptions& options) {
    if (options.count < 1) throw InputError("sample count must be at least 1");
    if (options.canvas_size < 32) throw InputError("canvas size must be at least 32");
    static constexpr std::array<ReasoningType, 3> kCycle{ReasoningType::Spatial, ReasoningType::Attribute,
                                                         ReasoningType::Scene};
    Rng rng(options.seed);
    const int canvas = options.canvas_size;
    std::vector<SynthesizedSample> out;
    out.reserve(static_cast<std::size_t>(options.count));

    for (int i = 0; i < options.count; ++i) {
        const ReasoningType type = kCycle[static_cast<std::size_t>(i % 3)];
        const auto& selectors = selectors_for(type);
        std::optional<Scene> scene;
        std::optional<Selection> selection;
        std::string selector_name;
        while (!selection) {
            scene = random_scene(canvas, rng);
            if (!scene) continue;
            const auto& [name, select] =
                selectors[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(selectors.size()) - 1))];
            selection = select(*scene, canvas, rng);
            selector_name = name;
        }

        char id[16];
        std::snprintf(id, sizeof id, "s%05d", i);
        SynthesizedSample sample;
        sample.objects = scene->objects;
        sample.target = selection->target;
        sample.selector = selector_name;
        sample.image = render(*scene, canvas, rng);
        sample.mask = scene->objects[selection->target].rasterize(canvas, canvas);

        ReasoningSample& r = sample.record;
        r.id = id;
        r.image_path = "images/" + r.id + ".png";
        r.mask_path = "masks/" + r.id + ".png";
        r.reasoning_type = type;
        r.question = selection->question;
        r.cot = selection->cot;
        r.answer = "the " + scene->objects[selection->target].description();
        r.altitude_m = scene->altitude;
        r.illumination = scene->illumination;
        out.push_back(std::move(sample));
    }
    return out;
}

std::vector<SynthesizedSample> synthesize_dataset(const SynthOptions& options,
                                                  const std::filesystem::path& root) {
    auto samples = synthesize_samples(options);
    std::vector<ReasoningSample> records;
    std::vector<std::string> ids;
    for (const auto& s : samples) {
        save_image(s.image, root / s.record.image_path);
        encode_mask(s.mask, root / s.record.mask_path, true);
        records.push_back(s.record);
        ids.push_back(s.record.id);
    }
    write_records(root, records);
    write_manifest(root, records, split_dataset(ids, options.seed), options.seed);
    return samples;
}

}  // namespace uavseg
