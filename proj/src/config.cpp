#include "uavseg/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include <toml.hpp>

#include "uavseg/errors.hpp"

namespace uavseg {

using nlohmann::json;

void RunConfig::validate() const {
    model.validate();
    loss.validate();
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (grad_accum_steps < 1) throw ConfigError("train.grad_accum_steps must be >= 1");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (steps_per_epoch < 1) throw ConfigError("train.steps_per_epoch must be >= 1");
    if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
    if (optimizer.warmup_steps < 0) throw ConfigError("optimizer.warmup_steps must be >= 0");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) throw ConfigError("optimizer.beta1 must be in [0, 1)");
    if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) throw ConfigError("optimizer.beta2 must be in [0, 1)");
    if (!(optimizer.eps > 0.0)) throw ConfigError("optimizer.eps must be positive");
    if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
    for (const auto* split : {&train_split, &eval_split}) {
        if (*split != "train" && *split != "val" && *split != "test" && *split != "all") {
            throw ConfigError("data split '" + *split + "' is not one of train, val, test, all");
        }
    }
}

json to_json(const RunConfig& c) {
    const auto& e = c.model.encoder;
    const auto& b = c.model.backbone;
    const auto& d = c.model.decoder;
    json j;
    j["seed"] = c.seed;
    j["data"] = {{"root", c.data_root}, {"train_split", c.train_split}, {"eval_split", c.eval_split}};
    j["encoder"] = {{"global_input_size", e.global_input_size},
                    {"patch_size", e.patch_size},
                    {"fine_input_size", e.fine_input_size},
                    {"global_channels", e.global_channels},
                    {"fine_channels", e.fine_channels},
                    {"active_fusion_stages", std::vector<int>(e.active_fusion_stages.begin(), e.active_fusion_stages.end())},
                    {"fusion_direction", std::string(to_string(e.fusion_direction))},
                    {"coordinate_channels", e.coordinate_channels}};
    j["backbone"] = {{"d_model", b.d_model},
                     {"depth", b.depth},
                     {"heads", b.heads},
                     {"ffn_multiplier", b.ffn_multiplier},
                     {"max_positions", b.max_positions},
                     {"positional_encoding", b.positional_encoding},
                     {"embedding_dim", b.embedding_dim}};
    j["decoder"] = {{"depth", d.depth}, {"output_height", d.output_height}, {"output_width", d.output_width}};
    j["loss"] = {{"txt", c.loss.txt}, {"ref", c.loss.ref}, {"dice", c.loss.dice}, {"dice_smooth", c.loss.dice_smooth}};
    j["optimizer"] = {{"lr", c.optimizer.lr},
                      {"warmup_steps", c.optimizer.warmup_steps},
                      {"beta1", c.optimizer.beta1},
                      {"beta2", c.optimizer.beta2},
                      {"eps", c.optimizer.eps},
                      {"weight_decay", c.optimizer.weight_decay}};
    j["train"] = {{"batch_size", c.batch_size},
                  {"grad_accum_steps", c.grad_accum_steps},
                  {"epochs", c.epochs},
                  {"steps_per_epoch", c.steps_per_epoch},
                  {"cot_mode", std::string(to_string(c.cot_mode))},
                  {"cot_in_text_loss", c.cot_in_text_loss}};
    return j;
}

namespace {

class Section {
public:
    Section(const json& root, std::string name) : name_(std::move(name)) {
        if (!root.contains(name_)) return;
        obj_ = &root.at(name_);
        if (!obj_->is_object()) throw ConfigError(name_ + " must be a table");
    }

    void allow(std::initializer_list<const char*> keys) const {
        if (!obj_) return;
        for (auto it = obj_->begin(); it != obj_->end(); ++it) {
            if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; })) {
                throw ConfigError("unknown config key " + name_ + "." + it.key());
            }
        }
    }

    template <class T>
    void read(const char* key, T& out) const {
        if (!obj_ || !obj_->contains(key)) return;
        try {
            out = obj_->at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key " + name_ + "." + key + " has the wrong type");
        }
    }

private:
    std::string name_;
    const json* obj_ = nullptr;
};

}  // namespace

RunConfig run_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a table/object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        static const std::set<std::string> top{"seed", "data", "encoder", "backbone", "decoder",
                                               "loss", "optimizer", "train"};
        if (!top.count(it.key())) throw ConfigError("unknown config key " + it.key());
    }
    RunConfig c;
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<long long>() >= 0)) {
            throw ConfigError("config key seed must be a non-negative integer");
        }
        c.seed = j["seed"].get<std::uint64_t>();
    }

    Section data(j, "data");
    data.allow({"root", "train_split", "eval_split"});
    data.read("root", c.data_root);
    data.read("train_split", c.train_split);
    data.read("eval_split", c.eval_split);

    auto& e = c.model.encoder;
    Section enc(j, "encoder");
    enc.allow({"global_input_size", "patch_size", "fine_input_size", "global_channels", "fine_channels",
               "active_fusion_stages", "fusion_direction", "coordinate_channels"});
    enc.read("global_input_size", e.global_input_size);
    enc.read("patch_size", e.patch_size);
    enc.read("fine_input_size", e.fine_input_size);
    enc.read("global_channels", e.global_channels);
    enc.read("fine_channels", e.fine_channels);
    std::vector<int> stages(e.active_fusion_stages.begin(), e.active_fusion_stages.end());
    enc.read("active_fusion_stages", stages);
    e.active_fusion_stages = std::set<int>(stages.begin(), stages.end());
    std::string direction(to_string(e.fusion_direction));
    enc.read("fusion_direction", direction);
    auto parsed_direction = parse_fusion_direction(direction);
    if (!parsed_direction) {
        throw ConfigError("encoder.fusion_direction '" + direction +
                          "' is not one of fine_into_global, sum, global_into_fine");
    }
    e.fusion_direction = *parsed_direction;
    enc.read("coordinate_channels", e.coordinate_channels);

    auto& b = c.model.backbone;
    Section bb(j, "backbone");
    bb.allow({"d_model", "depth", "heads", "ffn_multiplier", "max_positions", "positional_encoding", "embedding_dim"});
    bb.read("d_model", b.d_model);
    bb.read("depth", b.depth);
    bb.read("heads", b.heads);
    bb.read("ffn_multiplier", b.ffn_multiplier);
    bb.read("max_positions", b.max_positions);
    bb.read("positional_encoding", b.positional_encoding);
    bb.read("embedding_dim", b.embedding_dim);

    auto& d = c.model.decoder;
    Section dec(j, "decoder");
    dec.allow({"depth", "output_height", "output_width"});
    dec.read("depth", d.depth);
    dec.read("output_height", d.output_height);
    dec.read("output_width", d.output_width);
    d.embedding_dim = b.embedding_dim;

    Section loss(j, "loss");
    loss.allow({"txt", "ref", "dice", "dice_smooth"});
    loss.read("txt", c.loss.txt);
    loss.read("ref", c.loss.ref);
    loss.read("dice", c.loss.dice);
    loss.read("dice_smooth", c.loss.dice_smooth);

    Section opt(j, "optimizer");
    opt.allow({"lr", "warmup_steps", "beta1", "beta2", "eps", "weight_decay"});
    opt.read("lr", c.optimizer.lr);
    opt.read("warmup_steps", c.optimizer.warmup_steps);
    opt.read("beta1", c.optimizer.beta1);
    opt.read("beta2", c.optimizer.beta2);
    opt.read("eps", c.optimizer.eps);
    opt.read("weight_decay", c.optimizer.weight_decay);

    Section train(j, "train");
    train.allow({"batch_size", "grad_accum_steps", "epochs", "steps_per_epoch", "cot_mode", "cot_in_text_loss"});
    train.read("batch_size", c.batch_size);
    train.read("grad_accum_steps", c.grad_accum_steps);
    train.read("epochs", c.epochs);
    train.read("steps_per_epoch", c.steps_per_epoch);
    std::string cot(to_string(c.cot_mode));
    train.read("cot_mode", cot);
    auto parsed_cot = parse_cot_mode(cot);
    if (!parsed_cot) throw ConfigError("train.cot_mode '" + cot + "' is not one of on, off, mask, shuffle, semantic");
    c.cot_mode = *parsed_cot;
    train.read("cot_in_text_loss", c.cot_in_text_loss);

    c.model.seed = c.seed;
    e.seed = c.seed;
    c.validate();
    return c;
}

json read_config_document(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    if (path.extension() == ".json") {
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw ConfigError("invalid JSON in " + path.string());
        return j;
    }
    toml::table table;
    try {
        table = toml::parse(in, path.string());
    } catch (const toml::parse_error& err) {
        std::ostringstream msg;
        msg << "invalid TOML in " << path.string() << ": " << err.description() << " at line "
            << err.source().begin.line;
        throw ConfigError(msg.str());
    }
    std::ostringstream as_json;
    as_json << toml::json_formatter{table};
    return json::parse(as_json.str());
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must be key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-table");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    json doc = path.empty() ? json::object() : read_config_document(path);
    for (const auto& o : overrides) apply_override(doc, o);
    return run_config_from_json(doc);
}

std::string config_fingerprint(const RunConfig& config) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : to_json(config).dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace uavseg
