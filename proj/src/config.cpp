#include "mmsyn/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "mmsyn/errors.hpp"

namespace mmsyn {

using nlohmann::json;

std::string profile_name(Profile p) { return p == Profile::Paper ? "paper" : "desk"; }

Profile parse_profile(const std::string& s) {
    if (s == "desk") return Profile::Desk;
    if (s == "paper") return Profile::Paper;
    throw ConfigError("profile: expected 'desk' or 'paper', got '" + s + "'");
}

namespace {

struct FieldBinding {
    SchemaField field;
    std::function<void(RunConfig&, const json&)> set;
    std::function<json(const RunConfig&)> get;
};

[[noreturn]] void type_error(const std::string& key, const char* expected) {
    throw ConfigError(key + ": expected " + expected);
}

double as_number(const std::string& key, const json& v) {
    if (!v.is_number()) type_error(key, "a number");
    return v.get<double>();
}

std::int64_t as_integer(const std::string& key, const json& v) {
    if (!v.is_number_integer()) type_error(key, "an integer");
    return v.get<std::int64_t>();
}

bool as_bool(const std::string& key, const json& v) {
    if (!v.is_boolean()) type_error(key, "true or false");
    return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v) {
    if (!v.is_string()) type_error(key, "a string");
    return v.get<std::string>();
}

FieldBinding train_number(const std::string& key, std::string desc, double TrainConfig::*member) {
    return {{key, "number", std::move(desc)},
            [key, member](RunConfig& c, const json& v) { c.train.*member = as_number(key, v); },
            [member](const RunConfig& c) { return json(c.train.*member); }};
}

FieldBinding weight_field(const std::string& key, std::string desc, double losses::LossWeights::*member) {
    return {{key, "number", std::move(desc)},
            [key, member](RunConfig& c, const json& v) { c.train.weights.*member = as_number(key, v); },
            [member](const RunConfig& c) { return json(c.train.weights.*member); }};
}

FieldBinding train_int(const std::string& key, std::string desc, int TrainConfig::*member) {
    return {{key, "integer", std::move(desc)},
            [key, member](RunConfig& c, const json& v) { c.train.*member = static_cast<int>(as_integer(key, v)); },
            [member](const RunConfig& c) { return json(c.train.*member); }};
}

FieldBinding net_int(const std::string& key, std::string desc, int NetConfig::*member) {
    return {{key, "integer", std::move(desc)},
            [key, member](RunConfig& c, const json& v) { c.train.net.*member = static_cast<int>(as_integer(key, v)); },
            [member](const RunConfig& c) { return json(c.train.net.*member); }};
}

const std::vector<FieldBinding>& bindings() {
    static const std::vector<FieldBinding> table = [] {
        std::vector<FieldBinding> b;
        b.push_back({{"profile", "string", "desk (CI-scale epochs, 64x64 phantoms) or paper (200/300 epochs, 256x256)"},
                     [](RunConfig& c, const json& v) { c.profile = parse_profile(as_string("profile", v)); },
                     [](const RunConfig& c) { return json(profile_name(c.profile)); }});
        b.push_back({{"train.scenario", "string", "missing target modality: T1, T1CE, T2 or FLAIR"},
                     [](RunConfig& c, const json& v) {
                         c.train.scenario = MissingScenario::for_target(parse_modality(as_string("train.scenario", v)));
                     },
                     [](const RunConfig& c) { return json(c.train.scenario.tag()); }});
        b.push_back({{"train.device", "string", "torch device, e.g. cpu or cuda (env MMSYN_DEVICE overrides)"},
                     [](RunConfig& c, const json& v) { c.train.device = as_string("train.device", v); },
                     [](const RunConfig& c) { return json(c.train.device); }});

        b.push_back({{"data.root", "string", "directory of subject folders (env MMSYN_DATA_ROOT overrides)"},
                     [](RunConfig& c, const json& v) { c.data_root = as_string("data.root", v); },
                     [](const RunConfig& c) { return json(c.data_root.string()); }});
        b.push_back({{"data.manifest", "string", "manifest file; built from data.root when empty"},
                     [](RunConfig& c, const json& v) { c.manifest = as_string("data.manifest", v); },
                     [](const RunConfig& c) { return json(c.manifest.string()); }});
        b.push_back({{"output.dir", "string", "directory for checkpoints, logs and reports"},
                     [](RunConfig& c, const json& v) { c.output_dir = as_string("output.dir", v); },
                     [](const RunConfig& c) { return json(c.output_dir.string()); }});

        b.push_back({{"phantom.subjects", "integer", "number of synthetic subjects"},
                     [](RunConfig& c, const json& v) { c.phantom.subjects = static_cast<int>(as_integer("phantom.subjects", v)); },
                     [](const RunConfig& c) { return json(c.phantom.subjects); }});
        b.push_back({{"phantom.hw", "integer", "in-plane size of phantom volumes (>= 16)"},
                     [](RunConfig& c, const json& v) { c.phantom.hw = as_integer("phantom.hw", v); },
                     [](const RunConfig& c) { return json(c.phantom.hw); }});
        b.push_back({{"phantom.depth", "integer", "axial slices per phantom volume"},
                     [](RunConfig& c, const json& v) { c.phantom.depth = as_integer("phantom.depth", v); },
                     [](const RunConfig& c) { return json(c.phantom.depth); }});
        b.push_back({{"phantom.seed", "integer", "phantom generator seed"},
                     [](RunConfig& c, const json& v) { c.phantom.seed = static_cast<std::uint64_t>(as_integer("phantom.seed", v)); },
                     [](const RunConfig& c) { return json(c.phantom.seed); }});

        b.push_back(train_number("train.lr", "Adam learning rate", &TrainConfig::lr));
        b.push_back(train_number("train.beta1", "Adam beta1", &TrainConfig::adam_beta1));
        b.push_back(train_number("train.beta2", "Adam beta2", &TrainConfig::adam_beta2));
        b.push_back(train_int("train.batch_size", "slices per batch", &TrainConfig::batch_size));
        b.push_back(train_int("train.sr_epochs", "self-representation pretraining epochs", &TrainConfig::sr_epochs));
        b.push_back(train_int("train.gen_epochs", "translation network epochs", &TrainConfig::gen_epochs));
        b.push_back({{"train.seed", "integer", "seed for initialization and batch order"},
                     [](RunConfig& c, const json& v) { c.train.seed = static_cast<std::uint64_t>(as_integer("train.seed", v)); },
                     [](const RunConfig& c) { return json(c.train.seed); }});
        b.push_back(train_int("train.K", "contrastive queries kept per feature level (lowest entropy)", &TrainConfig::K));
        b.push_back(train_int("train.checkpoint_every", "epochs between intermediate checkpoints (0 = final only)",
                              &TrainConfig::checkpoint_every));
        b.push_back({{"train.freeze_sr", "boolean", "keep the pretrained self-representation network fixed"},
                     [](RunConfig& c, const json& v) { c.train.freeze_sr = as_bool("train.freeze_sr", v); },
                     [](const RunConfig& c) { return json(c.train.freeze_sr); }});
        b.push_back(train_number("train.grad_clip", "max global gradient norm (0 = off)", &TrainConfig::grad_clip));

        b.push_back(weight_field("loss.alpha", "contrastive weight", &losses::LossWeights::alpha));
        b.push_back(weight_field("loss.beta", "segmentation weight", &losses::LossWeights::beta));
        b.push_back(weight_field("loss.gamma", "decoder self-representation (KL) weight", &losses::LossWeights::gamma));
        b.push_back(weight_field("loss.delta", "encoder self-representation (L2) weight", &losses::LossWeights::delta));
        b.push_back(weight_field("loss.eta", "fusion self-representation (L2) weight", &losses::LossWeights::eta));
        b.push_back(weight_field("loss.tau", "contrastive temperature", &losses::LossWeights::tau));
        b.push_back({{"loss.adversarial", "string", "nonsaturating or least_squares"},
                     [](RunConfig& c, const json& v) {
                         const auto s = as_string("loss.adversarial", v);
                         if (s == "nonsaturating") c.train.adversarial = losses::AdversarialForm::NonSaturating;
                         else if (s == "least_squares") c.train.adversarial = losses::AdversarialForm::LeastSquares;
                         else throw ConfigError("loss.adversarial: expected nonsaturating or least_squares");
                     },
                     [](const RunConfig& c) {
                         return json(c.train.adversarial == losses::AdversarialForm::LeastSquares ? "least_squares"
                                                                                                  : "nonsaturating");
                     }});
        b.push_back({{"loss.kl_direction", "string", "sr_to_gen = KL(SR || G) or gen_to_sr = KL(G || SR)"},
                     [](RunConfig& c, const json& v) {
                         const auto s = as_string("loss.kl_direction", v);
                         if (s == "sr_to_gen") c.train.kl_direction = losses::KlDirection::SrToGen;
                         else if (s == "gen_to_sr") c.train.kl_direction = losses::KlDirection::GenToSr;
                         else throw ConfigError("loss.kl_direction: expected sr_to_gen or gen_to_sr");
                     },
                     [](const RunConfig& c) {
                         return json(c.train.kl_direction == losses::KlDirection::GenToSr ? "gen_to_sr" : "sr_to_gen");
                     }});

        b.push_back({{"attention.scale", "boolean", "divide the attention logits by sqrt(C)"},
                     [](RunConfig& c, const json& v) { c.train.attention.scale = as_bool("attention.scale", v); },
                     [](const RunConfig& c) { return json(c.train.attention.scale); }});
        b.push_back({{"attention.detach", "boolean", "stop gradients through the attention matrix"},
                     [](RunConfig& c, const json& v) { c.train.attention.detach_attention = as_bool("attention.detach", v); },
                     [](const RunConfig& c) { return json(c.train.attention.detach_attention); }});

        b.push_back(net_int("net.base_width", "channels of the first encoder level", &NetConfig::base_width));
        b.push_back(net_int("net.levels", "stride-2 encoder levels", &NetConfig::levels));
        b.push_back(net_int("net.disc_width", "channels of the first discriminator layer", &NetConfig::disc_width));
        b.push_back(net_int("net.disc_layers", "stride-2 discriminator layers", &NetConfig::disc_layers));
        b.push_back(net_int("net.attention_reduction", "channel-attention squeeze ratio", &NetConfig::attention_reduction));
        b.push_back({{"net.shared_branch_attention", "boolean", "one attention module shared by all source branches"},
                     [](RunConfig& c, const json& v) {
                         c.train.net.shared_branch_attention = as_bool("net.shared_branch_attention", v);
                     },
                     [](const RunConfig& c) { return json(c.train.net.shared_branch_attention); }});
        return b;
    }();
    return table;
}

const FieldBinding* find_binding(const std::string& key) {
    for (const auto& b : bindings())
        if (b.field.key == key) return &b;
    return nullptr;
}

void apply_value(RunConfig& cfg, const std::string& key, const json& value) {
    const FieldBinding* b = find_binding(key);
    if (!b) throw ConfigError("unknown config key '" + key + "'");
    b->set(cfg, value);
}

void apply_document(RunConfig& cfg, const json& node, const std::string& prefix) {
    for (const auto& [name, value] : node.items()) {
        const std::string key = prefix.empty() ? name : prefix + "." + name;
        if (value.is_object()) {
            apply_document(cfg, value, key);
        } else {
            apply_value(cfg, key, value);
        }
    }
}

void validate(const RunConfig& cfg) {
    if (cfg.phantom.subjects < 1) throw ConfigError("phantom.subjects: must be >= 1");
    if (cfg.phantom.hw < 16) throw ConfigError("phantom.hw: must be >= 16");
    if (cfg.phantom.depth < 1) throw ConfigError("phantom.depth: must be >= 1");
    cfg.train.validate();
}

}  // namespace

const std::vector<SchemaField>& config_schema() {
    static const std::vector<SchemaField> fields = [] {
        std::vector<SchemaField> out;
        for (const auto& b : bindings()) out.push_back(b.field);
        return out;
    }();
    return fields;
}

RunConfig default_run_config(Profile profile) {
    RunConfig c;
    c.profile = profile;
    if (profile == Profile::Paper) {
        c.train.sr_epochs = 200;
        c.train.gen_epochs = 300;
        c.phantom.hw = 256;
        c.phantom.depth = 155;
    } else {
        c.train.sr_epochs = 30;
        c.train.gen_epochs = 40;
        c.phantom.hw = 64;
        c.phantom.depth = 8;
        // Two levels keep the fused map at 16x16 for 64x64 inputs, the same
        // geometry four levels give at 256x256.
        c.train.net.levels = 2;
    }
    return c;
}

std::string schema_help() {
    const RunConfig desk = default_run_config(Profile::Desk);
    const RunConfig paper = default_run_config(Profile::Paper);
    std::ostringstream out;
    out << "Configuration file (JSON, nested sections; unknown keys are rejected):\n";
    for (const auto& b : bindings()) {
        const auto d = b.get(desk).dump();
        const auto p = b.get(paper).dump();
        out << "  " << b.field.key << " (" << b.field.type << ") " << b.field.description << "\n      default " << d;
        if (p != d) out << " (paper profile: " << p << ")";
        out << "\n";
    }
    return out.str();
}

RunConfig parse_run_config(const json& doc, std::optional<Profile> profile_override,
                           const std::vector<std::string>& overrides) {
    if (!doc.is_null() && !doc.is_object()) throw ConfigError("configuration must be a JSON object");
    Profile profile = Profile::Desk;
    if (doc.is_object() && doc.contains("profile")) profile = parse_profile(as_string("profile", doc.at("profile")));
    if (profile_override) profile = *profile_override;

    RunConfig cfg = default_run_config(profile);
    if (doc.is_object()) apply_document(cfg, doc, "");
    cfg.profile = profile;

    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + item + "' must look like section.key=value");
        const std::string key = item.substr(0, eq);
        const std::string text = item.substr(eq + 1);
        json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
        if (value.is_discarded()) value = text;
        apply_value(cfg, key, value);
    }

    if (const char* root = std::getenv("MMSYN_DATA_ROOT"); root && *root) cfg.data_root = root;
    if (const char* dev = std::getenv("MMSYN_DEVICE"); dev && *dev) cfg.train.device = dev;
    validate(cfg);
    return cfg;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path, std::optional<Profile> profile_override,
                          const std::vector<std::string>& overrides) {
    json doc = json::object();
    if (path) {
        std::ifstream in(*path);
        if (!in) throw ConfigError("cannot read config file " + path->string());
        try {
            doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
        } catch (const json::parse_error& e) {
            throw ConfigError("config file " + path->string() + " is not valid JSON: " + e.what());
        }
    }
    return parse_run_config(doc, profile_override, overrides);
}

json to_json(const RunConfig& cfg) {
    json out = json::object();
    for (const auto& b : bindings()) {
        json* node = &out;
        std::string key = b.field.key;
        for (auto dot = key.find('.'); dot != std::string::npos; dot = key.find('.')) {
            node = &(*node)[key.substr(0, dot)];
            key = key.substr(dot + 1);
        }
        (*node)[key] = b.get(cfg);
    }
    return out;
}

}  // namespace mmsyn
