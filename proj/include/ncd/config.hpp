#pragma once

// RunConfig: everything a command needs, read from one JSON file.
//
// Parsing never stops at the first problem. Unknown keys, wrong types and
// out-of-range values are all collected and reported together as a
// ConfigError. Digests are per stage: the digest of a stage covers only the
// parts of the config that can influence the model up to that stage, so a
// stage-2 checkpoint stays valid while the discovery settings change.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "ncd/data.hpp"
#include "ncd/errors.hpp"
#include "ncd/model.hpp"
#include "ncd/pipeline.hpp"
#include "ncd/rng.hpp"

namespace ncd {

class ConfigError : public ArgumentError {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : ArgumentError(join(problems)), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string out = "invalid config (" + std::to_string(p.size()) + " problem" + (p.size() == 1 ? "" : "s") + ")";
        for (const auto& s : p) out += "\n  - " + s;
        return out;
    }
    std::vector<std::string> problems_;
};

struct SyntheticSource {
    std::size_t n_per_class = 200;
    std::size_t classes = 6;
    std::uint64_t seed = 101;
    std::size_t test_per_class = 100;  // held-out set drawn from an independent stream; 0 disables it
};

struct IdxSource {
    std::string train_images, train_labels;
    std::string test_images, test_labels;  // optional pair
    std::size_t max_per_class = 0;         // 0 keeps everything
};

struct DatasetSource {
    std::string kind = "synthetic";  // "synthetic" or "idx"
    SyntheticSource synthetic;
    IdxSource idx;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string output_dir = "runs/default";
    DatasetSource dataset;
    SplitSpec split{{0, 1, 2}, {3, 4, 5}};
    BackboneConfig backbone;
    StageConfig pretrain;
    StageConfig finetune;
    StageConfig discover;
    Ablation ablation;

    RunConfig() {
        pretrain.epochs = 30;
        pretrain.lr = 0.1;
        pretrain.lr_milestones = {21};
        pretrain.augment = AugmentSpec::disabled();

        finetune.epochs = 20;
        finetune.lr = 0.1;
        finetune.lr_milestones = {14};
        finetune.frozen_blocks = {0, 1, 2};
        finetune.augment = AugmentSpec::disabled();

        discover.epochs = 40;
        discover.lr = 0.03;
        discover.lr_milestones = {28};
        discover.frozen_blocks = {0, 1, 2};
        discover.ramp = RampUpSchedule{5.0, 10.0};
        discover.k = 5;
        discover.augment = AugmentSpec{0.5, 0};
        discover.incremental_ce_coefficient = 0.3;
    }

    // Frozen blocks actually used by stage 2: without self-supervision every
    // block trains from its random initialization.
    std::set<std::size_t> finetune_frozen_blocks() const {
        return ablation.no_selfsup ? std::set<std::size_t>{} : finetune.frozen_blocks;
    }
};

namespace detail {

// Reads fields out of a JSON object, recording problems instead of throwing.
class FieldReader {
public:
    FieldReader(const nlohmann::json& obj, std::string path, std::vector<std::string>& problems)
        : obj_(obj), path_(std::move(path)), problems_(problems) {
        if (!obj_.is_object()) problems_.push_back(path_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!obj_.is_object() || !obj_.contains(key)) return;
        const nlohmann::json& v = obj_.at(key);
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw std::invalid_argument("number");
            } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
                if (!nonnegative_integer(v)) throw std::invalid_argument("nonnegative integer");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v.is_number_integer()) throw std::invalid_argument("integer");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw std::invalid_argument("boolean");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw std::invalid_argument("string");
            } else {
                using E = typename T::value_type;
                if (!v.is_array()) throw std::invalid_argument("list");
                for (const auto& e : v) {
                    if (std::is_unsigned_v<E> ? !nonnegative_integer(e) : !e.is_number_integer()) throw std::invalid_argument("list");
                }
            }
            out = v.get<T>();
        } catch (const std::exception&) {
            problems_.push_back(path_ + "." + key + ": expected " + describe<T>() + ", got " + v.dump());
        }
    }

    const nlohmann::json* child(const char* key) {
        seen_.insert(key);
        if (!obj_.is_object() || !obj_.contains(key)) return nullptr;
        return &obj_.at(key);
    }

    // Reports keys that no get()/child() call asked for.
    void finish() {
        if (!obj_.is_object()) return;
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!seen_.count(it.key())) problems_.push_back(path_ + ": unknown key \"" + it.key() + "\"");
        }
    }

    const std::string& path() const noexcept { return path_; }

private:
    static bool nonnegative_integer(const nlohmann::json& v) {
        return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    }

    template <class T>
    static std::string describe() {
        if constexpr (std::is_same_v<T, double>) return "a number";
        else if constexpr (std::is_same_v<T, bool>) return "a boolean";
        else if constexpr (std::is_same_v<T, std::string>) return "a string";
        else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) return "a nonnegative integer";
        else if constexpr (std::is_integral_v<T>) return "an integer";
        else if constexpr (std::is_unsigned_v<typename T::value_type>) return "a list of nonnegative integers";
        else return "a list of integers";
    }

    const nlohmann::json& obj_;
    std::string path_;
    std::vector<std::string>& problems_;
    std::set<std::string> seen_;
};

inline nlohmann::json stage_to_json(const StageConfig& s) {
    return {{"epochs", s.epochs},
            {"lr", s.lr},
            {"lr_milestones", s.lr_milestones},
            {"lr_decay", s.lr_decay},
            {"momentum", s.momentum},
            {"frozen_blocks", s.frozen_blocks},
            {"ramp_lambda", s.ramp.lambda},
            {"ramp_length", s.ramp.length},
            {"k", s.k},
            {"batch_size", s.batch_size},
            {"incremental_ce_coefficient", s.incremental_ce_coefficient},
            {"augment", {{"flip_prob", s.augment.flip_prob}, {"crop_pad", s.augment.crop_pad}}}};
}

inline void stage_from_json(const nlohmann::json& j, const std::string& path, StageConfig& s, std::vector<std::string>& problems) {
    FieldReader r(j, path, problems);
    r.get("epochs", s.epochs);
    r.get("lr", s.lr);
    r.get("lr_milestones", s.lr_milestones);
    r.get("lr_decay", s.lr_decay);
    r.get("momentum", s.momentum);
    r.get("frozen_blocks", s.frozen_blocks);
    r.get("ramp_lambda", s.ramp.lambda);
    r.get("ramp_length", s.ramp.length);
    r.get("k", s.k);
    r.get("batch_size", s.batch_size);
    r.get("incremental_ce_coefficient", s.incremental_ce_coefficient);
    if (const auto* a = r.child("augment")) {
        FieldReader ra(*a, path + ".augment", problems);
        ra.get("flip_prob", s.augment.flip_prob);
        ra.get("crop_pad", s.augment.crop_pad);
        ra.finish();
    }
    r.finish();
}

inline void stage_problems(const StageConfig& s, const std::string& name, const BackboneConfig& bb, bool frozen_allowed,
                           std::vector<std::string>& out) {
    if (!(s.lr > 0.0)) out.push_back(name + ".lr: must be positive");
    if (!(s.lr_decay > 0.0)) out.push_back(name + ".lr_decay: must be positive");
    if (!(s.momentum >= 0.0 && s.momentum < 1.0)) out.push_back(name + ".momentum: must lie in [0, 1)");
    if (s.batch_size < 1) out.push_back(name + ".batch_size: must be at least 1");
    for (std::size_t i = 1; i < s.lr_milestones.size(); ++i) {
        if (s.lr_milestones[i] <= s.lr_milestones[i - 1]) {
            out.push_back(name + ".lr_milestones: must be strictly increasing");
            break;
        }
    }
    if (!(s.ramp.lambda >= 0.0)) out.push_back(name + ".ramp_lambda: must be nonnegative");
    if (!(s.ramp.length > 0.0)) out.push_back(name + ".ramp_length: must be positive");
    if (!(s.incremental_ce_coefficient >= 0.0)) out.push_back(name + ".incremental_ce_coefficient: must be nonnegative");
    if (!(s.augment.flip_prob >= 0.0 && s.augment.flip_prob <= 1.0)) out.push_back(name + ".augment.flip_prob: must lie in [0, 1]");
    if (s.augment.crop_pad < 0) out.push_back(name + ".augment.crop_pad: must be nonnegative");
    const std::size_t blocks = bb.num_blocks();
    for (std::size_t b : s.frozen_blocks) {
        if (b >= blocks) out.push_back(name + ".frozen_blocks: block " + std::to_string(b) + " does not exist");
    }
    if (!frozen_allowed && !s.frozen_blocks.empty()) out.push_back(name + ".frozen_blocks: every block trains in this stage");
    if (blocks > 0 && s.frozen_blocks.count(blocks - 1)) out.push_back(name + ".frozen_blocks: the last macro-block must stay trainable");
}

} // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["dataset"] = {{"source", c.dataset.kind},
                    {"synthetic",
                     {{"n_per_class", c.dataset.synthetic.n_per_class},
                      {"classes", c.dataset.synthetic.classes},
                      {"seed", c.dataset.synthetic.seed},
                      {"test_per_class", c.dataset.synthetic.test_per_class}}},
                    {"idx",
                     {{"train_images", c.dataset.idx.train_images},
                      {"train_labels", c.dataset.idx.train_labels},
                      {"test_images", c.dataset.idx.test_images},
                      {"test_labels", c.dataset.idx.test_labels},
                      {"max_per_class", c.dataset.idx.max_per_class}}}};
    j["split"] = {{"labelled_classes", c.split.labelled_classes}, {"unlabelled_classes", c.split.unlabelled_classes}};
    j["backbone"] = {{"channels", c.backbone.channels},
                     {"height", c.backbone.height},
                     {"width", c.backbone.width},
                     {"layer_widths", c.backbone.layer_widths},
                     {"block_sizes", c.backbone.block_sizes}};
    j["pretrain"] = detail::stage_to_json(c.pretrain);
    j["finetune"] = detail::stage_to_json(c.finetune);
    j["discover"] = detail::stage_to_json(c.discover);
    j["ablation"] = {{"no_bce", c.ablation.no_bce},
                     {"no_ce", c.ablation.no_ce},
                     {"no_consistency", c.ablation.no_consistency},
                     {"no_selfsup", c.ablation.no_selfsup},
                     {"bce_exclude_diagonal", c.ablation.bce_exclude_diagonal}};
    return j;
}

// Semantic checks on an already-typed config.
inline std::vector<std::string> config_problems(const RunConfig& c) {
    std::vector<std::string> out;
    if (c.output_dir.empty()) out.emplace_back("output_dir: must not be empty");
    if (c.dataset.kind == "synthetic") {
        const auto& s = c.dataset.synthetic;
        if (s.classes < 1 || s.classes > kSynthMaxClasses) {
            out.push_back("dataset.synthetic.classes: must lie in [1, " + std::to_string(kSynthMaxClasses) + "]");
        }
        if (s.n_per_class < 1) out.emplace_back("dataset.synthetic.n_per_class: must be at least 1");
        if (c.backbone.channels != 1 || c.backbone.height != kSynthSide || c.backbone.width != kSynthSide) {
            out.push_back("backbone: synthetic images are 1x" + std::to_string(kSynthSide) + "x" + std::to_string(kSynthSide));
        }
        for (const auto* list : {&c.split.labelled_classes, &c.split.unlabelled_classes}) {
            for (int cls : *list) {
                if (cls < 0 || static_cast<std::size_t>(cls) >= s.classes) {
                    out.push_back("split: class " + std::to_string(cls) + " is not among the " + std::to_string(s.classes) +
                                  " synthetic classes");
                }
            }
        }
    } else if (c.dataset.kind == "idx") {
        if (c.dataset.idx.train_images.empty() || c.dataset.idx.train_labels.empty()) {
            out.emplace_back("dataset.idx: train_images and train_labels are required");
        }
        if (c.dataset.idx.test_images.empty() != c.dataset.idx.test_labels.empty()) {
            out.emplace_back("dataset.idx: test_images and test_labels go together");
        }
    } else {
        out.push_back("dataset.source: expected \"synthetic\" or \"idx\", got \"" + c.dataset.kind + "\"");
    }
    for (auto& p : c.split.problems()) out.push_back(p);
    for (auto& p : c.backbone.problems()) out.push_back(p);
    detail::stage_problems(c.pretrain, "pretrain", c.backbone, false, out);
    detail::stage_problems(c.finetune, "finetune", c.backbone, true, out);
    detail::stage_problems(c.discover, "discover", c.backbone, true, out);
    const std::size_t d = c.backbone.feature_dim();
    if (c.discover.k < 1 || (d > 0 && c.discover.k > d)) {
        out.push_back("discover.k: must lie in [1, " + std::to_string(d) + "]");
    }
    return out;
}

inline void validate(const RunConfig& c) {
    auto p = config_problems(c);
    if (!p.empty()) throw ConfigError(std::move(p));
}

// Starts from the defaults and overrides whatever the JSON provides.
inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    std::vector<std::string> problems;
    detail::FieldReader r(j, "config", problems);
    r.get("seed", c.seed);
    r.get("output_dir", c.output_dir);
    if (const auto* d = r.child("dataset")) {
        detail::FieldReader rd(*d, "dataset", problems);
        rd.get("source", c.dataset.kind);
        if (const auto* s = rd.child("synthetic")) {
            detail::FieldReader rs(*s, "dataset.synthetic", problems);
            rs.get("n_per_class", c.dataset.synthetic.n_per_class);
            rs.get("classes", c.dataset.synthetic.classes);
            rs.get("seed", c.dataset.synthetic.seed);
            rs.get("test_per_class", c.dataset.synthetic.test_per_class);
            rs.finish();
        }
        if (const auto* s = rd.child("idx")) {
            detail::FieldReader ri(*s, "dataset.idx", problems);
            ri.get("train_images", c.dataset.idx.train_images);
            ri.get("train_labels", c.dataset.idx.train_labels);
            ri.get("test_images", c.dataset.idx.test_images);
            ri.get("test_labels", c.dataset.idx.test_labels);
            ri.get("max_per_class", c.dataset.idx.max_per_class);
            ri.finish();
        }
        rd.finish();
    }
    if (const auto* s = r.child("split")) {
        detail::FieldReader rs(*s, "split", problems);
        rs.get("labelled_classes", c.split.labelled_classes);
        rs.get("unlabelled_classes", c.split.unlabelled_classes);
        rs.finish();
    }
    if (const auto* b = r.child("backbone")) {
        detail::FieldReader rb(*b, "backbone", problems);
        rb.get("channels", c.backbone.channels);
        rb.get("height", c.backbone.height);
        rb.get("width", c.backbone.width);
        rb.get("layer_widths", c.backbone.layer_widths);
        rb.get("block_sizes", c.backbone.block_sizes);
        rb.finish();
    }
    if (const auto* s = r.child("pretrain")) detail::stage_from_json(*s, "pretrain", c.pretrain, problems);
    if (const auto* s = r.child("finetune")) detail::stage_from_json(*s, "finetune", c.finetune, problems);
    if (const auto* s = r.child("discover")) detail::stage_from_json(*s, "discover", c.discover, problems);
    if (const auto* a = r.child("ablation")) {
        detail::FieldReader ra(*a, "ablation", problems);
        ra.get("no_bce", c.ablation.no_bce);
        ra.get("no_ce", c.ablation.no_ce);
        ra.get("no_consistency", c.ablation.no_consistency);
        ra.get("no_selfsup", c.ablation.no_selfsup);
        ra.get("bce_exclude_diagonal", c.ablation.bce_exclude_diagonal);
        ra.finish();
    }
    r.finish();
    // Semantic checks only make sense on a well-typed config, but both kinds
    // of problem are reported together.
    for (auto& p : config_problems(c)) problems.push_back(std::move(p));
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return c;
}

inline RunConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError({std::string("config is not valid JSON: ") + e.what()});
    }
    return config_from_json(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot read config file " + path.string()});
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// Digest of the config parts that shape a model up to and including `stage`.
inline std::uint64_t stage_digest(const RunConfig& c, Stage stage) {
    const nlohmann::json j = to_json(c);
    nlohmann::json part;
    part["seed"] = j["seed"];
    part["dataset"] = j["dataset"];
    part["split"] = j["split"];
    part["backbone"] = j["backbone"];
    part["no_selfsup"] = c.ablation.no_selfsup;
    if (!c.ablation.no_selfsup) part["pretrain"] = j["pretrain"];
    if (stage >= Stage::finetuned) part["finetune"] = j["finetune"];
    if (stage >= Stage::discovered) {
        nlohmann::json disc = j["discover"];
        if (stage == Stage::discovered) disc.erase("incremental_ce_coefficient");
        part["discover"] = disc;
        nlohmann::json ab = j["ablation"];
        ab.erase("no_selfsup");
        part["ablation"] = ab;
    }
    part["stage"] = stage_name(stage);
    return fnv1a(part.dump());
}

inline std::string digest_hex(std::uint64_t d) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d));
    return buf;
}

} // namespace ncd
