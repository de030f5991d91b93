#include "invpt/config.hpp"

#include <fstream>
#include <set>

namespace invpt {

namespace {

constexpr int kSchemaVersion = 1;

void check_keys(const nlohmann::json& j, const std::string& where,
                const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad value for '" + key + "': " + e.what());
    }
}

bool metric_lower_is_better(const std::string& metric) {
    return metric == "rmse" || metric == "merr";
}

TaskSpec task_from_json(const nlohmann::json& j, std::size_t index) {
    const std::string where = "tasks[" + std::to_string(index) + "]";
    check_keys(j, where,
               {"name", "kind", "classes", "channels", "loss_weight", "metric",
                "lower_is_better"});
    TaskSpec t;
    t.name = get_or<std::string>(j, "name", "");
    const std::string kind = get_or<std::string>(j, "kind", "categorical");
    if (kind == "categorical")
        t.kind = TaskKind::Categorical;
    else if (kind == "continuous")
        t.kind = TaskKind::Continuous;
    else
        throw ConfigError(where + ": kind must be 'categorical' or 'continuous'");
    t.classes = get_or<std::int64_t>(j, "classes", 2);
    t.channels = get_or<std::int64_t>(j, "channels", 1);
    t.loss_weight = get_or<double>(j, "loss_weight", 1.0);
    t.metric = get_or<std::string>(j, "metric", "");
    static const std::set<std::string> metrics{"miou", "rmse", "boundary_f1", "merr"};
    if (!metrics.count(t.metric))
        throw ConfigError(where + ": metric must be one of miou, rmse, boundary_f1, merr");
    t.lower_is_better = get_or<bool>(j, "lower_is_better", metric_lower_is_better(t.metric));
    t.validate();
    return t;
}

nlohmann::ordered_json task_to_json(const TaskSpec& t) {
    nlohmann::ordered_json j;
    j["name"] = t.name;
    j["kind"] = t.kind == TaskKind::Categorical ? "categorical" : "continuous";
    if (t.kind == TaskKind::Categorical)
        j["classes"] = t.classes;
    else
        j["channels"] = t.channels;
    j["loss_weight"] = t.loss_weight;
    j["metric"] = t.metric;
    j["lower_is_better"] = t.lower_is_better;
    return j;
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.model.encoder = EncoderConfig{};
    c.model.tasks = {
        {"semseg", TaskKind::Categorical, 4, 1, 1.0, "miou", false},
        {"depth", TaskKind::Continuous, 2, 1, 1.0, "rmse", true},
        {"boundary", TaskKind::Categorical, 2, 1, 1.0, "boundary_f1", false},
    };
    c.model.c_p = 32;
    c.model.c0 = 64;
    c.model.decoder = DecoderConfig{};
    return c;
}

void RunConfig::validate() const {
    model.validate();
    data.scene.validate();
    if (data.train_count < 1 || data.val_count < 1)
        throw ConfigError("dataset counts must be positive");
    if (model.encoder.image_h != data.scene.image_h ||
        model.encoder.image_w != data.scene.image_w)
        throw ConfigError("encoder image extents must match the scene extents");
    for (const auto& t : model.tasks) {
        if (t.name == "semseg" && t.classes != data.scene.classes)
            throw ConfigError("semseg task classes (" + std::to_string(t.classes) +
                              ") must equal scene classes (" +
                              std::to_string(data.scene.classes) + ")");
        if (t.name == "boundary" && t.classes != 2)
            throw ConfigError("boundary task must have 2 classes");
    }
    if (train.iters < 1 || train.batch < 1 || train.log_interval < 1)
        throw ConfigError("training budget values must be positive");
    if (train.adam.lr <= 0.0) throw ConfigError("learning rate must be positive");
    for (const auto& v : compare.variants)
        if (v != "fusion" && v != "selective")
            throw ConfigError("compare variant must be 'fusion' or 'selective', got '" + v + "'");
    for (double r : compare.retentions)
        if (r <= 0.0 || r > 1.0) throw ConfigError("compare retention ratios must be in (0,1]");
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    check_keys(j, "config root",
               {"schema_version", "seed", "out_dir", "encoder", "tasks", "prelim", "decoder",
                "data", "train", "compare"});
    const int version = get_or<int>(j, "schema_version", -1);
    if (version != kSchemaVersion)
        throw ConfigError("schema_version must be " + std::to_string(kSchemaVersion) +
                          ", got " + std::to_string(version));
    RunConfig c = defaults();
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    c.out_dir = get_or<std::string>(j, "out_dir", c.out_dir);

    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        check_keys(e, "encoder", {"patch", "depth", "width", "heads"});
        c.model.encoder.patch = get_or<std::int64_t>(e, "patch", c.model.encoder.patch);
        c.model.encoder.depth = get_or<std::int64_t>(e, "depth", c.model.encoder.depth);
        c.model.encoder.width = get_or<std::int64_t>(e, "width", c.model.encoder.width);
        c.model.encoder.heads = get_or<std::int64_t>(e, "heads", c.model.encoder.heads);
    }
    if (j.contains("tasks")) {
        if (!j.at("tasks").is_array() || j.at("tasks").size() < 2)
            throw ConfigError("tasks must be an array of at least 2 entries");
        c.model.tasks.clear();
        for (std::size_t i = 0; i < j.at("tasks").size(); ++i)
            c.model.tasks.push_back(task_from_json(j.at("tasks")[i], i));
    }
    if (j.contains("prelim")) {
        const auto& p = j.at("prelim");
        check_keys(p, "prelim", {"c_p", "c0"});
        c.model.c_p = get_or<std::int64_t>(p, "c_p", c.model.c_p);
        c.model.c0 = get_or<std::int64_t>(p, "c0", c.model.c0);
    }
    if (j.contains("decoder")) {
        const auto& d = j.at("decoder");
        check_keys(d, "decoder",
                   {"variant", "retention", "heads", "efa", "efa_stage0", "stages"});
        const std::string v = get_or<std::string>(d, "variant", "selective");
        if (v == "fusion")
            c.model.decoder.variant = AttentionVariant::Fusion;
        else if (v == "selective")
            c.model.decoder.variant = AttentionVariant::Selective;
        else
            throw ConfigError("decoder.variant must be 'fusion' or 'selective'");
        c.model.decoder.retention = get_or<double>(d, "retention", c.model.decoder.retention);
        c.model.decoder.heads = get_or<std::int64_t>(d, "heads", c.model.decoder.heads);
        c.model.decoder.efa = get_or<bool>(d, "efa", c.model.decoder.efa);
        c.model.decoder.efa_stage0 = get_or<bool>(d, "efa_stage0", c.model.decoder.efa_stage0);
        c.model.decoder.stages = get_or<std::int64_t>(d, "stages", c.model.decoder.stages);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, "data",
                   {"train_path", "val_path", "train_count", "val_count", "image_h", "image_w",
                    "classes", "shapes_per_scene"});
        c.data.train_path = get_or<std::string>(d, "train_path", c.data.train_path);
        c.data.val_path = get_or<std::string>(d, "val_path", c.data.val_path);
        c.data.train_count = get_or<std::int64_t>(d, "train_count", c.data.train_count);
        c.data.val_count = get_or<std::int64_t>(d, "val_count", c.data.val_count);
        c.data.scene.image_h = get_or<std::int64_t>(d, "image_h", c.data.scene.image_h);
        c.data.scene.image_w = get_or<std::int64_t>(d, "image_w", c.data.scene.image_w);
        c.data.scene.classes = get_or<std::int64_t>(d, "classes", c.data.scene.classes);
        c.data.scene.shapes_per_scene =
            get_or<std::int64_t>(d, "shapes_per_scene", c.data.scene.shapes_per_scene);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t, "train",
                   {"iters", "batch", "lr", "weight_decay", "poly_power", "log_interval"});
        c.train.iters = get_or<std::int64_t>(t, "iters", c.train.iters);
        c.train.batch = get_or<std::int64_t>(t, "batch", c.train.batch);
        c.train.adam.lr = get_or<double>(t, "lr", c.train.adam.lr);
        c.train.adam.weight_decay = get_or<double>(t, "weight_decay", c.train.adam.weight_decay);
        c.train.adam.poly_power = get_or<double>(t, "poly_power", c.train.adam.poly_power);
        c.train.log_interval = get_or<std::int64_t>(t, "log_interval", c.train.log_interval);
    }
    if (j.contains("compare")) {
        const auto& cmp = j.at("compare");
        check_keys(cmp, "compare", {"variants", "retentions"});
        c.compare.variants =
            get_or<std::vector<std::string>>(cmp, "variants", c.compare.variants);
        c.compare.retentions =
            get_or<std::vector<double>>(cmp, "retentions", c.compare.retentions);
    }

    c.model.encoder.image_h = c.data.scene.image_h;
    c.model.encoder.image_w = c.data.scene.image_w;
    c.train.seed = c.seed;
    c.validate();
    return c;
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["encoder"] = {{"patch", model.encoder.patch},
                    {"depth", model.encoder.depth},
                    {"width", model.encoder.width},
                    {"heads", model.encoder.heads}};
    auto tasks = nlohmann::ordered_json::array();
    for (const auto& t : model.tasks) tasks.push_back(task_to_json(t));
    j["tasks"] = std::move(tasks);
    j["prelim"] = {{"c_p", model.c_p}, {"c0", model.c0}};
    j["decoder"] = {
        {"variant", model.decoder.variant == AttentionVariant::Fusion ? "fusion" : "selective"},
        {"retention", model.decoder.retention},
        {"heads", model.decoder.heads},
        {"efa", model.decoder.efa},
        {"efa_stage0", model.decoder.efa_stage0},
        {"stages", model.decoder.stages}};
    j["data"] = {{"train_path", data.train_path},
                 {"val_path", data.val_path},
                 {"train_count", data.train_count},
                 {"val_count", data.val_count},
                 {"image_h", data.scene.image_h},
                 {"image_w", data.scene.image_w},
                 {"classes", data.scene.classes},
                 {"shapes_per_scene", data.scene.shapes_per_scene}};
    j["train"] = {{"iters", train.iters},
                  {"batch", train.batch},
                  {"lr", train.adam.lr},
                  {"weight_decay", train.adam.weight_decay},
                  {"poly_power", train.adam.poly_power},
                  {"log_interval", train.log_interval}};
    j["compare"] = {{"variants", compare.variants}, {"retentions", compare.retentions}};
    return j;
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    return from_json(j);
}

void RunConfig::save_file(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot write config: " + path);
    f << to_json().dump(2) << "\n";
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like key.path=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;  // bare strings
    }

    nlohmann::json* node = &doc;
    std::size_t begin = 0;
    std::vector<std::string> segments;
    while (begin <= path.size()) {
        const auto dot = path.find('.', begin);
        segments.push_back(path.substr(begin, dot == std::string::npos ? dot : dot - begin));
        if (dot == std::string::npos) break;
        begin = dot + 1;
    }
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& seg = segments[i];
        if (seg.empty()) throw ConfigError("empty segment in override path '" + path + "'");
        const bool last = i + 1 == segments.size();
        const bool is_index = !seg.empty() && seg.find_first_not_of("0123456789") ==
                                                  std::string::npos;
        if (is_index) {
            if (!node->is_array())
                throw ConfigError("override path '" + path + "' indexes a non-array");
            const std::size_t idx = std::stoul(seg);
            if (idx >= node->size())
                throw ConfigError("override index " + seg + " out of range in '" + path + "'");
            node = &(*node)[idx];
        } else {
            if (!node->is_object()) node->operator=(nlohmann::json::object());
            node = &(*node)[seg];
        }
        if (last) *node = value;
    }
}

}  // namespace invpt
