#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "invpt/data.hpp"
#include "invpt/model.hpp"
#include "invpt/train.hpp"

namespace invpt {

struct DataConfig {
    std::string train_path = "data/train.mtsd";
    std::string val_path = "data/val.mtsd";
    std::int64_t train_count = 256;
    std::int64_t val_count = 64;
    data::SceneConfig scene;
};

struct CompareConfig {
    std::vector<std::string> variants{"fusion", "selective"};
    std::vector<double> retentions{0.25, 0.5, 0.75};
};

// Versioned run configuration. Unknown keys are rejected; cross-field
// constraints (grid and channel divisibility, task/scene consistency) are
// validated at load time. The encoder image extents follow the scene extents.
struct RunConfig {
    std::uint64_t seed = 7;
    std::string out_dir = "runs/out";
    ModelConfig model;
    DataConfig data;
    train::TrainSettings train;
    CompareConfig compare;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load_file(const std::string& path);
    void save_file(const std::string& path) const;
    static RunConfig defaults();
};

// Applies a dotted-path override like "decoder.retention=0.25" or
// "tasks.0.loss_weight=2" to the raw JSON document. Values parse as JSON
// scalars/arrays, falling back to strings.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace invpt
