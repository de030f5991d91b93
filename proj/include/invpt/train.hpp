#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "invpt/data.hpp"
#include "invpt/model.hpp"

namespace invpt::train {

inline constexpr std::int64_t kIgnoreId = 255;

// Mean softmax cross-entropy over pixels, ignore id 255. Logits (K,H,W),
// labels length H*W. All-ignored labels give a constant zero loss.
TensorPtr cross_entropy_loss(const TensorPtr& logits, const std::vector<std::int64_t>& labels,
                             std::int64_t ignore = kIgnoreId);

// Mean L1 over unmasked pixels; mask length H*W broadcasts over channels.
// Null mask means every pixel counts.
TensorPtr l1_loss(const TensorPtr& pred, const TensorPtr& target,
                  const std::vector<std::uint8_t>* mask = nullptr);

// Labels for one task drawn from a synthetic sample, keyed by task name
// (semseg, depth, boundary).
struct TaskLabels {
    std::vector<std::int64_t> ids;  // categorical
    TensorPtr values;               // continuous (channels,H,W)
    std::vector<std::uint8_t> mask; // continuous validity mask
};
TaskLabels labels_for(const TaskSpec& task, const data::Sample& sample);

TensorPtr task_loss(const TaskSpec& task, const TensorPtr& pred, const TaskLabels& labels);

struct LossReport {
    std::vector<double> prelim;  // per task
    std::vector<double> final_;  // per task
    double total = 0.0;          // sum_t w_t * (prelim_t + final_t)
};

// Adam with coupled L2 weight decay and polynomial learning-rate decay
// lr(iter) = base * (1 - iter/max_iters)^power.
struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;
    double poly_power = 0.9;
    std::int64_t max_iters = 2000;
};

class Adam {
public:
    Adam(std::vector<TensorPtr> params, AdamConfig cfg);
    double lr_at(std::int64_t iter) const;
    void step(std::int64_t iter);

private:
    std::vector<TensorPtr> params_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
    AdamConfig cfg_;
};

struct TrainSettings {
    std::int64_t iters = 2000;
    std::int64_t batch = 4;
    AdamConfig adam;
    std::int64_t log_interval = 1;
    std::uint64_t seed = 7;
};

struct LogRecord {
    std::int64_t iter = 0;
    double lr = 0.0;
    LossReport losses;
};

// Seeded training loop; samples are drawn from the dataset with a stream
// derived from the seed, grads accumulate across the batch, one Adam step per
// iteration. Writes one JSON line per log interval when a stream is given.
// Throws NumericError if the loss stops being finite.
std::vector<LogRecord> train_loop(MultiTaskModel& model, const std::vector<data::Sample>& dataset,
                                  const TrainSettings& settings, std::ostream* log_stream);

// Per-task evaluation over a dataset: global miou / rmse / boundary_f1 keyed
// by task name, computed from the final predictions in eval mode.
std::map<std::string, std::optional<double>> evaluate(const MultiTaskModel& model,
                                                      const std::vector<data::Sample>& dataset);

// ---------------------------------------------------------------------------
// gradient-check suite

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

enum class GradCheckScope { Ops, Modules, EndToEnd };

// Ops and Modules run at 1e-6, EndToEnd (full pipeline micro config) at 1e-5.
std::vector<GradCheckResult> gradcheck_suite(GradCheckScope scope, std::uint64_t seed);

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace invpt::train
