#pragma once

#include <string>
#include <utility>
#include <vector>

#include "invpt/layers.hpp"
#include "invpt/sequence.hpp"

namespace invpt {

enum class TaskKind { Categorical, Continuous };

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::Categorical;
    std::int64_t classes = 2;   // categorical only, >= 2
    std::int64_t channels = 1;  // continuous only, >= 1
    double loss_weight = 1.0;
    std::string metric;  // miou | rmse | boundary_f1 | merr
    bool lower_is_better = false;

    std::int64_t out_channels() const {
        return kind == TaskKind::Categorical ? classes : channels;
    }
    void validate() const;
};

// Task-specific preliminary decoder: two 3x3 Conv-BN-ReLU units followed by a
// 1x1 prediction head. Produces the task feature F_d and the coarse
// prediction logits/values P at encoder resolution.
struct PrelimDecoder {
    ConvBnRelu u1, u2;
    Conv2d pred;

    void init(ParamStore& ps, const std::string& name, std::int64_t c_e, std::int64_t c_p,
              std::int64_t out_ch, Rng& rng);
    // enc tokens (H0*W0, C_e) -> (F_d (C_p,H0,W0), P (out_ch,H0,W0))
    std::pair<TensorPtr, TensorPtr> forward(const TensorPtr& enc_tokens, std::int64_t h0,
                                            std::int64_t w0, bool training,
                                            bool update_running) const;
};

// All preliminary decoders plus the per-task projection that assembles the
// combined multi-task token sequence F_c of width C0.
struct PrelimStage {
    std::vector<TaskSpec> tasks;
    std::vector<PrelimDecoder> decoders;
    std::vector<Conv2d> proj;  // per task, 1x1 (C_p+out_ch) -> C0
    std::int64_t c_p = 32;
    std::int64_t c0 = 64;

    void init(ParamStore& ps, const std::vector<TaskSpec>& tasks, std::int64_t c_e,
              std::int64_t c_p, std::int64_t c0, Rng& rng);

    struct Output {
        std::vector<TensorPtr> features;     // per task (C_p,H0,W0)
        std::vector<TensorPtr> predictions;  // per task (out_ch,H0,W0)
        MultiTaskSequence combined;          // (T*H0*W0, C0)
    };
    Output forward(const TensorPtr& enc_tokens, std::int64_t h0, std::int64_t w0, bool training,
                   bool update_running) const;

    // Channel-concat of one task's (F_d, P), 1x1 projection to C0, flattened
    // to raster-order tokens.
    TensorPtr combine_task(std::size_t t, const TensorPtr& f_d, const TensorPtr& p) const;
};

}  // namespace invpt
