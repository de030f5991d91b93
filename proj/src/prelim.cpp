#include "invpt/prelim.hpp"

namespace invpt {

MultiTaskSequence MultiTaskSequence::wrap(TensorPtr tokens, std::int64_t tasks, std::int64_t h,
                                          std::int64_t w) {
    if (tokens->ndim() != 2 || tokens->dim(0) != tasks * h * w)
        throw DimensionError("multi-task sequence expects " + std::to_string(tasks * h * w) +
                             " rows, got " + shape_str(tokens->shape));
    MultiTaskSequence s;
    s.tokens = std::move(tokens);
    s.tasks = tasks;
    s.h = h;
    s.w = w;
    s.c = s.tokens->dim(1);
    return s;
}

std::vector<TensorPtr> MultiTaskSequence::task_slices() const {
    return split_even(tokens, 0, tasks);
}

TensorPtr tokens_to_map(const TensorPtr& tokens, std::int64_t h, std::int64_t w) {
    if (tokens->ndim() != 2 || tokens->dim(0) != h * w)
        throw DimensionError("tokens_to_map expects " + std::to_string(h * w) + " rows, got " +
                             shape_str(tokens->shape));
    return reshape(transpose(tokens), {tokens->dim(1), h, w});
}

TensorPtr map_to_tokens(const TensorPtr& map) {
    if (map->ndim() != 3) throw DimensionError("map_to_tokens expects a (C,H,W) tensor");
    return transpose(reshape(map, {map->dim(0), map->dim(1) * map->dim(2)}));
}

void TaskSpec::validate() const {
    if (name.empty()) throw ConfigError("task name must be non-empty");
    if (kind == TaskKind::Categorical && classes < 2)
        throw ConfigError("categorical task " + name + " needs >= 2 classes");
    if (kind == TaskKind::Continuous && channels < 1)
        throw ConfigError("continuous task " + name + " needs >= 1 channel");
    if (loss_weight <= 0.0) throw ConfigError("task " + name + " loss weight must be positive");
}

void PrelimDecoder::init(ParamStore& ps, const std::string& name, std::int64_t c_e,
                         std::int64_t c_p, std::int64_t out_ch, Rng& rng) {
    u1.init(ps, name + ".u1", c_e, c_p, 3, 1, 1, rng);
    u2.init(ps, name + ".u2", c_p, c_p, 3, 1, 1, rng);
    pred.init(ps, name + ".pred", c_p, out_ch, 1, 1, 0, true, rng);
}

std::pair<TensorPtr, TensorPtr> PrelimDecoder::forward(const TensorPtr& enc_tokens,
                                                       std::int64_t h0, std::int64_t w0,
                                                       bool training, bool update_running) const {
    auto x = tokens_to_map(enc_tokens, h0, w0);
    auto f = u2.forward(u1.forward(x, training, update_running), training, update_running);
    return {f, pred.forward(f)};
}

void PrelimStage::init(ParamStore& ps, const std::vector<TaskSpec>& tasks_, std::int64_t c_e,
                       std::int64_t c_p_, std::int64_t c0_, Rng& rng) {
    if (tasks_.size() < 2) throw ConfigError("multi-task model needs at least 2 tasks");
    if (c0_ % 4 != 0)
        throw ConfigError("C0 must be divisible by 4 (the decoder halves channels twice), got " +
                          std::to_string(c0_));
    tasks = tasks_;
    for (const auto& t : tasks) t.validate();
    c_p = c_p_;
    c0 = c0_;
    decoders.resize(tasks.size());
    proj.resize(tasks.size());
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        decoders[t].init(ps, "prelim." + tasks[t].name, c_e, c_p, tasks[t].out_channels(), rng);
        proj[t].init(ps, "prelim." + tasks[t].name + ".proj", c_p + tasks[t].out_channels(), c0, 1,
                     1, 0, true, rng);
    }
}

TensorPtr PrelimStage::combine_task(std::size_t t, const TensorPtr& f_d, const TensorPtr& p) const {
    auto cat = concat({f_d, p}, 0);  // channel axis of a (C,H,W) map
    return map_to_tokens(proj[t].forward(cat));
}

PrelimStage::Output PrelimStage::forward(const TensorPtr& enc_tokens, std::int64_t h0,
                                         std::int64_t w0, bool training,
                                         bool update_running) const {
    Output out;
    std::vector<TensorPtr> per_task_tokens;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        auto [f_d, p] = decoders[t].forward(enc_tokens, h0, w0, training, update_running);
        out.features.push_back(f_d);
        out.predictions.push_back(p);
        per_task_tokens.push_back(combine_task(t, f_d, p));
    }
    out.combined = MultiTaskSequence::wrap(concat(per_task_tokens, 0),
                                           static_cast<std::int64_t>(tasks.size()), h0, w0);
    return out;
}

}  // namespace invpt
