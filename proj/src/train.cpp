#include "invpt/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "invpt/metrics.hpp"

namespace invpt::train {

TensorPtr cross_entropy_loss(const TensorPtr& logits, const std::vector<std::int64_t>& labels,
                             std::int64_t ignore) {
    if (logits->ndim() != 3) throw DimensionError("cross_entropy expects (K,H,W) logits");
    const std::int64_t k = logits->dim(0);
    const std::int64_t hw = logits->dim(1) * logits->dim(2);
    if (static_cast<std::int64_t>(labels.size()) != hw)
        throw DimensionError("cross_entropy label count " + std::to_string(labels.size()) +
                             " != pixel count " + std::to_string(hw));
    std::int64_t valid = 0;
    auto onehot = Tensor::zeros({hw, k});
    for (std::int64_t p = 0; p < hw; ++p) {
        const std::int64_t id = labels[p];
        if (id == ignore) continue;
        if (id < 0 || id >= k)
            throw DataError("label id " + std::to_string(id) + " outside [0," +
                            std::to_string(k) + ") and not the ignore id");
        onehot->data[p * k + id] = 1.0;
        ++valid;
    }
    if (valid == 0) return Tensor::scalar(0.0);
    auto logp = log_softmax_rows(map_to_tokens(logits));
    return scale(sum(mul(logp, onehot)), -1.0 / static_cast<double>(valid));
}

TensorPtr l1_loss(const TensorPtr& pred, const TensorPtr& target,
                  const std::vector<std::uint8_t>* mask) {
    if (pred->shape != target->shape)
        throw DimensionError("l1_loss shape mismatch: " + shape_str(pred->shape) + " vs " +
                             shape_str(target->shape));
    auto diff = abs(sub(pred, target));
    if (!mask) return mean(diff);
    if (pred->ndim() != 3) throw DimensionError("masked l1_loss expects (C,H,W)");
    const std::int64_t c = pred->dim(0), hw = pred->dim(1) * pred->dim(2);
    if (static_cast<std::int64_t>(mask->size()) != hw)
        throw DimensionError("l1_loss mask length != pixel count");
    std::int64_t valid = 0;
    auto weights = Tensor::zeros(pred->shape);
    for (std::int64_t p = 0; p < hw; ++p) {
        if (!(*mask)[p]) continue;
        ++valid;
        for (std::int64_t ch = 0; ch < c; ++ch) weights->data[ch * hw + p] = 1.0;
    }
    if (valid == 0) return Tensor::scalar(0.0);
    return scale(sum(mul(diff, weights)), 1.0 / static_cast<double>(valid * c));
}

TaskLabels labels_for(const TaskSpec& task, const data::Sample& sample) {
    TaskLabels out;
    const std::int64_t hw = sample.h * sample.w;
    if (task.name == "semseg") {
        out.ids.assign(sample.semseg.begin(), sample.semseg.end());
    } else if (task.name == "boundary") {
        out.ids.assign(sample.boundary.begin(), sample.boundary.end());
    } else if (task.name == "depth") {
        out.values = Tensor::from({1, sample.h, sample.w}, sample.depth);
        out.mask.assign(hw, 1);
    } else {
        throw ConfigError("no label source for task '" + task.name +
                          "' (expected semseg, depth or boundary)");
    }
    return out;
}

TensorPtr task_loss(const TaskSpec& task, const TensorPtr& pred, const TaskLabels& labels) {
    if (task.kind == TaskKind::Categorical) return cross_entropy_loss(pred, labels.ids);
    return l1_loss(pred, labels.values, labels.mask.empty() ? nullptr : &labels.mask);
}

// ---------------------------------------------------------------------------
// optimizer

Adam::Adam(std::vector<TensorPtr> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p->data.size(), 0.0);
        v_.emplace_back(p->data.size(), 0.0);
    }
}

double Adam::lr_at(std::int64_t iter) const {
    const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(cfg_.max_iters);
    return cfg_.lr * std::pow(std::max(frac, 0.0), cfg_.poly_power);
}

void Adam::step(std::int64_t iter) {
    ++t_;
    const double lr = lr_at(iter);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = *params_[pi];
        if (p.grad.empty()) p.ensure_grad();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double g = p.grad[i] + cfg_.weight_decay * p.data[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// training loop

namespace {

nlohmann::ordered_json record_json(const LogRecord& rec, const std::vector<TaskSpec>& tasks) {
    nlohmann::ordered_json j;
    j["iter"] = rec.iter;
    j["lr"] = rec.lr;
    nlohmann::ordered_json losses;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        losses[tasks[t].name] = {{"prelim", rec.losses.prelim[t]},
                                 {"final", rec.losses.final_[t]}};
    }
    j["losses"] = std::move(losses);
    j["total"] = rec.losses.total;
    return j;
}

}  // namespace

std::vector<LogRecord> train_loop(MultiTaskModel& model, const std::vector<data::Sample>& dataset,
                                  const TrainSettings& settings, std::ostream* log_stream) {
    if (dataset.empty()) throw DataError("training dataset is empty");
    const auto& tasks = model.config().tasks;
    const bool prelim_only = model.config().decoder.stages == 0;
    AdamConfig adam_cfg = settings.adam;
    adam_cfg.max_iters = settings.iters;
    Adam opt(model.params().trainable(), adam_cfg);
    Rng sampler = Rng::for_index(settings.seed, 0x42);
    const double inv_batch = 1.0 / static_cast<double>(settings.batch);

    std::vector<LogRecord> log;
    for (std::int64_t iter = 0; iter < settings.iters; ++iter) {
        model.params().zero_grads();
        LossReport report;
        report.prelim.assign(tasks.size(), 0.0);
        report.final_.assign(tasks.size(), 0.0);
        for (std::int64_t b = 0; b < settings.batch; ++b) {
            const auto& sample =
                dataset[sampler.next_below(static_cast<std::uint64_t>(dataset.size()))];
            auto out = model.forward(data::image_tensor(sample), /*training=*/true,
                                     /*update_running=*/true);
            TensorPtr sample_total;
            for (std::size_t t = 0; t < tasks.size(); ++t) {
                const auto labels = labels_for(tasks[t], sample);
                auto pre = task_loss(tasks[t], out.prelim_pred[t], labels);
                report.prelim[t] += pre->item() * inv_batch;
                TensorPtr contrib = pre;
                if (!prelim_only) {
                    auto fin = task_loss(tasks[t], out.final_pred[t], labels);
                    report.final_[t] += fin->item() * inv_batch;
                    contrib = add(pre, fin);
                }
                auto weighted = scale(contrib, tasks[t].loss_weight);
                sample_total = sample_total ? add(sample_total, weighted) : weighted;
            }
            backward(scale(sample_total, inv_batch));
        }
        for (std::size_t t = 0; t < tasks.size(); ++t)
            report.total += tasks[t].loss_weight * (report.prelim[t] + report.final_[t]);
        if (!std::isfinite(report.total))
            throw NumericError("non-finite loss at iteration " + std::to_string(iter));
        opt.step(iter);

        if (iter % settings.log_interval == 0 || iter + 1 == settings.iters) {
            LogRecord rec{iter, opt.lr_at(iter), std::move(report)};
            if (log_stream) *log_stream << record_json(rec, tasks).dump() << "\n";
            log.push_back(std::move(rec));
        }
    }
    return log;
}

// ---------------------------------------------------------------------------
// evaluation

std::map<std::string, std::optional<double>> evaluate(const MultiTaskModel& model,
                                                      const std::vector<data::Sample>& dataset) {
    NoGradGuard no_grad;
    const auto& tasks = model.config().tasks;
    std::vector<std::vector<std::int64_t>> id_pred(tasks.size()), id_label(tasks.size());
    std::vector<std::vector<double>> val_pred(tasks.size()), val_label(tasks.size());
    std::vector<metrics::BoundaryCounts> bcounts(tasks.size());

    for (const auto& sample : dataset) {
        auto out = model.forward(data::image_tensor(sample), /*training=*/false,
                                 /*update_running=*/false);
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            const auto& pred = out.final_pred[t];
            const std::int64_t hw = sample.h * sample.w;
            if (tasks[t].kind == TaskKind::Categorical) {
                const std::int64_t k = pred->dim(0);
                std::vector<std::int64_t> ids(hw);
                for (std::int64_t p = 0; p < hw; ++p) {
                    std::int64_t best = 0;
                    for (std::int64_t c = 1; c < k; ++c)
                        if (pred->data[c * hw + p] > pred->data[best * hw + p]) best = c;
                    ids[p] = best;
                }
                if (tasks[t].metric == "boundary_f1") {
                    std::vector<std::uint8_t> mask(hw);
                    for (std::int64_t p = 0; p < hw; ++p)
                        mask[p] = ids[p] ? 1 : 0;
                    bcounts[t] += metrics::boundary_match_counts(
                        mask, sample.boundary, sample.h, sample.w);
                } else {
                    id_pred[t].insert(id_pred[t].end(), ids.begin(), ids.end());
                    id_label[t].insert(id_label[t].end(), sample.semseg.begin(),
                                       sample.semseg.end());
                }
            } else {
                val_pred[t].insert(val_pred[t].end(), pred->data.begin(),
                                   pred->data.begin() + hw);
                val_label[t].insert(val_label[t].end(), sample.depth.begin(),
                                    sample.depth.end());
            }
        }
    }

    std::map<std::string, std::optional<double>> out;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        if (tasks[t].metric == "miou") {
            out[tasks[t].name] = metrics::miou(id_pred[t], id_label[t], tasks[t].classes);
        } else if (tasks[t].metric == "rmse") {
            out[tasks[t].name] = metrics::rmse(
                val_pred[t], val_label[t],
                std::vector<std::uint8_t>(val_pred[t].size(), 1));
        } else if (tasks[t].metric == "boundary_f1") {
            out[tasks[t].name] = bcounts[t].f1();
        } else {
            throw ConfigError("task " + tasks[t].name + " has unsupported metric '" +
                              tasks[t].metric + "' for synthetic evaluation");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// gradient checks

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ArgumentError("max_rel_err: size mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

namespace {

TensorPtr rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                      bool requires_grad = true) {
    auto t = Tensor::zeros(std::move(shape), requires_grad);
    for (auto& v : t->data) v = rng.uniform(lo, hi);
    return t;
}

// Keeps values away from the kinks of relu/abs so central differences stay
// meaningful.
TensorPtr rand_tensor_away_from_zero(Shape shape, Rng& rng, double margin = 0.2) {
    auto t = Tensor::zeros(std::move(shape), true);
    for (auto& v : t->data) {
        const double u = rng.uniform(margin, 1.0);
        v = rng.uniform() < 0.5 ? -u : u;
    }
    return t;
}

// Weighted-sum readout with weights fixed on first use, so the loss is a
// deterministic function across repeated forward evaluations. A plain sum
// would annihilate softmax/norm gradients.
struct Readout {
    Rng rng{0x5EED};
    std::vector<TensorPtr> weights;
    std::size_t next = 0;

    TensorPtr operator()(const TensorPtr& y) {
        if (next == weights.size()) {
            auto r = Tensor::zeros(y->shape);
            for (auto& v : r->data) v = rng.uniform(-1.0, 1.0);
            weights.push_back(r);
        }
        auto r = weights[next++];
        if (r->shape != y->shape)
            throw ArgumentError("readout called with an inconsistent shape sequence");
        return sum(mul(y, r));
    }
};

struct Harness {
    std::vector<GradCheckResult> results;
    double tolerance = 1e-6;
    // Per-op checks use the canonical h = 1e-5. Composite modules carry much
    // higher curvature, where the O(h^2) truncation term of central
    // differences dominates; a smaller step keeps the oracle meaningful.
    double fd_step = 1e-5;
    Readout ro;

    // fwd builds the scalar loss from current leaf data on every call.
    void check(const std::string& name, const std::function<TensorPtr()>& fwd,
               const std::vector<std::pair<std::string, TensorPtr>>& leaves) {
        ro.weights.clear();
        ro.next = 0;
        auto run = [&] {
            ro.next = 0;
            return fwd();
        };
        for (auto& [lname, leaf] : leaves) {
            leaf->ensure_grad();
            leaf->zero_grad();
        }
        backward(run());
        auto value = [&]() {
            NoGradGuard ng;
            return run()->item();
        };
        for (auto& [lname, leaf] : leaves) {
            auto fd = finite_diff_grad(value, leaf, fd_step);
            leaf->ensure_grad();
            const double err = max_rel_err(leaf->grad, fd->data);
            results.push_back({name + "/" + lname, err, tolerance, err < tolerance});
        }
    }
};

std::vector<GradCheckResult> gradcheck_ops_impl(std::uint64_t seed) {
    Rng rng(seed);
    Harness h;
    h.tolerance = 1e-6;

    {
        auto a = rand_tensor({4, 3}, rng), b = rand_tensor({3, 5}, rng);
        h.check("matmul", [&] { return h.ro(matmul(a, b)); },
                {{"a", a}, {"b", b}});
    }
    {
        auto x = rand_tensor({2, 5, 5}, rng);
        auto w = rand_tensor({3, 2, 3, 3}, rng);
        h.check("conv2d_s1p1", [&] { return h.ro(conv2d(x, w, 1, 1)); },
                {{"x", x}, {"w", w}});
    }
    {
        auto x = rand_tensor({2, 6, 6}, rng);
        auto w = rand_tensor({3, 2, 3, 3}, rng);
        h.check("conv2d_s2p1", [&] { return h.ro(conv2d(x, w, 2, 1)); },
                {{"x", x}, {"w", w}});
    }
    {
        auto x = rand_tensor({2, 3, 3}, rng);
        auto w = rand_tensor({2, 3, 2, 2}, rng);
        h.check("transposed_conv2d",
                [&] { return h.ro(transposed_conv2d(x, w, 2)); },
                {{"x", x}, {"w", w}});
    }
    {
        auto x = rand_tensor({3, 4, 4}, rng);
        h.check("avg_pool2d", [&] { return h.ro(avg_pool2d(x, 2)); }, {{"x", x}});
    }
    {
        auto x = rand_tensor({2, 4, 5}, rng);
        h.check("bilinear_up", [&] { return h.ro(bilinear_resize(x, 8, 10)); },
                {{"x", x}});
        h.check("bilinear_down", [&] { return h.ro(bilinear_resize(x, 3, 3)); },
                {{"x", x}});
    }
    {
        auto a = rand_tensor({4, 6}, rng);
        h.check("softmax_rows", [&] { return h.ro(softmax_rows(a)); }, {{"a", a}});
        h.check("log_softmax_rows", [&] { return h.ro(log_softmax_rows(a)); },
                {{"a", a}});
    }
    {
        auto x = rand_tensor({5, 6}, rng);
        auto g = rand_tensor({6}, rng, 0.5, 1.5);
        auto b = rand_tensor({6}, rng);
        h.check("layer_norm", [&] { return h.ro(layer_norm_rows(x, g, b)); },
                {{"x", x}, {"gamma", g}, {"beta", b}});
    }
    {
        auto x = rand_tensor({3, 4, 4}, rng);
        auto g = rand_tensor({3}, rng, 0.5, 1.5);
        auto b = rand_tensor({3}, rng);
        BatchNormState state(3);
        h.check("batch_norm_train",
                [&] {
                    return h.ro(batch_norm2d(x, g, b, state, true, false));
                },
                {{"x", x}, {"gamma", g}, {"beta", b}});
        h.check("batch_norm_eval",
                [&] {
                    return h.ro(batch_norm2d(x, g, b, state, false, false));
                },
                {{"x", x}, {"gamma", g}, {"beta", b}});
    }
    {
        auto x = rand_tensor_away_from_zero({4, 5}, rng);
        h.check("relu", [&] { return h.ro(relu(x)); }, {{"x", x}});
        h.check("abs", [&] { return h.ro(abs(x)); }, {{"x", x}});
    }
    {
        auto x = rand_tensor({3, 4}, rng);
        h.check("exp", [&] { return h.ro(exp(x)); }, {{"x", x}});
    }
    {
        auto x = rand_tensor({3, 4}, rng, 0.5, 2.0);
        h.check("log", [&] { return h.ro(log(x)); }, {{"x", x}});
    }
    {
        auto a = rand_tensor({3, 4}, rng), b = rand_tensor({3, 4}, rng);
        h.check("add", [&] { return h.ro(add(a, b)); }, {{"a", a}, {"b", b}});
        h.check("sub", [&] { return h.ro(sub(a, b)); }, {{"a", a}, {"b", b}});
        h.check("mul", [&] { return h.ro(mul(a, b)); }, {{"a", a}, {"b", b}});
        h.check("scale", [&] { return h.ro(scale(a, -1.7)); }, {{"a", a}});
    }
    {
        auto a = rand_tensor({3, 4}, rng);
        auto s = rand_tensor({1}, rng);
        h.check("scale_by", [&] { return h.ro(scale_by(a, s)); },
                {{"a", a}, {"s", s}});
    }
    {
        auto a = rand_tensor({3, 4}, rng);
        auto v = rand_tensor({4}, rng);
        h.check("add_rowvec", [&] { return h.ro(add_rowvec(a, v)); },
                {{"a", a}, {"v", v}});
    }
    {
        auto x = rand_tensor({3, 2, 2}, rng);
        auto b = rand_tensor({3}, rng);
        h.check("add_channel_bias", [&] { return h.ro(add_channel_bias(x, b)); },
                {{"x", x}, {"b", b}});
    }
    {
        auto a = rand_tensor({3, 6}, rng);
        std::vector<std::int64_t> idx{4, 0, 2};
        h.check("gather_columns", [&] { return h.ro(gather_columns(a, idx)); },
                {{"a", a}});
        auto b = rand_tensor({3, 3}, rng);
        h.check("scatter_columns", [&] { return h.ro(scatter_columns(b, idx, 6)); },
                {{"b", b}});
    }
    {
        auto a = rand_tensor({2, 3}, rng), b = rand_tensor({2, 3}, rng);
        h.check("concat_split",
                [&] {
                    auto c = concat({a, b}, 0);
                    auto parts = split_even(c, 1, 3);
                    return h.ro(concat({parts[2], parts[0], parts[1]}, 1));
                },
                {{"a", a}, {"b", b}});
    }
    {
        auto a = rand_tensor({3, 4}, rng);
        h.check("transpose_reshape",
                [&] { return h.ro(reshape(transpose(a), {2, 6})); }, {{"a", a}});
        h.check("sum", [&] { return sum(a); }, {{"a", a}});
        h.check("mean", [&] { return scale(mean(a), 3.0); }, {{"a", a}});
    }
    return h.results;
}

std::vector<GradCheckResult> gradcheck_modules_impl(std::uint64_t seed) {
    Rng rng(seed);
    Harness h;
    h.tolerance = 1e-6;
    h.fd_step = 1e-7;

    {
        // encoder block and full micro encoder
        ParamStore ps;
        EncoderConfig ecfg;
        ecfg.patch = 2;
        ecfg.depth = 4;
        ecfg.width = 8;
        ecfg.heads = 2;
        ecfg.image_h = 8;
        ecfg.image_w = 8;
        Encoder enc;
        Rng wrng(seed ^ 0x11);
        enc.init(ps, ecfg, wrng);
        auto image = rand_tensor({3, 8, 8}, rng, 0.0, 1.0);
        std::vector<std::pair<std::string, TensorPtr>> leaves{{"image", image}};
        for (const auto& e : ps.entries())
            if (e.trainable) leaves.emplace_back(e.name, e.tensor);
        // loss: plain sum of the final tokens
        h.check("encoder", [&] { return sum(enc.forward(image).final_tokens); }, leaves);
    }
    {
        // preliminary decoders + combine
        ParamStore ps;
        Rng wrng(seed ^ 0x22);
        std::vector<TaskSpec> tasks(2);
        tasks[0] = {"semseg", TaskKind::Categorical, 3, 1, 1.0, "miou", false};
        tasks[1] = {"depth", TaskKind::Continuous, 2, 1, 1.0, "rmse", true};
        PrelimStage stage;
        stage.init(ps, tasks, 6, 5, 8, wrng);
        auto enc_tokens = rand_tensor({16, 6}, rng);
        std::vector<std::pair<std::string, TensorPtr>> leaves{{"enc", enc_tokens}};
        for (const auto& e : ps.entries())
            if (e.trainable) leaves.emplace_back(e.name, e.tensor);
        h.check("prelim",
                [&] {
                    auto out = stage.forward(enc_tokens, 4, 4, true, false);
                    auto loss = h.ro(out.combined.tokens);
                    for (auto& p : out.predictions) loss = add(loss, h.ro(p));
                    return loss;
                },
                leaves);
    }
    {
        // fusion and selective attention with a fixed, well-separated message
        Rng wrng(seed ^ 0x33);
        auto q = rand_tensor({6, 4}, rng);
        auto k = rand_tensor({8, 4}, rng);
        auto v = rand_tensor({8, 4}, rng);
        auto msg = Tensor::zeros({6, 8}, true);
        for (std::int64_t j = 0; j < 8; ++j)
            for (std::int64_t i = 0; i < 6; ++i)
                msg->data[i * 8 + j] =
                    static_cast<double>((j * 7) % 8) + 0.1 * wrng.uniform(-1.0, 1.0);
        auto a1 = Tensor::scalar(0.8, true);
        auto a2 = Tensor::scalar(0.3, true);
        h.check("fusion_attention",
                [&] {
                    auto a = attention_scores(q, k, 4);
                    auto r = fusion_attention(a, msg, a1, a2);
                    return add(h.ro(matmul(r.attn, v)), h.ro(r.message));
                },
                {{"q", q}, {"k", k}, {"v", v}, {"msg", msg}, {"a1", a1}, {"a2", a2}});
        h.check("selective_attention",
                [&] {
                    auto r = selective_attention(q, k, v, msg, 0.5, 4);
                    return add(h.ro(matmul(r.attn, r.v_imp)), h.ro(r.message));
                },
                {{"q", q}, {"k", k}, {"v", v}});
    }
    {
        // one full UP-Transformer stage (stage 1 geometry, fusion variant)
        ParamStore ps;
        Rng wrng(seed ^ 0x44);
        const std::int64_t T = 2, h0 = 4, w0 = 4, c0 = 8, c_e = 6;
        const auto plan = StagePlan::make(T, h0, w0, c0, 1);
        UpTransformerStage stage;
        stage.init(ps, "s1", 1, c_e, plan, wrng);
        DecoderConfig dcfg;
        dcfg.variant = AttentionVariant::Fusion;
        dcfg.heads = 1;
        auto f_in = rand_tensor({T * h0 * w0, c0}, rng);
        auto tap = rand_tensor({h0 * w0, c_e}, rng);
        auto prev_scores = rand_tensor({T * (h0 / 2) * (w0 / 2), T * h0 * w0 / 4}, rng);
        std::vector<std::pair<std::string, TensorPtr>> leaves{
            {"f_in", f_in}, {"tap", tap}, {"prev", prev_scores}};
        for (const auto& e : ps.entries())
            if (e.trainable) leaves.emplace_back(e.name, e.tensor);
        h.check("up_transformer_stage1",
                [&] {
                    std::vector<AttentionState> prev(1);
                    prev[0].scores = prev_scores;
                    prev[0].n_q = prev_scores->dim(0);
                    prev[0].n_k = prev_scores->dim(1);
                    prev[0].q_h = h0 / 2;
                    prev[0].q_w = w0 / 2;
                    auto seq = MultiTaskSequence::wrap(f_in, T, h0, w0);
                    auto res = stage.forward(seq, &prev, tap, dcfg, plan, true, false);
                    return h.ro(res.next.tokens);
                },
                leaves);
    }
    return h.results;
}

ModelConfig micro_model_config(AttentionVariant variant) {
    ModelConfig cfg;
    cfg.encoder.patch = 4;
    cfg.encoder.depth = 4;
    cfg.encoder.width = 8;
    cfg.encoder.heads = 2;
    cfg.encoder.image_h = 16;
    cfg.encoder.image_w = 16;
    cfg.tasks.resize(2);
    cfg.tasks[0] = {"semseg", TaskKind::Categorical, 3, 1, 1.0, "miou", false};
    cfg.tasks[1] = {"depth", TaskKind::Continuous, 2, 1, 1.0, "rmse", true};
    cfg.c_p = 8;
    cfg.c0 = 8;
    cfg.decoder.variant = variant;
    cfg.decoder.retention = 0.5;
    cfg.decoder.heads = 1;
    cfg.decoder.efa = true;
    cfg.decoder.efa_stage0 = false;
    cfg.decoder.stages = 3;
    return cfg;
}

std::vector<GradCheckResult> gradcheck_end2end_impl(std::uint64_t seed) {
    Harness h;
    h.tolerance = 1e-5;
    h.fd_step = 1e-7;
    for (auto variant : {AttentionVariant::Fusion, AttentionVariant::Selective}) {
        const char* vname = variant == AttentionVariant::Fusion ? "fusion" : "selective";
        MultiTaskModel model;
        model.init(micro_model_config(variant), seed);
        Rng rng(seed ^ 0x55);
        auto image = rand_tensor({3, 16, 16}, rng, 0.0, 1.0);
        std::vector<std::pair<std::string, TensorPtr>> leaves{{"image", image}};
        for (const auto& e : model.params().entries())
            if (e.trainable) leaves.emplace_back(e.name, e.tensor);
        h.check(std::string("model_") + vname,
                [&] {
                    auto out = model.forward(image, true, false);
                    TensorPtr loss;
                    for (auto& p : out.final_pred)
                        loss = loss ? add(loss, sum(p)) : sum(p);
                    for (auto& p : out.prelim_pred) loss = add(loss, sum(p));
                    return loss;
                },
                leaves);
    }
    return h.results;
}

}  // namespace

std::vector<GradCheckResult> gradcheck_suite(GradCheckScope scope, std::uint64_t seed) {
    switch (scope) {
        case GradCheckScope::Ops:
            return gradcheck_ops_impl(seed);
        case GradCheckScope::Modules:
            return gradcheck_modules_impl(seed);
        default:
            return gradcheck_end2end_impl(seed);
    }
}

}  // namespace invpt::train
