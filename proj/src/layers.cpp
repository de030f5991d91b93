#include "invpt/layers.hpp"

#include <utility>

namespace invpt {

TensorPtr ParamStore::add(const std::string& name, TensorPtr t, bool trainable) {
    if (index_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
    t->requires_grad = trainable;
    index_[name] = entries_.size();
    entries_.push_back({name, t, trainable});
    return t;
}

TensorPtr ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : entries_[it->second].tensor;
}

std::vector<TensorPtr> ParamStore::trainable() const {
    std::vector<TensorPtr> out;
    for (const auto& e : entries_)
        if (e.trainable) out.push_back(e.tensor);
    return out;
}

std::int64_t ParamStore::total_elements() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor->numel();
    return n;
}

void ParamStore::zero_grads() {
    for (const auto& e : entries_)
        if (e.trainable) {
            e.tensor->ensure_grad();
            e.tensor->zero_grad();
        }
}

TensorPtr init_normal(ParamStore& ps, const std::string& name, Shape shape, Rng& rng,
                      double stddev) {
    auto t = Tensor::zeros(std::move(shape));
    for (auto& v : t->data) v = rng.normal(0.0, stddev);
    return ps.add(name, t, true);
}

TensorPtr init_const(ParamStore& ps, const std::string& name, Shape shape, double value,
                     bool trainable) {
    return ps.add(name, Tensor::full(std::move(shape), value), trainable);
}

void Linear::init(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out,
                  bool bias, Rng& rng) {
    w = init_normal(ps, name + ".w", {in, out}, rng);
    b = bias ? init_const(ps, name + ".b", {out}, 0.0) : nullptr;
}

TensorPtr Linear::forward(const TensorPtr& x) const {
    auto y = matmul(x, w);
    return b ? add_rowvec(y, b) : y;
}

void Conv2d::init(ParamStore& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
                  std::int64_t k, std::int64_t stride_, std::int64_t pad_, bool bias, Rng& rng) {
    stride = stride_;
    pad = pad_;
    w = init_normal(ps, name + ".w", {cout, cin, k, k}, rng);
    b = bias ? init_const(ps, name + ".b", {cout}, 0.0) : nullptr;
}

TensorPtr Conv2d::forward(const TensorPtr& x) const {
    auto y = conv2d(x, w, stride, pad);
    return b ? add_channel_bias(y, b) : y;
}

void TransposedConv2d::init(ParamStore& ps, const std::string& name, std::int64_t cin,
                            std::int64_t cout, std::int64_t k, Rng& rng) {
    stride = k;
    w = init_normal(ps, name + ".w", {cin, cout, k, k}, rng);
}

TensorPtr TransposedConv2d::forward(const TensorPtr& x) const {
    return transposed_conv2d(x, w, stride);
}

void LayerNorm::init(ParamStore& ps, const std::string& name, std::int64_t width) {
    gamma = init_const(ps, name + ".g", {width}, 1.0);
    beta = init_const(ps, name + ".b", {width}, 0.0);
}

TensorPtr LayerNorm::forward(const TensorPtr& x) const {
    return layer_norm_rows(x, gamma, beta);
}

void BatchNorm2d::init(ParamStore& ps, const std::string& name, std::int64_t channels) {
    gamma = init_const(ps, name + ".g", {channels}, 1.0);
    beta = init_const(ps, name + ".b", {channels}, 0.0);
    running_mean = init_const(ps, name + ".rm", {channels}, 0.0, false);
    running_var = init_const(ps, name + ".rv", {channels}, 1.0, false);
}

TensorPtr BatchNorm2d::forward(const TensorPtr& x, bool training, bool update_running) const {
    return batch_norm2d(x, gamma, beta, running_mean->data.data(), running_var->data.data(),
                        training, update_running);
}

void ConvBnRelu::init(ParamStore& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
                      std::int64_t k, std::int64_t stride, std::int64_t pad, Rng& rng) {
    conv.init(ps, name + ".conv", cin, cout, k, stride, pad, /*bias=*/false, rng);
    bn.init(ps, name + ".bn", cout);
}

TensorPtr ConvBnRelu::forward(const TensorPtr& x, bool training, bool update_running) const {
    return relu(bn.forward(conv.forward(x), training, update_running));
}

}  // namespace invpt
