#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "invpt/rng.hpp"
#include "invpt/tensor.hpp"

namespace invpt {

// Ordered registry of named tensors. Parameters (trainable) receive gradients
// and optimizer updates; buffers (e.g. batch-norm running stats) are saved to
// checkpoints but never updated by the optimizer. Registration order is the
// canonical order for optimizer state and checkpoint payloads.
class ParamStore {
public:
    struct Entry {
        std::string name;
        TensorPtr tensor;
        bool trainable = true;
    };

    TensorPtr add(const std::string& name, TensorPtr t, bool trainable = true);
    TensorPtr find(const std::string& name) const;  // null if absent
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<TensorPtr> trainable() const;
    std::int64_t total_elements() const;
    void zero_grads();

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Weight init: zero-mean normal with std 0.02 for weights, zeros for biases,
// ones/zeros for norm affine params.
constexpr double kInitStd = 0.02;

struct Linear {
    TensorPtr w;  // (in, out)
    TensorPtr b;  // (out) or null
    void init(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out,
              bool bias, Rng& rng);
    TensorPtr forward(const TensorPtr& x) const;  // x (rows, in) -> (rows, out)
};

struct Conv2d {
    TensorPtr w;  // (cout, cin, k, k)
    TensorPtr b;  // (cout) or null
    std::int64_t stride = 1;
    std::int64_t pad = 0;
    void init(ParamStore& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
              std::int64_t k, std::int64_t stride, std::int64_t pad, bool bias, Rng& rng);
    TensorPtr forward(const TensorPtr& x) const;
};

struct TransposedConv2d {
    TensorPtr w;  // (cin, cout, k, k); kernel == stride
    std::int64_t stride = 2;
    void init(ParamStore& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
              std::int64_t k, Rng& rng);
    TensorPtr forward(const TensorPtr& x) const;
};

struct LayerNorm {
    TensorPtr gamma, beta;
    void init(ParamStore& ps, const std::string& name, std::int64_t width);
    TensorPtr forward(const TensorPtr& x) const;
};

struct BatchNorm2d {
    TensorPtr gamma, beta;
    TensorPtr running_mean, running_var;  // buffers
    void init(ParamStore& ps, const std::string& name, std::int64_t channels);
    TensorPtr forward(const TensorPtr& x, bool training, bool update_running) const;
};

// 3x3 (or 1x1) convolution + batch norm + ReLU; the conv carries no bias.
struct ConvBnRelu {
    Conv2d conv;
    BatchNorm2d bn;
    void init(ParamStore& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
              std::int64_t k, std::int64_t stride, std::int64_t pad, Rng& rng);
    TensorPtr forward(const TensorPtr& x, bool training, bool update_running) const;
};

TensorPtr init_normal(ParamStore& ps, const std::string& name, Shape shape, Rng& rng,
                      double stddev = kInitStd);
TensorPtr init_const(ParamStore& ps, const std::string& name, Shape shape, double value,
                     bool trainable = true);

}  // namespace invpt
