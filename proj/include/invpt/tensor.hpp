#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "invpt/error.hpp"

namespace invpt {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major float64 tensor. Ops record parents and a backward closure
// on the output, forming an implicit tape; Graph lists the tape of a root in
// topological order. Values are treated as immutable once an op has consumed
// them; a graph and its backward pass belong to a single thread.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // sized lazily; same length as data when present

    const char* op = "leaf";
    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;

    static TensorPtr zeros(Shape shape, bool requires_grad = false);
    static TensorPtr full(Shape shape, double value, bool requires_grad = false);
    static TensorPtr from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static TensorPtr scalar(double value, bool requires_grad = false);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t ndim() const { return shape.size(); }
    double item() const;

    void ensure_grad();
    void zero_grad();
    bool all_finite() const;
};

bool grad_enabled();

// Disables tape recording in scope (eval / oracle computations).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Tape of every tensor reachable from a root through parent links, ordered so
// that inputs always precede their consumers.
struct Graph {
    std::vector<TensorPtr> nodes;
    explicit Graph(const TensorPtr& root);
};

// Reverse-topological accumulation from a scalar root; populates .grad on
// every requires_grad tensor in the graph. Grads accumulate; callers zero
// parameter grads between steps.
void backward(Graph& graph, const TensorPtr& root);
void backward(const TensorPtr& root);

// Central finite differences (f(x+h e_i) - f(x-h e_i)) / 2h; f must be a
// deterministic scalar function reading x->data. Verification oracle for
// backward(); independent of the tape.
TensorPtr finite_diff_grad(const std::function<double()>& f, const TensorPtr& x, double h = 1e-5);

// ---- linear algebra ----
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(const TensorPtr& a);

// ---- shape ops ----
TensorPtr reshape(const TensorPtr& a, Shape shape);
TensorPtr concat(const std::vector<TensorPtr>& parts, int axis);
std::vector<TensorPtr> split(const TensorPtr& a, int axis, const std::vector<std::int64_t>& sizes);
std::vector<TensorPtr> split_even(const TensorPtr& a, int axis, std::int64_t parts);

// ---- elementwise ----
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double s);
TensorPtr scale_by(const TensorPtr& a, const TensorPtr& s);  // s is a learned scalar
TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v);
TensorPtr add_channel_bias(const TensorPtr& x, const TensorPtr& b);
TensorPtr relu(const TensorPtr& a);
TensorPtr exp(const TensorPtr& a);
TensorPtr log(const TensorPtr& a);
TensorPtr abs(const TensorPtr& a);

// ---- reductions ----
TensorPtr sum(const TensorPtr& a);
TensorPtr mean(const TensorPtr& a);

// ---- rows ----
TensorPtr softmax_rows(const TensorPtr& a);
TensorPtr log_softmax_rows(const TensorPtr& a);
TensorPtr layer_norm_rows(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                          double eps = 1e-5);

// ---- spatial ----
TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, std::int64_t stride, std::int64_t pad);
TensorPtr transposed_conv2d(const TensorPtr& x, const TensorPtr& w, std::int64_t stride);
TensorPtr avg_pool2d(const TensorPtr& x, std::int64_t k);
TensorPtr bilinear_resize(const TensorPtr& x, std::int64_t oh, std::int64_t ow);

// Per-channel batch norm over the spatial extent of one (C,H,W) map, with
// running statistics for eval mode. Running buffers live outside the tape and
// are mutated in place when training with update_running set.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    explicit BatchNormState(std::int64_t channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};
TensorPtr batch_norm2d(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                       BatchNormState& state, bool training, bool update_running,
                       double momentum = 0.1, double eps = 1e-5);
TensorPtr batch_norm2d(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                       double* running_mean, double* running_var, bool training,
                       bool update_running, double momentum = 0.1, double eps = 1e-5);

// ---- selection ----
// Indices of the k largest values; ties break toward the lower index; result
// sorted ascending by index.
std::vector<std::int64_t> topk_indices(const std::vector<double>& v, std::int64_t k);
std::vector<std::int64_t> topk_indices(const TensorPtr& v, std::int64_t k);
TensorPtr gather_columns(const TensorPtr& a, const std::vector<std::int64_t>& idx);
// Places the k columns of a into an (m,n) zero matrix at the given indices.
TensorPtr scatter_columns(const TensorPtr& a, const std::vector<std::int64_t>& idx,
                          std::int64_t n);

// Column means of an (m,n) matrix, off the tape.
std::vector<double> column_means(const Tensor& a);

}  // namespace invpt
