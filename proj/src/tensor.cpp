#include "invpt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>
#include <utility>

#include "invpt/kernels.hpp"

namespace invpt {

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) {
        if (e < 0) throw DimensionError("negative extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

TensorPtr Tensor::zeros(Shape shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::full(Shape shape, double value, bool requires_grad) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

TensorPtr Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
        throw DimensionError("data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
    if (numel() != 1) throw ArgumentError("item() requires a scalar, got " + shape_str(shape));
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

thread_local bool g_grad_enabled = true;

// Tape attachment: parents and the closure are kept only while recording and
// only when some input actually requires a gradient.
TensorPtr make_node(const char* op, TensorPtr out, std::vector<TensorPtr> parents,
                    std::function<void(Tensor&)> bwd) {
    out->op = op;
    bool needs = false;
    if (g_grad_enabled)
        for (const auto& p : parents)
            if (p && p->requires_grad) needs = true;
    if (needs) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward_fn = std::move(bwd);
    }
    return out;
}

void check_2d(const TensorPtr& t, const char* what) {
    if (t->ndim() != 2)
        throw DimensionError(std::string(what) + " must be 2-D, got " + shape_str(t->shape));
}

void check_3d(const TensorPtr& t, const char* what) {
    if (t->ndim() != 3)
        throw DimensionError(std::string(what) + " must be 3-D, got " + shape_str(t->shape));
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Graph::Graph(const TensorPtr& root) {
    if (!root) throw ArgumentError("null root");
    std::unordered_set<const Tensor*> seen;
    // Iterative post-order so parents land before their consumers.
    std::vector<std::pair<TensorPtr, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorPtr p = node->parents[next++];
            if (p && !seen.count(p.get())) {
                seen.insert(p.get());
                stack.emplace_back(std::move(p), 0);
            }
        } else {
            nodes.push_back(node);
            stack.pop_back();
        }
    }
}

void backward(Graph& graph, const TensorPtr& root) {
    if (root->numel() != 1)
        throw ArgumentError("backward root must be a scalar, got " + shape_str(root->shape));
    if (!root->requires_grad) return;
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = graph.nodes.rbegin(); it != graph.nodes.rend(); ++it) {
        Tensor& t = **it;
        if (t.backward_fn && !t.grad.empty()) t.backward_fn(t);
    }
}

void backward(const TensorPtr& root) {
    Graph g(root);
    backward(g, root);
}

TensorPtr finite_diff_grad(const std::function<double()>& f, const TensorPtr& x, double h) {
    auto g = Tensor::zeros(x->shape);
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        const double saved = x->data[i];
        x->data[i] = saved + h;
        const double fp = f();
        x->data[i] = saved - h;
        const double fm = f();
        x->data[i] = saved;
        g->data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// ---------------------------------------------------------------------------
// linear algebra

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    check_2d(a, "matmul lhs");
    check_2d(b, "matmul rhs");
    const std::int64_t m = a->dim(0), k = a->dim(1), n = b->dim(1);
    if (b->dim(0) != k)
        throw DimensionError("matmul inner extents differ: " + shape_str(a->shape) + " x " +
                             shape_str(b->shape));
    auto out = Tensor::zeros({m, n});
    kern::matmul_nn(a->data.data(), b->data.data(), out->data.data(), m, k, n, false);
    return make_node("matmul", out, {a, b}, [m, k, n](Tensor& self) {
        auto& a_ = self.parents[0];
        auto& b_ = self.parents[1];
        if (a_->requires_grad) {
            a_->ensure_grad();
            kern::matmul_nt(self.grad.data(), b_->data.data(), a_->grad.data(), m, n, k, true);
        }
        if (b_->requires_grad) {
            b_->ensure_grad();
            kern::matmul_tn(a_->data.data(), self.grad.data(), b_->grad.data(), k, m, n, true);
        }
    });
}

TensorPtr transpose(const TensorPtr& a) {
    check_2d(a, "transpose input");
    const std::int64_t m = a->dim(0), n = a->dim(1);
    auto out = Tensor::zeros({n, m});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out->data[j * m + i] = a->data[i * n + j];
    return make_node("transpose", out, {a}, [m, n](Tensor& self) {
        auto& a_ = self.parents[0];
        if (!a_->requires_grad) return;
        a_->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) a_->grad[i * n + j] += self.grad[j * m + i];
    });
}

// ---------------------------------------------------------------------------
// shape ops

TensorPtr reshape(const TensorPtr& a, Shape shape) {
    if (shape_numel(shape) != a->numel())
        throw DimensionError("reshape " + shape_str(a->shape) + " -> " + shape_str(shape) +
                             " changes element count");
    auto out = Tensor::from(std::move(shape), a->data);
    return make_node("reshape", out, {a}, [](Tensor& self) {
        auto& a_ = self.parents[0];
        if (!a_->requires_grad) return;
        a_->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) a_->grad[i] += self.grad[i];
    });
}

namespace {

// outer extent (product of dims before axis) and inner extent (after axis).
std::pair<std::int64_t, std::int64_t> axis_strides(const Shape& s, int axis) {
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, inner};
}

}  // namespace

TensorPtr concat(const std::vector<TensorPtr>& parts, int axis) {
    if (parts.empty()) throw ArgumentError("concat of zero tensors");
    const auto& first = parts.front();
    if (axis < 0 || static_cast<std::size_t>(axis) >= first->ndim())
        throw ArgumentError("concat axis out of range");
    Shape out_shape = first->shape;
    std::int64_t total = 0;
    for (const auto& p : parts) {
        if (p->ndim() != first->ndim())
            throw DimensionError("concat rank mismatch");
        for (std::size_t d = 0; d < first->ndim(); ++d)
            if (d != static_cast<std::size_t>(axis) && p->shape[d] != first->shape[d])
                throw DimensionError("concat extent mismatch at dim " + std::to_string(d) + ": " +
                                     shape_str(p->shape) + " vs " + shape_str(first->shape));
        total += p->dim(axis);
    }
    out_shape[axis] = total;
    auto [outer, inner] = axis_strides(out_shape, axis);
    auto out = Tensor::zeros(out_shape);
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t len = p->dim(axis) * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(p->data.data() + o * len, len, out->data.data() + o * total * inner + off);
        off += len;
    }
    return make_node("concat", out, parts, [axis, outer, inner, total](Tensor& self) {
        std::int64_t off = 0;
        for (auto& p : self.parents) {
            const std::int64_t len = p->dim(axis) * inner;
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::int64_t o = 0; o < outer; ++o) {
                    const double* src = self.grad.data() + o * total * inner + off;
                    double* dst = p->grad.data() + o * len;
                    for (std::int64_t i = 0; i < len; ++i) dst[i] += src[i];
                }
            }
            off += len;
        }
    });
}

std::vector<TensorPtr> split(const TensorPtr& a, int axis, const std::vector<std::int64_t>& sizes) {
    if (axis < 0 || static_cast<std::size_t>(axis) >= a->ndim())
        throw ArgumentError("split axis out of range");
    const std::int64_t total = a->dim(axis);
    if (std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0}) != total)
        throw DimensionError("split sizes do not sum to extent " + std::to_string(total));
    auto [outer, inner] = axis_strides(a->shape, axis);
    std::vector<TensorPtr> outs;
    std::int64_t off = 0;
    for (std::int64_t sz : sizes) {
        if (sz <= 0) throw ArgumentError("split size must be positive");
        Shape s = a->shape;
        s[axis] = sz;
        auto out = Tensor::zeros(s);
        const std::int64_t len = sz * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(a->data.data() + o * total * inner + off, len, out->data.data() + o * len);
        const std::int64_t this_off = off;
        outs.push_back(
            make_node("split", out, {a}, [outer, inner, total, len, this_off](Tensor& self) {
                auto& a_ = self.parents[0];
                if (!a_->requires_grad) return;
                a_->ensure_grad();
                for (std::int64_t o = 0; o < outer; ++o) {
                    const double* src = self.grad.data() + o * len;
                    double* dst = a_->grad.data() + o * total * inner + this_off;
                    for (std::int64_t i = 0; i < len; ++i) dst[i] += src[i];
                }
            }));
        off += len;
    }
    return outs;
}

std::vector<TensorPtr> split_even(const TensorPtr& a, int axis, std::int64_t parts) {
    if (parts <= 0 || a->dim(axis) % parts != 0)
        throw DimensionError("cannot split extent " + std::to_string(a->dim(axis)) + " into " +
                             std::to_string(parts) + " equal parts");
    return split(a, axis, std::vector<std::int64_t>(parts, a->dim(axis) / parts));
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape)
        throw DimensionError(std::string(op) + " shape mismatch: " + shape_str(a->shape) +
                             " vs " + shape_str(b->shape));
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "add");
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    return make_node("add", out, {a, b}, [](Tensor& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    });
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "sub");
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] - b->data[i];
    return make_node("sub", out, {a, b}, [](Tensor& self) {
        auto& a_ = self.parents[0];
        auto& b_ = self.parents[1];
        if (a_->requires_grad) {
            a_->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) a_->grad[i] += self.grad[i];
        }
        if (b_->requires_grad) {
            b_->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) b_->grad[i] -= self.grad[i];
        }
    });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "mul");
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
    return make_node("mul", out, {a, b}, [](Tensor& self) {
        auto& a_ = self.parents[0];
        auto& b_ = self.parents[1];
        if (a_->requires_grad) {
            a_->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                a_->grad[i] += self.grad[i] * b_->data[i];
        }
        if (b_->requires_grad) {
            b_->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                b_->grad[i] += self.grad[i] * a_->data[i];
        }
    });
}

TensorPtr scale(const TensorPtr& a, double s) {
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * s;
    return make_node("scale", out, {a}, [s](Tensor& self) {
        auto& a_ = self.parents[0];
        if (!a_->requires_grad) return;
        a_->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) a_->grad[i] += self.grad[i] * s;
    });
}

TensorPtr scale_by(const TensorPtr& a, const TensorPtr& s) {
    if (s->numel() != 1) throw DimensionError("scale_by factor must be a scalar tensor");
    auto out = Tensor::zeros(a->shape);
    const double sv = s->data[0];
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * sv;
    return make_node("scale_by", out, {a, s}, [](Tensor& self) {
        auto& a_ = self.parents[0];
        auto& s_ = self.parents[1];
        if (a_->requires_grad) {
            a_->ensure_grad();
            const double sv = s_->data[0];
            for (std::size_t i = 0; i < self.grad.size(); ++i) a_->grad[i] += self.grad[i] * sv;
        }
        if (s_->requires_grad) {
            s_->ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * a_->data[i];
            s_->grad[0] += acc;
        }
    });
}

TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v) {
    check_2d(a, "add_rowvec lhs");
    const std::int64_t m = a->dim(0), n = a->dim(1);
    if (v->numel() != n)
        throw DimensionError("add_rowvec vector length " + std::to_string(v->numel()) +
                             " != columns " + std::to_string(n));
    auto out = Tensor::zeros(a->shape);
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out->data[i * n + j] = a->data[i * n + j] + v->data[j];
    return make_node("add_rowvec", out, {a, v}, [m, n](Tensor& self) {
        auto& a_ = self.parents[0];
        auto& v_ = self.parents[1];
        if (a_->requires_grad) {
            a_->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) a_->grad[i] += self.grad[i];
        }
        if (v_->requires_grad) {
            v_->ensure_grad();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j) v_->grad[j] += self.grad[i * n + j];
        }
    });
}

TensorPtr add_channel_bias(const TensorPtr& x, const TensorPtr& b) {
    check_3d(x, "add_channel_bias input");
    const std::int64_t c = x->dim(0), hw = x->dim(1) * x->dim(2);
    if (b->numel() != c) throw DimensionError("channel bias length != channel count");
    auto out = Tensor::zeros(x->shape);
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < hw; ++i)
            out->data[ch * hw + i] = x->data[ch * hw + i] + b->data[ch];
    return make_node("add_channel_bias", out, {x, b}, [c, hw](Tensor& self) {
        auto& x_ = self.parents[0];
        auto& b_ = self.parents[1];
        if (x_->requires_grad) {
            x_->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) x_->grad[i] += self.grad[i];
        }
        if (b_->requires_grad) {
            b_->ensure_grad();
            for (std::int64_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::int64_t i = 0; i < hw; ++i) acc += self.grad[ch * hw + i];
                b_->grad[ch] += acc;
            }
        }
    });
}

TensorPtr relu(const TensorPtr& a) {
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i)
        out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
    return make_node("relu", out, {a}, [](Tensor& self) {
        auto& a_ = self.parents[0];
        if (!a_->requires_grad) return;
        a_->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (a_->data[i] > 0.0) a_->grad[i] += self.grad[i];
    });
}

TensorPtr exp(const TensorPtr& a) {
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = std::exp(a->data[i]);
    return make_node("exp", out, {a}, [](Tensor& self) {
        auto& a_ = self.parents[0];
        if (!a_->requires_grad) return;
        a_->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            a_->grad[i] += self.grad[i] * self.data[i];
    });
}

TensorPtr log(const TensorPtr& a) {
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = std::log(a->data[i]);
    return make_node("log", out, {a}, [](Tensor& self) {
        auto& a_ = self.parents[0];
        if (!a_->requires_grad) return;
        a_->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            a_->grad[i] += self.grad[i] / a_->data[i];
    });
}

TensorPtr abs(const TensorPtr& a) {
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = std::fabs(a->data[i]);
    return make_node("abs", out, {a}, [](Tensor& self) {
        auto& a_ = self.parents[0];
        if (!a_->requires_grad) return;
        a_->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = a_->data[i];
            if (x > 0.0)
                a_->grad[i] += self.grad[i];
            else if (x < 0.0)
                a_->grad[i] -= self.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// reductions

TensorPtr sum(const TensorPtr& a) {
    double acc = 0.0;
    for (double v : a->data) acc += v;
    auto out = Tensor::scalar(acc);
    return make_node("sum", out, {a}, [](Tensor& self) {
        auto& a_ = self.parents[0];
        if (!a_->requires_grad) return;
        a_->ensure_grad();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < a_->grad.size(); ++i) a_->grad[i] += g;
    });
}

TensorPtr mean(const TensorPtr& a) {
    if (a->numel() == 0) throw ArgumentError("mean of empty tensor");
    double acc = 0.0;
    for (double v : a->data) acc += v;
    const double inv = 1.0 / static_cast<double>(a->numel());
    auto out = Tensor::scalar(acc * inv);
    return make_node("mean", out, {a}, [inv](Tensor& self) {
        auto& a_ = self.parents[0];
        if (!a_->requires_grad) return;
        a_->ensure_grad();
        const double g = self.grad[0] * inv;
        for (std::size_t i = 0; i < a_->grad.size(); ++i) a_->grad[i] += g;
    });
}

// ---------------------------------------------------------------------------
// rows

TensorPtr softmax_rows(const TensorPtr& a) {
    check_2d(a, "softmax_rows input");
    const std::int64_t m = a->dim(0), n = a->dim(1);
    auto out = Tensor::zeros(a->shape);
    kern::softmax_rows_fwd(a->data.data(), out->data.data(), m, n);
    return make_node("softmax_rows", out, {a}, [m, n](Tensor& self) {
        auto& a_ = self.parents[0];
        if (!a_->requires_grad) return;
        a_->ensure_grad();
        kern::softmax_rows_bwd(self.data.data(), self.grad.data(), a_->grad.data(), m, n);
    });
}

TensorPtr log_softmax_rows(const TensorPtr& a) {
    check_2d(a, "log_softmax_rows input");
    const std::int64_t m = a->dim(0), n = a->dim(1);
    auto out = Tensor::zeros(a->shape);
    kern::log_softmax_rows_fwd(a->data.data(), out->data.data(), m, n);
    return make_node("log_softmax_rows", out, {a}, [m, n](Tensor& self) {
        auto& a_ = self.parents[0];
        if (!a_->requires_grad) return;
        a_->ensure_grad();
        kern::log_softmax_rows_bwd(self.data.data(), self.grad.data(), a_->grad.data(), m, n);
    });
}

TensorPtr layer_norm_rows(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                          double eps) {
    check_2d(x, "layer_norm input");
    const std::int64_t m = x->dim(0), n = x->dim(1);
    if (gamma->numel() != n || beta->numel() != n)
        throw DimensionError("layer_norm affine params must have length " + std::to_string(n));
    auto out = Tensor::zeros(x->shape);
    auto mean_v = std::make_shared<std::vector<double>>(m);
    auto rstd_v = std::make_shared<std::vector<double>>(m);
    kern::layernorm_fwd(x->data.data(), gamma->data.data(), beta->data.data(), out->data.data(),
                        mean_v->data(), rstd_v->data(), m, n, eps);
    return make_node("layer_norm", out, {x, gamma, beta}, [m, n, mean_v, rstd_v](Tensor& self) {
        auto& x_ = self.parents[0];
        auto& g_ = self.parents[1];
        auto& b_ = self.parents[2];
        x_->ensure_grad();
        g_->ensure_grad();
        b_->ensure_grad();
        kern::layernorm_bwd(x_->data.data(), g_->data.data(), mean_v->data(), rstd_v->data(),
                            self.grad.data(), x_->grad.data(), g_->grad.data(), b_->grad.data(), m,
                            n);
    });
}

// ---------------------------------------------------------------------------
// spatial

TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, std::int64_t stride, std::int64_t pad) {
    check_3d(x, "conv2d input");
    if (w->ndim() != 4) throw DimensionError("conv2d weight must be 4-D");
    const std::int64_t cin = x->dim(0), h = x->dim(1), wid = x->dim(2);
    const std::int64_t cout = w->dim(0), kh = w->dim(2), kw = w->dim(3);
    if (w->dim(1) != cin)
        throw DimensionError("conv2d weight expects " + std::to_string(w->dim(1)) +
                             " input channels, input has " + std::to_string(cin));
    if (!((kh % 2 == 1 && kw % 2 == 1) || (kh == 1 && kw == 1)))
        throw DimensionError("conv2d kernel extents must be odd");
    if (stride < 1) throw ArgumentError("conv2d stride must be >= 1");
    const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t ow = (wid + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0)
        throw DimensionError("conv2d produces non-positive output extent for input " +
                             shape_str(x->shape));
    auto out = Tensor::zeros({cout, oh, ow});
    kern::conv2d_fwd(x->data.data(), w->data.data(), out->data.data(), cin, h, wid, cout, kh, kw,
                     stride, pad, oh, ow);
    return make_node("conv2d", out, {x, w},
                     [cin, h, wid, cout, kh, kw, stride, pad, oh, ow](Tensor& self) {
                         auto& x_ = self.parents[0];
                         auto& w_ = self.parents[1];
                         if (x_->requires_grad) {
                             x_->ensure_grad();
                             kern::conv2d_dgrad(self.grad.data(), w_->data.data(), x_->grad.data(),
                                                cin, h, wid, cout, kh, kw, stride, pad, oh, ow);
                         }
                         if (w_->requires_grad) {
                             w_->ensure_grad();
                             kern::conv2d_wgrad(x_->data.data(), self.grad.data(), w_->grad.data(),
                                                cin, h, wid, cout, kh, kw, stride, pad, oh, ow);
                         }
                     });
}

TensorPtr transposed_conv2d(const TensorPtr& x, const TensorPtr& w, std::int64_t stride) {
    check_3d(x, "transposed_conv2d input");
    if (w->ndim() != 4) throw DimensionError("transposed_conv2d weight must be 4-D");
    const std::int64_t cin = x->dim(0), h = x->dim(1), wid = x->dim(2);
    const std::int64_t cout = w->dim(1), k = w->dim(2);
    if (w->dim(0) != cin)
        throw DimensionError("transposed_conv2d weight expects " + std::to_string(w->dim(0)) +
                             " input channels, input has " + std::to_string(cin));
    if (k != w->dim(3) || k != stride)
        throw ConfigError("transposed_conv2d requires kernel size == stride, got kernel " +
                          std::to_string(k) + "x" + std::to_string(w->dim(3)) + " stride " +
                          std::to_string(stride));
    auto out = Tensor::zeros({cout, h * k, wid * k});
    kern::tconv2d_fwd(x->data.data(), w->data.data(), out->data.data(), cin, h, wid, cout, k);
    return make_node("transposed_conv2d", out, {x, w}, [cin, h, wid, cout, k](Tensor& self) {
        auto& x_ = self.parents[0];
        auto& w_ = self.parents[1];
        if (x_->requires_grad) {
            x_->ensure_grad();
            kern::tconv2d_dgrad(self.grad.data(), w_->data.data(), x_->grad.data(), cin, h, wid,
                                cout, k);
        }
        if (w_->requires_grad) {
            w_->ensure_grad();
            kern::tconv2d_wgrad(x_->data.data(), self.grad.data(), w_->grad.data(), cin, h, wid,
                                cout, k);
        }
    });
}

TensorPtr avg_pool2d(const TensorPtr& x, std::int64_t k) {
    check_3d(x, "avg_pool2d input");
    const std::int64_t c = x->dim(0), h = x->dim(1), w = x->dim(2);
    if (k < 1 || h % k != 0 || w % k != 0)
        throw DimensionError("avg_pool2d window " + std::to_string(k) +
                             " does not divide spatial extents of " + shape_str(x->shape));
    auto out = Tensor::zeros({c, h / k, w / k});
    kern::avgpool_fwd(x->data.data(), out->data.data(), c, h, w, k);
    return make_node("avg_pool2d", out, {x}, [c, h, w, k](Tensor& self) {
        auto& x_ = self.parents[0];
        if (!x_->requires_grad) return;
        x_->ensure_grad();
        kern::avgpool_bwd(self.grad.data(), x_->grad.data(), c, h, w, k);
    });
}

TensorPtr bilinear_resize(const TensorPtr& x, std::int64_t oh, std::int64_t ow) {
    check_3d(x, "bilinear_resize input");
    if (oh < 1 || ow < 1) throw DimensionError("bilinear_resize target extents must be >= 1");
    const std::int64_t c = x->dim(0), h = x->dim(1), w = x->dim(2);
    auto out = Tensor::zeros({c, oh, ow});
    kern::bilinear_fwd(x->data.data(), out->data.data(), c, h, w, oh, ow);
    return make_node("bilinear_resize", out, {x}, [c, h, w, oh, ow](Tensor& self) {
        auto& x_ = self.parents[0];
        if (!x_->requires_grad) return;
        x_->ensure_grad();
        kern::bilinear_bwd(self.grad.data(), x_->grad.data(), c, h, w, oh, ow);
    });
}

TensorPtr batch_norm2d(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                       BatchNormState& state, bool training, bool update_running, double momentum,
                       double eps) {
    if (static_cast<std::int64_t>(state.running_mean.size()) != x->dim(0))
        throw DimensionError("batch_norm running stats sized for " +
                             std::to_string(state.running_mean.size()) + " channels, input has " +
                             std::to_string(x->dim(0)));
    return batch_norm2d(x, gamma, beta, state.running_mean.data(), state.running_var.data(),
                        training, update_running, momentum, eps);
}

TensorPtr batch_norm2d(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                       double* running_mean, double* running_var, bool training,
                       bool update_running, double momentum, double eps) {
    check_3d(x, "batch_norm input");
    const std::int64_t c = x->dim(0), hw = x->dim(1) * x->dim(2);
    if (gamma->numel() != c || beta->numel() != c)
        throw DimensionError("batch_norm affine params must have length " + std::to_string(c));
    auto out = Tensor::zeros(x->shape);
    auto mean_v = std::make_shared<std::vector<double>>(c);
    auto rstd_v = std::make_shared<std::vector<double>>(c);
    for (std::int64_t ch = 0; ch < c; ++ch) {
        double mu, var;
        if (training) {
            mu = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) mu += x->data[ch * hw + i];
            mu /= static_cast<double>(hw);
            var = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) {
                const double d = x->data[ch * hw + i] - mu;
                var += d * d;
            }
            var /= static_cast<double>(hw);
            if (update_running) {
                running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mu;
                running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * var;
            }
        } else {
            mu = running_mean[ch];
            var = running_var[ch];
        }
        const double rs = 1.0 / std::sqrt(var + eps);
        (*mean_v)[ch] = mu;
        (*rstd_v)[ch] = rs;
        const double g = gamma->data[ch], b = beta->data[ch];
        for (std::int64_t i = 0; i < hw; ++i)
            out->data[ch * hw + i] = (x->data[ch * hw + i] - mu) * rs * g + b;
    }
    return make_node("batch_norm", out, {x, gamma, beta},
                     [c, hw, training, mean_v, rstd_v](Tensor& self) {
                         auto& x_ = self.parents[0];
                         auto& g_ = self.parents[1];
                         auto& b_ = self.parents[2];
                         x_->ensure_grad();
                         g_->ensure_grad();
                         b_->ensure_grad();
                         for (std::int64_t ch = 0; ch < c; ++ch) {
                             const double mu = (*mean_v)[ch], rs = (*rstd_v)[ch];
                             const double gv = g_->data[ch];
                             double sum_d = 0.0, sum_dx = 0.0;
                             for (std::int64_t i = 0; i < hw; ++i) {
                                 const double d = self.grad[ch * hw + i];
                                 const double xh = (x_->data[ch * hw + i] - mu) * rs;
                                 sum_d += d;
                                 sum_dx += d * xh;
                             }
                             g_->grad[ch] += sum_dx;
                             b_->grad[ch] += sum_d;
                             const double inv_n = 1.0 / static_cast<double>(hw);
                             for (std::int64_t i = 0; i < hw; ++i) {
                                 const double d = self.grad[ch * hw + i];
                                 const double xh = (x_->data[ch * hw + i] - mu) * rs;
                                 if (training)
                                     x_->grad[ch * hw + i] +=
                                         gv * rs * (d - inv_n * sum_d - xh * inv_n * sum_dx);
                                 else
                                     x_->grad[ch * hw + i] += gv * rs * d;
                             }
                         }
                     });
}

// ---------------------------------------------------------------------------
// selection

std::vector<std::int64_t> topk_indices(const std::vector<double>& v, std::int64_t k) {
    const std::int64_t n = static_cast<std::int64_t>(v.size());
    if (k < 1 || k > n)
        throw ArgumentError("topk k=" + std::to_string(k) + " out of range for length " +
                            std::to_string(n));
    std::vector<std::int64_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
        if (v[a] != v[b]) return v[a] > v[b];
        return a < b;
    });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<std::int64_t> topk_indices(const TensorPtr& v, std::int64_t k) {
    return topk_indices(v->data, k);
}

TensorPtr gather_columns(const TensorPtr& a, const std::vector<std::int64_t>& idx) {
    check_2d(a, "gather_columns input");
    const std::int64_t m = a->dim(0), n = a->dim(1), k = static_cast<std::int64_t>(idx.size());
    for (auto j : idx)
        if (j < 0 || j >= n)
            throw ArgumentError("gather_columns index " + std::to_string(j) +
                                " out of range for " + std::to_string(n) + " columns");
    auto out = Tensor::zeros({m, k});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < k; ++j) out->data[i * k + j] = a->data[i * n + idx[j]];
    return make_node("gather_columns", out, {a}, [m, n, k, idx](Tensor& self) {
        auto& a_ = self.parents[0];
        if (!a_->requires_grad) return;
        a_->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < k; ++j)
                a_->grad[i * n + idx[j]] += self.grad[i * k + j];
    });
}

TensorPtr scatter_columns(const TensorPtr& a, const std::vector<std::int64_t>& idx,
                          std::int64_t n) {
    check_2d(a, "scatter_columns input");
    const std::int64_t m = a->dim(0), k = a->dim(1);
    if (static_cast<std::int64_t>(idx.size()) != k)
        throw ArgumentError("scatter_columns needs one target index per column");
    for (auto j : idx)
        if (j < 0 || j >= n)
            throw ArgumentError("scatter_columns index " + std::to_string(j) +
                                " out of range for width " + std::to_string(n));
    auto out = Tensor::zeros({m, n});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < k; ++j) out->data[i * n + idx[j]] = a->data[i * k + j];
    return make_node("scatter_columns", out, {a}, [m, n, k, idx](Tensor& self) {
        auto& a_ = self.parents[0];
        if (!a_->requires_grad) return;
        a_->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < k; ++j)
                a_->grad[i * k + j] += self.grad[i * n + idx[j]];
    });
}

std::vector<double> column_means(const Tensor& a) {
    if (a.ndim() != 2) throw DimensionError("column_means input must be 2-D");
    const std::int64_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(n, 0.0);
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[j] += a.data[i * n + j];
    const double inv = 1.0 / static_cast<double>(m);
    for (auto& v : out) v *= inv;
    return out;
}

}  // namespace invpt
