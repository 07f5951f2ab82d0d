#include "apt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace apt {

namespace {

Dtype g_default_dtype = Dtype::f32;
std::atomic<std::uint64_t> g_node_seq{1};

void quantize_f32(std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

void require_2d(const Tensor& t, const char* op) {
    if (t.shape().size() != 2)
        throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype())
        throw DtypeError(std::string(op) + ": mixed dtypes " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// c[m,n] (+)= op(a) * op(b) with optional transposes; plain loops ordered for
// contiguous inner access in the hot (NN / NT / TN) cases.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    if (!trans_a && !trans_b) { // a[m,k] b[k,n]
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * n;
            for (std::size_t t = 0; t < k; ++t) {
                const double av = arow[t];
                if (av == 0.0) continue;
                const double* brow = b + t * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!trans_a && trans_b) { // a[m,k] b[n,k]
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double* brow = b + j * k;
                double acc = 0.0;
                for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
                crow[j] += acc;
            }
        }
    } else if (trans_a && !trans_b) { // a[k,m] b[k,n]
        for (std::size_t t = 0; t < k; ++t) {
            const double* arow = a + t * m;
            const double* brow = b + t * n;
            for (std::size_t i = 0; i < m; ++i) {
                const double av = arow[i];
                if (av == 0.0) continue;
                double* crow = c + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else { // a[k,m] b[n,k] — not on any hot path
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t t = 0; t < k; ++t) acc += a[t * m + i] * b[j * k + t];
                c[i * n + j] += acc;
            }
        }
    }
}

} // namespace

Dtype default_dtype() { return g_default_dtype; }
void set_default_dtype(Dtype d) { g_default_dtype = d; }

const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

Dtype dtype_from_name(const std::string& name) {
    if (name == "f32") return Dtype::f32;
    if (name == "f64") return Dtype::f64;
    throw ConfigError("unknown dtype name: " + name);
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

std::size_t count_nonfinite(const std::vector<double>& v) {
    std::size_t n = 0;
    for (double x : v)
        if (!std::isfinite(x)) ++n;
    return n;
}

detail::Node* node_of(const Tensor& t) { return t.node_.get(); }

// Central constructor for op results: quantizes f32 outputs, enforces the
// all-finite invariant, and wires the backward rule.
Tensor make_op_result(Shape shape, std::vector<double> values, Dtype dtype, bool requires_grad,
                      std::vector<Tensor> parents, std::function<void(detail::Node&)> backprop,
                      const char* opname) {
    if (values.size() != shape_numel(shape))
        throw ShapeError(std::string(opname) + ": value count does not match shape");
    if (dtype == Dtype::f32) quantize_f32(values);
    if (count_nonfinite(values) > 0)
        throw NumericError(std::string(opname) + ": produced non-finite values");
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    node->dtype = dtype;
    node->seq = g_node_seq.fetch_add(1, std::memory_order_relaxed);
    if (requires_grad) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node_);
        node->backprop = std::move(backprop);
    }
    return Tensor(std::move(node));
}

// ---- Tensor basics ----------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return constant(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::constant(Shape shape, double v, bool requires_grad) {
    std::vector<double> values(shape_numel(shape), v);
    return from_values(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    return make_op_result(std::move(shape), std::move(values), default_dtype(), requires_grad, {},
                          nullptr, "from_values");
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, Dtype dtype,
                           bool requires_grad) {
    return make_op_result(std::move(shape), std::move(values), dtype, requires_grad, {}, nullptr,
                          "from_values");
}

Tensor Tensor::scalar(double v) { return from_values({1}, {v}); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
    require_2d(*this, "rows");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    require_2d(*this, "cols");
    return node_->shape[1];
}

Dtype Tensor::dtype() const { return node_->dtype; }
bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool enabled) {
    if (!is_leaf())
        throw InvalidInputError("set_requires_grad: only leaf tensors can be toggled");
    node_->requires_grad = enabled;
}
const std::vector<double>& Tensor::values() const { return node_->value; }
double Tensor::value_at(std::size_t flat) const { return node_->value.at(flat); }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
}

bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size(); }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw InvalidInputError("grad: no gradient populated for this tensor");
    return node_->grad;
}

void Tensor::clear_grad() { node_->grad.clear(); }

bool Tensor::is_leaf() const { return node_->parents.empty() && !node_->backprop; }

std::vector<double>& Tensor::leaf_values() {
    if (!is_leaf()) throw InvalidInputError("leaf_values: tensor is an op result, not a leaf");
    return node_->value;
}

void Tensor::nudge(std::size_t flat, double delta) {
    auto& v = leaf_values();
    v.at(flat) += delta;
    if (node_->dtype == Dtype::f32) v[flat] = static_cast<double>(static_cast<float>(v[flat]));
}

void Tensor::enforce_dtype() {
    auto& v = leaf_values();
    if (node_->dtype == Dtype::f32) quantize_f32(v);
}

std::uint64_t Tensor::node_id() const { return node_->seq; }

// ---- backward ---------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw InvalidInputError("backward: loss must be a defined scalar tensor");
    detail::Node* root = loss.node_.get();
    if (!root->requires_grad || root->parents.empty())
        throw InvalidInputError("backward: loss is detached from any recorded graph");

    // Collect reachable grad-requiring nodes; descending seq is reverse
    // topological order because parents precede children.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{root};
    seen.insert(root);
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (detail::Node* n : order) {
        if (n->backprop) {
            n->ensure_grad();
            n->backprop(*n);
        }
    }
}

// ---- elementwise and scalar ops ----------------------------------------------

namespace {

bool any_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    require_same_dtype(a, b, "add");
    std::vector<double> out(a.size());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return make_op_result(
        a.shape(), std::move(out), a.dtype(), any_grad({&a, &b}), {a, b},
        [](detail::Node& self) {
            for (int p = 0; p < 2; ++p) {
                auto& par = *self.parents[p];
                if (!par.requires_grad) continue;
                par.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) par.grad[i] += self.grad[i];
            }
        },
        "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    require_same_dtype(a, b, "sub");
    std::vector<double> out(a.size());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return make_op_result(
        a.shape(), std::move(out), a.dtype(), any_grad({&a, &b}), {a, b},
        [](detail::Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
            }
        },
        "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    require_same_dtype(a, b, "mul");
    std::vector<double> out(a.size());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return make_op_result(
        a.shape(), std::move(out), a.dtype(), any_grad({&a, &b}), {a, b},
        [](detail::Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pa.grad[i] += self.grad[i] * pb.value[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pb.grad[i] += self.grad[i] * pa.value[i];
            }
        },
        "mul");
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
    return make_op_result(
        a.shape(), std::move(out), a.dtype(), a.requires_grad(), {a},
        [](detail::Node& self) {
            auto& pa = *self.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        },
        "add_scalar");
}

Tensor mul_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
    return make_op_result(
        a.shape(), std::move(out), a.dtype(), a.requires_grad(), {a},
        [s](detail::Node& self) {
            auto& pa = *self.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * s;
        },
        "mul_scalar");
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw ShapeError("scale_by: scale tensor must have a single element");
    require_same_dtype(a, s, "scale_by");
    const double sv = s.values()[0];
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * sv;
    return make_op_result(
        a.shape(), std::move(out), a.dtype(), any_grad({&a, &s}), {a, s},
        [](detail::Node& self) {
            auto& pa = *self.parents[0];
            auto& ps = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                const double sv = ps.value[0];
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * sv;
            }
            if (ps.requires_grad) {
                ps.ensure_grad();
                double acc = 0.0;
                for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa.value[i];
                ps.grad[0] += acc;
            }
        },
        "scale_by");
}

Tensor add_row_vector(const Tensor& x, const Tensor& v) {
    require_2d(x, "add_row_vector");
    require_same_dtype(x, v, "add_row_vector");
    const std::size_t m = x.rows(), n = x.cols();
    if (!((v.shape().size() == 2 && v.shape()[0] == 1 && v.shape()[1] == n) ||
          (v.shape().size() == 1 && v.shape()[0] == n)))
        throw ShapeError("add_row_vector: vector shape " + shape_str(v.shape()) +
                         " does not match row width " + std::to_string(n));
    std::vector<double> out(x.size());
    const auto& xv = x.values();
    const auto& vv = v.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + vv[j];
    return make_op_result(
        x.shape(), std::move(out), x.dtype(), any_grad({&x, &v}), {x, v},
        [m, n](detail::Node& self) {
            auto& px = *self.parents[0];
            auto& pv = *self.parents[1];
            if (px.requires_grad) {
                px.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
            }
            if (pv.requires_grad) {
                pv.ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) pv.grad[j] += self.grad[i * n + j];
            }
        },
        "add_row_vector");
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
    require_2d(x, "scale_rows");
    require_same_dtype(x, s, "scale_rows");
    const std::size_t m = x.rows(), n = x.cols();
    if (!((s.shape().size() == 2 && s.shape()[0] == m && s.shape()[1] == 1) ||
          (s.shape().size() == 1 && s.shape()[0] == m)))
        throw ShapeError("scale_rows: scale shape " + shape_str(s.shape()) +
                         " does not match row count " + std::to_string(m));
    std::vector<double> out(x.size());
    const auto& xv = x.values();
    const auto& sv = s.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * sv[i];
    return make_op_result(
        x.shape(), std::move(out), x.dtype(), any_grad({&x, &s}), {x, s},
        [m, n](detail::Node& self) {
            auto& px = *self.parents[0];
            auto& ps = *self.parents[1];
            if (px.requires_grad) {
                px.ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        px.grad[i * n + j] += self.grad[i * n + j] * ps.value[i];
            }
            if (ps.requires_grad) {
                ps.ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        acc += self.grad[i * n + j] * px.value[i * n + j];
                    ps.grad[i] += acc;
                }
            }
        },
        "scale_rows");
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    return make_op_result(
        a.shape(), std::move(out), a.dtype(), a.requires_grad(), {a},
        [](detail::Node& self) {
            auto& pa = *self.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (pa.value[i] > 0.0) pa.grad[i] += self.grad[i];
        },
        "relu");
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = av[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return make_op_result(
        a.shape(), std::move(out), a.dtype(), a.requires_grad(), {a},
        [](detail::Node& self) {
            auto& pa = *self.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.value[i];
                pa.grad[i] += self.grad[i] * y * (1.0 - y);
            }
        },
        "sigmoid");
}

// ---- matmul / transpose -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    require_same_dtype(a, b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    gemm(false, false, m, n, k, a.values().data(), b.values().data(), out.data(), false);
    return make_op_result(
        {m, n}, std::move(out), a.dtype(), any_grad({&a, &b}), {a, b},
        [m, n, k](detail::Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                gemm(false, true, m, k, n, self.grad.data(), pb.value.data(), pa.grad.data(), true);
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                gemm(true, false, k, n, m, pa.value.data(), self.grad.data(), pb.grad.data(), true);
            }
        },
        "matmul");
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    return make_op_result(
        {n, m}, std::move(out), a.dtype(), a.requires_grad(), {a},
        [m, n](detail::Node& self) {
            auto& pa = *self.parents[0];
            pa.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += self.grad[j * m + i];
        },
        "transpose");
}

// ---- softmax / layer_norm -----------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
    const auto& shape = a.shape();
    const int rank = static_cast<int>(shape.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range");
    if (count_nonfinite(a.values()) > 0)
        throw NumericError("softmax: non-finite input");
    const std::size_t len = shape[axis];
    if (len < 1) throw ShapeError("softmax: empty axis");

    std::size_t inner = 1, outer = 1;
    for (int i = axis + 1; i < rank; ++i) inner *= shape[i];
    for (int i = 0; i < axis; ++i) outer *= shape[i];

    const auto& av = a.values();
    std::vector<double> out(a.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, av[base + t * inner]);
            double sum = 0.0;
            for (std::size_t t = 0; t < len; ++t) {
                const double e = std::exp(av[base + t * inner] - mx);
                out[base + t * inner] = e;
                sum += e;
            }
            for (std::size_t t = 0; t < len; ++t) out[base + t * inner] /= sum;
        }
    }
    return make_op_result(
        shape, std::move(out), a.dtype(), a.requires_grad(), {a},
        [len, inner, outer](detail::Node& self) {
            auto& pa = *self.parents[0];
            pa.ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (std::size_t t = 0; t < len; ++t)
                        dot += self.grad[base + t * inner] * self.value[base + t * inner];
                    for (std::size_t t = 0; t < len; ++t) {
                        const std::size_t idx = base + t * inner;
                        pa.grad[idx] += (self.grad[idx] - dot) * self.value[idx];
                    }
                }
            }
        },
        "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0.0) throw InvalidInputError("layer_norm: eps must be positive");
    require_same_dtype(x, gain, "layer_norm");
    require_same_dtype(x, bias, "layer_norm");
    const auto& shape = x.shape();
    if (shape.empty()) throw ShapeError("layer_norm: rank-0 input");
    const std::size_t d = shape.back();
    auto vec_width = [](const Tensor& t) {
        if (t.shape().size() == 1) return t.shape()[0];
        if (t.shape().size() == 2 && t.shape()[0] == 1) return t.shape()[1];
        return std::size_t(0);
    };
    if (vec_width(gain) != d || vec_width(bias) != d)
        throw ShapeError("layer_norm: gain/bias width must equal the last extent");

    const std::size_t rows = x.size() / d;
    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size()); // kept by the closure for backward
    std::vector<double> inv_sigma(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return make_op_result(
        shape, std::move(out), x.dtype(), any_grad({&x, &gain, &bias}), {x, gain, bias},
        [d, rows, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](detail::Node& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const auto& gv = pg.value;
            if (pg.requires_grad) pg.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            if (px.requires_grad) px.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* go = self.grad.data() + r * d;
                const double* xh = xhat.data() + r * d;
                if (pg.requires_grad)
                    for (std::size_t j = 0; j < d; ++j) pg.grad[j] += go[j] * xh[j];
                if (pb.requires_grad)
                    for (std::size_t j = 0; j < d; ++j) pb.grad[j] += go[j];
                if (px.requires_grad) {
                    // dx = (g*gain - mean(g*gain) - xhat*mean(g*gain*xhat)) * inv_sigma
                    double mean_gh = 0.0, mean_ghx = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gh = go[j] * gv[j];
                        mean_gh += gh;
                        mean_ghx += gh * xh[j];
                    }
                    mean_gh /= static_cast<double>(d);
                    mean_ghx /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gh = go[j] * gv[j];
                        px.grad[r * d + j] += (gh - mean_gh - xh[j] * mean_ghx) * inv_sigma[r];
                    }
                }
            }
        },
        "layer_norm");
}

// ---- reductions ---------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make_op_result(
        {1}, {s}, a.dtype(), a.requires_grad(), {a},
        [](detail::Node& self) {
            auto& pa = *self.parents[0];
            pa.ensure_grad();
            const double g = self.grad[0];
            for (double& x : pa.grad) x += g;
        },
        "sum_all");
}

Tensor mean_all(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make_op_result(
        {1}, {s * inv}, a.dtype(), a.requires_grad(), {a},
        [inv](detail::Node& self) {
            auto& pa = *self.parents[0];
            pa.ensure_grad();
            const double g = self.grad[0] * inv;
            for (double& x : pa.grad) x += g;
        },
        "mean_all");
}

Tensor mean_rows(const Tensor& x) {
    require_2d(x, "mean_rows");
    const std::size_t m = x.rows(), n = x.cols();
    if (m == 0) throw ShapeError("mean_rows: empty tensor");
    const double inv = 1.0 / static_cast<double>(m);
    std::vector<double> out(n, 0.0);
    const auto& xv = x.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += xv[i * n + j];
    for (double& v : out) v *= inv;
    return make_op_result(
        {1, n}, std::move(out), x.dtype(), x.requires_grad(), {x},
        [m, n, inv](detail::Node& self) {
            auto& px = *self.parents[0];
            px.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) px.grad[i * n + j] += self.grad[j] * inv;
        },
        "mean_rows");
}

// ---- slicing / concatenation ----------------------------------------------------

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
    require_2d(x, "slice_rows");
    const std::size_t m = x.rows(), n = x.cols();
    if (start + count > m) throw ShapeError("slice_rows: range exceeds row count");
    std::vector<double> out(count * n);
    std::copy_n(x.values().data() + start * n, count * n, out.data());
    return make_op_result(
        {count, n}, std::move(out), x.dtype(), x.requires_grad(), {x},
        [start, n](detail::Node& self) {
            auto& px = *self.parents[0];
            px.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                px.grad[start * n + i] += self.grad[i];
        },
        "slice_rows");
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    require_2d(x, "slice_cols");
    const std::size_t m = x.rows(), n = x.cols();
    if (start + count > n) throw ShapeError("slice_cols: range exceeds column count");
    std::vector<double> out(m * count);
    const auto& xv = x.values();
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(xv.data() + i * n + start, count, out.data() + i * count);
    return make_op_result(
        {m, count}, std::move(out), x.dtype(), x.requires_grad(), {x},
        [start, count, n, m](detail::Node& self) {
            auto& px = *self.parents[0];
            px.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < count; ++j)
                    px.grad[i * n + start + j] += self.grad[i * count + j];
        },
        "slice_cols");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        require_2d(p, "concat_rows");
        require_same_dtype(parts[0], p, "concat_rows");
        if (p.cols() != n) throw ShapeError("concat_rows: column widths differ");
        m += p.rows();
        needs_grad = needs_grad || p.requires_grad();
    }
    std::vector<double> out;
    out.reserve(m * n);
    std::vector<std::size_t> row_offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        row_offsets.push_back(off);
        out.insert(out.end(), p.values().begin(), p.values().end());
        off += p.rows();
    }
    return make_op_result(
        {m, n}, std::move(out), parts[0].dtype(), needs_grad, parts,
        [n, row_offsets](detail::Node& self) {
            for (std::size_t p = 0; p < self.parents.size(); ++p) {
                auto& par = *self.parents[p];
                if (!par.requires_grad) continue;
                par.ensure_grad();
                const std::size_t base = row_offsets[p] * n;
                for (std::size_t i = 0; i < par.grad.size(); ++i) par.grad[i] += self.grad[base + i];
            }
        },
        "concat_rows");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        require_same_dtype(parts[0], p, "concat_cols");
        if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
        n += p.cols();
        needs_grad = needs_grad || p.requires_grad();
    }
    std::vector<double> out(m * n);
    std::vector<std::size_t> col_offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        col_offsets.push_back(off);
        const std::size_t pc = p.cols();
        const auto& pv = p.values();
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(pv.data() + i * pc, pc, out.data() + i * n + off);
        off += pc;
    }
    std::vector<std::size_t> widths;
    for (const auto& p : parts) widths.push_back(p.cols());
    return make_op_result(
        {m, n}, std::move(out), parts[0].dtype(), needs_grad, parts,
        [m, n, col_offsets, widths](detail::Node& self) {
            for (std::size_t p = 0; p < self.parents.size(); ++p) {
                auto& par = *self.parents[p];
                if (!par.requires_grad) continue;
                par.ensure_grad();
                const std::size_t w = widths[p], off = col_offsets[p];
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        par.grad[i * w + j] += self.grad[i * n + off + j];
            }
        },
        "concat_cols");
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    require_2d(table, "embedding_lookup");
    const std::size_t v = table.rows(), d = table.cols();
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw VocabError("embedding_lookup: id " + std::to_string(id) +
                             " outside vocabulary of size " + std::to_string(v));
    std::vector<double> out(ids.size() * d);
    const auto& tv = table.values();
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    return make_op_result(
        {ids.size(), d}, std::move(out), table.dtype(), table.requires_grad(), {table},
        [ids, d](detail::Node& self) {
            auto& pt = *self.parents[0];
            pt.ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                double* dst = pt.grad.data() + static_cast<std::size_t>(ids[i]) * d;
                const double* src = self.grad.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        },
        "embedding_lookup");
}

// ---- fused losses --------------------------------------------------------------

namespace {

// Row-wise log-softmax into `logp`; returns nothing. `src` is [rows, v].
void log_softmax_rows(const double* src, std::size_t rows, std::size_t v, double* logp) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = src + r * v;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < v; ++k) mx = std::max(mx, row[k]);
        double sum = 0.0;
        for (std::size_t k = 0; k < v; ++k) sum += std::exp(row[k] - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t k = 0; k < v; ++k) logp[r * v + k] = row[k] - lse;
    }
}

} // namespace

Tensor cross_entropy_smoothed(const Tensor& logits, const std::vector<int>& targets,
                              double smoothing, const std::vector<double>* weights) {
    require_2d(logits, "cross_entropy_smoothed");
    const std::size_t rows = logits.rows(), v = logits.cols();
    if (targets.size() != rows)
        throw ShapeError("cross_entropy_smoothed: " + std::to_string(rows) + " logit rows vs " +
                         std::to_string(targets.size()) + " targets");
    if (smoothing < 0.0 || smoothing >= 1.0)
        throw InvalidInputError("cross_entropy_smoothed: smoothing must be in [0,1)");
    if (weights && weights->size() != rows)
        throw ShapeError("cross_entropy_smoothed: weight count mismatch");
    for (int t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= v)
            throw VocabError("cross_entropy_smoothed: target id out of range");

    std::vector<double> logp(rows * v);
    log_softmax_rows(logits.values().data(), rows, v, logp.data());

    double wsum = 0.0, loss = 0.0;
    const double unif = smoothing / static_cast<double>(v);
    for (std::size_t r = 0; r < rows; ++r) {
        const double w = weights ? (*weights)[r] : 1.0;
        wsum += w;
        if (w == 0.0) continue;
        double row_loss = -(1.0 - smoothing) * logp[r * v + static_cast<std::size_t>(targets[r])];
        if (smoothing > 0.0) {
            double s = 0.0;
            for (std::size_t k = 0; k < v; ++k) s += logp[r * v + k];
            row_loss -= unif * s;
        }
        loss += w * row_loss;
    }
    if (wsum <= 0.0) throw InvalidInputError("cross_entropy_smoothed: zero total weight");
    loss /= wsum;

    std::vector<double> w_over(rows);
    for (std::size_t r = 0; r < rows; ++r) w_over[r] = (weights ? (*weights)[r] : 1.0) / wsum;

    return make_op_result(
        {1}, {loss}, logits.dtype(), logits.requires_grad(), {logits},
        [rows, v, targets, smoothing, unif, logp = std::move(logp),
         w_over = std::move(w_over)](detail::Node& self) {
            auto& pl = *self.parents[0];
            pl.ensure_grad();
            const double g = self.grad[0];
            for (std::size_t r = 0; r < rows; ++r) {
                const double wr = w_over[r];
                if (wr == 0.0) continue;
                for (std::size_t k = 0; k < v; ++k) {
                    const double p = std::exp(logp[r * v + k]);
                    double q = unif;
                    if (k == static_cast<std::size_t>(targets[r])) q += 1.0 - smoothing;
                    pl.grad[r * v + k] += g * wr * (p - q);
                }
            }
        },
        "cross_entropy_smoothed");
}

Tensor soft_cross_entropy(const Tensor& logits, const Tensor& teacher_rows) {
    require_2d(logits, "soft_cross_entropy");
    require_same_shape(logits, teacher_rows, "soft_cross_entropy");
    require_same_dtype(logits, teacher_rows, "soft_cross_entropy");
    const std::size_t rows = logits.rows(), v = logits.cols();
    const auto& tv = teacher_rows.values();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < v; ++k) s += tv[r * v + k];
        if (std::abs(s - 1.0) > 1e-4)
            throw InvalidInputError("soft_cross_entropy: teacher row " + std::to_string(r) +
                                    " sums to " + std::to_string(s) + ", not a distribution");
    }
    std::vector<double> logp(rows * v);
    log_softmax_rows(logits.values().data(), rows, v, logp.data());
    double loss = 0.0;
    for (std::size_t i = 0; i < rows * v; ++i) loss -= tv[i] * logp[i];
    loss /= static_cast<double>(rows);

    return make_op_result(
        {1}, {loss}, logits.dtype(), logits.requires_grad(), {logits, teacher_rows},
        [rows, v, logp = std::move(logp)](detail::Node& self) {
            auto& pl = *self.parents[0];
            auto& pt = *self.parents[1];
            if (!pl.requires_grad) return;
            pl.ensure_grad();
            const double g = self.grad[0] / static_cast<double>(rows);
            for (std::size_t i = 0; i < rows * v; ++i)
                pl.grad[i] += g * (std::exp(logp[i]) - pt.value[i]);
        },
        "soft_cross_entropy");
}

Tensor mean_of(const std::vector<Tensor>& ts) {
    if (ts.empty()) throw ShapeError("mean_of: no tensors");
    Tensor acc = ts[0];
    for (std::size_t i = 1; i < ts.size(); ++i) acc = add(acc, ts[i]);
    return ts.size() == 1 ? acc : mul_scalar(acc, 1.0 / static_cast<double>(ts.size()));
}

Tensor detach(const Tensor& a) {
    auto node = std::make_shared<detail::Node>();
    node->shape = a.shape();
    node->value = a.values();
    node->requires_grad = false;
    node->dtype = a.dtype();
    node->seq = g_node_seq.fetch_add(1, std::memory_order_relaxed);
    return Tensor(std::move(node));
}

} // namespace apt
