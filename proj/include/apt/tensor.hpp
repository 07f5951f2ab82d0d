#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "apt/error.hpp"

namespace apt {

// Storage precision. Values are held in doubles either way; f32 tensors are
// rounded through IEEE float after every operation, so their values always
// lie on the float grid (and serialize losslessly as 4-byte floats). The
// global default is f32 for training; gradient checks switch to f64.
enum class Dtype { f32, f64 };

Dtype default_dtype();
void set_default_dtype(Dtype d);

const char* dtype_name(Dtype d);
Dtype dtype_from_name(const std::string& name);

struct DtypeGuard {
    explicit DtypeGuard(Dtype d) : saved_(default_dtype()) { set_default_dtype(d); }
    ~DtypeGuard() { set_default_dtype(saved_); }
    DtypeGuard(const DtypeGuard&) = delete;
    DtypeGuard& operator=(const DtypeGuard&) = delete;

private:
    Dtype saved_;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

// One node of the reverse-mode tape. Children hold shared ownership of their
// parents, so a live result keeps its whole subgraph alive; `seq` is a global
// creation counter, and since parents are always created before children,
// descending-seq order is a valid reverse topological order.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // sized lazily, same length as value
    bool requires_grad = false;
    Dtype dtype = Dtype::f32;
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop; // pulls this->grad into parents

    std::size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

} // namespace detail

// Dense row-major tensor with reverse-mode gradient tracking. Value
// semantics: copying a Tensor copies a handle to the same node. Tensors are
// immutable after creation except through the leaf mutation entry points
// used by the optimizer, parameter init, and finite differencing.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor constant(Shape shape, double v, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values, Dtype dtype,
                              bool requires_grad);
    static Tensor scalar(double v); // shape {1}

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t size() const;
    std::size_t rows() const; // 2-D only
    std::size_t cols() const; // 2-D only
    Dtype dtype() const;
    bool requires_grad() const;
    void set_requires_grad(bool enabled); // leaves only (freezing teachers)

    const std::vector<double>& values() const;
    double value_at(std::size_t flat) const;
    double item() const; // size-1 tensors

    bool has_grad() const;
    const std::vector<double>& grad() const;
    void clear_grad();

    // Leaf-only mutation (throws on graph interior nodes). Values of f32
    // tensors are re-rounded to the float grid after mutation.
    std::vector<double>& leaf_values();
    void nudge(std::size_t flat, double delta); // leaf value += delta (finite differences)
    void enforce_dtype();                       // re-round an f32 leaf after bulk mutation

    bool is_leaf() const;

    std::uint64_t node_id() const;

private:
    friend Tensor make_op_result(Shape, std::vector<double>, Dtype, bool,
                                 std::vector<Tensor>, std::function<void(detail::Node&)>,
                                 const char*);
    friend void backward(const Tensor&);
    friend Tensor detach(const Tensor&);
    friend detail::Node* node_of(const Tensor&);

    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// ---- ops -------------------------------------------------------------------
// Every op validates operand shapes/dtypes, checks the produced values are
// finite (NumericError otherwise), and registers its backward rule.
// No implicit broadcasting: mixed-shape variants are separate, named ops.

Tensor matmul(const Tensor& a, const Tensor& b);      // [m,k]x[k,n] -> [m,n]
Tensor transpose(const Tensor& a);                    // 2-D
Tensor add(const Tensor& a, const Tensor& b);         // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);         // elementwise
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor scale_by(const Tensor& a, const Tensor& s);    // s has size 1; grads flow to both
Tensor add_row_vector(const Tensor& x, const Tensor& v); // [m,n] + [1,n] per row
Tensor scale_rows(const Tensor& x, const Tensor& s);  // [m,n] * [m,1] per row
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax(const Tensor& a, int axis = -1);       // stable (max-subtracted)
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor sum_all(const Tensor& a);   // -> {1}
Tensor mean_all(const Tensor& a);  // -> {1}
Tensor mean_rows(const Tensor& x); // [m,n] -> [1,n], mean over rows
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids); // [V,d] -> [len,d]

// Label-smoothed token-mean cross entropy over logits rows. `weights`, when
// given, reweights positions (masked-LM loss uses 0/1 weights); the result is
// sum(w_j * ce_j) / sum(w_j).
Tensor cross_entropy_smoothed(const Tensor& logits, const std::vector<int>& targets,
                              double smoothing, const std::vector<double>* weights = nullptr);

// Token-mean cross entropy against full teacher rows: (1/J) sum_j sum_k
// -teacher[j,k] * log softmax(logits)[j,k]. Teacher rows must sum to 1
// within 1e-4; no gradient flows into the teacher argument.
Tensor soft_cross_entropy(const Tensor& logits, const Tensor& teacher_rows);

Tensor detach(const Tensor& a); // cut from the graph; requires_grad=false

// Elementwise mean of same-shape tensors (per-sentence loss averaging).
Tensor mean_of(const std::vector<Tensor>& ts);

// Reverse pass from a scalar. Every requires_grad leaf reachable from `loss`
// receives (accumulates) dLoss/dLeaf; each node is visited exactly once.
void backward(const Tensor& loss);

std::size_t count_nonfinite(const std::vector<double>& v);

} // namespace apt
