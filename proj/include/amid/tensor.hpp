#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace amid::diff {

using Shape = std::vector<std::size_t>;

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded operation (or leaf). The graph is implicit: each node keeps
// its parents, and backward() walks the reverse topological order exactly
// once per node. parent_needs_grad snapshots each parent's requires_grad at
// record time, so freezing a parameter after recording (or unfreezing it, as
// FreezeGuard does on scope exit) cannot change where gradients flow.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // same length as value, zero until backward
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    std::vector<char> parent_needs_grad;
    std::function<void(Node&)> backward;
};

}  // namespace detail

// Dense row-major double tensor with reverse-mode differentiation. Tensors are
// value handles onto immutable recorded nodes; building an op both computes
// the result and records it for backward().
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

    // Leaf constructors. constant() takes no gradient; variable() does.
    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor constant(Shape shape, double fill = 0.0);
    static Tensor variable(Shape shape, std::vector<double> values);
    static Tensor scalar(double v);  // rank-0

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const;
    std::size_t size() const;
    std::size_t rows() const;  // rank-2 only
    std::size_t cols() const;
    std::span<const double> values() const;
    double operator[](std::size_t flat) const;
    double at(std::size_t r, std::size_t c) const;
    double scalar_value() const;

    bool requires_grad() const;
    std::span<const double> grad() const;

    // Hard gradient barrier: a fresh leaf carrying a copy of the values.
    Tensor detach() const;

    detail::NodePtr node() const { return node_; }

  private:
    detail::NodePtr node_;
};

// Probability clamp applied to every log(p) / log(1-p) argument; prevents
// blowup when a discriminator or softmax saturates.
inline constexpr double kProbEps = 1e-7;

// ---- recorded ops ----------------------------------------------------------
// Elementwise ops require equal shapes, except that a rank-1 right operand of
// length d broadcasts across the rows of a rank-2 [B,d] left operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor sub_from_scalar(double c, const Tensor& a);  // c - a
Tensor matmul(const Tensor& a, const Tensor& b);    // [m,k] x [k,n]
Tensor leaky_relu(const Tensor& a, double slope);
Tensor sigmoid(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor clamp_prob(const Tensor& p);  // clamp(p, eps, 1-eps)
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor softmax_rows(const Tensor& a);  // rank-2, softmax over each row
Tensor sum_all(const Tensor& a);       // rank-0
Tensor mean_all(const Tensor& a);      // rank-0
Tensor concat_cols(std::span<const Tensor> parts);  // [B,di] -> [B, sum di]
Tensor gather_rows(const Tensor& a, std::vector<std::size_t> indices);
Tensor cosine_rows(const Tensor& a, const Tensor& b);    // [B,d]x[B,d] -> [B]
Tensor cosine_matrix(const Tensor& a, const Tensor& b);  // [Ba,d]x[Bb,d] -> [Ba,Bb]

// Reverse-mode pass from a scalar loss. Gradients accumulate into every
// reachable node that requires a gradient; callers zero parameter gradients
// between steps. Throws UsageError when the loss is not scalar.
void backward(const Tensor& loss);

// Named trainable leaf. Frozen parameters (trainable=false) accumulate a zero
// gradient exactly and are skipped by optimizers.
class Parameter {
  public:
    Parameter() = default;
    Parameter(std::string name, Shape shape, std::vector<double> init);

    const std::string& name() const { return name_; }
    const Tensor& tensor() const { return tensor_; }
    Shape shape() const { return tensor_.shape(); }
    std::size_t size() const { return tensor_.size(); }

    std::span<const double> values() const { return tensor_.values(); }
    std::span<double> values_mut();  // single-writer mutation between steps
    std::span<const double> grad() const { return tensor_.grad(); }
    void zero_grad();

    bool trainable() const { return tensor_.requires_grad(); }
    void set_trainable(bool on);

  private:
    std::string name_;
    Tensor tensor_;
};

// Temporarily marks a set of parameters non-trainable; ops recorded inside
// the scope treat them as constants, so backward leaves their gradients at
// exactly zero. Restores the previous flags on destruction.
class FreezeGuard {
  public:
    explicit FreezeGuard(std::span<Parameter* const> params);
    ~FreezeGuard();
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

  private:
    std::vector<std::pair<Parameter*, bool>> saved_;
};

}  // namespace amid::diff
