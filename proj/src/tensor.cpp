#include "amid/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "amid/errors.hpp"

namespace amid::diff {

namespace {

std::size_t shape_product(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream out;
    out << "[";
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
    out << "]";
    return out.str();
}

detail::NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    const std::size_t n = shape_product(shape);
    if (values.size() != n) {
        throw UsageError("tensor: value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->grad.assign(n, 0.0);
    node->requires_grad = requires_grad;
    return node;
}

// Every op funnels through here: computes requires_grad from the parents,
// verifies the result is finite, and attaches the backward closure.
Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<detail::NodePtr> parents,
               std::function<void(detail::Node&)> backward) {
    bool rg = false;
    std::vector<char> needs;
    needs.reserve(parents.size());
    for (const auto& p : parents) {
        rg = rg || p->requires_grad;
        needs.push_back(p->requires_grad ? 1 : 0);
    }
    for (double v : value) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("op '") + op + "' produced a non-finite value");
        }
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->grad.assign(node->value.size(), 0.0);
    node->requires_grad = rg;
    node->op = op;
    node->parents = std::move(parents);
    node->parent_needs_grad = std::move(needs);
    if (rg) node->backward = std::move(backward);
    return Tensor(node);
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor operand");
}

// Broadcast contract for elementwise binary ops: equal shapes, or a rank-1
// right operand spanning the columns of a rank-2 left operand.
enum class Bcast { kSame, kRowwise };

Bcast binary_mode(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Bcast::kSame;
    if (a.rank() == 2 && b.rank() == 1 && b.size() == a.cols()) return Bcast::kRowwise;
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

void accumulate(detail::Node& into, const std::vector<double>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) into.grad[i] += g[i];
}

}  // namespace

// ---- Tensor basics ----------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::constant(Shape shape, double fill) {
    std::vector<double> v(shape_product(shape), fill);
    return Tensor(make_leaf(std::move(shape), std::move(v), false));
}

Tensor Tensor::variable(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

Tensor Tensor::scalar(double v) { return Tensor(make_leaf({}, {v}, false)); }

const Shape& Tensor::shape() const {
    require_defined(*this, "shape");
    return node_->shape;
}

std::size_t Tensor::rank() const { return shape().size(); }

std::size_t Tensor::size() const {
    require_defined(*this, "size");
    return node_->value.size();
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw UsageError("rows: tensor is not rank-2");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw UsageError("cols: tensor is not rank-2");
    return node_->shape[1];
}

std::span<const double> Tensor::values() const {
    require_defined(*this, "values");
    return node_->value;
}

double Tensor::operator[](std::size_t flat) const { return values()[flat]; }

double Tensor::at(std::size_t r, std::size_t c) const {
    return node_->value[r * cols() + c];
}

double Tensor::scalar_value() const {
    if (size() != 1) throw UsageError("scalar_value: tensor has more than one element");
    return node_->value[0];
}

bool Tensor::requires_grad() const {
    require_defined(*this, "requires_grad");
    return node_->requires_grad;
}

std::span<const double> Tensor::grad() const {
    require_defined(*this, "grad");
    return node_->grad;
}

Tensor Tensor::detach() const {
    require_defined(*this, "detach");
    return Tensor(make_leaf(node_->shape, node_->value, false));
}

// ---- elementwise binary ops --------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_defined(a, "add");
    require_defined(b, "add");
    const Bcast mode = binary_mode(a, b, "add");
    std::vector<double> out(a.size());
    const auto av = a.values();
    const auto bv = b.values();
    if (mode == Bcast::kSame) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    } else {
        const std::size_t c = a.cols();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % c];
    }
    auto pa = a.node();
    auto pb = b.node();
    return make_op("add", a.shape(), std::move(out), {pa, pb}, [pa, pb, mode](detail::Node& n) {
        if (n.parent_needs_grad[0]) accumulate(*pa, n.grad);
        if (n.parent_needs_grad[1]) {
            if (mode == Bcast::kSame) {
                accumulate(*pb, n.grad);
            } else {
                const std::size_t c = pb->value.size();
                for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i % c] += n.grad[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_defined(a, "sub");
    require_defined(b, "sub");
    const Bcast mode = binary_mode(a, b, "sub");
    std::vector<double> out(a.size());
    const auto av = a.values();
    const auto bv = b.values();
    if (mode == Bcast::kSame) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    } else {
        const std::size_t c = a.cols();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i % c];
    }
    auto pa = a.node();
    auto pb = b.node();
    return make_op("sub", a.shape(), std::move(out), {pa, pb}, [pa, pb, mode](detail::Node& n) {
        if (n.parent_needs_grad[0]) accumulate(*pa, n.grad);
        if (n.parent_needs_grad[1]) {
            if (mode == Bcast::kSame) {
                for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
            } else {
                const std::size_t c = pb->value.size();
                for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i % c] -= n.grad[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_defined(a, "mul");
    require_defined(b, "mul");
    const Bcast mode = binary_mode(a, b, "mul");
    std::vector<double> out(a.size());
    const auto av = a.values();
    const auto bv = b.values();
    if (mode == Bcast::kSame) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    } else {
        const std::size_t c = a.cols();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i % c];
    }
    auto pa = a.node();
    auto pb = b.node();
    return make_op("mul", a.shape(), std::move(out), {pa, pb}, [pa, pb, mode](detail::Node& n) {
        const std::size_t c = pb->value.size();
        if (n.parent_needs_grad[0]) {
            if (mode == Bcast::kSame) {
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    pa->grad[i] += n.grad[i] * pb->value[i];
            } else {
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    pa->grad[i] += n.grad[i] * pb->value[i % c];
            }
        }
        if (n.parent_needs_grad[1]) {
            if (mode == Bcast::kSame) {
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    pb->grad[i] += n.grad[i] * pa->value[i];
            } else {
                for (std::size_t i = 0; i < n.grad.size(); ++i)
                    pb->grad[i % c] += n.grad[i] * pa->value[i];
            }
        }
    });
}

// ---- scalar ops --------------------------------------------------------------

Tensor scale(const Tensor& a, double c) {
    require_defined(a, "scale");
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    auto pa = a.node();
    return make_op("scale", a.shape(), std::move(out), {pa}, [pa, c](detail::Node& n) {
        if (!n.parent_needs_grad[0]) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * c;
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    require_defined(a, "add_scalar");
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
    auto pa = a.node();
    return make_op("add_scalar", a.shape(), std::move(out), {pa}, [pa](detail::Node& n) {
        if (n.parent_needs_grad[0]) accumulate(*pa, n.grad);
    });
}

Tensor sub_from_scalar(double c, const Tensor& a) {
    require_defined(a, "sub_from_scalar");
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c - av[i];
    auto pa = a.node();
    return make_op("sub_from_scalar", a.shape(), std::move(out), {pa}, [pa](detail::Node& n) {
        if (!n.parent_needs_grad[0]) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] -= n.grad[i];
    });
}

// ---- matmul ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    if (a.rank() != 2 || b.rank() != 2) throw ConfigError("matmul: operands must be rank-2");
    if (a.cols() != b.rows()) {
        throw ConfigError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
        }
    }
    auto pa = a.node();
    auto pb = b.node();
    return make_op("matmul", {m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](detail::Node& g) {
        if (g.parent_needs_grad[0]) {  // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = g.grad[i * n + j];
                    if (gij == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p)
                        pa->grad[i * k + p] += gij * pb->value[p * n + j];
                }
        }
        if (g.parent_needs_grad[1]) {  // dB = A^T * G
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = pa->value[i * k + p];
                    if (aip == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        pb->grad[p * n + j] += aip * g.grad[i * n + j];
                }
        }
    });
}

// ---- unary nonlinearities ------------------------------------------------------

Tensor leaky_relu(const Tensor& a, double slope) {
    require_defined(a, "leaky_relu");
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : slope * av[i];
    auto pa = a.node();
    return make_op("leaky_relu", a.shape(), std::move(out), {pa}, [pa, slope](detail::Node& n) {
        if (!n.parent_needs_grad[0]) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i] += n.grad[i] * (pa->value[i] > 0.0 ? 1.0 : slope);
    });
}

Tensor sigmoid(const Tensor& a) {
    require_defined(a, "sigmoid");
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
    auto pa = a.node();
    return make_op("sigmoid", a.shape(), std::move(out), {pa}, [pa](detail::Node& n) {
        if (!n.parent_needs_grad[0]) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double s = n.value[i];
            pa->grad[i] += n.grad[i] * s * (1.0 - s);
        }
    });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    require_defined(a, "clamp");
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, av[i]));
    auto pa = a.node();
    return make_op("clamp", a.shape(), std::move(out), {pa}, [pa, lo, hi](detail::Node& n) {
        if (!n.parent_needs_grad[0]) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double v = pa->value[i];
            if (v > lo && v < hi) pa->grad[i] += n.grad[i];
        }
    });
}

Tensor clamp_prob(const Tensor& p) { return clamp(p, kProbEps, 1.0 - kProbEps); }

Tensor log(const Tensor& a) {
    require_defined(a, "log");
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(av[i] > 0.0)) {
            throw NumericError("log: non-positive argument at index " + std::to_string(i));
        }
        out[i] = std::log(av[i]);
    }
    auto pa = a.node();
    return make_op("log", a.shape(), std::move(out), {pa}, [pa](detail::Node& n) {
        if (!n.parent_needs_grad[0]) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] / pa->value[i];
    });
}

Tensor exp(const Tensor& a) {
    require_defined(a, "exp");
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
    auto pa = a.node();
    return make_op("exp", a.shape(), std::move(out), {pa}, [pa](detail::Node& n) {
        if (!n.parent_needs_grad[0]) return;
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * n.value[i];
    });
}

// ---- softmax / reductions -----------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
    require_defined(a, "softmax_rows");
    if (a.rank() != 2) throw ConfigError("softmax_rows: operand must be rank-2");
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * c);
    const auto av = a.values();
    for (std::size_t i = 0; i < r; ++i) {
        double mx = av[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, av[i * c + j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(av[i * c + j] - mx);
            denom += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= denom;
    }
    auto pa = a.node();
    return make_op("softmax_rows", a.shape(), std::move(out), {pa}, [pa, r, c](detail::Node& n) {
        if (!n.parent_needs_grad[0]) return;
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += n.grad[i * c + j] * n.value[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                pa->grad[i * c + j] += n.value[i * c + j] * (n.grad[i * c + j] - dot);
        }
    });
}

Tensor sum_all(const Tensor& a) {
    require_defined(a, "sum_all");
    double s = 0.0;
    for (double v : a.values()) s += v;
    auto pa = a.node();
    return make_op("sum_all", {}, {s}, {pa}, [pa](detail::Node& n) {
        if (!n.parent_needs_grad[0]) return;
        const double g = n.grad[0];
        for (double& d : pa->grad) d += g;
    });
}

Tensor mean_all(const Tensor& a) {
    require_defined(a, "mean_all");
    if (a.size() == 0) throw UsageError("mean_all: empty tensor");
    double s = 0.0;
    for (double v : a.values()) s += v;
    const double inv = 1.0 / static_cast<double>(a.size());
    auto pa = a.node();
    return make_op("mean_all", {}, {s * inv}, {pa}, [pa, inv](detail::Node& n) {
        if (!n.parent_needs_grad[0]) return;
        const double g = n.grad[0] * inv;
        for (double& d : pa->grad) d += g;
    });
}

// ---- structural ops -----------------------------------------------------------

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw UsageError("concat_cols: no operands");
    const std::size_t r = parts[0].rows();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        require_defined(p, "concat_cols");
        if (p.rank() != 2 || p.rows() != r)
            throw ConfigError("concat_cols: operands must be rank-2 with equal row counts");
        total += p.cols();
    }
    std::vector<double> out(r * total);
    std::vector<detail::NodePtr> nodes;
    std::vector<std::size_t> widths;
    nodes.reserve(parts.size());
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const std::size_t c = p.cols();
        const auto pv = p.values();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[i * total + off + j] = pv[i * c + j];
        nodes.push_back(p.node());
        widths.push_back(c);
        off += c;
    }
    return make_op("concat_cols", {r, total}, std::move(out), nodes,
                   [nodes, widths, r, total](detail::Node& n) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < nodes.size(); ++k) {
                           const std::size_t c = widths[k];
                           if (n.parent_needs_grad[k]) {
                               for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < c; ++j)
                                       nodes[k]->grad[i * c + j] += n.grad[i * total + off + j];
                           }
                           off += c;
                       }
                   });
}

Tensor gather_rows(const Tensor& a, std::vector<std::size_t> indices) {
    require_defined(a, "gather_rows");
    if (a.rank() != 2) throw ConfigError("gather_rows: operand must be rank-2");
    const std::size_t r = a.rows(), c = a.cols();
    for (std::size_t idx : indices) {
        if (idx >= r) throw UsageError("gather_rows: row index out of range");
    }
    std::vector<double> out(indices.size() * c);
    const auto av = a.values();
    for (std::size_t i = 0; i < indices.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = av[indices[i] * c + j];
    auto pa = a.node();
    auto idx = std::move(indices);
    const std::size_t nrows = idx.size();
    return make_op("gather_rows", {nrows, c}, std::move(out), {pa},
                   [pa, idx = std::move(idx), c](detail::Node& n) {
                       if (!n.parent_needs_grad[0]) return;
                       for (std::size_t i = 0; i < idx.size(); ++i)
                           for (std::size_t j = 0; j < c; ++j)
                               pa->grad[idx[i] * c + j] += n.grad[i * c + j];
                   });
}

// ---- cosine similarity ----------------------------------------------------------

namespace {

std::vector<double> row_norms(const Tensor& t, const char* op) {
    const std::size_t r = t.rows(), c = t.cols();
    std::vector<double> norms(r);
    const auto v = t.values();
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += v[i * c + j] * v[i * c + j];
        norms[i] = std::sqrt(s);
        if (norms[i] == 0.0) {
            throw NumericError(std::string(op) + ": zero-norm row " + std::to_string(i));
        }
    }
    return norms;
}

}  // namespace

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
    require_defined(a, "cosine_rows");
    require_defined(b, "cosine_rows");
    if (a.rank() != 2 || a.shape() != b.shape())
        throw ConfigError("cosine_rows: operands must be rank-2 with equal shapes");
    const std::size_t r = a.rows(), c = a.cols();
    const auto na = row_norms(a, "cosine_rows");
    const auto nb = row_norms(b, "cosine_rows");
    std::vector<double> out(r);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += av[i * c + j] * bv[i * c + j];
        out[i] = dot / (na[i] * nb[i]);
    }
    auto pa = a.node();
    auto pb = b.node();
    return make_op("cosine_rows", {r}, std::move(out), {pa, pb},
                   [pa, pb, na, nb, r, c](detail::Node& n) {
                       for (std::size_t i = 0; i < r; ++i) {
                           const double g = n.grad[i];
                           if (g == 0.0) continue;
                           const double cos_i = n.value[i];
                           const double inv = 1.0 / (na[i] * nb[i]);
                           for (std::size_t j = 0; j < c; ++j) {
                               const double aj = pa->value[i * c + j];
                               const double bj = pb->value[i * c + j];
                               if (n.parent_needs_grad[0])
                                   pa->grad[i * c + j] +=
                                       g * (bj * inv - cos_i * aj / (na[i] * na[i]));
                               if (n.parent_needs_grad[1])
                                   pb->grad[i * c + j] +=
                                       g * (aj * inv - cos_i * bj / (nb[i] * nb[i]));
                           }
                       }
                   });
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
    require_defined(a, "cosine_matrix");
    require_defined(b, "cosine_matrix");
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        throw ConfigError("cosine_matrix: operands must be rank-2 with equal column counts");
    const std::size_t ra = a.rows(), rb = b.rows(), c = a.cols();
    const auto na = row_norms(a, "cosine_matrix");
    const auto nb = row_norms(b, "cosine_matrix");
    std::vector<double> out(ra * rb);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < ra; ++i)
        for (std::size_t j = 0; j < rb; ++j) {
            double dot = 0.0;
            for (std::size_t p = 0; p < c; ++p) dot += av[i * c + p] * bv[j * c + p];
            out[i * rb + j] = dot / (na[i] * nb[j]);
        }
    auto pa = a.node();
    auto pb = b.node();
    return make_op("cosine_matrix", {ra, rb}, std::move(out), {pa, pb},
                   [pa, pb, na, nb, ra, rb, c](detail::Node& n) {
                       for (std::size_t i = 0; i < ra; ++i)
                           for (std::size_t j = 0; j < rb; ++j) {
                               const double g = n.grad[i * rb + j];
                               if (g == 0.0) continue;
                               const double cos_ij = n.value[i * rb + j];
                               const double inv = 1.0 / (na[i] * nb[j]);
                               for (std::size_t p = 0; p < c; ++p) {
                                   const double ap = pa->value[i * c + p];
                                   const double bp = pb->value[j * c + p];
                                   if (n.parent_needs_grad[0])
                                       pa->grad[i * c + p] +=
                                           g * (bp * inv - cos_ij * ap / (na[i] * na[i]));
                                   if (n.parent_needs_grad[1])
                                       pb->grad[j * c + p] +=
                                           g * (ap * inv - cos_ij * bp / (nb[j] * nb[j]));
                               }
                           }
                   });
}

// ---- backward -----------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined()) throw UsageError("backward: undefined loss");
    if (loss.size() != 1) throw UsageError("backward: loss must be scalar");
    if (!loss.requires_grad()) return;  // nothing trainable was touched

    // Iterative post-order DFS; the visit order is a function of graph
    // construction only, so gradients are bit-reproducible.
    std::vector<detail::Node*> order;
    std::unordered_set<const detail::Node*> seen;
    struct Frame {
        detail::Node* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node().get(), 0});
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            const std::size_t edge = f.next_parent++;
            detail::Node* p = f.node->parents[edge].get();
            if (f.node->parent_needs_grad[edge] && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

// ---- Parameter / FreezeGuard ----------------------------------------------------

Parameter::Parameter(std::string name, Shape shape, std::vector<double> init)
    : name_(std::move(name)), tensor_(Tensor::variable(std::move(shape), std::move(init))) {}

std::span<double> Parameter::values_mut() { return tensor_.node()->value; }

void Parameter::zero_grad() {
    auto& g = tensor_.node()->grad;
    std::fill(g.begin(), g.end(), 0.0);
}

void Parameter::set_trainable(bool on) { tensor_.node()->requires_grad = on; }

FreezeGuard::FreezeGuard(std::span<Parameter* const> params) {
    saved_.reserve(params.size());
    for (Parameter* p : params) {
        saved_.emplace_back(p, p->trainable());
        p->set_trainable(false);
    }
}

FreezeGuard::~FreezeGuard() {
    for (auto& [p, was] : saved_) p->set_trainable(was);
}

}  // namespace amid::diff
