#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "spde/errors.hpp"

namespace spde {

/// Dense 64-bit matrix in contiguous row-major storage. Tensors of rank 3
/// store [n0, n1, n2] as an [n0, n1*n2] matrix; rank 1 stores [n] as [n, 1].
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline long flat_cols(const std::vector<int>& shape) {
    long c = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
}

class Tape;

/// Value handle. Either detached (owns storage) or a reference to a tape node.
/// Detached tensors never receive gradients; tape-bound ones may.
struct Tensor {
    std::vector<int> shape;
    Tape* tape = nullptr;
    int node = -1;
    std::shared_ptr<Matrix> storage;

    Tensor() = default;

    bool on_tape() const { return tape != nullptr && node >= 0; }

    static Tensor detached(Matrix m) {
        Tensor t;
        t.shape = {static_cast<int>(m.rows()), static_cast<int>(m.cols())};
        t.storage = std::make_shared<Matrix>(std::move(m));
        return t;
    }

    static Tensor detached(Matrix m, std::vector<int> shape) {
        Tensor t = detached(std::move(m));
        if (t.storage->rows() != shape.at(0) || t.storage->cols() != flat_cols(shape))
            throw std::invalid_argument("tensor shape does not match storage extent");
        t.shape = std::move(shape);
        return t;
    }

    const Matrix& value() const;

    /// Drops the tape binding. The detached storage keeps the current value;
    /// call before the bound tape goes out of scope.
    void unbind() {
        tape = nullptr;
        node = -1;
    }

    /// Mutable access to detached storage (parameters).
    Matrix& raw() {
        if (!storage) throw std::logic_error("tensor has no detached storage");
        return *storage;
    }

    double scalar() const {
        const Matrix& v = value();
        if (v.size() != 1) throw std::invalid_argument("scalar() on non-scalar tensor");
        return v(0, 0);
    }
};

namespace detail {

enum class Op : std::uint8_t {
    Leaf,
    Constant,
    Affine,         // x*W^T + b
    BatchNormTrain, // batch statistics, saves xhat and inv_std
    BatchNormInfer, // frozen statistics, per-column affine map
    LeakyRelu,
    Add,
    Sub,
    AddScaled,      // a + s0*b
    Scale,          // s0*a
    Mul,            // elementwise
    Contract,       // [B,k*d] x [B,d] -> [B,k], contraction over the last axis
    Sin,
    Atan,
    Square,
    MeanSqNorm,     // mean over rows of the squared row norm -> [1,1]
};

inline void affine_forward(Matrix& out, const Matrix& x, const Matrix& w, const Matrix& b) {
    out.noalias() = x * w.transpose();
    out.rowwise() += b.row(0);
}

inline void leaky_relu_forward(Matrix& out, const Matrix& x, double slope) {
    out = x.cwiseMax(slope * x);
}

/// Frozen-statistics batch norm: y = x .* scale + offset, computed per column
/// from (gamma, beta, running mean, running var).
inline void batchnorm_infer_scale(Matrix& scale, Matrix& offset, const Matrix& gamma,
                                  const Matrix& beta, const Matrix& run_mean,
                                  const Matrix& run_var, double eps) {
    scale = (gamma.array() * (run_var.array() + eps).rsqrt()).matrix();
    offset = (beta.array() - run_mean.array() * scale.array()).matrix();
}

inline void batchnorm_infer_forward(Matrix& out, const Matrix& x, const Matrix& scale,
                                    const Matrix& offset) {
    out = x;
    out.array().rowwise() *= scale.row(0).array();
    out.rowwise() += offset.row(0);
}

inline void contract_forward(Matrix& out, const Matrix& v, const Matrix& w) {
    const long d = w.cols();
    const long k = v.cols() / d;
    out.resize(v.rows(), k);
    for (long q = 0; q < k; ++q)
        out.col(q) = v.middleCols(q * d, d).cwiseProduct(w).rowwise().sum();
}

}  // namespace detail

/// Reverse-mode tape. Nodes hold op payloads plus owned value/grad buffers;
/// clear() resets the node count without releasing buffers, so a training loop
/// that records the same graph every iteration performs no heap allocation in
/// steady state.
class Tape {
public:
    struct Node {
        detail::Op op = detail::Op::Constant;
        int in0 = -1, in1 = -1, in2 = -1;
        double s0 = 0.0;
        const Matrix* ext = nullptr;  // leaf value lives outside the tape
        Matrix value;
        Matrix grad;
        Matrix aux0, aux1;
        bool requires_grad = false;
        int grad_stamp = -1;
    };

    int size() const { return static_cast<int>(live_); }

    void clear() { live_ = 0; }

    const Matrix& value_of(int id) const {
        const Node& n = node(id);
        return n.ext ? *n.ext : n.value;
    }

    bool requires_grad(int id) const { return node(id).requires_grad; }

    /// Gradient of the last backward() target with respect to node id.
    /// Zero-sized if the node was unreachable from the target.
    const Matrix& grad_of(int id) const {
        const Node& n = node(id);
        if (n.grad_stamp != pass_) {
            static const Matrix empty;
            return empty;
        }
        return n.grad;
    }

    int leaf(const Matrix& external_value, bool trainable) {
        Node& n = push(detail::Op::Leaf);
        n.ext = &external_value;
        n.requires_grad = trainable;
        return index_of(n);
    }

    int constant(const Matrix& v) {
        Node& n = push(detail::Op::Constant);
        n.value = v;
        return index_of(n);
    }

    /// Seeds d(target)/d(target) = 1 and accumulates gradients into every
    /// reachable node that requires them. target must be scalar.
    void backward(int target) {
        Node& t = node(target);
        const Matrix& tv = t.ext ? *t.ext : t.value;
        if (tv.size() != 1) throw std::invalid_argument("backward target must be scalar");
        ++pass_;
        touch_grad(target)(0, 0) = 1.0;
        for (int id = target; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.requires_grad || n.grad_stamp != pass_) continue;
            backward_node(id);
        }
    }

    // -- op builders (used through the free functions below) --

    int make_affine(int x, int w, int b) {
        Node& n = push(detail::Op::Affine);
        n.in0 = x; n.in1 = w; n.in2 = b;
        n.requires_grad = any_grad({x, w, b});
        detail::affine_forward(n.value, value_of(x), value_of(w), value_of(b));
        return index_of(n);
    }

    int make_batchnorm_train(int x, int gamma, int beta, double eps,
                             Matrix* batch_mean_out, Matrix* batch_var_out) {
        Node& n = push(detail::Op::BatchNormTrain);
        n.in0 = x; n.in1 = gamma; n.in2 = beta;
        n.s0 = eps;
        n.requires_grad = any_grad({x, gamma, beta});
        const Matrix& xv = value_of(x);
        const double rows = static_cast<double>(xv.rows());
        if (xv.rows() < 2) throw std::invalid_argument("batch norm in training mode needs batch size >= 2");
        Matrix mean = xv.colwise().mean();
        n.aux0 = xv;
        n.aux0.rowwise() -= mean.row(0);  // centered, becomes xhat below
        Matrix var = n.aux0.cwiseProduct(n.aux0).colwise().sum() / rows;  // biased
        n.aux1 = (var.array() + eps).rsqrt().matrix();  // inv_std
        n.aux0.array().rowwise() *= n.aux1.row(0).array();
        n.value = n.aux0;
        n.value.array().rowwise() *= value_of(gamma).row(0).array();
        n.value.rowwise() += value_of(beta).row(0);
        if (batch_mean_out) *batch_mean_out = std::move(mean);
        if (batch_var_out) *batch_var_out = std::move(var);
        return index_of(n);
    }

    int make_batchnorm_infer(int x, const Matrix& gamma, const Matrix& beta,
                             const Matrix& run_mean, const Matrix& run_var, double eps) {
        Node& n = push(detail::Op::BatchNormInfer);
        n.in0 = x;
        n.requires_grad = any_grad({x});
        detail::batchnorm_infer_scale(n.aux0, n.aux1, gamma, beta, run_mean, run_var, eps);
        detail::batchnorm_infer_forward(n.value, value_of(x), n.aux0, n.aux1);
        return index_of(n);
    }

    int make_leaky_relu(int x, double slope) {
        Node& n = push(detail::Op::LeakyRelu);
        n.in0 = x; n.s0 = slope;
        n.requires_grad = any_grad({x});
        detail::leaky_relu_forward(n.value, value_of(x), slope);
        return index_of(n);
    }

    int make_binary(detail::Op op, int a, int b, double s0 = 0.0) {
        Node& n = push(op);
        n.in0 = a; n.in1 = b; n.s0 = s0;
        n.requires_grad = any_grad({a, b});
        const Matrix& av = value_of(a);
        const Matrix& bv = value_of(b);
        switch (op) {
            case detail::Op::Add: n.value = av + bv; break;
            case detail::Op::Sub: n.value = av - bv; break;
            case detail::Op::AddScaled: n.value = av + s0 * bv; break;
            case detail::Op::Mul: n.value = av.cwiseProduct(bv); break;
            case detail::Op::Contract: detail::contract_forward(n.value, av, bv); break;
            default: throw std::logic_error("not a binary op");
        }
        return index_of(n);
    }

    int make_unary(detail::Op op, int x, double s0 = 0.0) {
        Node& n = push(op);
        n.in0 = x; n.s0 = s0;
        n.requires_grad = any_grad({x});
        const Matrix& xv = value_of(x);
        switch (op) {
            case detail::Op::Scale: n.value = s0 * xv; break;
            case detail::Op::Sin: n.value = xv.array().sin().matrix(); break;
            case detail::Op::Atan: n.value = xv.array().atan().matrix(); break;
            case detail::Op::Square: n.value = xv.cwiseProduct(xv); break;
            case detail::Op::MeanSqNorm:
                n.value.resize(1, 1);
                n.value(0, 0) = xv.squaredNorm() / static_cast<double>(xv.rows());
                break;
            default: throw std::logic_error("not a unary op");
        }
        return index_of(n);
    }

private:
    Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
    const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    int index_of(const Node& n) const { return static_cast<int>(&n - nodes_.data()); }

    Node& push(detail::Op op) {
        if (live_ == nodes_.size()) nodes_.emplace_back();
        Node& n = nodes_[live_++];
        n.op = op;
        n.in0 = n.in1 = n.in2 = -1;
        n.s0 = 0.0;
        n.ext = nullptr;
        n.requires_grad = false;
        n.grad_stamp = -1;
        return n;
    }

    bool any_grad(std::initializer_list<int> ids) const {
        for (int id : ids)
            if (id >= 0 && node(id).requires_grad) return true;
        return false;
    }

    /// Gradient buffer of a node, zeroed on first touch in the current pass.
    Matrix& touch_grad(int id) {
        Node& n = node(id);
        if (n.grad_stamp != pass_) {
            const Matrix& v = n.ext ? *n.ext : n.value;
            n.grad.resize(v.rows(), v.cols());
            n.grad.setZero();
            n.grad_stamp = pass_;
        }
        return n.grad;
    }

    bool wants(int id) const { return id >= 0 && node(id).requires_grad; }

    void backward_node(int id) {
        Node& n = node(id);
        const Matrix& g = n.grad;
        switch (n.op) {
            case detail::Op::Leaf:
            case detail::Op::Constant:
                break;
            case detail::Op::Affine: {
                if (wants(n.in0)) touch_grad(n.in0).noalias() += g * value_of(n.in1);
                if (wants(n.in1)) touch_grad(n.in1).noalias() += g.transpose() * value_of(n.in0);
                if (wants(n.in2)) touch_grad(n.in2) += g.colwise().sum();
                break;
            }
            case detail::Op::BatchNormTrain: {
                const Matrix& xhat = n.aux0;
                const Matrix& inv_std = n.aux1;
                if (wants(n.in1)) touch_grad(n.in1) += g.cwiseProduct(xhat).colwise().sum();
                if (wants(n.in2)) touch_grad(n.in2) += g.colwise().sum();
                if (wants(n.in0)) {
                    const double rows = static_cast<double>(g.rows());
                    Matrix dxhat = g;
                    dxhat.array().rowwise() *= value_of(n.in1).row(0).array();
                    Matrix c1 = dxhat.colwise().sum();
                    Matrix c2 = dxhat.cwiseProduct(xhat).colwise().sum();
                    Matrix dx = rows * dxhat;
                    dx.rowwise() -= c1.row(0);
                    dx -= xhat * c2.row(0).asDiagonal();
                    dx.array().rowwise() *= inv_std.row(0).array() / rows;
                    touch_grad(n.in0) += dx;
                }
                break;
            }
            case detail::Op::BatchNormInfer: {
                if (wants(n.in0))
                    touch_grad(n.in0).array() += g.array().rowwise() * n.aux0.row(0).array();
                break;
            }
            case detail::Op::LeakyRelu: {
                if (wants(n.in0)) {
                    const auto& xv = value_of(n.in0).array();
                    touch_grad(n.in0).array() += (xv > 0.0).select(g.array(), n.s0 * g.array());
                }
                break;
            }
            case detail::Op::Add: {
                if (wants(n.in0)) touch_grad(n.in0) += g;
                if (wants(n.in1)) touch_grad(n.in1) += g;
                break;
            }
            case detail::Op::Sub: {
                if (wants(n.in0)) touch_grad(n.in0) += g;
                if (wants(n.in1)) touch_grad(n.in1) -= g;
                break;
            }
            case detail::Op::AddScaled: {
                if (wants(n.in0)) touch_grad(n.in0) += g;
                if (wants(n.in1)) touch_grad(n.in1) += n.s0 * g;
                break;
            }
            case detail::Op::Scale: {
                if (wants(n.in0)) touch_grad(n.in0) += n.s0 * g;
                break;
            }
            case detail::Op::Mul: {
                if (wants(n.in0)) touch_grad(n.in0) += g.cwiseProduct(value_of(n.in1));
                if (wants(n.in1)) touch_grad(n.in1) += g.cwiseProduct(value_of(n.in0));
                break;
            }
            case detail::Op::Contract: {
                const Matrix& v = value_of(n.in0);
                const Matrix& w = value_of(n.in1);
                const long d = w.cols();
                const long k = v.cols() / d;
                for (long q = 0; q < k; ++q) {
                    if (wants(n.in0))
                        touch_grad(n.in0).middleCols(q * d, d) += g.col(q).asDiagonal() * w;
                    if (wants(n.in1))
                        touch_grad(n.in1) += g.col(q).asDiagonal() * v.middleCols(q * d, d);
                }
                break;
            }
            case detail::Op::Sin: {
                if (wants(n.in0))
                    touch_grad(n.in0).array() += g.array() * value_of(n.in0).array().cos();
                break;
            }
            case detail::Op::Atan: {
                if (wants(n.in0))
                    touch_grad(n.in0).array() +=
                        g.array() / (1.0 + value_of(n.in0).array().square());
                break;
            }
            case detail::Op::Square: {
                if (wants(n.in0))
                    touch_grad(n.in0).array() += 2.0 * g.array() * value_of(n.in0).array();
                break;
            }
            case detail::Op::MeanSqNorm: {
                if (wants(n.in0)) {
                    const Matrix& xv = value_of(n.in0);
                    touch_grad(n.in0) +=
                        (2.0 / static_cast<double>(xv.rows())) * g(0, 0) * xv;
                }
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    std::size_t live_ = 0;
    int pass_ = 0;
};

inline const Matrix& Tensor::value() const {
    if (on_tape()) return tape->value_of(node);
    if (!storage) throw std::logic_error("empty tensor");
    return *storage;
}

// ---- op surface ------------------------------------------------------------

namespace detail {

inline Tape* common_tape(std::initializer_list<const Tensor*> ts) {
    Tape* t = nullptr;
    for (const Tensor* p : ts) {
        if (!p->on_tape()) continue;
        if (t && t != p->tape) throw std::invalid_argument("operands live on different tapes");
        t = p->tape;
    }
    return t;
}

/// Node id of a tensor on the given tape, wrapping detached values as
/// constants on demand.
inline int node_on(Tape& tape, const Tensor& t) {
    if (t.on_tape()) return t.node;
    return tape.constant(t.value());
}

inline Tensor wrap(Tape* tape, int node, std::vector<int> shape) {
    Tensor r;
    r.shape = std::move(shape);
    r.tape = tape;
    r.node = node;
    return r;
}

inline void check_same_extent(const Tensor& a, const Tensor& b, const char* what) {
    if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols())
        throw std::invalid_argument(std::string(what) + ": operand extents differ");
}

}  // namespace detail

/// Places a detached tensor on the tape as a constant (no gradient).
inline Tensor constant(Tape& tape, const Matrix& v) {
    return detail::wrap(&tape, tape.constant(v),
                        {static_cast<int>(v.rows()), static_cast<int>(v.cols())});
}

/// Binds a parameter tensor to the tape as a trainable leaf. The binding is
/// valid until the next clear(); rebind every iteration.
inline void bind_leaf(Tape& tape, Tensor& param) {
    param.tape = &tape;
    param.node = tape.leaf(*param.storage, true);
}

inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.value().cols() != w.value().cols())
        throw std::invalid_argument("affine: input width does not match weight columns");
    if (b.value().cols() != w.value().rows() || b.value().rows() != 1)
        throw std::invalid_argument("affine: bias extent does not match weight rows");
    Tape* tape = detail::common_tape({&x, &w, &b});
    const std::vector<int> shape = {static_cast<int>(x.value().rows()),
                                    static_cast<int>(w.value().rows())};
    if (!tape) {
        Matrix out;
        detail::affine_forward(out, x.value(), w.value(), b.value());
        return Tensor::detached(std::move(out), shape);
    }
    int id = tape->make_affine(detail::node_on(*tape, x), detail::node_on(*tape, w),
                               detail::node_on(*tape, b));
    return detail::wrap(tape, id, shape);
}

inline Tensor leaky_relu(const Tensor& x, double slope) {
    Tape* tape = detail::common_tape({&x});
    if (!tape) {
        Matrix out;
        detail::leaky_relu_forward(out, x.value(), slope);
        return Tensor::detached(std::move(out), x.shape);
    }
    return detail::wrap(tape, tape->make_leaky_relu(x.node, slope), x.shape);
}

namespace detail {

inline Tensor binary_op(Op op, const Tensor& a, const Tensor& b, double s0,
                        std::vector<int> shape) {
    Tape* tape = common_tape({&a, &b});
    if (!tape) {
        Matrix out;
        switch (op) {
            case Op::Add: out = a.value() + b.value(); break;
            case Op::Sub: out = a.value() - b.value(); break;
            case Op::AddScaled: out = a.value() + s0 * b.value(); break;
            case Op::Mul: out = a.value().cwiseProduct(b.value()); break;
            case Op::Contract: contract_forward(out, a.value(), b.value()); break;
            default: throw std::logic_error("not a binary op");
        }
        return Tensor::detached(std::move(out), std::move(shape));
    }
    int id = tape->make_binary(op, node_on(*tape, a), node_on(*tape, b), s0);
    return wrap(tape, id, std::move(shape));
}

inline Tensor unary_op(Op op, const Tensor& x, double s0, std::vector<int> shape) {
    Tape* tape = common_tape({&x});
    if (!tape) {
        Matrix out;
        switch (op) {
            case Op::Scale: out = s0 * x.value(); break;
            case Op::Sin: out = x.value().array().sin().matrix(); break;
            case Op::Atan: out = x.value().array().atan().matrix(); break;
            case Op::Square: out = x.value().cwiseProduct(x.value()); break;
            case Op::MeanSqNorm:
                out.resize(1, 1);
                out(0, 0) = x.value().squaredNorm() / static_cast<double>(x.value().rows());
                break;
            default: throw std::logic_error("not a unary op");
        }
        return Tensor::detached(std::move(out), std::move(shape));
    }
    return wrap(tape, tape->make_unary(op, x.node, s0), std::move(shape));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_extent(a, b, "add");
    return detail::binary_op(detail::Op::Add, a, b, 0.0, a.shape);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_extent(a, b, "sub");
    return detail::binary_op(detail::Op::Sub, a, b, 0.0, a.shape);
}

/// a + s*b
inline Tensor add_scaled(const Tensor& a, const Tensor& b, double s) {
    detail::check_same_extent(a, b, "add_scaled");
    return detail::binary_op(detail::Op::AddScaled, a, b, s, a.shape);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_extent(a, b, "mul");
    return detail::binary_op(detail::Op::Mul, a, b, 0.0, a.shape);
}

inline Tensor scale(const Tensor& x, double s) {
    return detail::unary_op(detail::Op::Scale, x, s, x.shape);
}

/// Contraction over the trailing axis: v of logical shape [B,k,d] against
/// w of shape [B,d], giving [B,k].
inline Tensor contract_last(const Tensor& v, const Tensor& w) {
    const long rows = v.value().rows();
    const long d = w.value().cols();
    if (w.value().rows() != rows) throw std::invalid_argument("contract_last: row counts differ");
    if (d == 0 || v.value().cols() % d != 0)
        throw std::invalid_argument("contract_last: trailing extents incompatible");
    const int k = static_cast<int>(v.value().cols() / d);
    return detail::binary_op(detail::Op::Contract, v, w, 0.0, {static_cast<int>(rows), k});
}

/// Row-wise dot product of two [B,m] tensors -> [B,1].
inline Tensor rowdot(const Tensor& a, const Tensor& b) {
    detail::check_same_extent(a, b, "rowdot");
    return contract_last(a, b);
}

inline Tensor sin(const Tensor& x) { return detail::unary_op(detail::Op::Sin, x, 0.0, x.shape); }
inline Tensor atan(const Tensor& x) { return detail::unary_op(detail::Op::Atan, x, 0.0, x.shape); }
inline Tensor square(const Tensor& x) { return detail::unary_op(detail::Op::Square, x, 0.0, x.shape); }

/// Mean over the batch of the squared Euclidean row norm -> scalar [1,1].
inline Tensor mean_squared_norm(const Tensor& x) {
    return detail::unary_op(detail::Op::MeanSqNorm, x, 0.0, {1, 1});
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

/// Runs backward from a scalar loss and collects d(loss)/d(param) for every
/// parameter, in order. Parameters that never entered the graph (or entered
/// it detached) receive exact zeros. Clears the tape afterwards; parameter
/// bindings are dropped.
inline std::vector<Matrix> gradient(Tape& tape, const Tensor& loss,
                                    const std::vector<Tensor*>& params) {
    if (!loss.on_tape() || loss.tape != &tape)
        throw std::invalid_argument("gradient: loss does not live on this tape");
    tape.backward(loss.node);
    std::vector<Matrix> grads;
    grads.reserve(params.size());
    for (Tensor* p : params) {
        const Matrix& v = p->value();
        if (p->on_tape() && p->tape == &tape) {
            const Matrix& g = tape.grad_of(p->node);
            grads.push_back(g.size() ? g : Matrix(Matrix::Zero(v.rows(), v.cols())));
        } else {
            grads.push_back(Matrix::Zero(v.rows(), v.cols()));
        }
        p->unbind();
    }
    tape.clear();
    return grads;
}

}  // namespace spde
