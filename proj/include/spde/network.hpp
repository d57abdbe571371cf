#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spde/rng.hpp"
#include "spde/tensor.hpp"

namespace spde {

enum class NetMode { Training, Inference };

/// Named view of one trainable parameter block.
struct ParamBlock {
    std::string name;
    Tensor* tensor;
};

/// Scratch buffers for allocation-free repeated inference.
struct EvalScratch {
    Matrix a, b, scale, offset;
};

/// Fully connected network: affine maps with leaky-ReLU hidden activations and
/// identity output. Optional batch normalization sits after each hidden affine
/// map, before the activation. Training-mode forward normalizes with batch
/// statistics and updates frozen running averages; inference uses the frozen
/// averages only.
class FeedforwardNet {
public:
    struct BatchNormLayer {
        Tensor gamma, beta;       // trainable, [1,n]
        Matrix run_mean, run_var; // frozen statistics, [1,n]
    };

    FeedforwardNet() = default;

    explicit FeedforwardNet(std::vector<int> sizes, bool batch_norm = true,
                            double leaky_slope = 0.01, double bn_eps = 1e-5,
                            double bn_momentum = 0.99)
        : sizes_(std::move(sizes)), batch_norm_(batch_norm), slope_(leaky_slope),
          bn_eps_(bn_eps), bn_momentum_(bn_momentum) {
        if (sizes_.size() < 2) throw std::invalid_argument("network needs at least two layer sizes");
        for (int n : sizes_)
            if (n < 1) throw std::invalid_argument("layer sizes must be positive");
        const int maps = num_layers();
        weights_.resize(maps);
        biases_.resize(maps);
        for (int l = 0; l < maps; ++l) {
            weights_[l] = Tensor::detached(Matrix::Zero(sizes_[l + 1], sizes_[l]));
            biases_[l] = Tensor::detached(Matrix::Zero(1, sizes_[l + 1]));
        }
        if (batch_norm_) {
            bn_.resize(maps - 1);
            for (int l = 0; l + 1 < maps; ++l) {
                const int n = sizes_[l + 1];
                bn_[l].gamma = Tensor::detached(Matrix::Ones(1, n));
                bn_[l].beta = Tensor::detached(Matrix::Zero(1, n));
                bn_[l].run_mean = Matrix::Zero(1, n);
                bn_[l].run_var = Matrix::Ones(1, n);
            }
        }
    }

    FeedforwardNet(const FeedforwardNet& other) { deep_copy_from(other); }
    FeedforwardNet& operator=(const FeedforwardNet& other) {
        if (this != &other) deep_copy_from(other);
        return *this;
    }
    FeedforwardNet(FeedforwardNet&&) = default;
    FeedforwardNet& operator=(FeedforwardNet&&) = default;

    const std::vector<int>& sizes() const { return sizes_; }
    int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
    int input_dim() const { return sizes_.front(); }
    int output_dim() const { return sizes_.back(); }
    bool batch_norm() const { return batch_norm_; }
    double leaky_slope() const { return slope_; }
    double bn_eps() const { return bn_eps_; }
    double bn_momentum() const { return bn_momentum_; }
    NetMode mode() const { return mode_; }
    void set_mode(NetMode m) { mode_ = m; }

    std::vector<BatchNormLayer>& bn_layers() { return bn_; }
    const std::vector<BatchNormLayer>& bn_layers() const { return bn_; }

    /// He initialization: W ~ N(0, 2/fan_in), biases zero, batch-norm scale 1
    /// and shift 0, running statistics reset to (0, 1). Draw order is fixed:
    /// layer by layer, weight entries in row-major order.
    void he_init(RngStream& rng) {
        for (int l = 0; l < num_layers(); ++l) {
            Matrix& w = weights_[l].raw();
            const double sd = std::sqrt(2.0 / static_cast<double>(sizes_[l]));
            for (long r = 0; r < w.rows(); ++r)
                for (long c = 0; c < w.cols(); ++c) w(r, c) = sd * rng.normal();
            biases_[l].raw().setZero();
        }
        for (auto& layer : bn_) {
            layer.gamma.raw().setOnes();
            layer.beta.raw().setZero();
            layer.run_mean.setZero();
            layer.run_var.setOnes();
        }
    }

    /// Trainable parameter blocks in fixed declaration order.
    std::vector<ParamBlock> parameters() {
        std::vector<ParamBlock> blocks;
        for (int l = 0; l < num_layers(); ++l) {
            const std::string suffix = std::to_string(l + 1);
            blocks.push_back({"W" + suffix, &weights_[l]});
            blocks.push_back({"b" + suffix, &biases_[l]});
            if (batch_norm_ && l + 1 < num_layers()) {
                blocks.push_back({"bn" + suffix + "_gamma", &bn_[l].gamma});
                blocks.push_back({"bn" + suffix + "_beta", &bn_[l].beta});
            }
        }
        return blocks;
    }

    /// Read-only named views of the trainable blocks, in parameters() order.
    std::vector<std::pair<std::string, const Matrix*>> named_values() const {
        std::vector<std::pair<std::string, const Matrix*>> out;
        for (int l = 0; l < num_layers(); ++l) {
            const std::string suffix = std::to_string(l + 1);
            out.emplace_back("W" + suffix, &weights_[static_cast<std::size_t>(l)].value());
            out.emplace_back("b" + suffix, &biases_[static_cast<std::size_t>(l)].value());
            if (batch_norm_ && l + 1 < num_layers()) {
                out.emplace_back("bn" + suffix + "_gamma",
                                 &bn_[static_cast<std::size_t>(l)].gamma.value());
                out.emplace_back("bn" + suffix + "_beta",
                                 &bn_[static_cast<std::size_t>(l)].beta.value());
            }
        }
        return out;
    }

    long trainable_param_count() const {
        long n = 0;
        for (const auto& b : named_values()) n += b.second->size();
        return n;
    }

    /// Stored count including the frozen running statistics: the closed form
    /// sum_l n_l (n_{l-1}+1) plus 4*n per batch-norm hidden layer.
    long stored_param_count() const {
        long n = 0;
        for (std::size_t l = 1; l < sizes_.size(); ++l)
            n += static_cast<long>(sizes_[l]) * (sizes_[l - 1] + 1);
        if (batch_norm_)
            for (std::size_t l = 1; l + 1 < sizes_.size(); ++l) n += 4L * sizes_[l];
        return n;
    }

    /// Nominal count from the sizing rule (n0+1)*nbar + (nbar+1)*nbar*(L-1)
    /// + (nbar+1)*nL, with L the number of affine maps and nbar the first
    /// hidden width. Over-counts hidden-to-hidden transitions by one layer;
    /// surfaced for diagnostics next to the stored count.
    static long nominal_param_count(const std::vector<int>& sizes) {
        if (sizes.size() < 3) return 0;
        const long n0 = sizes.front();
        const long nbar = sizes[1];
        const long nl = sizes.back();
        const long maps = static_cast<long>(sizes.size()) - 1;
        return (n0 + 1) * nbar + (nbar + 1) * nbar * (maps - 1) + (nbar + 1) * nl;
    }

    /// Binds every trainable block to the tape. Called by forward(); safe to
    /// call once per tape-clear cycle.
    void place_on_tape(Tape& tape) {
        for (auto& b : parameters()) bind_leaf(tape, *b.tensor);
    }

    /// Records the forward pass on the tape. One forward per net per
    /// tape-clear cycle; rebinding happens internally.
    Tensor forward(Tape& tape, const Tensor& x) {
        if (x.value().cols() != input_dim())
            throw std::invalid_argument("forward: input width does not match network");
        place_on_tape(tape);
        Tensor a = (x.on_tape() && x.tape == &tape) ? x : constant(tape, x.value());
        for (int l = 0; l < num_layers(); ++l) {
            a = affine(a, weights_[l], biases_[l]);
            if (l + 1 == num_layers()) break;
            if (batch_norm_) {
                BatchNormLayer& bn = bn_[l];
                if (mode_ == NetMode::Training) {
                    Matrix bmean, bvar;
                    int id = tape.make_batchnorm_train(a.node, bn.gamma.node, bn.beta.node,
                                                       bn_eps_, &bmean, &bvar);
                    bn.run_mean = bn_momentum_ * bn.run_mean + (1.0 - bn_momentum_) * bmean;
                    bn.run_var = bn_momentum_ * bn.run_var + (1.0 - bn_momentum_) * bvar;
                    a = detail::wrap(&tape, id, a.shape);
                } else {
                    int id = tape.make_batchnorm_infer(a.node, bn.gamma.value(), bn.beta.value(),
                                                       bn.run_mean, bn.run_var, bn_eps_);
                    a = detail::wrap(&tape, id, a.shape);
                }
            }
            a = leaky_relu(a, slope_);
        }
        return a;
    }

    /// Inference evaluation with frozen statistics; no tape, no allocation
    /// beyond the caller's scratch. Repeated calls on the same input are
    /// bit-identical.
    void evaluate(const Matrix& x, Matrix& out, EvalScratch& ws) const {
        if (x.cols() != input_dim())
            throw std::invalid_argument("evaluate: input width does not match network");
        const int maps = num_layers();
        const Matrix* cur = &x;
        for (int l = 0; l < maps; ++l) {
            Matrix& dst = (l + 1 == maps) ? out : ((l & 1) ? ws.b : ws.a);
            detail::affine_forward(dst, *cur, weights_[l].value(), biases_[l].value());
            if (l + 1 == maps) break;
            if (batch_norm_) {
                const BatchNormLayer& bn = bn_[l];
                detail::batchnorm_infer_scale(ws.scale, ws.offset, bn.gamma.value(),
                                              bn.beta.value(), bn.run_mean, bn.run_var, bn_eps_);
                dst.array().rowwise() *= ws.scale.row(0).array();
                dst.rowwise() += ws.offset.row(0);
            }
            dst = dst.cwiseMax(slope_ * dst);
            cur = &dst;
        }
    }

    Matrix evaluate(const Matrix& x) const {
        EvalScratch ws;
        Matrix out;
        evaluate(x, out, ws);
        return out;
    }

private:
    void deep_copy_from(const FeedforwardNet& other) {
        sizes_ = other.sizes_;
        batch_norm_ = other.batch_norm_;
        slope_ = other.slope_;
        bn_eps_ = other.bn_eps_;
        bn_momentum_ = other.bn_momentum_;
        mode_ = other.mode_;
        auto clone = [](const Tensor& t) {
            Tensor c = Tensor::detached(Matrix(t.value()));
            c.shape = t.shape;
            return c;
        };
        weights_.clear();
        biases_.clear();
        bn_.clear();
        for (const auto& w : other.weights_) weights_.push_back(clone(w));
        for (const auto& b : other.biases_) biases_.push_back(clone(b));
        for (const auto& layer : other.bn_) {
            BatchNormLayer l;
            l.gamma = clone(layer.gamma);
            l.beta = clone(layer.beta);
            l.run_mean = layer.run_mean;
            l.run_var = layer.run_var;
            bn_.push_back(std::move(l));
        }
    }

    std::vector<int> sizes_;
    bool batch_norm_ = true;
    double slope_ = 0.01;
    double bn_eps_ = 1e-5;
    double bn_momentum_ = 0.99;
    NetMode mode_ = NetMode::Training;
    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
    std::vector<BatchNormLayer> bn_;
};

}  // namespace spde
