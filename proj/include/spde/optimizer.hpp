#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "spde/errors.hpp"
#include "spde/network.hpp"
#include "spde/tensor.hpp"

namespace spde {

/// Adam moment estimates, one (m, v) pair per parameter block. The time step
/// is shared across blocks and advances once per adam_step call.
struct AdamState {
    std::vector<Matrix> m, v;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline AdamState make_adam_state(const std::vector<ParamBlock>& blocks, double beta1 = 0.9,
                                 double beta2 = 0.999, double eps = 1e-8) {
    AdamState s;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    s.m.reserve(blocks.size());
    s.v.reserve(blocks.size());
    for (const auto& b : blocks) {
        const Matrix& p = b.tensor->value();
        s.m.push_back(Matrix::Zero(p.rows(), p.cols()));
        s.v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
    return s;
}

/// One bias-corrected Adam update over all blocks:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - rate * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
/// Gradients must align with the blocks; non-finite entries raise a numeric
/// error naming the offending block.
inline void adam_step_ptrs(std::vector<ParamBlock>& blocks,
                           const std::vector<const Matrix*>& grads, AdamState& state,
                           double rate) {
    if (blocks.size() != grads.size() || blocks.size() != state.m.size())
        throw std::invalid_argument("adam_step: block/gradient/state counts differ");
    state.step += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const Matrix& g = *grads[i];
        Matrix& p = blocks[i].tensor->raw();
        if (g.rows() != p.rows() || g.cols() != p.cols())
            throw std::invalid_argument("adam_step: gradient extent differs from block " +
                                        blocks[i].name);
        if (!g.allFinite())
            throw NumericError("adam_step: non-finite gradient in block " + blocks[i].name);
        Matrix& m = state.m[i];
        Matrix& v = state.v[i];
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
        p.array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
    }
}

inline void adam_step(std::vector<ParamBlock>& blocks, const std::vector<Matrix>& grads,
                      AdamState& state, double rate) {
    std::vector<const Matrix*> ptrs(grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i) ptrs[i] = &grads[i];
    adam_step_ptrs(blocks, ptrs, state, rate);
}

/// Plateau-halving schedule: the rate is cut in half whenever the epoch loss
/// fails to improve on the best seen value for `patience` consecutive epochs.
/// The best value survives a halving; the stale counter resets.
struct LrSchedule {
    double initial_rate = 0.01;
    double rate = 0.01;
    int patience = 10;
    double best_loss = std::numeric_limits<double>::infinity();
    int stale_epochs = 0;

    LrSchedule() = default;
    LrSchedule(double rate0, int patience_epochs)
        : initial_rate(rate0), rate(rate0), patience(patience_epochs) {
        if (!(rate0 > 0.0)) throw std::invalid_argument("learning rate must be positive");
        if (patience_epochs < 1) throw std::invalid_argument("patience must be at least 1");
    }

    void update(double epoch_loss) {
        if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
            stale_epochs = 0;
            return;
        }
        if (++stale_epochs >= patience) {
            rate *= 0.5;
            stale_epochs = 0;
        }
    }
};

inline LrSchedule schedule_update(LrSchedule sched, double epoch_loss) {
    sched.update(epoch_loss);
    return sched;
}

}  // namespace spde
