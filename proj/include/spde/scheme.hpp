#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "spde/errors.hpp"
#include "spde/network.hpp"
#include "spde/optimizer.hpp"
#include "spde/paths.hpp"
#include "spde/problem.hpp"
#include "spde/rng.hpp"
#include "spde/tensor.hpp"
#include "spde/time_grid.hpp"

namespace spde {

/// Per-step optimization settings. The same settings drive every time step of
/// a backward sweep.
struct TrainConfig {
    int batch_size = 64;
    int epochs = 100;
    int iterations_per_epoch = 100;
    double initial_rate = 0.01;
    int patience = 10;
    int hidden_width = 11;
    int hidden_depth = 2;
    bool warm_start = false;
    int eval_samples = 10000;

    void validate() const {
        if (batch_size < 2) throw std::invalid_argument("batch size must be at least 2");
        if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
        if (iterations_per_epoch < 1) throw std::invalid_argument("iterations per epoch must be at least 1");
        if (!(initial_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
        if (patience < 1) throw std::invalid_argument("patience must be at least 1");
        if (hidden_width < 1) throw std::invalid_argument("hidden width must be at least 1");
        if (hidden_depth < 1) throw std::invalid_argument("hidden depth must be at least 1");
        if (eval_samples < 1) throw std::invalid_argument("eval samples must be at least 1");
    }

    std::vector<int> u_sizes(int d, int k) const {
        std::vector<int> s{d};
        for (int i = 0; i < hidden_depth; ++i) s.push_back(hidden_width);
        s.push_back(k);
        return s;
    }

    std::vector<int> v_sizes(int d, int k) const {
        std::vector<int> s{d};
        for (int i = 0; i < hidden_depth; ++i) s.push_back(hidden_width);
        s.push_back(k * d);
        return s;
    }
};

/// Euler prediction through the degenerate noise term:
///   psi = u_next + g_val . db,
/// contracting g_val of logical shape [B,k,l] with the increment db in R^l.
/// Affine in db by construction.
inline Matrix predictor(const Matrix& u_next, const Matrix& g_val, const Vector& db) {
    const long rows = u_next.rows();
    const long k = u_next.cols();
    const long l = db.size();
    if (g_val.rows() != rows || g_val.cols() != k * l)
        throw std::invalid_argument("predictor: noise term extents do not match");
    Matrix psi = u_next;
    for (long q = 0; q < k; ++q) psi.col(q) += g_val.middleCols(q * l, l) * db;
    return psi;
}

/// Training objective of one time step:
///   L = mean_batch | psi - v . dw + f_val dt - u |^2,
/// with v of logical shape [B,k,d] contracted against dw in R^{B x d}.
/// Raises a numeric error if the loss is not finite.
inline Tensor step_loss(const Matrix& psi, const Tensor& u, const Tensor& v,
                        const Tensor* f_val, double dt, const Matrix& dw) {
    const long rows = psi.rows();
    const long k = psi.cols();
    if (u.value().rows() != rows || u.value().cols() != k)
        throw std::invalid_argument("step_loss: u extents do not match psi");
    if (dw.rows() != rows) throw std::invalid_argument("step_loss: dw row count differs");
    if (v.value().rows() != rows || v.value().cols() != k * dw.cols())
        throw std::invalid_argument("step_loss: v extents do not match");
    Tape* tape = detail::common_tape({&u, &v});
    Tensor psi_t = tape ? constant(*tape, psi) : Tensor::detached(Matrix(psi));
    Tensor dw_t = tape ? constant(*tape, dw) : Tensor::detached(Matrix(dw));
    Tensor r = sub(psi_t, contract_last(v, dw_t));
    if (f_val) {
        if (f_val->value().rows() != rows || f_val->value().cols() != k)
            throw std::invalid_argument("step_loss: f extents do not match");
        r = add_scaled(r, *f_val, dt);
    }
    r = sub(r, u);
    Tensor loss = mean_squared_norm(r);
    if (!std::isfinite(loss.scalar())) throw NumericError("step loss is not finite");
    return loss;
}

inline Tensor step_loss(const Matrix& psi, const Tensor& u, const Tensor& v,
                        const Tensor& f_val, double dt, const Matrix& dw) {
    return step_loss(psi, u, v, &f_val, dt, dw);
}

inline Tensor step_loss(const Matrix& psi, const Tensor& u, const Tensor& v, double dt,
                        const Matrix& dw) {
    return step_loss(psi, u, v, nullptr, dt, dw);
}

/// One mini-batch of the step-i regression data.
struct StepBatch {
    Matrix x_i;     // [B,d] states at t_i
    Matrix x_next;  // [B,d] states at t_{i+1}
    Matrix dw;      // [B,d] driving increments over [t_i, t_{i+1}]
};

/// Produces fresh batches; owns its randomness.
using BatchSupplier = std::function<void(int count, StepBatch& out)>;

/// Evaluates the value approximation at the next time node.
using ValueEval = std::function<void(const Matrix& x, Matrix& out)>;

/// Progress hook: (step, epoch, epoch mean loss, learning rate after update).
using ProgressFn = std::function<void(int step, int epoch, double loss, double rate)>;

/// Value/gradient network pair of one time step.
struct StepNets {
    FeedforwardNet u, v;
};

struct TrainStepResult {
    StepNets nets;
    double final_loss = 0.0;            // mean loss over the last epoch
    std::vector<double> epoch_losses;
    std::vector<double> rates;          // learning rate after each epoch
};

/// Trains the step-i pair (U_i, V_i) by stochastic minimization of the step
/// loss. The supplier provides fresh mini-batches; u_next_eval the values at
/// t_{i+1}; db the auxiliary increment of the step. Initialization draws come
/// from init_rng (U first, then V) unless warm networks are given. Networks
/// are returned frozen in inference mode.
inline TrainStepResult train_step(const ProblemSpec& p, const TimeGrid& grid, int step,
                                  const Vector& db, const ValueEval& u_next_eval,
                                  const BatchSupplier& supplier, const TrainConfig& cfg,
                                  RngStream init_rng, const StepNets* warm = nullptr,
                                  const ProgressFn& progress = nullptr) {
    cfg.validate();
    if (step < 0 || step >= grid.num_steps())
        throw std::invalid_argument("train_step: step index out of range");
    if (db.size() != p.l) throw std::invalid_argument("train_step: db extent differs from l");

    const double t_i = grid.nodes[static_cast<std::size_t>(step)];
    const double t_next = grid.nodes[static_cast<std::size_t>(step) + 1];
    const double dt = grid.steps[static_cast<std::size_t>(step)];

    TrainStepResult result;
    if (warm) {
        result.nets = *warm;
    } else {
        result.nets.u = FeedforwardNet(cfg.u_sizes(p.d, p.k));
        result.nets.v = FeedforwardNet(cfg.v_sizes(p.d, p.k));
        result.nets.u.he_init(init_rng);
        result.nets.v.he_init(init_rng);
    }
    result.nets.u.set_mode(NetMode::Training);
    result.nets.v.set_mode(NetMode::Training);

    std::vector<ParamBlock> blocks = result.nets.u.parameters();
    for (auto& b : result.nets.v.parameters()) blocks.push_back(b);
    AdamState adam = make_adam_state(blocks);
    LrSchedule sched(cfg.initial_rate, cfg.patience);

    std::vector<Matrix> zero_grads;
    zero_grads.reserve(blocks.size());
    for (const auto& b : blocks) {
        const Matrix& v = b.tensor->value();
        zero_grads.push_back(Matrix::Zero(v.rows(), v.cols()));
    }

    Tape tape;
    StepBatch batch;
    Matrix u_next, psi;
    std::vector<const Matrix*> grad_ptrs(blocks.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double acc = 0.0;
        for (int iter = 0; iter < cfg.iterations_per_epoch; ++iter) {
            try {
                supplier(cfg.batch_size, batch);
                u_next_eval(batch.x_next, u_next);
                if (p.g) {
                    Tensor g_val = p.g(t_next, batch.x_next, Tensor::detached(Matrix(u_next)));
                    psi = predictor(u_next, g_val.value(), db);
                } else {
                    psi = u_next;
                }
                tape.clear();
                Tensor x_in = constant(tape, batch.x_i);
                Tensor u = result.nets.u.forward(tape, x_in);
                Tensor v = result.nets.v.forward(tape, x_in);
                Tensor loss;
                if (p.f) {
                    Tensor f_val = p.f(t_i, batch.x_i, u, v);
                    loss = step_loss(psi, u, v, f_val, dt, batch.dw);
                } else {
                    loss = step_loss(psi, u, v, dt, batch.dw);
                }
                acc += loss.scalar();
                tape.backward(loss.node);
                for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
                    const Matrix& g = tape.grad_of(blocks[bi].tensor->node);
                    grad_ptrs[bi] = g.size() ? &g : &zero_grads[bi];
                }
                adam_step_ptrs(blocks, grad_ptrs, adam, sched.rate);
            } catch (const TrainingError&) {
                throw;
            } catch (const NumericError& e) {
                throw TrainingError(std::string(e.what()) + " (step " + std::to_string(step) +
                                        ", epoch " + std::to_string(epoch) + ", iteration " +
                                        std::to_string(iter) + ")",
                                    step, epoch, iter);
            }
        }
        const double epoch_loss = acc / static_cast<double>(cfg.iterations_per_epoch);
        if (!std::isfinite(epoch_loss))
            throw TrainingError("epoch loss is not finite (step " + std::to_string(step) + ")",
                                step, epoch, 0);
        sched.update(epoch_loss);
        result.epoch_losses.push_back(epoch_loss);
        result.rates.push_back(sched.rate);
        if (progress) progress(step, epoch, epoch_loss, sched.rate);
    }
    result.final_loss = result.epoch_losses.back();
    // the tape dies with this frame; the networks must not keep referring to it
    for (auto& b : blocks) b.tensor->unbind();
    result.nets.u.set_mode(NetMode::Inference);
    result.nets.v.set_mode(NetMode::Inference);
    return result;
}

/// Trained backward sweep: the networks of every time step together with the
/// inputs that produced them. Networks are stored in inference mode.
struct SchemeSolution {
    ProblemSpec problem;
    TimeGrid grid;
    Matrix b;  // [N,l] auxiliary increments
    std::vector<StepNets> nets;
    std::vector<double> step_losses;
    std::vector<std::vector<double>> epoch_losses;
};

struct SolveOptions {
    std::uint64_t seed = 1;
    /// Distinguishes independent optimization runs over the same auxiliary
    /// path: reseeds the W / initialization / batch streams, never B.
    std::uint64_t run_salt = 0;
    ProgressFn progress;
};

namespace detail {

/// Draws a [rows, cols] matrix of N(0, sd^2) entries in row-major order.
inline void fill_normal(RngStream& rng, Matrix& m, long rows, long cols, double sd) {
    m.resize(rows, cols);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) m(r, c) = sd * rng.normal();
}

}  // namespace detail

/// Standard batch supplier: draws fresh initial conditions and increments and
/// simulates forward from time zero to t_{step+1} on every call.
inline BatchSupplier make_forward_supplier(const ProblemSpec& p, const TimeGrid& grid, int step,
                                           RngStream x0_rng, RngStream w_rng) {
    struct State {
        RngStream x0_rng, w_rng;
        Matrix cur, next, dw;
        EulerScratch ws;
        State(RngStream a, RngStream b) : x0_rng(a), w_rng(b) {}
    };
    auto st = std::make_shared<State>(x0_rng, w_rng);
    return [&p, &grid, step, st](int count, StepBatch& out) {
        st->cur.resize(count, p.d);
        p.sample_x0(st->x0_rng, st->cur);
        for (int j = 0; j < step; ++j) {
            detail::fill_normal(st->w_rng, st->dw, count, p.d,
                                std::sqrt(grid.steps[static_cast<std::size_t>(j)]));
            euler_step(p, grid.nodes[static_cast<std::size_t>(j)],
                       grid.steps[static_cast<std::size_t>(j)], st->cur, st->dw, st->next,
                       st->ws, j);
            st->cur.swap(st->next);
        }
        detail::fill_normal(st->w_rng, out.dw, count, p.d,
                            std::sqrt(grid.steps[static_cast<std::size_t>(step)]));
        out.x_i = st->cur;
        euler_step(p, grid.nodes[static_cast<std::size_t>(step)],
                   grid.steps[static_cast<std::size_t>(step)], out.x_i, out.dw, out.x_next,
                   st->ws, step);
    };
}

/// Backward sweep i = N-1, ..., 0. Terminal values are exact: step N-1 trains
/// against h directly; earlier steps train against the frozen step-(i+1) value
/// network. Training step i never touches the networks of later steps.
inline SchemeSolution solve(const ProblemSpec& p, const TimeGrid& grid, Matrix b,
                            const TrainConfig& cfg, const SolveOptions& opt = {}) {
    p.validate();
    cfg.validate();
    const int n = grid.num_steps();
    if (b.rows() != n || b.cols() != p.l)
        throw std::invalid_argument("solve: auxiliary path extents do not match grid");

    SchemeSolution sol;
    sol.problem = p;
    sol.grid = grid;
    sol.b = std::move(b);
    sol.nets.resize(static_cast<std::size_t>(n));
    sol.step_losses.resize(static_cast<std::size_t>(n));
    sol.epoch_losses.resize(static_cast<std::size_t>(n));

    StreamFactory fac(opt.seed);
    EvalScratch eval_ws;

    for (int i = n - 1; i >= 0; --i) {
        const auto ui = static_cast<std::uint64_t>(i);
        RngStream x0_rng = fac.stream(Stream::Shuffle, {opt.run_salt, ui});
        RngStream w_rng = fac.stream(Stream::W, {opt.run_salt, ui});
        RngStream init_rng = fac.stream(Stream::Init, {opt.run_salt, ui});

        ValueEval u_next_eval;
        if (i == n - 1) {
            u_next_eval = [&p](const Matrix& x, Matrix& out) { out = p.terminal(x); };
        } else {
            const FeedforwardNet& next_u = sol.nets[static_cast<std::size_t>(i) + 1].u;
            u_next_eval = [&next_u, &eval_ws](const Matrix& x, Matrix& out) {
                next_u.evaluate(x, out, eval_ws);
            };
        }

        const Vector db = sol.b.row(i).transpose();
        const StepNets* warm =
            (cfg.warm_start && i < n - 1) ? &sol.nets[static_cast<std::size_t>(i) + 1] : nullptr;
        TrainStepResult res =
            train_step(p, grid, i, db, u_next_eval, make_forward_supplier(p, grid, i, x0_rng, w_rng),
                       cfg, init_rng, warm, opt.progress);
        sol.nets[static_cast<std::size_t>(i)] = std::move(res.nets);
        sol.step_losses[static_cast<std::size_t>(i)] = res.final_loss;
        sol.epoch_losses[static_cast<std::size_t>(i)] = std::move(res.epoch_losses);
    }
    return sol;
}

/// Value approximation at node i: the trained network for i < N, the exact
/// terminal condition for i == N.
inline Matrix evaluate_solution(const SchemeSolution& sol, int i, const Matrix& x) {
    const int n = sol.grid.num_steps();
    if (i < 0 || i > n) throw std::invalid_argument("evaluate_solution: node index out of range");
    if (i == n) return sol.problem.terminal(x);
    return sol.nets[static_cast<std::size_t>(i)].u.evaluate(x);
}

}  // namespace spde
