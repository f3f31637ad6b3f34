#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>

#include "ssgd/errors.hpp"
#include "ssgd/nnet.hpp"
#include "ssgd/params.hpp"
#include "ssgd/perturb.hpp"
#include "ssgd/rng.hpp"

namespace ssgd {

/// Optimizer hyper-parameters. lr may be 0 (a no-op step); negative values
/// are rejected at step time. Momentum and Adam are mutually exclusive
/// filters over the (averaged) gradient.
struct Hyper {
    double lr = 0.1;
    double momentum = 0.0;     // [0, 1)
    double weight_decay = 0.0; // >= 0, applied to master weights
    bool use_adam = false;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
};

/// Per-run optimizer state: step counter plus lazily created buffers kept
/// aligned to the ParamSet they filter.
struct OptState {
    std::uint64_t step = 0;
    ParamSet velocity;   // momentum buffer
    ParamSet adam_m;     // first-moment buffer
    ParamSet adam_v;     // second-moment buffer
};

/// Cumulative forward/backward pass counts (training compute only).
struct PassCounter {
    std::uint64_t forward = 0;
    std::uint64_t backward = 0;

    void add(std::uint64_t fwd, std::uint64_t bwd) {
        forward += fwd;
        backward += bwd;
    }
};

/// One loss/gradient evaluation of an objective at given parameters. The
/// rng argument feeds any stochastic layers (dropout/dropconnect masks).
struct GradEval {
    double loss;
    Gradients grads;
};

using Objective = std::function<GradEval(const ParamSet&, RngState&)>;

/// Adapts a model+batch to the generic Objective interface (train mode, so
/// stochastic layers draw their masks from the per-pass rng stream).
inline Objective make_objective(const Model& model, const Batch& batch) {
    return [&model, &batch](const ParamSet& p, RngState& rng) -> GradEval {
        auto res = grad(model, p, batch, Mode::train, rng);
        return {res.loss, std::move(res.grads)};
    };
}

namespace detail {

inline void check_hyper(const Hyper& hyper) {
    if (hyper.lr < 0.0) throw InvalidArgument("step: negative learning rate");
    if (hyper.momentum < 0.0 || hyper.momentum >= 1.0) {
        throw InvalidArgument("step: momentum must be in [0, 1)");
    }
    if (hyper.weight_decay < 0.0) throw InvalidArgument("step: negative weight decay");
}

/// Applies weight decay, the momentum/Adam filter, and the parameter write.
/// `grads` is the (averaged) raw gradient; params are the master weights.
inline void apply_update(ParamSet& params, OptState& state, const Hyper& hyper,
                         Gradients grads) {
    if (!all_finite(grads)) throw NumericError("step: non-finite gradient");
    if (hyper.weight_decay != 0.0) {
        add_scaled_in_place(grads, params, hyper.weight_decay);
    }
    state.step += 1;
    if (hyper.use_adam) {
        if (state.adam_m.group_count() == 0) {
            state.adam_m = params.zeros_like();
            state.adam_v = params.zeros_like();
        }
        require_aligned(state.adam_m, params, "step: adam buffers");
        const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
        const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
        for (std::size_t gi = 0; gi < params.group_count(); ++gi) {
            auto& w = params.group(gi).values;
            auto& m = state.adam_m.group(gi).values;
            auto& v = state.adam_v.group(gi).values;
            const auto& g = grads.group(gi).values;
            for (std::size_t j = 0; j < w.size(); ++j) {
                m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
                v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                w[j] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.adam_eps);
            }
        }
    } else {
        if (state.velocity.group_count() == 0) {
            state.velocity = params.zeros_like();
        }
        require_aligned(state.velocity, params, "step: momentum buffer");
        for (std::size_t gi = 0; gi < params.group_count(); ++gi) {
            auto& w = params.group(gi).values;
            auto& v = state.velocity.group(gi).values;
            const auto& g = grads.group(gi).values;
            for (std::size_t j = 0; j < w.size(); ++j) {
                v[j] = hyper.momentum * v[j] + g[j];
                w[j] -= hyper.lr * v[j];
            }
        }
    }
    if (!all_finite(params)) throw NumericError("step: parameters became non-finite");
}

/// Elementwise mean of two aligned gradient structures; exact when a == b.
inline Gradients mean2(const Gradients& a, const Gradients& b) {
    Gradients out = add_scaled(a, b, 1.0);
    for (auto& g : out) {
        for (auto& v : g.values.values()) v *= 0.5;
    }
    return out;
}

} // namespace detail

// Every step rule consumes exactly one split() from the caller's rng and
// derives its internal streams from that step base in a fixed order: first
// the noise stream, then one stream per gradient pass. Rules therefore
// leave the caller's rng in identical states, and a noisy rule at level 0
// replays sgd_step's gradient passes stream-for-stream.

/// Plain (optionally momentum/Adam-filtered) SGD. Passes: (1 fwd, 1 bwd).
inline double sgd_step(ParamSet& params, OptState& state, const Objective& objective,
                       const Hyper& hyper, PassCounter& counter, RngState& rng) {
    detail::check_hyper(hyper);
    RngState step_base = rng.split();
    RngState noise_rng = step_base.split(); // reserved; keeps pass streams aligned
    (void)noise_rng;
    RngState pass_rng = step_base.split();
    GradEval eval = objective(params, pass_rng);
    counter.add(1, 1);
    detail::apply_update(params, state, hyper, std::move(eval.grads));
    return eval.loss;
}

/// Single-sided weight-noise SGD: gradient at w+n, update applied to the
/// master weights. Passes: (1 fwd, 1 bwd).
inline double noise_sgd_step(ParamSet& params, OptState& state, const Objective& objective,
                             const Hyper& hyper, const NoiseSampler& sampler,
                             PassCounter& counter, RngState& rng) {
    detail::check_hyper(hyper);
    RngState step_base = rng.split();
    RngState noise_rng = step_base.split();
    RngState pass_rng = step_base.split();
    Noise n = sampler(params, noise_rng);
    ParamSet shifted = apply_single(params, n);
    GradEval eval = objective(shifted, pass_rng);
    counter.add(1, 1);
    detail::apply_update(params, state, hyper, std::move(eval.grads));
    return eval.loss;
}

/// Symmetric weight-noise SGD: one noise draw, gradients at w+n and w-n on
/// the same batch, update uses their elementwise mean. Passes: (2, 2).
inline double ssgd_step(ParamSet& params, OptState& state, const Objective& objective,
                        const Hyper& hyper, const NoiseSampler& sampler, PassCounter& counter,
                        RngState& rng) {
    detail::check_hyper(hyper);
    RngState step_base = rng.split();
    RngState noise_rng = step_base.split();
    RngState pass_plus = step_base.split();
    RngState pass_minus = step_base.split();
    Noise n = sampler(params, noise_rng);
    auto [plus, minus] = apply_symmetric(params, n);
    GradEval ep = objective(plus, pass_plus);
    GradEval em = objective(minus, pass_minus);
    counter.add(2, 2);
    detail::apply_update(params, state, hyper, detail::mean2(ep.grads, em.grads));
    return 0.5 * (ep.loss + em.loss);
}

/// Two independent symmetric pairs, mean of the four gradients (averaged
/// pairwise so the level-0 reduction stays exact). Passes: (4, 4).
inline double ssgd_x2_step(ParamSet& params, OptState& state, const Objective& objective,
                           const Hyper& hyper, const NoiseSampler& sampler,
                           PassCounter& counter, RngState& rng) {
    detail::check_hyper(hyper);
    RngState step_base = rng.split();
    RngState noise_rng = step_base.split();
    RngState pass_1p = step_base.split();
    RngState pass_1m = step_base.split();
    RngState pass_2p = step_base.split();
    RngState pass_2m = step_base.split();
    Noise n1 = sampler(params, noise_rng);
    Noise n2 = sampler(params, noise_rng);
    auto [p1, m1] = apply_symmetric(params, n1);
    auto [p2, m2] = apply_symmetric(params, n2);
    GradEval e1p = objective(p1, pass_1p);
    GradEval e1m = objective(m1, pass_1m);
    GradEval e2p = objective(p2, pass_2p);
    GradEval e2m = objective(m2, pass_2m);
    counter.add(4, 4);
    detail::apply_update(
        params, state, hyper,
        detail::mean2(detail::mean2(e1p.grads, e1m.grads), detail::mean2(e2p.grads, e2m.grads)));
    return 0.25 * (e1p.loss + e1m.loss + e2p.loss + e2m.loss);
}

/// SmoothOut baseline: single-sided noise whose per-group magnitude is
/// uniform on (0, level*||w_g||). Passes: (1, 1).
inline double smoothout_step(ParamSet& params, OptState& state, const Objective& objective,
                             const Hyper& hyper, const NoiseSampler& sampler,
                             PassCounter& counter, RngState& rng) {
    return noise_sgd_step(params, state, objective, hyper, sampler, counter, rng);
}

// Model-facing overloads: adapt (model, batch) to the generic objective and
// build the sampler from the NoiseSpec. smoothout_step forces the
// smoothout_uniform family; the others sample the NoiseSpec as given.

inline double sgd_step(ParamSet& params, OptState& state, const Model& model,
                       const Batch& batch, const Hyper& hyper, PassCounter& counter,
                       RngState& rng) {
    return sgd_step(params, state, make_objective(model, batch), hyper, counter, rng);
}

inline double noise_sgd_step(ParamSet& params, OptState& state, const Model& model,
                             const Batch& batch, const Hyper& hyper, const NoiseSpec& spec,
                             PassCounter& counter, RngState& rng) {
    return noise_sgd_step(params, state, make_objective(model, batch), hyper,
                          make_noise_sampler(spec), counter, rng);
}

inline double ssgd_step(ParamSet& params, OptState& state, const Model& model,
                        const Batch& batch, const Hyper& hyper, const NoiseSpec& spec,
                        PassCounter& counter, RngState& rng) {
    return ssgd_step(params, state, make_objective(model, batch), hyper,
                     make_noise_sampler(spec), counter, rng);
}

inline double ssgd_x2_step(ParamSet& params, OptState& state, const Model& model,
                           const Batch& batch, const Hyper& hyper, const NoiseSpec& spec,
                           PassCounter& counter, RngState& rng) {
    return ssgd_x2_step(params, state, make_objective(model, batch), hyper,
                        make_noise_sampler(spec), counter, rng);
}

inline double smoothout_step(ParamSet& params, OptState& state, const Model& model,
                             const Batch& batch, const Hyper& hyper, const NoiseSpec& spec,
                             PassCounter& counter, RngState& rng) {
    NoiseSpec uniform = spec;
    uniform.family = NoiseFamily::smoothout_uniform;
    return smoothout_step(params, state, make_objective(model, batch), hyper,
                          make_noise_sampler(uniform), counter, rng);
}

} // namespace ssgd
