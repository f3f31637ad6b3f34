#pragma once

#include <functional>
#include <string>
#include <utility>

#include "ssgd/errors.hpp"
#include "ssgd/params.hpp"
#include "ssgd/rng.hpp"
#include "ssgd/tensor.hpp"

namespace ssgd {

enum class NoiseFamily : std::uint8_t {
    fixed_magnitude,   // per group: ||n_g|| = level * ||w_g||
    smoothout_uniform, // per group: ||n_g|| ~ Uniform(0, level * ||w_g||)
};

enum class NoiseTarget : std::uint8_t { all, conv_only, dense_only };

inline const char* noise_family_name(NoiseFamily f) {
    return f == NoiseFamily::fixed_magnitude ? "fixed_magnitude" : "smoothout_uniform";
}

inline const char* noise_target_name(NoiseTarget t) {
    switch (t) {
        case NoiseTarget::all: return "all";
        case NoiseTarget::conv_only: return "conv_only";
        default: return "dense_only";
    }
}

/// How to generate weight noise: level in sigma units (sigma = the targeted
/// group's weight L2 norm), a magnitude family, a layer-kind filter, and a
/// bias exclusion flag (biases are skipped by default).
struct NoiseSpec {
    double level = 0.0;
    NoiseFamily family = NoiseFamily::fixed_magnitude;
    NoiseTarget target = NoiseTarget::all;
    bool exclude_bias = true;
};

/// True when the NoiseSpec injects noise into this group.
inline bool targets_group(const NoiseSpec& spec, const ParamGroup& g) {
    switch (spec.target) {
        case NoiseTarget::all:
            return g.kind != ParamKind::bias || !spec.exclude_bias;
        case NoiseTarget::conv_only:
            return g.kind == ParamKind::conv;
        case NoiseTarget::dense_only:
            return g.kind == ParamKind::dense;
    }
    return false;
}

/// Draws one noise structure aligned to params. Per targeted group: a
/// Gaussian direction normalized to unit L2, scaled to the family's
/// magnitude (consumes, in order, the direction draws then — for
/// smoothout_uniform — one uniform draw). Non-targeted groups and the
/// level=0 case are exactly zero.
inline Noise sample_noise(const NoiseSpec& spec, const ParamSet& params, RngState& rng) {
    if (params.group_count() == 0) throw InvalidArgument("sample_noise: empty ParamSet");
    if (spec.level < 0.0) {
        throw InvalidArgument("sample_noise: negative noise level " + std::to_string(spec.level));
    }
    Noise noise = params.zeros_like();
    if (spec.level == 0.0) return noise;

    for (std::size_t i = 0; i < params.group_count(); ++i) {
        const ParamGroup& g = params.group(i);
        if (!targets_group(spec, g)) continue;
        const double sigma = l2_norm(g.values);
        if (sigma == 0.0 && spec.family == NoiseFamily::fixed_magnitude) {
            throw DegenerateError("sample_noise: group '" + g.name +
                                  "' has zero weight norm; level*||w|| gives no magnitude");
        }
        Tensor direction = gaussian(rng, g.values.size());
        const double dir_norm = l2_norm(direction);
        if (dir_norm == 0.0) {
            throw NumericError("sample_noise: degenerate zero-length direction draw");
        }
        double magnitude = spec.level * sigma;
        if (spec.family == NoiseFamily::smoothout_uniform) {
            magnitude *= rng.next_double(); // m ~ Uniform(0, level*sigma)
        }
        noise.group(i).values =
            Tensor(g.values.shape(), scale(direction, magnitude / dir_norm).values());
    }
    return noise;
}

/// (w+n, w-n): the two perturbed copies for one symmetric noise draw. The
/// midpoint of the pair recovers w to within 1 ulp per element (exact when
/// the noise is zero); IEEE-754 rounding of w+n and w-n makes a stronger
/// bit-level guarantee impossible in general.
inline std::pair<ParamSet, ParamSet> apply_symmetric(const ParamSet& params,
                                                     const Noise& noise) {
    require_aligned(params, noise, "apply_symmetric");
    return {add_scaled(params, noise, 1.0), add_scaled(params, noise, -1.0)};
}

/// w+n: single-sided perturbation.
inline ParamSet apply_single(const ParamSet& params, const Noise& noise) {
    require_aligned(params, noise, "apply_single");
    return add_scaled(params, noise, 1.0);
}

/// A reusable noise source for the optimizer layer; plain sample_noise
/// closed over a spec. Custom samplers (e.g. absolute-magnitude noise for
/// analytic toy objectives) satisfy the same signature.
using NoiseSampler = std::function<Noise(const ParamSet&, RngState&)>;

inline NoiseSampler make_noise_sampler(const NoiseSpec& spec) {
    return [spec](const ParamSet& params, RngState& rng) {
        return sample_noise(spec, params, rng);
    };
}

} // namespace ssgd
