#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ssgd/errors.hpp"
#include "ssgd/tensor.hpp"

namespace ssgd {

enum class ParamKind : std::uint8_t { dense = 0, conv = 1, bias = 2 };

inline const char* param_kind_name(ParamKind k) {
    switch (k) {
        case ParamKind::dense: return "dense";
        case ParamKind::conv: return "conv";
        case ParamKind::bias: return "bias";
    }
    return "?";
}

struct ParamGroup {
    std::string name;
    ParamKind kind;
    Tensor values;
};

/// Ordered, named, kind-tagged parameter groups. The same structure carries
/// weights, gradients, noise, and optimizer moment buffers; "aligned" means
/// identical group count, names, kinds, and shapes.
class ParamSet {
public:
    ParamSet() = default;

    void add(std::string name, ParamKind kind, Tensor values) {
        if (names_.contains(name)) {
            throw InvalidArgument("param group name not unique: " + name);
        }
        names_.insert(name);
        groups_.push_back({std::move(name), kind, std::move(values)});
    }

    std::size_t group_count() const { return groups_.size(); }
    bool empty() const { return groups_.empty(); }

    ParamGroup& group(std::size_t i) { return groups_[i]; }
    const ParamGroup& group(std::size_t i) const { return groups_[i]; }

    auto begin() { return groups_.begin(); }
    auto end() { return groups_.end(); }
    auto begin() const { return groups_.begin(); }
    auto end() const { return groups_.end(); }

    const ParamGroup* find(const std::string& name) const {
        for (const auto& g : groups_)
            if (g.name == name) return &g;
        return nullptr;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& g : groups_) n += g.values.size();
        return n;
    }

    /// Same structure, all values zero.
    ParamSet zeros_like() const {
        ParamSet out;
        for (const auto& g : groups_) out.add(g.name, g.kind, Tensor::zeros(g.values.shape()));
        return out;
    }

    bool aligned_with(const ParamSet& other) const {
        if (groups_.size() != other.groups_.size()) return false;
        for (std::size_t i = 0; i < groups_.size(); ++i) {
            if (groups_[i].name != other.groups_[i].name) return false;
            if (groups_[i].kind != other.groups_[i].kind) return false;
            if (!groups_[i].values.same_shape(other.groups_[i].values)) return false;
        }
        return true;
    }

    /// All parameters concatenated in group order.
    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(param_count());
        for (const auto& g : groups_)
            out.insert(out.end(), g.values.values().begin(), g.values.values().end());
        return out;
    }

    /// Inverse of flatten(); the vector length must match param_count().
    void unflatten(const std::vector<double>& flat) {
        if (flat.size() != param_count()) {
            throw ShapeError("unflatten: got " + std::to_string(flat.size()) +
                             " values for " + std::to_string(param_count()) + " parameters");
        }
        std::size_t off = 0;
        for (auto& g : groups_) {
            std::copy(flat.begin() + off, flat.begin() + off + g.values.size(),
                      g.values.values().begin());
            off += g.values.size();
        }
    }

private:
    std::vector<ParamGroup> groups_;
    std::unordered_set<std::string> names_;
};

/// Gradients, noise, and moment buffers share the ParamSet structure.
using Gradients = ParamSet;
using Noise = ParamSet;

inline void require_aligned(const ParamSet& a, const ParamSet& b, const char* what) {
    if (!a.aligned_with(b)) {
        throw ShapeError(std::string(what) + ": structures are not aligned");
    }
}

/// a += c * b, groupwise.
inline void add_scaled_in_place(ParamSet& a, const ParamSet& b, double c) {
    require_aligned(a, b, "add_scaled");
    for (std::size_t i = 0; i < a.group_count(); ++i) {
        auto& av = a.group(i).values;
        const auto& bv = b.group(i).values;
        for (std::size_t j = 0; j < av.size(); ++j) av[j] += c * bv[j];
    }
}

inline ParamSet add_scaled(const ParamSet& a, const ParamSet& b, double c) {
    ParamSet out = a;
    add_scaled_in_place(out, b, c);
    return out;
}

inline double l2_norm(const ParamSet& p) {
    double s = 0.0;
    for (const auto& g : p)
        for (double v : g.values.values()) s += v * v;
    return std::sqrt(s);
}

inline bool all_finite(const ParamSet& p) {
    for (const auto& g : p)
        for (double v : g.values.values())
            if (!std::isfinite(v)) return false;
    return true;
}

} // namespace ssgd
