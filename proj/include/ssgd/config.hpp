#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssgd/data.hpp"
#include "ssgd/errors.hpp"
#include "ssgd/nnet.hpp"
#include "ssgd/optim.hpp"
#include "ssgd/perturb.hpp"
#include "ssgd/schedule.hpp"

namespace ssgd {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Specs for the pieces a run needs to reconstruct
// ---------------------------------------------------------------------------

struct ModelSpec {
    Shape input_shape;
    std::vector<LayerSpec> layers;
};

struct DatasetSpec {
    // "blobs" | "spirals" | "idx" | "cifar_binary"
    std::string kind = "spirals";
    // synthetic parameters
    std::size_t n = 2000;
    std::size_t classes = 3;
    double noise_std = 0.15;
    std::uint64_t seed = 1;
    // loader paths
    std::string images_path;
    std::string labels_path;
    std::vector<std::string> cifar_paths;
};

struct ExperimentConfig {
    ModelSpec model;
    DatasetSpec dataset;
    std::size_t batch_size = 32;
    std::vector<std::uint64_t> seeds{0};
    Hyper hyper;
    LrSchedule lr_schedule = ConstantLr{0.1};
    std::string phases = "1"; // phase-schedule grammar
    NoiseSpec noise;
    std::string output_dir = "runs/out";
};

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

namespace detail {

inline const json& require_field(const json& j, const char* key, const char* where) {
    auto it = j.find(key);
    if (it == j.end()) {
        throw FormatError(std::string("config: missing '") + key + "' in " + where);
    }
    return *it;
}

} // namespace detail

inline json to_json(const LayerSpec& l) {
    switch (l.kind) {
        case LayerKind::dense:
            return {{"type", "dense"}, {"in", l.in}, {"out", l.out}};
        case LayerKind::conv2d:
            return {{"type", "conv2d"},   {"kh", l.kh},
                    {"kw", l.kw},         {"cin", l.cin},
                    {"cout", l.cout},     {"stride", l.stride},
                    {"padding", l.padding == Padding::same ? "same" : "valid"}};
        case LayerKind::relu: return {{"type", "relu"}};
        case LayerKind::flatten: return {{"type", "flatten"}};
        case LayerKind::mean_pool: return {{"type", "mean_pool"}, {"window", l.window}};
        case LayerKind::dropout: return {{"type", "dropout"}, {"p", l.p}};
        default: return {{"type", "dropconnect"}, {"p", l.p}};
    }
}

inline LayerSpec layer_from_json(const json& j) {
    const std::string type = detail::require_field(j, "type", "layer").get<std::string>();
    if (type == "dense") {
        return LayerSpec::dense(detail::require_field(j, "in", "dense layer").get<std::size_t>(),
                                detail::require_field(j, "out", "dense layer").get<std::size_t>());
    }
    if (type == "conv2d") {
        const auto padding =
            j.value("padding", std::string("valid")) == "same" ? Padding::same : Padding::valid;
        return LayerSpec::conv2d(
            detail::require_field(j, "kh", "conv2d layer").get<std::size_t>(),
            detail::require_field(j, "kw", "conv2d layer").get<std::size_t>(),
            detail::require_field(j, "cin", "conv2d layer").get<std::size_t>(),
            detail::require_field(j, "cout", "conv2d layer").get<std::size_t>(),
            j.value("stride", std::size_t{1}), padding);
    }
    if (type == "relu") return LayerSpec::relu();
    if (type == "flatten") return LayerSpec::flatten();
    if (type == "mean_pool") {
        return LayerSpec::mean_pool(
            detail::require_field(j, "window", "mean_pool layer").get<std::size_t>());
    }
    if (type == "dropout") {
        return LayerSpec::dropout(detail::require_field(j, "p", "dropout layer").get<double>());
    }
    if (type == "dropconnect") {
        return LayerSpec::dropconnect(
            detail::require_field(j, "p", "dropconnect layer").get<double>());
    }
    throw FormatError("config: unknown layer type '" + type + "'");
}

inline json to_json(const ModelSpec& m) {
    json layers = json::array();
    for (const auto& l : m.layers) layers.push_back(to_json(l));
    return {{"input_shape", m.input_shape}, {"layers", layers}};
}

inline ModelSpec model_from_json(const json& j) {
    ModelSpec m;
    m.input_shape =
        detail::require_field(j, "input_shape", "model").get<std::vector<std::size_t>>();
    for (const auto& l : detail::require_field(j, "layers", "model")) {
        m.layers.push_back(layer_from_json(l));
    }
    return m;
}

inline json to_json(const DatasetSpec& d) {
    json j{{"kind", d.kind}};
    if (d.kind == "blobs" || d.kind == "spirals") {
        j["n"] = d.n;
        j["classes"] = d.classes;
        j["noise_std"] = d.noise_std;
        j["seed"] = d.seed;
    } else if (d.kind == "idx") {
        j["images"] = d.images_path;
        j["labels"] = d.labels_path;
    } else {
        j["paths"] = d.cifar_paths;
    }
    return j;
}

inline DatasetSpec dataset_from_json(const json& j) {
    DatasetSpec d;
    d.kind = detail::require_field(j, "kind", "dataset").get<std::string>();
    if (d.kind == "blobs" || d.kind == "spirals") {
        d.n = detail::require_field(j, "n", "dataset").get<std::size_t>();
        d.classes = detail::require_field(j, "classes", "dataset").get<std::size_t>();
        d.noise_std = detail::require_field(j, "noise_std", "dataset").get<double>();
        d.seed = detail::require_field(j, "seed", "dataset").get<std::uint64_t>();
    } else if (d.kind == "idx") {
        d.images_path = detail::require_field(j, "images", "dataset").get<std::string>();
        d.labels_path = detail::require_field(j, "labels", "dataset").get<std::string>();
    } else if (d.kind == "cifar_binary") {
        d.cifar_paths =
            detail::require_field(j, "paths", "dataset").get<std::vector<std::string>>();
    } else {
        throw FormatError("config: unknown dataset kind '" + d.kind + "'");
    }
    return d;
}

inline json to_json(const Hyper& h) {
    return {{"lr", h.lr},           {"momentum", h.momentum},
            {"weight_decay", h.weight_decay}, {"use_adam", h.use_adam},
            {"beta1", h.beta1},     {"beta2", h.beta2},
            {"adam_eps", h.adam_eps}};
}

inline Hyper hyper_from_json(const json& j) {
    Hyper h;
    h.lr = j.value("lr", h.lr);
    h.momentum = j.value("momentum", h.momentum);
    h.weight_decay = j.value("weight_decay", h.weight_decay);
    h.use_adam = j.value("use_adam", h.use_adam);
    h.beta1 = j.value("beta1", h.beta1);
    h.beta2 = j.value("beta2", h.beta2);
    h.adam_eps = j.value("adam_eps", h.adam_eps);
    return h;
}

inline json to_json(const LrSchedule& s) {
    if (const auto* sd = std::get_if<StepDecay>(&s)) {
        return {{"kind", "step_decay"},
                {"initial", sd->initial},
                {"milestones", sd->milestones},
                {"factor", sd->factor}};
    }
    if (const auto* sg = std::get_if<Sgdr>(&s)) {
        return {{"kind", "sgdr"},
                {"initial", sg->initial},
                {"first_period", sg->first_period},
                {"period_multiplier", sg->period_multiplier}};
    }
    return {{"kind", "constant"}, {"value", std::get<ConstantLr>(s).value}};
}

inline LrSchedule lr_schedule_from_json(const json& j) {
    const std::string kind = detail::require_field(j, "kind", "lr_schedule").get<std::string>();
    if (kind == "step_decay") {
        StepDecay sd;
        sd.initial = detail::require_field(j, "initial", "step_decay").get<double>();
        sd.milestones = detail::require_field(j, "milestones", "step_decay")
                            .get<std::vector<std::size_t>>();
        sd.factor = detail::require_field(j, "factor", "step_decay").get<double>();
        return sd;
    }
    if (kind == "sgdr") {
        Sgdr sg;
        sg.initial = detail::require_field(j, "initial", "sgdr").get<double>();
        sg.first_period = detail::require_field(j, "first_period", "sgdr").get<double>();
        sg.period_multiplier = j.value("period_multiplier", 2.0);
        return sg;
    }
    if (kind == "constant") {
        return ConstantLr{detail::require_field(j, "value", "constant lr").get<double>()};
    }
    throw FormatError("config: unknown lr schedule kind '" + kind + "'");
}

inline json to_json(const NoiseSpec& n) {
    return {{"level", n.level},
            {"family", noise_family_name(n.family)},
            {"target", noise_target_name(n.target)},
            {"exclude_bias", n.exclude_bias}};
}

inline NoiseSpec noise_from_json(const json& j) {
    NoiseSpec n;
    n.level = j.value("level", 0.0);
    const std::string family = j.value("family", "fixed_magnitude");
    if (family == "fixed_magnitude") {
        n.family = NoiseFamily::fixed_magnitude;
    } else if (family == "smoothout_uniform") {
        n.family = NoiseFamily::smoothout_uniform;
    } else {
        throw FormatError("config: unknown noise family '" + family + "'");
    }
    const std::string target = j.value("target", "all");
    if (target == "all") {
        n.target = NoiseTarget::all;
    } else if (target == "conv_only") {
        n.target = NoiseTarget::conv_only;
    } else if (target == "dense_only") {
        n.target = NoiseTarget::dense_only;
    } else {
        throw FormatError("config: unknown noise target '" + target + "'");
    }
    n.exclude_bias = j.value("exclude_bias", true);
    return n;
}

inline json to_json(const ExperimentConfig& c) {
    return {{"model", to_json(c.model)},
            {"dataset", to_json(c.dataset)},
            {"batch_size", c.batch_size},
            {"seeds", c.seeds},
            {"hyper", to_json(c.hyper)},
            {"lr_schedule", to_json(c.lr_schedule)},
            {"phases", c.phases},
            {"noise", to_json(c.noise)},
            {"output_dir", c.output_dir}};
}

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    c.model = model_from_json(detail::require_field(j, "model", "config"));
    c.dataset = dataset_from_json(detail::require_field(j, "dataset", "config"));
    c.batch_size = detail::require_field(j, "batch_size", "config").get<std::size_t>();
    c.seeds = detail::require_field(j, "seeds", "config").get<std::vector<std::uint64_t>>();
    c.hyper = hyper_from_json(j.value("hyper", json::object()));
    c.lr_schedule = lr_schedule_from_json(
        j.contains("lr_schedule") ? j["lr_schedule"] : json{{"kind", "constant"}, {"value", 0.1}});
    c.phases = detail::require_field(j, "phases", "config").get<std::string>();
    parse_phase_schedule(c.phases); // validate the grammar eagerly
    c.noise = noise_from_json(j.value("noise", json::object()));
    c.output_dir = j.value("output_dir", std::string("runs/out"));
    return c;
}

inline std::string config_to_string(const ExperimentConfig& c) { return to_json(c).dump(2); }

inline ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("config: invalid JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Materializing a config
// ---------------------------------------------------------------------------

inline Model build_model(const ModelSpec& spec) { return Model(spec.input_shape, spec.layers); }

inline Dataset build_dataset(const DatasetSpec& spec) {
    if (spec.kind == "blobs") {
        return gen_synthetic(SyntheticKind::blobs, spec.n, spec.classes, spec.noise_std,
                             spec.seed);
    }
    if (spec.kind == "spirals") {
        return gen_synthetic(SyntheticKind::spirals, spec.n, spec.classes, spec.noise_std,
                             spec.seed);
    }
    if (spec.kind == "idx") return load_idx(spec.images_path, spec.labels_path);
    return load_cifar_binary(spec.cifar_paths);
}

/// Output directory resolution: explicit CLI override beats the
/// SSGDLAB_OUT environment variable, which beats the config value.
inline std::string resolve_output_dir(const ExperimentConfig& config,
                                      const std::string& cli_override = "") {
    if (!cli_override.empty()) return cli_override;
    if (const char* env = std::getenv("SSGDLAB_OUT"); env != nullptr && *env != '\0') {
        return env;
    }
    return config.output_dir;
}

/// "start:stop:count" -> count points linspaced inclusively.
inline std::vector<double> parse_range(const std::string& text) {
    const std::size_t c1 = text.find(':');
    const std::size_t c2 = c1 == std::string::npos ? std::string::npos : text.find(':', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
        throw FormatError("range: expected start:stop:count, got '" + text + "'");
    }
    double start = 0.0, stop = 0.0;
    long long count = 0;
    try {
        std::size_t used = 0;
        start = std::stod(text.substr(0, c1), &used);
        if (used != c1) throw std::invalid_argument("trailing");
        const std::string mid = text.substr(c1 + 1, c2 - c1 - 1);
        stop = std::stod(mid, &used);
        if (used != mid.size()) throw std::invalid_argument("trailing");
        const std::string tail = text.substr(c2 + 1);
        count = std::stoll(tail, &used);
        if (used != tail.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw FormatError("range: expected start:stop:count, got '" + text + "'");
    }
    if (count < 2) throw FormatError("range: count must be >= 2 in '" + text + "'");
    if (!(stop > start)) throw FormatError("range: stop must exceed start in '" + text + "'");
    std::vector<double> out(static_cast<std::size_t>(count));
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = start + (stop - start) * static_cast<double>(i) /
                             static_cast<double>(count - 1);
    }
    return out;
}

} // namespace ssgd
