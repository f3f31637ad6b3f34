#pragma once

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "ssgd/data.hpp"
#include "ssgd/errors.hpp"
#include "ssgd/nnet.hpp"
#include "ssgd/optim.hpp"

namespace ssgd {

// ---------------------------------------------------------------------------
// Learning-rate schedules
// ---------------------------------------------------------------------------

/// lr = initial * factor^(number of milestones at or below the epoch).
struct StepDecay {
    double initial = 0.1;
    std::vector<std::size_t> milestones{75, 125};
    double factor = 0.1;
};

/// Cosine annealing with warm restarts: within a period of length T_i
/// (first_period * multiplier^i epochs), lr = initial/2 * (1 + cos(pi*t/T_i))
/// where t is the fractional epoch position since the period started; every
/// restart resets lr to initial.
struct Sgdr {
    double initial = 0.1;
    double first_period = 10.0;
    double period_multiplier = 2.0;
};

struct ConstantLr {
    double value = 0.1;
};

using LrSchedule = std::variant<StepDecay, Sgdr, ConstantLr>;

/// Learning rate for step `step_in_epoch` of `epoch`. Step decay reads only
/// the integer epoch; SGDR advances fractionally within the epoch.
inline double lr_at(const LrSchedule& schedule, std::size_t epoch, std::size_t step_in_epoch,
                    std::size_t steps_per_epoch) {
    if (const auto* sd = std::get_if<StepDecay>(&schedule)) {
        std::size_t passed = 0;
        for (std::size_t m : sd->milestones) {
            if (epoch >= m) ++passed;
        }
        if (passed == 0) return sd->initial;
        // Dividing by (1/factor)^k instead of multiplying by factor^k keeps
        // decimal decays exact: 0.1/10 == 0.01 while 0.1*0.1 does not.
        return sd->initial / std::pow(1.0 / sd->factor, static_cast<double>(passed));
    }
    if (const auto* sgdr = std::get_if<Sgdr>(&schedule)) {
        const double frac =
            steps_per_epoch == 0
                ? 0.0
                : static_cast<double>(step_in_epoch) / static_cast<double>(steps_per_epoch);
        double t = static_cast<double>(epoch) + frac;
        double period = sgdr->first_period;
        while (t >= period) {
            t -= period;
            period *= sgdr->period_multiplier;
        }
        return sgdr->initial * 0.5 * (1.0 + std::cos(std::numbers::pi * t / period));
    }
    return std::get<ConstantLr>(schedule).value;
}

// ---------------------------------------------------------------------------
// Phase schedules
// ---------------------------------------------------------------------------

enum class Rule : std::uint8_t { sgd, ssgd, ssgd_x2, noise_sgd, smoothout };

inline const char* rule_name(Rule r) {
    switch (r) {
        case Rule::sgd: return "sgd";
        case Rule::ssgd: return "ssgd";
        case Rule::ssgd_x2: return "ssgd_x2";
        case Rule::noise_sgd: return "noise_sgd";
        default: return "smoothout";
    }
}

/// Budget units one epoch of the rule costs, in backward passes relative to
/// plain SGD (the equal-computation-budget accounting).
inline std::size_t budget_units(Rule r) {
    switch (r) {
        case Rule::ssgd: return 2;
        case Rule::ssgd_x2: return 4;
        default: return 1;
    }
}

struct Phase {
    std::size_t epochs = 0;
    Rule rule = Rule::sgd;
    NoiseSpec noise; // level 0 unless configured
};

struct PhaseSchedule {
    std::vector<Phase> phases;

    std::size_t total_epochs() const {
        std::size_t total = 0;
        for (const Phase& p : phases) total += p.epochs;
        return total;
    }

    std::size_t total_budget_units() const {
        std::size_t total = 0;
        for (const Phase& p : phases) total += p.epochs * budget_units(p.rule);
        return total;
    }

    /// Rule in effect for a global epoch index.
    const Phase& phase_at(std::size_t epoch) const {
        std::size_t off = 0;
        for (const Phase& p : phases) {
            if (epoch < off + p.epochs) return p;
            off += p.epochs;
        }
        throw InvalidArgument("phase_at: epoch " + std::to_string(epoch) +
                              " beyond schedule of " + std::to_string(total_epochs()));
    }

    /// Applies one NoiseSpec to every phase (the grammar carries rules and
    /// epoch counts; noise parameters come from configuration).
    void set_noise(const NoiseSpec& spec) {
        for (Phase& p : phases) p.noise = spec;
    }
};

/// Parses the dash-separated grammar: each token is an integer epoch count
/// with an optional rule suffix — none = sgd, S = ssgd, S2 = ssgd_x2,
/// N = noise_sgd, M = smoothout. Case-insensitive; whitespace around tokens
/// is ignored. Example: "75-25S-25S".
inline PhaseSchedule parse_phase_schedule(const std::string& text) {
    PhaseSchedule out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t dash = text.find('-', pos);
        if (dash == std::string::npos) dash = text.size();
        std::size_t lo = pos, hi = dash;
        while (lo < hi && std::isspace(static_cast<unsigned char>(text[lo]))) ++lo;
        while (hi > lo && std::isspace(static_cast<unsigned char>(text[hi - 1]))) --hi;
        const std::string token = text.substr(lo, hi - lo);
        if (token.empty()) {
            throw FormatError("phase schedule: empty token in '" + text + "'");
        }
        std::size_t digits = 0;
        while (digits < token.size() &&
               std::isdigit(static_cast<unsigned char>(token[digits]))) {
            ++digits;
        }
        if (digits == 0) {
            throw FormatError("phase schedule: token '" + token + "' has no epoch count");
        }
        Phase phase;
        phase.epochs = static_cast<std::size_t>(std::stoull(token.substr(0, digits)));
        std::string suffix = token.substr(digits);
        for (char& c : suffix) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (suffix.empty()) {
            phase.rule = Rule::sgd;
        } else if (suffix == "s") {
            phase.rule = Rule::ssgd;
        } else if (suffix == "s2") {
            phase.rule = Rule::ssgd_x2;
        } else if (suffix == "n") {
            phase.rule = Rule::noise_sgd;
        } else if (suffix == "m") {
            phase.rule = Rule::smoothout;
        } else {
            throw FormatError("phase schedule: unknown rule suffix '" + suffix + "' in '" +
                              token + "'");
        }
        out.phases.push_back(phase);
        pos = dash + 1;
        if (dash == text.size()) break;
    }
    if (out.total_epochs() == 0) {
        throw FormatError("phase schedule: total epochs must be positive in '" + text + "'");
    }
    return out;
}

inline std::string to_string(const PhaseSchedule& schedule) {
    std::string out;
    for (std::size_t i = 0; i < schedule.phases.size(); ++i) {
        if (i) out += "-";
        out += std::to_string(schedule.phases[i].epochs);
        switch (schedule.phases[i].rule) {
            case Rule::sgd: break;
            case Rule::ssgd: out += "S"; break;
            case Rule::ssgd_x2: out += "S2"; break;
            case Rule::noise_sgd: out += "N"; break;
            case Rule::smoothout: out += "M"; break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Phase-schedule training loop
// ---------------------------------------------------------------------------

struct TrainLogRow {
    std::size_t epoch;
    double lr;
    double train_loss;
    double train_acc;
    double test_loss;
    double test_acc;
    std::uint64_t forward_passes;
    std::uint64_t backward_passes;
    double wall_time_sec; // cumulative; logged to a timing sidecar, not the
                          // deterministic metrics CSV
};

struct TrainLog {
    std::vector<TrainLogRow> rows;
};

struct RunResult {
    ParamSet params;
    TrainLog log;
    PassCounter passes;
};

/// Trains through a phase schedule: for each epoch, the phase's rule runs
/// over deterministically shuffled mini-batches (drop-remainder), then both
/// splits are evaluated and logged with cumulative pass counts.
///
/// Rng layout: one split up front seeds the per-epoch shuffle chain (so the
/// epoch e permutation depends only on the starting rng state and e), then
/// each optimizer step takes its own split from the main stream.
inline RunResult run_phase_schedule(const Model& model, ParamSet params,
                                    const PhaseSchedule& phases, const Dataset& data,
                                    std::size_t batch_size, const Hyper& hyper,
                                    const LrSchedule& lr_schedule, RngState& rng) {
    if (phases.total_epochs() == 0) {
        throw InvalidArgument("run_phase_schedule: empty phase schedule");
    }
    if (batch_size == 0) throw InvalidArgument("run_phase_schedule: batch_size must be > 0");
    const std::size_t n_train = data.train_size();
    if (n_train < batch_size) {
        throw InvalidArgument("run_phase_schedule: train split smaller than one batch");
    }
    const std::size_t steps_per_epoch = n_train / batch_size;
    const std::size_t feat = data.train_inputs.size() / n_train;
    Shape per_example(data.train_inputs.shape().begin() + 1, data.train_inputs.shape().end());

    RngState shuffle_root = rng.split();
    OptState state;
    PassCounter counter;
    TrainLog log;
    const auto t0 = std::chrono::steady_clock::now();

    for (std::size_t epoch = 0; epoch < phases.total_epochs(); ++epoch) {
        const Phase& phase = phases.phase_at(epoch);
        RngState perm_rng = shuffle_root.split();
        const std::vector<std::size_t> order = detail::shuffled_indices(n_train, perm_rng);

        double lr_logged = 0.0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            Shape s{batch_size};
            s.insert(s.end(), per_example.begin(), per_example.end());
            Batch batch{Tensor(s), {}};
            batch.labels.resize(batch_size);
            for (std::size_t i = 0; i < batch_size; ++i) {
                const std::size_t src = order[step * batch_size + i];
                std::copy(data.train_inputs.data() + src * feat,
                          data.train_inputs.data() + (src + 1) * feat,
                          batch.inputs.data() + i * feat);
                batch.labels[i] = data.train_labels[src];
            }
            Hyper step_hyper = hyper;
            step_hyper.lr = lr_at(lr_schedule, epoch, step, steps_per_epoch);
            lr_logged = step_hyper.lr;
            switch (phase.rule) {
                case Rule::sgd:
                    sgd_step(params, state, model, batch, step_hyper, counter, rng);
                    break;
                case Rule::ssgd:
                    ssgd_step(params, state, model, batch, step_hyper, phase.noise, counter,
                              rng);
                    break;
                case Rule::ssgd_x2:
                    ssgd_x2_step(params, state, model, batch, step_hyper, phase.noise,
                                 counter, rng);
                    break;
                case Rule::noise_sgd:
                    noise_sgd_step(params, state, model, batch, step_hyper, phase.noise,
                                   counter, rng);
                    break;
                case Rule::smoothout:
                    smoothout_step(params, state, model, batch, step_hyper, phase.noise,
                                   counter, rng);
                    break;
            }
        }

        const SplitMetrics train =
            evaluate_split(model, params, data.train_inputs, data.train_labels);
        const SplitMetrics test =
            evaluate_split(model, params, data.test_inputs, data.test_labels);
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.rows.push_back({epoch, lr_logged, train.loss, train.accuracy, test.loss,
                            test.accuracy, counter.forward, counter.backward, elapsed});
    }
    return {std::move(params), std::move(log), counter};
}

} // namespace ssgd
