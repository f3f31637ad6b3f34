#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "ssgd/schedule.hpp"

using Catch::Matchers::ContainsSubstring;
using ssgd::ConstantLr;
using ssgd::Dataset;
using ssgd::FormatError;
using ssgd::Hyper;
using ssgd::InvalidArgument;
using ssgd::LrSchedule;
using ssgd::Phase;
using ssgd::PhaseSchedule;
using ssgd::RngState;
using ssgd::Rule;
using ssgd::Sgdr;
using ssgd::StepDecay;

namespace {

ssgd::Model tiny_mlp() {
    return ssgd::Model({2}, {ssgd::LayerSpec::dense(2, 8), ssgd::LayerSpec::relu(),
                             ssgd::LayerSpec::dense(8, 3)});
}

ssgd::RunResult run_small(const PhaseSchedule& phases, const Dataset& data,
                          std::size_t batch_size, std::uint64_t seed,
                          const LrSchedule& lr = ConstantLr{0.1}) {
    const ssgd::Model model = tiny_mlp();
    RngState rng = ssgd::seeded_rng(seed);
    ssgd::ParamSet params = model.init_params(rng);
    Hyper hyper;
    return ssgd::run_phase_schedule(model, std::move(params), phases, data, batch_size,
                                    hyper, lr, rng);
}

} // namespace

TEST_CASE("step decay hits the canonical milestones exactly", "[schedule]") {
    const LrSchedule sched = StepDecay{0.1, {75, 125}, 0.1};
    REQUIRE(ssgd::lr_at(sched, 0, 0, 100) == 0.1);
    REQUIRE(ssgd::lr_at(sched, 74, 99, 100) == 0.1);
    REQUIRE(ssgd::lr_at(sched, 75, 0, 100) == 0.01);
    REQUIRE(ssgd::lr_at(sched, 124, 0, 100) == 0.01);
    REQUIRE(ssgd::lr_at(sched, 125, 0, 100) == 0.001);
    REQUIRE(ssgd::lr_at(sched, 174, 99, 100) == 0.001);
}

TEST_CASE("SGDR restarts at 10/30/70/150 and resets to the initial lr", "[schedule]") {
    const LrSchedule sched = Sgdr{0.1, 10.0, 2.0};
    REQUIRE(ssgd::lr_at(sched, 0, 0, 50) == 0.1);
    for (std::size_t restart : {10u, 30u, 70u, 150u}) {
        REQUIRE(ssgd::lr_at(sched, restart, 0, 50) == 0.1);
    }
    // Just before each restart the cosine has bottomed out near zero.
    for (std::size_t restart : {10u, 30u, 70u, 150u}) {
        REQUIRE(ssgd::lr_at(sched, restart - 1, 49, 50) < 0.002);
    }
}

TEST_CASE("SGDR period midpoints sit at half the initial lr", "[schedule]") {
    const LrSchedule sched = Sgdr{0.1, 10.0, 2.0};
    // Period starts/lengths: (0,10), (10,20), (30,40), (70,80).
    REQUIRE(ssgd::lr_at(sched, 5, 0, 10) == Catch::Approx(0.05).margin(1e-12));
    REQUIRE(ssgd::lr_at(sched, 20, 0, 10) == Catch::Approx(0.05).margin(1e-12));
    REQUIRE(ssgd::lr_at(sched, 50, 0, 10) == Catch::Approx(0.05).margin(1e-12));
    REQUIRE(ssgd::lr_at(sched, 110, 0, 10) == Catch::Approx(0.05).margin(1e-12));
}

TEST_CASE("SGDR advances per step and is continuous within a period", "[schedule]") {
    const LrSchedule sched = Sgdr{0.1, 10.0, 2.0};
    const std::size_t steps = 10;

    // Mid-epoch lr differs from the epoch-start lr (not a per-epoch staircase).
    REQUIRE(ssgd::lr_at(sched, 0, 5, steps) < ssgd::lr_at(sched, 0, 0, steps));

    // Monotone decay inside the first period, sampled at every step.
    double prev = ssgd::lr_at(sched, 0, 0, steps);
    for (std::size_t e = 0; e < 10; ++e) {
        for (std::size_t s = (e == 0 ? 1u : 0u); s < steps; ++s) {
            const double lr = ssgd::lr_at(sched, e, s, steps);
            REQUIRE(lr < prev);
            // Adjacent steps move by at most initial*pi/(2*T*steps) plus slack.
            REQUIRE(prev - lr < 0.1 * std::numbers::pi / (2.0 * 10.0 * steps) * 1.5);
            prev = lr;
        }
    }
}

TEST_CASE("phase grammar parses rules, case, and whitespace", "[schedule]") {
    const PhaseSchedule p = ssgd::parse_phase_schedule("75-25S-25S");
    REQUIRE(p.phases.size() == 3);
    REQUIRE(p.phases[0].epochs == 75);
    REQUIRE(p.phases[0].rule == Rule::sgd);
    REQUIRE(p.phases[1].rule == Rule::ssgd);
    REQUIRE(p.phases[2].rule == Rule::ssgd);
    REQUIRE(p.total_epochs() == 125);
    REQUIRE(ssgd::to_string(p) == "75-25S-25S");

    const PhaseSchedule q = ssgd::parse_phase_schedule(" 10s2 - 5n -3m- 2 ");
    REQUIRE(q.phases.size() == 4);
    REQUIRE(q.phases[0].rule == Rule::ssgd_x2);
    REQUIRE(q.phases[1].rule == Rule::noise_sgd);
    REQUIRE(q.phases[2].rule == Rule::smoothout);
    REQUIRE(q.phases[3].rule == Rule::sgd);
    REQUIRE(ssgd::to_string(q) == "10S2-5N-3M-2");
}

TEST_CASE("phase grammar rejects malformed schedules", "[schedule]") {
    REQUIRE_THROWS_AS(ssgd::parse_phase_schedule(""), FormatError);
    REQUIRE_THROWS_AS(ssgd::parse_phase_schedule("75-"), FormatError);
    REQUIRE_THROWS_AS(ssgd::parse_phase_schedule("-25S"), FormatError);
    REQUIRE_THROWS_MATCHES(ssgd::parse_phase_schedule("75-25X"), FormatError,
                           Catch::Matchers::MessageMatches(ContainsSubstring("suffix")));
    REQUIRE_THROWS_AS(ssgd::parse_phase_schedule("S25"), FormatError);
    REQUIRE_THROWS_MATCHES(ssgd::parse_phase_schedule("0-0"), FormatError,
                           Catch::Matchers::MessageMatches(ContainsSubstring("positive")));
}

TEST_CASE("budget accounting matches the equal-compute design", "[schedule]") {
    const PhaseSchedule mixed = ssgd::parse_phase_schedule("75-25S-25S");
    const PhaseSchedule plain = ssgd::parse_phase_schedule("75-50-50");
    REQUIRE(mixed.total_budget_units() == 175);
    REQUIRE(plain.total_budget_units() == 175);
    REQUIRE(mixed.total_budget_units() == plain.total_budget_units());

    const PhaseSchedule under = ssgd::parse_phase_schedule("37S-25S-25S");
    REQUIRE(under.total_budget_units() == 174);
    REQUIRE(under.total_budget_units() <= 175);

    REQUIRE(ssgd::parse_phase_schedule("3S2").total_budget_units() == 12);
}

TEST_CASE("pass counter equals the analytic budget formula", "[schedule]") {
    const Dataset data = ssgd::gen_synthetic(ssgd::SyntheticKind::blobs, 50, 3, 0.3, 21);
    REQUIRE(data.train_size() == 40);
    const std::size_t steps = 40 / 10;

    RngState pick = ssgd::seeded_rng(77);
    const Rule all_rules[] = {Rule::sgd, Rule::ssgd, Rule::ssgd_x2, Rule::noise_sgd,
                              Rule::smoothout};
    for (int trial = 0; trial < 5; ++trial) {
        PhaseSchedule phases;
        const std::size_t n_phases = 1 + pick.next_u64() % 3;
        for (std::size_t i = 0; i < n_phases; ++i) {
            Phase ph;
            ph.epochs = 1 + pick.next_u64() % 2;
            ph.rule = all_rules[pick.next_u64() % 5];
            ph.noise.level = 0.4;
            phases.phases.push_back(ph);
        }
        const ssgd::RunResult rr = run_small(phases, data, 10, 100 + trial);
        const std::uint64_t expect = steps * phases.total_budget_units();
        REQUIRE(rr.passes.backward == expect);
        REQUIRE(rr.passes.forward == expect);
        REQUIRE(rr.log.rows.size() == phases.total_epochs());
    }
}

TEST_CASE("single sgd phase of one epoch counts one pass pair per batch", "[schedule]") {
    const Dataset data = ssgd::gen_synthetic(ssgd::SyntheticKind::blobs, 50, 3, 0.3, 22);
    const ssgd::RunResult rr = run_small(ssgd::parse_phase_schedule("1"), data, 10, 3);
    REQUIRE(rr.passes.forward == 4);
    REQUIRE(rr.passes.backward == 4);
    REQUIRE(rr.log.rows.size() == 1);
    REQUIRE(rr.log.rows[0].forward_passes == 4);
}

TEST_CASE("train log rows are contiguous with monotone pass counts", "[schedule]") {
    const Dataset data = ssgd::gen_synthetic(ssgd::SyntheticKind::spirals, 60, 3, 0.2, 9);
    PhaseSchedule phases = ssgd::parse_phase_schedule("2-2S");
    phases.phases[1].noise.level = 0.4;
    const ssgd::RunResult rr = run_small(phases, data, 8, 5);
    REQUIRE(rr.log.rows.size() == 4);
    for (std::size_t e = 0; e < rr.log.rows.size(); ++e) {
        REQUIRE(rr.log.rows[e].epoch == e);
        if (e > 0) {
            REQUIRE(rr.log.rows[e].forward_passes > rr.log.rows[e - 1].forward_passes);
            REQUIRE(rr.log.rows[e].backward_passes > rr.log.rows[e - 1].backward_passes);
            REQUIRE(rr.log.rows[e].wall_time_sec >= rr.log.rows[e - 1].wall_time_sec);
        }
    }
    // The SGD epochs cost 6 pass pairs each, the S-SGD epochs 12.
    REQUIRE(rr.log.rows[1].backward_passes == 12);
    REQUIRE(rr.log.rows[3].backward_passes == 36);
}

TEST_CASE("run_phase_schedule is deterministic given the rng state", "[schedule]") {
    const Dataset data = ssgd::gen_synthetic(ssgd::SyntheticKind::spirals, 60, 3, 0.2, 13);
    PhaseSchedule phases = ssgd::parse_phase_schedule("1S-1");
    phases.set_noise(ssgd::NoiseSpec{0.4, ssgd::NoiseFamily::fixed_magnitude,
                                     ssgd::NoiseTarget::all, true});

    const ssgd::RunResult a = run_small(phases, data, 10, 31);
    const ssgd::RunResult b = run_small(phases, data, 10, 31);
    REQUIRE(a.params.param_count() == b.params.param_count());
    for (std::size_t g = 0; g < a.params.group_count(); ++g) {
        const auto& ta = a.params.group(g).values;
        const auto& tb = b.params.group(g).values;
        for (std::size_t i = 0; i < ta.size(); ++i) REQUIRE(ta[i] == tb[i]);
    }
    for (std::size_t e = 0; e < a.log.rows.size(); ++e) {
        REQUIRE(a.log.rows[e].train_loss == b.log.rows[e].train_loss);
        REQUIRE(a.log.rows[e].test_acc == b.log.rows[e].test_acc);
    }

    const ssgd::RunResult c = run_small(phases, data, 10, 32);
    REQUIRE(a.log.rows.back().train_loss != c.log.rows.back().train_loss);
}

TEST_CASE("training actually learns the blobs task", "[schedule]") {
    const Dataset data = ssgd::gen_synthetic(ssgd::SyntheticKind::blobs, 200, 3, 0.15, 2);
    const ssgd::RunResult rr =
        run_small(ssgd::parse_phase_schedule("8"), data, 20, 17, ConstantLr{0.5});
    REQUIRE(rr.log.rows.back().train_acc >= 0.95);
    REQUIRE(rr.log.rows.back().train_loss < rr.log.rows.front().train_loss);
}

TEST_CASE("run_phase_schedule validates its inputs", "[schedule]") {
    const Dataset data = ssgd::gen_synthetic(ssgd::SyntheticKind::blobs, 50, 3, 0.3, 1);
    const ssgd::Model model = tiny_mlp();
    RngState rng = ssgd::seeded_rng(0);
    ssgd::ParamSet params = model.init_params(rng);
    Hyper hyper;

    REQUIRE_THROWS_AS(ssgd::run_phase_schedule(model, params, PhaseSchedule{}, data, 10,
                                               hyper, ConstantLr{0.1}, rng),
                      InvalidArgument);
    REQUIRE_THROWS_AS(ssgd::run_phase_schedule(model, params,
                                               ssgd::parse_phase_schedule("1"), data, 0,
                                               hyper, ConstantLr{0.1}, rng),
                      InvalidArgument);
    REQUIRE_THROWS_AS(ssgd::run_phase_schedule(model, params,
                                               ssgd::parse_phase_schedule("1"), data, 41,
                                               hyper, ConstantLr{0.1}, rng),
                      InvalidArgument);
}
