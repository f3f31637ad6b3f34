#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ssgd/config.hpp"
#include "ssgd/experiment.hpp"

using namespace ssgd;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

std::filesystem::path scratch_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("ssgd_harness_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.model.input_shape = {2};
    c.model.layers = {LayerSpec::dense(2, 8), LayerSpec::relu(), LayerSpec::dense(8, 3)};
    c.dataset.kind = "blobs";
    c.dataset.n = 96;
    c.dataset.classes = 3;
    c.dataset.noise_std = 0.3;
    c.dataset.seed = 7;
    c.batch_size = 16;
    c.seeds = {0, 1};
    c.hyper.lr = 0.1;
    c.phases = "1";
    return c;
}

} // namespace

TEST_CASE("experiment config round-trips through json losslessly") {
    ExperimentConfig c;
    c.model.input_shape = {1, 8, 8};
    c.model.layers = {LayerSpec::conv2d(3, 3, 1, 4, 1, Padding::same),
                      LayerSpec::relu(),
                      LayerSpec::mean_pool(2),
                      LayerSpec::flatten(),
                      LayerSpec::dropout(0.25),
                      LayerSpec::dense(64, 10),
                      LayerSpec::dropconnect(0.5)};
    c.dataset.kind = "idx";
    c.dataset.images_path = "imgs.idx";
    c.dataset.labels_path = "labels.idx";
    c.batch_size = 64;
    c.seeds = {3, 5, 8};
    c.hyper.lr = 0.05;
    c.hyper.momentum = 0.9;
    c.hyper.weight_decay = 5e-4;
    c.lr_schedule = StepDecay{0.05, {75, 125}, 0.1};
    c.phases = "100-50S-25N";
    c.noise = NoiseSpec{0.4, NoiseFamily::fixed_magnitude, NoiseTarget::dense_only, false};
    c.output_dir = "runs/exp1";

    const std::string text = config_to_string(c);
    const ExperimentConfig back = parse_config(text);
    // Re-serialization is the equality check: every field participates.
    REQUIRE(config_to_string(back) == text);
}

TEST_CASE("config json covers every schedule and dataset variant") {
    ExperimentConfig c = tiny_config();

    SECTION("sgdr schedule") {
        c.lr_schedule = Sgdr{0.1, 10.0, 2.0};
        const ExperimentConfig back = parse_config(config_to_string(c));
        REQUIRE(config_to_string(back) == config_to_string(c));
        REQUIRE(std::holds_alternative<Sgdr>(back.lr_schedule));
    }
    SECTION("constant schedule") {
        c.lr_schedule = ConstantLr{0.01};
        const ExperimentConfig back = parse_config(config_to_string(c));
        REQUIRE(std::get<ConstantLr>(back.lr_schedule).value == 0.01);
    }
    SECTION("spirals dataset") {
        c.dataset.kind = "spirals";
        const ExperimentConfig back = parse_config(config_to_string(c));
        REQUIRE(back.dataset.kind == "spirals");
        REQUIRE(back.dataset.n == 96);
    }
    SECTION("cifar_binary dataset") {
        c.dataset.kind = "cifar_binary";
        c.dataset.cifar_paths = {"batch1.bin", "batch2.bin"};
        const ExperimentConfig back = parse_config(config_to_string(c));
        REQUIRE(back.dataset.cifar_paths == c.dataset.cifar_paths);
    }
    SECTION("smoothout noise family") {
        c.noise = NoiseSpec{0.01, NoiseFamily::smoothout_uniform, NoiseTarget::conv_only, true};
        const ExperimentConfig back = parse_config(config_to_string(c));
        REQUIRE(back.noise.family == NoiseFamily::smoothout_uniform);
        REQUIRE(back.noise.target == NoiseTarget::conv_only);
    }
}

TEST_CASE("malformed configs are rejected with precise messages") {
    const ExperimentConfig c = tiny_config();
    json j = to_json(c);

    SECTION("not json at all") {
        REQUIRE_THROWS_MATCHES(parse_config("{nope"), FormatError,
                               MessageMatches(ContainsSubstring("invalid JSON")));
    }
    SECTION("missing model") {
        j.erase("model");
        REQUIRE_THROWS_MATCHES(parse_config(j.dump()), FormatError,
                               MessageMatches(ContainsSubstring("missing 'model'")));
    }
    SECTION("missing layer field") {
        j["model"]["layers"][0].erase("in");
        REQUIRE_THROWS_MATCHES(parse_config(j.dump()), FormatError,
                               MessageMatches(ContainsSubstring("missing 'in'")));
    }
    SECTION("unknown layer type") {
        j["model"]["layers"][0]["type"] = "wavelet";
        REQUIRE_THROWS_MATCHES(parse_config(j.dump()), FormatError,
                               MessageMatches(ContainsSubstring("unknown layer type 'wavelet'")));
    }
    SECTION("unknown dataset kind") {
        j["dataset"] = {{"kind", "tarball"}};
        REQUIRE_THROWS_MATCHES(parse_config(j.dump()), FormatError,
                               MessageMatches(ContainsSubstring("unknown dataset kind")));
    }
    SECTION("invalid phase grammar surfaces at parse time") {
        j["phases"] = "10Q";
        REQUIRE_THROWS_AS(parse_config(j.dump()), FormatError);
    }
    SECTION("unknown noise family") {
        j["noise"]["family"] = "cauchy";
        REQUIRE_THROWS_MATCHES(parse_config(j.dump()), FormatError,
                               MessageMatches(ContainsSubstring("unknown noise family")));
    }
}

TEST_CASE("load_config reads a file and reports missing paths") {
    const auto dir = scratch_dir("load");
    const auto path = dir / "cfg.json";
    {
        std::ofstream os(path);
        os << config_to_string(tiny_config());
    }
    const ExperimentConfig c = load_config(path.string());
    REQUIRE(c.batch_size == 16);
    REQUIRE(c.seeds == std::vector<std::uint64_t>{0, 1});

    REQUIRE_THROWS_MATCHES(load_config((dir / "absent.json").string()), IoError,
                           MessageMatches(ContainsSubstring("cannot open")));
    std::filesystem::remove_all(dir);
}

TEST_CASE("output dir resolution prefers cli, then env, then config") {
    ExperimentConfig c = tiny_config();
    c.output_dir = "from_config";

    ::unsetenv("SSGDLAB_OUT");
    REQUIRE(resolve_output_dir(c) == "from_config");
    REQUIRE(resolve_output_dir(c, "from_cli") == "from_cli");

    ::setenv("SSGDLAB_OUT", "from_env", 1);
    REQUIRE(resolve_output_dir(c) == "from_env");
    REQUIRE(resolve_output_dir(c, "from_cli") == "from_cli");
    ::unsetenv("SSGDLAB_OUT");
}

TEST_CASE("parse_range produces inclusive linspaces") {
    const std::vector<double> r = parse_range("-1:1:41");
    REQUIRE(r.size() == 41);
    REQUIRE(r.front() == -1.0);
    REQUIRE(r.back() == 1.0);
    REQUIRE(r[20] == Catch::Approx(0.0).margin(1e-15));

    const std::vector<double> two = parse_range("0:0.5:2");
    REQUIRE(two == std::vector<double>{0.0, 0.5});

    REQUIRE_THROWS_AS(parse_range("0:1"), FormatError);
    REQUIRE_THROWS_AS(parse_range("0:1:1"), FormatError);
    REQUIRE_THROWS_AS(parse_range("1:0:5"), FormatError);
    REQUIRE_THROWS_AS(parse_range("a:1:5"), FormatError);
    REQUIRE_THROWS_AS(parse_range("0:1:5x"), FormatError);
}

TEST_CASE("run_experiment writes per-seed logs, checkpoints, and a summary") {
    const auto dir = scratch_dir("run");
    ExperimentConfig c = tiny_config();
    c.output_dir = dir.string();

    const ExperimentResult res = run_experiment(c);
    REQUIRE(res.seeds.size() == 2);
    for (const SeedOutcome& s : res.seeds) {
        REQUIRE(s.ok);
        REQUIRE(s.log.rows.size() == 1); // one epoch
        // 76 train rows (80% of 96) / batch 16 = 4 sgd steps, one pass each way.
        REQUIRE(s.log.rows[0].forward_passes == 4);
        REQUIRE(s.log.rows[0].backward_passes == 4);
        REQUIRE(std::filesystem::exists(s.checkpoint_path));
    }
    REQUIRE(std::filesystem::exists(dir / "seed0_log.csv"));
    REQUIRE(std::filesystem::exists(dir / "seed0_timing.csv"));
    REQUIRE(std::filesystem::exists(dir / "seed1_log.csv"));
    REQUIRE(std::filesystem::exists(dir / "summary.csv"));

    // Different seeds start from different weights, so the trajectories differ.
    REQUIRE(res.seeds[0].final_test_acc == res.seeds[0].log.rows.back().test_acc);
    REQUIRE(slurp(dir / "seed0_log.csv") != slurp(dir / "seed1_log.csv"));

    // The checkpoint must reload to the model's exact shape.
    const Model model = build_model(c.model);
    const ParamSet restored = load_checkpoint(res.seeds[0].checkpoint_path);
    RngState rng = seeded_rng(0);
    const ParamSet fresh = model.init_params(rng);
    REQUIRE(restored.param_count() == fresh.param_count());

    std::filesystem::remove_all(dir);
}

TEST_CASE("identical configs give byte-identical metric csvs") {
    const auto dir_a = scratch_dir("det_a");
    const auto dir_b = scratch_dir("det_b");
    ExperimentConfig c = tiny_config();
    c.seeds = {4};
    c.phases = "1S"; // exercise the noisy rule in the determinism check
    c.noise.level = 0.4;

    c.output_dir = dir_a.string();
    run_experiment(c);
    c.output_dir = dir_b.string();
    run_experiment(c);

    REQUIRE(slurp(dir_a / "seed4_log.csv") == slurp(dir_b / "seed4_log.csv"));
    REQUIRE(slurp(dir_a / "summary.csv") == slurp(dir_b / "summary.csv"));

    // The log carries no wall-clock column; timing lives in the sidecar.
    const std::string log = slurp(dir_a / "seed4_log.csv");
    REQUIRE(log.find("wall") == std::string::npos);
    const std::string timing = slurp(dir_a / "seed4_timing.csv");
    REQUIRE(timing.rfind("epoch,wall_time_sec\n", 0) == 0);

    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
}

TEST_CASE("summary statistics are the mean, min, and max over seeds") {
    const SummaryStats s = summarize_accuracies({0.90, 0.92, 0.94});
    REQUIRE(s.n_seeds == 3);
    REQUIRE(s.mean_test_acc == Catch::Approx(0.92).margin(1e-15));
    REQUIRE(s.min_test_acc == 0.90);
    REQUIRE(s.max_test_acc == 0.94);

    const SummaryStats empty = summarize_accuracies({});
    REQUIRE(empty.n_seeds == 0);
    REQUIRE(empty.mean_test_acc == 0.0);
}

TEST_CASE("a seed that fails is quarantined without sinking the batch") {
    const auto dir = scratch_dir("quarantine");
    ExperimentConfig c = tiny_config();
    c.output_dir = dir.string();
    // Train split (76 of 96) is smaller than one batch, so every seed fails
    // identically; quarantine must still record each one and write a summary.
    c.batch_size = 90;

    const ExperimentResult res = run_experiment(c);
    REQUIRE(res.seeds.size() == 2);
    for (const SeedOutcome& s : res.seeds) {
        REQUIRE_FALSE(s.ok);
        REQUIRE_THAT(s.error, ContainsSubstring("train split smaller"));
    }
    REQUIRE(res.summary.n_seeds == 0);
    REQUIRE(res.summary.failures.size() == 2);
    REQUIRE(std::filesystem::exists(dir / "summary.csv"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("summarize_directory recovers the summary from seed logs") {
    const auto dir = scratch_dir("resummarize");
    ExperimentConfig c = tiny_config();
    c.output_dir = dir.string();
    const ExperimentResult res = run_experiment(c);

    const SummaryStats s = summarize_directory(dir.string());
    REQUIRE(s.n_seeds == 2);
    REQUIRE(s.mean_test_acc == Catch::Approx(res.summary.mean_test_acc).margin(1e-12));
    REQUIRE(s.min_test_acc == res.summary.min_test_acc);
    REQUIRE(s.max_test_acc == res.summary.max_test_acc);

    REQUIRE_THROWS_AS(summarize_directory((dir / "nope").string()), IoError);
    const auto empty = scratch_dir("resummarize_empty");
    REQUIRE_THROWS_MATCHES(summarize_directory(empty.string()), FormatError,
                           MessageMatches(ContainsSubstring("no seed")));
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(empty);
}

TEST_CASE("curve, surface, and spectrum writers emit stable headers") {
    const auto dir = scratch_dir("writers");

    Curve1D curve;
    curve.points = {{0.0, 1.5, 0.25, 1.75, 0.375}, {1.0, 0.5, 0.125, 0.875, 0.0625}};
    write_curve_csv((dir / "curve.csv").string(), curve);
    const std::string curve_text = slurp(dir / "curve.csv");
    REQUIRE(curve_text.rfind("alpha,train_loss,train_mcr,test_loss,test_mcr\n", 0) == 0);
    REQUIRE(curve_text.find("\n0,1.5,0.25,1.75,0.375\n") != std::string::npos);

    SurfaceGrid grid;
    grid.xs = {0.0, 1.0};
    grid.ys = {0.0};
    grid.train_loss = {2.0, 3.0};
    grid.train_mcr = {0.5, 0.25};
    grid.test_loss = {2.5, 3.5};
    grid.test_mcr = {0.5, 0.75};
    grid.anchors = {{{{0.0, 0.0}}, {{1.0, 0.0}}, {{0.5, 1.0}}}};
    write_surface_csv((dir / "surface.csv").string(), grid);
    write_anchors_csv((dir / "anchors.csv").string(), grid);
    const std::string surf_text = slurp(dir / "surface.csv");
    REQUIRE(surf_text.rfind("x,y,train_loss,train_mcr,test_loss,test_mcr\n", 0) == 0);
    REQUIRE(std::count(surf_text.begin(), surf_text.end(), '\n') == 3); // header + 2 cells
    const std::string anchor_text = slurp(dir / "anchors.csv");
    REQUIRE(anchor_text == "anchor,x,y\n0,0,0\n1,1,0\n2,0.5,1\n");

    Spectrum spec;
    spec.ritz = {3.0, 1.0, -0.5};
    write_spectrum_csv((dir / "spectrum.csv").string(), spec);
    REQUIRE(slurp(dir / "spectrum.csv") == "index,ritz_value\n0,3\n1,1\n2,-0.5\n");

    Density dens;
    dens.xs = {0.0, 0.5};
    dens.ys = {0.25, 0.75};
    write_density_csv((dir / "density.csv").string(), dens);
    REQUIRE(slurp(dir / "density.csv") == "eigenvalue,density\n0,0.25\n0.5,0.75\n");

    // Doubles that need all 17 digits survive the round trip.
    Curve1D precise;
    precise.points = {{0.1, 1.0 / 3.0, 0.0, 0.0, 0.0}};
    write_curve_csv((dir / "precise.csv").string(), precise);
    const std::string text = slurp(dir / "precise.csv");
    REQUIRE(text.find("0.33333333333333331") != std::string::npos);

    std::filesystem::remove_all(dir);
}
