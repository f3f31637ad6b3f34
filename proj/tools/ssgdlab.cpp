#include <algorithm>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssgd/checkpoint.hpp"
#include "ssgd/config.hpp"
#include "ssgd/experiment.hpp"
#include "ssgd/landscape.hpp"

namespace {

using namespace ssgd;

/// Loads a checkpoint and verifies it fits the config's model, so a
/// mismatched file fails with a shape message instead of garbage numbers.
ParamSet load_params_for(const Model& model, const std::string& path) {
    ParamSet loaded = load_checkpoint(path);
    RngState probe_rng = seeded_rng(0);
    const ParamSet reference = model.init_params(probe_rng);
    const std::string what = "checkpoint '" + path + "'";
    require_aligned(reference, loaded, what.c_str());
    return loaded;
}

Batch full_train_batch(const Dataset& data) {
    return Batch{data.train_inputs, data.train_labels};
}

AxisRange axis_from_range(const std::string& text) {
    const std::vector<double> pts = parse_range(text);
    return AxisRange{pts.front(), pts.back(), pts.size()};
}

std::string sibling_csv(const std::string& out, const std::string& suffix) {
    std::string base = out;
    if (base.size() > 4 && base.compare(base.size() - 4, 4, ".csv") == 0) {
        base.resize(base.size() - 4);
    }
    return base + suffix + ".csv";
}

int run_train(const std::string& config_path, const std::string& out) {
    const ExperimentConfig config = load_config(config_path);
    const ExperimentResult res = run_experiment(config, out);
    for (const SeedOutcome& s : res.seeds) {
        if (s.ok) {
            std::cout << "seed " << s.seed << ": test_acc "
                      << detail::fmt_double(s.final_test_acc) << '\n';
        } else {
            std::cerr << "ssgdlab: seed " << s.seed << " failed: " << s.error << '\n';
        }
    }
    std::cout << "summary: n=" << res.summary.n_seeds << " mean "
              << detail::fmt_double(res.summary.mean_test_acc) << " min "
              << detail::fmt_double(res.summary.min_test_acc) << " max "
              << detail::fmt_double(res.summary.max_test_acc) << " -> "
              << res.output_dir << "/summary.csv\n";
    return res.summary.n_seeds == 0 ? 1 : 0;
}

int run_interp(const std::string& config_path, const std::string& ckpt_a,
               const std::string& ckpt_b, const std::string& alphas_text,
               const std::string& out) {
    const ExperimentConfig config = load_config(config_path);
    const Model model = build_model(config.model);
    const Dataset data = build_dataset(config.dataset);
    const ParamSet a = load_params_for(model, ckpt_a);
    const ParamSet b = load_params_for(model, ckpt_b);
    const Curve1D curve = interpolate_1d(a, b, model, data, parse_range(alphas_text));
    write_curve_csv(out, curve);
    std::cout << "wrote " << curve.points.size() << " rows -> " << out << '\n';
    return 0;
}

int run_surface(const std::string& config_path, const std::string& ckpt_a,
                const std::string& ckpt_b, const std::string& ckpt_c,
                const std::string& x_text, const std::string& y_text,
                const std::string& out) {
    const ExperimentConfig config = load_config(config_path);
    const Model model = build_model(config.model);
    const Dataset data = build_dataset(config.dataset);
    const PlaneBasis basis = plane_basis(load_params_for(model, ckpt_a),
                                         load_params_for(model, ckpt_b),
                                         load_params_for(model, ckpt_c));

    // Default window: the anchor triangle's bounding box, padded 25% per side.
    auto padded_axis = [&](int coord) {
        double lo = basis.anchors[0][coord], hi = lo;
        for (const auto& anchor : basis.anchors) {
            lo = std::min(lo, anchor[coord]);
            hi = std::max(hi, anchor[coord]);
        }
        const double pad = 0.25 * (hi - lo);
        return AxisRange{lo - pad, hi + pad, 25};
    };
    const AxisRange x_range = x_text.empty() ? padded_axis(0) : axis_from_range(x_text);
    const AxisRange y_range = y_text.empty() ? padded_axis(1) : axis_from_range(y_text);

    const SurfaceGrid grid = surface_eval(basis, model, data, x_range, y_range);
    write_surface_csv(out, grid);
    const std::string anchors_path = sibling_csv(out, "_anchors");
    write_anchors_csv(anchors_path, grid);
    std::cout << "wrote " << grid.nx() << "x" << grid.ny() << " grid -> " << out << " (anchors "
              << anchors_path << ")\n";
    return 0;
}

int run_spectrum(const std::string& config_path, const std::string& ckpt, std::size_t k,
                 std::uint64_t seed, double h, const std::string& out,
                 const std::string& density_out) {
    const ExperimentConfig config = load_config(config_path);
    const Model model = build_model(config.model);
    const Dataset data = build_dataset(config.dataset);
    const ParamSet params = load_params_for(model, ckpt);
    const Batch batch = full_train_batch(data);

    const Spectrum spec = lanczos_spectrum(model, params, batch, k, seed, h);
    if (spec.breakdown) {
        std::cerr << "ssgdlab: lanczos breakdown after " << spec.iterations
                  << " iterations; spectrum is truncated\n";
    }
    write_spectrum_csv(out, spec);
    if (!density_out.empty()) {
        write_density_csv(density_out, kernel_density(spec.ritz));
    }
    std::cout << "top eigenvalue " << detail::fmt_double(spec.ritz.front()) << " ("
              << spec.ritz.size() << " ritz values) -> " << out << '\n';
    return 0;
}

int run_sharpness(const std::string& config_path, const std::string& ckpt, double eps,
                  std::size_t samples, std::size_t steps, std::uint64_t seed) {
    const ExperimentConfig config = load_config(config_path);
    const Model model = build_model(config.model);
    const Dataset data = build_dataset(config.dataset);
    const ParamSet params = load_params_for(model, ckpt);
    RngState rng = seeded_rng(seed);

    const double value =
        epsilon_sharpness(model, params, full_train_batch(data), eps, samples, steps, rng);
    std::cout << "sharpness " << detail::fmt_double(value) << " (eps "
              << detail::fmt_double(eps) << ")\n";
    return 0;
}

int run_summarize(const std::string& dir) {
    const SummaryStats s = summarize_directory(dir);
    std::cout << "n_seeds,mean_test_acc,min_test_acc,max_test_acc\n";
    std::cout << s.n_seeds << ',' << detail::fmt_double(s.mean_test_acc) << ','
              << detail::fmt_double(s.min_test_acc) << ','
              << detail::fmt_double(s.max_test_acc) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ssgdlab: symmetric weight-noise training and loss-landscape analysis"};
    app.require_subcommand(1);

    std::string config_path, out, ckpt_a, ckpt_b, ckpt_c, checkpoint, density_out, dir;
    std::string alphas_text = "-0.5:1.5:41";
    std::string x_text, y_text;
    std::size_t k = 20, samples = 20, steps = 10;
    std::uint64_t seed = 0;
    double h = 0.0, eps = 1e-3;

    CLI::App* train = app.add_subcommand("train", "train one config across its seeds");
    train->add_option("--config", config_path, "experiment config (json)")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--out", out, "output directory (overrides config and SSGDLAB_OUT)");

    CLI::App* interp =
        app.add_subcommand("interp", "1-D linear interpolation between two checkpoints");
    interp->add_option("--config", config_path, "experiment config (json)")
        ->required()
        ->check(CLI::ExistingFile);
    interp->add_option("--a", ckpt_a, "first checkpoint")->required()->check(CLI::ExistingFile);
    interp->add_option("--b", ckpt_b, "second checkpoint")->required()->check(CLI::ExistingFile);
    interp->add_option("--alphas", alphas_text, "start:stop:count (default -0.5:1.5:41)");
    interp->add_option("--out", out, "output csv")->default_val("interp.csv");

    CLI::App* surface =
        app.add_subcommand("surface", "loss surface on the plane through three checkpoints");
    surface->add_option("--config", config_path, "experiment config (json)")
        ->required()
        ->check(CLI::ExistingFile);
    surface->add_option("--a", ckpt_a, "plane origin checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    surface->add_option("--b", ckpt_b, "second checkpoint")->required()->check(CLI::ExistingFile);
    surface->add_option("--c", ckpt_c, "third checkpoint")->required()->check(CLI::ExistingFile);
    surface->add_option("--x", x_text, "x axis lo:hi:n (default: padded anchor box)");
    surface->add_option("--y", y_text, "y axis lo:hi:n (default: padded anchor box)");
    surface->add_option("--out", out, "output csv")->default_val("surface.csv");

    CLI::App* spectrum =
        app.add_subcommand("spectrum", "Lanczos Hessian eigenvalue spectrum at a checkpoint");
    spectrum->add_option("--config", config_path, "experiment config (json)")
        ->required()
        ->check(CLI::ExistingFile);
    spectrum->add_option("--checkpoint", checkpoint, "checkpoint to analyze")
        ->required()
        ->check(CLI::ExistingFile);
    spectrum->add_option("--k", k, "lanczos iterations (default 20)");
    spectrum->add_option("--seed", seed, "starting-vector seed");
    spectrum->add_option("--fd-step", h,
                         "finite-difference step (default: scaled automatically)");
    spectrum->add_option("--out", out, "output csv")->default_val("spectrum.csv");
    spectrum->add_option("--density", density_out, "also write a smoothed density csv");

    CLI::App* sharp =
        app.add_subcommand("sharpness", "epsilon-sharpness of the train loss at a checkpoint");
    sharp->add_option("--config", config_path, "experiment config (json)")
        ->required()
        ->check(CLI::ExistingFile);
    sharp->add_option("--checkpoint", checkpoint, "checkpoint to analyze")
        ->required()
        ->check(CLI::ExistingFile);
    sharp->add_option("--eps", eps, "ball radius (default 1e-3)");
    sharp->add_option("--samples", samples, "random restarts (default 20)");
    sharp->add_option("--steps", steps, "ascent steps per restart (default 10)");
    sharp->add_option("--seed", seed, "sampling seed");

    CLI::App* summarize =
        app.add_subcommand("summarize", "aggregate seed logs in a run directory");
    summarize->add_option("dir", dir, "directory containing seed*_log.csv files")->required();

    try {
        app.parse(argc, argv);
        if (*train) return run_train(config_path, out);
        if (*interp) return run_interp(config_path, ckpt_a, ckpt_b, alphas_text, out);
        if (*surface) return run_surface(config_path, ckpt_a, ckpt_b, ckpt_c, x_text, y_text, out);
        if (*spectrum) return run_spectrum(config_path, checkpoint, k, seed, h, out, density_out);
        if (*sharp) return run_sharpness(config_path, checkpoint, eps, samples, steps, seed);
        if (*summarize) return run_summarize(dir);
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "ssgdlab: error: " << e.what() << '\n';
        return 1;
    }
}
