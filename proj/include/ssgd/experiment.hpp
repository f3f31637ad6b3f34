#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ssgd/checkpoint.hpp"
#include "ssgd/config.hpp"
#include "ssgd/landscape.hpp"
#include "ssgd/schedule.hpp"

namespace ssgd {

// ---------------------------------------------------------------------------
// Deterministic CSV serialization
// ---------------------------------------------------------------------------

namespace detail {

/// Shortest exact double rendering (%.17g round-trips; printf is locale-free
/// for the C locale the binaries run under).
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::ofstream open_out(const std::string& path) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("csv: cannot open '" + path + "' for writing");
    return os;
}

} // namespace detail

/// Per-epoch metrics; wall time deliberately lives in the timing sidecar so
/// this file is byte-identical across reruns.
inline void write_train_log_csv(const std::string& path, const TrainLog& log) {
    std::ofstream os = detail::open_out(path);
    os << "epoch,lr,train_loss,train_acc,test_loss,test_acc,forward_passes,backward_passes\n";
    for (const TrainLogRow& r : log.rows) {
        os << r.epoch << ',' << detail::fmt_double(r.lr) << ','
           << detail::fmt_double(r.train_loss) << ',' << detail::fmt_double(r.train_acc)
           << ',' << detail::fmt_double(r.test_loss) << ',' << detail::fmt_double(r.test_acc)
           << ',' << r.forward_passes << ',' << r.backward_passes << '\n';
    }
    if (!os) throw IoError("csv: write failed on '" + path + "'");
}

inline void write_timing_csv(const std::string& path, const TrainLog& log) {
    std::ofstream os = detail::open_out(path);
    os << "epoch,wall_time_sec\n";
    for (const TrainLogRow& r : log.rows) {
        os << r.epoch << ',' << detail::fmt_double(r.wall_time_sec) << '\n';
    }
    if (!os) throw IoError("csv: write failed on '" + path + "'");
}

inline void write_curve_csv(const std::string& path, const Curve1D& curve) {
    std::ofstream os = detail::open_out(path);
    os << "alpha,train_loss,train_mcr,test_loss,test_mcr\n";
    for (const CurvePoint& p : curve.points) {
        os << detail::fmt_double(p.alpha) << ',' << detail::fmt_double(p.train_loss) << ','
           << detail::fmt_double(p.train_mcr) << ',' << detail::fmt_double(p.test_loss) << ','
           << detail::fmt_double(p.test_mcr) << '\n';
    }
    if (!os) throw IoError("csv: write failed on '" + path + "'");
}

inline void write_surface_csv(const std::string& path, const SurfaceGrid& grid) {
    std::ofstream os = detail::open_out(path);
    os << "x,y,train_loss,train_mcr,test_loss,test_mcr\n";
    for (std::size_t iy = 0; iy < grid.ny(); ++iy) {
        for (std::size_t ix = 0; ix < grid.nx(); ++ix) {
            const std::size_t i = iy * grid.nx() + ix;
            os << detail::fmt_double(grid.xs[ix]) << ',' << detail::fmt_double(grid.ys[iy])
               << ',' << detail::fmt_double(grid.train_loss[i]) << ','
               << detail::fmt_double(grid.train_mcr[i]) << ','
               << detail::fmt_double(grid.test_loss[i]) << ','
               << detail::fmt_double(grid.test_mcr[i]) << '\n';
        }
    }
    if (!os) throw IoError("csv: write failed on '" + path + "'");
}

inline void write_anchors_csv(const std::string& path, const SurfaceGrid& grid) {
    std::ofstream os = detail::open_out(path);
    os << "anchor,x,y\n";
    for (std::size_t i = 0; i < grid.anchors.size(); ++i) {
        os << i << ',' << detail::fmt_double(grid.anchors[i][0]) << ','
           << detail::fmt_double(grid.anchors[i][1]) << '\n';
    }
    if (!os) throw IoError("csv: write failed on '" + path + "'");
}

inline void write_spectrum_csv(const std::string& path, const Spectrum& spec) {
    std::ofstream os = detail::open_out(path);
    os << "index,ritz_value\n";
    for (std::size_t i = 0; i < spec.ritz.size(); ++i) {
        os << i << ',' << detail::fmt_double(spec.ritz[i]) << '\n';
    }
    if (!os) throw IoError("csv: write failed on '" + path + "'");
}

inline void write_density_csv(const std::string& path, const Density& d) {
    std::ofstream os = detail::open_out(path);
    os << "eigenvalue,density\n";
    for (std::size_t i = 0; i < d.xs.size(); ++i) {
        os << detail::fmt_double(d.xs[i]) << ',' << detail::fmt_double(d.ys[i]) << '\n';
    }
    if (!os) throw IoError("csv: write failed on '" + path + "'");
}

// ---------------------------------------------------------------------------
// Multi-seed experiment orchestration
// ---------------------------------------------------------------------------

struct SeedOutcome {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;          // quarantined reason when !ok
    TrainLog log;
    std::string checkpoint_path;
    double final_test_acc = 0.0;
};

struct SummaryStats {
    std::size_t n_seeds = 0; // successful seeds
    double mean_test_acc = 0.0;
    double min_test_acc = 0.0;
    double max_test_acc = 0.0;
    std::vector<std::pair<std::uint64_t, std::string>> failures;
};

inline SummaryStats summarize_accuracies(const std::vector<double>& accs) {
    SummaryStats s;
    s.n_seeds = accs.size();
    if (accs.empty()) return s;
    double sum = 0.0;
    s.min_test_acc = accs.front();
    s.max_test_acc = accs.front();
    for (double a : accs) {
        sum += a;
        s.min_test_acc = std::min(s.min_test_acc, a);
        s.max_test_acc = std::max(s.max_test_acc, a);
    }
    s.mean_test_acc = sum / static_cast<double>(accs.size());
    return s;
}

inline void write_summary_csv(const std::string& path, const SummaryStats& s) {
    std::ofstream os = detail::open_out(path);
    os << "n_seeds,mean_test_acc,min_test_acc,max_test_acc,n_failed\n";
    os << s.n_seeds << ',' << detail::fmt_double(s.mean_test_acc) << ','
       << detail::fmt_double(s.min_test_acc) << ',' << detail::fmt_double(s.max_test_acc)
       << ',' << s.failures.size() << '\n';
    for (const auto& [seed, why] : s.failures) {
        os << "# failed seed " << seed << ": " << why << '\n';
    }
    if (!os) throw IoError("csv: write failed on '" + path + "'");
}

struct ExperimentResult {
    std::vector<SeedOutcome> seeds;
    SummaryStats summary;
    std::string output_dir;
};

/// Runs the config once per seed: deterministic data, per-seed rng,
/// phase-schedule training, per-epoch logs, final checkpoint. A failing seed
/// is recorded in the summary and skipped, never fatal to the batch.
inline ExperimentResult run_experiment(const ExperimentConfig& config,
                                       const std::string& out_override = "") {
    const std::string out_dir = resolve_output_dir(config, out_override);
    std::filesystem::create_directories(out_dir);

    const Model model = build_model(config.model);
    const Dataset data = build_dataset(config.dataset);
    PhaseSchedule phases = parse_phase_schedule(config.phases);
    phases.set_noise(config.noise);

    ExperimentResult result;
    result.output_dir = out_dir;
    std::vector<double> accs;
    for (std::uint64_t seed : config.seeds) {
        SeedOutcome outcome;
        outcome.seed = seed;
        try {
            RngState rng = seeded_rng(seed);
            ParamSet params = model.init_params(rng);
            RunResult run = run_phase_schedule(model, std::move(params), phases, data,
                                               config.batch_size, config.hyper,
                                               config.lr_schedule, rng);
            const std::string base = out_dir + "/seed" + std::to_string(seed);
            write_train_log_csv(base + "_log.csv", run.log);
            write_timing_csv(base + "_timing.csv", run.log);
            save_checkpoint(base + ".ckpt", run.params);
            outcome.ok = true;
            outcome.log = std::move(run.log);
            outcome.checkpoint_path = base + ".ckpt";
            outcome.final_test_acc = outcome.log.rows.back().test_acc;
            accs.push_back(outcome.final_test_acc);
        } catch (const std::exception& e) {
            outcome.ok = false;
            outcome.error = e.what();
        }
        result.seeds.push_back(std::move(outcome));
    }

    result.summary = summarize_accuracies(accs);
    for (const SeedOutcome& s : result.seeds) {
        if (!s.ok) result.summary.failures.emplace_back(s.seed, s.error);
    }
    write_summary_csv(out_dir + "/summary.csv", result.summary);
    return result;
}

/// Rebuilds a summary from the seed logs already in a directory (final
/// test_acc column of each seed*_log.csv).
inline SummaryStats summarize_directory(const std::string& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("summarize: '" + dir + "' is not a directory");
    }
    std::vector<std::filesystem::path> logs;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("seed", 0) == 0 && name.size() > 8 &&
            name.compare(name.size() - 8, 8, "_log.csv") == 0) {
            logs.push_back(entry.path());
        }
    }
    std::sort(logs.begin(), logs.end());
    if (logs.empty()) throw FormatError("summarize: no seed*_log.csv files in '" + dir + "'");

    std::vector<double> accs;
    for (const auto& path : logs) {
        std::ifstream is(path);
        if (!is) throw IoError("summarize: cannot open '" + path.string() + "'");
        std::string line, last;
        std::getline(is, line); // header
        if (line.rfind("epoch,", 0) != 0) {
            throw FormatError("summarize: '" + path.string() + "' is not a train log");
        }
        while (std::getline(is, line)) {
            if (!line.empty()) last = line;
        }
        if (last.empty()) {
            throw FormatError("summarize: '" + path.string() + "' has no data rows");
        }
        // test_acc is column 6 of epoch,lr,train_loss,train_acc,test_loss,test_acc,...
        std::size_t pos = 0;
        for (int c = 0; c < 5; ++c) {
            pos = last.find(',', pos);
            if (pos == std::string::npos) {
                throw FormatError("summarize: malformed row in '" + path.string() + "'");
            }
            ++pos;
        }
        accs.push_back(std::stod(last.substr(pos)));
    }
    return summarize_accuracies(accs);
}

} // namespace ssgd
