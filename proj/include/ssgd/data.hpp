#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "ssgd/errors.hpp"
#include "ssgd/rng.hpp"
#include "ssgd/tensor.hpp"

namespace ssgd {

enum class Provenance : std::uint8_t { synthetic, idx, cifar_binary };

inline const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::synthetic: return "synthetic";
        case Provenance::idx: return "idx";
        default: return "cifar_binary";
    }
}

/// A labeled dataset with a fixed train/test split. Inputs are {N, features}
/// or {N, H, W, C}; labels are class indices in [0, num_classes).
struct Dataset {
    Tensor train_inputs;
    std::vector<int> train_labels;
    Tensor test_inputs;
    std::vector<int> test_labels;
    std::size_t num_classes = 0;
    Provenance provenance = Provenance::synthetic;

    std::size_t train_size() const { return train_labels.size(); }
    std::size_t test_size() const { return test_labels.size(); }
};

enum class SyntheticKind : std::uint8_t { blobs, spirals };

namespace detail {

/// Deterministic Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, RngState& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (n - i));
        std::swap(idx[i], idx[j]);
    }
    return idx;
}

inline Dataset split_80_20(Tensor inputs, std::vector<int> labels, std::size_t num_classes,
                           Provenance provenance, RngState* shuffle_rng) {
    const std::size_t n = labels.size();
    const std::size_t feat = inputs.size() / std::max<std::size_t>(n, 1);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (shuffle_rng) order = shuffled_indices(n, *shuffle_rng);

    const std::size_t n_train = (n * 8) / 10;
    Dataset ds;
    ds.num_classes = num_classes;
    ds.provenance = provenance;
    Shape per_example(inputs.shape().begin() + 1, inputs.shape().end());
    auto make_split = [&](std::size_t from, std::size_t count, Tensor& out_inputs,
                          std::vector<int>& out_labels) {
        Shape s{count};
        s.insert(s.end(), per_example.begin(), per_example.end());
        out_inputs = Tensor(s);
        out_labels.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t src = order[from + i];
            for (std::size_t f = 0; f < feat; ++f) {
                out_inputs[i * feat + f] = inputs[src * feat + f];
            }
            out_labels[i] = labels[src];
        }
    };
    make_split(0, n_train, ds.train_inputs, ds.train_labels);
    make_split(n_train, n - n_train, ds.test_inputs, ds.test_labels);
    return ds;
}

} // namespace detail

/// Deterministic 2-D toy datasets with round-robin class assignment (class
/// counts balanced within 1) and a seed-determined 80/20 split. blobs:
/// Gaussian clusters centered on a circle; spirals: interleaved arms.
inline Dataset gen_synthetic(SyntheticKind kind, std::size_t n, std::size_t classes,
                             double noise_std, std::uint64_t seed) {
    if (classes < 2) throw InvalidArgument("gen_synthetic: need at least 2 classes");
    if (n < classes) throw InvalidArgument("gen_synthetic: need n >= classes");
    if (noise_std < 0.0) throw InvalidArgument("gen_synthetic: negative noise_std");

    RngState rng = seeded_rng(seed);
    Tensor inputs({n, 2});
    std::vector<int> labels(n);
    const double two_pi = 2.0 * std::numbers::pi;
    std::vector<std::size_t> seen(classes, 0);
    const std::size_t per_class = (n + classes - 1) / classes;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes; // round-robin keeps classes balanced
        labels[i] = static_cast<int>(c);
        double nx, ny;
        rng.gaussian_pair(nx, ny);
        if (kind == SyntheticKind::blobs) {
            const double angle = two_pi * static_cast<double>(c) / static_cast<double>(classes);
            inputs[i * 2] = 2.0 * std::cos(angle) + noise_std * nx;
            inputs[i * 2 + 1] = 2.0 * std::sin(angle) + noise_std * ny;
        } else {
            // Arm parameter t in [0, 1): radius grows with t while the angle
            // sweeps one turn, offset per class so the arms interleave.
            const double t =
                static_cast<double>(seen[c]) / static_cast<double>(per_class);
            const double r = 0.1 + 0.9 * t;
            const double angle =
                two_pi * (t + static_cast<double>(c) / static_cast<double>(classes));
            inputs[i * 2] = r * std::cos(angle) + noise_std * nx;
            inputs[i * 2 + 1] = r * std::sin(angle) + noise_std * ny;
        }
        seen[c] += 1;
    }
    return detail::split_80_20(std::move(inputs), std::move(labels), classes,
                               Provenance::synthetic, &rng);
}

namespace detail {

inline std::uint32_t read_be32(std::istream& is, const char* what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError(std::string("idx: truncated while reading ") + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

} // namespace detail

/// Parses a big-endian IDX image/label pair (magic 0x00000803 / 0x00000801),
/// scales pixels to [0, 1], and splits 80/20 by index order. Bad magic,
/// truncation, and image/label count mismatch are distinct failure messages.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw IoError("idx: cannot open '" + images_path + "'");
    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw IoError("idx: cannot open '" + labels_path + "'");

    const std::uint32_t img_magic = detail::read_be32(imgs, "image magic");
    if (img_magic != 0x00000803u) {
        throw FormatError("idx: bad image magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%08X", img_magic);
            return std::string(buf);
        }() + " (expected 0x00000803)");
    }
    const std::uint32_t n_images = detail::read_be32(imgs, "image count");
    const std::uint32_t rows = detail::read_be32(imgs, "row count");
    const std::uint32_t cols = detail::read_be32(imgs, "column count");

    const std::uint32_t lab_magic = detail::read_be32(labs, "label magic");
    if (lab_magic != 0x00000801u) {
        throw FormatError("idx: bad label magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%08X", lab_magic);
            return std::string(buf);
        }() + " (expected 0x00000801)");
    }
    const std::uint32_t n_labels = detail::read_be32(labs, "label count");
    if (n_images != n_labels) {
        throw FormatError("idx: image/label count mismatch (" + std::to_string(n_images) +
                          " images vs " + std::to_string(n_labels) + " labels)");
    }

    const std::size_t pixels = std::size_t(n_images) * rows * cols;
    std::vector<unsigned char> raw(pixels);
    imgs.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels));
    if (!imgs) throw FormatError("idx: truncated while reading pixel data");
    std::vector<unsigned char> raw_labels(n_labels);
    labs.read(reinterpret_cast<char*>(raw_labels.data()),
              static_cast<std::streamsize>(n_labels));
    if (!labs) throw FormatError("idx: truncated while reading label data");

    Tensor inputs({n_images, rows, cols, 1});
    for (std::size_t i = 0; i < pixels; ++i) {
        inputs[i] = static_cast<double>(raw[i]) / 255.0;
    }
    std::vector<int> labels(n_labels);
    int max_label = 0;
    for (std::size_t i = 0; i < n_labels; ++i) {
        labels[i] = raw_labels[i];
        max_label = std::max(max_label, labels[i]);
    }
    return detail::split_80_20(std::move(inputs), std::move(labels),
                               static_cast<std::size_t>(max_label) + 1, Provenance::idx,
                               nullptr);
}

/// Parses CIFAR-style binary batches: 3073-byte records of 1 label byte plus
/// 32x32x3 pixels stored plane-major (all R, all G, all B). Converted to
/// NHWC, scaled to [0, 1], split 80/20 by record order across all paths.
inline Dataset load_cifar_binary(const std::vector<std::string>& paths) {
    if (paths.empty()) throw InvalidArgument("cifar: no input paths");
    constexpr std::size_t kRecord = 3073;
    constexpr std::size_t kSide = 32;
    constexpr std::size_t kPlane = kSide * kSide;

    std::vector<unsigned char> raw;
    for (const auto& path : paths) {
        std::ifstream is(path, std::ios::binary | std::ios::ate);
        if (!is) throw IoError("cifar: cannot open '" + path + "'");
        const std::streamsize len = is.tellg();
        if (len < 0 || static_cast<std::size_t>(len) % kRecord != 0) {
            throw FormatError("cifar: '" + path + "' length " + std::to_string(len) +
                              " is not a multiple of " + std::to_string(kRecord));
        }
        is.seekg(0);
        const std::size_t off = raw.size();
        raw.resize(off + static_cast<std::size_t>(len));
        is.read(reinterpret_cast<char*>(raw.data() + off), len);
        if (!is) throw IoError("cifar: read failed on '" + path + "'");
    }
    const std::size_t n = raw.size() / kRecord;
    if (n == 0) throw FormatError("cifar: no records found");

    Tensor inputs({n, kSide, kSide, 3});
    std::vector<int> labels(n);
    for (std::size_t r = 0; r < n; ++r) {
        const unsigned char* rec = raw.data() + r * kRecord;
        labels[r] = rec[0];
        const unsigned char* px = rec + 1;
        for (std::size_t y = 0; y < kSide; ++y) {
            for (std::size_t x = 0; x < kSide; ++x) {
                for (std::size_t c = 0; c < 3; ++c) {
                    inputs[((r * kSide + y) * kSide + x) * 3 + c] =
                        static_cast<double>(px[c * kPlane + y * kSide + x]) / 255.0;
                }
            }
        }
    }
    return detail::split_80_20(std::move(inputs), std::move(labels), 10,
                               Provenance::cifar_binary, nullptr);
}

} // namespace ssgd
