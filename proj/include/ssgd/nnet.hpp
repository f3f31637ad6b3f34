#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssgd/errors.hpp"
#include "ssgd/params.hpp"
#include "ssgd/rng.hpp"
#include "ssgd/tensor.hpp"

namespace ssgd {

enum class Mode { train, eval };

enum class LayerKind : std::uint8_t {
    dense,
    conv2d,
    relu,
    flatten,
    mean_pool,
    dropout,
    dropconnect,
};

enum class Padding : std::uint8_t { valid, same };

/// One layer of a feed-forward model. Field use depends on kind:
///   dense:       in, out
///   conv2d:      kh, kw, cin, cout, stride, padding
///   mean_pool:   window (non-overlapping, extents must divide)
///   dropout:     p (drop probability of a unit)
///   dropconnect: p (drop probability of a weight; masks the next
///                parametered layer's weight group)
struct LayerSpec {
    LayerKind kind;
    std::size_t in = 0, out = 0;
    std::size_t kh = 0, kw = 0, cin = 0, cout = 0, stride = 1;
    Padding padding = Padding::valid;
    std::size_t window = 2;
    double p = 0.0;

    static LayerSpec dense(std::size_t in, std::size_t out) {
        LayerSpec s{LayerKind::dense};
        s.in = in;
        s.out = out;
        return s;
    }
    static LayerSpec conv2d(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout,
                            std::size_t stride = 1, Padding padding = Padding::valid) {
        LayerSpec s{LayerKind::conv2d};
        s.kh = kh;
        s.kw = kw;
        s.cin = cin;
        s.cout = cout;
        s.stride = stride;
        s.padding = padding;
        return s;
    }
    static LayerSpec relu() { return LayerSpec{LayerKind::relu}; }
    static LayerSpec flatten() { return LayerSpec{LayerKind::flatten}; }
    static LayerSpec mean_pool(std::size_t window) {
        LayerSpec s{LayerKind::mean_pool};
        s.window = window;
        return s;
    }
    static LayerSpec dropout(double p) {
        LayerSpec s{LayerKind::dropout};
        s.p = p;
        return s;
    }
    static LayerSpec dropconnect(double p) {
        LayerSpec s{LayerKind::dropconnect};
        s.p = p;
        return s;
    }
};

/// Bernoulli keep-mask with inverted scaling: entries are 1/(1-p) with
/// probability 1-p, else 0, so the evaluation path needs no rescale.
inline Tensor dropout_mask(double p, const Shape& shape, RngState& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw InvalidArgument("dropout_mask: p must be in [0, 1), got " + std::to_string(p));
    }
    Tensor mask(shape);
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = (rng.next_double() >= p) ? keep_scale : 0.0;
    }
    return mask;
}

/// DropConnect keep-mask over a weight group (same convention as dropout_mask).
inline Tensor dropconnect_mask(double p, const ParamGroup& group, RngState& rng) {
    return dropout_mask(p, group.values.shape(), rng);
}

/// Feed-forward model: a validated layer sequence with softmax cross-entropy
/// loss. Construction resolves every layer's input/output shape, assigns
/// parameter group names, and attaches dropconnect layers to the following
/// dense/conv layer.
class Model {
public:
    Model(Shape input_shape, std::vector<LayerSpec> layers)
        : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
        resolve_shapes();
    }

    const Shape& input_shape() const { return input_shape_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    std::size_t num_classes() const { return num_classes_; }

    /// Per-example output shape of layer i.
    const Shape& output_shape(std::size_t i) const { return out_shapes_[i]; }

    /// Xavier-initialized weights (std = sqrt(1/fan_in), zero biases),
    /// deterministic from rng. The classifier (last parametered) layer is
    /// scaled down a further 10x so the untrained predictive distribution
    /// is near-uniform while every weight group's norm stays nonzero (the
    /// norm-proportional noise rule divides by it).
    ParamSet init_params(RngState& rng) const {
        std::size_t last_parametered = SIZE_MAX;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (layers_[i].kind == LayerKind::dense || layers_[i].kind == LayerKind::conv2d) {
                last_parametered = i;
            }
        }
        ParamSet params;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const LayerSpec& l = layers_[i];
            const double head_scale = (i == last_parametered) ? 0.1 : 1.0;
            if (l.kind == LayerKind::dense) {
                const double std = head_scale * std::sqrt(1.0 / static_cast<double>(l.in));
                Tensor w = gaussian(rng, l.out * l.in);
                for (auto& v : w.values()) v *= std;
                params.add(group_name(i, "w"), ParamKind::dense,
                           Tensor({l.out, l.in}, std::move(w.values())));
                params.add(group_name(i, "b"), ParamKind::bias, Tensor::zeros({l.out}));
            } else if (l.kind == LayerKind::conv2d) {
                const double fan_in = static_cast<double>(l.kh * l.kw * l.cin);
                const double std = head_scale * std::sqrt(1.0 / fan_in);
                Tensor w = gaussian(rng, l.kh * l.kw * l.cin * l.cout);
                for (auto& v : w.values()) v *= std;
                params.add(group_name(i, "k"), ParamKind::conv,
                           Tensor({l.kh, l.kw, l.cin, l.cout}, std::move(w.values())));
                params.add(group_name(i, "b"), ParamKind::bias, Tensor::zeros({l.cout}));
            }
        }
        return params;
    }

    std::string group_name(std::size_t layer_index, const char* suffix) const {
        const char* base = layers_[layer_index].kind == LayerKind::dense ? "dense" : "conv";
        return std::string(base) + std::to_string(layer_index) + "/" + suffix;
    }

    /// Index into the ParamSet of layer i's weight group (w then b).
    std::size_t weight_index(std::size_t layer_index) const { return weight_slot_[layer_index]; }

    /// Layer index of the dense/conv layer a dropconnect layer masks.
    std::size_t dropconnect_target(std::size_t layer_index) const {
        return dropconnect_target_[layer_index];
    }

private:
    void resolve_shapes() {
        Shape cur = input_shape_;
        out_shapes_.resize(layers_.size());
        weight_slot_.assign(layers_.size(), SIZE_MAX);
        dropconnect_target_.assign(layers_.size(), SIZE_MAX);
        std::size_t slot = 0;
        std::optional<std::size_t> pending_dropconnect;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const LayerSpec& l = layers_[i];
            switch (l.kind) {
                case LayerKind::dense:
                    if (cur.size() != 1 || cur[0] != l.in) {
                        throw ShapeError("layer " + std::to_string(i) + " (dense): expects (" +
                                         std::to_string(l.in) + "), got " + shape_str(cur));
                    }
                    cur = {l.out};
                    weight_slot_[i] = slot;
                    slot += 2;
                    if (pending_dropconnect) {
                        dropconnect_target_[*pending_dropconnect] = i;
                        pending_dropconnect.reset();
                    }
                    break;
                case LayerKind::conv2d: {
                    if (cur.size() != 3 || cur[2] != l.cin) {
                        throw ShapeError("layer " + std::to_string(i) +
                                         " (conv2d): expects (HxWx" + std::to_string(l.cin) +
                                         "), got " + shape_str(cur));
                    }
                    if (l.stride < 1 || l.stride > 2) {
                        throw InvalidArgument("conv2d: stride must be 1 or 2");
                    }
                    const auto [oh, ow] = conv_output_hw(cur[0], cur[1], l);
                    if (oh == 0 || ow == 0) {
                        throw ShapeError("layer " + std::to_string(i) +
                                         " (conv2d): kernel larger than input " + shape_str(cur));
                    }
                    cur = {oh, ow, l.cout};
                    weight_slot_[i] = slot;
                    slot += 2;
                    if (pending_dropconnect) {
                        dropconnect_target_[*pending_dropconnect] = i;
                        pending_dropconnect.reset();
                    }
                    break;
                }
                case LayerKind::relu:
                    break;
                case LayerKind::flatten:
                    cur = {shape_numel(cur)};
                    break;
                case LayerKind::mean_pool:
                    if (cur.size() != 3) {
                        throw ShapeError("layer " + std::to_string(i) +
                                         " (mean_pool): expects (HxWxC), got " + shape_str(cur));
                    }
                    if (l.window == 0 || cur[0] % l.window != 0 || cur[1] % l.window != 0) {
                        throw ShapeError("layer " + std::to_string(i) + " (mean_pool): window " +
                                         std::to_string(l.window) + " does not divide " +
                                         shape_str(cur));
                    }
                    cur = {cur[0] / l.window, cur[1] / l.window, cur[2]};
                    break;
                case LayerKind::dropout:
                    if (l.p < 0.0 || l.p >= 1.0) {
                        throw InvalidArgument("dropout: p must be in [0, 1)");
                    }
                    break;
                case LayerKind::dropconnect:
                    if (l.p < 0.0 || l.p >= 1.0) {
                        throw InvalidArgument("dropconnect: p must be in [0, 1)");
                    }
                    pending_dropconnect = i;
                    break;
            }
            out_shapes_[i] = cur;
        }
        if (pending_dropconnect) {
            throw InvalidArgument("dropconnect layer has no following dense/conv layer");
        }
        if (cur.size() != 1) {
            throw ShapeError("model must end with a rank-1 logits layer, got " + shape_str(cur));
        }
        num_classes_ = cur[0];
    }

    static std::pair<std::size_t, std::size_t> conv_output_hw(std::size_t h, std::size_t w,
                                                              const LayerSpec& l) {
        if (l.padding == Padding::same) {
            return {(h + l.stride - 1) / l.stride, (w + l.stride - 1) / l.stride};
        }
        if (h < l.kh || w < l.kw) return {0, 0};
        return {(h - l.kh) / l.stride + 1, (w - l.kw) / l.stride + 1};
    }

    Shape input_shape_;
    std::vector<LayerSpec> layers_;
    std::vector<Shape> out_shapes_;
    std::vector<std::size_t> weight_slot_;
    std::vector<std::size_t> dropconnect_target_;
    std::size_t num_classes_ = 0;
};

struct Batch {
    Tensor inputs;           // {B, per-example shape...}
    std::vector<int> labels; // values in [0, num_classes)

    std::size_t size() const { return labels.size(); }
};

struct EvalResult {
    double loss;
    Tensor logits; // {B, C}
};

struct GradResult {
    double loss;
    Gradients grads;
    Tensor logits;
};

namespace detail {

inline Shape batch_shape(const Shape& per_example, std::size_t b) {
    Shape s{b};
    s.insert(s.end(), per_example.begin(), per_example.end());
    return s;
}

} // namespace detail

// Implementation of the forward/backward passes. The Trace captures each
// layer's input (and mask, when stochastic) so backward shares the exact
// masks drawn in forward.
namespace detail {

struct LayerRecord {
    Tensor input;  // layer input, {B, ...}
    Tensor mask;   // dropout mask or dropconnect weight mask; empty if none
};

struct Trace {
    std::vector<LayerRecord> records;
    Tensor logits;
};

inline void dense_forward(const LayerSpec& l, const Tensor& x, const Tensor& w, const Tensor& b,
                          const Tensor* wmask, Tensor& y) {
    const std::size_t bsz = x.extent(0);
    y = Tensor({bsz, l.out});
    for (std::size_t n = 0; n < bsz; ++n) {
        for (std::size_t o = 0; o < l.out; ++o) {
            double acc = b[o];
            const std::size_t wrow = o * l.in;
            for (std::size_t i = 0; i < l.in; ++i) {
                double wv = w[wrow + i];
                if (wmask) wv *= (*wmask)[wrow + i];
                acc += x[n * l.in + i] * wv;
            }
            y[n * l.out + o] = acc;
        }
    }
}

inline void dense_backward(const LayerSpec& l, const Tensor& x, const Tensor& w,
                           const Tensor* wmask, const Tensor& dy, Tensor& dw, Tensor& db,
                           Tensor& dx) {
    const std::size_t bsz = x.extent(0);
    dw = Tensor({l.out, l.in});
    db = Tensor({l.out});
    dx = Tensor({bsz, l.in});
    for (std::size_t n = 0; n < bsz; ++n) {
        for (std::size_t o = 0; o < l.out; ++o) {
            const double g = dy[n * l.out + o];
            db[o] += g;
            const std::size_t wrow = o * l.in;
            for (std::size_t i = 0; i < l.in; ++i) {
                dw[wrow + i] += g * x[n * l.in + i];
                double wv = w[wrow + i];
                if (wmask) wv *= (*wmask)[wrow + i];
                dx[n * l.in + i] += g * wv;
            }
        }
    }
    if (wmask) {
        // d(w * m)/dw = m: route the gradient through the same mask.
        for (std::size_t i = 0; i < dw.size(); ++i) dw[i] *= (*wmask)[i];
    }
}

struct ConvGeometry {
    std::size_t h, w, oh, ow;
    long pad_top, pad_left;
};

inline ConvGeometry conv_geometry(const LayerSpec& l, const Shape& in_shape) {
    ConvGeometry g{};
    g.h = in_shape[1];
    g.w = in_shape[2];
    if (l.padding == Padding::same) {
        g.oh = (g.h + l.stride - 1) / l.stride;
        g.ow = (g.w + l.stride - 1) / l.stride;
        const long pad_h =
            std::max<long>(0, static_cast<long>((g.oh - 1) * l.stride + l.kh) - static_cast<long>(g.h));
        const long pad_w =
            std::max<long>(0, static_cast<long>((g.ow - 1) * l.stride + l.kw) - static_cast<long>(g.w));
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    } else {
        g.oh = (g.h - l.kh) / l.stride + 1;
        g.ow = (g.w - l.kw) / l.stride + 1;
        g.pad_top = 0;
        g.pad_left = 0;
    }
    return g;
}

inline void conv_forward(const LayerSpec& l, const Tensor& x, const Tensor& k, const Tensor& b,
                         const Tensor* kmask, Tensor& y) {
    const std::size_t bsz = x.extent(0);
    const ConvGeometry g = conv_geometry(l, x.shape());
    y = Tensor({bsz, g.oh, g.ow, l.cout});
    const std::size_t cin = l.cin, cout = l.cout;
    for (std::size_t n = 0; n < bsz; ++n) {
        const double* xin = x.data() + n * g.h * g.w * cin;
        double* yout = y.data() + n * g.oh * g.ow * cout;
        for (std::size_t oh = 0; oh < g.oh; ++oh) {
            for (std::size_t ow = 0; ow < g.ow; ++ow) {
                double* ycell = yout + (oh * g.ow + ow) * cout;
                for (std::size_t oc = 0; oc < cout; ++oc) ycell[oc] = b[oc];
                for (std::size_t kh = 0; kh < l.kh; ++kh) {
                    const long ih = static_cast<long>(oh * l.stride + kh) - g.pad_top;
                    if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
                    for (std::size_t kw = 0; kw < l.kw; ++kw) {
                        const long iw = static_cast<long>(ow * l.stride + kw) - g.pad_left;
                        if (iw < 0 || iw >= static_cast<long>(g.w)) continue;
                        const double* xcell = xin + (ih * g.w + iw) * cin;
                        const std::size_t koff = (kh * l.kw + kw) * cin * cout;
                        for (std::size_t ic = 0; ic < cin; ++ic) {
                            const double xv = xcell[ic];
                            if (xv == 0.0) continue;
                            const std::size_t krow = koff + ic * cout;
                            for (std::size_t oc = 0; oc < cout; ++oc) {
                                double kv = k[krow + oc];
                                if (kmask) kv *= (*kmask)[krow + oc];
                                ycell[oc] += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
}

inline void conv_backward(const LayerSpec& l, const Tensor& x, const Tensor& k,
                          const Tensor* kmask, const Tensor& dy, Tensor& dk, Tensor& db,
                          Tensor& dx) {
    const std::size_t bsz = x.extent(0);
    const ConvGeometry g = conv_geometry(l, x.shape());
    const std::size_t cin = l.cin, cout = l.cout;
    dk = Tensor(k.shape());
    db = Tensor({cout});
    dx = Tensor(x.shape());
    for (std::size_t n = 0; n < bsz; ++n) {
        const double* xin = x.data() + n * g.h * g.w * cin;
        double* dxin = dx.data() + n * g.h * g.w * cin;
        const double* dyout = dy.data() + n * g.oh * g.ow * cout;
        for (std::size_t oh = 0; oh < g.oh; ++oh) {
            for (std::size_t ow = 0; ow < g.ow; ++ow) {
                const double* dycell = dyout + (oh * g.ow + ow) * cout;
                for (std::size_t oc = 0; oc < cout; ++oc) db[oc] += dycell[oc];
                for (std::size_t kh = 0; kh < l.kh; ++kh) {
                    const long ih = static_cast<long>(oh * l.stride + kh) - g.pad_top;
                    if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
                    for (std::size_t kw = 0; kw < l.kw; ++kw) {
                        const long iw = static_cast<long>(ow * l.stride + kw) - g.pad_left;
                        if (iw < 0 || iw >= static_cast<long>(g.w)) continue;
                        const double* xcell = xin + (ih * g.w + iw) * cin;
                        double* dxcell = dxin + (ih * g.w + iw) * cin;
                        const std::size_t koff = (kh * l.kw + kw) * cin * cout;
                        for (std::size_t ic = 0; ic < cin; ++ic) {
                            const std::size_t krow = koff + ic * cout;
                            double dxacc = 0.0;
                            for (std::size_t oc = 0; oc < cout; ++oc) {
                                const double gy = dycell[oc];
                                dk[krow + oc] += gy * xcell[ic];
                                double kv = k[krow + oc];
                                if (kmask) kv *= (*kmask)[krow + oc];
                                dxacc += gy * kv;
                            }
                            dxcell[ic] += dxacc;
                        }
                    }
                }
            }
        }
    }
    if (kmask) {
        for (std::size_t i = 0; i < dk.size(); ++i) dk[i] *= (*kmask)[i];
    }
}

inline Trace run_forward(const Model& model, const ParamSet& params, const Batch& batch,
                         Mode mode, RngState& rng) {
    const Shape expect = batch_shape(model.input_shape(), batch.size());
    if (batch.inputs.shape() != expect) {
        throw ShapeError("forward: batch inputs " + shape_str(batch.inputs.shape()) +
                         " do not match " + shape_str(expect));
    }
    if (batch.size() == 0) throw InvalidArgument("forward: empty batch");

    const auto& layers = model.layers();
    Trace trace;
    trace.records.resize(layers.size());

    // Dropconnect masks are drawn at the dropconnect layer's position in the
    // sequence (rng order matches layer order) and applied at the target.
    std::vector<Tensor> pending_wmask(layers.size());

    Tensor cur = batch.inputs;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        LayerRecord& rec = trace.records[i];
        switch (l.kind) {
            case LayerKind::dense: {
                rec.input = cur;
                const Tensor& w = params.group(model.weight_index(i)).values;
                const Tensor& b = params.group(model.weight_index(i) + 1).values;
                const Tensor* wmask =
                    pending_wmask[i].size() ? (rec.mask = pending_wmask[i], &rec.mask) : nullptr;
                Tensor y;
                dense_forward(l, cur, w, b, wmask, y);
                cur = std::move(y);
                break;
            }
            case LayerKind::conv2d: {
                rec.input = cur;
                const Tensor& k = params.group(model.weight_index(i)).values;
                const Tensor& b = params.group(model.weight_index(i) + 1).values;
                const Tensor* kmask =
                    pending_wmask[i].size() ? (rec.mask = pending_wmask[i], &rec.mask) : nullptr;
                Tensor y;
                conv_forward(l, cur, k, b, kmask, y);
                cur = std::move(y);
                break;
            }
            case LayerKind::relu: {
                rec.input = cur;
                Tensor y(cur.shape());
                for (std::size_t j = 0; j < cur.size(); ++j) y[j] = cur[j] > 0.0 ? cur[j] : 0.0;
                cur = std::move(y);
                break;
            }
            case LayerKind::flatten: {
                rec.input = Tensor(cur.shape()); // only the shape is needed
                cur = Tensor({batch.size(), shape_numel(cur.shape()) / batch.size()},
                             std::move(cur.values()));
                break;
            }
            case LayerKind::mean_pool: {
                rec.input = Tensor(cur.shape());
                const std::size_t h = cur.extent(1), w = cur.extent(2), c = cur.extent(3);
                const std::size_t wnd = l.window, oh = h / wnd, ow = w / wnd;
                Tensor y({batch.size(), oh, ow, c});
                const double inv = 1.0 / static_cast<double>(wnd * wnd);
                for (std::size_t n = 0; n < batch.size(); ++n)
                    for (std::size_t y0 = 0; y0 < oh; ++y0)
                        for (std::size_t x0 = 0; x0 < ow; ++x0)
                            for (std::size_t ch = 0; ch < c; ++ch) {
                                double acc = 0.0;
                                for (std::size_t dy = 0; dy < wnd; ++dy)
                                    for (std::size_t dx = 0; dx < wnd; ++dx)
                                        acc += cur[((n * h + y0 * wnd + dy) * w + x0 * wnd + dx) *
                                                       c +
                                                   ch];
                                y[((n * oh + y0) * ow + x0) * c + ch] = acc * inv;
                            }
                cur = std::move(y);
                break;
            }
            case LayerKind::dropout: {
                if (mode == Mode::train && l.p > 0.0) {
                    rec.mask = dropout_mask(l.p, cur.shape(), rng);
                    Tensor y(cur.shape());
                    for (std::size_t j = 0; j < cur.size(); ++j) y[j] = cur[j] * rec.mask[j];
                    cur = std::move(y);
                }
                break;
            }
            case LayerKind::dropconnect: {
                if (mode == Mode::train && l.p > 0.0) {
                    const std::size_t target = model.dropconnect_target(i);
                    const ParamGroup& wg = params.group(model.weight_index(target));
                    pending_wmask[target] = dropconnect_mask(l.p, wg, rng);
                }
                break;
            }
        }
    }
    trace.logits = std::move(cur);
    return trace;
}

/// Mean softmax cross-entropy over the batch; writes dlogits (d mean-loss /
/// d logits) when requested.
inline double softmax_xent(const Tensor& logits, const std::vector<int>& labels,
                           Tensor* dlogits) {
    const std::size_t bsz = labels.size();
    const std::size_t c = logits.extent(1);
    if (dlogits) *dlogits = Tensor(logits.shape());
    double total = 0.0;
    for (std::size_t n = 0; n < bsz; ++n) {
        const double* z = logits.data() + n * c;
        const int label = labels[n];
        if (label < 0 || static_cast<std::size_t>(label) >= c) {
            throw InvalidArgument("loss: label " + std::to_string(label) + " outside [0, " +
                                  std::to_string(c) + ")");
        }
        double zmax = z[0];
        for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, z[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - zmax);
        const double logsum = std::log(sum) + zmax;
        total += logsum - z[label];
        if (dlogits) {
            double* d = dlogits->data() + n * c;
            const double invb = 1.0 / static_cast<double>(bsz);
            for (std::size_t j = 0; j < c; ++j) {
                const double p = std::exp(z[j] - logsum);
                d[j] = (p - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) * invb;
            }
        }
    }
    const double loss = total / static_cast<double>(bsz);
    if (!std::isfinite(loss)) throw NumericError("loss: numeric overflow (non-finite loss)");
    return loss;
}

} // namespace detail

/// Mean batch loss and logits. Train mode draws any dropout/dropconnect
/// masks from rng; eval mode never touches rng and applies no masks.
inline EvalResult forward(const Model& model, const ParamSet& params, const Batch& batch,
                          Mode mode, RngState& rng) {
    detail::Trace trace = detail::run_forward(model, params, batch, mode, rng);
    const double loss = detail::softmax_xent(trace.logits, batch.labels, nullptr);
    return {loss, std::move(trace.logits)};
}

inline EvalResult forward(const Model& model, const ParamSet& params, const Batch& batch) {
    RngState unused(0);
    return forward(model, params, batch, Mode::eval, unused);
}

/// Exact reverse-mode gradient of the mean batch loss. Masks drawn in the
/// forward half are reused in the backward half of the same call.
inline GradResult grad(const Model& model, const ParamSet& params, const Batch& batch, Mode mode,
                       RngState& rng) {
    detail::Trace trace = detail::run_forward(model, params, batch, mode, rng);
    Tensor delta;
    const double loss = detail::softmax_xent(trace.logits, batch.labels, &delta);

    Gradients grads = params.zeros_like();
    const auto& layers = model.layers();
    for (std::size_t ri = layers.size(); ri-- > 0;) {
        const LayerSpec& l = layers[ri];
        const detail::LayerRecord& rec = trace.records[ri];
        switch (l.kind) {
            case LayerKind::dense: {
                const Tensor& w = params.group(model.weight_index(ri)).values;
                const Tensor* wmask = rec.mask.size() ? &rec.mask : nullptr;
                Tensor dw, db, dx;
                detail::dense_backward(l, rec.input, w, wmask, delta, dw, db, dx);
                grads.group(model.weight_index(ri)).values = std::move(dw);
                grads.group(model.weight_index(ri) + 1).values = std::move(db);
                delta = std::move(dx);
                break;
            }
            case LayerKind::conv2d: {
                const Tensor& k = params.group(model.weight_index(ri)).values;
                const Tensor* kmask = rec.mask.size() ? &rec.mask : nullptr;
                Tensor dk, db, dx;
                detail::conv_backward(l, rec.input, k, kmask, delta, dk, db, dx);
                grads.group(model.weight_index(ri)).values = std::move(dk);
                grads.group(model.weight_index(ri) + 1).values = std::move(db);
                delta = std::move(dx);
                break;
            }
            case LayerKind::relu: {
                Tensor dx(rec.input.shape());
                for (std::size_t j = 0; j < dx.size(); ++j)
                    dx[j] = rec.input[j] > 0.0 ? delta[j] : 0.0;
                delta = std::move(dx);
                break;
            }
            case LayerKind::flatten: {
                delta = Tensor(rec.input.shape(), std::move(delta.values()));
                break;
            }
            case LayerKind::mean_pool: {
                const Shape& in_shape = rec.input.shape();
                const std::size_t h = in_shape[1], w = in_shape[2], c = in_shape[3];
                const std::size_t wnd = l.window, oh = h / wnd, ow = w / wnd;
                Tensor dx(in_shape);
                const double inv = 1.0 / static_cast<double>(wnd * wnd);
                for (std::size_t n = 0; n < batch.size(); ++n)
                    for (std::size_t y0 = 0; y0 < oh; ++y0)
                        for (std::size_t x0 = 0; x0 < ow; ++x0)
                            for (std::size_t ch = 0; ch < c; ++ch) {
                                const double g =
                                    delta[((n * oh + y0) * ow + x0) * c + ch] * inv;
                                for (std::size_t dy = 0; dy < wnd; ++dy)
                                    for (std::size_t dx2 = 0; dx2 < wnd; ++dx2)
                                        dx[((n * h + y0 * wnd + dy) * w + x0 * wnd + dx2) * c +
                                           ch] = g;
                            }
                delta = std::move(dx);
                break;
            }
            case LayerKind::dropout: {
                if (rec.mask.size()) {
                    Tensor dx(rec.mask.shape());
                    for (std::size_t j = 0; j < dx.size(); ++j) dx[j] = delta[j] * rec.mask[j];
                    delta = std::move(dx);
                }
                break;
            }
            case LayerKind::dropconnect:
                break; // handled inside the target layer's backward
        }
    }
    if (!all_finite(grads)) throw NumericError("grad: non-finite gradient");
    return {loss, std::move(grads), std::move(trace.logits)};
}

inline GradResult grad(const Model& model, const ParamSet& params, const Batch& batch) {
    RngState unused(0);
    return grad(model, params, batch, Mode::eval, unused);
}

/// Central-difference gradient oracle over an arbitrary scalar objective:
/// (f(w + h e) - f(w - h e)) / 2h per coordinate.
template <typename Objective>
Gradients finite_diff_grad(Objective&& objective, const ParamSet& params, double h) {
    if (h <= 0.0) throw InvalidArgument("finite_diff_grad: h must be > 0");
    ParamSet probe = params;
    Gradients out = params.zeros_like();
    for (std::size_t gi = 0; gi < probe.group_count(); ++gi) {
        Tensor& values = probe.group(gi).values;
        Tensor& slot = out.group(gi).values;
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double orig = values[j];
            values[j] = orig + h;
            const double lp = objective(static_cast<const ParamSet&>(probe));
            values[j] = orig - h;
            const double lm = objective(static_cast<const ParamSet&>(probe));
            values[j] = orig;
            slot[j] = (lp - lm) / (2.0 * h);
        }
    }
    return out;
}

/// Central-difference gradient oracle for a model's mean batch loss, eval
/// mode. Only uses the loss path, never the backward pass.
inline Gradients finite_diff_grad(const Model& model, const ParamSet& params, const Batch& batch,
                                  double h) {
    return finite_diff_grad(
        [&](const ParamSet& p) { return forward(model, p, batch).loss; }, params, h);
}

/// Accuracy in [0, 1] from logits rows vs labels.
inline double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t c = logits.extent(1);
    std::size_t hits = 0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const double* z = logits.data() + n * c;
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (z[j] > z[best]) best = j;
        if (static_cast<int>(best) == labels[n]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

struct SplitMetrics {
    double loss;
    double accuracy;
};

/// Mean loss and accuracy over a full split, evaluated in chunks (eval mode,
/// no rng).
inline SplitMetrics evaluate_split(const Model& model, const ParamSet& params,
                                   const Tensor& inputs, const std::vector<int>& labels,
                                   std::size_t chunk = 512) {
    const std::size_t n = labels.size();
    if (n == 0) throw InvalidArgument("evaluate_split: empty split");
    const std::size_t feat = inputs.size() / n;
    Shape per_example(inputs.shape().begin() + 1, inputs.shape().end());
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t from = 0; from < n; from += chunk) {
        const std::size_t count = std::min(chunk, n - from);
        Shape s{count};
        s.insert(s.end(), per_example.begin(), per_example.end());
        Batch b{Tensor(s), {}};
        std::copy(inputs.data() + from * feat, inputs.data() + (from + count) * feat,
                  b.inputs.data());
        b.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(from),
                        labels.begin() + static_cast<std::ptrdiff_t>(from + count));
        const EvalResult res = forward(model, params, b);
        loss_sum += res.loss * static_cast<double>(count);
        hits += static_cast<std::size_t>(
            std::lround(accuracy(res.logits, b.labels) * static_cast<double>(count)));
    }
    return {loss_sum / static_cast<double>(n),
            static_cast<double>(hits) / static_cast<double>(n)};
}

} // namespace ssgd
