#include "bnpp/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "bnpp/conv.hpp"

namespace bnpp::toynet {

// ---------------------------------------------------------------- datasets

ToyDataset gen_synthetic(std::size_t num_classes, std::size_t per_class, std::size_t image_hw,
                         double separation, Rng& rng) {
    if (num_classes < 2) throw ValueError("need at least two classes");
    if (separation < 0.0) throw ValueError("separation must be >= 0");
    std::vector<DenseTensor> templates;
    templates.reserve(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k) {
        templates.push_back(randn({1, image_hw, image_hw}, rng));
    }
    ToyDataset d;
    d.channels = 1;
    d.height = d.width = image_hw;
    d.num_classes = num_classes;
    for (std::size_t k = 0; k < num_classes; ++k) {
        for (std::size_t i = 0; i < per_class; ++i) {
            DenseTensor x = randn({1, image_hw, image_hw}, rng);
            for (std::size_t f = 0; f < x.numel(); ++f) x[f] += separation * templates[k][f];
            d.images.push_back(std::move(x));
            d.labels.push_back(static_cast<int>(k));
        }
    }
    return d;
}

DatasetPair gen_synthetic_pair(std::size_t num_classes, std::size_t per_class_train,
                               std::size_t per_class_test, std::size_t image_hw,
                               double separation, Rng& rng) {
    if (num_classes < 2) throw ValueError("need at least two classes");
    std::vector<DenseTensor> templates;
    for (std::size_t k = 0; k < num_classes; ++k) {
        templates.push_back(randn({1, image_hw, image_hw}, rng));
    }
    auto draw = [&](std::size_t per_class) {
        ToyDataset d;
        d.channels = 1;
        d.height = d.width = image_hw;
        d.num_classes = num_classes;
        for (std::size_t k = 0; k < num_classes; ++k) {
            for (std::size_t i = 0; i < per_class; ++i) {
                DenseTensor x = randn({1, image_hw, image_hw}, rng);
                for (std::size_t f = 0; f < x.numel(); ++f) x[f] += separation * templates[k][f];
                d.images.push_back(std::move(x));
                d.labels.push_back(static_cast<int>(k));
            }
        }
        return d;
    };
    DatasetPair pair;
    pair.train = draw(per_class_train);
    pair.test = draw(per_class_test);
    return pair;
}

namespace {

std::uint32_t read_be_u32(const std::vector<unsigned char>& buf, std::size_t offset,
                          const std::string& path) {
    if (offset + 4 > buf.size()) {
        throw FormatError(path + ": truncated header at offset " + std::to_string(offset));
    }
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

ToyDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const std::vector<unsigned char> img = read_file(images_path);
    const std::vector<unsigned char> lab = read_file(labels_path);

    if (read_be_u32(img, 0, images_path) != 0x00000803u) {
        throw FormatError(images_path + ": bad image magic at offset 0");
    }
    const std::size_t n = read_be_u32(img, 4, images_path);
    const std::size_t h = read_be_u32(img, 8, images_path);
    const std::size_t w = read_be_u32(img, 12, images_path);
    if (n == 0 || h == 0 || w == 0) throw FormatError(images_path + ": empty dimensions");
    if (n > (1u << 24) || h > (1u << 16) || w > (1u << 16)) {
        throw FormatError(images_path + ": implausible dimensions");
    }
    if (img.size() != 16 + n * h * w) {
        throw FormatError(images_path + ": payload has " + std::to_string(img.size() - 16) +
                          " bytes, expected " + std::to_string(n * h * w));
    }

    if (read_be_u32(lab, 0, labels_path) != 0x00000801u) {
        throw FormatError(labels_path + ": bad label magic at offset 0");
    }
    const std::size_t n_lab = read_be_u32(lab, 4, labels_path);
    if (lab.size() != 8 + n_lab) {
        throw FormatError(labels_path + ": payload has " + std::to_string(lab.size() - 8) +
                          " bytes, expected " + std::to_string(n_lab));
    }
    if (n_lab != n) {
        throw FormatError("image count " + std::to_string(n) + " does not match label count " +
                          std::to_string(n_lab));
    }

    ToyDataset d;
    d.channels = 1;
    d.height = h;
    d.width = w;
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        DenseTensor x({1, h, w});
        for (std::size_t p = 0; p < h * w; ++p) {
            x[p] = static_cast<double>(img[16 + i * h * w + p]) / 127.5 - 1.0;
        }
        d.images.push_back(std::move(x));
        d.labels.push_back(static_cast<int>(lab[8 + i]));
        max_label = std::max(max_label, d.labels.back());
    }
    d.num_classes = static_cast<std::size_t>(max_label) + 1;
    return d;
}

// ------------------------------------------------------------------ layers

BatchNorm BatchNorm::make(std::size_t channels) {
    BatchNorm bn;
    bn.scale = DenseTensor::full({channels}, 1.0);
    bn.shift = DenseTensor({channels});
    bn.run_mean = DenseTensor({channels});
    bn.run_var = DenseTensor::full({channels}, 1.0);
    return bn;
}

namespace {

DenseTensor kaiming_normal(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    DenseTensor w = randn(shape, rng);
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t f = 0; f < w.numel(); ++f) w[f] *= std;
    return w;
}

struct Dims4 {
    std::size_t n, c, h, w;
};

Dims4 dims4(const DenseTensor& t, const char* what) {
    if (t.ndim() != 4) throw ShapeError(std::string(what) + " must be rank 4 (N,c,h,w)");
    return {t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]};
}

DenseTensor slice_sample(const DenseTensor& batch, std::size_t n) {
    const Dims4 d = dims4(batch, "batch");
    const std::size_t sz = d.c * d.h * d.w;
    std::vector<double> vals(batch.data().begin() + n * sz, batch.data().begin() + (n + 1) * sz);
    return DenseTensor::from({d.c, d.h, d.w}, std::move(vals));
}

// Per-sample convolution over a batch, bias optional.
DenseTensor batch_conv_real(const DenseTensor& batch, const RealConv& conv) {
    const Dims4 d = dims4(batch, "conv input");
    const std::size_t ho = conv.spec.h_out(), wo = conv.spec.w_out();
    DenseTensor out({d.n, conv.spec.o, ho, wo});
#pragma omp parallel for schedule(static)
    for (long n = 0; n < static_cast<long>(d.n); ++n) {
        const DenseTensor y = conv_real(slice_sample(batch, n), conv.weights, conv.spec);
        double* dst = out.data().data() + n * conv.spec.o * ho * wo;
        for (std::size_t oc = 0; oc < conv.spec.o; ++oc) {
            const double b = conv.bias[oc];
            for (std::size_t p = 0; p < ho * wo; ++p) dst[oc * ho * wo + p] = y[oc * ho * wo + p] + b;
        }
    }
    return out;
}

// Binary convolution of the sign of each sample against packed weights,
// rescaled by the fused factor. Also returns the raw integer outputs.
void batch_conv_binary(const DenseTensor& batch, const PackedTensor& weights,
                       const ScaleFactor& scale, const ConvSpec& spec, DenseTensor* raw,
                       DenseTensor* scaled) {
    const Dims4 d = dims4(batch, "binary conv input");
    const std::size_t ho = spec.h_out(), wo = spec.w_out();
    const std::size_t plane = spec.o * ho * wo;
    if (raw) *raw = DenseTensor({d.n, spec.o, ho, wo});
    if (scaled) *scaled = DenseTensor({d.n, spec.o, ho, wo});
#pragma omp parallel for schedule(static)
    for (long n = 0; n < static_cast<long>(d.n); ++n) {
        const DenseTensor b = conv_binary(PackedTensor::pack(slice_sample(batch, n)), weights, spec);
        if (raw) std::copy(b.data().begin(), b.data().end(), raw->data().begin() + n * plane);
        if (scaled) {
            const DenseTensor y = rescale(b, scale, spec);
            std::copy(y.data().begin(), y.data().end(), scaled->data().begin() + n * plane);
        }
    }
}

// dX for a convolution whose effective kernel is `weights` (sign values
// for binary blocks). Padding contributes no input gradient.
DenseTensor conv_backward_input(const DenseTensor& dy, const DenseTensor& weights,
                                const ConvSpec& spec) {
    const Dims4 d = dims4(dy, "conv output grad");
    DenseTensor dx({d.n, spec.c, spec.h_in, spec.w_in});
    const std::size_t plane_in = spec.h_in * spec.w_in;
#pragma omp parallel for schedule(static)
    for (long n = 0; n < static_cast<long>(d.n); ++n) {
        double* dxn = dx.data().data() + n * spec.c * plane_in;
        const double* dyn = dy.data().data() + n * spec.o * d.h * d.w;
        for (std::size_t oc = 0; oc < spec.o; ++oc) {
            for (std::size_t oy = 0; oy < d.h; ++oy) {
                for (std::size_t ox = 0; ox < d.w; ++ox) {
                    const double g = dyn[(oc * d.h + oy) * d.w + ox];
                    if (g == 0.0) continue;
                    for (std::size_t ci = 0; ci < spec.c; ++ci) {
                        for (std::size_t ky = 0; ky < spec.kh; ++ky) {
                            const long iy = static_cast<long>(oy * spec.stride + ky) -
                                            static_cast<long>(spec.padding);
                            if (iy < 0 || iy >= static_cast<long>(spec.h_in)) continue;
                            for (std::size_t kx = 0; kx < spec.kw; ++kx) {
                                const long ix = static_cast<long>(ox * spec.stride + kx) -
                                                static_cast<long>(spec.padding);
                                if (ix < 0 || ix >= static_cast<long>(spec.w_in)) continue;
                                dxn[ci * plane_in + iy * spec.w_in + ix] +=
                                    g * weights[((oc * spec.c + ci) * spec.kh + ky) * spec.kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    return dx;
}

// dW gathered per kernel element; `x` is the layer input (sign values
// for binary blocks) and `pad_value` what out-of-bounds positions held.
DenseTensor conv_backward_weight(const DenseTensor& dy, const DenseTensor& x,
                                 const ConvSpec& spec, double pad_value) {
    const Dims4 dyd = dims4(dy, "conv output grad");
    const Dims4 xd = dims4(x, "conv input");
    DenseTensor dw({spec.o, spec.c, spec.kh, spec.kw});
    const std::size_t plane_in = spec.h_in * spec.w_in;
    const long kernel = static_cast<long>(spec.o * spec.c * spec.kh * spec.kw);
#pragma omp parallel for schedule(static)
    for (long flat = 0; flat < kernel; ++flat) {
        const std::size_t oc = static_cast<std::size_t>(flat) / (spec.c * spec.kh * spec.kw);
        const std::size_t ci = (static_cast<std::size_t>(flat) / (spec.kh * spec.kw)) % spec.c;
        const std::size_t ky = (static_cast<std::size_t>(flat) / spec.kw) % spec.kh;
        const std::size_t kx = static_cast<std::size_t>(flat) % spec.kw;
        double acc = 0.0;
        for (std::size_t n = 0; n < dyd.n; ++n) {
            const double* dyn = dy.data().data() + (n * spec.o + oc) * dyd.h * dyd.w;
            const double* xn = x.data().data() + (n * xd.c + ci) * plane_in;
            for (std::size_t oy = 0; oy < dyd.h; ++oy) {
                const long iy = static_cast<long>(oy * spec.stride + ky) -
                                static_cast<long>(spec.padding);
                for (std::size_t ox = 0; ox < dyd.w; ++ox) {
                    const long ix = static_cast<long>(ox * spec.stride + kx) -
                                    static_cast<long>(spec.padding);
                    const bool inside = iy >= 0 && iy < static_cast<long>(spec.h_in) && ix >= 0 &&
                                        ix < static_cast<long>(spec.w_in);
                    const double xv = inside ? xn[iy * spec.w_in + ix] : pad_value;
                    acc += dyn[oy * dyd.w + ox] * xv;
                }
            }
        }
        dw[flat] = acc;
    }
    return dw;
}

struct BnCache {
    DenseTensor xhat;             // {N,c,h,w}
    std::vector<double> inv_std;  // per channel
};

// Batch-statistics normalization; optionally updates running stats and
// keeps what the backward pass needs.
DenseTensor bn_forward_train(const DenseTensor& x, BatchNorm& bn, bool update_running,
                             BnCache* cache) {
    const Dims4 d = dims4(x, "batchnorm input");
    const std::size_t plane = d.h * d.w;
    const double m = static_cast<double>(d.n * plane);
    DenseTensor out(x.shape());
    if (cache) {
        cache->xhat = DenseTensor(x.shape());
        cache->inv_std.assign(d.c, 0.0);
    }
    for (std::size_t ch = 0; ch < d.c; ++ch) {
        double mean = 0.0;
        for (std::size_t n = 0; n < d.n; ++n) {
            const double* xn = x.data().data() + (n * d.c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) mean += xn[p];
        }
        mean /= m;
        double var = 0.0;
        for (std::size_t n = 0; n < d.n; ++n) {
            const double* xn = x.data().data() + (n * d.c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) var += (xn[p] - mean) * (xn[p] - mean);
        }
        var /= m;
        const double inv_std = 1.0 / std::sqrt(var + bn.eps);
        if (cache) cache->inv_std[ch] = inv_std;
        const double g = bn.scale[ch], b = bn.shift[ch];
        for (std::size_t n = 0; n < d.n; ++n) {
            const double* xn = x.data().data() + (n * d.c + ch) * plane;
            double* on = out.data().data() + (n * d.c + ch) * plane;
            double* hn = cache ? cache->xhat.data().data() + (n * d.c + ch) * plane : nullptr;
            for (std::size_t p = 0; p < plane; ++p) {
                const double xh = (xn[p] - mean) * inv_std;
                if (hn) hn[p] = xh;
                on[p] = g * xh + b;
            }
        }
        if (update_running) {
            bn.run_mean[ch] = (1.0 - bn.momentum) * bn.run_mean[ch] + bn.momentum * mean;
            bn.run_var[ch] = (1.0 - bn.momentum) * bn.run_var[ch] + bn.momentum * var;
        }
    }
    return out;
}

DenseTensor bn_forward_running(const DenseTensor& x, const BatchNorm& bn) {
    const Dims4 d = dims4(x, "batchnorm input");
    const std::size_t plane = d.h * d.w;
    DenseTensor out(x.shape());
    for (std::size_t ch = 0; ch < d.c; ++ch) {
        const double inv_std = 1.0 / std::sqrt(bn.run_var[ch] + bn.eps);
        const double mean = bn.run_mean[ch];
        const double g = bn.scale[ch], b = bn.shift[ch];
        for (std::size_t n = 0; n < d.n; ++n) {
            const double* xn = x.data().data() + (n * d.c + ch) * plane;
            double* on = out.data().data() + (n * d.c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) on[p] = g * (xn[p] - mean) * inv_std + b;
        }
    }
    return out;
}

// Standard batch-norm backward from the cached normalized activations.
DenseTensor bn_backward(const DenseTensor& dy, const BnCache& cache, const BatchNorm& bn,
                        DenseTensor& dscale, DenseTensor& dshift) {
    const Dims4 d = dims4(dy, "batchnorm grad");
    const std::size_t plane = d.h * d.w;
    const double m = static_cast<double>(d.n * plane);
    DenseTensor dx(dy.shape());
    for (std::size_t ch = 0; ch < d.c; ++ch) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t n = 0; n < d.n; ++n) {
            const double* dyn = dy.data().data() + (n * d.c + ch) * plane;
            const double* hn = cache.xhat.data().data() + (n * d.c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                sum_dy += dyn[p];
                sum_dy_xhat += dyn[p] * hn[p];
            }
        }
        dscale[ch] += sum_dy_xhat;
        dshift[ch] += sum_dy;
        const double k = bn.scale[ch] * cache.inv_std[ch];
        for (std::size_t n = 0; n < d.n; ++n) {
            const double* dyn = dy.data().data() + (n * d.c + ch) * plane;
            const double* hn = cache.xhat.data().data() + (n * d.c + ch) * plane;
            double* dxn = dx.data().data() + (n * d.c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                dxn[p] = k * (dyn[p] - sum_dy / m - hn[p] * sum_dy_xhat / m);
            }
        }
    }
    return dx;
}

DenseTensor batch_sign(const DenseTensor& x) {
    DenseTensor s(x.shape());
    for (std::size_t f = 0; f < x.numel(); ++f) s[f] = sign(x[f]) > 0 ? 1.0 : -1.0;
    return s;
}

}  // namespace

ToyNet build_toynet(std::size_t in_c, std::size_t image_hw, std::size_t num_classes,
                    ScaleCase scale_case, Rng& rng) {
    if (scale_case == ScaleCase::analytic_xnor) {
        throw ValueError("toy net scales are learned; analytic_xnor is not a trainable case");
    }
    ToyNet net;
    net.in_c = in_c;
    net.img_h = net.img_w = image_hw;
    net.num_classes = num_classes;

    net.stem.spec = ConvSpec{.o = 16, .c = in_c, .kh = 3, .kw = 3, .h_in = image_hw,
                             .w_in = image_hw, .stride = 1, .padding = 1};
    net.stem.weights = kaiming_normal({16, in_c, 3, 3}, in_c * 9, rng);
    net.stem.bias = DenseTensor({16});

    const std::size_t channels[4] = {16, 16, 32, 32};
    const std::size_t strides[3] = {1, 2, 2};
    std::size_t hw = image_hw;
    for (int i = 0; i < 3; ++i) {
        BinaryConvLayer layer;
        layer.spec = ConvSpec{.o = channels[i + 1], .c = channels[i], .kh = 3, .kw = 3,
                              .h_in = hw, .w_in = hw, .stride = strides[i], .padding = 1};
        layer.latent_w = kaiming_normal({channels[i + 1], channels[i], 3, 3}, channels[i] * 9, rng);
        for (std::size_t f = 0; f < layer.latent_w.numel(); ++f) {
            layer.latent_w[f] = std::clamp(layer.latent_w[f], -1.0, 1.0);
        }
        layer.scale = init_scale(scale_case, layer.spec, InitStrategy::ones);
        layer.norm = BatchNorm::make(channels[i]);
        hw = layer.spec.h_out();
        net.blocks.push_back(std::move(layer));
    }
    net.head_norm = BatchNorm::make(32);

    net.classifier.in = 32;
    net.classifier.out = num_classes;
    net.classifier.weights = kaiming_normal({num_classes, 32}, 32, rng);
    net.classifier.bias = DenseTensor({num_classes});
    return net;
}

namespace {

struct StepCache {
    DenseTensor stem_in;   // {N,in_c,h,w}
    DenseTensor stem_out;  // pre-first-block activations
    struct Block {
        BnCache bn;
        DenseTensor bn_out;    // z, pre-sign
        DenseTensor sign_in;   // sign(z), the dense +-1 values
        DenseTensor raw;       // integer conv outputs
        DenseTensor scaled;    // raw * Gamma
    };
    std::vector<Block> blocks;
    BnCache head_bn;
    DenseTensor head_out;
    DenseTensor pooled;  // {N, ch}
    DenseTensor logits;  // {N, classes}
};

DenseTensor global_avg_pool(const DenseTensor& x) {
    const Dims4 d = dims4(x, "pool input");
    const std::size_t plane = d.h * d.w;
    DenseTensor out({d.n, d.c});
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t ch = 0; ch < d.c; ++ch) {
            const double* xn = x.data().data() + (n * d.c + ch) * plane;
            double acc = 0.0;
            for (std::size_t p = 0; p < plane; ++p) acc += xn[p];
            out[n * d.c + ch] = acc / static_cast<double>(plane);
        }
    }
    return out;
}

DenseTensor linear_forward(const DenseTensor& x, const Linear& lin) {
    const std::size_t n = x.shape()[0];
    DenseTensor out({n, lin.out});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < lin.out; ++k) {
            double acc = lin.bias[k];
            for (std::size_t j = 0; j < lin.in; ++j) {
                acc += lin.weights[k * lin.in + j] * x[i * lin.in + j];
            }
            out[i * lin.out + k] = acc;
        }
    }
    return out;
}

DenseTensor run_forward(ToyNet& net, const DenseTensor& batch, bool batch_stats,
                        bool update_running, StepCache* cache, ForwardTrace* trace) {
    const Dims4 d = dims4(batch, "input batch");
    if (d.c != net.in_c || d.h != net.img_h || d.w != net.img_w) {
        throw ShapeError("input batch does not match the network geometry");
    }
    if (cache) cache->stem_in = batch;

    DenseTensor x = batch_conv_real(batch, net.stem);
    if (cache) cache->stem_out = x;

    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        BinaryConvLayer& layer = net.blocks[i];
        StepCache::Block* cb = nullptr;
        if (cache) {
            cache->blocks.emplace_back();
            cb = &cache->blocks.back();
        }
        DenseTensor z = batch_stats
                            ? bn_forward_train(x, layer.norm, update_running, cb ? &cb->bn : nullptr)
                            : bn_forward_running(x, layer.norm);
        if (trace) trace->block_norm_out.push_back(z);
        DenseTensor s = batch_sign(z);
        DenseTensor raw, scaled;
        batch_conv_binary(s, PackedTensor::pack(layer.latent_w), layer.scale, layer.spec, &raw,
                          &scaled);
        if (cb) {
            cb->bn_out = std::move(z);
            cb->sign_in = std::move(s);
            cb->raw = std::move(raw);
            cb->scaled = scaled;
        }
        x = std::move(scaled);
    }

    DenseTensor h = batch_stats
                        ? bn_forward_train(x, net.head_norm, update_running,
                                           cache ? &cache->head_bn : nullptr)
                        : bn_forward_running(x, net.head_norm);
    if (trace) trace->head_norm_out = h;
    if (cache) cache->head_out = h;

    DenseTensor pooled = global_avg_pool(h);
    if (cache) cache->pooled = pooled;
    DenseTensor logits = linear_forward(pooled, net.classifier);
    if (cache) cache->logits = logits;
    return logits;
}

double softmax_ce(const DenseTensor& logits, const std::vector<int>& labels,
                  DenseTensor* dlogits) {
    const std::size_t n = logits.shape()[0], k = logits.shape()[1];
    if (labels.size() != n) throw ShapeError("label count does not match batch");
    if (dlogits) *dlogits = DenseTensor(logits.shape());
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
            throw ValueError("label out of range");
        }
        const double* row = logits.data().data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
        const double lse = mx + std::log(denom);
        loss += lse - row[labels[i]];
        if (dlogits) {
            for (std::size_t j = 0; j < k; ++j) {
                const double p = std::exp(row[j] - lse);
                (*dlogits)[i * k + j] =
                    (p - (static_cast<int>(j) == labels[i] ? 1.0 : 0.0)) / static_cast<double>(n);
            }
        }
    }
    return loss / static_cast<double>(n);
}

}  // namespace

DenseTensor forward(const ToyNet& net, const DenseTensor& batch, bool batch_stats,
                    ForwardTrace* trace) {
    // Statistics are read (batch mode) but never written here.
    return run_forward(const_cast<ToyNet&>(net), batch, batch_stats, false, nullptr, trace);
}

std::vector<DenseTensor*> parameters(ToyNet& net, bool learn_scale) {
    std::vector<DenseTensor*> p;
    p.push_back(&net.stem.weights);
    p.push_back(&net.stem.bias);
    for (BinaryConvLayer& layer : net.blocks) {
        p.push_back(&layer.latent_w);
        p.push_back(&layer.norm.scale);
        p.push_back(&layer.norm.shift);
        if (learn_scale) {
            p.push_back(&layer.scale.alpha);
            if (layer.scale.kind == ScaleCase::case3 || layer.scale.kind == ScaleCase::case4) {
                p.push_back(&layer.scale.beta);
            }
            if (layer.scale.kind == ScaleCase::case4) p.push_back(&layer.scale.gamma);
        }
    }
    p.push_back(&net.head_norm.scale);
    p.push_back(&net.head_norm.shift);
    p.push_back(&net.classifier.weights);
    p.push_back(&net.classifier.bias);
    return p;
}

double forward_backward(ToyNet& net, const DenseTensor& batch, const std::vector<int>& labels,
                        bool learn_scale, std::vector<DenseTensor>& grads) {
    StepCache cache;
    run_forward(net, batch, true, true, &cache, nullptr);

    DenseTensor dlogits;
    const double loss = softmax_ce(cache.logits, labels, &dlogits);

    const std::vector<DenseTensor*> params = parameters(net, learn_scale);
    grads.clear();
    for (DenseTensor* p : params) grads.emplace_back(p->shape());
    std::size_t cursor = grads.size();

    // classifier
    DenseTensor& d_lin_w = grads[cursor - 2];
    DenseTensor& d_lin_b = grads[cursor - 1];
    const std::size_t n = batch.shape()[0];
    const Linear& lin = net.classifier;
    DenseTensor dpooled({n, lin.in});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < lin.out; ++k) {
            const double g = dlogits[i * lin.out + k];
            d_lin_b[k] += g;
            for (std::size_t j = 0; j < lin.in; ++j) {
                d_lin_w[k * lin.in + j] += g * cache.pooled[i * lin.in + j];
                dpooled[i * lin.in + j] += g * lin.weights[k * lin.in + j];
            }
        }
    }

    // pool
    const Dims4 hd = dims4(cache.head_out, "head activations");
    const std::size_t plane = hd.h * hd.w;
    DenseTensor dhead(cache.head_out.shape());
    for (std::size_t i = 0; i < hd.n; ++i) {
        for (std::size_t ch = 0; ch < hd.c; ++ch) {
            const double g = dpooled[i * hd.c + ch] / static_cast<double>(plane);
            double* dst = dhead.data().data() + (i * hd.c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] = g;
        }
    }

    // head norm
    DenseTensor& d_head_scale = grads[cursor - 4];
    DenseTensor& d_head_shift = grads[cursor - 3];
    DenseTensor dy = bn_backward(dhead, cache.head_bn, net.head_norm, d_head_scale, d_head_shift);

    // blocks, last to first
    std::size_t gi = 2;  // index of first block's gradient group
    std::vector<std::size_t> block_grad_base(net.blocks.size());
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        block_grad_base[i] = gi;
        gi += 3;
        if (learn_scale) {
            const ScaleCase k = net.blocks[i].scale.kind;
            gi += 1 + (k == ScaleCase::case3 || k == ScaleCase::case4 ? 1 : 0) +
                  (k == ScaleCase::case4 ? 1 : 0);
        }
    }

    for (std::size_t i = net.blocks.size(); i-- > 0;) {
        BinaryConvLayer& layer = net.blocks[i];
        const StepCache::Block& cb = cache.blocks[i];
        const std::size_t base = block_grad_base[i];
        const std::size_t ho = layer.spec.h_out(), wo = layer.spec.w_out();
        const std::size_t out_plane = layer.spec.o * ho * wo;

        // Through the fused scale: y = raw * Gamma.
        if (learn_scale) {
            DenseTensor dgamma_dense({layer.spec.o, ho, wo});
            for (std::size_t s = 0; s < n; ++s) {
                const double* dyn = dy.data().data() + s * out_plane;
                const double* raw = cb.raw.data().data() + s * out_plane;
                for (std::size_t f = 0; f < out_plane; ++f) dgamma_dense[f] += dyn[f] * raw[f];
            }
            FactorGrads fg = chain_scale_grads(layer.scale, dgamma_dense);
            grads[base + 3] = std::move(fg.alpha);
            if (layer.scale.kind == ScaleCase::case3 || layer.scale.kind == ScaleCase::case4) {
                grads[base + 4] = std::move(fg.beta);
            }
            if (layer.scale.kind == ScaleCase::case4) grads[base + 5] = std::move(fg.gamma);
        }

        // dL/draw = dy * Gamma (broadcast over the batch).
        const DenseTensor gamma = materialize(layer.scale, layer.spec);
        DenseTensor draw(dy.shape());
        for (std::size_t s = 0; s < n; ++s) {
            const double* dyn = dy.data().data() + s * out_plane;
            double* dst = draw.data().data() + s * out_plane;
            for (std::size_t f = 0; f < out_plane; ++f) dst[f] = dyn[f] * gamma[f];
        }

        // Weight gradient through sign(W): gather against the sign
        // activations (padding held -1), then the straight-through mask.
        const DenseTensor sign_w = batch_sign(layer.latent_w);
        DenseTensor d_sign_w = conv_backward_weight(draw, cb.sign_in, layer.spec, -1.0);
        grads[base] = ste_backward(layer.latent_w, d_sign_w);

        // Input gradient through the sign activation.
        DenseTensor d_sign_in = conv_backward_input(draw, sign_w, layer.spec);
        DenseTensor dz = ste_backward(cb.bn_out, d_sign_in);
        dy = bn_backward(dz, cb.bn, layer.norm, grads[base + 1], grads[base + 2]);
    }

    // stem
    grads[0] = conv_backward_weight(dy, cache.stem_in, net.stem.spec, 0.0);
    DenseTensor& d_stem_b = grads[1];
    const Dims4 sd = dims4(cache.stem_out, "stem activations");
    const std::size_t splane = sd.h * sd.w;
    for (std::size_t s = 0; s < sd.n; ++s) {
        for (std::size_t oc = 0; oc < sd.c; ++oc) {
            const double* dyn = dy.data().data() + (s * sd.c + oc) * splane;
            for (std::size_t p = 0; p < splane; ++p) d_stem_b[oc] += dyn[p];
        }
    }

    return loss;
}

TrainLog train(ToyNet& net, const ToyDataset& train_set, const ToyDataset& test_set,
               const TrainOptions& options, Rng& rng) {
    if (train_set.images.empty()) throw ValueError("training dataset is empty");
    if (options.epochs == 0) throw ValueError("epochs must be >= 1");

    std::vector<DenseTensor*> params = parameters(net, options.learn_scale);
    AdamState state;
    state.lr = options.lr;
    state.init(params);

    std::vector<std::size_t> order(train_set.images.size());
    std::iota(order.begin(), order.end(), 0);

    const std::size_t lr_drop_epoch = options.epochs * 2 / 3;
    std::vector<DenseTensor> grads;
    TrainLog log;

    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        state.lr = options.lr * (epoch >= lr_drop_epoch ? 0.1 : 1.0);
        // Fisher-Yates with the run's own stream keeps epochs reproducible.
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.uniform_int(i)]);
        }

        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t count = std::min(options.batch_size, order.size() - start);
            DenseTensor batch({count, train_set.channels, train_set.height, train_set.width});
            std::vector<int> labels(count);
            const std::size_t sample_sz = train_set.channels * train_set.height * train_set.width;
            for (std::size_t b = 0; b < count; ++b) {
                const DenseTensor& img = train_set.images[order[start + b]];
                std::copy(img.data().begin(), img.data().end(),
                          batch.data().begin() + b * sample_sz);
                labels[b] = train_set.labels[order[start + b]];
            }

            epoch_loss += forward_backward(net, batch, labels, options.learn_scale, grads);
            ++batches;

            std::vector<const DenseTensor*> gp;
            for (const DenseTensor& g : grads) gp.push_back(&g);
            adam_step(params, gp, state);

            for (BinaryConvLayer& layer : net.blocks) {
                for (std::size_t f = 0; f < layer.latent_w.numel(); ++f) {
                    layer.latent_w[f] = std::clamp(layer.latent_w[f], -1.0, 1.0);
                }
            }
        }

        log.train_loss.push_back(epoch_loss / static_cast<double>(batches));
        log.test_acc.push_back(test_set.images.empty() ? 0.0
                                                       : evaluate(finalize(net), test_set));
    }
    return log;
}

// ------------------------------------------------------------- inference

namespace {

double snap32(double x) { return static_cast<double>(static_cast<float>(x)); }

DenseTensor snap_tensor(const DenseTensor& t) {
    DenseTensor out(t.shape());
    for (std::size_t f = 0; f < t.numel(); ++f) out[f] = snap32(t[f]);
    return out;
}

BatchNorm snap_bn(const BatchNorm& bn) {
    BatchNorm out = bn;
    out.scale = snap_tensor(bn.scale);
    out.shift = snap_tensor(bn.shift);
    out.run_mean = snap_tensor(bn.run_mean);
    out.run_var = snap_tensor(bn.run_var);
    return out;
}

ScaleFactor snap_scale(const ScaleFactor& sf) {
    ScaleFactor out;
    out.kind = sf.kind;
    if (sf.alpha.numel() > 0) out.alpha = snap_tensor(sf.alpha);
    if (sf.beta.numel() > 0) out.beta = snap_tensor(sf.beta);
    if (sf.gamma.numel() > 0) out.gamma = snap_tensor(sf.gamma);
    if (sf.k_map.numel() > 0) out.k_map = snap_tensor(sf.k_map);
    return out;
}

}  // namespace

InferenceModel finalize(const ToyNet& net) {
    InferenceModel m;
    m.in_c = net.in_c;
    m.img_h = net.img_h;
    m.img_w = net.img_w;
    m.num_classes = net.num_classes;
    m.stem.spec = net.stem.spec;
    m.stem.weights = snap_tensor(net.stem.weights);
    m.stem.bias = snap_tensor(net.stem.bias);
    for (const BinaryConvLayer& layer : net.blocks) {
        InferenceModel::BinBlock b;
        b.spec = layer.spec;
        b.weights = PackedTensor::pack(layer.latent_w);
        b.scale = snap_scale(layer.scale);
        b.norm = snap_bn(layer.norm);
        m.blocks.push_back(std::move(b));
    }
    m.head_norm = snap_bn(net.head_norm);
    m.classifier.in = net.classifier.in;
    m.classifier.out = net.classifier.out;
    m.classifier.weights = snap_tensor(net.classifier.weights);
    m.classifier.bias = snap_tensor(net.classifier.bias);
    return m;
}

DenseTensor model_forward(const InferenceModel& model, const DenseTensor& batch) {
    const Dims4 d = dims4(batch, "input batch");
    if (d.c != model.in_c || d.h != model.img_h || d.w != model.img_w) {
        throw ShapeError("input batch does not match the model geometry");
    }
    DenseTensor x = batch_conv_real(batch, model.stem);
    for (const InferenceModel::BinBlock& block : model.blocks) {
        DenseTensor z = bn_forward_running(x, block.norm);
        DenseTensor scaled;
        batch_conv_binary(batch_sign(z), block.weights, block.scale, block.spec, nullptr, &scaled);
        x = std::move(scaled);
    }
    DenseTensor h = bn_forward_running(x, model.head_norm);
    return linear_forward(global_avg_pool(h), model.classifier);
}

double evaluate(const InferenceModel& model, const ToyDataset& data) {
    if (data.images.empty()) throw ValueError("evaluation dataset is empty");
    std::size_t correct = 0;
    const std::size_t sample_sz = data.channels * data.height * data.width;
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < data.images.size(); start += chunk) {
        const std::size_t count = std::min(chunk, data.images.size() - start);
        DenseTensor batch({count, data.channels, data.height, data.width});
        for (std::size_t b = 0; b < count; ++b) {
            const DenseTensor& img = data.images[start + b];
            std::copy(img.data().begin(), img.data().end(), batch.data().begin() + b * sample_sz);
        }
        const DenseTensor scores = model_forward(model, batch);
        const std::size_t k = scores.shape()[1];
        for (std::size_t b = 0; b < count; ++b) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < k; ++j) {
                if (scores[b * k + j] > scores[b * k + best]) best = j;
            }
            if (static_cast<int>(best) == data.labels[start + b]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.images.size());
}

void write_metrics_csv(const std::string& path, const TrainLog& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "epoch,train_loss,test_acc\n";
    char buf[64];
    for (std::size_t e = 0; e < log.train_loss.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g\n", e, log.train_loss[e],
                      log.test_acc[e]);
        out << buf;
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace bnpp::toynet
