#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bnpp/bitpack.hpp"
#include "bnpp/conv_spec.hpp"
#include "bnpp/optimize.hpp"
#include "bnpp/scaling.hpp"
#include "bnpp/tensor.hpp"

// Small end-to-end binary CNN: a real stem, three
// normalize -> sign -> binary-conv -> rescale blocks, a final
// normalization, global average pooling and a real classifier. Latent
// real weights are trained with Adam through the straight-through
// estimator; the forward product only ever sees their signs.
namespace bnpp::toynet {

struct ToyDataset {
    std::size_t channels = 1, height = 0, width = 0, num_classes = 0;
    std::vector<DenseTensor> images;  // each {c, h, w}
    std::vector<int> labels;          // in [0, num_classes)
};

struct DatasetPair {
    ToyDataset train;
    ToyDataset test;
};

// Class k is `separation` times a fixed random template plus unit
// Gaussian noise. Deterministic per rng state.
ToyDataset gen_synthetic(std::size_t num_classes, std::size_t per_class, std::size_t image_hw,
                         double separation, Rng& rng);

// Train/test splits sharing the same class templates.
DatasetPair gen_synthetic_pair(std::size_t num_classes, std::size_t per_class_train,
                               std::size_t per_class_test, std::size_t image_hw,
                               double separation, Rng& rng);

// IDX-format loader (images magic 0x00000803, labels 0x00000801,
// big-endian dimensions). Pixels are scaled to [-1, 1].
ToyDataset load_idx(const std::string& images_path, const std::string& labels_path);

struct BatchNorm {
    DenseTensor scale, shift;        // learned, {c}
    DenseTensor run_mean, run_var;   // running statistics, {c}
    double momentum = 0.1;
    double eps = 1e-5;

    static BatchNorm make(std::size_t channels);
};

struct RealConv {
    ConvSpec spec;
    DenseTensor weights;  // {o, c, kh, kw}
    DenseTensor bias;     // {o}
};

struct Linear {
    std::size_t in = 0, out = 0;
    DenseTensor weights;  // {out, in}
    DenseTensor bias;     // {out}
};

struct BinaryConvLayer {
    ConvSpec spec;
    DenseTensor latent_w;  // {o, c, kh, kw}, clipped to [-1, 1] after each update
    ScaleFactor scale;
    BatchNorm norm;        // input normalization, c channels
};

struct ToyNet {
    std::size_t in_c = 1, img_h = 0, img_w = 0, num_classes = 2;
    RealConv stem;
    std::vector<BinaryConvLayer> blocks;
    BatchNorm head_norm;
    Linear classifier;
};

// Stem to 16 channels, binary blocks 16 -> 16, 16 -> 32 (stride 2),
// 32 -> 32 (stride 2), all 3x3 with padding 1.
ToyNet build_toynet(std::size_t in_c, std::size_t image_hw, std::size_t num_classes,
                    ScaleCase scale_case, Rng& rng);

// Instrumentation hooks for tests: post-normalization (pre-sign)
// activations per block and after the head normalization.
struct ForwardTrace {
    std::vector<DenseTensor> block_norm_out;
    DenseTensor head_norm_out;
};

// batch {N, c, h, w} -> scores {N, num_classes}. With batch_stats the
// normalizations use statistics of this batch (training behaviour,
// running stats untouched); otherwise the running statistics.
DenseTensor forward(const ToyNet& net, const DenseTensor& batch, bool batch_stats,
                    ForwardTrace* trace = nullptr);

// Trainable parameters in a stable order (gradients align with it).
std::vector<DenseTensor*> parameters(ToyNet& net, bool learn_scale);

// Cross-entropy forward/backward through the whole net with batch
// statistics. Returns the mean loss; fills `grads` aligned with
// parameters(net, learn_scale).
double forward_backward(ToyNet& net, const DenseTensor& batch, const std::vector<int>& labels,
                        bool learn_scale, std::vector<DenseTensor>& grads);

struct TrainOptions {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    bool learn_scale = true;  // false keeps the fused scale frozen at all-ones
};

struct TrainLog {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> test_acc;    // per epoch, measured on the finalized model
};

TrainLog train(ToyNet& net, const ToyDataset& train_set, const ToyDataset& test_set,
               const TrainOptions& options, Rng& rng);

// Inference artifact: all real parameters snapped to float32 values,
// binary weights stored packed. Serialization round-trips it bit-exactly.
struct InferenceModel {
    std::size_t in_c = 1, img_h = 0, img_w = 0, num_classes = 2;
    RealConv stem;
    struct BinBlock {
        ConvSpec spec;
        PackedTensor weights;
        ScaleFactor scale;
        BatchNorm norm;
    };
    std::vector<BinBlock> blocks;
    BatchNorm head_norm;
    Linear classifier;
};

InferenceModel finalize(const ToyNet& net);

DenseTensor model_forward(const InferenceModel& model, const DenseTensor& batch);

double evaluate(const InferenceModel& model, const ToyDataset& data);

void write_metrics_csv(const std::string& path, const TrainLog& log);

}  // namespace bnpp::toynet
