#pragma once

// Training: cross-entropy plus the squared domain penalty, exact analytic
// backpropagation (finite-difference checked in the tests), SGD/Adam, a
// deterministic mini-batch loop with dev-accuracy model selection, and the
// versioned binary model format.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oods/dataset.hpp"
#include "oods/model.hpp"
#include "oods/numerics.hpp"

namespace oods::train {

enum class OptimizerKind { Sgd, Adam };
enum class HeadKind { Linear, Drm };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& name);
std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    HeadKind head_kind = HeadKind::Drm;
    double delta = 3.0;
    bool symmetric_clamp = false;
    bool clamp_in_domain_loss = false;  // default: domain loss sees raw f_d
    int min_vocab_freq = 1;

    // Desk-scale encoder: embedding mean-pool, three ReLU blocks, tanh pooler.
    std::size_t d_emb = 32;
    std::vector<std::size_t> widths = {64, 64, 64};
    std::size_t pooled_dim = 64;

    void validate() const;
};

// All trainable tensors; also the shape of a gradient set and of the
// per-tensor optimizer moments.
struct ModelParams {
    model::EncoderParams encoder;
    model::Head head;
};

using GradientSet = ModelParams;

ModelParams zeros_like(const ModelParams& params);

// Visits every parameter tensor as (double* data, size_t len) in the fixed
// canonical order shared by the optimizer and the serializer.
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
    fn(p.encoder.embedding.values().data(), p.encoder.embedding.values().size());
    for (auto& block : p.encoder.blocks) {
        fn(block.w.values().data(), block.w.values().size());
        fn(block.b.data(), block.b.size());
    }
    fn(p.encoder.pooler.w.values().data(), p.encoder.pooler.w.values().size());
    fn(p.encoder.pooler.b.data(), p.encoder.pooler.b.size());
    if (auto* linear = std::get_if<model::LinearHead>(&p.head)) {
        fn(linear->w.values().data(), linear->w.values().size());
        fn(linear->b.data(), linear->b.size());
    } else {
        auto& drm = std::get<model::DRMHead>(p.head);
        fn(drm.w_c.values().data(), drm.w_c.values().size());
        fn(drm.b_c.data(), drm.b_c.size());
        fn(drm.w_d.values().data(), drm.w_d.values().size());
        fn(&drm.b_d, 1);
    }
}

struct EncodedSample {
    std::vector<int> tokens;
    std::optional<std::size_t> label;
};

using Batch = std::vector<EncodedSample>;

struct TrainMeta {
    TrainConfig config;
    double final_train_loss = 0.0;
    double final_dev_loss = 0.0;
    double best_dev_accuracy = 0.0;
    std::size_t best_epoch = 0;
    std::uint32_t format_version = 1;
    std::string train_data_path;  // set by the CLI for later stats fitting
};

struct TrainedModel {
    ModelParams params;
    data::Vocab vocab;
    std::vector<std::string> classes;
    TrainMeta meta;

    std::size_t n_classes() const { return classes.size(); }
};

// -log softmax(f)[y], computed in log space.
double classification_loss(const numerics::Vector& f, std::size_t y);

// (1 - sigmoid(f_d))^2; strictly decreasing in f_d, in [0, 1).
double domain_loss(double f_d);

struct LossBreakdown {
    double total = 0.0;
    double classification = 0.0;
    double domain = 0.0;
};

struct LossOptions {
    bool clamp_in_domain_loss = false;
};

// Mean over the batch of classification + domain loss (DRM) or classification
// only (linear). Throws OODInTraining on unlabeled samples.
LossBreakdown total_loss(const Batch& batch, const ModelParams& params,
                         const LossOptions& opts = {});

struct BackwardResult {
    GradientSet grads;
    LossBreakdown loss;
};

// Exact gradients of total_loss, including the division by the guarded
// clamped divisor (zero gradient on the constant clamp/guard branches) and
// ReLU subgradient 0 at 0.
BackwardResult backward(const Batch& batch, const ModelParams& params,
                        const LossOptions& opts = {});

struct OptimizerState {
    ModelParams m;  // first moments (Adam)
    ModelParams v;  // second moments (Adam)
    std::size_t step = 0;
};

OptimizerState make_optimizer_state(const ModelParams& params);

void optimizer_step(ModelParams& params, const GradientSet& grads, OptimizerState& state,
                    const TrainConfig& cfg);

EncodedSample encode_sample(const data::Utterance& u, const data::Dataset& ds,
                            const data::Vocab& vocab);

TrainedModel train(const data::Dataset& ind_train, const data::Dataset& ind_dev,
                   const TrainConfig& cfg);

// Binary model file: magic "OODS", u32 version, JSON metadata block, raw
// little-endian f64 parameter arrays, trailing CRC32. Round-trips bit-exactly.
void save_model(const TrainedModel& m, const std::string& path);
TrainedModel load_model(const std::string& path);

bool bitwise_equal(const TrainedModel& a, const TrainedModel& b);

std::uint32_t crc32(const unsigned char* data, std::size_t len, std::uint32_t seed = 0);

}  // namespace oods::train
