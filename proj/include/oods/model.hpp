#pragma once

// Layered text encoder plus two interchangeable heads: a conventional linear
// projection and the divide-by-domain head. The encoder is embedding mean-pool
// followed by ReLU dense blocks and a tanh pooler; per-layer features feed the
// Mahalanobis detectors. Forward passes are pure; parameters never change
// outside the training module.

#include <cstdint>
#include <variant>
#include <vector>

#include "oods/numerics.hpp"
#include "oods/rng.hpp"

namespace oods::model {

struct DenseLayer {
    numerics::Matrix w;
    numerics::Vector b;
};

struct EncoderParams {
    numerics::Matrix embedding;       // vocab_size x d_emb
    std::vector<DenseLayer> blocks;   // ReLU activations
    DenseLayer pooler;                // tanh activation, produces the last layer

    // Number of scorable layers: the ReLU blocks plus the tanh pooler. The
    // embedding mean is not scored.
    std::size_t n_layers() const { return blocks.size() + 1; }
};

struct LayerFeatures {
    std::vector<numerics::Vector> per_layer;  // f^1 .. f^n

    const numerics::Vector& pooled() const { return per_layer.back(); }
};

struct LinearHead {
    numerics::Matrix w;  // C x |h|
    numerics::Vector b;  // C
};

struct DRMHead {
    numerics::Matrix w_c;  // C x |h|
    numerics::Vector b_c;  // C
    numerics::Matrix w_d;  // 1 x |h|
    double b_d = 1.0;
    double delta = 3.0;
    bool symmetric_clamp = false;  // literal reading maps both tails to +delta

    std::size_t n_classes() const { return w_c.rows(); }
};

using Head = std::variant<LinearHead, DRMHead>;

struct DRMOutput {
    numerics::Vector f_c;
    double f_d_raw = 0.0;
    double f_d_clamped = 0.0;
    numerics::Vector f;  // f_c divided by the guarded clamped divisor
};

LayerFeatures encoder_forward(const std::vector<int>& tokens, const EncoderParams& params);

// Identity on (-delta, delta); +delta on both tails unless symmetric, in
// which case the lower tail maps to -delta.
double clamp_fd(double f_d, double delta, bool symmetric = false);

// Sign-preserving divisor floor at 1e-6 (zero counts as positive); an
// unguarded divisor near zero would blow the logits up at initialization.
double guard_divisor(double f_d_clamped);

DRMOutput drm_forward(const numerics::Vector& h, const DRMHead& head);
numerics::Vector linear_forward(const numerics::Vector& h, const LinearHead& head);

// Max-subtracted, numerically stable.
numerics::Vector softmax(const numerics::Vector& logits);

double sigmoid(double x);

// -log(p[y]) evaluated in log space: logsumexp(f) - f[y].
double log_softmax_nll(const numerics::Vector& logits, std::size_t y);

// Argmax with ties broken toward the lowest index.
std::size_t predict(const numerics::Vector& probs);

// Logits an utterance-level classifier thresholds: f for the linear head,
// f_c / f_d for the divide-by-domain head.
numerics::Vector head_logits(const numerics::Vector& h, const Head& head);

struct EncoderShape {
    std::size_t vocab_size = 0;
    std::size_t d_emb = 32;
    std::vector<std::size_t> widths = {64, 64, 64};  // ReLU block outputs
    std::size_t pooled_dim = 64;
};

EncoderParams init_encoder(const EncoderShape& shape, Rng& rng);
LinearHead init_linear_head(std::size_t n_classes, std::size_t h_dim, Rng& rng);
DRMHead init_drm_head(std::size_t n_classes, std::size_t h_dim, double delta, Rng& rng);

}  // namespace oods::model
