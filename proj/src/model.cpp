#include "oods/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "oods/errors.hpp"

namespace oods::model {

using numerics::Matrix;
using numerics::Vector;

LayerFeatures encoder_forward(const std::vector<int>& tokens, const EncoderParams& params) {
    if (tokens.empty()) throw DataError("encoder_forward: empty token list");
    const std::size_t vocab_size = params.embedding.rows();
    const std::size_t d_emb = params.embedding.cols();

    Vector f0(d_emb, 0.0);
    for (int t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
            throw TokenOutOfRange("token id " + std::to_string(t) +
                                  " outside vocab of size " + std::to_string(vocab_size));
        }
        for (std::size_t j = 0; j < d_emb; ++j) f0[j] += params.embedding(t, j);
    }
    for (double& x : f0) x /= static_cast<double>(tokens.size());

    LayerFeatures out;
    out.per_layer.reserve(params.n_layers());

    Vector cur = std::move(f0);
    for (const DenseLayer& block : params.blocks) {
        Vector z = numerics::add(numerics::matvec(block.w, cur), block.b);
        for (double& x : z) x = x > 0.0 ? x : 0.0;
        out.per_layer.push_back(z);
        cur = std::move(z);
    }
    Vector zp = numerics::add(numerics::matvec(params.pooler.w, cur), params.pooler.b);
    for (double& x : zp) x = std::tanh(x);
    out.per_layer.push_back(std::move(zp));
    return out;
}

double clamp_fd(double f_d, double delta, bool symmetric) {
    if (f_d > -delta && f_d < delta) return f_d;
    if (symmetric && f_d <= -delta) return -delta;
    return delta;  // both tails, as the piecewise definition is written
}

double guard_divisor(double f_d_clamped) {
    constexpr double kEps = 1e-6;
    if (std::abs(f_d_clamped) >= kEps) return f_d_clamped;
    return f_d_clamped < 0.0 ? -kEps : kEps;
}

DRMOutput drm_forward(const Vector& h, const DRMHead& head) {
    DRMOutput out;
    out.f_c = numerics::add(numerics::matvec(head.w_c, h), head.b_c);
    out.f_d_raw = numerics::matvec(head.w_d, h)[0] + head.b_d;
    out.f_d_clamped = clamp_fd(out.f_d_raw, head.delta, head.symmetric_clamp);
    const double divisor = guard_divisor(out.f_d_clamped);
    out.f.resize(out.f_c.size());
    for (std::size_t i = 0; i < out.f_c.size(); ++i) out.f[i] = out.f_c[i] / divisor;
    return out;
}

Vector linear_forward(const Vector& h, const LinearHead& head) {
    return numerics::add(numerics::matvec(head.w, h), head.b);
}

Vector softmax(const Vector& logits) {
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    Vector probs(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - max_logit);
        sum += probs[i];
    }
    for (double& p : probs) p /= sum;
    return probs;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log_softmax_nll(const Vector& logits, std::size_t y) {
    if (y >= logits.size()) throw DimensionMismatch("log_softmax_nll: class index out of range");
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double f : logits) sum += std::exp(f - max_logit);
    return max_logit + std::log(sum) - logits[y];
}

std::size_t predict(const Vector& probs) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i) {
        if (probs[i] > probs[best]) best = i;
    }
    return best;
}

Vector head_logits(const Vector& h, const Head& head) {
    if (const auto* linear = std::get_if<LinearHead>(&head)) {
        return linear_forward(h, *linear);
    }
    return drm_forward(h, std::get<DRMHead>(head)).f;
}

namespace {

// Xavier-uniform bound for a fan_in x fan_out dense layer.
double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Matrix random_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
    Matrix m(rows, cols);
    for (double& x : m.values()) x = rng.uniform(-bound, bound);
    return m;
}

}  // namespace

EncoderParams init_encoder(const EncoderShape& shape, Rng& rng) {
    if (shape.vocab_size == 0) throw InvalidConfig("init_encoder: vocab_size must be positive");
    if (shape.widths.empty()) throw InvalidConfig("init_encoder: need at least one ReLU block");

    EncoderParams params;
    params.embedding = random_matrix(shape.vocab_size, shape.d_emb, 0.1, rng);

    std::size_t in_dim = shape.d_emb;
    for (std::size_t width : shape.widths) {
        DenseLayer block;
        block.w = random_matrix(width, in_dim, xavier_bound(in_dim, width), rng);
        block.b = Vector(width, 0.0);
        params.blocks.push_back(std::move(block));
        in_dim = width;
    }
    params.pooler.w =
        random_matrix(shape.pooled_dim, in_dim, xavier_bound(in_dim, shape.pooled_dim), rng);
    params.pooler.b = Vector(shape.pooled_dim, 0.0);
    return params;
}

LinearHead init_linear_head(std::size_t n_classes, std::size_t h_dim, Rng& rng) {
    LinearHead head;
    head.w = random_matrix(n_classes, h_dim, xavier_bound(h_dim, n_classes), rng);
    head.b = Vector(n_classes, 0.0);
    return head;
}

DRMHead init_drm_head(std::size_t n_classes, std::size_t h_dim, double delta, Rng& rng) {
    if (delta <= 0.0) throw InvalidConfig("init_drm_head: delta must be positive");
    DRMHead head;
    head.w_c = random_matrix(n_classes, h_dim, xavier_bound(h_dim, n_classes), rng);
    head.b_c = Vector(n_classes, 0.0);
    // b_d = 1 with W_d near zero starts the divisor at ~1, so early training
    // matches a plain linear head while the domain loss pushes f_d upward.
    head.w_d = random_matrix(1, h_dim, 0.1 * xavier_bound(h_dim, 1), rng);
    head.b_d = 1.0;
    head.delta = delta;
    return head;
}

}  // namespace oods::model
