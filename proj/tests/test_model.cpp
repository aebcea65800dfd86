#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oods/errors.hpp"
#include "oods/model.hpp"
#include "oods/rng.hpp"

using namespace oods;
using model::DRMHead;
using model::EncoderParams;
using model::LinearHead;
using numerics::Matrix;
using numerics::Vector;

namespace {

EncoderParams random_encoder(std::size_t vocab, std::size_t d_emb,
                             std::vector<std::size_t> widths, std::size_t pooled, Rng& rng) {
    model::EncoderShape shape;
    shape.vocab_size = vocab;
    shape.d_emb = d_emb;
    shape.widths = std::move(widths);
    shape.pooled_dim = pooled;
    return model::init_encoder(shape, rng);
}

// Straight-line recomputation with local loops, independent of the library's
// forward pass.
std::vector<Vector> oracle_forward(const std::vector<int>& tokens, const EncoderParams& p) {
    Vector cur(p.embedding.cols(), 0.0);
    for (int t : tokens)
        for (std::size_t j = 0; j < p.embedding.cols(); ++j) cur[j] += p.embedding(t, j);
    for (double& x : cur) x /= static_cast<double>(tokens.size());

    std::vector<Vector> layers;
    for (const auto& block : p.blocks) {
        Vector next(block.w.rows(), 0.0);
        for (std::size_t i = 0; i < block.w.rows(); ++i) {
            double z = block.b[i];
            for (std::size_t j = 0; j < block.w.cols(); ++j) z += block.w(i, j) * cur[j];
            next[i] = std::max(0.0, z);
        }
        layers.push_back(next);
        cur = next;
    }
    Vector pooled(p.pooler.w.rows(), 0.0);
    for (std::size_t i = 0; i < p.pooler.w.rows(); ++i) {
        double z = p.pooler.b[i];
        for (std::size_t j = 0; j < p.pooler.w.cols(); ++j) z += p.pooler.w(i, j) * cur[j];
        pooled[i] = std::tanh(z);
    }
    layers.push_back(pooled);
    return layers;
}

}  // namespace

TEST_CASE("encoder_forward propagates zeros except through the pooler bias") {
    Rng rng(1);
    EncoderParams p = random_encoder(5, 3, {4}, 2, rng);
    for (double& x : p.embedding.values()) x = 0.0;
    for (double& x : p.blocks[0].w.values()) x = 0.0;
    std::fill(p.blocks[0].b.begin(), p.blocks[0].b.end(), 0.0);
    for (double& x : p.pooler.w.values()) x = 0.0;
    p.pooler.b = {0.3, -1.2};

    const auto feats = model::encoder_forward({1, 2, 3}, p);
    REQUIRE(feats.per_layer.size() == 2);
    for (double x : feats.per_layer[0]) CHECK(x == 0.0);
    CHECK(feats.pooled()[0] == doctest::Approx(std::tanh(0.3)).epsilon(1e-15));
    CHECK(feats.pooled()[1] == doctest::Approx(std::tanh(-1.2)).epsilon(1e-15));
}

TEST_CASE("encoder_forward mean pooling ignores repetition and order") {
    Rng rng(2);
    const EncoderParams p = random_encoder(7, 4, {5, 5}, 3, rng);

    const auto once = model::encoder_forward({3}, p);
    const auto thrice = model::encoder_forward({3, 3, 3}, p);
    for (std::size_t l = 0; l < once.per_layer.size(); ++l) {
        for (std::size_t i = 0; i < once.per_layer[l].size(); ++i) {
            CHECK(once.per_layer[l][i] == doctest::Approx(thrice.per_layer[l][i]).epsilon(1e-15));
        }
    }

    const auto fwd = model::encoder_forward({1, 4, 2, 4}, p);
    const auto perm = model::encoder_forward({4, 2, 4, 1}, p);
    for (std::size_t i = 0; i < fwd.pooled().size(); ++i) {
        CHECK(fwd.pooled()[i] == doctest::Approx(perm.pooled()[i]).epsilon(1e-15));
    }
}

TEST_CASE("encoder_forward matches the straight-line oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const EncoderParams p = random_encoder(9, 3, {4, 6}, 5, rng);
        std::vector<int> tokens;
        const auto len = 1 + rng.below(6);
        for (std::uint64_t i = 0; i < len; ++i) tokens.push_back(static_cast<int>(rng.below(9)));

        const auto feats = model::encoder_forward(tokens, p);
        const auto expected = oracle_forward(tokens, p);
        REQUIRE(feats.per_layer.size() == expected.size());
        for (std::size_t l = 0; l < expected.size(); ++l) {
            for (std::size_t i = 0; i < expected[l].size(); ++i) {
                CHECK(feats.per_layer[l][i] ==
                      doctest::Approx(expected[l][i]).epsilon(1e-12));
            }
        }
        CHECK(&feats.pooled() == &feats.per_layer.back());
    }
}

TEST_CASE("encoder_forward validates tokens") {
    Rng rng(4);
    const EncoderParams p = random_encoder(5, 3, {4}, 2, rng);
    CHECK_THROWS_AS(model::encoder_forward({0, 5}, p), TokenOutOfRange);
    CHECK_THROWS_AS(model::encoder_forward({-1}, p), TokenOutOfRange);
    CHECK_THROWS_AS(model::encoder_forward({}, p), DataError);
}

TEST_CASE("clamp_fd follows the piecewise definition") {
    CHECK(model::clamp_fd(2.0, 3.0) == 2.0);
    CHECK(model::clamp_fd(5.0, 3.0) == 3.0);
    CHECK(model::clamp_fd(-5.0, 3.0) == 3.0);  // lower tail also maps to +delta
    CHECK(model::clamp_fd(3.0, 3.0) == 3.0);
    CHECK(model::clamp_fd(-3.0, 3.0) == 3.0);
    CHECK(model::clamp_fd(0.0, 3.0) == 0.0);

    // optional symmetric reading
    CHECK(model::clamp_fd(-5.0, 3.0, true) == -3.0);
    CHECK(model::clamp_fd(5.0, 3.0, true) == 3.0);
    CHECK(model::clamp_fd(1.0, 3.0, true) == 1.0);
}

TEST_CASE("clamp_fd output stays inside [-delta, delta]") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const double fd = rng.uniform(-10.0, 10.0);
        const double delta = rng.uniform(0.1, 5.0);
        const double c = model::clamp_fd(fd, delta);
        CHECK(c >= -delta);
        CHECK(c <= delta);
        if (fd > -delta && fd < delta) CHECK(c == fd);
    }
}

TEST_CASE("drm_forward reproduces the worked overconfidence example") {
    DRMHead head;
    head.w_c = Matrix(2, 1);
    head.b_c = {0.5, 0.8};
    head.w_d = Matrix(1, 1);
    head.b_d = 0.1;
    head.delta = 3.0;

    const auto out = model::drm_forward({0.0}, head);
    CHECK(out.f_c[0] == 0.5);
    CHECK(out.f_c[1] == 0.8);
    CHECK(out.f_d_raw == 0.1);
    CHECK(out.f_d_clamped == 0.1);
    CHECK(out.f[0] == doctest::Approx(5.0).epsilon(1e-14));
    CHECK(out.f[1] == doctest::Approx(8.0).epsilon(1e-14));

    const auto probs = model::softmax(out.f);
    CHECK(probs[0] == doctest::Approx(0.047425873177566781).epsilon(1e-12));
    CHECK(probs[1] == doctest::Approx(0.95257412682243322).epsilon(1e-12));
}

TEST_CASE("drm_forward with unit divisor is the identity on f_c") {
    Rng rng(6);
    DRMHead head = model::init_drm_head(3, 4, 3.0, rng);
    for (double& x : head.w_d.values()) x = 0.0;
    head.b_d = 1.0;

    const Vector h{0.1, -0.4, 0.9, 0.2};
    const auto out = model::drm_forward(h, head);
    CHECK(out.f_d_clamped == 1.0);
    for (std::size_t i = 0; i < out.f.size(); ++i) CHECK(out.f[i] == out.f_c[i]);
}

TEST_CASE("drm_forward matches an independent matrix-multiply oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        DRMHead head = model::init_drm_head(4, 6, 3.0, rng);
        Vector h(6);
        for (double& x : h) x = rng.uniform(-2.0, 2.0);

        const auto out = model::drm_forward(h, head);

        double fd = head.b_d;
        for (std::size_t j = 0; j < 6; ++j) fd += head.w_d(0, j) * h[j];
        CHECK(out.f_d_raw == doctest::Approx(fd).epsilon(1e-12));
        for (std::size_t i = 0; i < 4; ++i) {
            double fc = head.b_c[i];
            for (std::size_t j = 0; j < 6; ++j) fc += head.w_c(i, j) * h[j];
            CHECK(out.f_c[i] == doctest::Approx(fc).epsilon(1e-12));
            const double clamped = fd > -3.0 && fd < 3.0 ? fd : 3.0;
            CHECK(out.f[i] == doctest::Approx(fc / clamped).epsilon(1e-12));
        }
    }
}

TEST_CASE("drm_forward guards a near-zero divisor") {
    DRMHead head;
    head.w_c = Matrix(2, 1);
    head.b_c = {1.0, 2.0};
    head.w_d = Matrix(1, 1);
    head.b_d = 0.0;  // raw divisor exactly zero
    head.delta = 3.0;

    const auto out = model::drm_forward({0.0}, head);
    CHECK(std::isfinite(out.f[0]));
    CHECK(out.f[0] == doctest::Approx(1.0 / 1e-6));
    CHECK(out.f[1] == doctest::Approx(2.0 / 1e-6));

    head.b_d = -1e-9;
    const auto neg = model::drm_forward({0.0}, head);
    CHECK(neg.f[0] == doctest::Approx(-1.0 / 1e-6));
}

TEST_CASE("argmax is preserved whenever the clamped divisor is positive") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        DRMHead head = model::init_drm_head(5, 3, 3.0, rng);
        head.b_d = rng.uniform(0.05, 4.0);  // keeps f_d_raw positive for h below
        for (double& x : head.w_d.values()) x = rng.uniform(-0.01, 0.01);
        Vector h(3);
        for (double& x : h) x = rng.uniform(-1.0, 1.0);

        const auto out = model::drm_forward(h, head);
        REQUIRE(out.f_d_clamped > 0.0);
        CHECK(model::predict(model::softmax(out.f)) ==
              model::predict(model::softmax(out.f_c)));
    }
}

TEST_CASE("linear_forward basics and oracle") {
    LinearHead head;
    head.w = Matrix::identity(3);
    head.b = Vector(3, 0.0);
    const Vector h{0.5, -1.0, 2.0};
    CHECK(model::linear_forward(h, head) == h);

    head.w = Matrix(3, 3);
    head.b = {1.0, 2.0, 3.0};
    CHECK(model::linear_forward(h, head) == head.b);

    Rng rng(9);
    LinearHead random = model::init_linear_head(4, 3, rng);
    const auto logits = model::linear_forward(h, random);
    for (std::size_t i = 0; i < 4; ++i) {
        double expected = random.b[i];
        for (std::size_t j = 0; j < 3; ++j) expected += random.w(i, j) * h[j];
        CHECK(logits[i] == doctest::Approx(expected).epsilon(1e-12));
    }

    CHECK_THROWS_AS(model::linear_forward({1.0}, random), DimensionMismatch);
}

TEST_CASE("softmax fixtures") {
    const auto uniform = model::softmax({0.0, 0.0});
    CHECK(uniform[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(uniform[1] == doctest::Approx(0.5).epsilon(1e-15));

    const auto appendix = model::softmax({5.0, 8.0});
    CHECK(appendix[0] == doctest::Approx(0.047425873177566781).epsilon(1e-12));
    CHECK(appendix[1] == doctest::Approx(0.95257412682243322).epsilon(1e-12));

    const auto small = model::softmax({0.5, 0.8});
    CHECK(small[0] == doctest::Approx(0.42555748318834101).epsilon(1e-12));
    CHECK(small[1] == doctest::Approx(0.57444251681165899).epsilon(1e-12));
}

TEST_CASE("softmax sums to one and is shift invariant") {
    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(6);
        Vector logits(n);
        for (double& x : logits) x = rng.uniform(-30.0, 30.0);

        const auto probs = model::softmax(logits);
        double sum = 0.0;
        for (double p : probs) {
            CHECK(p > 0.0);
            CHECK(p < 1.0 + 1e-15);
            sum += p;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

        const double shift = rng.uniform(-5.0, 5.0);
        Vector shifted = logits;
        for (double& x : shifted) x += shift;
        const auto probs2 = model::softmax(shifted);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(probs2[i] == doctest::Approx(probs[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax of extreme logits stays finite") {
    const auto probs = model::softmax({1000.0, -1000.0, 999.0});
    for (double p : probs) CHECK(std::isfinite(p));
    CHECK(probs[0] > probs[2]);
}

TEST_CASE("predict takes the argmax with low-index tie break") {
    CHECK(model::predict({0.1, 0.9}) == 1);
    CHECK(model::predict({0.5, 0.5}) == 0);
    CHECK(model::predict({0.2, 0.4, 0.4}) == 1);

    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Vector probs(4);
        for (double& x : probs) x = rng.uniform(0.0, 1.0);
        std::size_t expected = 0;
        for (std::size_t i = 1; i < probs.size(); ++i) {
            if (probs[i] > probs[expected]) expected = i;
        }
        CHECK(model::predict(probs) == expected);
    }
}
