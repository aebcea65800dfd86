#include "oods/training.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "oods/errors.hpp"
#include "oods/rng.hpp"

namespace oods::train {

using model::DRMHead;
using model::DRMOutput;
using model::LinearHead;
using numerics::Matrix;
using numerics::Vector;

std::string to_string(HeadKind kind) {
    return kind == HeadKind::Linear ? "linear" : "drm";
}

HeadKind head_kind_from_string(const std::string& name) {
    if (name == "linear") return HeadKind::Linear;
    if (name == "drm") return HeadKind::Drm;
    throw InvalidConfig("unknown head kind '" + name + "' (expected linear|drm)");
}

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::Sgd ? "sgd" : "adam";
}

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "sgd") return OptimizerKind::Sgd;
    if (name == "adam") return OptimizerKind::Adam;
    throw InvalidConfig("unknown optimizer '" + name + "' (expected sgd|adam)");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw InvalidConfig("train: epochs must be >= 1");
    if (batch_size < 1) throw InvalidConfig("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw InvalidConfig("train: learning_rate must be positive");
    if (!(delta > 0.0)) throw InvalidConfig("train: delta must be positive");
    if (min_vocab_freq < 1) throw InvalidConfig("train: min_vocab_freq must be >= 1");
    if (widths.empty()) throw InvalidConfig("train: encoder needs at least one block");
}

ModelParams zeros_like(const ModelParams& params) {
    ModelParams z = params;
    for_each_tensor(z, [](double* data, std::size_t n) { std::fill(data, data + n, 0.0); });
    return z;
}

double classification_loss(const Vector& f, std::size_t y) {
    return model::log_softmax_nll(f, y);
}

double domain_loss(double f_d) {
    const double gap = 1.0 - model::sigmoid(f_d);
    return gap * gap;
}

namespace {

struct SampleTrace {
    Vector f0;
    std::vector<Vector> acts;  // per-layer activations, last one is pooled h
    Vector logits;             // the head output the loss consumes
    DRMOutput drm;             // populated for the DRM head
};

SampleTrace forward_trace(const std::vector<int>& tokens, const ModelParams& params) {
    SampleTrace trace;
    const Matrix& embedding = params.encoder.embedding;
    const std::size_t d_emb = embedding.cols();

    trace.f0.assign(d_emb, 0.0);
    for (int t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= embedding.rows()) {
            throw TokenOutOfRange("token id " + std::to_string(t) + " outside vocab of size " +
                                  std::to_string(embedding.rows()));
        }
        for (std::size_t j = 0; j < d_emb; ++j) trace.f0[j] += embedding(t, j);
    }
    for (double& x : trace.f0) x /= static_cast<double>(tokens.size());

    const Vector* cur = &trace.f0;
    for (const auto& block : params.encoder.blocks) {
        Vector z = numerics::add(numerics::matvec(block.w, *cur), block.b);
        for (double& x : z) x = x > 0.0 ? x : 0.0;
        trace.acts.push_back(std::move(z));
        cur = &trace.acts.back();
    }
    Vector zp = numerics::add(numerics::matvec(params.encoder.pooler.w, *cur),
                              params.encoder.pooler.b);
    for (double& x : zp) x = std::tanh(x);
    trace.acts.push_back(std::move(zp));

    const Vector& h = trace.acts.back();
    if (const auto* linear = std::get_if<LinearHead>(&params.head)) {
        trace.logits = model::linear_forward(h, *linear);
    } else {
        trace.drm = model::drm_forward(h, std::get<DRMHead>(params.head));
        trace.logits = trace.drm.f;
    }
    return trace;
}

double sample_domain_input(const SampleTrace& trace, const LossOptions& opts) {
    return opts.clamp_in_domain_loss ? trace.drm.f_d_clamped : trace.drm.f_d_raw;
}

}  // namespace

LossBreakdown total_loss(const Batch& batch, const ModelParams& params,
                         const LossOptions& opts) {
    if (batch.empty()) throw DataError("total_loss: empty batch");
    LossBreakdown sum;
    for (const EncodedSample& sample : batch) {
        if (!sample.label) throw OODInTraining("unlabeled sample in a training batch");
        SampleTrace trace = forward_trace(sample.tokens, params);
        sum.classification += classification_loss(trace.logits, *sample.label);
        if (std::holds_alternative<DRMHead>(params.head)) {
            sum.domain += domain_loss(sample_domain_input(trace, opts));
        }
    }
    const double n = static_cast<double>(batch.size());
    sum.classification /= n;
    sum.domain /= n;
    sum.total = sum.classification + sum.domain;
    return sum;
}

BackwardResult backward(const Batch& batch, const ModelParams& params,
                        const LossOptions& opts) {
    if (batch.empty()) throw DataError("backward: empty batch");
    BackwardResult result{zeros_like(params), {}};
    GradientSet& grads = result.grads;

    const auto& blocks = params.encoder.blocks;
    const std::size_t n_blocks = blocks.size();

    for (const EncodedSample& sample : batch) {
        if (!sample.label) throw OODInTraining("unlabeled sample in a training batch");
        const std::size_t y = *sample.label;
        SampleTrace trace = forward_trace(sample.tokens, params);
        const Vector& h = trace.acts.back();

        result.loss.classification += classification_loss(trace.logits, y);

        // dL_cls/df = softmax(f) - onehot(y)
        Vector g_f = model::softmax(trace.logits);
        g_f[y] -= 1.0;

        Vector g_h(h.size(), 0.0);
        if (const auto* linear = std::get_if<LinearHead>(&params.head)) {
            auto& g_head = std::get<LinearHead>(grads.head);
            for (std::size_t i = 0; i < g_f.size(); ++i) {
                g_head.b[i] += g_f[i];
                for (std::size_t j = 0; j < h.size(); ++j) {
                    g_head.w(i, j) += g_f[i] * h[j];
                    g_h[j] += linear->w(i, j) * g_f[i];
                }
            }
        } else {
            const auto& drm = std::get<DRMHead>(params.head);
            auto& g_head = std::get<DRMHead>(grads.head);
            const DRMOutput& out = trace.drm;
            const double divisor = model::guard_divisor(out.f_d_clamped);

            // Through f = f_c / divisor.
            Vector g_fc(g_f.size());
            double g_divisor = 0.0;
            for (std::size_t i = 0; i < g_f.size(); ++i) {
                g_fc[i] = g_f[i] / divisor;
                g_divisor -= g_f[i] * out.f_c[i] / (divisor * divisor);
            }
            // Guard and clamp are constant branches outside their pass-through
            // regions, so the chain contributes zero there.
            const bool guard_passthrough = std::abs(out.f_d_clamped) >= 1e-6;
            const bool clamp_interior =
                out.f_d_raw > -drm.delta && out.f_d_raw < drm.delta;
            double g_fd_raw = (guard_passthrough && clamp_interior) ? g_divisor : 0.0;

            // Domain loss: d/dx (1 - sigmoid(x))^2 = -2 sigmoid(x) (1 - sigmoid(x))^2
            const double x = sample_domain_input(trace, opts);
            result.loss.domain += domain_loss(x);
            const double sig = model::sigmoid(x);
            const double g_dom = -2.0 * sig * (1.0 - sig) * (1.0 - sig);
            g_fd_raw += opts.clamp_in_domain_loss ? (clamp_interior ? g_dom : 0.0) : g_dom;

            for (std::size_t i = 0; i < g_fc.size(); ++i) {
                g_head.b_c[i] += g_fc[i];
                for (std::size_t j = 0; j < h.size(); ++j) {
                    g_head.w_c(i, j) += g_fc[i] * h[j];
                    g_h[j] += drm.w_c(i, j) * g_fc[i];
                }
            }
            g_head.b_d += g_fd_raw;
            for (std::size_t j = 0; j < h.size(); ++j) {
                g_head.w_d(0, j) += g_fd_raw * h[j];
                g_h[j] += drm.w_d(0, j) * g_fd_raw;
            }
        }

        // tanh pooler
        Vector g_z(h.size());
        for (std::size_t i = 0; i < h.size(); ++i) g_z[i] = g_h[i] * (1.0 - h[i] * h[i]);
        const Vector& pooler_in = n_blocks > 0 ? trace.acts[n_blocks - 1] : trace.f0;
        auto& g_pooler = grads.encoder.pooler;
        Vector g_prev(pooler_in.size(), 0.0);
        for (std::size_t i = 0; i < g_z.size(); ++i) {
            g_pooler.b[i] += g_z[i];
            for (std::size_t j = 0; j < pooler_in.size(); ++j) {
                g_pooler.w(i, j) += g_z[i] * pooler_in[j];
                g_prev[j] += params.encoder.pooler.w(i, j) * g_z[i];
            }
        }

        // ReLU blocks, back to front. Activation > 0 iff pre-activation > 0.
        Vector g_act = std::move(g_prev);
        for (std::size_t bi = n_blocks; bi > 0; --bi) {
            const std::size_t b = bi - 1;
            const Vector& act = trace.acts[b];
            const Vector& in = b > 0 ? trace.acts[b - 1] : trace.f0;
            Vector g_zb(act.size());
            for (std::size_t i = 0; i < act.size(); ++i) {
                g_zb[i] = act[i] > 0.0 ? g_act[i] : 0.0;
            }
            auto& g_block = grads.encoder.blocks[b];
            Vector g_in(in.size(), 0.0);
            for (std::size_t i = 0; i < g_zb.size(); ++i) {
                g_block.b[i] += g_zb[i];
                for (std::size_t j = 0; j < in.size(); ++j) {
                    g_block.w(i, j) += g_zb[i] * in[j];
                    g_in[j] += blocks[b].w(i, j) * g_zb[i];
                }
            }
            g_act = std::move(g_in);
        }

        // Mean-pooled embedding rows.
        const double inv_k = 1.0 / static_cast<double>(sample.tokens.size());
        for (int t : sample.tokens) {
            for (std::size_t j = 0; j < g_act.size(); ++j) {
                grads.encoder.embedding(t, j) += g_act[j] * inv_k;
            }
        }
    }

    const double inv_n = 1.0 / static_cast<double>(batch.size());
    bool finite = true;
    for_each_tensor(grads, [&](double* data, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            data[i] *= inv_n;
            if (!std::isfinite(data[i])) finite = false;
        }
    });
    if (!finite) throw NonFiniteGradient("gradient contains NaN or Inf");

    result.loss.classification *= inv_n;
    result.loss.domain *= inv_n;
    result.loss.total = result.loss.classification + result.loss.domain;
    return result;
}

OptimizerState make_optimizer_state(const ModelParams& params) {
    return OptimizerState{zeros_like(params), zeros_like(params), 0};
}

void optimizer_step(ModelParams& params, const GradientSet& grads, OptimizerState& state,
                    const TrainConfig& cfg) {
    if (cfg.optimizer == OptimizerKind::Sgd) {
        std::vector<std::pair<const double*, std::size_t>> g_tensors;
        for_each_tensor(grads,
                        [&](const double* data, std::size_t n) { g_tensors.emplace_back(data, n); });
        std::size_t ti = 0;
        for_each_tensor(params, [&](double* data, std::size_t n) {
            const double* gd = g_tensors[ti++].first;
            for (std::size_t i = 0; i < n; ++i) data[i] -= cfg.learning_rate * gd[i];
        });
        return;
    }

    // Adam with bias correction.
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    std::vector<std::pair<const double*, std::size_t>> g_tensors;
    std::vector<std::pair<double*, std::size_t>> m_tensors, v_tensors;
    for_each_tensor(grads,
                    [&](const double* data, std::size_t n) { g_tensors.emplace_back(data, n); });
    for_each_tensor(state.m, [&](double* data, std::size_t n) { m_tensors.emplace_back(data, n); });
    for_each_tensor(state.v, [&](double* data, std::size_t n) { v_tensors.emplace_back(data, n); });

    std::size_t ti = 0;
    for_each_tensor(params, [&](double* data, std::size_t n) {
        const double* gd = g_tensors[ti].first;
        double* md = m_tensors[ti].first;
        double* vd = v_tensors[ti].first;
        ++ti;
        for (std::size_t i = 0; i < n; ++i) {
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gd[i];
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
            const double m_hat = md[i] / bc1;
            const double v_hat = vd[i] / bc2;
            data[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
        }
    });
}

EncodedSample encode_sample(const data::Utterance& u, const data::Dataset& ds,
                            const data::Vocab& vocab) {
    EncodedSample sample;
    sample.tokens = data::encode(u.text, vocab);
    if (u.label) sample.label = ds.class_index(*u.label);
    return sample;
}

namespace {

double accuracy_on(const std::vector<EncodedSample>& samples, const ModelParams& params) {
    std::size_t correct = 0;
    for (const EncodedSample& s : samples) {
        SampleTrace trace = forward_trace(s.tokens, params);
        if (model::predict(model::softmax(trace.logits)) == *s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

std::vector<EncodedSample> encode_dataset(const data::Dataset& ds, const data::Dataset& class_src,
                                          const data::Vocab& vocab) {
    if (ds.domain_tag != data::DomainTag::Ind) {
        throw OODInTraining("training and validation data must be IND");
    }
    std::vector<EncodedSample> out;
    out.reserve(ds.size());
    for (const data::Utterance& u : ds.utterances) {
        if (!u.label) throw OODInTraining("IND dataset contains an unlabeled utterance");
        out.push_back(encode_sample(u, class_src, vocab));
    }
    return out;
}

}  // namespace

TrainedModel train(const data::Dataset& ind_train, const data::Dataset& ind_dev,
                   const TrainConfig& cfg) {
    cfg.validate();
    if (ind_train.domain_tag != data::DomainTag::Ind ||
        ind_dev.domain_tag != data::DomainTag::Ind) {
        throw OODInTraining("training and validation data must be IND");
    }
    if (ind_train.classes.size() < 2) throw InvalidConfig("train: need at least 2 classes");

    TrainedModel result;
    result.vocab = data::build_vocab(ind_train, cfg.min_vocab_freq);
    result.classes = ind_train.classes;

    const auto train_samples = encode_dataset(ind_train, ind_train, result.vocab);
    const auto dev_samples = encode_dataset(ind_dev, ind_train, result.vocab);

    Rng rng(cfg.seed);
    model::EncoderShape shape;
    shape.vocab_size = result.vocab.size();
    shape.d_emb = cfg.d_emb;
    shape.widths = cfg.widths;
    shape.pooled_dim = cfg.pooled_dim;

    ModelParams params;
    params.encoder = model::init_encoder(shape, rng);
    if (cfg.head_kind == HeadKind::Linear) {
        params.head = model::init_linear_head(result.classes.size(), cfg.pooled_dim, rng);
    } else {
        DRMHead head = model::init_drm_head(result.classes.size(), cfg.pooled_dim, cfg.delta, rng);
        head.symmetric_clamp = cfg.symmetric_clamp;
        params.head = std::move(head);
    }

    const LossOptions loss_opts{cfg.clamp_in_domain_loss};
    OptimizerState opt_state = make_optimizer_state(params);

    ModelParams best_params = params;
    double best_dev_accuracy = -1.0;
    std::size_t best_epoch = 0;
    double epoch_train_loss = 0.0;

    std::vector<std::size_t> order(train_samples.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            Batch batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(train_samples[order[i]]);

            BackwardResult res = [&] {
                try {
                    return backward(batch, params, loss_opts);
                } catch (const NonFiniteGradient&) {
                    throw Diverged("training diverged at epoch " + std::to_string(epoch));
                }
            }();
            if (!std::isfinite(res.loss.total)) {
                throw Diverged("training loss is non-finite at epoch " + std::to_string(epoch));
            }
            loss_sum += res.loss.total * static_cast<double>(batch.size());
            optimizer_step(params, res.grads, opt_state, cfg);
        }
        epoch_train_loss = loss_sum / static_cast<double>(train_samples.size());

        // Ties go to the later epoch: accuracy saturates quickly at desk
        // scale and the domain loss keeps improving afterwards.
        const double dev_accuracy = accuracy_on(dev_samples, params);
        if (dev_accuracy >= best_dev_accuracy) {
            best_dev_accuracy = dev_accuracy;
            best_params = params;
            best_epoch = epoch;
        }
    }

    result.params = std::move(best_params);
    result.meta.config = cfg;
    result.meta.final_train_loss = epoch_train_loss;
    result.meta.final_dev_loss = total_loss(dev_samples, params, loss_opts).total;
    result.meta.best_dev_accuracy = best_dev_accuracy;
    result.meta.best_epoch = best_epoch;
    return result;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'O', 'O', 'D', 'S'};
constexpr std::uint32_t kFormatVersion = 1;

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64(std::string& out, double d) {
    append_u64(out, std::bit_cast<std::uint64_t>(d));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw CorruptFile("model file is truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

nlohmann::json config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["optimizer"] = to_string(cfg.optimizer);
    j["beta1"] = cfg.beta1;
    j["beta2"] = cfg.beta2;
    j["adam_eps"] = cfg.adam_eps;
    j["seed"] = cfg.seed;
    j["head"] = to_string(cfg.head_kind);
    j["delta"] = cfg.delta;
    j["symmetric_clamp"] = cfg.symmetric_clamp;
    j["clamp_in_domain_loss"] = cfg.clamp_in_domain_loss;
    j["min_vocab_freq"] = cfg.min_vocab_freq;
    j["d_emb"] = cfg.d_emb;
    j["widths"] = cfg.widths;
    j["pooled_dim"] = cfg.pooled_dim;
    return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.epochs = j.at("epochs").get<std::size_t>();
    cfg.batch_size = j.at("batch_size").get<std::size_t>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
    cfg.beta1 = j.at("beta1").get<double>();
    cfg.beta2 = j.at("beta2").get<double>();
    cfg.adam_eps = j.at("adam_eps").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.head_kind = head_kind_from_string(j.at("head").get<std::string>());
    cfg.delta = j.at("delta").get<double>();
    cfg.symmetric_clamp = j.at("symmetric_clamp").get<bool>();
    cfg.clamp_in_domain_loss = j.at("clamp_in_domain_loss").get<bool>();
    cfg.min_vocab_freq = j.at("min_vocab_freq").get<int>();
    cfg.d_emb = j.at("d_emb").get<std::size_t>();
    cfg.widths = j.at("widths").get<std::vector<std::size_t>>();
    cfg.pooled_dim = j.at("pooled_dim").get<std::size_t>();
    return cfg;
}

}  // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t len, std::uint32_t seed) {
    static const auto table = make_crc_table();
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void save_model(const TrainedModel& m, const std::string& path) {
    nlohmann::json meta;
    meta["classes"] = m.classes;
    meta["config"] = config_to_json(m.meta.config);
    meta["train"] = {
        {"final_train_loss", m.meta.final_train_loss},
        {"final_dev_loss", m.meta.final_dev_loss},
        {"best_dev_accuracy", m.meta.best_dev_accuracy},
        {"best_epoch", m.meta.best_epoch},
        {"train_data_path", m.meta.train_data_path},
    };
    meta["vocab"] = m.vocab.id_to_token;
    const std::string meta_bytes = meta.dump();

    std::string out;
    out.append(kMagic, 4);
    append_u32(out, kFormatVersion);
    append_u64(out, meta_bytes.size());
    out += meta_bytes;

    std::size_t n_doubles = 0;
    for_each_tensor(m.params, [&](const double*, std::size_t n) { n_doubles += n; });
    append_u64(out, n_doubles);
    for_each_tensor(m.params, [&](const double* data, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) append_f64(out, data[i]);
    });

    append_u32(out, crc32(reinterpret_cast<const unsigned char*>(out.data()), out.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for " + path);
}

TrainedModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();

    if (buf.size() < 4 + 4 + 8 + 8 + 4) throw CorruptFile(path + ": model file is truncated");
    const std::uint32_t stored_crc =
        crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4);
    Reader tail{buf, buf.size() - 4};
    if (tail.u32() != stored_crc) throw CorruptFile(path + ": checksum mismatch");

    Reader r{buf};
    if (r.bytes(4) != std::string(kMagic, 4)) throw CorruptFile(path + ": bad magic");
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion) {
        throw VersionMismatch(path + ": format version " + std::to_string(version) +
                              " (expected " + std::to_string(kFormatVersion) + ")");
    }

    const std::uint64_t meta_len = r.u64();
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(r.bytes(meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFile(path + ": bad metadata: " + e.what());
    }

    TrainedModel m;
    try {
        m.classes = meta.at("classes").get<std::vector<std::string>>();
        m.meta.config = config_from_json(meta.at("config"));
        m.meta.final_train_loss = meta.at("train").at("final_train_loss").get<double>();
        m.meta.final_dev_loss = meta.at("train").at("final_dev_loss").get<double>();
        m.meta.best_dev_accuracy = meta.at("train").at("best_dev_accuracy").get<double>();
        m.meta.best_epoch = meta.at("train").at("best_epoch").get<std::size_t>();
        m.meta.train_data_path = meta.at("train").at("train_data_path").get<std::string>();
        m.vocab.id_to_token = meta.at("vocab").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFile(path + ": bad metadata: " + e.what());
    }
    m.meta.format_version = version;
    for (std::size_t i = 0; i < m.vocab.id_to_token.size(); ++i) {
        m.vocab.token_to_id[m.vocab.id_to_token[i]] = static_cast<int>(i) + 1;
    }

    // Rebuild the tensor skeleton from config, then fill in canonical order.
    const TrainConfig& cfg = m.meta.config;
    model::EncoderShape shape;
    shape.vocab_size = m.vocab.size();
    shape.d_emb = cfg.d_emb;
    shape.widths = cfg.widths;
    shape.pooled_dim = cfg.pooled_dim;
    Rng dummy(0);
    m.params.encoder = model::init_encoder(shape, dummy);
    if (cfg.head_kind == HeadKind::Linear) {
        m.params.head = model::init_linear_head(m.classes.size(), cfg.pooled_dim, dummy);
    } else {
        DRMHead head = model::init_drm_head(m.classes.size(), cfg.pooled_dim, cfg.delta, dummy);
        head.symmetric_clamp = cfg.symmetric_clamp;
        m.params.head = std::move(head);
    }

    std::size_t expected = 0;
    for_each_tensor(m.params, [&](double*, std::size_t n) { expected += n; });
    const std::uint64_t n_doubles = r.u64();
    if (n_doubles != expected) {
        throw CorruptFile(path + ": parameter count " + std::to_string(n_doubles) +
                          " does not match metadata shapes (" + std::to_string(expected) + ")");
    }
    r.need(n_doubles * 8);
    for_each_tensor(m.params, [&](double* data, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) data[i] = r.f64();
    });
    if (r.pos != buf.size() - 4) throw CorruptFile(path + ": trailing bytes");
    return m;
}

bool bitwise_equal(const TrainedModel& a, const TrainedModel& b) {
    if (a.classes != b.classes) return false;
    if (a.vocab.id_to_token != b.vocab.id_to_token) return false;

    std::vector<std::pair<const double*, std::size_t>> ta, tb;
    for_each_tensor(a.params, [&](const double* d, std::size_t n) { ta.emplace_back(d, n); });
    for_each_tensor(b.params, [&](const double* d, std::size_t n) { tb.emplace_back(d, n); });
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (ta[i].second != tb[i].second) return false;
        if (std::memcmp(ta[i].first, tb[i].first, ta[i].second * sizeof(double)) != 0)
            return false;
    }

    const auto& ma = a.meta;
    const auto& mb = b.meta;
    return std::memcmp(&ma.final_train_loss, &mb.final_train_loss, sizeof(double)) == 0 &&
           std::memcmp(&ma.final_dev_loss, &mb.final_dev_loss, sizeof(double)) == 0 &&
           std::memcmp(&ma.best_dev_accuracy, &mb.best_dev_accuracy, sizeof(double)) == 0 &&
           ma.best_epoch == mb.best_epoch && ma.train_data_path == mb.train_data_path;
}

}  // namespace oods::train
