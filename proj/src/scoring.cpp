#include "oods/scoring.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "oods/errors.hpp"

namespace oods::scoring {

using model::LayerFeatures;
using numerics::Matrix;
using numerics::Vector;
using train::TrainedModel;

std::string to_string(Detector d) {
    switch (d) {
        case Detector::Confidence: return "confidence";
        case Detector::Odin: return "odin";
        case Detector::Entropy: return "entropy";
        case Detector::MahaLast: return "maha_last";
        case Detector::LMaha: return "l_maha";
    }
    throw ConfigError("unknown detector enum value");
}

Detector detector_from_string(const std::string& name) {
    if (name == "confidence") return Detector::Confidence;
    if (name == "odin") return Detector::Odin;
    if (name == "entropy") return Detector::Entropy;
    if (name == "maha_last") return Detector::MahaLast;
    if (name == "l_maha") return Detector::LMaha;
    throw ConfigError("unknown detector '" + name +
                      "' (expected confidence|odin|entropy|maha_last|l_maha)");
}

std::vector<Detector> parse_detector_list(const std::string& csv) {
    std::vector<Detector> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto begin = item.find_first_not_of(" \t");
        const auto end = item.find_last_not_of(" \t");
        if (begin == std::string::npos) continue;
        out.push_back(detector_from_string(item.substr(begin, end - begin + 1)));
    }
    if (out.empty()) throw ConfigError("empty detector list");
    return out;
}

std::vector<Vector> mapped_features(const LayerFeatures& feats) {
    std::vector<Vector> mapped = feats.per_layer;
    for (std::size_t l = 0; l + 1 < mapped.size(); ++l) {
        for (double& x : mapped[l]) x = std::tanh(x);
    }
    return mapped;
}

GaussianLayerStats::Layer fit_layer_gaussian(const std::vector<Vector>& features,
                                             const std::vector<std::size_t>& labels,
                                             std::size_t n_classes, double lambda_rel) {
    if (!(lambda_rel > 0.0)) throw InvalidConfig("lambda_rel must be positive");
    if (features.empty() || features.size() != labels.size()) {
        throw DimensionMismatch("fit_layer_gaussian: features and labels disagree");
    }
    const std::size_t n = features.size();
    const std::size_t dim = features.front().size();

    std::vector<std::size_t> class_counts(n_classes, 0);
    for (std::size_t y : labels) {
        if (y >= n_classes) throw DimensionMismatch("fit_layer_gaussian: label out of range");
        ++class_counts[y];
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (class_counts[c] < 2) {
            throw ClassTooSmall("class " + std::to_string(c) + " has " +
                                std::to_string(class_counts[c]) +
                                " samples; need >= 2 to fit Gaussian statistics");
        }
    }

    GaussianLayerStats::Layer layer;
    layer.class_means.assign(n_classes, Vector(dim, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        Vector& mu = layer.class_means[labels[i]];
        for (std::size_t j = 0; j < dim; ++j) mu[j] += features[i][j];
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (double& x : layer.class_means[c]) x /= static_cast<double>(class_counts[c]);
    }

    Matrix sigma(dim, dim);
    for (std::size_t i = 0; i < n; ++i) {
        const Vector d = numerics::sub(features[i], layer.class_means[labels[i]]);
        for (std::size_t r = 0; r < dim; ++r)
            for (std::size_t c = 0; c < dim; ++c) sigma(r, c) += d[r] * d[c];
    }
    for (double& x : sigma.values()) x /= static_cast<double>(n);

    double trace = 0.0;
    for (std::size_t j = 0; j < dim; ++j) trace += sigma(j, j);
    // Zero scatter leaves trace 0; fall back to an absolute ridge so the
    // factorization stays defined.
    double lambda = lambda_rel * trace / static_cast<double>(dim);
    if (!(lambda > 0.0)) lambda = lambda_rel;
    for (std::size_t j = 0; j < dim; ++j) sigma(j, j) += lambda;

    try {
        layer.cov_factor = numerics::cholesky(sigma);
    } catch (const NotSPD& e) {
        throw FitFailed("covariance is not positive definite even with ridge " +
                        std::to_string(lambda) + "; raise lambda_rel (" + e.what() + ")");
    }
    return layer;
}

GaussianLayerStats fit_gaussian_stats(const TrainedModel& m, const data::Dataset& ind_train,
                                      double lambda_rel) {
    if (ind_train.domain_tag != data::DomainTag::Ind) {
        throw OODInTraining("Gaussian statistics must be fitted on IND data only");
    }
    if (!(lambda_rel > 0.0)) throw InvalidConfig("lambda_rel must be positive");

    std::vector<std::size_t> labels;
    std::vector<std::vector<Vector>> samples;  // [sample][layer]
    labels.reserve(ind_train.size());
    for (const data::Utterance& u : ind_train.utterances) {
        if (!u.label) throw OODInTraining("IND training data contains an unlabeled utterance");
        const auto it = std::find(m.classes.begin(), m.classes.end(), *u.label);
        if (it == m.classes.end()) {
            throw DataError("label '" + *u.label + "' unknown to the model");
        }
        const auto tokens = data::encode(u.text, m.vocab);
        samples.push_back(mapped_features(model::encoder_forward(tokens, m.params.encoder)));
        labels.push_back(static_cast<std::size_t>(it - m.classes.begin()));
    }
    if (samples.empty()) throw DataError("fit_gaussian_stats: empty training set");

    const std::size_t n_layers = samples.front().size();
    GaussianLayerStats stats;
    stats.lambda_rel = lambda_rel;
    for (std::size_t l = 0; l < n_layers; ++l) {
        std::vector<Vector> layer_features;
        layer_features.reserve(samples.size());
        for (const auto& s : samples) layer_features.push_back(s[l]);
        try {
            stats.layers.push_back(
                fit_layer_gaussian(layer_features, labels, m.classes.size(), lambda_rel));
        } catch (const FitFailed& e) {
            throw FitFailed("layer " + std::to_string(l + 1) + ": " + e.what());
        }
    }
    return stats;
}

Vector confidence_logits(const TrainedModel& m, const Vector& h, const ScoreOptions& opts) {
    if (const auto* linear = std::get_if<model::LinearHead>(&m.params.head)) {
        return model::linear_forward(h, *linear);
    }
    const auto out = model::drm_forward(h, std::get<model::DRMHead>(m.params.head));
    return opts.score_on_f ? out.f : out.f_c;
}

namespace {

LayerFeatures forward_features(const TrainedModel& m, const std::vector<int>& tokens) {
    return model::encoder_forward(tokens, m.params.encoder);
}

double max_prob(const Vector& probs) {
    return *std::max_element(probs.begin(), probs.end());
}

double confidence_from(const TrainedModel& m, const LayerFeatures& feats,
                       const ScoreOptions& opts) {
    return max_prob(model::softmax(confidence_logits(m, feats.pooled(), opts)));
}

double odin_from(const TrainedModel& m, const LayerFeatures& feats, const ScoreOptions& opts) {
    if (!(opts.temperature > 0.0)) throw InvalidConfig("ODIN temperature must be positive");
    Vector logits = confidence_logits(m, feats.pooled(), opts);
    for (double& x : logits) x /= opts.temperature;
    return max_prob(model::softmax(logits));
}

double entropy_from(const TrainedModel& m, const LayerFeatures& feats,
                    const ScoreOptions& opts) {
    const Vector probs = model::softmax(confidence_logits(m, feats.pooled(), opts));
    double entropy = 0.0;
    for (double p : probs) {
        if (p > 0.0) entropy -= p * std::log(p);
    }
    return -entropy;  // negated: higher => more IND
}

double l_maha_from(const LayerFeatures& feats, const GaussianLayerStats& stats) {
    const auto mapped = mapped_features(feats);
    if (mapped.size() != stats.n_layers()) {
        throw DimensionMismatch("model has " + std::to_string(mapped.size()) +
                                " layers but stats were fitted on " +
                                std::to_string(stats.n_layers()));
    }
    double sum = 0.0;
    for (std::size_t l = 0; l < mapped.size(); ++l) {  // fixed order keeps sums bit-stable
        sum += maha_layer_score(mapped[l], stats, l + 1);
    }
    return sum;
}

}  // namespace

double maha_layer_score(const Vector& mapped_feature, const GaussianLayerStats& stats,
                        std::size_t layer) {
    if (layer < 1 || layer > stats.n_layers()) {
        throw DimensionMismatch("layer index " + std::to_string(layer) + " out of range");
    }
    const auto& l = stats.layers[layer - 1];
    double best = -std::numeric_limits<double>::infinity();
    for (const Vector& mu : l.class_means) {
        const double q = numerics::quad_form(numerics::sub(mapped_feature, mu), l.cov_factor);
        best = std::max(best, -q);
    }
    return best;
}

double confidence_score(const TrainedModel& m, const std::vector<int>& tokens,
                        const ScoreOptions& opts) {
    return confidence_from(m, forward_features(m, tokens), opts);
}

double odin_score(const TrainedModel& m, const std::vector<int>& tokens,
                  const ScoreOptions& opts) {
    return odin_from(m, forward_features(m, tokens), opts);
}

double entropy_score(const TrainedModel& m, const std::vector<int>& tokens,
                     const ScoreOptions& opts) {
    return entropy_from(m, forward_features(m, tokens), opts);
}

double maha_last_score(const TrainedModel& m, const GaussianLayerStats& stats,
                       const std::vector<int>& tokens) {
    const auto mapped = mapped_features(forward_features(m, tokens));
    return maha_layer_score(mapped.back(), stats, stats.n_layers());
}

double l_maha_score(const TrainedModel& m, const GaussianLayerStats& stats,
                    const std::vector<int>& tokens) {
    return l_maha_from(forward_features(m, tokens), stats);
}

double detector_score(const TrainedModel& m, const GaussianLayerStats* stats,
                      Detector detector, const std::vector<int>& tokens,
                      const ScoreOptions& opts) {
    const LayerFeatures feats = forward_features(m, tokens);
    switch (detector) {
        case Detector::Confidence: return confidence_from(m, feats, opts);
        case Detector::Odin: return odin_from(m, feats, opts);
        case Detector::Entropy: return entropy_from(m, feats, opts);
        case Detector::MahaLast: {
            if (!stats) throw MissingStats("maha_last requires fitted Gaussian statistics");
            const auto mapped = mapped_features(feats);
            return maha_layer_score(mapped.back(), *stats, stats->n_layers());
        }
        case Detector::LMaha:
            if (!stats) throw MissingStats("l_maha requires fitted Gaussian statistics");
            return l_maha_from(feats, *stats);
    }
    throw ConfigError("unknown detector enum value");
}

std::vector<ScoreRecord> score_dataset(const TrainedModel& m, const GaussianLayerStats* stats,
                                       Detector detector, const data::Dataset& ds,
                                       const ScoreOptions& opts) {
    std::vector<ScoreRecord> records;
    records.reserve(ds.size());
    for (const data::Utterance& u : ds.utterances) {
        ScoreRecord rec;
        rec.sample_id = u.id;
        rec.detector = detector;
        rec.score = detector_score(m, stats, detector, data::encode(u.text, m.vocab), opts);
        rec.true_domain = ds.domain_tag;
        records.push_back(std::move(rec));
    }
    std::stable_sort(records.begin(), records.end(),
                     [](const ScoreRecord& a, const ScoreRecord& b) {
                         return a.sample_id < b.sample_id;
                     });
    return records;
}

void write_scores_csv(std::ostream& out, const std::vector<ScoreRecord>& records) {
    out << "sample_id,detector,score,domain\n";
    char buf[64];
    for (const ScoreRecord& r : records) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.score);
        out << r.sample_id << ',' << to_string(r.detector) << ',' << buf << ','
            << (r.true_domain == data::DomainTag::Ind ? "IND" : "OOD") << '\n';
    }
}

std::vector<ScoreRecord> read_scores_csv(std::istream& in, const std::string& origin) {
    std::vector<ScoreRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line == "sample_id,detector,score,domain") continue;

        std::array<std::string, 4> fields;
        std::size_t field = 0, start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                if (field >= 4) throw ParseError(origin + ":" + std::to_string(line_no) +
                                                 ": expected 4 fields");
                fields[field++] = line.substr(start, i - start);
                start = i + 1;
            }
        }
        if (field != 4) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": expected 4 fields");
        }

        ScoreRecord rec;
        rec.sample_id = fields[0];
        rec.detector = detector_from_string(fields[1]);
        try {
            std::size_t used = 0;
            rec.score = std::stod(fields[2], &used);
            if (used != fields[2].size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": bad score '" +
                             fields[2] + "'");
        }
        if (fields[3] == "IND") {
            rec.true_domain = data::DomainTag::Ind;
        } else if (fields[3] == "OOD") {
            rec.true_domain = data::DomainTag::Ood;
        } else {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": bad domain '" +
                             fields[3] + "'");
        }
        records.push_back(std::move(rec));
    }
    if (records.empty()) throw ParseError(origin + ": no score records");
    return records;
}

void save_scores_csv(const std::vector<ScoreRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    write_scores_csv(out, records);
    if (!out) throw IoError("write failed for " + path);
}

std::vector<ScoreRecord> load_scores_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return read_scores_csv(in, path);
}

// ---------------------------------------------------------------------------
// Stats cache
// ---------------------------------------------------------------------------

namespace {

constexpr char kStatsMagic[4] = {'O', 'O', 'D', 'G'};
constexpr std::uint32_t kStatsVersion = 1;

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void append_f64(std::string& out, double d) {
    append_u64(out, std::bit_cast<std::uint64_t>(d));
}

}  // namespace

std::uint32_t file_crc32(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    return train::crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size());
}

void save_stats(const GaussianLayerStats& stats, std::uint32_t model_crc,
                const std::string& path) {
    nlohmann::json meta;
    meta["lambda_rel"] = stats.lambda_rel;
    meta["model_crc"] = model_crc;
    std::vector<std::size_t> dims;
    std::size_t n_classes = stats.layers.empty() ? 0 : stats.layers[0].class_means.size();
    for (const auto& layer : stats.layers) dims.push_back(layer.cov_factor.dim());
    meta["dims"] = dims;
    meta["n_classes"] = n_classes;
    const std::string meta_bytes = meta.dump();

    std::string out;
    out.append(kStatsMagic, 4);
    append_u32(out, kStatsVersion);
    append_u64(out, meta_bytes.size());
    out += meta_bytes;
    for (const auto& layer : stats.layers) {
        for (const Vector& mu : layer.class_means)
            for (double x : mu) append_f64(out, x);
        for (double x : layer.cov_factor.lower.values()) append_f64(out, x);
    }
    append_u32(out, train::crc32(reinterpret_cast<const unsigned char*>(out.data()), out.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for " + path);
}

std::optional<GaussianLayerStats> try_load_stats(const std::string& path,
                                                 std::uint32_t model_crc, double lambda_rel) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return std::nullopt;
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < 4 + 4 + 8 + 4) return std::nullopt;

    const std::uint32_t computed =
        train::crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4);
    auto read_u32 = [&](std::size_t pos) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        return v;
    };
    auto read_u64 = [&](std::size_t pos) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        return v;
    };
    if (read_u32(buf.size() - 4) != computed) return std::nullopt;
    if (buf.compare(0, 4, kStatsMagic, 4) != 0) return std::nullopt;
    if (read_u32(4) != kStatsVersion) return std::nullopt;

    const std::uint64_t meta_len = read_u64(8);
    if (16 + meta_len + 4 > buf.size()) return std::nullopt;
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(buf.substr(16, meta_len));
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
    if (meta.value("model_crc", 0u) != model_crc) return std::nullopt;
    if (meta.value("lambda_rel", -1.0) != lambda_rel) return std::nullopt;

    GaussianLayerStats stats;
    stats.lambda_rel = lambda_rel;
    const auto dims = meta.at("dims").get<std::vector<std::size_t>>();
    const auto n_classes = meta.at("n_classes").get<std::size_t>();
    std::size_t expected = 0;
    for (std::size_t d : dims) expected += n_classes * d + d * d;
    if (16 + meta_len + expected * 8 + 4 != buf.size()) return std::nullopt;

    std::size_t pos = 16 + meta_len;
    auto read_f64 = [&]() {
        const double d = std::bit_cast<double>(read_u64(pos));
        pos += 8;
        return d;
    };
    for (std::size_t d : dims) {
        GaussianLayerStats::Layer layer;
        layer.class_means.assign(n_classes, Vector(d, 0.0));
        for (auto& mu : layer.class_means)
            for (double& x : mu) x = read_f64();
        Matrix lower(d, d);
        for (double& x : lower.values()) x = read_f64();
        layer.cov_factor = numerics::CholeskyFactor{std::move(lower)};
        stats.layers.push_back(std::move(layer));
    }
    return stats;
}

}  // namespace oods::scoring
