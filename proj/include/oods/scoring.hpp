#pragma once

// OOD detectors over a trained classifier: max-softmax confidence,
// temperature-scaled confidence, negated entropy, last-layer Mahalanobis and
// the multi-layer sum with tanh-mapped intermediate features. Gaussian layer
// statistics are fitted on IND training data only. Every score is oriented
// higher => more IND.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "oods/dataset.hpp"
#include "oods/model.hpp"
#include "oods/numerics.hpp"
#include "oods/training.hpp"

namespace oods::scoring {

enum class Detector { Confidence, Odin, Entropy, MahaLast, LMaha };

std::string to_string(Detector d);
Detector detector_from_string(const std::string& name);
std::vector<Detector> parse_detector_list(const std::string& csv);

struct GaussianLayerStats {
    struct Layer {
        std::vector<numerics::Vector> class_means;  // one per class
        numerics::CholeskyFactor cov_factor;        // chol(Sigma + lambda I), tied
    };
    std::vector<Layer> layers;  // index ell-1 for layers 1..n
    double lambda_rel = 1e-3;

    std::size_t n_layers() const { return layers.size(); }
};

struct ScoreRecord {
    std::string sample_id;
    Detector detector = Detector::Confidence;
    double score = 0.0;
    data::DomainTag true_domain = data::DomainTag::Ind;
};

struct ScoreOptions {
    double temperature = 1000.0;
    bool score_on_f = false;  // ablation: score softmax(f) instead of softmax(f_c)
};

// Features the Mahalanobis detectors consume: tanh(f^ell) for ell < n, f^n
// unchanged. Fitting and scoring share this map.
std::vector<numerics::Vector> mapped_features(const model::LayerFeatures& feats);

// Tied-covariance Gaussian fit for one layer's feature vectors: per-class
// means plus chol(Sigma + lambda I) with lambda = lambda_rel * trace/dim
// (falling back to lambda_rel when the scatter is exactly zero).
GaussianLayerStats::Layer fit_layer_gaussian(const std::vector<numerics::Vector>& features,
                                             const std::vector<std::size_t>& labels,
                                             std::size_t n_classes, double lambda_rel);

// Runs the encoder over IND training data and fits every layer.
GaussianLayerStats fit_gaussian_stats(const train::TrainedModel& m,
                                      const data::Dataset& ind_train,
                                      double lambda_rel = 1e-3);

// Logits the confidence-family detectors consume: f_c for the DRM head
// (unless score_on_f), plain logits for the linear head.
numerics::Vector confidence_logits(const train::TrainedModel& m, const numerics::Vector& h,
                                   const ScoreOptions& opts = {});

double confidence_score(const train::TrainedModel& m, const std::vector<int>& tokens,
                        const ScoreOptions& opts = {});
double odin_score(const train::TrainedModel& m, const std::vector<int>& tokens,
                  const ScoreOptions& opts = {});
double entropy_score(const train::TrainedModel& m, const std::vector<int>& tokens,
                     const ScoreOptions& opts = {});

// max over classes of -(z - mu_c)^T Sigma^{-1} (z - mu_c) for one layer's
// mapped feature z; <= 0.
double maha_layer_score(const numerics::Vector& mapped_feature, const GaussianLayerStats& stats,
                        std::size_t layer);

double maha_last_score(const train::TrainedModel& m, const GaussianLayerStats& stats,
                       const std::vector<int>& tokens);
double l_maha_score(const train::TrainedModel& m, const GaussianLayerStats& stats,
                    const std::vector<int>& tokens);

double detector_score(const train::TrainedModel& m, const GaussianLayerStats* stats,
                      Detector detector, const std::vector<int>& tokens,
                      const ScoreOptions& opts = {});

// One record per utterance, ordered by sample id. Mahalanobis detectors
// require fitted stats.
std::vector<ScoreRecord> score_dataset(const train::TrainedModel& m,
                                       const GaussianLayerStats* stats, Detector detector,
                                       const data::Dataset& ds, const ScoreOptions& opts = {});

// CSV: sample_id,detector,score,domain with scores at 17 significant digits.
void write_scores_csv(std::ostream& out, const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> read_scores_csv(std::istream& in, const std::string& origin);
void save_scores_csv(const std::vector<ScoreRecord>& records, const std::string& path);
std::vector<ScoreRecord> load_scores_csv(const std::string& path);

// Stats cache beside the model file: magic "OODG", version, JSON metadata
// (including the source model's checksum), f64 arrays, trailing CRC32.
void save_stats(const GaussianLayerStats& stats, std::uint32_t model_crc,
                const std::string& path);
std::optional<GaussianLayerStats> try_load_stats(const std::string& path,
                                                 std::uint32_t model_crc, double lambda_rel);

std::uint32_t file_crc32(const std::string& path);

}  // namespace oods::scoring
