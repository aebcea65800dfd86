#pragma once

// Threshold-free detection metrics with explicit tie conventions, IND
// accuracy, Welch's t-test for multi-seed comparisons, and the CSV analysis
// exports (score histograms, 2-D feature projections). IND is the positive
// class throughout; AUPR-Out negates scores and swaps the positive label.

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "oods/dataset.hpp"
#include "oods/scoring.hpp"
#include "oods/training.hpp"

namespace oods::eval {

struct MetricReport {
    double eer = 0.0;
    double fpr95 = 0.0;
    double detection_error = 0.0;
    double detection_error_at_tpr95 = 0.0;  // 0.5 * (1 - 0.95) + 0.5 * fpr95
    double auroc = 0.0;
    double aupr_in = 0.0;
    double aupr_out = 0.0;
    std::size_t n_ind = 0;
    std::size_t n_ood = 0;
    scoring::Detector detector = scoring::Detector::Confidence;
};

// Metric order used by SeedAggregate and the report CSV.
inline constexpr std::array<const char*, 7> kMetricNames = {
    "eer", "fpr95", "det_err", "det_err_tpr95", "auroc", "aupr_in", "aupr_out"};

std::array<double, 7> metric_values(const MetricReport& r);

struct SeedAggregate {
    scoring::Detector detector = scoring::Detector::Confidence;
    std::vector<MetricReport> per_seed;
    std::array<double, 7> mean{};
    std::array<double, 7> sample_std{};
};

double ind_accuracy(const train::TrainedModel& m, const data::Dataset& ind_test);

// All metric functions below take the IND and OOD score samples of a single
// detector; record-based overloads split one detector's records.

// P(s_ind > s_ood) + 0.5 P(tie) over all pairs.
double auroc(const std::vector<double>& ind, const std::vector<double>& ood);
enum class PositiveClass { Ind, Ood };
// Average precision with ties processed as one block.
double aupr(const std::vector<double>& ind, const std::vector<double>& ood,
            PositiveClass positive);
// FPR at the first threshold (descending) reaching TPR >= target.
double fpr_at_tpr(const std::vector<double>& ind, const std::vector<double>& ood,
                  double tpr_target = 0.95);
// min over thresholds of 0.5 * FNR + 0.5 * FPR.
double detection_error(const std::vector<double>& ind, const std::vector<double>& ood);
// FPR = FNR crossing, linearly interpolated between bracketing thresholds.
double eer(const std::vector<double>& ind, const std::vector<double>& ood);

MetricReport metric_report(const std::vector<scoring::ScoreRecord>& records,
                           scoring::Detector detector);

struct TTestResult {
    double t = 0.0;
    double p_two_sided = 1.0;
    bool degenerate = false;  // both samples constant
};

// Welch's unequal-variance t with Welch-Satterthwaite degrees of freedom;
// two-sided p via the regularized incomplete beta function.
TTestResult welch_ttest(const std::vector<double>& sample_a, const std::vector<double>& sample_b);

// Continued-fraction evaluation; needed by welch_ttest and exposed for tests.
double regularized_incomplete_beta(double a, double b, double x);

SeedAggregate aggregate_seeds(const std::vector<MetricReport>& reports);

// bin_lo,bin_hi,count_ind,count_ood rows over equal-width bins.
void histogram_export(std::ostream& out, const std::vector<scoring::ScoreRecord>& records,
                      std::size_t n_bins);

// sample_id,x,y,domain rows from a joint PCA over pooled features.
void projection_export(std::ostream& out, const train::TrainedModel& m,
                       const data::Dataset& ind_test, const data::Dataset& ood_test);

// detector,eer,fpr95,det_err,det_err_tpr95,auroc,aupr_in,aupr_out,n_ind,n_ood
// with 6-decimal fixed formatting.
void write_report_csv(std::ostream& out, const std::vector<MetricReport>& reports);
void write_aggregate_csv(std::ostream& out, const std::vector<SeedAggregate>& aggregates);

}  // namespace oods::eval
