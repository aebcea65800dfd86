#include "oods/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "oods/errors.hpp"

namespace oods::eval {

using scoring::Detector;
using scoring::ScoreRecord;

std::array<double, 7> metric_values(const MetricReport& r) {
    return {r.eer,   r.fpr95,   r.detection_error, r.detection_error_at_tpr95,
            r.auroc, r.aupr_in, r.aupr_out};
}

double ind_accuracy(const train::TrainedModel& m, const data::Dataset& ind_test) {
    if (ind_test.domain_tag != data::DomainTag::Ind) {
        throw UnlabeledData("ind_accuracy requires an IND dataset");
    }
    if (ind_test.utterances.empty()) throw DataError("ind_accuracy: empty dataset");

    std::size_t correct = 0;
    for (const data::Utterance& u : ind_test.utterances) {
        if (!u.label) throw UnlabeledData("utterance '" + u.id + "' has no label");
        const auto it = std::find(m.classes.begin(), m.classes.end(), *u.label);
        if (it == m.classes.end()) {
            throw DataError("label '" + *u.label + "' unknown to the model");
        }
        const auto tokens = data::encode(u.text, m.vocab);
        const auto feats = model::encoder_forward(tokens, m.params.encoder);
        const auto probs =
            model::softmax(model::head_logits(feats.pooled(), m.params.head));
        if (model::predict(probs) == static_cast<std::size_t>(it - m.classes.begin())) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ind_test.size());
}

namespace {

void require_two_classes(const std::vector<double>& ind, const std::vector<double>& ood) {
    if (ind.empty() || ood.empty()) {
        throw OneClassOnly("need at least one IND and one OOD score");
    }
}

std::vector<double> distinct_sorted(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

// Counting helpers over sorted score vectors.
std::size_t count_ge(const std::vector<double>& sorted, double t) {
    return sorted.size() - (std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
}
std::size_t count_lt(const std::vector<double>& sorted, double t) {
    return std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
}
std::size_t count_le(const std::vector<double>& sorted, double t) {
    return std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
}
std::size_t count_gt(const std::vector<double>& sorted, double t) {
    return sorted.size() - (std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
}

}  // namespace

double auroc(const std::vector<double>& ind, const std::vector<double>& ood) {
    require_two_classes(ind, ood);
    double wins = 0.0;
    for (double si : ind) {
        for (double so : ood) {
            if (si > so) {
                wins += 1.0;
            } else if (si == so) {
                wins += 0.5;
            }
        }
    }
    return wins / (static_cast<double>(ind.size()) * static_cast<double>(ood.size()));
}

double aupr(const std::vector<double>& ind, const std::vector<double>& ood,
            PositiveClass positive) {
    require_two_classes(ind, ood);

    // (score, is_positive). AUPR-Out negates the score axis and swaps the
    // positive class.
    std::vector<std::pair<double, bool>> items;
    items.reserve(ind.size() + ood.size());
    const bool ind_positive = positive == PositiveClass::Ind;
    for (double s : ind) items.emplace_back(ind_positive ? s : -s, ind_positive);
    for (double s : ood) items.emplace_back(ind_positive ? s : -s, !ind_positive);
    std::sort(items.begin(), items.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    const std::size_t n_pos = ind_positive ? ind.size() : ood.size();
    double ap = 0.0;
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < items.size()) {
        std::size_t j = i;
        std::size_t block_tp = 0;
        while (j < items.size() && items[j].first == items[i].first) {
            if (items[j].second) ++block_tp;
            ++j;
        }
        tp += block_tp;
        fp += (j - i) - block_tp;
        // Ties share the block-end precision.
        if (block_tp > 0) {
            const double precision =
                static_cast<double>(tp) / static_cast<double>(tp + fp);
            ap += precision * static_cast<double>(block_tp);
        }
        i = j;
    }
    return ap / static_cast<double>(n_pos);
}

double fpr_at_tpr(const std::vector<double>& ind, const std::vector<double>& ood,
                  double tpr_target) {
    require_two_classes(ind, ood);
    std::vector<double> ind_sorted = ind, ood_sorted = ood;
    std::sort(ind_sorted.begin(), ind_sorted.end());
    std::sort(ood_sorted.begin(), ood_sorted.end());

    std::vector<double> thresholds = ind_sorted;
    thresholds.insert(thresholds.end(), ood_sorted.begin(), ood_sorted.end());
    thresholds = distinct_sorted(std::move(thresholds));

    // Descending sweep; the first threshold reaching the target keeps the
    // accepted set as small as possible.
    for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
        const double tpr = static_cast<double>(count_ge(ind_sorted, *it)) /
                           static_cast<double>(ind_sorted.size());
        if (tpr >= tpr_target) {
            return static_cast<double>(count_ge(ood_sorted, *it)) /
                   static_cast<double>(ood_sorted.size());
        }
    }
    return 1.0;  // unreachable: the minimum score accepts every IND sample
}

double detection_error(const std::vector<double>& ind, const std::vector<double>& ood) {
    require_two_classes(ind, ood);
    std::vector<double> ind_sorted = ind, ood_sorted = ood;
    std::sort(ind_sorted.begin(), ind_sorted.end());
    std::sort(ood_sorted.begin(), ood_sorted.end());

    std::vector<double> all = ind_sorted;
    all.insert(all.end(), ood_sorted.begin(), ood_sorted.end());
    all = distinct_sorted(std::move(all));

    std::vector<double> candidates;
    candidates.push_back(-std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i + 1 < all.size(); ++i) {
        candidates.push_back(all[i] / 2.0 + all[i + 1] / 2.0);
    }
    candidates.push_back(std::numeric_limits<double>::infinity());

    double best = 1.0;
    for (double delta : candidates) {
        const double fnr = static_cast<double>(count_le(ind_sorted, delta)) /
                           static_cast<double>(ind_sorted.size());
        const double fpr = static_cast<double>(count_gt(ood_sorted, delta)) /
                           static_cast<double>(ood_sorted.size());
        best = std::min(best, 0.5 * fnr + 0.5 * fpr);
    }
    return best;
}

double eer(const std::vector<double>& ind, const std::vector<double>& ood) {
    require_two_classes(ind, ood);
    std::vector<double> ind_sorted = ind, ood_sorted = ood;
    std::sort(ind_sorted.begin(), ind_sorted.end());
    std::sort(ood_sorted.begin(), ood_sorted.end());

    std::vector<double> thresholds = ind_sorted;
    thresholds.insert(thresholds.end(), ood_sorted.begin(), ood_sorted.end());
    thresholds = distinct_sorted(std::move(thresholds));
    thresholds.push_back(thresholds.back() + 1.0);  // FPR 0, FNR 1 endpoint

    auto rates = [&](double t) {
        const double fpr = static_cast<double>(count_ge(ood_sorted, t)) /
                           static_cast<double>(ood_sorted.size());
        const double fnr = static_cast<double>(count_lt(ind_sorted, t)) /
                           static_cast<double>(ind_sorted.size());
        return std::pair<double, double>{fpr, fnr};
    };

    auto [prev_fpr, prev_fnr] = rates(thresholds.front());
    if (prev_fpr == prev_fnr) return prev_fpr;
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
        auto [fpr, fnr] = rates(thresholds[i]);
        if (fpr == fnr) return fpr;
        const double d1 = prev_fpr - prev_fnr;
        const double d2 = fpr - fnr;
        if (d1 > 0.0 && d2 < 0.0) {
            // Linear interpolation of both rates between the bracketing
            // thresholds; the crossing fraction depends only on the rate
            // values, which keeps the result monotone-transform invariant.
            const double frac = d1 / (d1 - d2);
            return prev_fpr + (fpr - prev_fpr) * frac;
        }
        prev_fpr = fpr;
        prev_fnr = fnr;
    }
    return 0.5;  // unreachable: the sweep always brackets a crossing
}

namespace {

std::pair<std::vector<double>, std::vector<double>> split_scores(
    const std::vector<ScoreRecord>& records, Detector detector) {
    std::vector<double> ind, ood;
    for (const ScoreRecord& r : records) {
        if (r.detector != detector) continue;
        (r.true_domain == data::DomainTag::Ind ? ind : ood).push_back(r.score);
    }
    return {std::move(ind), std::move(ood)};
}

}  // namespace

MetricReport metric_report(const std::vector<ScoreRecord>& records, Detector detector) {
    auto [ind, ood] = split_scores(records, detector);
    require_two_classes(ind, ood);

    MetricReport report;
    report.detector = detector;
    report.n_ind = ind.size();
    report.n_ood = ood.size();
    report.eer = eer(ind, ood);
    report.fpr95 = fpr_at_tpr(ind, ood, 0.95);
    report.detection_error = detection_error(ind, ood);
    report.detection_error_at_tpr95 = 0.5 * (1.0 - 0.95) + 0.5 * report.fpr95;
    report.auroc = auroc(ind, ood);
    report.aupr_in = aupr(ind, ood, PositiveClass::Ind);
    report.aupr_out = aupr(ind, ood, PositiveClass::Ood);
    return report;
}

double regularized_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;

    // Lentz's continued fraction for I_x(a, b).
    auto betacf = [](double a_, double b_, double x_) {
        constexpr int kMaxIter = 500;
        constexpr double kEps = 1e-15;
        constexpr double kTiny = 1e-300;
        const double qab = a_ + b_;
        const double qap = a_ + 1.0;
        const double qam = a_ - 1.0;
        double c = 1.0;
        double d = 1.0 - qab * x_ / qap;
        if (std::abs(d) < kTiny) d = kTiny;
        d = 1.0 / d;
        double h = d;
        for (int m = 1; m <= kMaxIter; ++m) {
            const int m2 = 2 * m;
            double aa = m * (b_ - m) * x_ / ((qam + m2) * (a_ + m2));
            d = 1.0 + aa * d;
            if (std::abs(d) < kTiny) d = kTiny;
            c = 1.0 + aa / c;
            if (std::abs(c) < kTiny) c = kTiny;
            d = 1.0 / d;
            h *= d * c;
            aa = -(a_ + m) * (qab + m) * x_ / ((a_ + m2) * (qap + m2));
            d = 1.0 + aa * d;
            if (std::abs(d) < kTiny) d = kTiny;
            c = 1.0 + aa / c;
            if (std::abs(c) < kTiny) c = kTiny;
            d = 1.0 / d;
            const double del = d * c;
            h *= del;
            if (std::abs(del - 1.0) < kEps) break;
        }
        return h;
    };

    const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log1p(-x);
    const double bt = std::exp(ln_bt);
    double result;
    if (x < (a + 1.0) / (a + b + 2.0)) {
        result = bt * betacf(a, b, x) / a;
    } else {
        result = 1.0 - bt * betacf(b, a, 1.0 - x) / b;
    }
    return std::clamp(result, 0.0, 1.0);
}

TTestResult welch_ttest(const std::vector<double>& sample_a,
                        const std::vector<double>& sample_b) {
    if (sample_a.size() < 2 || sample_b.size() < 2) {
        throw TooFewSamples("welch_ttest needs at least 2 values per sample");
    }
    auto mean_var = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size() - 1);
        return std::pair<double, double>{mean, var};
    };
    const auto [ma, va] = mean_var(sample_a);
    const auto [mb, vb] = mean_var(sample_b);
    const auto na = static_cast<double>(sample_a.size());
    const auto nb = static_cast<double>(sample_b.size());

    TTestResult result;
    if (va == 0.0 && vb == 0.0) {
        result.degenerate = true;
        if (ma == mb) {
            result.t = 0.0;
            result.p_two_sided = 1.0;
        } else {
            result.t = ma > mb ? std::numeric_limits<double>::infinity()
                               : -std::numeric_limits<double>::infinity();
            result.p_two_sided = 0.0;
        }
        return result;
    }

    const double se2 = va / na + vb / nb;
    result.t = (ma - mb) / std::sqrt(se2);
    const double df =
        se2 * se2 / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    result.p_two_sided =
        regularized_incomplete_beta(df / 2.0, 0.5, df / (df + result.t * result.t));
    return result;
}

SeedAggregate aggregate_seeds(const std::vector<MetricReport>& reports) {
    if (reports.size() < 2) {
        throw TooFewSamples("aggregate_seeds needs at least 2 reports");
    }
    for (const MetricReport& r : reports) {
        if (r.detector != reports.front().detector) {
            throw MixedDetectors("aggregate_seeds: reports mix detectors '" +
                                 scoring::to_string(reports.front().detector) + "' and '" +
                                 scoring::to_string(r.detector) + "'");
        }
    }

    SeedAggregate agg;
    agg.detector = reports.front().detector;
    agg.per_seed = reports;
    const double n = static_cast<double>(reports.size());
    for (const MetricReport& r : reports) {
        const auto vals = metric_values(r);
        for (std::size_t i = 0; i < vals.size(); ++i) agg.mean[i] += vals[i];
    }
    for (double& m : agg.mean) m /= n;
    for (const MetricReport& r : reports) {
        const auto vals = metric_values(r);
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double d = vals[i] - agg.mean[i];
            agg.sample_std[i] += d * d;
        }
    }
    for (double& s : agg.sample_std) s = std::sqrt(s / (n - 1.0));
    return agg;
}

namespace {

void print_g17(std::ostream& out, double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    out << buf;
}

void print_f6(std::ostream& out, double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", x);
    out << buf;
}

}  // namespace

void histogram_export(std::ostream& out, const std::vector<ScoreRecord>& records,
                      std::size_t n_bins) {
    if (n_bins < 2) throw InvalidConfig("histogram needs at least 2 bins");
    if (records.empty()) throw DataError("histogram: no records");

    double lo = records.front().score, hi = records.front().score;
    for (const ScoreRecord& r : records) {
        lo = std::min(lo, r.score);
        hi = std::max(hi, r.score);
    }
    const double width = (hi - lo) / static_cast<double>(n_bins);

    std::vector<std::size_t> count_ind(n_bins, 0), count_ood(n_bins, 0);
    for (const ScoreRecord& r : records) {
        std::size_t bin = 0;
        if (width > 0.0) {
            bin = std::min(static_cast<std::size_t>((r.score - lo) / width), n_bins - 1);
        }
        (r.true_domain == data::DomainTag::Ind ? count_ind : count_ood)[bin] += 1;
    }

    out << "bin_lo,bin_hi,count_ind,count_ood\n";
    for (std::size_t b = 0; b < n_bins; ++b) {
        print_g17(out, lo + width * static_cast<double>(b));
        out << ',';
        print_g17(out, b + 1 == n_bins ? hi : lo + width * static_cast<double>(b + 1));
        out << ',' << count_ind[b] << ',' << count_ood[b] << '\n';
    }
}

void projection_export(std::ostream& out, const train::TrainedModel& m,
                       const data::Dataset& ind_test, const data::Dataset& ood_test) {
    std::vector<numerics::Vector> points;
    std::vector<const data::Utterance*> order;
    std::vector<data::DomainTag> tags;
    for (const data::Dataset* ds : {&ind_test, &ood_test}) {
        for (const data::Utterance& u : ds->utterances) {
            const auto tokens = data::encode(u.text, m.vocab);
            points.push_back(model::encoder_forward(tokens, m.params.encoder).pooled());
            order.push_back(&u);
            tags.push_back(ds->domain_tag);
        }
    }

    const auto projected = numerics::pca_2d(points);
    out << "sample_id,x,y,domain\n";
    for (std::size_t i = 0; i < projected.size(); ++i) {
        out << order[i]->id << ',';
        print_g17(out, projected[i][0]);
        out << ',';
        print_g17(out, projected[i][1]);
        out << ',' << (tags[i] == data::DomainTag::Ind ? "IND" : "OOD") << '\n';
    }
}

void write_report_csv(std::ostream& out, const std::vector<MetricReport>& reports) {
    out << "detector,eer,fpr95,det_err,det_err_tpr95,auroc,aupr_in,aupr_out,n_ind,n_ood\n";
    for (const MetricReport& r : reports) {
        out << scoring::to_string(r.detector);
        for (double v : metric_values(r)) {
            out << ',';
            print_f6(out, v);
        }
        out << ',' << r.n_ind << ',' << r.n_ood << '\n';
    }
}

void write_aggregate_csv(std::ostream& out, const std::vector<SeedAggregate>& aggregates) {
    out << "detector,n_seeds";
    for (const char* name : kMetricNames) out << ',' << name << "_mean," << name << "_std";
    out << '\n';
    for (const SeedAggregate& a : aggregates) {
        out << scoring::to_string(a.detector) << ',' << a.per_seed.size();
        for (std::size_t i = 0; i < a.mean.size(); ++i) {
            out << ',';
            print_f6(out, a.mean[i]);
            out << ',';
            print_f6(out, a.sample_std[i]);
        }
        out << '\n';
    }
}

}  // namespace oods::eval
