#include "oods/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "oods/errors.hpp"
#include "oods/evaluation.hpp"
#include "oods/model.hpp"

namespace fs = std::filesystem;

namespace oods::cli {

namespace {

// ---------------------------------------------------------------------------
// Logging (stderr only; stdout stays reserved for artifacts and summaries)
// ---------------------------------------------------------------------------

int log_level() {
    static const int level = [] {
        const char* env = std::getenv("OODS_LOG");
        if (!env) return 1;
        const std::string v = env;
        if (v == "error") return 0;
        if (v == "info") return 1;
        if (v == "debug") return 2;
        return 1;
    }();
    return level;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[info] " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[debug] " << msg << "\n";
}

// ---------------------------------------------------------------------------
// Config file handling
// ---------------------------------------------------------------------------

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

[[noreturn]] void bad_key(const std::string& origin, std::size_t line_no,
                          const std::string& what) {
    throw InvalidConfig(origin + ":" + std::to_string(line_no) + ": " + what);
}

double to_double(const std::string& v, const std::string& origin, std::size_t line_no) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return d;
    } catch (const std::exception&) {
        bad_key(origin, line_no, "expected a number, got '" + v + "'");
    }
}

std::uint64_t to_u64(const std::string& v, const std::string& origin, std::size_t line_no) {
    try {
        std::size_t used = 0;
        const unsigned long long u = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return u;
    } catch (const std::exception&) {
        bad_key(origin, line_no, "expected a non-negative integer, got '" + v + "'");
    }
}

bool to_bool(const std::string& v, const std::string& origin, std::size_t line_no) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad_key(origin, line_no, "expected true|false, got '" + v + "'");
}

std::vector<std::size_t> to_size_list(const std::string& v, const std::string& origin,
                                      std::size_t line_no) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(static_cast<std::size_t>(to_u64(trim(item), origin, line_no)));
    }
    if (out.empty()) bad_key(origin, line_no, "expected a comma-separated list");
    return out;
}

}  // namespace

void apply_ini(RunConfig& cfg, std::istream& in, const std::string& origin) {
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;

        if (t.front() == '[') {
            if (t.back() != ']') bad_key(origin, line_no, "unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section != "data" && section != "synth" && section != "train" &&
                section != "score" && section != "eval") {
                bad_key(origin, line_no, "unknown section [" + section + "]");
            }
            continue;
        }

        const auto eq = t.find('=');
        if (eq == std::string::npos) bad_key(origin, line_no, "expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (section.empty()) bad_key(origin, line_no, "key outside any section");

        if (section == "data") {
            if (key == "dir") {
                cfg.data.dir = value;
            } else {
                bad_key(origin, line_no, "unknown key '" + key + "' in [data]");
            }
        } else if (section == "synth") {
            auto& s = cfg.synth.synth;
            if (key == "n_classes") {
                s.n_classes = to_u64(value, origin, line_no);
            } else if (key == "vocab_per_class") {
                s.vocab_per_class = to_u64(value, origin, line_no);
            } else if (key == "min_len") {
                s.min_utterance_len = to_u64(value, origin, line_no);
            } else if (key == "max_len") {
                s.max_utterance_len = to_u64(value, origin, line_no);
            } else if (key == "samples_per_class") {
                s.samples_per_class = to_u64(value, origin, line_no);
            } else if (key == "ood_samples") {
                s.ood_samples = to_u64(value, origin, line_no);
            } else if (key == "vocab_overlap_fraction") {
                s.vocab_overlap_fraction = to_double(value, origin, line_no);
            } else if (key == "seed") {
                s.seed = to_u64(value, origin, line_no);
            } else if (key == "train_ratio") {
                cfg.synth.ratios.train = to_double(value, origin, line_no);
            } else if (key == "dev_ratio") {
                cfg.synth.ratios.dev = to_double(value, origin, line_no);
            } else if (key == "test_ratio") {
                cfg.synth.ratios.test = to_double(value, origin, line_no);
            } else {
                bad_key(origin, line_no, "unknown key '" + key + "' in [synth]");
            }
        } else if (section == "train") {
            auto& tr = cfg.train;
            if (key == "epochs") {
                tr.epochs = to_u64(value, origin, line_no);
            } else if (key == "batch_size") {
                tr.batch_size = to_u64(value, origin, line_no);
            } else if (key == "learning_rate") {
                tr.learning_rate = to_double(value, origin, line_no);
            } else if (key == "optimizer") {
                tr.optimizer = train::optimizer_from_string(value);
            } else if (key == "seed") {
                tr.seed = to_u64(value, origin, line_no);
            } else if (key == "head") {
                tr.head_kind = train::head_kind_from_string(value);
            } else if (key == "delta") {
                tr.delta = to_double(value, origin, line_no);
            } else if (key == "symmetric_clamp") {
                tr.symmetric_clamp = to_bool(value, origin, line_no);
            } else if (key == "clamp_in_domain_loss") {
                tr.clamp_in_domain_loss = to_bool(value, origin, line_no);
            } else if (key == "min_vocab_freq") {
                tr.min_vocab_freq = static_cast<int>(to_u64(value, origin, line_no));
            } else if (key == "d_emb") {
                tr.d_emb = to_u64(value, origin, line_no);
            } else if (key == "widths") {
                tr.widths = to_size_list(value, origin, line_no);
            } else if (key == "pooled_dim") {
                tr.pooled_dim = to_u64(value, origin, line_no);
            } else {
                bad_key(origin, line_no, "unknown key '" + key + "' in [train]");
            }
        } else if (section == "score") {
            if (key == "detectors") {
                cfg.score.detectors = scoring::parse_detector_list(value);
            } else if (key == "temperature") {
                cfg.score.temperature = to_double(value, origin, line_no);
            } else if (key == "lambda_rel") {
                cfg.score.lambda_rel = to_double(value, origin, line_no);
            } else if (key == "score_on_f") {
                cfg.score.score_on_f = to_bool(value, origin, line_no);
            } else if (key == "train_data") {
                cfg.score.train_data = value;
            } else {
                bad_key(origin, line_no, "unknown key '" + key + "' in [score]");
            }
        } else {  // eval
            if (key == "seeds_dir") {
                cfg.eval.seeds_dir = value;
            } else if (key == "compare") {
                cfg.eval.compare = value;
            } else {
                bad_key(origin, line_no, "unknown key '" + key + "' in [eval]");
            }
        }
    }
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("cannot open config file " + path);
    RunConfig cfg;
    apply_ini(cfg, in, path);
    return cfg;
}

std::string render_config(const RunConfig& cfg) {
    std::ostringstream out;
    char buf[64];
    auto num = [&](double d) {
        std::snprintf(buf, sizeof(buf), "%.17g", d);
        return std::string(buf);
    };

    out << "[data]\n";
    out << "dir = " << cfg.data.dir << "\n\n";

    const auto& s = cfg.synth.synth;
    out << "[synth]\n";
    out << "n_classes = " << s.n_classes << "\n";
    out << "vocab_per_class = " << s.vocab_per_class << "\n";
    out << "min_len = " << s.min_utterance_len << "\n";
    out << "max_len = " << s.max_utterance_len << "\n";
    out << "samples_per_class = " << s.samples_per_class << "\n";
    out << "ood_samples = " << s.ood_samples << "\n";
    out << "vocab_overlap_fraction = " << num(s.vocab_overlap_fraction) << "\n";
    out << "seed = " << s.seed << "\n";
    out << "train_ratio = " << num(cfg.synth.ratios.train) << "\n";
    out << "dev_ratio = " << num(cfg.synth.ratios.dev) << "\n";
    out << "test_ratio = " << num(cfg.synth.ratios.test) << "\n\n";

    const auto& tr = cfg.train;
    out << "[train]\n";
    out << "epochs = " << tr.epochs << "\n";
    out << "batch_size = " << tr.batch_size << "\n";
    out << "learning_rate = " << num(tr.learning_rate) << "\n";
    out << "optimizer = " << train::to_string(tr.optimizer) << "\n";
    out << "seed = " << tr.seed << "\n";
    out << "head = " << train::to_string(tr.head_kind) << "\n";
    out << "delta = " << num(tr.delta) << "\n";
    out << "symmetric_clamp = " << (tr.symmetric_clamp ? "true" : "false") << "\n";
    out << "clamp_in_domain_loss = " << (tr.clamp_in_domain_loss ? "true" : "false") << "\n";
    out << "min_vocab_freq = " << tr.min_vocab_freq << "\n";
    out << "d_emb = " << tr.d_emb << "\n";
    out << "widths = ";
    for (std::size_t i = 0; i < tr.widths.size(); ++i) {
        if (i) out << ",";
        out << tr.widths[i];
    }
    out << "\n";
    out << "pooled_dim = " << tr.pooled_dim << "\n\n";

    out << "[score]\n";
    out << "detectors = ";
    for (std::size_t i = 0; i < cfg.score.detectors.size(); ++i) {
        if (i) out << ",";
        out << scoring::to_string(cfg.score.detectors[i]);
    }
    out << "\n";
    out << "temperature = " << num(cfg.score.temperature) << "\n";
    out << "lambda_rel = " << num(cfg.score.lambda_rel) << "\n";
    out << "score_on_f = " << (cfg.score.score_on_f ? "true" : "false") << "\n";
    if (!cfg.score.train_data.empty()) out << "train_data = " << cfg.score.train_data << "\n";
    out << "\n";

    out << "[eval]\n";
    if (!cfg.eval.seeds_dir.empty()) out << "seeds_dir = " << cfg.eval.seeds_dir << "\n";
    if (!cfg.eval.compare.empty()) out << "compare = " << cfg.eval.compare << "\n";
    return out.str();
}

namespace {

void write_resolved_config(const RunConfig& cfg, const fs::path& out_path_or_dir,
                           bool is_dir) {
    fs::path dir = is_dir ? out_path_or_dir : out_path_or_dir.parent_path();
    if (dir.empty()) dir = ".";
    fs::create_directories(dir);
    std::ofstream f(dir / "resolved_config", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + (dir / "resolved_config").string());
    f << render_config(cfg);
}

std::string pct(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * fraction);
    return buf;
}

std::string num3(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", x);
    return buf;
}

}  // namespace

void cmd_synth(const RunConfig& cfg, const std::string& out_dir, std::ostream& out) {
    fs::create_directories(out_dir);
    auto [ind, ood] = data::synth_generate(cfg.synth.synth);
    const auto parts = data::split(ind, cfg.synth.ratios, cfg.synth.synth.seed);

    data::write_jsonl(parts.train, out_dir + "/ind_train.jsonl");
    data::write_jsonl(parts.dev, out_dir + "/ind_dev.jsonl");
    data::write_jsonl(parts.test, out_dir + "/ind_test.jsonl");
    data::write_jsonl(ood, out_dir + "/ood_test.jsonl");
    write_resolved_config(cfg, out_dir, /*is_dir=*/true);

    out << "ind_train: " << parts.train.size() << "\n"
        << "ind_dev: " << parts.dev.size() << "\n"
        << "ind_test: " << parts.test.size() << "\n"
        << "ood_test: " << ood.size() << "\n";
}

void cmd_train(const RunConfig& cfg, const std::string& out_model, std::ostream& out) {
    log_info("loading " + cfg.data.ind_train());
    const data::Dataset ind_train = data::load_jsonl(cfg.data.ind_train());
    const data::Dataset ind_dev = data::load_jsonl(cfg.data.ind_dev());

    train::TrainedModel model = train::train(ind_train, ind_dev, cfg.train);
    model.meta.train_data_path = cfg.data.ind_train();

    const fs::path model_path(out_model);
    if (!model_path.parent_path().empty()) fs::create_directories(model_path.parent_path());
    train::save_model(model, out_model);
    write_resolved_config(cfg, model_path, /*is_dir=*/false);

    out << "head: " << train::to_string(cfg.train.head_kind) << "\n"
        << "dev_accuracy: " << num3(model.meta.best_dev_accuracy) << " (epoch "
        << model.meta.best_epoch << ")\n"
        << "final_train_loss: " << num3(model.meta.final_train_loss) << "\n"
        << "final_dev_loss: " << num3(model.meta.final_dev_loss) << "\n"
        << "model: " << out_model << "\n";
}

namespace {

bool needs_stats(const std::vector<scoring::Detector>& detectors) {
    return std::any_of(detectors.begin(), detectors.end(), [](scoring::Detector d) {
        return d == scoring::Detector::MahaLast || d == scoring::Detector::LMaha;
    });
}

scoring::GaussianLayerStats obtain_stats(const RunConfig& cfg, const std::string& model_path,
                                         const train::TrainedModel& model) {
    const std::string stats_path = model_path + ".stats";
    const std::uint32_t model_crc = scoring::file_crc32(model_path);
    if (auto cached = scoring::try_load_stats(stats_path, model_crc, cfg.score.lambda_rel)) {
        log_debug("using cached stats " + stats_path);
        return *cached;
    }

    std::string train_src = cfg.score.train_data;
    if (train_src.empty()) train_src = model.meta.train_data_path;
    if (train_src.empty()) {
        throw MissingStats(
            "Mahalanobis detectors need IND training data to fit Gaussian statistics; "
            "pass --train-data or train via the CLI so the model records its source");
    }
    log_info("fitting Gaussian stats from " + train_src);
    const data::Dataset ind_train = data::load_jsonl(train_src);
    auto stats = scoring::fit_gaussian_stats(model, ind_train, cfg.score.lambda_rel);
    scoring::save_stats(stats, model_crc, stats_path);
    return stats;
}

}  // namespace

void cmd_score(const RunConfig& cfg, const std::string& model_path, const std::string& out_csv,
               std::ostream& out) {
    const train::TrainedModel model = train::load_model(model_path);
    const data::Dataset ind_test = data::load_jsonl(cfg.data.ind_test());
    const data::Dataset ood_test = data::load_jsonl(cfg.data.ood_test());

    std::optional<scoring::GaussianLayerStats> stats;
    if (needs_stats(cfg.score.detectors)) stats = obtain_stats(cfg, model_path, model);

    scoring::ScoreOptions opts;
    opts.temperature = cfg.score.temperature;
    opts.score_on_f = cfg.score.score_on_f;

    std::vector<scoring::ScoreRecord> records;
    for (scoring::Detector detector : cfg.score.detectors) {
        const auto* stats_ptr = stats ? &*stats : nullptr;
        for (const data::Dataset* ds : {&ind_test, &ood_test}) {
            auto part = scoring::score_dataset(model, stats_ptr, detector, *ds, opts);
            records.insert(records.end(), part.begin(), part.end());
        }
    }

    const fs::path csv_path(out_csv);
    if (!csv_path.parent_path().empty()) fs::create_directories(csv_path.parent_path());
    scoring::save_scores_csv(records, out_csv);
    write_resolved_config(cfg, csv_path, /*is_dir=*/false);
    out << "records: " << records.size() << "\n"
        << "scores: " << out_csv << "\n";
}

namespace {

constexpr std::array<scoring::Detector, 5> kAllDetectors = {
    scoring::Detector::Confidence, scoring::Detector::Odin, scoring::Detector::Entropy,
    scoring::Detector::MahaLast, scoring::Detector::LMaha};

std::vector<scoring::Detector> detectors_present(
    const std::vector<scoring::ScoreRecord>& records) {
    std::vector<scoring::Detector> out;
    for (scoring::Detector d : kAllDetectors) {
        if (std::any_of(records.begin(), records.end(),
                        [d](const auto& r) { return r.detector == d; })) {
            out.push_back(d);
        }
    }
    return out;
}

}  // namespace

void cmd_eval(const RunConfig& cfg, const std::string& scores_csv, const std::string& out_report,
              std::ostream& out) {
    const auto records = scoring::load_scores_csv(scores_csv);
    std::vector<eval::MetricReport> reports;
    for (scoring::Detector d : detectors_present(records)) {
        reports.push_back(eval::metric_report(records, d));
    }

    const fs::path report_path(out_report);
    if (!report_path.parent_path().empty()) fs::create_directories(report_path.parent_path());
    std::ofstream f(out_report, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + out_report);
    eval::write_report_csv(f, reports);
    write_resolved_config(cfg, report_path, /*is_dir=*/false);
    eval::write_report_csv(out, reports);
}

void cmd_eval_seeds(const RunConfig& cfg, const std::string& seeds_dir,
                    const std::string& out_report, std::ostream& out) {
    std::vector<fs::path> files;
    if (!fs::is_directory(seeds_dir)) throw IoError(seeds_dir + " is not a directory");
    for (const auto& entry : fs::directory_iterator(seeds_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".csv") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.size() < 2) {
        throw TooFewSamples("seed aggregation needs at least 2 score CSVs in " + seeds_dir);
    }

    std::vector<std::vector<scoring::ScoreRecord>> per_seed;
    for (const fs::path& f : files) per_seed.push_back(scoring::load_scores_csv(f.string()));

    const auto detectors = detectors_present(per_seed.front());
    std::vector<eval::SeedAggregate> aggregates;
    std::map<std::string, std::vector<eval::MetricReport>> by_detector;
    for (scoring::Detector d : detectors) {
        std::vector<eval::MetricReport> reports;
        for (const auto& records : per_seed) reports.push_back(eval::metric_report(records, d));
        by_detector[scoring::to_string(d)] = reports;
        aggregates.push_back(eval::aggregate_seeds(reports));
    }

    const fs::path report_path(out_report);
    if (!report_path.parent_path().empty()) fs::create_directories(report_path.parent_path());
    std::ofstream f(out_report, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + out_report);
    eval::write_aggregate_csv(f, aggregates);
    eval::write_aggregate_csv(out, aggregates);

    if (!cfg.eval.compare.empty()) {
        const auto comma = cfg.eval.compare.find(',');
        if (comma == std::string::npos) {
            throw InvalidConfig("--compare expects 'detector_a,detector_b'");
        }
        const std::string name_a = trim(cfg.eval.compare.substr(0, comma));
        const std::string name_b = trim(cfg.eval.compare.substr(comma + 1));
        for (const std::string& name : {name_a, name_b}) {
            if (by_detector.find(name) == by_detector.end()) {
                throw InvalidConfig("--compare: no records for detector '" + name + "'");
            }
        }

        fs::path ttest_path = report_path;
        ttest_path.replace_extension();
        ttest_path += "_ttest.csv";
        std::ofstream tf(ttest_path, std::ios::binary | std::ios::trunc);
        if (!tf) throw IoError("cannot write " + ttest_path.string());
        tf << "metric,detector_a,detector_b,t,p_two_sided\n";
        char buf[64];
        for (std::size_t mi = 0; mi < eval::kMetricNames.size(); ++mi) {
            std::vector<double> a, b;
            for (const auto& r : by_detector[name_a]) a.push_back(eval::metric_values(r)[mi]);
            for (const auto& r : by_detector[name_b]) b.push_back(eval::metric_values(r)[mi]);
            const auto res = eval::welch_ttest(a, b);
            tf << eval::kMetricNames[mi] << ',' << name_a << ',' << name_b << ',';
            std::snprintf(buf, sizeof(buf), "%.6g", res.t);
            tf << buf << ',';
            std::snprintf(buf, sizeof(buf), "%.6g", res.p_two_sided);
            tf << buf << '\n';
        }
        out << "ttest: " << ttest_path.string() << "\n";
    }
}

void cmd_export_histogram(const RunConfig& cfg, const std::string& scores_csv,
                          const std::string& detector, std::size_t n_bins,
                          const std::string& out_csv, std::ostream& out) {
    auto records = scoring::load_scores_csv(scores_csv);
    if (!detector.empty()) {
        const auto d = scoring::detector_from_string(detector);
        std::erase_if(records, [d](const auto& r) { return r.detector != d; });
        if (records.empty()) throw DataError("no records for detector '" + detector + "'");
    } else if (detectors_present(records).size() > 1) {
        throw InvalidConfig("scores file holds several detectors; pass --detector");
    }

    const fs::path csv_path(out_csv);
    if (!csv_path.parent_path().empty()) fs::create_directories(csv_path.parent_path());
    std::ofstream f(out_csv, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + out_csv);
    eval::histogram_export(f, records, n_bins);
    write_resolved_config(cfg, csv_path, /*is_dir=*/false);
    out << "histogram: " << out_csv << "\n";
}

void cmd_export_projection(const RunConfig& cfg, const std::string& model_path,
                           const std::string& out_csv, std::ostream& out) {
    const train::TrainedModel model = train::load_model(model_path);
    const data::Dataset ind_test = data::load_jsonl(cfg.data.ind_test());
    const data::Dataset ood_test = data::load_jsonl(cfg.data.ood_test());

    const fs::path csv_path(out_csv);
    if (!csv_path.parent_path().empty()) fs::create_directories(csv_path.parent_path());
    std::ofstream f(out_csv, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + out_csv);
    eval::projection_export(f, model, ind_test, ood_test);
    write_resolved_config(cfg, csv_path, /*is_dir=*/false);
    out << "projection: " << out_csv << "\n";
}

void cmd_demo_overconfidence(std::ostream& out) {
    // Two IND classes, one OOD utterance: zero weights, the biases carry the
    // worked example, so every number below flows through the real forward
    // pass.
    model::DRMHead head;
    head.w_c = numerics::Matrix(2, 1);
    head.b_c = {0.5, 0.8};
    head.w_d = numerics::Matrix(1, 1);
    head.b_d = 0.1;
    head.delta = 3.0;
    const numerics::Vector h = {0.0};

    const model::DRMOutput drm = model::drm_forward(h, head);
    const numerics::Vector p_class = model::softmax(drm.f_c);
    const numerics::Vector p_final = model::softmax(drm.f);

    out << "Overconfidence on an out-of-domain utterance (two IND classes)\n\n";
    out << "  class logits f_c          = [" << num3(drm.f_c[0]) << ", " << num3(drm.f_c[1])
        << "]\n";
    out << "  softmax(f_c)              = [" << pct(p_class[0]) << ", " << pct(p_class[1])
        << "]\n";
    out << "  domain logit f_d          = " << num3(drm.f_d_raw) << "\n";
    out << "  final logits f = f_c/f_d  = [" << num3(drm.f[0]) << ", " << num3(drm.f[1])
        << "]\n";
    out << "  softmax(f)                = [" << pct(p_final[0]) << ", " << pct(p_final[1])
        << "]\n\n";
    out << "Dividing nearly uniform class logits by a small domain logit turns a "
        << pct(p_class[1]) << " report into a " << pct(p_final[1])
        << " one; scoring softmax(f_c) avoids the inflation.\n";
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

namespace {

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"IND intent classification with OOD detection"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "Config file (sections: data/synth/train/score/eval)")
        ->expected(1);

    // Shared overrides; each applies to the section its subcommand reads.
    std::optional<std::uint64_t> seed;
    std::optional<std::string> head, detectors, data_dir, train_data, compare, detector;
    std::optional<double> delta, temperature, lambda_rel;

    std::string out, model_path, scores_csv, seeds_dir, kind;
    std::size_t bins = 20;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic IND/OOD corpus");
    synth->add_option("--out", out, "Output directory")->required();
    synth->add_option("--seed", seed, "Generation seed");

    auto* train_cmd = app.add_subcommand("train", "Train a classifier on IND data");
    train_cmd->add_option("--out", out, "Output model file")->required();
    train_cmd->add_option("--data", data_dir, "Data directory (ind_train/ind_dev jsonl)");
    train_cmd->add_option("--seed", seed, "Training seed");
    train_cmd->add_option("--head", head, "Head kind: linear|drm");
    train_cmd->add_option("--delta", delta, "Clamp bound for the domain logit");

    auto* score = app.add_subcommand("score", "Score IND/OOD test sets with detectors");
    score->add_option("--model", model_path, "Trained model file")->required();
    score->add_option("--out", out, "Output score CSV")->required();
    score->add_option("--data", data_dir, "Data directory (ind_test/ood_test jsonl)");
    score->add_option("--detectors", detectors,
                      "Comma list: confidence,odin,entropy,maha_last,l_maha");
    score->add_option("--temperature", temperature, "ODIN temperature");
    score->add_option("--lambda-rel", lambda_rel, "Relative covariance ridge");
    score->add_option("--train-data", train_data, "IND train JSONL for stats fitting");

    auto* eval_cmd = app.add_subcommand("eval", "Compute detection metrics from score CSVs");
    eval_cmd->add_option("--scores", scores_csv, "Score CSV from a single run");
    eval_cmd->add_option("--seeds-dir", seeds_dir, "Directory of per-seed score CSVs");
    eval_cmd->add_option("--out", out, "Output report CSV")->required();
    eval_cmd->add_option("--compare", compare, "Two detector names for a Welch t-test");

    auto* export_cmd = app.add_subcommand("export", "Export histogram or projection CSVs");
    export_cmd->add_option("--kind", kind, "histogram|projection")->required();
    export_cmd->add_option("--out", out, "Output CSV")->required();
    export_cmd->add_option("--scores", scores_csv, "Score CSV (histogram)");
    export_cmd->add_option("--detector", detector, "Detector to select (histogram)");
    export_cmd->add_option("--bins", bins, "Histogram bin count");
    export_cmd->add_option("--model", model_path, "Trained model file (projection)");
    export_cmd->add_option("--data", data_dir, "Data directory (projection)");

    auto* demo = app.add_subcommand("demo-overconfidence",
                                    "Walk through the division-driven overconfidence example");
    (void)demo;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    RunConfig cfg;
    if (!config_path.empty()) cfg = parse_config_file(config_path);
    if (data_dir) cfg.data.dir = *data_dir;
    if (head) cfg.train.head_kind = train::head_kind_from_string(*head);
    if (delta) cfg.train.delta = *delta;
    if (detectors) cfg.score.detectors = scoring::parse_detector_list(*detectors);
    if (temperature) cfg.score.temperature = *temperature;
    if (lambda_rel) cfg.score.lambda_rel = *lambda_rel;
    if (train_data) cfg.score.train_data = *train_data;
    if (compare) cfg.eval.compare = *compare;

    if (synth->parsed()) {
        if (seed) cfg.synth.synth.seed = *seed;
        cmd_synth(cfg, out, std::cout);
    } else if (train_cmd->parsed()) {
        if (seed) cfg.train.seed = *seed;
        cmd_train(cfg, out, std::cout);
    } else if (score->parsed()) {
        cmd_score(cfg, model_path, out, std::cout);
    } else if (eval_cmd->parsed()) {
        if (!seeds_dir.empty()) {
            cmd_eval_seeds(cfg, seeds_dir, out, std::cout);
        } else if (!scores_csv.empty()) {
            cmd_eval(cfg, scores_csv, out, std::cout);
        } else {
            throw InvalidConfig("eval needs --scores or --seeds-dir");
        }
    } else if (export_cmd->parsed()) {
        if (kind == "histogram") {
            if (scores_csv.empty()) throw InvalidConfig("export --kind histogram needs --scores");
            cmd_export_histogram(cfg, scores_csv, detector.value_or(""), bins, out, std::cout);
        } else if (kind == "projection") {
            if (model_path.empty()) throw InvalidConfig("export --kind projection needs --model");
            cmd_export_projection(cfg, model_path, out, std::cout);
        } else {
            throw InvalidConfig("unknown export kind '" + kind + "'");
        }
    } else {
        cmd_demo_overconfidence(std::cout);
    }
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace oods::cli
