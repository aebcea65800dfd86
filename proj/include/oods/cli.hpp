#pragma once

// Command-line surface: reproducible synth -> train -> score -> eval
// pipelines plus the overconfidence demo. Sectioned key/value config files
// with per-flag overrides; the effective config is echoed into every output
// directory as `resolved_config`.

#include <iosfwd>
#include <string>
#include <vector>

#include "oods/dataset.hpp"
#include "oods/scoring.hpp"
#include "oods/training.hpp"

namespace oods::cli {

struct DataSection {
    std::string dir = "runs/default";

    std::string ind_train() const { return dir + "/ind_train.jsonl"; }
    std::string ind_dev() const { return dir + "/ind_dev.jsonl"; }
    std::string ind_test() const { return dir + "/ind_test.jsonl"; }
    std::string ood_test() const { return dir + "/ood_test.jsonl"; }
};

struct SynthSection {
    data::SynthConfig synth;
    data::SplitRatios ratios;
};

struct ScoreSection {
    std::vector<scoring::Detector> detectors = {
        scoring::Detector::Confidence, scoring::Detector::Odin, scoring::Detector::Entropy,
        scoring::Detector::MahaLast, scoring::Detector::LMaha};
    double temperature = 1000.0;
    double lambda_rel = 1e-3;
    bool score_on_f = false;
    std::string train_data;  // stats source override; defaults to model metadata
};

struct EvalSection {
    std::string seeds_dir;
    std::string compare;  // "detector_a,detector_b" for the t-test
};

struct RunConfig {
    DataSection data;
    SynthSection synth;
    train::TrainConfig train;
    ScoreSection score;
    EvalSection eval;
};

// INI-style sections [data] [synth] [train] [score] [eval]; '#' or ';'
// comments. Unknown sections or keys are rejected.
RunConfig parse_config_file(const std::string& path);
void apply_ini(RunConfig& cfg, std::istream& in, const std::string& origin);
std::string render_config(const RunConfig& cfg);

void cmd_synth(const RunConfig& cfg, const std::string& out_dir, std::ostream& out);
void cmd_train(const RunConfig& cfg, const std::string& out_model, std::ostream& out);
void cmd_score(const RunConfig& cfg, const std::string& model_path, const std::string& out_csv,
               std::ostream& out);
void cmd_eval(const RunConfig& cfg, const std::string& scores_csv, const std::string& out_report,
              std::ostream& out);
void cmd_eval_seeds(const RunConfig& cfg, const std::string& seeds_dir,
                    const std::string& out_report, std::ostream& out);
void cmd_export_histogram(const RunConfig& cfg, const std::string& scores_csv,
                          const std::string& detector, std::size_t n_bins,
                          const std::string& out_csv, std::ostream& out);
void cmd_export_projection(const RunConfig& cfg, const std::string& model_path,
                           const std::string& out_csv, std::ostream& out);
void cmd_demo_overconfidence(std::ostream& out);

// Parses arguments, dispatches, and maps errors to the exit-code contract:
// 0 success, 2 config/validation, 3 data, 4 numeric.
int run_cli(int argc, const char* const* argv);

}  // namespace oods::cli
