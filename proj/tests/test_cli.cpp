#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oods/cli.hpp"
#include "oods/dataset.hpp"
#include "oods/errors.hpp"
#include "oods/evaluation.hpp"
#include "oods/scoring.hpp"
#include "oods/training.hpp"

using namespace oods;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& sub) const { return (path / sub).string(); }
};

cli::RunConfig fast_config(const std::string& data_dir) {
    cli::RunConfig cfg;
    cfg.data.dir = data_dir;
    cfg.synth.synth.n_classes = 2;
    cfg.synth.synth.vocab_per_class = 15;
    cfg.synth.synth.samples_per_class = 40;
    cfg.synth.synth.ood_samples = 30;
    cfg.synth.synth.vocab_overlap_fraction = 0.0;
    cfg.synth.synth.seed = 5;
    cfg.synth.ratios = {0.5, 0.25, 0.25};
    cfg.train.epochs = 4;
    cfg.train.seed = 5;
    cfg.train.d_emb = 6;
    cfg.train.widths = {8, 8};
    cfg.train.pooled_dim = 8;
    return cfg;
}

}  // namespace

TEST_CASE("ini config parsing applies sections and rejects unknown keys") {
    std::istringstream ini(
        "# comment\n"
        "[data]\n"
        "dir = /tmp/somewhere\n"
        "\n"
        "[synth]\n"
        "n_classes = 7\n"
        "vocab_overlap_fraction = 0.25\n"
        "[train]\n"
        "epochs = 3\n"
        "head = linear\n"
        "widths = 8,16,8\n"
        "[score]\n"
        "detectors = confidence,entropy\n"
        "temperature = 500\n"
        "[eval]\n"
        "compare = confidence,entropy\n");
    cli::RunConfig cfg;
    cli::apply_ini(cfg, ini, "<mem>");
    CHECK(cfg.data.dir == "/tmp/somewhere");
    CHECK(cfg.synth.synth.n_classes == 7);
    CHECK(cfg.synth.synth.vocab_overlap_fraction == 0.25);
    CHECK(cfg.train.epochs == 3);
    CHECK(cfg.train.head_kind == train::HeadKind::Linear);
    CHECK(cfg.train.widths == std::vector<std::size_t>{8, 16, 8});
    CHECK(cfg.score.detectors.size() == 2);
    CHECK(cfg.score.temperature == 500.0);
    CHECK(cfg.eval.compare == "confidence,entropy");

    std::istringstream bad("[synth]\nnot_a_key = 1\n");
    cli::RunConfig cfg2;
    CHECK_THROWS_AS(cli::apply_ini(cfg2, bad, "<mem>"), InvalidConfig);

    std::istringstream bad2("[nope]\nx = 1\n");
    CHECK_THROWS_AS(cli::apply_ini(cfg2, bad2, "<mem>"), InvalidConfig);

    std::istringstream bad3("[train]\nepochs = banana\n");
    CHECK_THROWS_AS(cli::apply_ini(cfg2, bad3, "<mem>"), InvalidConfig);
}

TEST_CASE("rendered config reparses to the same configuration") {
    cli::RunConfig cfg = fast_config("/data/run1");
    cfg.score.temperature = 250.0;
    cfg.eval.compare = "confidence,l_maha";

    const std::string text = cli::render_config(cfg);
    std::istringstream in(text);
    cli::RunConfig back;
    cli::apply_ini(back, in, "<render>");

    CHECK(back.data.dir == cfg.data.dir);
    CHECK(back.synth.synth.n_classes == cfg.synth.synth.n_classes);
    CHECK(back.synth.ratios.train == cfg.synth.ratios.train);
    CHECK(back.train.epochs == cfg.train.epochs);
    CHECK(back.train.widths == cfg.train.widths);
    CHECK(back.score.temperature == cfg.score.temperature);
    CHECK(back.eval.compare == cfg.eval.compare);
    CHECK(cli::render_config(back) == text);
}

TEST_CASE("cmd_synth writes the four corpus files with the expected counts") {
    TempDir tmp("oods_test_synth");
    const auto cfg = fast_config(tmp / "data");
    std::ostringstream out;
    cli::cmd_synth(cfg, tmp / "data", out);

    // 2 classes x 40 samples split 0.5/0.25/0.25
    const auto train_ds = data::load_jsonl(tmp / "data/ind_train.jsonl");
    const auto dev_ds = data::load_jsonl(tmp / "data/ind_dev.jsonl");
    const auto test_ds = data::load_jsonl(tmp / "data/ind_test.jsonl");
    const auto ood_ds = data::load_jsonl(tmp / "data/ood_test.jsonl");
    CHECK(train_ds.size() == 40);
    CHECK(dev_ds.size() == 20);
    CHECK(test_ds.size() == 20);
    CHECK(ood_ds.size() == 30);
    CHECK(ood_ds.domain_tag == data::DomainTag::Ood);
    CHECK(fs::exists(tmp / "data/resolved_config"));

    CHECK(out.str().find("ind_train: 40") != std::string::npos);
    CHECK(out.str().find("ood_test: 30") != std::string::npos);
}

TEST_CASE("cmd_synth is byte-deterministic") {
    TempDir tmp("oods_test_synth_det");
    const auto cfg_a = fast_config(tmp / "a");
    const auto cfg_b = fast_config(tmp / "b");
    std::ostringstream sink;
    cli::cmd_synth(cfg_a, tmp / "a", sink);
    cli::cmd_synth(cfg_b, tmp / "b", sink);
    for (const char* name :
         {"ind_train.jsonl", "ind_dev.jsonl", "ind_test.jsonl", "ood_test.jsonl"}) {
        CHECK(slurp(fs::path(tmp / "a") / name) == slurp(fs::path(tmp / "b") / name));
    }
}

TEST_CASE("cmd_train trains, saves, and reports dev accuracy consistently") {
    TempDir tmp("oods_test_train");
    auto cfg = fast_config(tmp / "data");
    std::ostringstream sink;
    cli::cmd_synth(cfg, tmp / "data", sink);

    std::ostringstream out;
    cli::cmd_train(cfg, tmp / "model.bin", out);
    CHECK(fs::exists(tmp / "model.bin"));

    const auto m = train::load_model(tmp / "model.bin");
    CHECK(m.meta.train_data_path == cfg.data.ind_train());

    // printed dev accuracy equals the evaluation module's on the same split
    const auto dev = data::load_jsonl(cfg.data.ind_dev());
    const double acc = eval::ind_accuracy(m, dev);
    char expected[32];
    std::snprintf(expected, sizeof(expected), "dev_accuracy: %.3f", acc);
    CHECK(out.str().find(expected) != std::string::npos);

    // both heads train
    auto linear_cfg = cfg;
    linear_cfg.train.head_kind = train::HeadKind::Linear;
    cli::cmd_train(linear_cfg, tmp / "model_linear.bin", sink);
    const auto lin = train::load_model(tmp / "model_linear.bin");
    CHECK(std::holds_alternative<model::LinearHead>(lin.params.head));
}

TEST_CASE("cmd_score covers all detectors and caches stats") {
    TempDir tmp("oods_test_score");
    auto cfg = fast_config(tmp / "data");
    std::ostringstream sink;
    cli::cmd_synth(cfg, tmp / "data", sink);
    cli::cmd_train(cfg, tmp / "model.bin", sink);

    cli::cmd_score(cfg, tmp / "model.bin", tmp / "scores.csv", sink);
    const auto records = scoring::load_scores_csv(tmp / "scores.csv");
    // 5 detectors x (20 IND test + 30 OOD test)
    CHECK(records.size() == 5 * 50);
    CHECK(fs::exists(tmp / "model.bin.stats"));

    // rerun with the cache in place: identical bytes
    const std::string first = slurp(tmp / "scores.csv");
    cli::cmd_score(cfg, tmp / "model.bin", tmp / "scores.csv", sink);
    CHECK(slurp(tmp / "scores.csv") == first);

    // confidence only
    auto conf_cfg = cfg;
    conf_cfg.score.detectors = {scoring::Detector::Confidence};
    cli::cmd_score(conf_cfg, tmp / "model.bin", tmp / "conf.csv", sink);
    CHECK(scoring::load_scores_csv(tmp / "conf.csv").size() == 50);
}

TEST_CASE("cmd_eval writes a metric report per detector") {
    TempDir tmp("oods_test_eval");
    auto cfg = fast_config(tmp / "data");
    std::ostringstream sink;
    cli::cmd_synth(cfg, tmp / "data", sink);
    cli::cmd_train(cfg, tmp / "model.bin", sink);
    cli::cmd_score(cfg, tmp / "model.bin", tmp / "scores.csv", sink);

    std::ostringstream out;
    cli::cmd_eval(cfg, tmp / "scores.csv", tmp / "report.csv", out);
    const std::string report = slurp(tmp / "report.csv");
    CHECK(report.find("detector,eer,") == 0);
    for (const char* name : {"confidence", "odin", "entropy", "maha_last", "l_maha"}) {
        CHECK(report.find(std::string("\n") + name + ",") != std::string::npos);
    }
}

TEST_CASE("cmd_eval perfect-separation fixture reports auroc 1") {
    TempDir tmp("oods_test_eval_fix");
    {
        std::ofstream f(tmp / "scores.csv");
        f << "sample_id,detector,score,domain\n";
        f << "a,confidence,0.9,IND\n"
          << "b,confidence,0.8,IND\n"
          << "c,confidence,0.2,OOD\n"
          << "d,confidence,0.1,OOD\n";
    }
    cli::RunConfig cfg;
    std::ostringstream out;
    cli::cmd_eval(cfg, tmp / "scores.csv", tmp / "report.csv", out);
    CHECK(slurp(tmp / "report.csv").find(",1.000000,") != std::string::npos);
}

TEST_CASE("cmd_eval_seeds aggregates runs and compares detectors") {
    TempDir tmp("oods_test_seeds");
    auto cfg = fast_config(tmp / "data");
    std::ostringstream sink;

    fs::create_directories(tmp / "seeds");
    for (std::uint64_t seed : {7, 8, 9}) {
        auto run_cfg = cfg;
        run_cfg.data.dir = tmp / ("data" + std::to_string(seed));
        run_cfg.synth.synth.seed = seed;
        run_cfg.train.seed = seed;
        run_cfg.score.detectors = {scoring::Detector::Confidence, scoring::Detector::Entropy};
        cli::cmd_synth(run_cfg, run_cfg.data.dir, sink);
        cli::cmd_train(run_cfg, tmp / ("model" + std::to_string(seed) + ".bin"), sink);
        cli::cmd_score(run_cfg, tmp / ("model" + std::to_string(seed) + ".bin"),
                       (fs::path(tmp / "seeds") / ("seed" + std::to_string(seed) + ".csv"))
                           .string(),
                       sink);
    }

    auto eval_cfg = cfg;
    eval_cfg.eval.compare = "confidence,entropy";
    std::ostringstream out;
    cli::cmd_eval_seeds(eval_cfg, tmp / "seeds", tmp / "agg.csv", out);

    const std::string agg = slurp(tmp / "agg.csv");
    CHECK(agg.find("detector,n_seeds") == 0);
    CHECK(agg.find("confidence,3,") != std::string::npos);
    CHECK(agg.find("entropy,3,") != std::string::npos);

    const std::string ttest = slurp(tmp / "agg_ttest.csv");
    CHECK(ttest.find("metric,detector_a,detector_b,t,p_two_sided") == 0);
    CHECK(ttest.find("auroc,confidence,entropy,") != std::string::npos);
}

TEST_CASE("cmd_export histogram and projection") {
    TempDir tmp("oods_test_export");
    auto cfg = fast_config(tmp / "data");
    std::ostringstream sink;
    cli::cmd_synth(cfg, tmp / "data", sink);
    cli::cmd_train(cfg, tmp / "model.bin", sink);
    cli::cmd_score(cfg, tmp / "model.bin", tmp / "scores.csv", sink);

    cli::cmd_export_histogram(cfg, tmp / "scores.csv", "l_maha", 12, tmp / "hist.csv", sink);
    const std::string hist = slurp(tmp / "hist.csv");
    CHECK(hist.find("bin_lo,bin_hi,count_ind,count_ood") == 0);
    std::size_t total = 0;
    std::istringstream hs(hist);
    std::string line;
    std::getline(hs, line);
    while (std::getline(hs, line)) {
        const auto p1 = line.rfind(',');
        const auto p2 = line.rfind(',', p1 - 1);
        total += std::stoul(line.substr(p1 + 1)) + std::stoul(line.substr(p2 + 1, p1 - p2 - 1));
    }
    CHECK(total == 50);  // bins sum to the record count

    // several detectors present and no --detector selection: an error
    CHECK_THROWS_AS(
        cli::cmd_export_histogram(cfg, tmp / "scores.csv", "", 12, tmp / "h2.csv", sink),
        InvalidConfig);

    cli::cmd_export_projection(cfg, tmp / "model.bin", tmp / "proj.csv", sink);
    const std::string proj = slurp(tmp / "proj.csv");
    CHECK(proj.find("sample_id,x,y,domain") == 0);
    CHECK(std::count(proj.begin(), proj.end(), '\n') == 1 + 20 + 30);  // header + rows

    // deterministic bytes on rerun
    cli::cmd_export_projection(cfg, tmp / "model.bin", tmp / "proj2.csv", sink);
    CHECK(slurp(tmp / "proj2.csv") == proj);
}

TEST_CASE("demo walks through the division-driven overconfidence example") {
    std::ostringstream out;
    cli::cmd_demo_overconfidence(out);
    const std::string text = out.str();
    CHECK(text.find("57.4%") != std::string::npos);
    CHECK(text.find("95.3%") != std::string::npos);
    CHECK(text.find("42.6%") != std::string::npos);
    CHECK(text.find("4.7%") != std::string::npos);
    CHECK(text.find("[5.000, 8.000]") != std::string::npos);
}

TEST_CASE("run_cli maps errors to the exit-code contract") {
    // unknown flag -> parse error -> 2
    const char* bad_flag[] = {"oods", "synth", "--nope"};
    CHECK(cli::run_cli(3, bad_flag) == 2);

    // missing data file -> 3
    const char* missing_data[] = {"oods", "train", "--data", "/nonexistent_dir_x",
                                  "--out", "/tmp/oods_cli_model.bin"};
    CHECK(cli::run_cli(6, missing_data) == 3);

    // demo succeeds -> 0
    const char* demo[] = {"oods", "demo-overconfidence"};
    CHECK(cli::run_cli(2, demo) == 0);

    // eval without inputs -> 2
    const char* eval_none[] = {"oods", "eval", "--out", "/tmp/oods_cli_report.csv"};
    CHECK(cli::run_cli(4, eval_none) == 2);
}
