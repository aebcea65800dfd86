#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "oods/dataset.hpp"
#include "oods/errors.hpp"
#include "oods/rng.hpp"

using namespace oods;
using data::Dataset;
using data::DomainTag;
using data::SynthConfig;

namespace {

Dataset parse(const std::string& text) {
    std::istringstream in(text);
    return data::parse_jsonl(in, "<test>");
}

std::set<std::string> token_types(const Dataset& ds) {
    std::set<std::string> types;
    for (const auto& u : ds.utterances) {
        for (const auto& tok : data::tokenize(u.text)) types.insert(tok);
    }
    return types;
}

}  // namespace

TEST_CASE("load_jsonl builds a two-class dataset") {
    const auto ds = parse(
        R"({"text":"play jazz","label":"music"})"
        "\n"
        R"({"text":"book table","label":"restaurant"})"
        "\n");
    CHECK(ds.size() == 2);
    CHECK(ds.domain_tag == DomainTag::Ind);
    CHECK(ds.classes == std::vector<std::string>{"music", "restaurant"});
    CHECK(ds.utterances[0].id == "row1");
    CHECK(ds.utterances[1].id == "row2");
}

TEST_CASE("load_jsonl rejects empty and malformed input") {
    CHECK_THROWS_AS(parse(""), ParseError);
    CHECK_THROWS_AS(parse("{not json}\n"), ParseError);
    CHECK_THROWS_AS(parse(R"({"label":"x"})" "\n"), ParseError);   // no text
    CHECK_THROWS_AS(parse(R"({"text":"   "})" "\n"), ParseError);  // blank text
    CHECK_THROWS_AS(parse(R"({"text":"a","label":1})" "\n"), ParseError);
}

TEST_CASE("load_jsonl rejects mixed labeling") {
    CHECK_THROWS_AS(parse(R"({"text":"a","label":"x"})"
                          "\n"
                          R"({"text":"b"})"
                          "\n"),
                    MixedLabeling);
}

TEST_CASE("load_jsonl agrees with an independent label-set count") {
    // 100 lines across 5 labels, written in scrambled order.
    std::ostringstream text;
    std::set<std::string> expected_labels;
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const std::string label = "intent" + std::to_string(rng.below(5));
        expected_labels.insert(label);
        text << R"({"text":"utterance )" << i << R"(","label":")" << label << R"("})" << "\n";
    }
    const auto ds = parse(text.str());
    CHECK(ds.size() == 100);
    CHECK(ds.classes == std::vector<std::string>(expected_labels.begin(), expected_labels.end()));
}

TEST_CASE("unlabeled input becomes an OOD dataset") {
    const auto ds = parse(R"({"text":"what is this"})"
                          "\n"
                          R"({"text":"no idea","id":"custom7"})"
                          "\n");
    CHECK(ds.domain_tag == DomainTag::Ood);
    CHECK(ds.classes.empty());
    CHECK(ds.utterances[1].id == "custom7");
}

TEST_CASE("build_vocab respects the frequency threshold") {
    const auto ds = parse(R"({"text":"a b","label":"x"})"
                          "\n"
                          R"({"text":"a c","label":"x"})"
                          "\n");
    const auto v2 = data::build_vocab(ds, 2);
    CHECK(v2.id_to_token == std::vector<std::string>{"a"});
    CHECK(v2.size() == 2);  // OOV slot included

    const auto v1 = data::build_vocab(ds, 1);
    CHECK(v1.id_to_token == std::vector<std::string>{"a", "b", "c"});

    CHECK_THROWS_AS(data::build_vocab(ds, 3), EmptyVocab);
}

TEST_CASE("build_vocab matches a token-frequency oracle on a synthetic corpus") {
    SynthConfig cfg;
    cfg.samples_per_class = 250;
    const auto [ind, ood] = data::synth_generate(cfg);
    (void)ood;

    std::map<std::string, int> freq;
    for (const auto& u : ind.utterances) {
        for (const auto& tok : data::tokenize(u.text)) ++freq[tok];
    }
    for (int min_freq : {1, 5, 20}) {
        std::size_t expected = 0;
        for (const auto& [tok, count] : freq) {
            if (count >= min_freq) ++expected;
        }
        const auto vocab = data::build_vocab(ind, min_freq);
        CHECK(vocab.id_to_token.size() == expected);
    }
}

TEST_CASE("encode folds case and maps unknowns to OOV") {
    const auto ds = parse(R"({"text":"a b","label":"x"})"
                          "\n"
                          R"({"text":"a c","label":"x"})"
                          "\n");
    const auto vocab = data::build_vocab(ds, 1);  // a=1 b=2 c=3
    CHECK(data::encode("A b", vocab) == std::vector<int>{1, 2});
    CHECK(data::encode("zzz", vocab) == std::vector<int>{0});
    CHECK(data::encode("", vocab) == std::vector<int>{0});
    CHECK(data::encode("c zz B a", vocab) == std::vector<int>{3, 0, 2, 1});
}

TEST_CASE("encode never produces an empty id list") {
    const auto ds = parse(R"({"text":"alpha beta","label":"x"})" "\n");
    const auto vocab = data::build_vocab(ds, 1);
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        std::string text;
        const auto len = rng.below(6);
        for (std::uint64_t j = 0; j < len; ++j) {
            text += (rng.below(2) ? "alpha " : "qqq ");
        }
        CHECK(!data::encode(text, vocab).empty());
    }
}

TEST_CASE("synth_generate with zero overlap keeps vocabularies disjoint") {
    SynthConfig cfg;
    cfg.vocab_overlap_fraction = 0.0;
    cfg.samples_per_class = 50;
    cfg.ood_samples = 100;
    const auto [ind, ood] = data::synth_generate(cfg);

    const auto ind_types = token_types(ind);
    const auto ood_types = token_types(ood);
    for (const auto& tok : ood_types) CHECK(ind_types.count(tok) == 0);

    CHECK(ind.domain_tag == DomainTag::Ind);
    CHECK(ood.domain_tag == DomainTag::Ood);
    for (const auto& u : ood.utterances) CHECK(!u.label.has_value());
}

TEST_CASE("synth_generate is deterministic in the seed") {
    SynthConfig cfg;
    cfg.seed = 42;
    const auto [ind_a, ood_a] = data::synth_generate(cfg);
    const auto [ind_b, ood_b] = data::synth_generate(cfg);
    REQUIRE(ind_a.size() == ind_b.size());
    for (std::size_t i = 0; i < ind_a.size(); ++i) {
        CHECK(ind_a.utterances[i].text == ind_b.utterances[i].text);
        CHECK(ind_a.utterances[i].id == ind_b.utterances[i].id);
    }
    REQUIRE(ood_a.size() == ood_b.size());
    for (std::size_t i = 0; i < ood_a.size(); ++i) {
        CHECK(ood_a.utterances[i].text == ood_b.utterances[i].text);
    }

    cfg.seed = 43;
    const auto [ind_c, ood_c] = data::synth_generate(cfg);
    (void)ood_c;
    bool any_diff = false;
    for (std::size_t i = 0; i < ind_a.size(); ++i) {
        if (ind_a.utterances[i].text != ind_c.utterances[i].text) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("synth_generate hits the requested IND/OOD vocabulary overlap") {
    SynthConfig cfg;
    cfg.n_classes = 4;
    cfg.samples_per_class = 200;
    cfg.ood_samples = 400;
    cfg.vocab_overlap_fraction = 0.5;
    const auto [ind, ood] = data::synth_generate(cfg);

    const auto ind_types = token_types(ind);
    const auto ood_types = token_types(ood);
    std::size_t shared = 0;
    for (const auto& tok : ood_types) {
        if (ind_types.count(tok)) ++shared;
    }
    const double ratio = static_cast<double>(shared) / static_cast<double>(ood_types.size());
    CHECK(ratio > 0.45);
    CHECK(ratio < 0.55);
}

TEST_CASE("synth_generate validates its config") {
    SynthConfig cfg;
    cfg.vocab_overlap_fraction = 1.5;
    CHECK_THROWS_AS(data::synth_generate(cfg), InvalidConfig);
    cfg = SynthConfig{};
    cfg.n_classes = 1;
    CHECK_THROWS_AS(data::synth_generate(cfg), InvalidConfig);
    cfg = SynthConfig{};
    cfg.min_utterance_len = 9;
    cfg.max_utterance_len = 3;
    CHECK_THROWS_AS(data::synth_generate(cfg), InvalidConfig);
}

TEST_CASE("split is stratified and exact on an even corpus") {
    SynthConfig cfg;
    cfg.n_classes = 3;
    cfg.samples_per_class = 100;
    const auto [ind, ood] = data::synth_generate(cfg);
    (void)ood;

    const auto parts = data::split(ind, {0.8, 0.1, 0.1}, 1);
    std::map<std::string, std::array<std::size_t, 3>> per_class;
    const std::array<const Dataset*, 3> sets = {&parts.train, &parts.dev, &parts.test};
    for (std::size_t s = 0; s < 3; ++s) {
        for (const auto& u : sets[s]->utterances) per_class[*u.label][s] += 1;
    }
    for (const auto& [label, counts] : per_class) {
        CHECK(counts[0] == 80);
        CHECK(counts[1] == 10);
        CHECK(counts[2] == 10);
    }
}

TEST_CASE("split partitions ids exactly") {
    SynthConfig cfg;
    cfg.n_classes = 2;
    cfg.samples_per_class = 57;  // uneven on purpose
    const auto [ind, ood] = data::synth_generate(cfg);
    (void)ood;

    const auto parts = data::split(ind, {0.6, 0.2, 0.2}, 9);
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const Dataset* part : {&parts.train, &parts.dev, &parts.test}) {
        for (const auto& u : part->utterances) {
            CHECK(seen.insert(u.id).second);  // disjoint
            ++total;
        }
    }
    CHECK(total == ind.size());  // exhaustive

    // per-class counts within +-1 of ratio * n
    std::map<std::string, std::size_t> train_counts;
    for (const auto& u : parts.train.utterances) train_counts[*u.label] += 1;
    for (const auto& [label, count] : train_counts) {
        CHECK(std::abs(static_cast<double>(count) - 0.6 * 57.0) <= 1.0);
    }
}

TEST_CASE("split is deterministic in the seed") {
    SynthConfig cfg;
    cfg.samples_per_class = 40;
    const auto [ind, ood] = data::synth_generate(cfg);
    (void)ood;
    const auto a = data::split(ind, {0.5, 0.25, 0.25}, 7);
    const auto b = data::split(ind, {0.5, 0.25, 0.25}, 7);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train.utterances[i].id == b.train.utterances[i].id);
    }
}

TEST_CASE("split validates ratios and class sizes") {
    SynthConfig cfg;
    cfg.samples_per_class = 40;
    const auto [ind, ood] = data::synth_generate(cfg);
    (void)ood;
    CHECK_THROWS_AS(data::split(ind, {0.5, 0.25, 0.3}, 1), InvalidConfig);
    CHECK_THROWS_AS(data::split(ind, {1.0, -0.5, 0.5}, 1), InvalidConfig);

    Dataset tiny;
    tiny.domain_tag = DomainTag::Ind;
    tiny.classes = {"a", "b"};
    for (int i = 0; i < 5; ++i) {
        data::Utterance u;
        u.id = "u" + std::to_string(i);
        u.text = "tok";
        u.label = i < 2 ? "a" : "b";  // class a has only 2
        tiny.utterances.push_back(u);
    }
    CHECK_THROWS_AS(data::split(tiny, {0.34, 0.33, 0.33}, 1), TooFewSamples);
}

TEST_CASE("jsonl round-trips through write and load") {
    SynthConfig cfg;
    cfg.samples_per_class = 10;
    cfg.ood_samples = 8;
    const auto [ind, ood] = data::synth_generate(cfg);
    (void)ood;

    const std::string path = "test_dataset_roundtrip.jsonl";
    data::write_jsonl(ind, path);
    const auto back = data::load_jsonl(path);
    REQUIRE(back.size() == ind.size());
    CHECK(back.classes == ind.classes);
    for (std::size_t i = 0; i < ind.size(); ++i) {
        CHECK(back.utterances[i].id == ind.utterances[i].id);
        CHECK(back.utterances[i].text == ind.utterances[i].text);
        CHECK(back.utterances[i].label == ind.utterances[i].label);
    }
    std::remove(path.c_str());

    CHECK_THROWS_AS(data::load_jsonl("does_not_exist.jsonl"), IoError);
}
