#include "oods/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "oods/errors.hpp"
#include "oods/rng.hpp"

namespace oods::data {

std::size_t Dataset::class_index(const std::string& label) const {
    auto it = std::lower_bound(classes.begin(), classes.end(), label);
    if (it == classes.end() || *it != label) {
        throw DataError("label '" + label + "' is not in the class list");
    }
    return static_cast<std::size_t>(it - classes.begin());
}

Dataset load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return parse_jsonl(in, path);
}

Dataset parse_jsonl(std::istream& in, const std::string& origin) {
    Dataset ds;
    std::set<std::string> labels;
    std::size_t n_labeled = 0;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!obj.is_object() || !obj.contains("text") || !obj["text"].is_string()) {
            throw ParseError(origin + ":" + std::to_string(line_no) +
                             ": expected an object with a string 'text' field");
        }

        Utterance u;
        u.text = obj["text"].get<std::string>();
        if (u.text.find_first_not_of(" \t\r\n") == std::string::npos) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": empty text");
        }
        u.id = obj.contains("id") ? obj["id"].get<std::string>()
                                  : "row" + std::to_string(line_no);
        if (obj.contains("label")) {
            if (!obj["label"].is_string()) {
                throw ParseError(origin + ":" + std::to_string(line_no) +
                                 ": 'label' must be a string");
            }
            u.label = obj["label"].get<std::string>();
            labels.insert(*u.label);
            ++n_labeled;
        }
        ds.utterances.push_back(std::move(u));
    }

    if (ds.utterances.empty()) throw ParseError(origin + ": empty dataset");
    if (n_labeled != 0 && n_labeled != ds.utterances.size()) {
        throw MixedLabeling(origin + ": " + std::to_string(n_labeled) + " of " +
                            std::to_string(ds.utterances.size()) + " lines carry a label");
    }

    ds.domain_tag = n_labeled > 0 ? DomainTag::Ind : DomainTag::Ood;
    ds.classes.assign(labels.begin(), labels.end());
    return ds;
}

void write_jsonl(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    for (const Utterance& u : ds.utterances) {
        nlohmann::json obj;
        obj["id"] = u.id;
        obj["text"] = u.text;
        if (u.label) obj["label"] = *u.label;
        out << obj.dump() << "\n";
    }
    if (!out) throw IoError("write failed for " + path);
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

Vocab build_vocab(const Dataset& ds, int min_freq) {
    if (ds.domain_tag != DomainTag::Ind) {
        throw OODInTraining("build_vocab requires an IND dataset");
    }
    std::map<std::string, int> freq;  // ordered map gives lexicographic ids
    for (const Utterance& u : ds.utterances) {
        for (const std::string& tok : tokenize(u.text)) ++freq[tok];
    }

    Vocab vocab;
    for (const auto& [tok, count] : freq) {
        if (count >= min_freq) {
            vocab.token_to_id[tok] = static_cast<int>(vocab.id_to_token.size()) + 1;
            vocab.id_to_token.push_back(tok);
        }
    }
    if (vocab.id_to_token.empty()) {
        throw EmptyVocab("no token reaches min_freq=" + std::to_string(min_freq));
    }
    return vocab;
}

std::vector<int> encode(const std::string& text, const Vocab& vocab) {
    std::vector<int> ids;
    for (const std::string& tok : tokenize(text)) {
        auto it = vocab.token_to_id.find(tok);
        ids.push_back(it == vocab.token_to_id.end() ? 0 : it->second);
    }
    if (ids.empty()) ids.push_back(0);
    return ids;
}

namespace {

std::string padded_index(std::size_t i, std::size_t total) {
    std::size_t width = 1;
    for (std::size_t t = total; t >= 10; t /= 10) ++width;
    std::string s = std::to_string(i);
    return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

}  // namespace

std::pair<Dataset, Dataset> synth_generate(const SynthConfig& cfg) {
    if (cfg.n_classes < 2) throw InvalidConfig("synth: n_classes must be >= 2");
    if (cfg.vocab_per_class == 0 || cfg.samples_per_class == 0 || cfg.ood_samples == 0) {
        throw InvalidConfig("synth: all counts must be positive");
    }
    if (cfg.min_utterance_len == 0 || cfg.min_utterance_len > cfg.max_utterance_len) {
        throw InvalidConfig("synth: utterance length range is invalid");
    }
    if (cfg.vocab_overlap_fraction < 0.0 || cfg.vocab_overlap_fraction > 1.0) {
        throw InvalidConfig("synth: vocab_overlap_fraction must be in [0,1]");
    }

    const std::size_t n_shared = static_cast<std::size_t>(
        std::llround(cfg.vocab_overlap_fraction * static_cast<double>(cfg.vocab_per_class)));
    const std::size_t n_own = cfg.vocab_per_class - n_shared;

    // Shared pool used by every IND class and, for the overlap slice, by OOD.
    std::vector<std::string> shared;
    for (std::size_t i = 0; i < n_shared; ++i) shared.push_back("shared" + std::to_string(i));

    std::vector<std::vector<std::string>> class_blocks(cfg.n_classes);
    for (std::size_t k = 0; k < cfg.n_classes; ++k) {
        class_blocks[k] = shared;
        for (std::size_t i = 0; i < n_own; ++i) {
            class_blocks[k].push_back("c" + std::to_string(k) + "t" + std::to_string(i));
        }
    }
    std::vector<std::string> ood_block = shared;
    for (std::size_t i = 0; i < n_own; ++i) ood_block.push_back("oodt" + std::to_string(i));

    Rng rng(cfg.seed);
    auto draw_text = [&](const std::vector<std::string>& block) {
        const std::size_t len =
            cfg.min_utterance_len +
            rng.below(cfg.max_utterance_len - cfg.min_utterance_len + 1);
        std::string text;
        for (std::size_t i = 0; i < len; ++i) {
            if (i > 0) text += ' ';
            text += block[rng.below(block.size())];
        }
        return text;
    };

    Dataset ind;
    ind.domain_tag = DomainTag::Ind;
    const std::size_t n_ind = cfg.n_classes * cfg.samples_per_class;
    std::size_t row = 0;
    for (std::size_t k = 0; k < cfg.n_classes; ++k) {
        const std::string label = "class" + std::to_string(k);
        ind.classes.push_back(label);
        for (std::size_t i = 0; i < cfg.samples_per_class; ++i) {
            Utterance u;
            u.id = "ind" + padded_index(row++, n_ind);
            u.text = draw_text(class_blocks[k]);
            u.label = label;
            ind.utterances.push_back(std::move(u));
        }
    }

    Dataset ood;
    ood.domain_tag = DomainTag::Ood;
    for (std::size_t i = 0; i < cfg.ood_samples; ++i) {
        Utterance u;
        u.id = "ood" + padded_index(i, cfg.ood_samples);
        u.text = draw_text(ood_block);
        ood.utterances.push_back(std::move(u));
    }
    return {std::move(ind), std::move(ood)};
}

SplitResult split(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed) {
    if (!(ratios.train > 0.0 && ratios.dev > 0.0 && ratios.test > 0.0)) {
        throw InvalidConfig("split: all ratios must be positive");
    }
    if (std::abs(ratios.train + ratios.dev + ratios.test - 1.0) > 1e-9) {
        throw InvalidConfig("split: ratios must sum to 1");
    }

    // Group indices per class; an unlabeled dataset forms a single stratum.
    std::map<std::string, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < ds.utterances.size(); ++i) {
        strata[ds.utterances[i].label.value_or("")].push_back(i);
    }
    for (const auto& [label, idx] : strata) {
        if (idx.size() < 3) {
            throw TooFewSamples("class '" + label + "' has only " +
                                std::to_string(idx.size()) + " samples (need >= 3)");
        }
    }

    Rng rng(seed);
    SplitResult out;
    for (Dataset* part : {&out.train, &out.dev, &out.test}) {
        part->classes = ds.classes;
        part->domain_tag = ds.domain_tag;
    }

    for (auto& [label, idx] : strata) {
        rng.shuffle(idx);
        const auto n = static_cast<double>(idx.size());
        // Cumulative rounding keeps each count within +-1 of ratio * n while
        // the three parts stay exhaustive.
        const std::size_t b1 = static_cast<std::size_t>(std::llround(ratios.train * n));
        const std::size_t b2 =
            static_cast<std::size_t>(std::llround((ratios.train + ratios.dev) * n));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            Dataset& dest = i < b1 ? out.train : (i < b2 ? out.dev : out.test);
            dest.utterances.push_back(ds.utterances[idx[i]]);
        }
    }

    // Canonical order regardless of stratum iteration.
    for (Dataset* part : {&out.train, &out.dev, &out.test}) {
        std::sort(part->utterances.begin(), part->utterances.end(),
                  [](const Utterance& a, const Utterance& b) { return a.id < b.id; });
    }
    return out;
}

}  // namespace oods::data
