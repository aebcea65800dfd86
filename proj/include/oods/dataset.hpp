#pragma once

// Corpus handling: JSONL ingestion, whitespace tokenization, stratified
// splitting, and a deterministic synthetic IND/OOD generator. OOD data never
// carries labels; training-side code rejects OOD datasets outright.

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace oods::data {

enum class DomainTag { Ind, Ood };

struct Utterance {
    std::string id;
    std::string text;
    std::optional<std::string> label;  // absent for OOD sets
};

struct Dataset {
    std::vector<Utterance> utterances;
    std::vector<std::string> classes;  // sorted; empty for OOD
    DomainTag domain_tag = DomainTag::Ind;

    std::size_t size() const { return utterances.size(); }
    std::size_t class_index(const std::string& label) const;
};

// token -> id map; id 0 is reserved for OOV and participates in embedding
// lookup like any other token.
struct Vocab {
    std::unordered_map<std::string, int> token_to_id;
    std::vector<std::string> id_to_token;  // index i holds the token with id i+1

    std::size_t size() const { return id_to_token.size() + 1; }  // includes OOV
};

struct SynthConfig {
    std::size_t n_classes = 4;
    std::size_t vocab_per_class = 50;
    std::size_t min_utterance_len = 4;
    std::size_t max_utterance_len = 10;
    std::size_t samples_per_class = 320;
    std::size_t ood_samples = 200;
    double vocab_overlap_fraction = 0.1;
    std::uint64_t seed = 1;
};

struct SplitRatios {
    double train = 0.625;
    double dev = 0.21875;
    double test = 0.15625;
};

// One JSON object per line with "text" (required), "label" and "id"
// (optional). Missing ids become "row<N>" with N the 1-based line number.
Dataset load_jsonl(const std::string& path);
Dataset parse_jsonl(std::istream& in, const std::string& origin);
void write_jsonl(const Dataset& ds, const std::string& path);

// Lowercased whitespace tokens with frequency >= min_freq, ids assigned in
// lexicographic order starting at 1.
Vocab build_vocab(const Dataset& ds, int min_freq);

// Lowercase, split on whitespace, map through the vocab; unknown tokens map
// to 0 and empty text maps to [0].
std::vector<int> encode(const std::string& text, const Vocab& vocab);

std::vector<std::string> tokenize(const std::string& text);

// Per-class token blocks are disjoint except for a shared fraction, and the
// OOD block overlaps the IND universe by vocab_overlap_fraction. Deterministic
// in cfg.seed.
std::pair<Dataset, Dataset> synth_generate(const SynthConfig& cfg);

struct SplitResult {
    Dataset train;
    Dataset dev;
    Dataset test;
};

// Stratified by class with per-class shuffling; partitions are disjoint and
// exhaustive, each class count within +-1 of ratio * n.
SplitResult split(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed);

}  // namespace oods::data
