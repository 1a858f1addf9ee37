#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "felab/model.hpp"
#include "felab/rng.hpp"
#include "felab/serde.hpp"

namespace felab {

inline constexpr const char* kMaskWord = "[MASK]";

// Token <-> string interning. Entity names, relation keywords and template
// words live in one flat id space; ids are assigned in first-seen order so
// construction is deterministic.
class Vocab {
public:
    int32_t intern(const std::string& word);
    int32_t id_of(const std::string& word) const;  // throws ValueError when absent
    bool contains(const std::string& word) const { return index_.count(word) != 0; }
    const std::string& word(int32_t id) const;
    int32_t size() const { return static_cast<int32_t>(words_.size()); }
    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::map<std::string, int32_t> index_;
};

enum class Split : uint8_t { Train, Test };

inline const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

// One cloze rendering of a fact: a token sequence with exactly one mask whose
// gold answer is the owning fact's object.
struct Evidence {
    std::vector<int32_t> tokens;
    size_t mask_pos{0};
    int32_t gold{-1};
    Split split{Split::Train};
    int32_t template_id{-1};  // -1 for imported evidences without template info
};

struct Fact {
    int64_t fact_id{0};
    int32_t subject_id{-1};
    int32_t relation_id{-1};
    int32_t object_id{-1};
    int32_t original_object_id{-1};  // equals object_id unless modified
    bool modified{false};
    std::vector<Evidence> evidences;
};

/// GenSpec controls the synthetic corpus: per relation, a pool of objects with
// Zipf-distributed assignment frequencies, and fixed word templates split
// into disjoint train/test sets.
struct GenSpec {
    int32_t n_relations{10};
    int32_t subjects_per_relation{50};
    int32_t objects_per_relation{20};
    int32_t templates_train_per_relation{2};
    int32_t templates_test_per_relation{1};
    double zipf_exponent{1.1};
    uint64_t seed{1};

    void validate() const;
    bool operator==(const GenSpec&) const = default;
};

struct ModifiedEntry {
    int32_t old_object_id{-1};
    int32_t new_object_id{-1};
};

struct Benchmark {
    Vocab vocab;
    std::vector<Fact> facts;
    std::map<int64_t, ModifiedEntry> modified;  // fact_id -> old/new object
    GenSpec spec;
    bool has_spec{false};
    std::vector<std::string> warnings;  // data-quality notes from import/splitting

    int32_t mask_id() const { return vocab.id_of(kMaskWord); }
    const Fact& fact_by_id(int64_t id) const;
    size_t max_evidence_tokens() const;
};

Benchmark generate_benchmark(const GenSpec& spec);

// Replaces the object of m uniformly chosen eligible facts (a fact is
// eligible when its relation has at least two distinct objects). The new
// object is drawn from same-relation objects, weighted by their gold
// frequency over the unmodified train split, with the original excluded.
// Every evidence of a chosen fact (train and test) gets the new gold; token
// sequences are untouched. stratified spreads the m picks evenly over
// relations instead of pooling all eligible facts.
Benchmark modify_benchmark(const Benchmark& b, int32_t m, Rng& rng, bool stratified = false);

// zsRE-style split rule for one fact's evidences: more than three -> two of
// them to test; exactly one -> it stays in train and a test copy of it is
// synthesized (recorded in warnings as template-shared); otherwise one to
// test. Assignment among evidences is random via rng.
void split_questions(std::vector<Evidence>& evidences, Rng& rng, int64_t fact_id, std::vector<std::string>& warnings);

// JSONL import: one object per line with required fields {fact_id, subject,
// relation, object, evidence_text, split} and optional template_id.
// Whitespace tokenization; subject and relation are interned verbatim as
// single vocab entries; the object must tokenize to exactly one word. Facts
// that arrive without both a train and a test evidence are re-split via
// split_questions (a warning records it).
Benchmark import_jsonl(const std::string& path);

void export_jsonl(const Benchmark& b, const std::string& path);

// Directory form used by the pipeline: <dir>/benchmark.jsonl plus
// <dir>/manifest.json (seed, GenSpec, modification map, vocab order). The
// manifest pins vocab ids so checkpoints trained before a save stay
// compatible with benchmarks loaded after it.
void save_benchmark_dir(const Benchmark& b, const std::string& dir);
Benchmark load_benchmark_dir(const std::string& dir);

// Flat evaluation/training pools drawn from a benchmark.
struct ExamplePools {
    std::vector<TokenizedExample> modified_train;
    std::vector<TokenizedExample> unmodified_train;
    std::vector<TokenizedExample> modified_test;
    std::vector<TokenizedExample> unmodified_test;
};

ExamplePools build_pools(const Benchmark& b);

void to_json(json& j, const GenSpec& s);
GenSpec genspec_from_json(const json& j, const std::string& where);

}  // namespace felab
