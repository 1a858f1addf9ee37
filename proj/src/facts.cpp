#include "felab/facts.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace felab {

namespace {

std::vector<std::string> split_whitespace(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) out.push_back(std::move(w));
    return out;
}

// Sentinel slot ids used inside templates before rendering.
constexpr int32_t kSlotSubject = -2;
constexpr int32_t kSlotMask = -3;

constexpr int32_t kCommonWordPool = 8;

}  // namespace

int32_t Vocab::intern(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    const int32_t id = static_cast<int32_t>(words_.size());
    words_.push_back(word);
    index_.emplace(word, id);
    return id;
}

int32_t Vocab::id_of(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw ValueError("vocab: unknown word \"" + word + "\"");
    return it->second;
}

const std::string& Vocab::word(int32_t id) const {
    if (id < 0 || id >= size()) throw ValueError("vocab: id " + std::to_string(id) + " out of range");
    return words_[static_cast<size_t>(id)];
}

void GenSpec::validate() const {
    if (n_relations < 1) throw ConfigError("genspec.n_relations must be >= 1");
    if (subjects_per_relation < 1) throw ConfigError("genspec.subjects_per_relation must be >= 1");
    if (objects_per_relation < 1) throw ConfigError("genspec.objects_per_relation must be >= 1");
    if (templates_train_per_relation < 1) throw ConfigError("genspec.templates_train_per_relation must be >= 1");
    if (templates_test_per_relation < 1) throw ConfigError("genspec.templates_test_per_relation must be >= 1");
    if (!(zipf_exponent >= 0.0)) throw ConfigError("genspec.zipf_exponent must be >= 0");
}

const Fact& Benchmark::fact_by_id(int64_t id) const {
    for (const auto& f : facts)
        if (f.fact_id == id) return f;
    throw ValueError("benchmark: no fact with id " + std::to_string(id));
}

size_t Benchmark::max_evidence_tokens() const {
    size_t n = 0;
    for (const auto& f : facts)
        for (const auto& e : f.evidences) n = std::max(n, e.tokens.size());
    return n;
}

Benchmark generate_benchmark(const GenSpec& spec) {
    spec.validate();
    Benchmark b;
    b.spec = spec;
    b.has_spec = true;
    Rng rng(spec.seed);

    const int32_t mask = b.vocab.intern(kMaskWord);
    const int32_t n_templates = spec.templates_train_per_relation + spec.templates_test_per_relation;

    // Entity namespace first, in a fixed order; template words afterwards.
    std::vector<int32_t> relation_ids;
    std::vector<std::vector<int32_t>> subject_ids(spec.n_relations);
    std::vector<std::vector<int32_t>> object_ids(spec.n_relations);
    for (int32_t r = 0; r < spec.n_relations; ++r) {
        relation_ids.push_back(b.vocab.intern("rel" + std::to_string(r)));
        for (int32_t s = 0; s < spec.subjects_per_relation; ++s)
            subject_ids[r].push_back(b.vocab.intern("subj_" + std::to_string(r * spec.subjects_per_relation + s)));
        for (int32_t k = 0; k < spec.objects_per_relation; ++k)
            object_ids[r].push_back(b.vocab.intern("obj_" + std::to_string(r) + "_" + std::to_string(k)));
    }
    std::vector<int32_t> common_ids;
    for (int32_t j = 0; j < kCommonWordPool; ++j) common_ids.push_back(b.vocab.intern("w" + std::to_string(j)));

    // Each template is a fixed word sequence with a subject slot, the
    // relation word and the mask slot; filler words come from the shared
    // pool. Layouts alternate which side of the sentence holds the mask so
    // both orders are seen in training, and duplicate sequences within a
    // relation are rerolled so templates stay distinct. A test template is a
    // paraphrase of a same-relation train template: it keeps that template's
    // positional skeleton (pre/mid lengths and layout side) but redraws the
    // filler words — from the words the train templates actually used, so
    // held-out sentences never contain a token the model has not seen in
    // training — and jitters the tail length.
    struct Skeleton {
        size_t n_pre, n_mid, n_post;
        bool mask_last;
    };
    std::vector<std::vector<std::vector<int32_t>>> templates(spec.n_relations);
    std::vector<std::vector<Skeleton>> skeletons(spec.n_relations);
    std::vector<int32_t> train_fillers;
    auto render_skeleton = [&](int32_t r, const Skeleton& sk, const std::vector<int32_t>& pool) {
        auto draw = [&]() { return pool[rng.bounded(pool.size())]; };
        std::vector<int32_t> tpl;
        for (size_t i = 0; i < sk.n_pre; ++i) tpl.push_back(draw());
        if (sk.mask_last) {
            tpl.push_back(kSlotSubject);
            for (size_t i = 0; i < sk.n_mid; ++i) tpl.push_back(draw());
            tpl.push_back(relation_ids[r]);
            tpl.push_back(kSlotMask);
        } else {
            tpl.push_back(kSlotMask);
            for (size_t i = 0; i < sk.n_mid; ++i) tpl.push_back(draw());
            tpl.push_back(kSlotSubject);
            tpl.push_back(relation_ids[r]);
        }
        for (size_t i = 0; i < sk.n_post; ++i) tpl.push_back(draw());
        return tpl;
    };
    auto draw_skeleton = [&](int32_t t) {
        return Skeleton{rng.bounded(3), 1 + rng.bounded(2), 1 + rng.bounded(2), t % 2 == 0};
    };
    for (int32_t r = 0; r < spec.n_relations; ++r) {
        for (int32_t t = 0; t < spec.templates_train_per_relation; ++t) {
            Skeleton sk = draw_skeleton(t);
            std::vector<int32_t> tpl = render_skeleton(r, sk, common_ids);
            while (std::find(templates[r].begin(), templates[r].end(), tpl) != templates[r].end()) {
                sk = draw_skeleton(t);
                tpl = render_skeleton(r, sk, common_ids);
            }
            for (int32_t w : tpl)
                if (w >= 0 && w != relation_ids[r]) train_fillers.push_back(w);
            templates[r].push_back(std::move(tpl));
            skeletons[r].push_back(sk);
        }
    }
    std::sort(train_fillers.begin(), train_fillers.end());
    train_fillers.erase(std::unique(train_fillers.begin(), train_fillers.end()), train_fillers.end());
    for (int32_t r = 0; r < spec.n_relations; ++r) {
        for (int32_t t = spec.templates_train_per_relation; t < n_templates; ++t) {
            Skeleton sk = skeletons[r][t % spec.templates_train_per_relation];
            sk.n_post = 1 + rng.bounded(2);
            std::vector<int32_t> tpl = render_skeleton(r, sk, train_fillers);
            while (std::find(templates[r].begin(), templates[r].end(), tpl) != templates[r].end()) {
                sk.n_post = 1 + rng.bounded(2);
                tpl = render_skeleton(r, sk, train_fillers);
            }
            templates[r].push_back(std::move(tpl));
        }
    }

    // Template words must stay out of the reserved entity namespace.
    for (const auto& w : b.vocab.words()) {
        const bool entity = w.rfind("subj_", 0) == 0 || w.rfind("obj_", 0) == 0 || w.rfind("rel", 0) == 0;
        const bool tword = w.rfind("w", 0) == 0 || w.rfind("u", 0) == 0;
        if (entity && tword) throw ValueError("generate_benchmark: vocabulary collision on \"" + w + "\"");
    }

    // Zipf weights over object ranks, shared by every relation.
    std::vector<double> zipf(spec.objects_per_relation);
    for (int32_t k = 0; k < spec.objects_per_relation; ++k)
        zipf[k] = 1.0 / std::pow(static_cast<double>(k + 1), spec.zipf_exponent);

    int64_t next_fact_id = 0;
    for (int32_t r = 0; r < spec.n_relations; ++r) {
        for (int32_t s = 0; s < spec.subjects_per_relation; ++s) {
            Fact f;
            f.fact_id = next_fact_id++;
            f.subject_id = subject_ids[r][s];
            f.relation_id = relation_ids[r];
            f.object_id = object_ids[r][rng.weighted_index(zipf)];
            f.original_object_id = f.object_id;
            for (int32_t t = 0; t < n_templates; ++t) {
                Evidence ev;
                ev.template_id = r * n_templates + t;
                ev.split = t < spec.templates_train_per_relation ? Split::Train : Split::Test;
                ev.gold = f.object_id;
                for (int32_t w : templates[r][t]) {
                    if (w == kSlotSubject) {
                        ev.tokens.push_back(f.subject_id);
                    } else if (w == kSlotMask) {
                        ev.mask_pos = ev.tokens.size();
                        ev.tokens.push_back(mask);
                    } else {
                        ev.tokens.push_back(w);
                    }
                }
                f.evidences.push_back(std::move(ev));
            }
            b.facts.push_back(std::move(f));
        }
    }
    return b;
}

namespace {

// Train-split gold counts per object, grouped by relation, over the input
// benchmark as it stands.
std::map<int32_t, std::map<int32_t, int64_t>> train_object_counts(const Benchmark& b) {
    std::map<int32_t, std::map<int32_t, int64_t>> counts;
    for (const auto& f : b.facts)
        for (const auto& e : f.evidences)
            if (e.split == Split::Train) counts[f.relation_id][f.object_id] += 1;
    return counts;
}

std::vector<size_t> pick_distinct(std::vector<size_t> pool, size_t m, Rng& rng) {
    for (size_t i = 0; i < m; ++i) {
        const size_t j = i + static_cast<size_t>(rng.bounded(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(m);
    return pool;
}

}  // namespace

Benchmark modify_benchmark(const Benchmark& b, int32_t m, Rng& rng, bool stratified) {
    if (m < 1) throw ConfigError("modify: m must be >= 1");
    Benchmark out = b;

    // Eligibility: the fact's relation must offer at least two distinct objects.
    std::map<int32_t, std::set<int32_t>> distinct_objects;
    for (const auto& f : b.facts) distinct_objects[f.relation_id].insert(f.object_id);
    std::vector<size_t> eligible;
    for (size_t i = 0; i < b.facts.size(); ++i)
        if (distinct_objects[b.facts[i].relation_id].size() >= 2) eligible.push_back(i);
    if (static_cast<size_t>(m) > eligible.size()) {
        throw ConfigError("modify: requested m=" + std::to_string(m) + " but only " + std::to_string(eligible.size()) +
                          " facts are eligible (relations with a single distinct object are excluded)");
    }

    std::vector<size_t> chosen;
    if (!stratified) {
        chosen = pick_distinct(eligible, static_cast<size_t>(m), rng);
    } else {
        // Spread the m picks as evenly as possible over relations that have
        // eligible facts, ascending relation id; remainder goes to the first
        // relations.
        std::map<int32_t, std::vector<size_t>> by_relation;
        for (size_t i : eligible) by_relation[b.facts[i].relation_id].push_back(i);
        const size_t n_rel = by_relation.size();
        const size_t base = static_cast<size_t>(m) / n_rel;
        size_t rem = static_cast<size_t>(m) % n_rel;
        for (auto& [rel, pool] : by_relation) {
            const size_t quota = base + (rem > 0 ? 1 : 0);
            if (rem > 0) --rem;
            if (quota > pool.size()) {
                throw ConfigError("modify: stratified quota " + std::to_string(quota) + " exceeds the " +
                                  std::to_string(pool.size()) + " eligible facts of relation \"" +
                                  b.vocab.word(rel) + "\"");
            }
            auto picks = pick_distinct(pool, quota, rng);
            chosen.insert(chosen.end(), picks.begin(), picks.end());
        }
    }

    // Replacement pools use the unmodified (input) training frequencies.
    const auto counts = train_object_counts(b);
    for (size_t idx : chosen) {
        Fact& f = out.facts[idx];
        const auto& rel_counts = counts.at(f.relation_id);
        std::vector<int32_t> candidates;
        std::vector<double> weights;
        for (const auto& [obj, count] : rel_counts) {
            if (obj == f.object_id) continue;
            candidates.push_back(obj);
            weights.push_back(static_cast<double>(count));
        }
        if (candidates.empty())
            throw ValueError("modify: no replacement candidates for fact " + std::to_string(f.fact_id));
        const int32_t new_object = candidates[rng.weighted_index(weights)];
        const int32_t old_object = f.object_id;
        if (!f.modified) f.original_object_id = old_object;
        f.object_id = new_object;
        f.modified = true;
        for (auto& e : f.evidences) e.gold = new_object;
        out.modified[f.fact_id] = ModifiedEntry{old_object, new_object};
    }
    return out;
}

void split_questions(std::vector<Evidence>& evidences, Rng& rng, int64_t fact_id, std::vector<std::string>& warnings) {
    const size_t n = evidences.size();
    if (n == 0) throw ValueError("split_questions: fact " + std::to_string(fact_id) + " has no evidences");
    if (n == 1) {
        evidences[0].split = Split::Train;
        Evidence copy = evidences[0];
        copy.split = Split::Test;
        evidences.push_back(std::move(copy));
        warnings.push_back("fact " + std::to_string(fact_id) +
                           ": single evidence; synthesized a test copy sharing the train template");
        return;
    }
    const size_t n_test = n > 3 ? 2 : 1;
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    auto picks = pick_distinct(order, n_test, rng);
    for (auto& e : evidences) e.split = Split::Train;
    for (size_t i : picks) evidences[i].split = Split::Test;
}

namespace {

struct RawLine {
    int64_t fact_id;
    std::string subject, relation, object;
    std::vector<std::string> words;
    size_t mask_pos;
    Split split;
    int32_t template_id;
    size_t line_no;
};

RawLine parse_jsonl_line(const std::string& text, size_t line_no) {
    const std::string where = "line " + std::to_string(line_no);
    json j;
    try {
        j = json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(where + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw IoError(where + ": expected a JSON object");
    for (const auto* field : {"fact_id", "subject", "relation", "object", "evidence_text", "split"})
        if (!j.contains(field)) throw IoError(where + ": missing field \"" + std::string(field) + "\"");
    for (auto it = j.begin(); it != j.end(); ++it) {
        static const std::set<std::string> known{"fact_id",       "subject", "relation",   "object",
                                                 "evidence_text", "split",   "template_id"};
        if (!known.count(it.key())) throw IoError(where + ": unknown key \"" + it.key() + "\"");
    }

    RawLine r;
    r.line_no = line_no;
    if (!j.at("fact_id").is_number_integer()) throw IoError(where + ": fact_id must be an integer");
    r.fact_id = j.at("fact_id").get<int64_t>();
    for (const auto* field : {"subject", "relation", "object", "evidence_text", "split"})
        if (!j.at(field).is_string()) throw IoError(where + ": field \"" + std::string(field) + "\" must be a string");
    r.subject = j.at("subject").get<std::string>();
    r.relation = j.at("relation").get<std::string>();
    r.object = j.at("object").get<std::string>();

    const auto object_words = split_whitespace(r.object);
    if (object_words.size() != 1)
        throw IoError(where + ": object \"" + r.object + "\" must be a single token (single-token objects only)");
    r.object = object_words[0];

    r.words = split_whitespace(j.at("evidence_text").get<std::string>());
    if (r.words.empty()) throw IoError(where + ": evidence_text is empty");
    size_t mask_count = 0;
    for (size_t i = 0; i < r.words.size(); ++i) {
        if (r.words[i] == kMaskWord) {
            r.mask_pos = i;
            ++mask_count;
        }
    }
    if (mask_count != 1)
        throw IoError(where + ": evidence_text must contain the literal token \"" + kMaskWord + "\" exactly once (found " +
                      std::to_string(mask_count) + ")");

    const auto split_str = j.at("split").get<std::string>();
    if (split_str == "train")
        r.split = Split::Train;
    else if (split_str == "test")
        r.split = Split::Test;
    else
        throw IoError(where + ": split must be \"train\" or \"test\", got \"" + split_str + "\"");

    r.template_id = -1;
    if (j.contains("template_id")) {
        if (!j.at("template_id").is_number_integer()) throw IoError(where + ": template_id must be an integer");
        r.template_id = j.at("template_id").get<int32_t>();
    }
    return r;
}

// Core importer; the vocab may arrive pre-seeded (from a manifest) so ids
// stay stable across save/load cycles.
Benchmark import_jsonl_core(const std::string& path, Vocab vocab) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open fact file: " + path);

    Benchmark b;
    b.vocab = std::move(vocab);
    b.vocab.intern(kMaskWord);

    std::unordered_map<int64_t, size_t> fact_index;
    std::set<std::pair<int32_t, int32_t>> seen_keys;
    std::string line;
    size_t line_no = 0;
    size_t n_lines = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        ++n_lines;
        RawLine r = parse_jsonl_line(line, line_no);

        const int32_t subject_id = b.vocab.intern(r.subject);
        const int32_t relation_id = b.vocab.intern(r.relation);
        const int32_t object_id = b.vocab.intern(r.object);

        auto it = fact_index.find(r.fact_id);
        if (it == fact_index.end()) {
            if (!seen_keys.insert({subject_id, relation_id}).second) {
                throw IoError("line " + std::to_string(line_no) + ": duplicate fact key (subject \"" + r.subject +
                              "\", relation \"" + r.relation + "\") under a different fact_id");
            }
            Fact f;
            f.fact_id = r.fact_id;
            f.subject_id = subject_id;
            f.relation_id = relation_id;
            f.object_id = object_id;
            f.original_object_id = object_id;
            fact_index.emplace(r.fact_id, b.facts.size());
            b.facts.push_back(std::move(f));
            it = fact_index.find(r.fact_id);
        } else {
            const Fact& f = b.facts[it->second];
            if (f.subject_id != subject_id || f.relation_id != relation_id || f.object_id != object_id) {
                throw IoError("line " + std::to_string(line_no) + ": fact " + std::to_string(r.fact_id) +
                              " disagrees with an earlier line on subject/relation/object");
            }
        }

        Evidence ev;
        ev.split = r.split;
        ev.template_id = r.template_id;
        ev.gold = object_id;
        ev.mask_pos = r.mask_pos;
        for (const auto& w : r.words) ev.tokens.push_back(b.vocab.intern(w));
        b.facts[it->second].evidences.push_back(std::move(ev));
    }
    if (n_lines == 0) throw IoError("fact file has no records: " + path);

    // Repair facts that violate the one-train-one-test minimum using the
    // question-split rule; seeded per fact so imports are deterministic.
    for (auto& f : b.facts) {
        bool has_train = false, has_test = false;
        for (const auto& e : f.evidences) (e.split == Split::Train ? has_train : has_test) = true;
        if (!has_train || !has_test) {
            Rng rng(0x5eedf00dULL ^ static_cast<uint64_t>(f.fact_id) * 0x9e3779b97f4a7c15ULL);
            const size_t before = b.warnings.size();
            split_questions(f.evidences, rng, f.fact_id, b.warnings);
            if (b.warnings.size() == before)
                b.warnings.push_back("fact " + std::to_string(f.fact_id) +
                                     ": evidences lacked a train/test split; re-split via the question rule");
        }
    }
    return b;
}

}  // namespace

Benchmark import_jsonl(const std::string& path) { return import_jsonl_core(path, Vocab{}); }

void export_jsonl(const Benchmark& b, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open fact file for writing: " + path);
    for (const auto& f : b.facts) {
        for (const auto& e : f.evidences) {
            std::string text;
            for (size_t i = 0; i < e.tokens.size(); ++i) {
                if (i) text += ' ';
                text += b.vocab.word(e.tokens[i]);
            }
            json j;
            j["fact_id"] = f.fact_id;
            j["subject"] = b.vocab.word(f.subject_id);
            j["relation"] = b.vocab.word(f.relation_id);
            j["object"] = b.vocab.word(f.object_id);
            j["evidence_text"] = text;
            j["split"] = split_name(e.split);
            if (e.template_id >= 0) j["template_id"] = e.template_id;
            out << j.dump() << '\n';
        }
    }
    if (!out) throw IoError("write failed for fact file: " + path);
}

void to_json(json& j, const GenSpec& s) {
    j = json{{"n_relations", s.n_relations},
             {"subjects_per_relation", s.subjects_per_relation},
             {"objects_per_relation", s.objects_per_relation},
             {"templates_train_per_relation", s.templates_train_per_relation},
             {"templates_test_per_relation", s.templates_test_per_relation},
             {"zipf_exponent", s.zipf_exponent},
             {"seed", s.seed}};
}

GenSpec genspec_from_json(const json& j, const std::string& where) {
    require_object(j, where);
    reject_unknown_keys(j,
                        {"n_relations", "subjects_per_relation", "objects_per_relation", "templates_train_per_relation",
                         "templates_test_per_relation", "zipf_exponent", "seed"},
                        where);
    GenSpec s;
    s.n_relations = get_or(j, "n_relations", s.n_relations, where);
    s.subjects_per_relation = get_or(j, "subjects_per_relation", s.subjects_per_relation, where);
    s.objects_per_relation = get_or(j, "objects_per_relation", s.objects_per_relation, where);
    s.templates_train_per_relation = get_or(j, "templates_train_per_relation", s.templates_train_per_relation, where);
    s.templates_test_per_relation = get_or(j, "templates_test_per_relation", s.templates_test_per_relation, where);
    s.zipf_exponent = get_or(j, "zipf_exponent", s.zipf_exponent, where);
    s.seed = get_or(j, "seed", s.seed, where);
    s.validate();
    return s;
}

void save_benchmark_dir(const Benchmark& b, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create benchmark directory " + dir + ": " + ec.message());
    export_jsonl(b, dir + "/benchmark.jsonl");

    json manifest;
    manifest["seed"] = b.has_spec ? b.spec.seed : 0;
    if (b.has_spec) to_json(manifest["genspec"], b.spec);
    json mods = json::array();
    for (const auto& [fact_id, entry] : b.modified) {
        mods.push_back(json{{"fact_id", fact_id},
                            {"old_object", b.vocab.word(entry.old_object_id)},
                            {"new_object", b.vocab.word(entry.new_object_id)}});
    }
    manifest["modified"] = std::move(mods);
    manifest["vocab"] = b.vocab.words();
    manifest["warnings"] = b.warnings;

    std::ofstream out(dir + "/manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write manifest in " + dir);
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("write failed for manifest in " + dir);
}

Benchmark load_benchmark_dir(const std::string& dir) {
    const std::string manifest_path = dir + "/manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot open benchmark manifest: " + manifest_path);
    std::stringstream buf;
    buf << mf.rdbuf();
    json manifest;
    try {
        manifest = json::parse(buf.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("corrupt benchmark manifest " + manifest_path + ": " + e.what());
    }

    Vocab vocab;
    if (manifest.contains("vocab"))
        for (const auto& w : manifest.at("vocab")) vocab.intern(w.get<std::string>());

    Benchmark b = import_jsonl_core(dir + "/benchmark.jsonl", std::move(vocab));
    if (manifest.contains("genspec")) {
        b.spec = genspec_from_json(manifest.at("genspec"), "manifest.genspec");
        b.has_spec = true;
    }
    if (manifest.contains("warnings")) b.warnings = manifest.at("warnings").get<std::vector<std::string>>();

    if (manifest.contains("modified")) {
        for (const auto& entry : manifest.at("modified")) {
            const int64_t fact_id = entry.at("fact_id").get<int64_t>();
            const int32_t old_id = b.vocab.id_of(entry.at("old_object").get<std::string>());
            const int32_t new_id = b.vocab.id_of(entry.at("new_object").get<std::string>());
            bool found = false;
            for (auto& f : b.facts) {
                if (f.fact_id != fact_id) continue;
                if (f.object_id != new_id)
                    throw IoError("manifest modification for fact " + std::to_string(fact_id) +
                                  " disagrees with the fact file object");
                f.modified = true;
                f.original_object_id = old_id;
                found = true;
                break;
            }
            if (!found) throw IoError("manifest modification references unknown fact " + std::to_string(fact_id));
            b.modified[fact_id] = ModifiedEntry{old_id, new_id};
        }
    }
    return b;
}

ExamplePools build_pools(const Benchmark& b) {
    ExamplePools pools;
    for (const auto& f : b.facts) {
        for (const auto& e : f.evidences) {
            TokenizedExample ex{e.tokens, e.mask_pos, e.gold};
            if (e.split == Split::Train)
                (f.modified ? pools.modified_train : pools.unmodified_train).push_back(std::move(ex));
            else
                (f.modified ? pools.modified_test : pools.unmodified_test).push_back(std::move(ex));
        }
    }
    return pools;
}

}  // namespace felab
