#include "phyadapt/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "phyadapt/errors.hpp"

namespace phyadapt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace postags {

namespace {
constexpr const char* kNames[kCount] = {"NOUN", "VERB", "ADJ", "DET", "ADV", "ADP", "NEG"};
}

const char* name(int tag) {
    if (tag < 0 || tag >= kCount) throw ConfigError("unknown POS tag id " + std::to_string(tag));
    return kNames[tag];
}

int from_name(const std::string& n) {
    for (int i = 0; i < kCount; ++i) {
        if (n == kNames[i]) return i;
    }
    throw ConfigError("unknown POS tag name '" + n + "'");
}

}  // namespace postags

void LanguageCorpus::recount_tokens() {
    token_count = 0;
    for (const auto& s : sentences) token_count += static_cast<int64_t>(s.tokens.size());
}

// ---------------------------------------------------------------------------
// Synthetic family generator

namespace {

// A deliberately small phoneme space: sound change then produces both
// cognates and cross-language homographs (false friends), so forms are
// only interpretable relative to a language, as with real related lects.
// Content words draw from a tighter inventory than function words, which
// concentrates the false-friend pressure on content vocabulary while
// function-word anchors stay mostly unambiguous.
constexpr const char* kContentConsonants = "ptkbdm";
constexpr int kNumContentConsonants = 6;
constexpr const char* kContentVowels = "aeo";
constexpr int kNumContentVowels = 3;
constexpr const char* kFunctionConsonants = "ptkbdmns";
constexpr int kNumFunctionConsonants = 8;
constexpr const char* kFunctionVowels = "aeio";
constexpr int kNumFunctionVowels = 4;

struct Lexeme {
    int tag;
    std::string form;
};
using Lexicon = std::vector<Lexeme>;

// Function words are single syllables (short, mutation-stable, shared
// anchors across related languages); content words run 2-3 syllables.
bool is_function_tag(int tag) {
    return tag == postags::kDet || tag == postags::kAdp || tag == postags::kNeg;
}

std::string synth_word(Rng& rng, int tag) {
    const bool fn = is_function_tag(tag);
    const int syllables = fn ? 1 : 2;
    std::string w;
    for (int s = 0; s < syllables; ++s) {
        w += fn ? kFunctionConsonants[rng.uniform_int(kNumFunctionConsonants)]
                : kContentConsonants[rng.uniform_int(kNumContentConsonants)];
        w += fn ? kFunctionVowels[rng.uniform_int(kNumFunctionVowels)]
                : kContentVowels[rng.uniform_int(kNumContentVowels)];
    }
    return w;
}

Lexicon make_proto_lexicon(int size, Rng& rng) {
    if (size < 20) throw ConfigError("proto_lexicon_size must be at least 20");
    // Category budget; remainder becomes nouns.
    const int det = std::max(2, size / 20);
    const int adp = std::max(2, size / 16);
    const int adv = std::max(2, size / 12);
    const int adj = std::max(3, size / 8);
    const int verb = std::max(4, size / 5);
    const int neg = 1;
    const int noun = size - det - adp - adv - adj - verb - neg;
    std::vector<std::pair<int, int>> plan = {
        {postags::kNoun, noun}, {postags::kVerb, verb}, {postags::kAdj, adj},
        {postags::kDet, det},   {postags::kAdv, adv},   {postags::kAdp, adp},
        {postags::kNeg, neg}};
    Lexicon lex;
    std::set<std::string> seen;
    for (auto [tag, count] : plan) {
        for (int i = 0; i < count; ++i) {
            std::string w = synth_word(rng, tag);
            int tries = 0;
            while (seen.count(w)) {
                w = tries++ < 50 ? synth_word(rng, tag)
                       : w + kContentVowels[rng.uniform_int(kNumContentVowels)];
            }
            seen.insert(w);
            lex.push_back({tag, w});
        }
    }
    return lex;
}

bool is_vowel(char c) {
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

Lexicon mutate_lexicon(const Lexicon& parent, double rate, Rng& rng) {
    Lexicon child = parent;
    for (auto& lexeme : child) {
        // Function words resist sound change; content words carry most
        // of the divergence between related languages.
        const double eff = is_function_tag(lexeme.tag) ? 0.3 * rate : rate;
        for (char& c : lexeme.form) {
            if (!rng.bernoulli(eff)) continue;
            if (is_function_tag(lexeme.tag)) {
                c = is_vowel(c) ? kFunctionVowels[rng.uniform_int(kNumFunctionVowels)]
                                : kFunctionConsonants[rng.uniform_int(kNumFunctionConsonants)];
            } else {
                c = is_vowel(c) ? kContentVowels[rng.uniform_int(kNumContentVowels)]
                                : kContentConsonants[rng.uniform_int(kNumContentConsonants)];
            }
        }
    }
    return child;
}

struct WordOrder {
    bool verb_final;
    bool adj_before_noun;
    bool adp_before;
};

WordOrder sample_order(Rng& rng) {
    return {rng.bernoulli(0.5), rng.bernoulli(0.5), rng.bernoulli(0.5)};
}

WordOrder inherit_order(const WordOrder& parent, double flip_prob, Rng& rng) {
    WordOrder o = parent;
    if (rng.bernoulli(flip_prob)) o.verb_final = !o.verb_final;
    if (rng.bernoulli(flip_prob)) o.adj_before_noun = !o.adj_before_noun;
    if (rng.bernoulli(flip_prob)) o.adp_before = !o.adp_before;
    return o;
}

enum Role {
    kRoleVerb,
    kRoleSubj,
    kRoleObj,
    kRoleObl,
    kRoleDet,
    kRoleAdj,
    kRoleAdv,      // late placement
    kRoleAdvEarly, // sentence-initial placement
    kRoleAdp,
    kRoleNeg
};

struct SynNode {
    int tag;
    int lex;  // index into the language lexicon
    int role;
    std::vector<SynNode> deps;
};

struct CategoryIndex {
    std::vector<int> by_tag[postags::kCount];
    explicit CategoryIndex(const Lexicon& lex) {
        for (size_t i = 0; i < lex.size(); ++i)
            by_tag[lex[i].tag].push_back(static_cast<int>(i));
    }
    int pick(int tag, Rng& rng) const {
        const auto& v = by_tag[tag];
        return v[static_cast<size_t>(rng.uniform_int(static_cast<int>(v.size())))];
    }
};

// Noun phrases allow bare "nominal" adjectives (noun elided, the
// adjective heads the phrase) and optional determiners, so surface
// position alone does not determine the category of a slot.
SynNode make_np(const CategoryIndex& cat, Rng& rng, int role, bool force_adj = false) {
    if (!force_adj && rng.bernoulli(0.08)) {
        return SynNode{postags::kAdj, cat.pick(postags::kAdj, rng), role, {}};
    }
    SynNode np{postags::kNoun, cat.pick(postags::kNoun, rng), role, {}};
    if (rng.bernoulli(0.45)) {
        np.deps.push_back({postags::kDet, cat.pick(postags::kDet, rng), kRoleDet, {}});
    }
    int n_adj = 0;
    if (force_adj || rng.bernoulli(0.5)) n_adj = rng.bernoulli(0.2) ? 2 : 1;
    for (int i = 0; i < n_adj; ++i) {
        np.deps.push_back({postags::kAdj, cat.pick(postags::kAdj, rng), kRoleAdj, {}});
    }
    // Obliques carry an adposition only sometimes; bare obliques look
    // like objects and need lexical knowledge to attach.
    if (role == kRoleObl && rng.bernoulli(0.55)) {
        np.deps.push_back({postags::kAdp, cat.pick(postags::kAdp, rng), kRoleAdp, {}});
    }
    return np;
}

SynNode make_clause(const CategoryIndex& cat, Rng& rng, bool force_modifier = false) {
    SynNode verb{postags::kVerb, cat.pick(postags::kVerb, rng), kRoleVerb, {}};
    // Pro-drop: the subject slot is not guaranteed.
    if (force_modifier || rng.bernoulli(0.8)) {
        verb.deps.push_back(make_np(cat, rng, kRoleSubj, force_modifier));
    }
    if (rng.bernoulli(0.55)) verb.deps.push_back(make_np(cat, rng, kRoleObj));
    if (rng.bernoulli(0.3)) verb.deps.push_back(make_np(cat, rng, kRoleObl));
    if (rng.bernoulli(0.35) || force_modifier) {
        const int where = rng.bernoulli(0.5) ? kRoleAdv : kRoleAdvEarly;
        verb.deps.push_back({postags::kAdv, cat.pick(postags::kAdv, rng), where, {}});
    }
    if (rng.bernoulli(0.15)) {
        verb.deps.push_back({postags::kNeg, cat.pick(postags::kNeg, rng), kRoleNeg, {}});
    }
    return verb;
}

// Linearized word: (node, head node or nullptr for the clause root).
using Emission = std::vector<std::pair<const SynNode*, const SynNode*>>;

void emit_np(const SynNode& np, const SynNode* attach_to, const WordOrder& order, Emission& out) {
    const SynNode* det = nullptr;
    const SynNode* adj = nullptr;
    const SynNode* adp = nullptr;
    for (const auto& d : np.deps) {
        if (d.role == kRoleDet) det = &d;
        if (d.role == kRoleAdj) adj = &d;
        if (d.role == kRoleAdp) adp = &d;
    }
    if (adp && order.adp_before) out.push_back({adp, &np});
    if (det) out.push_back({det, &np});
    if (adj && order.adj_before_noun) out.push_back({adj, &np});
    out.push_back({&np, attach_to});
    if (adj && !order.adj_before_noun) out.push_back({adj, &np});
    if (adp && !order.adp_before) out.push_back({adp, &np});
}

Emission emit_clause(const SynNode& verb, const WordOrder& order) {
    const SynNode* subj = nullptr;
    const SynNode* obj = nullptr;
    const SynNode* obl = nullptr;
    const SynNode* adv_early = nullptr;
    const SynNode* adv_late = nullptr;
    const SynNode* neg = nullptr;
    for (const auto& d : verb.deps) {
        if (d.role == kRoleSubj) subj = &d;
        if (d.role == kRoleObj) obj = &d;
        if (d.role == kRoleObl) obl = &d;
        if (d.role == kRoleAdv) adv_late = &d;
        if (d.role == kRoleAdvEarly) adv_early = &d;
        if (d.role == kRoleNeg) neg = &d;
    }
    Emission out;
    if (adv_early) out.push_back({adv_early, &verb});
    if (subj) emit_np(*subj, &verb, order, out);
    if (order.verb_final) {
        if (obj) emit_np(*obj, &verb, order, out);
        if (obl) emit_np(*obl, &verb, order, out);
        if (neg) out.push_back({neg, &verb});
        out.push_back({&verb, nullptr});
        if (adv_late) out.push_back({adv_late, &verb});
    } else {
        if (neg) out.push_back({neg, &verb});
        out.push_back({&verb, nullptr});
        if (obj) emit_np(*obj, &verb, order, out);
        if (obl) emit_np(*obl, &verb, order, out);
        if (adv_late) out.push_back({adv_late, &verb});
    }
    return out;
}

Sentence linearize(const SynNode& verb, const WordOrder& order, const Lexicon& lex) {
    const Emission emission = emit_clause(verb, order);
    std::map<const SynNode*, int> position;  // 1-based
    for (size_t i = 0; i < emission.size(); ++i) {
        position[emission[i].first] = static_cast<int>(i) + 1;
    }
    Sentence s;
    for (const auto& [node, head] : emission) {
        s.tokens.push_back(lex[static_cast<size_t>(node->lex)].form);
        s.pos.push_back(node->tag);
        s.heads.push_back(head == nullptr ? 0 : position.at(head));
    }
    return s;
}

// Subset reading: modifiers and oblique phrases removed.
SynNode strip_modifiers(const SynNode& verb) {
    SynNode out = verb;
    std::vector<SynNode> kept;
    for (auto& d : out.deps) {
        if (d.role == kRoleAdv || d.role == kRoleAdvEarly || d.role == kRoleObl ||
            d.role == kRoleNeg)
            continue;
        SynNode nd = d;
        std::vector<SynNode> nd_kept;
        for (auto& g : nd.deps) {
            if (g.role == kRoleAdj) continue;
            nd_kept.push_back(g);
        }
        nd.deps = nd_kept;
        kept.push_back(nd);
    }
    out.deps = kept;
    return out;
}

SynNode toggle_negation(const SynNode& verb, const CategoryIndex& cat, Rng& rng) {
    SynNode out = verb;
    auto it = std::find_if(out.deps.begin(), out.deps.end(),
                           [](const SynNode& d) { return d.role == kRoleNeg; });
    if (it != out.deps.end()) {
        out.deps.erase(it);
    } else {
        out.deps.push_back({postags::kNeg, cat.pick(postags::kNeg, rng), kRoleNeg, {}});
    }
    return out;
}

}  // namespace

double FamilyGenSpec::edge_rate(const std::string& child_node_id) const {
    auto it = edge_rate_overrides.find(child_node_id);
    return it == edge_rate_overrides.end() ? edge_mutation_rate : it->second;
}

std::map<std::string, LanguageCorpus> generate_family(const FamilyGenSpec& spec, uint64_t seed) {
    if (spec.edge_mutation_rate < 0.0 || spec.edge_mutation_rate > 1.0) {
        throw ConfigError("edge_mutation_rate must be in [0,1]");
    }
    for (const auto& [node, rate] : spec.edge_rate_overrides) {
        if (rate < 0.0 || rate > 1.0) {
            throw ConfigError("edge rate override for '" + node + "' must be in [0,1]");
        }
    }
    const auto violations = validate(spec.tree);
    if (!violations.empty()) throw ValidationError("generator tree invalid: " + violations.front());

    // Evolve lexicon and word order down the tree, depth first.
    std::map<std::string, Lexicon> lex_at;
    std::map<std::string, WordOrder> order_at;
    {
        Rng proto_rng(derive_seed(seed, "proto-lexicon"));
        lex_at[spec.tree.root_id] = make_proto_lexicon(spec.proto_lexicon_size, proto_rng);
        Rng order_rng(derive_seed(seed, "order-root"));
        WordOrder root = sample_order(order_rng);
        if (spec.root_verb_final) root.verb_final = *spec.root_verb_final;
        if (spec.root_adj_before_noun) root.adj_before_noun = *spec.root_adj_before_noun;
        if (spec.root_adp_before) root.adp_before = *spec.root_adp_before;
        order_at[spec.tree.root_id] = root;
    }
    std::vector<std::string> stack{spec.tree.root_id};
    while (!stack.empty()) {
        const std::string id = stack.back();
        stack.pop_back();
        const TreeNode& node = spec.tree.at(id);
        for (const std::string& child : node.children) {
            Rng lex_rng(derive_seed(seed, "lex:" + child));
            lex_at[child] = mutate_lexicon(lex_at[id], spec.edge_rate(child), lex_rng);
            Rng ord_rng(derive_seed(seed, "order:" + child));
            order_at[child] = inherit_order(order_at[id], spec.word_order_flip_prob, ord_rng);
            stack.push_back(child);
        }
    }

    std::map<std::string, LanguageCorpus> out;
    for (const auto& [iso, count] : spec.sentence_counts) {
        if (!spec.tree.has_language(iso)) {
            throw ConfigError("sentence_counts lists '" + iso + "' which is not in the tree");
        }
        const std::string leaf_id = spec.tree.leaf_by_iso.at(iso);
        const Lexicon& lex = lex_at.at(leaf_id);
        const WordOrder& order = order_at.at(leaf_id);
        const CategoryIndex cat(lex);

        LanguageCorpus corpus;
        corpus.iso = iso;
        for (const auto& lexeme : lex) corpus.lexicon.push_back(lexeme.form);

        Rng train_rng(derive_seed(seed, "sent:" + iso));
        for (int i = 0; i < count; ++i) {
            corpus.sentences.push_back(linearize(make_clause(cat, train_rng), order, lex));
        }
        auto eit = spec.eval_sentence_counts.find(iso);
        const int eval_count = eit != spec.eval_sentence_counts.end() ? eit->second : spec.eval_default;
        Rng eval_rng(derive_seed(seed, "sent-eval:" + iso));
        for (int i = 0; i < eval_count; ++i) {
            corpus.eval_sentences.push_back(linearize(make_clause(cat, eval_rng), order, lex));
        }
        auto nit = spec.nli_counts.find(iso);
        if (nit != spec.nli_counts.end()) {
            auto gen_pairs = [&](int n, Rng& nli_rng, std::vector<NliExample>& dst) {
                for (int i = 0; i < n; ++i) {
                    const int label = i % 3;
                    const SynNode premise = make_clause(cat, nli_rng, /*force_modifier=*/label == 0);
                    SynNode hyp;
                    switch (label) {
                        case 0: hyp = strip_modifiers(premise); break;
                        case 1: hyp = make_clause(cat, nli_rng); break;
                        default: hyp = toggle_negation(premise, cat, nli_rng); break;
                    }
                    NliExample ex;
                    ex.premise = linearize(premise, order, lex).tokens;
                    ex.hypothesis = linearize(hyp, order, lex).tokens;
                    ex.label = label;
                    dst.push_back(std::move(ex));
                }
            };
            Rng nli_rng(derive_seed(seed, "nli:" + iso));
            gen_pairs(nit->second, nli_rng, corpus.nli_examples);
            Rng nli_eval_rng(derive_seed(seed, "nli-eval:" + iso));
            gen_pairs(spec.nli_eval_default, nli_eval_rng, corpus.nli_eval);
        }
        corpus.recount_tokens();
        json prov{{"generator", "phyadapt-family-v1"},
                  {"seed", seed},
                  {"edge_mutation_rate", spec.edge_mutation_rate},
                  {"word_order", {{"verb_final", order.verb_final},
                                  {"adj_before_noun", order.adj_before_noun},
                                  {"adp_before", order.adp_before}}}};
        corpus.provenance = prov.dump();
        out.emplace(iso, std::move(corpus));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Generator spec I/O

FamilyGenSpec parse_genspec(const std::string& json_text, const std::string& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("generator spec is not valid JSON: ") + e.what());
    }
    FamilyGenSpec spec;
    if (doc.contains("tree") && doc["tree"].is_object()) {
        spec.tree = parse_tree(doc["tree"].dump());
    } else if (doc.contains("tree_file")) {
        fs::path p = doc["tree_file"].get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
        spec.tree = load_tree(p.string());
    } else {
        throw ValidationError("generator spec needs 'tree' (inline) or 'tree_file'");
    }
    spec.proto_lexicon_size = doc.value("proto_lexicon_size", spec.proto_lexicon_size);
    spec.edge_mutation_rate = doc.value("edge_mutation_rate", spec.edge_mutation_rate);
    if (doc.contains("edge_mutation_overrides")) {
        for (auto& [node, rate] : doc["edge_mutation_overrides"].items()) {
            spec.edge_rate_overrides[node] = rate.get<double>();
        }
    }
    spec.word_order_flip_prob = doc.value("word_order_flip_prob", spec.word_order_flip_prob);
    if (doc.contains("root_word_order")) {
        const auto& o = doc["root_word_order"];
        if (o.contains("verb_final")) spec.root_verb_final = o["verb_final"].get<bool>();
        if (o.contains("adj_before_noun")) spec.root_adj_before_noun = o["adj_before_noun"].get<bool>();
        if (o.contains("adp_before")) spec.root_adp_before = o["adp_before"].get<bool>();
    }
    spec.eval_default = doc.value("eval_sentence_count", spec.eval_default);
    spec.nli_eval_default = doc.value("nli_eval_count", spec.nli_eval_default);
    if (doc.contains("sentence_counts")) {
        for (auto& [iso, n] : doc["sentence_counts"].items())
            spec.sentence_counts[iso] = n.get<int>();
    }
    if (doc.contains("eval_sentence_counts")) {
        for (auto& [iso, n] : doc["eval_sentence_counts"].items())
            spec.eval_sentence_counts[iso] = n.get<int>();
    }
    if (doc.contains("nli_counts")) {
        for (auto& [iso, n] : doc["nli_counts"].items()) spec.nli_counts[iso] = n.get<int>();
    }
    if (spec.sentence_counts.empty()) {
        throw ValidationError("generator spec needs a non-empty 'sentence_counts' map");
    }
    return spec;
}

FamilyGenSpec load_genspec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open generator spec '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_genspec(buf.str(), fs::path(path).parent_path().string());
}

std::string serialize_genspec(const FamilyGenSpec& spec) {
    json root_order = json::object();
    if (spec.root_verb_final) root_order["verb_final"] = *spec.root_verb_final;
    if (spec.root_adj_before_noun) root_order["adj_before_noun"] = *spec.root_adj_before_noun;
    if (spec.root_adp_before) root_order["adp_before"] = *spec.root_adp_before;
    json doc{{"format", "phyadapt-genspec-v1"},
             {"tree", json::parse(serialize_tree(spec.tree))},
             {"proto_lexicon_size", spec.proto_lexicon_size},
             {"edge_mutation_rate", spec.edge_mutation_rate},
             {"edge_mutation_overrides", spec.edge_rate_overrides},
             {"word_order_flip_prob", spec.word_order_flip_prob},
             {"root_word_order", root_order},
             {"eval_sentence_count", spec.eval_default},
             {"nli_eval_count", spec.nli_eval_default},
             {"sentence_counts", spec.sentence_counts},
             {"eval_sentence_counts", spec.eval_sentence_counts},
             {"nli_counts", spec.nli_counts}};
    return doc.dump(2);
}

// ---------------------------------------------------------------------------
// Vocabulary

int Vocab::id(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
}

Vocab build_vocab(const std::vector<const LanguageCorpus*>& corpora, int min_freq) {
    if (corpora.empty()) throw ConfigError("build_vocab: no corpora given");
    std::map<std::string, int64_t> counts;
    for (const auto* c : corpora) {
        for (const auto& s : c->sentences) {
            for (const auto& t : s.tokens) ++counts[t];
        }
    }
    std::vector<std::pair<std::string, int64_t>> items(counts.begin(), counts.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    v.id_to_token = {"[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]"};
    for (int i = 0; i < Vocab::kNumReserved; ++i) v.token_to_id[v.id_to_token[static_cast<size_t>(i)]] = i;
    for (const auto& [tok, n] : items) {
        if (n < min_freq) continue;
        v.token_to_id[tok] = v.size();
        v.id_to_token.push_back(tok);
    }
    return v;
}

double vocab_coverage(const Vocab& vocab, const LanguageCorpus& corpus) {
    int64_t total = 0, known = 0;
    for (const auto& s : corpus.sentences) {
        for (const auto& t : s.tokens) {
            ++total;
            if (vocab.id(t) != Vocab::kUnk) ++known;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(known) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Upsampling and batching

std::map<std::string, double> upsample_factors(
    const std::map<std::string, LanguageCorpus>& corpora,
    const std::set<std::string>& high_resource) {
    int64_t max_tc = 0;
    for (const auto& [iso, c] : corpora) {
        if (high_resource.count(iso)) continue;
        if (c.token_count <= 0) {
            throw ConfigError("upsample_factors: language '" + iso + "' has zero token count");
        }
        max_tc = std::max(max_tc, c.token_count);
    }
    std::map<std::string, double> factors;
    for (const auto& [iso, c] : corpora) {
        factors[iso] = (high_resource.count(iso) || max_tc == 0)
                           ? 1.0
                           : static_cast<double>(max_tc) / static_cast<double>(c.token_count);
    }
    return factors;
}

std::vector<int> encode_tokens(const Vocab& vocab, const std::vector<std::string>& tokens) {
    std::vector<int> ids;
    ids.reserve(tokens.size() + 2);
    ids.push_back(Vocab::kCls);
    for (const auto& t : tokens) ids.push_back(vocab.id(t));
    ids.push_back(Vocab::kSep);
    return ids;
}

namespace {

TokenBatch batch_from_ids(const std::vector<std::vector<int>>& rows, const std::string& iso) {
    TokenBatch b;
    b.batch = static_cast<int>(rows.size());
    b.seq = 0;
    for (const auto& r : rows) b.seq = std::max(b.seq, static_cast<int>(r.size()));
    b.ids.assign(static_cast<size_t>(b.batch) * b.seq, Vocab::kPad);
    b.attn.assign(static_cast<size_t>(b.batch) * b.seq, 0);
    b.iso = iso;
    for (int i = 0; i < b.batch; ++i) {
        const auto& r = rows[static_cast<size_t>(i)];
        for (size_t j = 0; j < r.size(); ++j) {
            b.ids[static_cast<size_t>(i) * b.seq + j] = r[j];
            b.attn[static_cast<size_t>(i) * b.seq + j] = 1;
        }
    }
    return b;
}

std::vector<int> clipped_encode(const Vocab& vocab, const std::vector<std::string>& tokens,
                                int max_seq_len) {
    auto ids = encode_tokens(vocab, tokens);
    if (static_cast<int>(ids.size()) > max_seq_len) {
        ids.resize(static_cast<size_t>(max_seq_len) - 1);
        ids.push_back(Vocab::kSep);
    }
    return ids;
}

}  // namespace

BatchStream::BatchStream(const std::map<std::string, LanguageCorpus>& corpora,
                         const std::map<std::string, double>& factors, int batch_size,
                         int max_seq_len, const Vocab& vocab, uint64_t seed)
    : batch_size_(batch_size), max_seq_len_(max_seq_len), vocab_(&vocab),
      rng_(derive_seed(seed, "batch-stream")) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    for (const auto& [iso, corpus] : corpora) {
        if (corpus.sentences.empty()) continue;
        auto fit = factors.find(iso);
        const double factor = fit == factors.end() ? 1.0 : fit->second;
        isos_.push_back(iso);
        corpora_.push_back(&corpus);
        weights_.push_back(factor * static_cast<double>(corpus.token_count));
    }
    if (isos_.empty()) throw ConfigError("batch stream over empty corpora");
}

TokenBatch BatchStream::next() {
    const int lang = rng_.weighted_index(weights_);
    const LanguageCorpus& corpus = *corpora_[static_cast<size_t>(lang)];
    std::vector<std::vector<int>> rows;
    rows.reserve(static_cast<size_t>(batch_size_));
    for (int i = 0; i < batch_size_; ++i) {
        const int idx = rng_.uniform_int(static_cast<int>(corpus.sentences.size()));
        rows.push_back(clipped_encode(*vocab_, corpus.sentences[static_cast<size_t>(idx)].tokens,
                                      max_seq_len_));
    }
    return batch_from_ids(rows, isos_[static_cast<size_t>(lang)]);
}

TokenBatch make_batch(const std::vector<const Sentence*>& sentences, const Vocab& vocab,
                      int max_seq_len, const std::string& iso) {
    if (sentences.empty()) throw ConfigError("make_batch over zero sentences");
    std::vector<std::vector<int>> rows;
    rows.reserve(sentences.size());
    for (const auto* s : sentences) rows.push_back(clipped_encode(vocab, s->tokens, max_seq_len));
    return batch_from_ids(rows, iso);
}

void apply_mlm_mask(TokenBatch& batch, double mask_prob, const Vocab& vocab, Rng& rng) {
    if (mask_prob <= 0.0 || mask_prob >= 1.0) {
        throw ConfigError("mask_prob must be in (0,1)");
    }
    batch.mlm_labels.assign(batch.ids.size(), -1);
    const int vocab_words = vocab.size() - Vocab::kNumReserved;
    for (size_t i = 0; i < batch.ids.size(); ++i) {
        const int id = batch.ids[i];
        if (Vocab::is_structural(id)) continue;
        if (!rng.bernoulli(mask_prob)) continue;
        batch.mlm_labels[i] = id;
        const double r = rng.uniform();
        if (r < 0.8) {
            batch.ids[i] = Vocab::kMask;
        } else if (r < 0.9 && vocab_words > 0) {
            batch.ids[i] = Vocab::kNumReserved + rng.uniform_int(vocab_words);
        }  // else: keep the original token
    }
}

TokenBatch apply_mlm_mask(const TokenBatch& batch, double mask_prob, const Vocab& vocab,
                          uint64_t seed) {
    TokenBatch out = batch;
    Rng rng(derive_seed(seed, "mlm-mask"));
    apply_mlm_mask(out, mask_prob, vocab, rng);
    return out;
}

// ---------------------------------------------------------------------------
// JSONL persistence

namespace {

json sentence_to_json(const std::string& iso, const Sentence& s) {
    json line{{"iso", iso}, {"tokens", s.tokens}};
    if (!s.pos.empty()) {
        std::vector<std::string> names;
        names.reserve(s.pos.size());
        for (int t : s.pos) names.push_back(postags::name(t));
        line["pos"] = names;
    }
    if (!s.heads.empty()) line["heads"] = s.heads;
    return line;
}

Sentence sentence_from_json(const json& line) {
    Sentence s;
    s.tokens = line.at("tokens").get<std::vector<std::string>>();
    if (line.contains("pos")) {
        for (const auto& n : line["pos"]) s.pos.push_back(postags::from_name(n.get<std::string>()));
    }
    if (line.contains("heads")) s.heads = line["heads"].get<std::vector<int>>();
    return s;
}

void write_sentences(const fs::path& path, const std::string& iso,
                     const std::vector<Sentence>& sentences, const std::string& split,
                     const std::string& provenance, const std::vector<std::string>& lexicon) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    json header{{"format", "phyadapt-corpus-jsonl-v1"}, {"iso", iso}, {"split", split}};
    if (!provenance.empty()) header["provenance"] = json::parse(provenance);
    if (!lexicon.empty()) header["lexicon"] = lexicon;
    out << header.dump() << "\n";
    for (const auto& s : sentences) out << sentence_to_json(iso, s).dump() << "\n";
}

void write_nli(const fs::path& path, const std::string& iso,
               const std::vector<NliExample>& examples, const std::string& split) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << json{{"format", "phyadapt-nli-jsonl-v1"}, {"iso", iso}, {"split", split}}.dump() << "\n";
    for (const auto& e : examples) {
        out << json{{"iso", iso},
                    {"premise_tokens", e.premise},
                    {"hypothesis_tokens", e.hypothesis},
                    {"label", e.label}}
                   .dump()
            << "\n";
    }
}

std::vector<json> read_jsonl(const fs::path& path, const std::string& expect_format,
                             json* header_out) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty JSONL file '" + path.string() + "'");
    json header = json::parse(line);
    if (header.value("format", "") != expect_format) {
        throw ValidationError("file '" + path.string() + "' has format '" +
                              header.value("format", "<missing>") + "', expected '" +
                              expect_format + "'");
    }
    if (header_out) *header_out = header;
    std::vector<json> lines;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        lines.push_back(json::parse(line));
    }
    return lines;
}

}  // namespace

void save_corpora(const std::string& dir, const std::map<std::string, LanguageCorpus>& corpora,
                  const std::string& manifest_echo) {
    fs::create_directories(dir);
    json langs = json::array();
    json token_counts = json::object();
    for (const auto& [iso, c] : corpora) {
        write_sentences(fs::path(dir) / ("corpus_" + iso + ".jsonl"), iso, c.sentences, "train",
                        c.provenance, c.lexicon);
        write_sentences(fs::path(dir) / ("eval_" + iso + ".jsonl"), iso, c.eval_sentences, "eval",
                        "", {});
        if (!c.nli_examples.empty() || !c.nli_eval.empty()) {
            write_nli(fs::path(dir) / ("nli_" + iso + ".jsonl"), iso, c.nli_examples, "train");
            write_nli(fs::path(dir) / ("nli_eval_" + iso + ".jsonl"), iso, c.nli_eval, "eval");
        }
        langs.push_back(iso);
        token_counts[iso] = c.token_count;
    }
    json manifest{{"format", "phyadapt-corpusdir-v1"},
                  {"languages", langs},
                  {"token_counts", token_counts}};
    if (!manifest_echo.empty()) manifest["echo"] = json::parse(manifest_echo);
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write corpus manifest under '" + dir + "'");
    out << manifest.dump(2) << "\n";
}

std::map<std::string, LanguageCorpus> load_corpora(const std::string& dir) {
    std::ifstream min(fs::path(dir) / "manifest.json");
    if (!min) throw IoError("no corpus manifest in '" + dir + "'");
    json manifest = json::parse(min);
    if (manifest.value("format", "") != "phyadapt-corpusdir-v1") {
        throw ValidationError("unexpected corpus directory format in '" + dir + "'");
    }
    std::map<std::string, LanguageCorpus> out;
    for (const auto& iso_j : manifest["languages"]) {
        const std::string iso = iso_j.get<std::string>();
        LanguageCorpus c;
        c.iso = iso;
        json header;
        for (const auto& line :
             read_jsonl(fs::path(dir) / ("corpus_" + iso + ".jsonl"), "phyadapt-corpus-jsonl-v1",
                        &header)) {
            c.sentences.push_back(sentence_from_json(line));
        }
        if (header.contains("provenance")) c.provenance = header["provenance"].dump();
        if (header.contains("lexicon")) c.lexicon = header["lexicon"].get<std::vector<std::string>>();
        const fs::path eval_path = fs::path(dir) / ("eval_" + iso + ".jsonl");
        if (fs::exists(eval_path)) {
            for (const auto& line : read_jsonl(eval_path, "phyadapt-corpus-jsonl-v1", nullptr)) {
                c.eval_sentences.push_back(sentence_from_json(line));
            }
        }
        const fs::path nli_path = fs::path(dir) / ("nli_" + iso + ".jsonl");
        if (fs::exists(nli_path)) {
            auto read_pairs = [](const fs::path& p, std::vector<NliExample>& dst) {
                for (const auto& line : read_jsonl(p, "phyadapt-nli-jsonl-v1", nullptr)) {
                    NliExample e;
                    e.premise = line.at("premise_tokens").get<std::vector<std::string>>();
                    e.hypothesis = line.at("hypothesis_tokens").get<std::vector<std::string>>();
                    e.label = line.at("label").get<int>();
                    dst.push_back(std::move(e));
                }
            };
            read_pairs(nli_path, c.nli_examples);
            read_pairs(fs::path(dir) / ("nli_eval_" + iso + ".jsonl"), c.nli_eval);
        }
        c.recount_tokens();
        out.emplace(iso, std::move(c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Lexical distance

namespace {

int levenshtein(const std::string& a, const std::string& b) {
    std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= b.size(); ++j) {
            const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

double lexicon_distance(const LanguageCorpus& a, const LanguageCorpus& b) {
    const size_t n = std::min(a.lexicon.size(), b.lexicon.size());
    if (n == 0) throw ConfigError("lexicon_distance: missing lexicon data");
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const auto& wa = a.lexicon[i];
        const auto& wb = b.lexicon[i];
        const size_t longer = std::max(wa.size(), wb.size());
        total += longer == 0 ? 0.0 : static_cast<double>(levenshtein(wa, wb)) / longer;
    }
    return total / static_cast<double>(n);
}

}  // namespace phyadapt
