#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "phyadapt/phylogeny.hpp"
#include "phyadapt/rng.hpp"

namespace phyadapt {

// Fixed POS inventory shared by the generator and the tagging head.
namespace postags {
constexpr int kNoun = 0;
constexpr int kVerb = 1;
constexpr int kAdj = 2;
constexpr int kDet = 3;
constexpr int kAdv = 4;
constexpr int kAdp = 5;
constexpr int kNeg = 6;
constexpr int kCount = 7;
const char* name(int tag);
int from_name(const std::string& name);
}  // namespace postags

struct Sentence {
    std::vector<std::string> tokens;
    std::vector<int> pos;    // empty when unannotated
    std::vector<int> heads;  // 1-based token index; 0 = artificial root
};

struct NliExample {
    std::vector<std::string> premise;
    std::vector<std::string> hypothesis;
    int label = 0;  // 0 entailment, 1 neutral, 2 contradiction
};

struct LanguageCorpus {
    std::string iso;
    std::vector<Sentence> sentences;       // training split
    std::vector<Sentence> eval_sentences;  // annotated held-out split
    std::vector<NliExample> nli_examples;
    std::vector<NliExample> nli_eval;
    int64_t token_count = 0;  // over training sentences
    std::string provenance;
    // Word forms aligned by proto-word index across the family; used for
    // lexical-distance statistics.
    std::vector<std::string> lexicon;

    void recount_tokens();
};

// Generator parameters for one synthetic language family. The tree gives
// descent structure; each edge mutates the inherited lexicon phoneme-wise
// at `edge_mutation_rate` and may flip word-order switches at
// `word_order_flip_prob`, so lexical distance grows with tree distance.
struct FamilyGenSpec {
    PhyloTree tree;
    int proto_lexicon_size = 60;
    double edge_mutation_rate = 0.12;
    // Per-edge overrides keyed by the child node id (e.g. "L:aa4"): a
    // high leaf rate models a lect far from its written relatives.
    std::map<std::string, double> edge_rate_overrides;
    double word_order_flip_prob = 0.15;
    // Root typology; unset components are sampled from the seed.
    std::optional<bool> root_verb_final;
    std::optional<bool> root_adj_before_noun;
    std::optional<bool> root_adp_before;
    std::map<std::string, int> sentence_counts;       // per iso (asymmetric sizes)
    std::map<std::string, int> eval_sentence_counts;  // default eval_default
    int eval_default = 80;
    std::map<std::string, int> nli_counts;  // languages with NLI data
    int nli_eval_default = 60;

    double edge_rate(const std::string& child_node_id) const;
};

FamilyGenSpec parse_genspec(const std::string& json_text, const std::string& base_dir = "");
FamilyGenSpec load_genspec(const std::string& path);
std::string serialize_genspec(const FamilyGenSpec& spec);

std::map<std::string, LanguageCorpus> generate_family(const FamilyGenSpec& spec, uint64_t seed);

// Word-level vocabulary. Reserved ids occupy 0..4 and are fixed.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kMask = 2;
    static constexpr int kCls = 3;
    static constexpr int kSep = 4;
    static constexpr int kNumReserved = 5;

    std::vector<std::string> id_to_token;
    std::map<std::string, int> token_to_id;

    int size() const { return static_cast<int>(id_to_token.size()); }
    int id(const std::string& token) const;  // kUnk when absent
    // Positions that MLM masking and task losses must skip.
    static bool is_structural(int id) { return id == kPad || id == kCls || id == kSep || id == kMask; }
};

Vocab build_vocab(const std::vector<const LanguageCorpus*>& corpora, int min_freq = 1);

// Fraction of a corpus's training tokens that are in-vocabulary.
double vocab_coverage(const Vocab& vocab, const LanguageCorpus& corpus);

// factor(x) = C / token_count(x) with C chosen so the smallest factor is
// exactly 1; languages in `high_resource` are not upsampled (factor 1).
std::map<std::string, double> upsample_factors(
    const std::map<std::string, LanguageCorpus>& corpora,
    const std::set<std::string>& high_resource);

struct TokenBatch {
    int batch = 0;
    int seq = 0;
    std::vector<int> ids;        // row-major [batch x seq]
    std::vector<uint8_t> attn;   // 1 = real position, 0 = padding
    std::string iso;             // exactly one language per batch
    std::vector<int> mlm_labels; // original id at masked positions, else kIgnoreIndex

    int id_at(int b, int s) const { return ids[static_cast<size_t>(b) * seq + s]; }
    bool attn_at(int b, int s) const { return attn[static_cast<size_t>(b) * seq + s] != 0; }
};

std::vector<int> encode_tokens(const Vocab& vocab, const std::vector<std::string>& tokens);

// Single-language batches drawn with language probability proportional to
// factor(x) * token_count(x); sentences uniform with replacement.
class BatchStream {
public:
    BatchStream(const std::map<std::string, LanguageCorpus>& corpora,
                const std::map<std::string, double>& factors, int batch_size,
                int max_seq_len, const Vocab& vocab, uint64_t seed);

    TokenBatch next();
    const std::vector<std::string>& language_order() const { return isos_; }

private:
    std::vector<std::string> isos_;
    std::vector<const LanguageCorpus*> corpora_;
    std::vector<double> weights_;
    int batch_size_;
    int max_seq_len_;
    const Vocab* vocab_;
    Rng rng_;
};

// Builds a batch from explicit sentences (task training / evaluation).
TokenBatch make_batch(const std::vector<const Sentence*>& sentences, const Vocab& vocab,
                      int max_seq_len, const std::string& iso);

// BERT recipe: select non-structural tokens with probability mask_prob;
// of selected, 80% -> MASK, 10% -> random vocabulary token, 10% kept.
void apply_mlm_mask(TokenBatch& batch, double mask_prob, const Vocab& vocab, Rng& rng);
TokenBatch apply_mlm_mask(const TokenBatch& batch, double mask_prob, const Vocab& vocab,
                          uint64_t seed);

// JSONL persistence (one sentence/pair per line after a header line).
void save_corpora(const std::string& dir, const std::map<std::string, LanguageCorpus>& corpora,
                  const std::string& manifest_echo = "");
std::map<std::string, LanguageCorpus> load_corpora(const std::string& dir);

// Mean normalized Levenshtein distance between the two languages'
// lexicons, matched by proto-word index (recorded in provenance order).
double lexicon_distance(const LanguageCorpus& a, const LanguageCorpus& b);

}  // namespace phyadapt
