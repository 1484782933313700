#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "phyadapt/adapters.hpp"
#include "phyadapt/corpus.hpp"
#include "phyadapt/exec.hpp"
#include "phyadapt/stack_config.hpp"

namespace phyadapt {

enum class TaskKind { Pos, Dep, Nli };
const char* task_kind_name(TaskKind k);
TaskKind task_kind_from_name(const std::string& name);

// ---------------------------------------------------------------------------
// POS tagging

struct PosHead {
    Tensor w;  // [h x num_tags]
    Tensor b;  // [num_tags]
    int num_tags = 0;
};

PosHead new_pos_head(int hidden_dim, int num_tags, uint64_t seed);

// Per-token tag logits for token rows (no specials). [n x num_tags]
int pos_logits_node(Exec& exec, int token_hidden, PosHead& head, bool trainable);

// Argmax per row; ties broken toward the lowest tag id.
std::vector<int> argmax_rows(const Tensor& logits);

struct F1Scores {
    double micro = 0.0;
    double macro = 0.0;
};

// Micro- and macro-averaged F1 over token tags. Micro equals accuracy
// for single-label full-coverage tagging; macro averages per-class F1
// over classes present in gold or prediction.
F1Scores pos_f1(const std::vector<int>& pred, const std::vector<int>& gold);

// ---------------------------------------------------------------------------
// Deep biaffine dependency parsing

struct BiaffineHead {
    Tensor w_head, b_head;  // MLP onto head space   [h x r], [r]
    Tensor w_dep, b_dep;    // MLP onto dependent space
    Tensor u;               // biaffine tensor [r x r]
    Tensor v_head;          // linear head term [r]
    Tensor v_dep;           // linear dependent term [r]
    Tensor bias;            // scalar [1]
    Tensor root;            // learned artificial-root representation [1 x h]
    int r = 0;
};

BiaffineHead new_biaffine_head(int hidden_dim, int biaffine_dim, uint64_t seed);

// Arc scores for one sentence of n tokens: [n x (n+1)], column 0 the
// artificial root, column j > 0 the candidate head at token j.
// `token_hidden` holds the n token rows (specials already sliced away).
int biaffine_scores_node(Exec& exec, int token_hidden, BiaffineHead& head, bool trainable);

// Greedy per-token argmax, self-arc column excluded, ties toward the
// lowest column. Cycles are possible and accepted under greedy decode.
std::vector<int> decode_arcs(const Tensor& scores);

// Chu-Liu/Edmonds maximum spanning arborescence rooted at the artificial
// root; always returns a tree.
std::vector<int> decode_arcs_mst(const Tensor& scores);

// Fraction of tokens whose predicted head matches gold.
double uas(const std::vector<int>& pred_heads, const std::vector<int>& gold_heads);

// ---------------------------------------------------------------------------
// NLI

struct NliHead {
    Tensor w;  // [h x 3]
    Tensor b;  // [3]
};

NliHead new_nli_head(int hidden_dim, uint64_t seed);

int nli_logits_node(Exec& exec, int cls_hidden, NliHead& head, bool trainable);

double nli_accuracy(const std::vector<int>& pred, const std::vector<int>& gold);

// ---------------------------------------------------------------------------
// Task adapter: bottleneck adapter + task head trained on a source
// language with its language chain frozen underneath.

using TaskHead = std::variant<PosHead, BiaffineHead, NliHead>;

struct TaskAdapter {
    AdapterParams adapter;  // node_id "T:<source iso>"
    TaskHead head;
    TaskKind task = TaskKind::Pos;
    std::string source_iso;
    StackCode trained_with = StackCode::FGLT;

    uint64_t checksum() const;
    int64_t head_param_count() const;
};

}  // namespace phyadapt
