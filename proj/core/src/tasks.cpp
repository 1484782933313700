#include "phyadapt/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "phyadapt/errors.hpp"

namespace phyadapt {

const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::Pos: return "pos";
        case TaskKind::Dep: return "dep";
        case TaskKind::Nli: return "nli";
    }
    return "?";
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "pos") return TaskKind::Pos;
    if (name == "dep") return TaskKind::Dep;
    if (name == "nli") return TaskKind::Nli;
    throw ConfigError("unknown task '" + name + "' (expected pos|dep|nli)");
}

const char* stack_code_name(StackCode code) {
    switch (code) {
        case StackCode::T: return "T";
        case StackCode::LT: return "LT";
        case StackCode::FT: return "FT";
        case StackCode::FGT: return "FGT";
        case StackCode::FLT: return "FLT";
        case StackCode::FGLT: return "FGLT";
        case StackCode::LLLT: return "LLLT";
        case StackCode::RFGLT: return "RFGLT";
    }
    return "?";
}

StackCode stack_code_from_name(const std::string& name) {
    if (name == "T") return StackCode::T;
    if (name == "LT") return StackCode::LT;
    if (name == "FT") return StackCode::FT;
    if (name == "FGT") return StackCode::FGT;
    if (name == "FLT") return StackCode::FLT;
    if (name == "FGLT") return StackCode::FGLT;
    if (name == "LLLT") return StackCode::LLLT;
    if (name == "RFGLT") return StackCode::RFGLT;
    throw ConfigError("unknown stack code '" + name + "'");
}

std::vector<TreeLevel> stack_levels(StackCode code) {
    switch (code) {
        case StackCode::T: return {};
        case StackCode::LT: return {TreeLevel::Language};
        case StackCode::FT: return {TreeLevel::Family};
        case StackCode::FGT: return {TreeLevel::Family, TreeLevel::Genus};
        case StackCode::FLT: return {TreeLevel::Family, TreeLevel::Language};
        case StackCode::FGLT: return {TreeLevel::Family, TreeLevel::Genus, TreeLevel::Language};
        case StackCode::LLLT:
            return {TreeLevel::Language, TreeLevel::Language, TreeLevel::Language};
        case StackCode::RFGLT:
            return {TreeLevel::Root, TreeLevel::Family, TreeLevel::Genus, TreeLevel::Language};
    }
    return {};
}

// ---------------------------------------------------------------------------
// POS

PosHead new_pos_head(int hidden_dim, int num_tags, uint64_t seed) {
    if (num_tags < 1) throw ConfigError("pos head needs at least one tag");
    PosHead head;
    head.num_tags = num_tags;
    Rng rng(derive_seed(seed, "pos-head"));
    head.w = Tensor::randn({hidden_dim, num_tags}, rng, 1.0 / std::sqrt(hidden_dim));
    head.b = Tensor({num_tags});
    return head;
}

int pos_logits_node(Exec& exec, int token_hidden, PosHead& head, bool trainable) {
    return exec.g.add_row_broadcast(exec.g.matmul(token_hidden, exec.weights(head.w, trainable)),
                                    exec.weights(head.b, trainable));
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const int m = logits.rows(), c = logits.cols();
    std::vector<int> out(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        int best = 0;
        for (int j = 1; j < c; ++j) {
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        }
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

F1Scores pos_f1(const std::vector<int>& pred, const std::vector<int>& gold) {
    if (pred.size() != gold.size()) {
        throw InputError("pos_f1: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(gold.size()) + " gold tags");
    }
    if (pred.empty()) throw InputError("pos_f1 over zero tokens");
    std::set<int> classes(gold.begin(), gold.end());
    classes.insert(pred.begin(), pred.end());
    int64_t correct = 0;
    std::map<int, int64_t> tp, fp, fn;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == gold[i]) {
            ++correct;
            ++tp[pred[i]];
        } else {
            ++fp[pred[i]];
            ++fn[gold[i]];
        }
    }
    F1Scores s;
    s.micro = static_cast<double>(correct) / static_cast<double>(pred.size());
    double macro_sum = 0.0;
    for (int c : classes) {
        const double denom = 2.0 * tp[c] + fp[c] + fn[c];
        macro_sum += denom == 0.0 ? 0.0 : 2.0 * tp[c] / denom;
    }
    s.macro = macro_sum / static_cast<double>(classes.size());
    return s;
}

// ---------------------------------------------------------------------------
// Biaffine parser

BiaffineHead new_biaffine_head(int hidden_dim, int biaffine_dim, uint64_t seed) {
    if (biaffine_dim < 1) throw ConfigError("biaffine dimension must be >= 1");
    BiaffineHead head;
    head.r = biaffine_dim;
    Rng rng(derive_seed(seed, "biaffine-head"));
    const double sh = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    const double sr = 1.0 / std::sqrt(static_cast<double>(biaffine_dim));
    head.w_head = Tensor::randn({hidden_dim, biaffine_dim}, rng, sh);
    head.b_head = Tensor({biaffine_dim});
    head.w_dep = Tensor::randn({hidden_dim, biaffine_dim}, rng, sh);
    head.b_dep = Tensor({biaffine_dim});
    head.u = Tensor::randn({biaffine_dim, biaffine_dim}, rng, sr);
    head.v_head = Tensor::randn({biaffine_dim}, rng, sr);
    head.v_dep = Tensor::randn({biaffine_dim}, rng, sr);
    head.bias = Tensor({1});
    head.root = Tensor::randn({1, hidden_dim}, rng, sh);
    return head;
}

int biaffine_scores_node(Exec& exec, int token_hidden, BiaffineHead& head, bool trainable) {
    const int n = exec.g.value(token_hidden).rows();
    if (n == 0) throw InputError("biaffine_scores on an empty sentence");
    // Candidate heads: learned root row + the n token rows.
    const int with_root =
        exec.g.concat_rows({exec.weights(head.root, trainable), token_hidden});
    const int heads_mlp = exec.g.gelu(
        exec.g.add_row_broadcast(exec.g.matmul(with_root, exec.weights(head.w_head, trainable)),
                                 exec.weights(head.b_head, trainable)));
    const int deps_mlp = exec.g.gelu(
        exec.g.add_row_broadcast(exec.g.matmul(token_hidden, exec.weights(head.w_dep, trainable)),
                                 exec.weights(head.b_dep, trainable)));
    // score(i,j) = dep_i U head_j + v_dep.dep_i + v_head.head_j + bias
    int scores = exec.g.matmul(exec.g.matmul(deps_mlp, exec.weights(head.u, trainable)),
                               exec.g.transpose(heads_mlp));
    // v_dep/v_head are rank-1; as graph values they read as row vectors.
    const int dep_lin = exec.g.matmul(
        deps_mlp, exec.g.transpose(exec.weights(head.v_dep, trainable)));  // [n x 1]
    const int head_lin = exec.g.matmul(
        heads_mlp, exec.g.transpose(exec.weights(head.v_head, trainable)));  // [n+1 x 1]
    scores = exec.g.add_col_broadcast(scores, dep_lin);
    scores = exec.g.add_row_broadcast(scores, exec.g.transpose(head_lin));
    scores = exec.g.add_scalar_broadcast(scores, exec.weights(head.bias, trainable));
    return scores;
}

std::vector<int> decode_arcs(const Tensor& scores) {
    const int n = scores.rows();
    if (scores.cols() != n + 1) {
        throw ShapeError("decode_arcs expects [n x (n+1)] scores, got " + scores.shape_str());
    }
    std::vector<int> heads(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        int best = -1;
        for (int j = 0; j <= n; ++j) {
            if (j == i + 1) continue;  // self-arc excluded
            if (best < 0 || scores.at(i, j) > scores.at(i, best)) best = j;
        }
        heads[static_cast<size_t>(i)] = best;
    }
    return heads;
}

namespace {

// Chu-Liu/Edmonds on a dense score matrix, maximizing. Nodes 0..n with 0
// the root; score_of(head, dep). Recursive contraction.
std::vector<int> edmonds(int n_nodes, const std::vector<std::vector<double>>& score) {
    const double kNegInf = -1e300;
    std::vector<int> best_head(static_cast<size_t>(n_nodes), -1);
    for (int v = 1; v < n_nodes; ++v) {
        double best = kNegInf;
        for (int u = 0; u < n_nodes; ++u) {
            if (u == v) continue;
            if (score[static_cast<size_t>(u)][static_cast<size_t>(v)] > best) {
                best = score[static_cast<size_t>(u)][static_cast<size_t>(v)];
                best_head[static_cast<size_t>(v)] = u;
            }
        }
    }
    // Find a cycle among best heads.
    std::vector<int> color(static_cast<size_t>(n_nodes), 0);
    std::vector<int> cycle;
    for (int start = 1; start < n_nodes && cycle.empty(); ++start) {
        if (color[static_cast<size_t>(start)]) continue;
        std::vector<int> path;
        int v = start;
        while (v != 0 && color[static_cast<size_t>(v)] == 0) {
            color[static_cast<size_t>(v)] = 1;
            path.push_back(v);
            v = best_head[static_cast<size_t>(v)];
        }
        if (v != 0 && color[static_cast<size_t>(v)] == 1) {
            // Walk back to extract the cycle.
            auto it = std::find(path.begin(), path.end(), v);
            cycle.assign(it, path.end());
        }
        for (int u : path) color[static_cast<size_t>(u)] = 2;
    }
    if (cycle.empty()) return best_head;

    // Contract the cycle into a supernode and recurse.
    std::vector<char> in_cycle(static_cast<size_t>(n_nodes), 0);
    double cycle_score = 0.0;
    for (int v : cycle) {
        in_cycle[static_cast<size_t>(v)] = 1;
        cycle_score += score[static_cast<size_t>(best_head[static_cast<size_t>(v)])][static_cast<size_t>(v)];
    }
    std::vector<int> old_of;  // contracted index -> original node
    std::vector<int> new_of(static_cast<size_t>(n_nodes), -1);
    for (int v = 0; v < n_nodes; ++v) {
        if (!in_cycle[static_cast<size_t>(v)]) {
            new_of[static_cast<size_t>(v)] = static_cast<int>(old_of.size());
            old_of.push_back(v);
        }
    }
    const int super = static_cast<int>(old_of.size());
    const int m = super + 1;
    std::vector<std::vector<double>> cscore(static_cast<size_t>(m),
                                            std::vector<double>(static_cast<size_t>(m), kNegInf));
    // Track which original edge realizes each contracted edge.
    std::vector<std::vector<std::pair<int, int>>> realize(
        static_cast<size_t>(m), std::vector<std::pair<int, int>>(static_cast<size_t>(m), {-1, -1}));
    for (int u = 0; u < n_nodes; ++u) {
        for (int v = 1; v < n_nodes; ++v) {
            if (u == v) continue;
            const double s = score[static_cast<size_t>(u)][static_cast<size_t>(v)];
            const bool uc = in_cycle[static_cast<size_t>(u)], vc = in_cycle[static_cast<size_t>(v)];
            if (!uc && !vc) {
                const int cu = new_of[static_cast<size_t>(u)], cv = new_of[static_cast<size_t>(v)];
                if (s > cscore[static_cast<size_t>(cu)][static_cast<size_t>(cv)]) {
                    cscore[static_cast<size_t>(cu)][static_cast<size_t>(cv)] = s;
                    realize[static_cast<size_t>(cu)][static_cast<size_t>(cv)] = {u, v};
                }
            } else if (!uc && vc) {
                // Entering the cycle at v replaces v's in-cycle arc.
                const double gain =
                    s - score[static_cast<size_t>(best_head[static_cast<size_t>(v)])][static_cast<size_t>(v)] +
                    cycle_score;
                const int cu = new_of[static_cast<size_t>(u)];
                if (gain > cscore[static_cast<size_t>(cu)][static_cast<size_t>(super)]) {
                    cscore[static_cast<size_t>(cu)][static_cast<size_t>(super)] = gain;
                    realize[static_cast<size_t>(cu)][static_cast<size_t>(super)] = {u, v};
                }
            } else if (uc && !vc) {
                const int cv = new_of[static_cast<size_t>(v)];
                if (s > cscore[static_cast<size_t>(super)][static_cast<size_t>(cv)]) {
                    cscore[static_cast<size_t>(super)][static_cast<size_t>(cv)] = s;
                    realize[static_cast<size_t>(super)][static_cast<size_t>(cv)] = {u, v};
                }
            }
        }
    }
    const std::vector<int> sub = edmonds(m, cscore);
    std::vector<int> heads(static_cast<size_t>(n_nodes), -1);
    for (int v : cycle) heads[static_cast<size_t>(v)] = best_head[static_cast<size_t>(v)];
    for (int cv = 1; cv < m; ++cv) {
        const int cu = sub[static_cast<size_t>(cv)];
        const auto [u, v] = realize[static_cast<size_t>(cu)][static_cast<size_t>(cv)];
        heads[static_cast<size_t>(v)] = u;  // for cv==super this breaks the cycle at v
    }
    return heads;
}

}  // namespace

std::vector<int> decode_arcs_mst(const Tensor& scores) {
    const int n = scores.rows();
    if (scores.cols() != n + 1) {
        throw ShapeError("decode_arcs_mst expects [n x (n+1)] scores, got " + scores.shape_str());
    }
    // Node 0 = root, node i = token i-1. score_of[u][v] = scores[v-1][u].
    std::vector<std::vector<double>> score(static_cast<size_t>(n + 1),
                                           std::vector<double>(static_cast<size_t>(n + 1), -1e300));
    for (int dep = 1; dep <= n; ++dep) {
        for (int head = 0; head <= n; ++head) {
            if (head == dep) continue;
            score[static_cast<size_t>(head)][static_cast<size_t>(dep)] = scores.at(dep - 1, head);
        }
    }
    const auto heads = edmonds(n + 1, score);
    return std::vector<int>(heads.begin() + 1, heads.end());
}

double uas(const std::vector<int>& pred_heads, const std::vector<int>& gold_heads) {
    if (pred_heads.size() != gold_heads.size()) {
        throw InputError("uas: " + std::to_string(pred_heads.size()) + " predictions vs " +
                         std::to_string(gold_heads.size()) + " gold heads");
    }
    if (pred_heads.empty()) throw InputError("uas over zero tokens");
    int64_t correct = 0;
    for (size_t i = 0; i < pred_heads.size(); ++i) correct += pred_heads[i] == gold_heads[i];
    return static_cast<double>(correct) / static_cast<double>(pred_heads.size());
}

// ---------------------------------------------------------------------------
// NLI

NliHead new_nli_head(int hidden_dim, uint64_t seed) {
    NliHead head;
    Rng rng(derive_seed(seed, "nli-head"));
    head.w = Tensor::randn({hidden_dim, 3}, rng, 1.0 / std::sqrt(hidden_dim));
    head.b = Tensor({3});
    return head;
}

int nli_logits_node(Exec& exec, int cls_hidden, NliHead& head, bool trainable) {
    return exec.g.add_row_broadcast(exec.g.matmul(cls_hidden, exec.weights(head.w, trainable)),
                                    exec.weights(head.b, trainable));
}

double nli_accuracy(const std::vector<int>& pred, const std::vector<int>& gold) {
    if (pred.size() != gold.size()) {
        throw InputError("nli_accuracy: prediction/gold length mismatch");
    }
    if (pred.empty()) throw InputError("nli_accuracy over zero examples");
    int64_t correct = 0;
    for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == gold[i];
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// TaskAdapter

namespace {

struct HeadParamVisitor {
    std::vector<const Tensor*> out;
    void operator()(const PosHead& h) { out = {&h.w, &h.b}; }
    void operator()(const BiaffineHead& h) {
        out = {&h.w_head, &h.b_head, &h.w_dep, &h.b_dep, &h.u, &h.v_head, &h.v_dep, &h.bias, &h.root};
    }
    void operator()(const NliHead& h) { out = {&h.w, &h.b}; }
};

}  // namespace

uint64_t TaskAdapter::checksum() const {
    uint64_t h = adapter.checksum();
    HeadParamVisitor v;
    std::visit(v, head);
    for (const Tensor* t : v.out) h = checksum_accumulate(h, *t);
    return h;
}

int64_t TaskAdapter::head_param_count() const {
    HeadParamVisitor v;
    std::visit(v, head);
    int64_t n = 0;
    for (const Tensor* t : v.out) n += t->size();
    return n;
}

}  // namespace phyadapt
