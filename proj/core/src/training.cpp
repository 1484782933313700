#include "phyadapt/training.hpp"

#include <algorithm>
#include <cmath>

#include "phyadapt/errors.hpp"
#include "phyadapt/optimizer.hpp"

namespace phyadapt {

int TrainConfig::effective_bottleneck() const {
    return constrained_bottleneck(bottleneck_d, reduction_k);
}

void TrainConfig::validate() const {
    if (lr <= 0.0 || steps < 0 || batch_size < 1 || bottleneck_d < 1 || reduction_k < 1 ||
        clip_norm < 0.0) {
        throw ConfigError("train config: values must be positive");
    }
    if (mask_prob <= 0.0 || mask_prob >= 1.0) throw ConfigError("train config: mask_prob out of (0,1)");
    if (bottleneck_d % reduction_k != 0) {
        throw ConfigError("train config: bottleneck " + std::to_string(bottleneck_d) +
                          " not divisible by reduction factor " + std::to_string(reduction_k));
    }
}

double PretrainLog::first_window_mean(const std::string& iso, int window) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& [liso, loss] : step_losses) {
        if (liso != iso) continue;
        sum += loss;
        if (++n >= window) break;
    }
    return n == 0 ? 0.0 : sum / n;
}

double PretrainLog::last_window_mean(const std::string& iso, int window) const {
    double sum = 0.0;
    int n = 0;
    for (auto it = step_losses.rbegin(); it != step_losses.rend(); ++it) {
        if (it->first != iso) continue;
        sum += it->second;
        if (++n >= window) break;
    }
    return n == 0 ? 0.0 : sum / n;
}

std::string triple_copy_node_id(const std::string& leaf_node_id, int copy) {
    return leaf_node_id + "#" + std::to_string(copy + 1);
}

uint64_t bank_init_seed(uint64_t run_seed, const std::string& node_id) {
    if (node_id.rfind("L:", 0) == 0) {
        const auto hash_pos = node_id.find('#');
        const std::string copy_suffix =
            hash_pos == std::string::npos ? "" : node_id.substr(hash_pos);
        return derive_seed(run_seed, "init:language" + copy_suffix);
    }
    return derive_seed(run_seed, "init:" + node_id);
}

AdapterBank pretrain_joint(const PhyloTree& tree,
                           const std::map<std::string, LanguageCorpus>& corpora,
                           const Vocab& vocab, const Backbone& backbone,
                           const TrainConfig& config, PretrainMode mode, bool include_root,
                           const std::map<std::string, double>* factors, PretrainLog* log) {
    config.validate();
    if (!backbone.frozen) throw ConfigError("pretrain_joint: backbone must be frozen");
    for (const auto& [iso, corpus] : corpora) {
        if (!tree.has_language(iso)) {
            throw ConfigError("corpus language '" + iso + "' is not a leaf of the tree");
        }
    }

    const int d = config.effective_bottleneck();
    AdapterSpec base_spec;
    base_spec.hidden_dim = backbone.config.hidden_dim;
    base_spec.bottleneck_dim = d;
    base_spec.num_layers = backbone.config.num_layers;

    AdapterBank bank;
    bank.backbone = &backbone;
    // Routing plan per language; adapters created for every node that
    // appears on some corpus language's path.
    std::map<std::string, std::vector<std::string>> plan;
    for (const auto& [iso, corpus] : corpora) {
        std::vector<std::string> chain_ids;
        switch (mode) {
            case PretrainMode::Joint: chain_ids = route(tree, iso, include_root); break;
            case PretrainMode::Flat: chain_ids = {tree.leaf_by_iso.at(iso)}; break;
            case PretrainMode::TripleFlat: {
                const std::string leaf = tree.leaf_by_iso.at(iso);
                for (int c = 0; c < kTripleStackCopies; ++c) {
                    chain_ids.push_back(triple_copy_node_id(leaf, c));
                }
                break;
            }
        }
        for (const auto& node_id : chain_ids) {
            if (!bank.has(node_id)) {
                AdapterSpec spec = base_spec;
                spec.node_id = node_id;
                bank.adapters.emplace(node_id, new_adapter(spec, bank_init_seed(config.seed, node_id)));
                bank.update_counts[node_id] = 0;
            }
        }
        plan.emplace(iso, std::move(chain_ids));
    }

    auto train_stream = [&](BatchStream& stream, int steps, Adam& adam, Rng& mask_rng,
                            Rng& dropout_rng) {
        for (int step = 0; step < steps; ++step) {
            TokenBatch batch = stream.next();
            apply_mlm_mask(batch, config.mask_prob, vocab, mask_rng);
            bool any_label = false;
            for (int lbl : batch.mlm_labels) any_label = any_label || lbl != kIgnoreIndex;
            if (!any_label) continue;

            AdapterChain chain;
            for (const auto& node_id : plan.at(batch.iso)) {
                chain.members.push_back({node_id, &bank.at(node_id), /*trainable=*/true});
            }
            Exec exec;
            exec.training = true;
            exec.dropout_rate = config.dropout;
            exec.dropout_rng = &dropout_rng;
            const int loss = mlm_loss_node(exec, backbone, batch, &chain);
            if (log) log->step_losses.emplace_back(batch.iso, exec.g.value(loss).item());
            exec.g.backward(loss);
            adam.step(exec, config.clip_norm);
            for (const auto& node_id : plan.at(batch.iso)) ++bank.update_counts[node_id];
        }
    };

    if (mode == PretrainMode::Joint) {
        std::map<std::string, double> unit_factors;
        if (factors == nullptr) {
            for (const auto& [iso, c] : corpora) unit_factors[iso] = 1.0;
        }
        BatchStream stream(corpora, factors ? *factors : unit_factors, config.batch_size,
                           backbone.config.max_seq_len, vocab,
                           derive_seed(config.seed, "adapter-stream"));
        Rng mask_rng(derive_seed(config.seed, "adapter-mask"));
        Rng dropout_rng(derive_seed(config.seed, "adapter-dropout"));
        Adam adam(config.lr, config.beta1, config.beta2, config.adam_eps);
        train_stream(stream, config.steps, adam, mask_rng, dropout_rng);
        return bank;
    }

    // Separate training: each language adapter (or its triple stack) gets
    // the full step budget on its own monolingual stream, the way the
    // baseline adapters are trained as independent runs.
    for (const auto& [iso, chain_ids] : plan) {
        std::map<std::string, LanguageCorpus> own;
        own.emplace(iso, corpora.at(iso));
        std::map<std::string, double> own_factor{{iso, 1.0}};
        BatchStream stream(own, own_factor, config.batch_size, backbone.config.max_seq_len,
                           vocab, derive_seed(config.seed, "adapter-stream:" + iso));
        Rng mask_rng(derive_seed(config.seed, "adapter-mask:" + iso));
        Rng dropout_rng(derive_seed(config.seed, "adapter-dropout:" + iso));
        Adam adam(config.lr, config.beta1, config.beta2, config.adam_eps);
        train_stream(stream, config.steps, adam, mask_rng, dropout_rng);
    }
    return bank;
}

// ---------------------------------------------------------------------------
// Stack assembly

AdapterChain language_chain(const StackConfig& config, const std::string& iso,
                            const PhyloTree& tree, AdapterBank& bank) {
    const auto levels = stack_levels(config.code);
    AdapterChain chain;
    if (levels.empty()) return chain;

    const bool want_root = std::find(levels.begin(), levels.end(), TreeLevel::Root) != levels.end();
    const auto path = route(tree, iso, want_root);
    auto node_at = [&](TreeLevel level) -> std::string {
        NodeKind kind = NodeKind::Language;
        switch (level) {
            case TreeLevel::Root: kind = NodeKind::Root; break;
            case TreeLevel::Family: kind = NodeKind::Family; break;
            case TreeLevel::Genus: kind = NodeKind::Genus; break;
            case TreeLevel::Language: kind = NodeKind::Language; break;
        }
        for (const auto& id : path) {
            if (tree.at(id).kind == kind) return id;
        }
        throw ConfigError("route for '" + iso + "' has no " +
                          std::string(node_kind_name(kind)) + " node");
    };

    if (config.code == StackCode::LLLT) {
        const std::string leaf = node_at(TreeLevel::Language);
        for (int c = 0; c < kTripleStackCopies; ++c) {
            std::string node_id = triple_copy_node_id(leaf, c);
            if (!bank.has(node_id) && config.language_override) {
                node_id = triple_copy_node_id(tree.leaf_by_iso.at(*config.language_override), c);
            }
            if (!bank.has(node_id)) {
                throw ConfigError("assembly missing adapter '" + node_id +
                                  "' and no language_override applies");
            }
            chain.members.push_back({node_id, &bank.at(node_id), false});
        }
        return chain;
    }

    for (TreeLevel level : levels) {
        std::string node_id = node_at(level);
        if (level == TreeLevel::Language && !bank.has(node_id) && config.language_override) {
            const auto oit = tree.leaf_by_iso.find(*config.language_override);
            if (oit == tree.leaf_by_iso.end()) {
                throw ConfigError("language_override '" + *config.language_override +
                                  "' is not in the tree");
            }
            node_id = oit->second;
        }
        if (!bank.has(node_id)) {
            throw ConfigError("assembly missing adapter '" + node_id +
                              "' and no language_override applies");
        }
        chain.members.push_back({node_id, &bank.at(node_id), false});
    }
    return chain;
}

AdapterChain assemble_stack(const StackConfig& config, const std::string& target_iso,
                            const PhyloTree& tree, AdapterBank& bank, TaskAdapter* task) {
    AdapterChain chain = language_chain(config, target_iso, tree, bank);
    if (task != nullptr) {
        chain.members.push_back({task->adapter.spec.node_id, &task->adapter, false});
    }
    return chain;
}

// ---------------------------------------------------------------------------
// Task training

namespace {

// Token rows of one encoded sentence (positions 1..n, skipping CLS and
// stopping before SEP/padding).
int token_rows(Exec& exec, int hidden, int n_tokens) {
    return exec.g.slice_rows(hidden, 1, 1 + n_tokens);
}

int count_tokens(const Sentence& s, int max_seq_len) {
    return std::min(static_cast<int>(s.tokens.size()), max_seq_len - 2);
}

TokenBatch nli_batch(const std::vector<const NliExample*>& examples, const Vocab& vocab,
                     int max_seq_len, const std::string& iso, std::vector<bool>* truncated_out) {
    std::vector<std::vector<int>> rows;
    rows.reserve(examples.size());
    if (truncated_out) truncated_out->assign(examples.size(), false);
    for (size_t e = 0; e < examples.size(); ++e) {
        const auto& ex = *examples[e];
        std::vector<int> ids;
        ids.push_back(Vocab::kCls);
        for (const auto& t : ex.premise) ids.push_back(vocab.id(t));
        ids.push_back(Vocab::kSep);
        for (const auto& t : ex.hypothesis) ids.push_back(vocab.id(t));
        ids.push_back(Vocab::kSep);
        if (static_cast<int>(ids.size()) > max_seq_len) {
            // Overlong joined pair: the hypothesis tail is truncated.
            ids.resize(static_cast<size_t>(max_seq_len) - 1);
            ids.push_back(Vocab::kSep);
            if (truncated_out) (*truncated_out)[e] = true;
        }
        rows.push_back(std::move(ids));
    }
    TokenBatch b;
    b.batch = static_cast<int>(rows.size());
    b.seq = 0;
    for (const auto& r : rows) b.seq = std::max(b.seq, static_cast<int>(r.size()));
    b.ids.assign(static_cast<size_t>(b.batch) * b.seq, Vocab::kPad);
    b.attn.assign(static_cast<size_t>(b.batch) * b.seq, 0);
    b.iso = iso;
    for (int i = 0; i < b.batch; ++i) {
        for (size_t j = 0; j < rows[static_cast<size_t>(i)].size(); ++j) {
            b.ids[static_cast<size_t>(i) * b.seq + j] = rows[static_cast<size_t>(i)][j];
            b.attn[static_cast<size_t>(i) * b.seq + j] = 1;
        }
    }
    return b;
}

}  // namespace

TaskAdapter train_task_adapter(AdapterBank& bank, const PhyloTree& tree,
                               const Backbone& backbone, const Vocab& vocab,
                               const std::string& source_iso, TaskKind task,
                               const LanguageCorpus& source_data, const StackConfig& stack,
                               const TrainConfig& config, TaskTrainLog* log) {
    config.validate();
    if (task == TaskKind::Pos || task == TaskKind::Dep) {
        bool annotated = !source_data.sentences.empty();
        for (const auto& s : source_data.sentences) {
            annotated = annotated && !s.pos.empty() && !s.heads.empty();
            if (!annotated) break;
        }
        if (!annotated) {
            throw ConfigError("task training needs annotated source data for '" + source_iso + "'");
        }
    } else if (source_data.nli_examples.empty()) {
        throw ConfigError("task training needs NLI pairs for '" + source_iso + "'");
    }

    TaskAdapter out;
    out.task = task;
    out.source_iso = source_iso;
    out.trained_with = stack.code;
    AdapterSpec spec;
    spec.hidden_dim = backbone.config.hidden_dim;
    // The task adapter keeps the unreduced bottleneck; the constrained
    // factor applies to the tree-level adapters only.
    spec.bottleneck_dim = config.bottleneck_d;
    spec.num_layers = backbone.config.num_layers;
    spec.node_id = "T:" + source_iso;
    out.adapter = new_adapter(spec, derive_seed(config.seed, "task-adapter"));

    const int h = backbone.config.hidden_dim;
    switch (task) {
        case TaskKind::Pos:
            out.head = new_pos_head(h, postags::kCount, derive_seed(config.seed, "head"));
            break;
        case TaskKind::Dep:
            out.head = new_biaffine_head(h, h / 2, derive_seed(config.seed, "head"));
            break;
        case TaskKind::Nli:
            out.head = new_nli_head(h, derive_seed(config.seed, "head"));
            break;
    }
    if (config.steps == 0) return out;

    // Frozen language chain of the source language under the trainable
    // task adapter.
    AdapterChain lang = language_chain(stack, source_iso, tree, bank);

    Rng sample_rng(derive_seed(config.seed, "task-sample"));
    Rng dropout_rng(derive_seed(config.seed, "task-dropout"));
    Adam adam(config.lr, config.beta1, config.beta2, config.adam_eps);
    const int max_seq = backbone.config.max_seq_len;

    for (int step = 0; step < config.steps; ++step) {
        Exec exec;
        exec.training = true;
        exec.dropout_rate = config.dropout;
        exec.dropout_rng = &dropout_rng;

        AdapterChain chain = lang;
        chain.members.push_back({out.adapter.spec.node_id, &out.adapter, /*trainable=*/true});

        int loss = -1;
        if (task == TaskKind::Nli) {
            std::vector<const NliExample*> examples;
            std::vector<int> labels;
            for (int i = 0; i < config.batch_size; ++i) {
                const auto& ex = source_data.nli_examples[static_cast<size_t>(
                    sample_rng.uniform_int(static_cast<int>(source_data.nli_examples.size())))];
                examples.push_back(&ex);
                labels.push_back(ex.label);
            }
            TokenBatch batch = nli_batch(examples, vocab, max_seq, source_iso, nullptr);
            const auto hidden = encoder_forward_nodes(exec, backbone, batch, &chain);
            auto& head = std::get<NliHead>(out.head);
            std::vector<int> logit_rows;
            for (int hnode : hidden) {
                logit_rows.push_back(nli_logits_node(exec, exec.g.row(hnode, 0), head, true));
            }
            loss = exec.g.cross_entropy(exec.g.concat_rows(logit_rows), labels, std::nullopt);
        } else {
            std::vector<const Sentence*> sents;
            for (int i = 0; i < config.batch_size; ++i) {
                sents.push_back(&source_data.sentences[static_cast<size_t>(
                    sample_rng.uniform_int(static_cast<int>(source_data.sentences.size())))]);
            }
            TokenBatch batch = make_batch(sents, vocab, max_seq, source_iso);
            const auto hidden = encoder_forward_nodes(exec, backbone, batch, &chain);
            if (task == TaskKind::Pos) {
                auto& head = std::get<PosHead>(out.head);
                std::vector<int> logit_rows;
                std::vector<int> labels;
                for (size_t b = 0; b < sents.size(); ++b) {
                    const int n = count_tokens(*sents[b], max_seq);
                    logit_rows.push_back(
                        pos_logits_node(exec, token_rows(exec, hidden[b], n), head, true));
                    for (int t = 0; t < n; ++t) labels.push_back(sents[b]->pos[static_cast<size_t>(t)]);
                }
                loss = exec.g.cross_entropy(exec.g.concat_rows(logit_rows), labels, std::nullopt);
            } else {
                auto& head = std::get<BiaffineHead>(out.head);
                // Per-sentence arc losses averaged with token weights.
                std::vector<int> sentence_losses;
                std::vector<double> weights;
                int total_tokens = 0;
                for (size_t b = 0; b < sents.size(); ++b) {
                    const int n = count_tokens(*sents[b], max_seq);
                    if (n == 0) continue;
                    const int scores =
                        biaffine_scores_node(exec, token_rows(exec, hidden[b], n), head, true);
                    std::vector<int> gold(sents[b]->heads.begin(), sents[b]->heads.begin() + n);
                    // Heads beyond the truncation boundary cannot be
                    // predicted; fold them onto the root column.
                    for (int& g : gold) {
                        if (g > n) g = 0;
                    }
                    sentence_losses.push_back(exec.g.cross_entropy(scores, gold, std::nullopt));
                    weights.push_back(static_cast<double>(n));
                    total_tokens += n;
                }
                int acc = -1;
                for (size_t i = 0; i < sentence_losses.size(); ++i) {
                    const int scaled = exec.g.scale(sentence_losses[i],
                                                    weights[i] / static_cast<double>(total_tokens));
                    acc = acc < 0 ? scaled : exec.g.add(acc, scaled);
                }
                loss = acc;
            }
        }
        if (log) log->step_losses.push_back(exec.g.value(loss).item());
        exec.g.backward(loss);
        adam.step(exec, config.clip_norm);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prediction and evaluation

std::vector<int> predict_pos(const Backbone& backbone, const AdapterChain& chain,
                             const Vocab& vocab, const Sentence& sentence, const PosHead& head) {
    const int max_seq = backbone.config.max_seq_len;
    TokenBatch batch = make_batch({&sentence}, vocab, max_seq, "");
    Exec exec;
    const auto hidden = encoder_forward_nodes(exec, backbone, batch, &chain);
    const int n = count_tokens(sentence, max_seq);
    const int logits = pos_logits_node(exec, token_rows(exec, hidden[0], n),
                                       const_cast<PosHead&>(head), false);
    return argmax_rows(exec.g.value(logits));
}

std::vector<int> predict_heads(const Backbone& backbone, const AdapterChain& chain,
                               const Vocab& vocab, const Sentence& sentence,
                               const BiaffineHead& head, bool use_mst) {
    const int max_seq = backbone.config.max_seq_len;
    TokenBatch batch = make_batch({&sentence}, vocab, max_seq, "");
    Exec exec;
    const auto hidden = encoder_forward_nodes(exec, backbone, batch, &chain);
    const int n = count_tokens(sentence, max_seq);
    const int scores = biaffine_scores_node(exec, token_rows(exec, hidden[0], n),
                                            const_cast<BiaffineHead&>(head), false);
    const Tensor& s = exec.g.value(scores);
    return use_mst ? decode_arcs_mst(s) : decode_arcs(s);
}

int predict_nli(const Backbone& backbone, const AdapterChain& chain, const Vocab& vocab,
                const NliExample& example, const NliHead& head, bool* truncated) {
    std::vector<bool> trunc;
    TokenBatch batch = nli_batch({&example}, vocab, backbone.config.max_seq_len, "", &trunc);
    if (truncated) *truncated = trunc[0];
    Exec exec;
    const auto hidden = encoder_forward_nodes(exec, backbone, batch, &chain);
    const int logits =
        nli_logits_node(exec, exec.g.row(hidden[0], 0), const_cast<NliHead&>(head), false);
    return argmax_rows(exec.g.value(logits))[0];
}

double EvalReport::average(const std::string& config, const std::string& task,
                           const std::string& metric, const std::string& subset) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& row : rows) {
        if (row.config != config || row.task != task || row.metric != metric) continue;
        if (subset == "unseen" && row.seen) continue;
        if (subset == "seen" && !row.seen) continue;
        sum += row.value;
        ++n;
    }
    return n == 0 ? 0.0 : sum / n;
}

EvalReport evaluate(const StackConfig& config, const std::string& config_label, TaskKind task,
                    const PhyloTree& tree, AdapterBank& bank, TaskAdapter& task_adapter,
                    const Backbone& backbone, const Vocab& vocab,
                    const std::map<std::string, LanguageCorpus>& corpora,
                    const std::vector<std::string>& languages, const EvalOptions& options) {
    EvalReport report;
    for (const auto& iso : languages) {
        auto cit = corpora.find(iso);
        if (cit == corpora.end()) throw ConfigError("evaluate: no corpus for '" + iso + "'");
        const LanguageCorpus& corpus = cit->second;
        AdapterChain chain = assemble_stack(config, iso, tree, bank, &task_adapter);

        EvalRow row;
        row.family = tree.family_of(iso);
        row.iso = iso;
        row.seen = options.unseen.count(iso) == 0;
        row.config = config_label;
        row.task = task_kind_name(task);
        row.seed = options.seed;
        row.param_count = chain.param_count();

        switch (task) {
            case TaskKind::Pos: {
                const auto& head = std::get<PosHead>(task_adapter.head);
                std::vector<int> pred_all, gold_all;
                for (const auto& s : corpus.eval_sentences) {
                    const auto pred = predict_pos(backbone, chain, vocab, s, head);
                    for (size_t i = 0; i < pred.size(); ++i) {
                        pred_all.push_back(pred[i]);
                        gold_all.push_back(s.pos[i]);
                    }
                }
                const F1Scores f1 = pos_f1(pred_all, gold_all);
                row.metric = "micro_f1";
                row.value = f1.micro;
                report.rows.push_back(row);
                row.metric = "macro_f1";
                row.value = f1.macro;
                report.rows.push_back(row);
                break;
            }
            case TaskKind::Dep: {
                const auto& head = std::get<BiaffineHead>(task_adapter.head);
                std::vector<int> pred_all, gold_all;
                for (const auto& s : corpus.eval_sentences) {
                    const auto pred =
                        predict_heads(backbone, chain, vocab, s, head, options.use_mst);
                    for (size_t i = 0; i < pred.size(); ++i) {
                        pred_all.push_back(pred[i]);
                        gold_all.push_back(s.heads[i] > static_cast<int>(pred.size())
                                               ? 0
                                               : s.heads[i]);
                    }
                }
                row.metric = "uas";
                row.value = uas(pred_all, gold_all);
                report.rows.push_back(row);
                break;
            }
            case TaskKind::Nli: {
                const auto& head = std::get<NliHead>(task_adapter.head);
                std::vector<int> pred_all, gold_all;
                for (const auto& ex : corpus.nli_eval) {
                    pred_all.push_back(predict_nli(backbone, chain, vocab, ex, head, nullptr));
                    gold_all.push_back(ex.label);
                }
                row.metric = "accuracy";
                row.value = nli_accuracy(pred_all, gold_all);
                report.rows.push_back(row);
                break;
            }
        }
    }
    return report;
}

}  // namespace phyadapt
