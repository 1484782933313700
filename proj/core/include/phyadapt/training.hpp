#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "phyadapt/adapters.hpp"
#include "phyadapt/corpus.hpp"
#include "phyadapt/encoder.hpp"
#include "phyadapt/phylogeny.hpp"
#include "phyadapt/stack_config.hpp"
#include "phyadapt/tasks.hpp"

namespace phyadapt {

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int steps = 500;
    int batch_size = 8;
    double mask_prob = 0.15;
    uint64_t seed = 1;
    int bottleneck_d = 16;
    int reduction_k = 1;  // 1 or 3; effective bottleneck is d / k
    double clip_norm = 1.0;
    double dropout = 0.1;

    int effective_bottleneck() const;
    void validate() const;
};

// Joint: each single-language batch updates the adapters on its routing
// path ([F,G,L], plus R when include_root). Flat: the baseline, each
// language adapter trained on its own language only. TripleFlat: three
// independently initialized copies of each language adapter, trained
// jointly on that language (the deep-vs-wide ablation).
enum class PretrainMode { Joint, Flat, TripleFlat };

struct PretrainLog {
    // (iso, loss) per step, in step order.
    std::vector<std::pair<std::string, double>> step_losses;

    double first_window_mean(const std::string& iso, int window = 20) const;
    double last_window_mean(const std::string& iso, int window = 20) const;
};

std::string triple_copy_node_id(const std::string& leaf_node_id, int copy);

// Init stream for a bank adapter. Language-level adapters share one init
// per run (copy index included for LLLT stacks): swapping L:src for
// L:tgt then exchanges parameters that grew from the same starting
// point, which keeps zero-shot substitution meaningful.
uint64_t bank_init_seed(uint64_t run_seed, const std::string& node_id);

AdapterBank pretrain_joint(const PhyloTree& tree,
                           const std::map<std::string, LanguageCorpus>& corpora,
                           const Vocab& vocab, const Backbone& backbone,
                           const TrainConfig& config, PretrainMode mode,
                           bool include_root = false,
                           const std::map<std::string, double>* factors = nullptr,
                           PretrainLog* log = nullptr);

struct TaskTrainLog {
    std::vector<double> step_losses;
};

// Language chain for `config` routed at `iso`, all members frozen. The
// language_override substitutes the override language's adapter when the
// target's is missing from the bank. Missing nodes without an override
// raise ConfigError naming the node.
AdapterChain language_chain(const StackConfig& config, const std::string& iso,
                            const PhyloTree& tree, AdapterBank& bank);

// Full inference chain: language chain plus the task adapter on top.
AdapterChain assemble_stack(const StackConfig& config, const std::string& target_iso,
                            const PhyloTree& tree, AdapterBank& bank, TaskAdapter* task);

TaskAdapter train_task_adapter(AdapterBank& bank, const PhyloTree& tree,
                               const Backbone& backbone, const Vocab& vocab,
                               const std::string& source_iso, TaskKind task,
                               const LanguageCorpus& source_data, const StackConfig& stack,
                               const TrainConfig& config, TaskTrainLog* log = nullptr);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
    std::string family;
    std::string iso;
    bool seen = true;
    std::string config;
    std::string task;
    std::string metric;
    double value = 0.0;
    uint64_t seed = 0;
    int64_t param_count = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;

    // Mean over rows matching (config, task, metric); subset: "unseen",
    // "seen" or "all".
    double average(const std::string& config, const std::string& task, const std::string& metric,
                   const std::string& subset) const;
};

// Value-level task predictions for one language.
std::vector<int> predict_pos(const Backbone& backbone, const AdapterChain& chain,
                             const Vocab& vocab, const Sentence& sentence, const PosHead& head);
std::vector<int> predict_heads(const Backbone& backbone, const AdapterChain& chain,
                               const Vocab& vocab, const Sentence& sentence,
                               const BiaffineHead& head, bool use_mst = false);
int predict_nli(const Backbone& backbone, const AdapterChain& chain, const Vocab& vocab,
                const NliExample& example, const NliHead& head,
                bool* truncated = nullptr);

struct EvalOptions {
    bool use_mst = false;
    uint64_t seed = 0;
    std::set<std::string> unseen;  // languages excluded from backbone pretraining
};

// Per-language metrics for one (config, task) cell over the given
// evaluation corpora.
EvalReport evaluate(const StackConfig& config, const std::string& config_label,
                    TaskKind task, const PhyloTree& tree, AdapterBank& bank,
                    TaskAdapter& task_adapter, const Backbone& backbone, const Vocab& vocab,
                    const std::map<std::string, LanguageCorpus>& corpora,
                    const std::vector<std::string>& languages, const EvalOptions& options);

}  // namespace phyadapt
