#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "phyadapt/corpus.hpp"
#include "phyadapt/training.hpp"

namespace phyadapt {

// One entry of the manifest's config list: a stack code plus modifiers.
// Grammar: CODE[@kN][@random], e.g. "FGLT", "FGLT@k3", "FGLT@random".
struct ConfigToken {
    std::string label;  // literal manifest string, used in reports
    StackCode code = StackCode::FGLT;
    int reduction_k = 1;
    bool random_tree = false;
};

ConfigToken parse_config_token(const std::string& text);

struct SuiteHyper {
    EncoderConfig encoder;       // vocab_size filled per seed
    int backbone_steps = 400;
    int mlm_steps = 500;
    int task_steps = 300;
    double lr = 1e-3;         // backbone pretraining
    double adapter_lr = 1e-3; // bank MLM training
    double task_lr = 1e-3;    // task adapter + head
    int batch_size = 8;
    double mask_prob = 0.15;
    int bottleneck_d = 12;
    double clip_norm = 1.0;
    bool use_mst = false;
};

struct SuiteManifest {
    FamilyGenSpec generator;
    std::vector<ConfigToken> configs;
    std::vector<TaskKind> tasks;
    std::vector<uint64_t> seeds;
    std::string source_language;
    std::set<std::string> unseen_languages;   // excluded from backbone pool
    std::set<std::string> zero_shot_languages; // excluded from adapter training too
    std::optional<std::string> zero_shot_override;
    std::vector<std::string> eval_languages;  // default: all generated
    bool upsample = false;
    std::set<std::string> high_resource;      // never upsampled
    std::optional<std::pair<std::vector<int>, std::vector<std::string>>> random_tree_plan;
    SuiteHyper hyper;
};

SuiteManifest parse_manifest(const std::string& json_text, const std::string& base_dir = "");
SuiteManifest load_manifest(const std::string& path);

struct SuiteCell {
    std::string config;
    std::string task;
    uint64_t seed = 0;
    EvalReport report;
};

struct SuiteResult {
    std::vector<EvalRow> rows;  // merged and deterministically sorted
    std::vector<SuiteCell> cells;
    std::vector<std::string> notes;  // recorded facts (pool, identities checked)

    std::string csv() const;
    std::string summary() const;
    double mean_over_seeds(const std::string& config, const std::string& task,
                           const std::string& metric, const std::string& subset) const;
};

// Full grid: generate -> backbone pretrain -> adapter pretraining (one
// bank per distinct mode/reduction/tree) -> task training -> evaluation,
// for every (config, task, seed). `jobs` bounds worker threads; results
// are independent of the schedule.
SuiteResult run_experiment_suite(const SuiteManifest& manifest, int jobs = 1,
                                 std::ostream* log = nullptr);

// Results bundle on disk: merged CSV, per-cell JSON reports, summary.
void write_suite_outputs(const SuiteResult& result, const std::string& out_dir);

}  // namespace phyadapt
