#include "phyadapt/suite.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "phyadapt/errors.hpp"

namespace phyadapt {

using nlohmann::json;
namespace fs = std::filesystem;

ConfigToken parse_config_token(const std::string& text) {
    ConfigToken token;
    token.label = text;
    std::vector<std::string> parts;
    std::string cur;
    for (char c : text) {
        if (c == '@') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(cur);
    if (parts.empty() || parts[0].empty()) throw ConfigError("empty config token");
    token.code = stack_code_from_name(parts[0]);
    for (size_t i = 1; i < parts.size(); ++i) {
        const std::string& mod = parts[i];
        if (mod == "random") {
            token.random_tree = true;
        } else if (mod.size() > 1 && mod[0] == 'k') {
            token.reduction_k = std::stoi(mod.substr(1));
            if (token.reduction_k < 1) throw ConfigError("bad reduction factor in '" + text + "'");
        } else {
            throw ConfigError("unknown config modifier '@" + mod + "' in '" + text + "'");
        }
    }
    return token;
}

SuiteManifest parse_manifest(const std::string& json_text, const std::string& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
    }
    SuiteManifest m;
    if (doc.contains("generator") && doc["generator"].is_object()) {
        m.generator = parse_genspec(doc["generator"].dump(), base_dir);
    } else if (doc.contains("generator_file")) {
        fs::path p = doc["generator_file"].get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
        m.generator = load_genspec(p.string());
    } else {
        throw ValidationError("manifest needs 'generator' (inline) or 'generator_file'");
    }
    if (!doc.contains("configs") || !doc["configs"].is_array() || doc["configs"].empty()) {
        throw ValidationError("manifest needs a non-empty 'configs' list");
    }
    for (const auto& c : doc["configs"]) m.configs.push_back(parse_config_token(c.get<std::string>()));
    if (!doc.contains("tasks") || doc["tasks"].empty()) {
        throw ValidationError("manifest needs a non-empty 'tasks' list");
    }
    for (const auto& t : doc["tasks"]) m.tasks.push_back(task_kind_from_name(t.get<std::string>()));
    if (!doc.contains("seeds") || doc["seeds"].empty()) {
        throw ValidationError("manifest needs a non-empty 'seeds' list");
    }
    for (const auto& s : doc["seeds"]) m.seeds.push_back(s.get<uint64_t>());
    m.source_language = doc.value("source_language", std::string());
    if (m.source_language.empty()) throw ValidationError("manifest needs 'source_language'");
    if (doc.contains("unseen_languages")) {
        for (const auto& l : doc["unseen_languages"]) m.unseen_languages.insert(l.get<std::string>());
    }
    if (doc.contains("zero_shot")) {
        for (const auto& l : doc["zero_shot"]["languages"]) {
            m.zero_shot_languages.insert(l.get<std::string>());
        }
        if (doc["zero_shot"].contains("override")) {
            m.zero_shot_override = doc["zero_shot"]["override"].get<std::string>();
        }
    }
    if (doc.contains("eval_languages")) {
        for (const auto& l : doc["eval_languages"]) m.eval_languages.push_back(l.get<std::string>());
    }
    m.upsample = doc.value("upsample", false);
    if (doc.contains("high_resource")) {
        for (const auto& l : doc["high_resource"]) m.high_resource.insert(l.get<std::string>());
    }
    if (doc.contains("random_tree")) {
        std::vector<int> sizes = doc["random_tree"].at("group_sizes").get<std::vector<int>>();
        std::vector<std::string> probes;
        if (doc["random_tree"].contains("probes")) {
            probes = doc["random_tree"]["probes"].get<std::vector<std::string>>();
        }
        m.random_tree_plan = {sizes, probes};
    }
    if (doc.contains("hyper")) {
        const auto& h = doc["hyper"];
        if (h.contains("encoder")) {
            const auto& e = h["encoder"];
            m.hyper.encoder.hidden_dim = e.value("hidden_dim", m.hyper.encoder.hidden_dim);
            m.hyper.encoder.num_layers = e.value("num_layers", m.hyper.encoder.num_layers);
            m.hyper.encoder.num_heads = e.value("num_heads", m.hyper.encoder.num_heads);
            m.hyper.encoder.ffn_dim = e.value("ffn_dim", m.hyper.encoder.ffn_dim);
            m.hyper.encoder.max_seq_len = e.value("max_seq_len", m.hyper.encoder.max_seq_len);
            m.hyper.encoder.dropout = e.value("dropout", m.hyper.encoder.dropout);
        }
        m.hyper.backbone_steps = h.value("backbone_steps", m.hyper.backbone_steps);
        m.hyper.mlm_steps = h.value("mlm_steps", m.hyper.mlm_steps);
        m.hyper.task_steps = h.value("task_steps", m.hyper.task_steps);
        m.hyper.lr = h.value("lr", m.hyper.lr);
        m.hyper.adapter_lr = h.value("adapter_lr", m.hyper.lr);
        m.hyper.task_lr = h.value("task_lr", m.hyper.lr);
        m.hyper.batch_size = h.value("batch_size", m.hyper.batch_size);
        m.hyper.mask_prob = h.value("mask_prob", m.hyper.mask_prob);
        m.hyper.bottleneck_d = h.value("bottleneck_d", m.hyper.bottleneck_d);
        m.hyper.clip_norm = h.value("clip_norm", m.hyper.clip_norm);
        m.hyper.use_mst = h.value("use_mst", m.hyper.use_mst);
    }
    for (const auto& token : m.configs) {
        if (token.random_tree && !m.random_tree_plan) {
            throw ValidationError("config '" + token.label + "' needs a 'random_tree' plan");
        }
    }
    return m;
}

SuiteManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_manifest(buf.str(), fs::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// Execution

namespace {

struct SeedContext {
    uint64_t seed = 0;
    std::map<std::string, LanguageCorpus> corpora;          // all generated
    std::map<std::string, LanguageCorpus> adapter_corpora;  // minus zero-shot
    std::map<std::string, double> factors;
    Vocab vocab;
    Backbone backbone;
    PhyloTree random_tree_instance;
    bool has_random_tree = false;
    std::map<std::string, AdapterBank> banks;  // by bank key
};

std::string bank_key(const ConfigToken& token) {
    PretrainMode mode = PretrainMode::Joint;
    if (token.code == StackCode::T) return "";  // no language adapters
    if (token.code == StackCode::LT) mode = PretrainMode::Flat;
    if (token.code == StackCode::LLLT) mode = PretrainMode::TripleFlat;
    std::string key = mode == PretrainMode::Joint ? "joint"
                      : mode == PretrainMode::Flat ? "flat"
                                                   : "triple";
    key += "|k" + std::to_string(token.reduction_k);
    key += token.random_tree ? "|random" : "|phylo";
    if (token.code == StackCode::RFGLT) key += "|root";
    return key;
}

PretrainMode bank_mode(const std::string& key) {
    if (key.rfind("joint", 0) == 0) return PretrainMode::Joint;
    if (key.rfind("flat", 0) == 0) return PretrainMode::Flat;
    return PretrainMode::TripleFlat;
}

void run_parallel(int jobs, int total, const std::function<void(int)>& fn) {
    if (jobs <= 1 || total <= 1) {
        for (int i = 0; i < total; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    std::exception_ptr first_error;
    std::mutex error_mu;
    const int n_workers = std::min(jobs, total);
    for (int w = 0; w < n_workers; ++w) {
        workers.emplace_back([&]() {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= total) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::string format_value(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace

double SuiteResult::mean_over_seeds(const std::string& config, const std::string& task,
                                    const std::string& metric, const std::string& subset) const {
    // Mean of per-seed subset averages (each seed weighted equally).
    std::map<uint64_t, std::pair<double, int>> by_seed;
    for (const auto& row : rows) {
        if (row.config != config || row.task != task || row.metric != metric) continue;
        if (subset == "unseen" && row.seen) continue;
        if (subset == "seen" && !row.seen) continue;
        auto& [sum, n] = by_seed[row.seed];
        sum += row.value;
        ++n;
    }
    if (by_seed.empty()) return 0.0;
    double total = 0.0;
    for (const auto& [seed, acc] : by_seed) total += acc.first / acc.second;
    return total / static_cast<double>(by_seed.size());
}

std::string SuiteResult::csv() const {
    std::ostringstream os;
    os << "family,iso,seen,config,task,metric,value,seed,param_count\n";
    for (const auto& r : rows) {
        os << r.family << ',' << r.iso << ',' << (r.seen ? "true" : "false") << ',' << r.config
           << ',' << r.task << ',' << r.metric << ',' << format_value(r.value) << ',' << r.seed
           << ',' << r.param_count << '\n';
    }
    return os.str();
}

std::string SuiteResult::summary() const {
    // Table-2-style layout: per task/metric, one line per config with
    // "unseen (all)" seed-mean averages.
    std::set<std::pair<std::string, std::string>> task_metrics;
    std::vector<std::string> config_order;
    for (const auto& r : rows) {
        task_metrics.insert({r.task, r.metric});
        if (std::find(config_order.begin(), config_order.end(), r.config) == config_order.end()) {
            config_order.push_back(r.config);
        }
    }
    std::ostringstream os;
    for (const auto& [task, metric] : task_metrics) {
        os << "== task " << task << " (" << metric << "), unseen (all) ==\n";
        for (const auto& config : config_order) {
            const double unseen = mean_over_seeds(config, task, metric, "unseen");
            const double all = mean_over_seeds(config, task, metric, "all");
            os << "  " << std::left << std::setw(14) << config << std::right << std::fixed
               << std::setprecision(4) << unseen << " (" << all << ")\n";
        }
    }
    return os.str();
}

SuiteResult run_experiment_suite(const SuiteManifest& manifest, int jobs, std::ostream* log) {
    SuiteResult result;
    std::mutex note_mu;
    auto note = [&](const std::string& s) {
        std::lock_guard<std::mutex> lock(note_mu);
        result.notes.push_back(s);
        if (log) (*log) << s << "\n";
    };

    // Distinct banks demanded by the config list.
    std::set<std::string> bank_keys;
    for (const auto& token : manifest.configs) {
        const std::string key = bank_key(token);
        if (!key.empty()) bank_keys.insert(key);
    }

    // Parameter-budget identities are checked up front, before any
    // training (3-member stacks at d/k against one adapter at d).
    for (const auto& token : manifest.configs) {
        if (token.reduction_k == 1) continue;
        const int levels = token.code == StackCode::LLLT
                               ? kTripleStackCopies
                               : static_cast<int>(stack_levels(token.code).size());
        if (levels != token.reduction_k) continue;
        AdapterSpec reduced;
        reduced.hidden_dim = manifest.hyper.encoder.hidden_dim;
        reduced.bottleneck_dim =
            constrained_bottleneck(manifest.hyper.bottleneck_d, token.reduction_k);
        reduced.num_layers = manifest.hyper.encoder.num_layers;
        AdapterSpec full = reduced;
        full.bottleneck_dim = manifest.hyper.bottleneck_d;
        if (param_count(reduced) * levels != param_count(full)) {
            throw ConfigError("parameter identity violated for '" + token.label + "'");
        }
        note("identity: " + std::to_string(levels) + " x param_count(d/" +
             std::to_string(token.reduction_k) + ") == param_count(d) == " +
             std::to_string(param_count(full)) + " [" + token.label + "]");
    }

    // Phase A: per-seed corpora, backbone, and adapter banks.
    std::vector<std::unique_ptr<SeedContext>> contexts(manifest.seeds.size());
    run_parallel(jobs, static_cast<int>(manifest.seeds.size()), [&](int si) {
        auto ctx = std::make_unique<SeedContext>();
        ctx->seed = manifest.seeds[static_cast<size_t>(si)];
        ctx->corpora = generate_family(manifest.generator, ctx->seed);

        std::map<std::string, LanguageCorpus> pool;
        for (const auto& [iso, corpus] : ctx->corpora) {
            const bool unseen = manifest.unseen_languages.count(iso) ||
                                manifest.zero_shot_languages.count(iso);
            if (!unseen) pool.emplace(iso, corpus);
            if (!manifest.zero_shot_languages.count(iso) && !corpus.sentences.empty()) {
                ctx->adapter_corpora.emplace(iso, corpus);
            }
        }
        if (pool.empty()) throw ConfigError("suite: every language is marked unseen");
        std::string pool_names;
        for (const auto& [iso, corpus] : pool) {
            pool_names += pool_names.empty() ? iso : "," + iso;
        }
        // Vocabulary covers the whole adapter-training mix: unseen
        // languages keep in-vocabulary word forms whose embeddings the
        // backbone simply never pretrains (they stay at init), the way a
        // multilingual model's subword space covers languages it never
        // saw. Zero-shot languages are outside the mix entirely.
        std::vector<const LanguageCorpus*> vocab_ptrs;
        for (const auto& [iso, corpus] : ctx->adapter_corpora) vocab_ptrs.push_back(&corpus);
        ctx->vocab = build_vocab(vocab_ptrs, 1);
        EncoderConfig enc = manifest.hyper.encoder;
        enc.vocab_size = ctx->vocab.size();

        BackbonePretrainOptions opts;
        opts.lr = manifest.hyper.lr;
        opts.batch_size = manifest.hyper.batch_size;
        opts.mask_prob = manifest.hyper.mask_prob;
        opts.clip_norm = manifest.hyper.clip_norm;
        auto pre = mlm_pretrain_backbone(enc, pool, ctx->vocab, manifest.hyper.backbone_steps,
                                         derive_seed(ctx->seed, "suite-backbone"), opts);
        ctx->backbone = std::move(pre.backbone);
        note("seed " + std::to_string(ctx->seed) + ": backbone pool [" + pool_names + "], vocab " +
             std::to_string(ctx->vocab.size()));

        if (manifest.upsample) {
            ctx->factors = upsample_factors(ctx->adapter_corpora, manifest.high_resource);
        } else {
            for (const auto& [iso, c] : ctx->adapter_corpora) ctx->factors[iso] = 1.0;
        }

        if (manifest.random_tree_plan) {
            // All generated languages are leaves so evaluation can route
            // zero-shot languages through the counterfactual tree too.
            std::vector<std::string> langs;
            for (const auto& [iso, c] : ctx->corpora) langs.push_back(iso);
            ctx->random_tree_instance =
                random_tree(langs, manifest.random_tree_plan->first,
                            derive_seed(ctx->seed, "suite-random-tree"),
                            manifest.random_tree_plan->second);
            ctx->has_random_tree = true;
        }

        for (const auto& key : bank_keys) {
            TrainConfig tc;
            tc.lr = manifest.hyper.adapter_lr;
            tc.steps = manifest.hyper.mlm_steps;
            tc.batch_size = manifest.hyper.batch_size;
            tc.mask_prob = manifest.hyper.mask_prob;
            tc.seed = derive_seed(ctx->seed, "suite-bank:" + key);
            tc.bottleneck_d = manifest.hyper.bottleneck_d;
            tc.reduction_k = 1;
            tc.clip_norm = manifest.hyper.clip_norm;
            tc.dropout = manifest.hyper.encoder.dropout;
            // Keys embed the reduction factor: parse it back out.
            const auto kpos = key.find("|k");
            tc.reduction_k = std::stoi(key.substr(kpos + 2));
            const bool use_random = key.find("|random") != std::string::npos;
            const bool with_root = key.find("|root") != std::string::npos;
            const PhyloTree& tree =
                use_random ? ctx->random_tree_instance : manifest.generator.tree;
            ctx->banks.emplace(key, pretrain_joint(tree, ctx->adapter_corpora, ctx->vocab,
                                                   ctx->backbone, tc, bank_mode(key), with_root,
                                                   &ctx->factors, nullptr));
            note("seed " + std::to_string(ctx->seed) + ": bank '" + key + "' trained");
        }
        contexts[static_cast<size_t>(si)] = std::move(ctx);
    });

    // Phase B: one cell per (seed, config, task).
    struct CellSpec {
        int seed_index;
        int config_index;
        int task_index;
    };
    std::vector<CellSpec> cell_specs;
    for (int si = 0; si < static_cast<int>(manifest.seeds.size()); ++si) {
        for (int ci = 0; ci < static_cast<int>(manifest.configs.size()); ++ci) {
            for (int ti = 0; ti < static_cast<int>(manifest.tasks.size()); ++ti) {
                cell_specs.push_back({si, ci, ti});
            }
        }
    }
    std::vector<SuiteCell> cells(cell_specs.size());
    run_parallel(jobs, static_cast<int>(cell_specs.size()), [&](int i) {
        const CellSpec& spec = cell_specs[static_cast<size_t>(i)];
        SeedContext& ctx = *contexts[static_cast<size_t>(spec.seed_index)];
        const ConfigToken& token = manifest.configs[static_cast<size_t>(spec.config_index)];
        const TaskKind task = manifest.tasks[static_cast<size_t>(spec.task_index)];
        const PhyloTree& tree =
            token.random_tree ? ctx.random_tree_instance : manifest.generator.tree;

        static AdapterBank empty_bank;
        AdapterBank& bank =
            bank_key(token).empty() ? empty_bank : ctx.banks.at(bank_key(token));

        StackConfig stack = StackConfig::from_code(token.code);
        stack.language_override = manifest.zero_shot_override;

        TrainConfig tc;
        tc.lr = manifest.hyper.task_lr;
        tc.steps = manifest.hyper.task_steps;
        tc.batch_size = manifest.hyper.batch_size;
        tc.mask_prob = manifest.hyper.mask_prob;
        tc.seed = derive_seed(ctx.seed, "suite-task:" + token.label + ":" + task_kind_name(task));
        tc.bottleneck_d = manifest.hyper.bottleneck_d;
        tc.reduction_k = token.reduction_k;
        tc.clip_norm = manifest.hyper.clip_norm;
        tc.dropout = manifest.hyper.encoder.dropout;

        auto sit = ctx.corpora.find(manifest.source_language);
        if (sit == ctx.corpora.end()) {
            throw ConfigError("source language '" + manifest.source_language + "' not generated");
        }
        TaskAdapter adapter = train_task_adapter(bank, tree, ctx.backbone, ctx.vocab,
                                                 manifest.source_language, task, sit->second,
                                                 stack, tc, nullptr);

        std::vector<std::string> eval_langs = manifest.eval_languages;
        if (eval_langs.empty()) {
            for (const auto& [iso, c] : ctx.corpora) eval_langs.push_back(iso);
        }
        EvalOptions opts;
        opts.use_mst = manifest.hyper.use_mst;
        opts.seed = ctx.seed;
        opts.unseen = manifest.unseen_languages;
        for (const auto& z : manifest.zero_shot_languages) opts.unseen.insert(z);

        SuiteCell cell;
        cell.config = token.label;
        cell.task = task_kind_name(task);
        cell.seed = ctx.seed;
        cell.report = evaluate(stack, token.label, task, tree, bank, adapter, ctx.backbone,
                               ctx.vocab, ctx.corpora, eval_langs, opts);
        cells[static_cast<size_t>(i)] = std::move(cell);
        note("seed " + std::to_string(ctx.seed) + ": cell " + token.label + "/" +
             task_kind_name(task) + " done");
    });

    result.cells = std::move(cells);
    for (const auto& cell : result.cells) {
        result.rows.insert(result.rows.end(), cell.report.rows.begin(), cell.report.rows.end());
    }
    std::sort(result.rows.begin(), result.rows.end(), [](const EvalRow& a, const EvalRow& b) {
        return std::tie(a.family, a.iso, a.config, a.task, a.metric, a.seed) <
               std::tie(b.family, b.iso, b.config, b.task, b.metric, b.seed);
    });
    std::sort(result.notes.begin(), result.notes.end());
    return result;
}

void write_suite_outputs(const SuiteResult& result, const std::string& out_dir) {
    fs::create_directories(fs::path(out_dir) / "cells");
    {
        std::ofstream csv(fs::path(out_dir) / "results.csv");
        if (!csv) throw IoError("cannot write results.csv under '" + out_dir + "'");
        csv << result.csv();
    }
    {
        std::ofstream sum(fs::path(out_dir) / "summary.txt");
        sum << result.summary();
    }
    {
        std::ofstream notes(fs::path(out_dir) / "notes.txt");
        for (const auto& n : result.notes) notes << n << "\n";
    }
    for (const auto& cell : result.cells) {
        json rows = json::array();
        for (const auto& r : cell.report.rows) {
            rows.push_back({{"family", r.family},
                            {"iso", r.iso},
                            {"seen", r.seen},
                            {"config", r.config},
                            {"task", r.task},
                            {"metric", r.metric},
                            {"value", r.value},
                            {"seed", r.seed},
                            {"param_count", r.param_count}});
        }
        json doc{{"format", "phyadapt-evalreport-v1"},
                 {"config", cell.config},
                 {"task", cell.task},
                 {"seed", cell.seed},
                 {"rows", rows}};
        std::ofstream f(fs::path(out_dir) / "cells" /
                        (cell.config + "_" + cell.task + "_seed" + std::to_string(cell.seed) +
                         ".json"));
        f << doc.dump(2) << "\n";
    }
}

}  // namespace phyadapt
