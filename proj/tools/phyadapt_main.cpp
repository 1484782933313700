// phyadapt command line: synthetic-family generation, backbone and
// adapter pretraining, task-adapter training, evaluation, the full
// experiment suite, and checkpoint inspection.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "phyadapt/checkpoint.hpp"
#include "phyadapt/corpus.hpp"
#include "phyadapt/encoder.hpp"
#include "phyadapt/errors.hpp"
#include "phyadapt/phylogeny.hpp"
#include "phyadapt/suite.hpp"
#include "phyadapt/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace phyadapt;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::set<std::string> split_csv(const std::string& s) {
    std::set<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.insert(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.insert(cur);
    return out;
}

void write_report_json(const std::string& path, const EvalReport& report) {
    json rows = json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"family", r.family}, {"iso", r.iso}, {"seen", r.seen},
                        {"config", r.config}, {"task", r.task}, {"metric", r.metric},
                        {"value", r.value}, {"seed", r.seed}, {"param_count", r.param_count}});
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report '" + path + "'");
    out << json{{"format", "phyadapt-evalreport-v1"}, {"rows", rows}}.dump(2) << "\n";
}

struct GenerateArgs {
    std::string spec, out;
    uint64_t seed = 1;
};

struct BackboneArgs {
    std::string corpora, out;
    uint64_t seed = 1;
    int steps = 400;
    std::string exclude;
    int hidden = 64, layers = 2, heads = 4, ffn = 128, max_seq = 32;
    double dropout = 0.1, lr = 1e-3, mask_prob = 0.15;
    int batch = 8, min_freq = 1;
};

struct AdapterArgs {
    std::string backbone, corpora, tree, mode = "joint", out;
    uint64_t seed = 1;
    int steps = 500, d = 16, k = 1, batch = 8;
    double lr = 1e-3, mask_prob = 0.15, clip = 1.0, dropout = 0.1;
    bool include_root = false, upsample = false;
    std::string high_resource, exclude;
};

struct TaskArgs {
    std::string backbone, bank, tree, corpora, task = "pos", source, config = "FGLT", out;
    uint64_t seed = 1;
    int steps = 300, d = 16, k = 1, batch = 8;
    double lr = 1e-3, clip = 1.0, dropout = 0.1;
};

struct EvalArgs {
    std::string backbone, bank, task_adapter, tree, corpora, config = "FGLT", out;
    std::string languages, unseen, override_iso;
    bool mst = false;
    uint64_t seed = 0;
};

struct SuiteArgs {
    std::string manifest, out;
    int jobs = 1;
};

struct InspectArgs {
    std::string checkpoint;
};

int cmd_generate(const GenerateArgs& a) {
    const FamilyGenSpec spec = load_genspec(a.spec);
    const auto corpora = generate_family(spec, a.seed);
    json echo{{"spec", json::parse(serialize_genspec(spec))}, {"seed", a.seed}};
    save_corpora(a.out, corpora, echo.dump());
    std::cerr << "generated " << corpora.size() << " language corpora under " << a.out << "\n";
    return 0;
}

int cmd_pretrain_backbone(const BackboneArgs& a) {
    auto corpora = load_corpora(a.corpora);
    for (const auto& iso : split_csv(a.exclude)) corpora.erase(iso);
    if (corpora.empty()) throw ConfigError("backbone pool is empty after exclusions");
    std::vector<const LanguageCorpus*> ptrs;
    for (const auto& [iso, c] : corpora) ptrs.push_back(&c);
    const Vocab vocab = build_vocab(ptrs, a.min_freq);

    EncoderConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.hidden_dim = a.hidden;
    cfg.num_layers = a.layers;
    cfg.num_heads = a.heads;
    cfg.ffn_dim = a.ffn;
    cfg.max_seq_len = a.max_seq;
    cfg.dropout = a.dropout;

    BackbonePretrainOptions opts;
    opts.lr = a.lr;
    opts.batch_size = a.batch;
    opts.mask_prob = a.mask_prob;
    const auto result = mlm_pretrain_backbone(cfg, corpora, vocab, a.steps, a.seed, opts);
    save_backbone(a.out, result.backbone, vocab);
    std::cerr << "backbone: vocab " << vocab.size() << ", params "
              << result.backbone.param_count() << ", pool of " << result.pool_languages.size()
              << " languages, checksum " << std::hex << result.backbone.checksum() << std::dec
              << "\n";
    if (!result.loss_curve.empty()) {
        std::cerr << "mlm loss " << result.loss_curve.front() << " -> "
                  << result.loss_curve.back() << " over " << result.loss_curve.size()
                  << " steps\n";
    }
    return 0;
}

int cmd_pretrain_adapters(const AdapterArgs& a) {
    Vocab vocab;
    const Backbone backbone = load_backbone(a.backbone, &vocab);
    auto corpora = load_corpora(a.corpora);
    for (const auto& iso : split_csv(a.exclude)) corpora.erase(iso);
    const PhyloTree tree = load_tree(a.tree);

    TrainConfig tc;
    tc.lr = a.lr;
    tc.steps = a.steps;
    tc.batch_size = a.batch;
    tc.mask_prob = a.mask_prob;
    tc.seed = a.seed;
    tc.bottleneck_d = a.d;
    tc.reduction_k = a.k;
    tc.clip_norm = a.clip;
    tc.dropout = a.dropout;

    PretrainMode mode;
    if (a.mode == "joint") mode = PretrainMode::Joint;
    else if (a.mode == "flat") mode = PretrainMode::Flat;
    else if (a.mode == "lll") mode = PretrainMode::TripleFlat;
    else throw ConfigError("unknown mode '" + a.mode + "' (joint|flat|lll)");

    std::map<std::string, double> factors;
    if (a.upsample) {
        factors = upsample_factors(corpora, split_csv(a.high_resource));
    } else {
        for (const auto& [iso, c] : corpora) factors[iso] = 1.0;
    }
    PretrainLog log;
    const AdapterBank bank = pretrain_joint(tree, corpora, vocab, backbone, tc, mode,
                                            a.include_root, &factors, &log);
    save_adapter_bank(a.out, bank);
    std::cerr << "bank: " << bank.adapters.size() << " adapters";
    for (const auto& [node, count] : bank.update_counts) {
        std::cerr << " " << node << ":" << count;
    }
    std::cerr << "\n";
    return 0;
}

int cmd_train_task(const TaskArgs& a) {
    Vocab vocab;
    const Backbone backbone = load_backbone(a.backbone, &vocab);
    AdapterBank bank = a.bank.empty() ? AdapterBank{} : load_adapter_bank(a.bank);
    const PhyloTree tree = load_tree(a.tree);
    const auto corpora = load_corpora(a.corpora);
    auto cit = corpora.find(a.source);
    if (cit == corpora.end()) throw ConfigError("no corpus for source language '" + a.source + "'");

    TrainConfig tc;
    tc.lr = a.lr;
    tc.steps = a.steps;
    tc.batch_size = a.batch;
    tc.seed = a.seed;
    tc.bottleneck_d = a.d;
    tc.reduction_k = a.k;
    tc.clip_norm = a.clip;
    tc.dropout = a.dropout;

    const ConfigToken token = parse_config_token(a.config);
    StackConfig stack = StackConfig::from_code(token.code);
    tc.reduction_k = token.reduction_k > 1 ? token.reduction_k : a.k;

    TaskTrainLog log;
    const TaskAdapter adapter =
        train_task_adapter(bank, tree, backbone, vocab, a.source,
                           task_kind_from_name(a.task), cit->second, stack, tc, &log);
    save_task_adapter(a.out, adapter);
    std::cerr << "task adapter trained on " << a.source << " (" << a.task << ", stack "
              << a.config << ")";
    if (!log.step_losses.empty()) {
        std::cerr << ", loss " << log.step_losses.front() << " -> " << log.step_losses.back();
    }
    std::cerr << "\n";
    return 0;
}

int cmd_evaluate(const EvalArgs& a) {
    Vocab vocab;
    const Backbone backbone = load_backbone(a.backbone, &vocab);
    AdapterBank bank = a.bank.empty() ? AdapterBank{} : load_adapter_bank(a.bank);
    TaskAdapter task = load_task_adapter(a.task_adapter);
    const PhyloTree tree = load_tree(a.tree);
    const auto corpora = load_corpora(a.corpora);

    const ConfigToken token = parse_config_token(a.config);
    StackConfig stack = StackConfig::from_code(token.code);
    if (!a.override_iso.empty()) stack.language_override = a.override_iso;

    std::vector<std::string> langs;
    if (a.languages.empty()) {
        for (const auto& [iso, c] : corpora) langs.push_back(iso);
    } else {
        for (const auto& iso : split_csv(a.languages)) langs.push_back(iso);
    }
    EvalOptions opts;
    opts.use_mst = a.mst;
    opts.seed = a.seed;
    opts.unseen = split_csv(a.unseen);

    const EvalReport report = evaluate(stack, token.label, task.task, tree, bank, task, backbone,
                                       vocab, corpora, langs, opts);
    write_report_json(a.out, report);
    for (const auto& r : report.rows) {
        std::cerr << r.iso << " " << r.metric << " " << r.value << "\n";
    }
    return 0;
}

int cmd_suite(const SuiteArgs& a) {
    const SuiteManifest manifest = load_manifest(a.manifest);
    const SuiteResult result = run_experiment_suite(manifest, a.jobs, &std::cerr);
    write_suite_outputs(result, a.out);
    std::cout << result.summary();
    std::cerr << "suite complete: " << result.rows.size() << " rows -> " << a.out << "\n";
    return 0;
}

int cmd_inspect(const InspectArgs& a) {
    const CheckpointInfo info = inspect_checkpoint(a.checkpoint);
    std::cout << "kind: " << info.kind << "\n";
    std::cout << "version: " << info.version << "\n";
    std::cout << "payload_checksum: " << std::hex << info.payload_checksum << std::dec << "\n";
    std::cout << "tensors: " << info.tensors.size() << "\n";
    for (const auto& t : info.tensors) {
        std::cout << "  " << t.name << " [";
        for (size_t i = 0; i < t.shape.size(); ++i) std::cout << (i ? "x" : "") << t.shape[i];
        std::cout << "] " << t.count << "\n";
    }
    std::cout << "total_params: " << info.total_params() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"phylogeny-routed adapter training on synthetic language families"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* sc_gen = app.add_subcommand("generate", "generate a synthetic family corpus");
    sc_gen->add_option("--spec", gen.spec, "generator spec JSON")->required();
    sc_gen->add_option("--seed", gen.seed, "generation seed");
    sc_gen->add_option("--out", gen.out, "output directory")->required();

    BackboneArgs bb;
    auto* sc_bb = app.add_subcommand("pretrain-backbone", "MLM-pretrain the frozen backbone");
    sc_bb->add_option("--corpora", bb.corpora, "corpus directory")->required();
    sc_bb->add_option("--out", bb.out, "backbone checkpoint path")->required();
    sc_bb->add_option("--seed", bb.seed, "seed");
    sc_bb->add_option("--steps", bb.steps, "training steps");
    sc_bb->add_option("--exclude", bb.exclude, "comma-separated unseen languages");
    sc_bb->add_option("--hidden", bb.hidden, "hidden width");
    sc_bb->add_option("--layers", bb.layers, "encoder layers");
    sc_bb->add_option("--heads", bb.heads, "attention heads");
    sc_bb->add_option("--ffn", bb.ffn, "FFN width");
    sc_bb->add_option("--max-seq", bb.max_seq, "max sequence length");
    sc_bb->add_option("--dropout", bb.dropout, "dropout rate");
    sc_bb->add_option("--lr", bb.lr, "learning rate");
    sc_bb->add_option("--batch", bb.batch, "batch size");
    sc_bb->add_option("--mask-prob", bb.mask_prob, "MLM mask probability");
    sc_bb->add_option("--min-freq", bb.min_freq, "vocabulary min frequency");

    AdapterArgs ad;
    auto* sc_ad = app.add_subcommand("pretrain-adapters", "train the adapter bank");
    sc_ad->add_option("--backbone", ad.backbone, "backbone checkpoint")->required();
    sc_ad->add_option("--corpora", ad.corpora, "corpus directory")->required();
    sc_ad->add_option("--tree", ad.tree, "tree spec JSON")->required();
    sc_ad->add_option("--mode", ad.mode, "joint|flat|lll");
    sc_ad->add_option("--out", ad.out, "bank checkpoint path")->required();
    sc_ad->add_option("--seed", ad.seed, "seed");
    sc_ad->add_option("--steps", ad.steps, "training steps");
    sc_ad->add_option("--d", ad.d, "bottleneck dimension");
    sc_ad->add_option("--k", ad.k, "reduction factor");
    sc_ad->add_option("--batch", ad.batch, "batch size");
    sc_ad->add_option("--lr", ad.lr, "learning rate");
    sc_ad->add_option("--mask-prob", ad.mask_prob, "MLM mask probability");
    sc_ad->add_option("--clip", ad.clip, "gradient clip norm");
    sc_ad->add_option("--dropout", ad.dropout, "dropout rate");
    sc_ad->add_flag("--include-root", ad.include_root, "train a root adapter too");
    sc_ad->add_flag("--upsample", ad.upsample, "token-count-inverse upsampling");
    sc_ad->add_option("--high-resource", ad.high_resource, "languages never upsampled");
    sc_ad->add_option("--exclude", ad.exclude, "languages without adapters (zero-shot)");

    TaskArgs ta;
    auto* sc_ta = app.add_subcommand("train-task", "train a task adapter on a source language");
    sc_ta->add_option("--backbone", ta.backbone, "backbone checkpoint")->required();
    sc_ta->add_option("--bank", ta.bank, "adapter bank checkpoint");
    sc_ta->add_option("--tree", ta.tree, "tree spec JSON")->required();
    sc_ta->add_option("--corpora", ta.corpora, "corpus directory")->required();
    sc_ta->add_option("--task", ta.task, "pos|dep|nli");
    sc_ta->add_option("--source", ta.source, "source language iso")->required();
    sc_ta->add_option("--config", ta.config, "stack config (e.g. FGLT)");
    sc_ta->add_option("--out", ta.out, "task adapter checkpoint path")->required();
    sc_ta->add_option("--seed", ta.seed, "seed");
    sc_ta->add_option("--steps", ta.steps, "training steps");
    sc_ta->add_option("--d", ta.d, "bottleneck dimension");
    sc_ta->add_option("--k", ta.k, "reduction factor");
    sc_ta->add_option("--batch", ta.batch, "batch size");
    sc_ta->add_option("--lr", ta.lr, "learning rate");
    sc_ta->add_option("--clip", ta.clip, "gradient clip norm");
    sc_ta->add_option("--dropout", ta.dropout, "dropout rate");

    EvalArgs ev;
    auto* sc_ev = app.add_subcommand("evaluate", "evaluate a stack on target languages");
    sc_ev->add_option("--backbone", ev.backbone, "backbone checkpoint")->required();
    sc_ev->add_option("--bank", ev.bank, "adapter bank checkpoint");
    sc_ev->add_option("--task-adapter", ev.task_adapter, "task adapter checkpoint")->required();
    sc_ev->add_option("--tree", ev.tree, "tree spec JSON")->required();
    sc_ev->add_option("--corpora", ev.corpora, "corpus directory")->required();
    sc_ev->add_option("--config", ev.config, "stack config (e.g. FGLT)");
    sc_ev->add_option("--out", ev.out, "report JSON path")->required();
    sc_ev->add_option("--languages", ev.languages, "evaluation languages (default all)");
    sc_ev->add_option("--unseen", ev.unseen, "languages to mark unseen");
    sc_ev->add_option("--override", ev.override_iso, "language adapter override (zero-shot)");
    sc_ev->add_flag("--mst", ev.mst, "maximum-spanning-tree arc decoding");
    sc_ev->add_option("--seed", ev.seed, "seed recorded in the report");

    SuiteArgs su;
    auto* sc_su = app.add_subcommand("suite", "run a full experiment manifest");
    sc_su->add_option("--manifest", su.manifest, "suite manifest JSON")->required();
    sc_su->add_option("--out", su.out, "results directory")->required();
    sc_su->add_option("--jobs", su.jobs, "parallel cells");

    InspectArgs in;
    auto* sc_in = app.add_subcommand("inspect", "dump a checkpoint's contents");
    sc_in->add_option("--checkpoint", in.checkpoint, "checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (sc_gen->parsed()) return cmd_generate(gen);
        if (sc_bb->parsed()) return cmd_pretrain_backbone(bb);
        if (sc_ad->parsed()) return cmd_pretrain_adapters(ad);
        if (sc_ta->parsed()) return cmd_train_task(ta);
        if (sc_ev->parsed()) return cmd_evaluate(ev);
        if (sc_su->parsed()) return cmd_suite(su);
        if (sc_in->parsed()) return cmd_inspect(in);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
