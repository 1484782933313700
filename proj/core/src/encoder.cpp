#include "phyadapt/encoder.hpp"

#include <cmath>

#include "phyadapt/errors.hpp"
#include "phyadapt/optimizer.hpp"

namespace phyadapt {

void EncoderConfig::validate() const {
    if (vocab_size < 1 || hidden_dim < 1 || num_layers < 1 || num_heads < 1 || ffn_dim < 1 ||
        max_seq_len < 1) {
        throw ConfigError("encoder config: all dimensions must be >= 1");
    }
    if (hidden_dim % num_heads != 0) {
        throw ConfigError("encoder config: hidden_dim " + std::to_string(hidden_dim) +
                          " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder config: dropout out of [0,1)");
}

Backbone init_backbone(const EncoderConfig& config, uint64_t seed) {
    config.validate();
    Backbone b;
    b.config = config;
    const int h = config.hidden_dim;
    const int dh = config.head_dim();
    const double stddev = 1.0 / std::sqrt(static_cast<double>(h));
    {
        Rng rng(derive_seed(seed, "embeddings"));
        b.tok_emb = Tensor::randn({config.vocab_size, h}, rng, stddev);
        b.pos_emb = Tensor::randn({config.max_seq_len, h}, rng, stddev);
    }
    b.layers.resize(static_cast<size_t>(config.num_layers));
    for (int l = 0; l < config.num_layers; ++l) {
        Rng rng(derive_seed(seed, "layer", static_cast<uint64_t>(l)));
        auto& layer = b.layers[static_cast<size_t>(l)];
        layer.heads.resize(static_cast<size_t>(config.num_heads));
        for (auto& head : layer.heads) {
            head.wq = Tensor::randn({h, dh}, rng, stddev);
            head.bq = Tensor({dh});
            head.wk = Tensor::randn({h, dh}, rng, stddev);
            head.bk = Tensor({dh});
            head.wv = Tensor::randn({h, dh}, rng, stddev);
            head.bv = Tensor({dh});
        }
        layer.wo = Tensor::randn({h, h}, rng, stddev);
        layer.bo = Tensor({h});
        layer.ln1_gamma = Tensor::full({h}, 1.0);
        layer.ln1_beta = Tensor({h});
        layer.w1 = Tensor::randn({h, config.ffn_dim}, rng, stddev);
        layer.b1 = Tensor({config.ffn_dim});
        layer.w2 = Tensor::randn({config.ffn_dim, h}, rng, stddev);
        layer.b2 = Tensor({h});
        layer.ln2_gamma = Tensor::full({h}, 1.0);
        layer.ln2_beta = Tensor({h});
    }
    return b;
}

std::vector<std::pair<std::string, Tensor*>> Backbone::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("tok_emb", &tok_emb);
    out.emplace_back("pos_emb", &pos_emb);
    for (size_t l = 0; l < layers.size(); ++l) {
        auto& layer = layers[l];
        const std::string p = "layer" + std::to_string(l) + ".";
        for (size_t hd = 0; hd < layer.heads.size(); ++hd) {
            const std::string hp = p + "head" + std::to_string(hd) + ".";
            auto& head = layer.heads[hd];
            out.emplace_back(hp + "wq", &head.wq);
            out.emplace_back(hp + "bq", &head.bq);
            out.emplace_back(hp + "wk", &head.wk);
            out.emplace_back(hp + "bk", &head.bk);
            out.emplace_back(hp + "wv", &head.wv);
            out.emplace_back(hp + "bv", &head.bv);
        }
        out.emplace_back(p + "wo", &layer.wo);
        out.emplace_back(p + "bo", &layer.bo);
        out.emplace_back(p + "ln1_gamma", &layer.ln1_gamma);
        out.emplace_back(p + "ln1_beta", &layer.ln1_beta);
        out.emplace_back(p + "w1", &layer.w1);
        out.emplace_back(p + "b1", &layer.b1);
        out.emplace_back(p + "w2", &layer.w2);
        out.emplace_back(p + "b2", &layer.b2);
        out.emplace_back(p + "ln2_gamma", &layer.ln2_gamma);
        out.emplace_back(p + "ln2_beta", &layer.ln2_beta);
    }
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> Backbone::named_params() const {
    auto mut = const_cast<Backbone*>(this)->named_params();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [name, t] : mut) out.emplace_back(name, t);
    return out;
}

int64_t Backbone::param_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : named_params()) n += t->size();
    return n;
}

uint64_t Backbone::checksum() const {
    uint64_t h = 14695981039346656037ULL;
    for (const auto& [name, t] : named_params()) h = checksum_accumulate(h, *t);
    return h;
}

namespace {

// Self-attention + FFN for one row, returning the hidden node after this
// layer's adapter chain.
int layer_forward(Exec& exec, const Backbone& backbone, EncoderLayerParams& layer, int x,
                  const std::vector<uint8_t>& col_valid, const AdapterChain* chain,
                  int layer_index) {
    const bool train_bb = !backbone.frozen;
    const double scale = 1.0 / std::sqrt(static_cast<double>(backbone.config.head_dim()));
    std::vector<int> head_outputs;
    head_outputs.reserve(layer.heads.size());
    for (auto& head : layer.heads) {
        const int q = exec.g.add_row_broadcast(exec.g.matmul(x, exec.weights(head.wq, train_bb)),
                                               exec.weights(head.bq, train_bb));
        const int k = exec.g.add_row_broadcast(exec.g.matmul(x, exec.weights(head.wk, train_bb)),
                                               exec.weights(head.bk, train_bb));
        const int v = exec.g.add_row_broadcast(exec.g.matmul(x, exec.weights(head.wv, train_bb)),
                                               exec.weights(head.bv, train_bb));
        const int scores = exec.g.scale(exec.g.matmul(q, exec.g.transpose(k)), scale);
        const int probs = exec.g.masked_softmax_rows(scores, col_valid);
        head_outputs.push_back(exec.g.matmul(probs, v));
    }
    int attn = exec.g.concat_cols(head_outputs);
    attn = exec.g.add_row_broadcast(exec.g.matmul(attn, exec.weights(layer.wo, train_bb)),
                                    exec.weights(layer.bo, train_bb));
    attn = exec.maybe_dropout(attn);
    int x1 = exec.g.layer_norm(exec.g.add(x, attn), exec.weights(layer.ln1_gamma, train_bb),
                               exec.weights(layer.ln1_beta, train_bb), 1e-5);

    int ffn = exec.g.add_row_broadcast(exec.g.matmul(x1, exec.weights(layer.w1, train_bb)),
                                       exec.weights(layer.b1, train_bb));
    ffn = exec.g.gelu(ffn, backbone.config.gelu_kind);
    ffn = exec.g.add_row_broadcast(exec.g.matmul(ffn, exec.weights(layer.w2, train_bb)),
                                   exec.weights(layer.b2, train_bb));
    ffn = exec.maybe_dropout(ffn);
    // Add -> adapter chain -> norm: the sublayer norm sits after the
    // chain, so language-specific scale drift in swapped adapters never
    // reaches the next layer or the task heads unnormalized.
    int y = exec.g.add(x1, ffn);
    if (chain != nullptr && !chain->empty()) {
        y = chain_forward(exec, y, *chain, layer_index);
    }
    return exec.g.layer_norm(y, exec.weights(layer.ln2_gamma, train_bb),
                             exec.weights(layer.ln2_beta, train_bb), 1e-5);
}

}  // namespace

std::vector<int> encoder_forward_nodes(Exec& exec, const Backbone& backbone,
                                       const TokenBatch& batch, const AdapterChain* chain) {
    const EncoderConfig& cfg = backbone.config;
    if (batch.seq > cfg.max_seq_len) {
        throw InputError("sequence length " + std::to_string(batch.seq) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
    }
    for (size_t i = 0; i < batch.ids.size(); ++i) {
        if (batch.ids[i] < 0 || batch.ids[i] >= cfg.vocab_size) {
            throw InputError("token id " + std::to_string(batch.ids[i]) + " at batch position " +
                             std::to_string(i) + " outside vocabulary of size " +
                             std::to_string(cfg.vocab_size));
        }
    }
    if (chain != nullptr) {
        for (const auto& member : chain->members) {
            if (member.params == nullptr) {
                throw ConfigError("encoder_forward: unresolved adapter '" + member.node_id + "'");
            }
            if (member.params->spec.num_layers != cfg.num_layers) {
                throw ConfigError("adapter '" + member.node_id + "' has " +
                                  std::to_string(member.params->spec.num_layers) +
                                  " layers, encoder has " + std::to_string(cfg.num_layers));
            }
        }
    }
    Backbone& bb = const_cast<Backbone&>(backbone);
    const bool train_bb = !backbone.frozen;
    const int tok_table = exec.weights(bb.tok_emb, train_bb);
    const int pos_table = exec.weights(bb.pos_emb, train_bb);

    std::vector<int> outputs;
    outputs.reserve(static_cast<size_t>(batch.batch));
    for (int b = 0; b < batch.batch; ++b) {
        std::vector<int> row_ids(static_cast<size_t>(batch.seq));
        std::vector<uint8_t> col_valid(static_cast<size_t>(batch.seq));
        for (int s = 0; s < batch.seq; ++s) {
            row_ids[static_cast<size_t>(s)] = batch.id_at(b, s);
            col_valid[static_cast<size_t>(s)] = batch.attn_at(b, s) ? 1 : 0;
        }
        int x = exec.g.add(exec.g.gather_rows(tok_table, row_ids),
                           exec.g.slice_rows(pos_table, 0, batch.seq));
        x = exec.maybe_dropout(x);
        for (int l = 0; l < cfg.num_layers; ++l) {
            x = layer_forward(exec, backbone, bb.layers[static_cast<size_t>(l)], x, col_valid,
                              chain, l);
        }
        outputs.push_back(x);
    }
    return outputs;
}

std::vector<Tensor> encoder_forward(const Backbone& backbone, const TokenBatch& batch,
                                    const AdapterChain* chain) {
    Exec exec;
    auto nodes = encoder_forward_nodes(exec, backbone, batch, chain);
    std::vector<Tensor> out;
    out.reserve(nodes.size());
    for (int n : nodes) out.push_back(exec.g.value(n));
    return out;
}

int mlm_loss_node(Exec& exec, const Backbone& backbone, const TokenBatch& batch,
                  const AdapterChain* chain) {
    if (batch.mlm_labels.size() != batch.ids.size()) {
        throw InputError("mlm_loss_node: batch has no MLM labels; apply_mlm_mask first");
    }
    const auto hidden = encoder_forward_nodes(exec, backbone, batch, chain);
    Backbone& bb = const_cast<Backbone&>(backbone);
    const int emb_t = exec.g.transpose(exec.weights(bb.tok_emb, !backbone.frozen));
    std::vector<int> logit_rows;
    logit_rows.reserve(hidden.size());
    for (int hnode : hidden) logit_rows.push_back(exec.g.matmul(hnode, emb_t));
    const int logits = exec.g.concat_rows(logit_rows);
    return exec.g.cross_entropy(logits, batch.mlm_labels, kIgnoreIndex);
}

double mlm_eval_loss(const Backbone& backbone, const AdapterChain* chain,
                     const LanguageCorpus& corpus, const Vocab& vocab, double mask_prob,
                     uint64_t mask_seed, int batch_size, int max_batches) {
    const auto& sentences = corpus.eval_sentences.empty() ? corpus.sentences
                                                          : corpus.eval_sentences;
    if (sentences.empty()) throw ConfigError("mlm_eval_loss: corpus '" + corpus.iso + "' is empty");
    Rng rng(derive_seed(mask_seed, "mlm-eval:" + corpus.iso));
    double total = 0.0;
    int batches = 0;
    for (size_t start = 0; start < sentences.size() && batches < max_batches;
         start += static_cast<size_t>(batch_size), ++batches) {
        std::vector<const Sentence*> chunk;
        for (size_t i = start; i < std::min(sentences.size(), start + static_cast<size_t>(batch_size)); ++i) {
            chunk.push_back(&sentences[i]);
        }
        TokenBatch batch = make_batch(chunk, vocab, backbone.config.max_seq_len, corpus.iso);
        apply_mlm_mask(batch, mask_prob, vocab, rng);
        bool any_label = false;
        for (int lbl : batch.mlm_labels) any_label = any_label || lbl != kIgnoreIndex;
        if (!any_label) continue;
        Exec exec;
        const int loss = mlm_loss_node(exec, backbone, batch, chain);
        total += exec.g.value(loss).item();
    }
    if (batches == 0) throw ConfigError("mlm_eval_loss: no evaluable batches");
    return total / batches;
}

BackbonePretrainResult mlm_pretrain_backbone(const EncoderConfig& config,
                                             const std::map<std::string, LanguageCorpus>& pool,
                                             const Vocab& vocab, int steps, uint64_t seed,
                                             const BackbonePretrainOptions& options) {
    if (pool.empty()) throw ConfigError("mlm_pretrain_backbone: empty corpus pool");
    EncoderConfig cfg = config;
    if (cfg.vocab_size == 0) cfg.vocab_size = vocab.size();
    if (cfg.vocab_size != vocab.size()) {
        throw ConfigError("mlm_pretrain_backbone: config vocab_size " +
                          std::to_string(cfg.vocab_size) + " != vocabulary size " +
                          std::to_string(vocab.size()));
    }
    BackbonePretrainResult result;
    result.backbone = init_backbone(cfg, seed);
    for (const auto& [iso, c] : pool) result.pool_languages.push_back(iso);
    if (steps == 0) return result;

    result.backbone.frozen = false;
    // Natural (unweighted) language exposure: factors all 1.
    std::map<std::string, double> factors;
    for (const auto& [iso, c] : pool) factors[iso] = 1.0;
    BatchStream stream(pool, factors, options.batch_size, cfg.max_seq_len, vocab,
                       derive_seed(seed, "backbone-stream"));
    Rng mask_rng(derive_seed(seed, "backbone-mask"));
    Rng dropout_rng(derive_seed(seed, "backbone-dropout"));
    Adam adam(options.lr);
    for (int step = 0; step < steps; ++step) {
        TokenBatch batch = stream.next();
        apply_mlm_mask(batch, options.mask_prob, vocab, mask_rng);
        bool any_label = false;
        for (int lbl : batch.mlm_labels) any_label = any_label || lbl != kIgnoreIndex;
        if (!any_label) {
            result.loss_curve.push_back(result.loss_curve.empty() ? 0.0 : result.loss_curve.back());
            continue;
        }
        Exec exec;
        exec.training = true;
        exec.dropout_rate = cfg.dropout;
        exec.dropout_rng = &dropout_rng;
        const int loss = mlm_loss_node(exec, result.backbone, batch, nullptr);
        result.loss_curve.push_back(exec.g.value(loss).item());
        exec.g.backward(loss);
        adam.step(exec, options.clip_norm);
    }
    result.backbone.frozen = true;
    return result;
}

}  // namespace phyadapt
