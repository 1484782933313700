#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "phyadapt/adapters.hpp"
#include "phyadapt/corpus.hpp"
#include "phyadapt/exec.hpp"
#include "phyadapt/tensor.hpp"

namespace phyadapt {

struct EncoderConfig {
    int vocab_size = 0;
    int hidden_dim = 64;
    int num_layers = 2;
    int num_heads = 4;
    int ffn_dim = 256;
    int max_seq_len = 32;
    double dropout = 0.1;
    GeluKind gelu_kind = GeluKind::TanhApprox;

    int head_dim() const { return hidden_dim / num_heads; }
    void validate() const;
};

struct AttentionHeadParams {
    Tensor wq, bq, wk, bk, wv, bv;  // [h x dh], [dh]
};

struct EncoderLayerParams {
    std::vector<AttentionHeadParams> heads;
    Tensor wo, bo;              // [h x h], [h]
    Tensor ln1_gamma, ln1_beta;
    Tensor w1, b1, w2, b2;      // FFN
    Tensor ln2_gamma, ln2_beta;
};

// BERT-style encoder backbone. Post-LN sublayers; learned absolute
// position embeddings; MLM output projection tied to the token
// embeddings (logits = hidden * tok_emb^T), so Backbone's field list is
// the complete parameter set. `frozen` controls whether forward passes
// register its tensors as gradient targets.
class Backbone {
public:
    EncoderConfig config;
    Tensor tok_emb;  // [vocab x h]
    Tensor pos_emb;  // [max_seq_len x h]
    std::vector<EncoderLayerParams> layers;
    bool frozen = true;

    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;
    int64_t param_count() const;
    uint64_t checksum() const;
};

Backbone init_backbone(const EncoderConfig& config, uint64_t seed);

// Forward for one batch. Returns the final hidden node per batch row,
// each [seq x h]; the adapter chain (may be null/empty) is applied after
// each layer's FFN sublayer norm, root-first. Padding columns are masked
// out of attention so pad values can never reach non-pad positions.
std::vector<int> encoder_forward_nodes(Exec& exec, const Backbone& backbone,
                                       const TokenBatch& batch, const AdapterChain* chain);

// Value-level convenience (no gradients): hidden states per batch row.
std::vector<Tensor> encoder_forward(const Backbone& backbone, const TokenBatch& batch,
                                    const AdapterChain* chain);

// MLM loss over the batch's masked positions (tied output embeddings).
// Throws InputError when the batch has no masked position.
int mlm_loss_node(Exec& exec, const Backbone& backbone, const TokenBatch& batch,
                  const AdapterChain* chain);

// Mean MLM loss of a corpus under a deterministic evaluation mask;
// perplexity = exp(loss).
double mlm_eval_loss(const Backbone& backbone, const AdapterChain* chain,
                     const LanguageCorpus& corpus, const Vocab& vocab, double mask_prob,
                     uint64_t mask_seed, int batch_size = 8, int max_batches = 16);

struct BackbonePretrainResult {
    Backbone backbone;
    std::vector<double> loss_curve;          // per step
    std::vector<std::string> pool_languages; // recorded for the run manifest
};

struct BackbonePretrainOptions {
    double lr = 1e-3;
    int batch_size = 8;
    double mask_prob = 0.15;
    double clip_norm = 1.0;
};

// Simulated multilingual pretraining stage: the backbone itself is
// trained with MLM on the pooled corpora (no adapters, no upsampling).
// Languages excluded from the pool model the "unseen" condition.
BackbonePretrainResult mlm_pretrain_backbone(const EncoderConfig& config,
                                             const std::map<std::string, LanguageCorpus>& pool,
                                             const Vocab& vocab, int steps, uint64_t seed,
                                             const BackbonePretrainOptions& options = {});

}  // namespace phyadapt
