#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "phyadapt/exec.hpp"
#include "phyadapt/tensor.hpp"

namespace phyadapt {

class Backbone;  // encoder.hpp

enum class AdapterActivation { Gelu, GeluExact, Identity };

struct AdapterSpec {
    int hidden_dim = 64;      // h
    int bottleneck_dim = 16;  // d
    int num_layers = 2;       // one adapter block per encoder layer
    std::string node_id;      // tree node this adapter belongs to (F/G/L/R/T)
    AdapterActivation activation = AdapterActivation::Gelu;
};

// Bottleneck residual adapter. Per layer:
//   out = hidden + up( act( down(hidden) + down_bias ) )
// The down-projection carries a bias, the up-projection does not, giving
// exactly 2*h*d + d parameters per layer. The up-projection starts at
// zero so a fresh adapter is an identity map.
struct AdapterLayerParams {
    Tensor w_down;  // [h x d]
    Tensor b_down;  // [d]
    Tensor w_up;    // [d x h]
};

struct AdapterParams {
    AdapterSpec spec;
    std::vector<AdapterLayerParams> layers;

    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;
    uint64_t checksum() const;
};

AdapterParams new_adapter(const AdapterSpec& spec, uint64_t seed);

int64_t param_count(const AdapterSpec& spec);
int64_t param_count(const AdapterParams& params);

// d reduced by a constant factor; d must divide evenly.
int constrained_bottleneck(int d, int k);

// Ordered adapter stack for one forward pass, root-first. `trainable`
// controls whether gradients flow to that member's parameters.
struct AdapterChain {
    struct Member {
        std::string node_id;
        AdapterParams* params = nullptr;
        bool trainable = false;
    };
    std::vector<Member> members;

    bool empty() const { return members.empty(); }
    int64_t param_count() const;
    std::vector<std::string> node_ids() const;
};

// All adapters of one experiment, keyed by tree node id, sharing one
// frozen backbone. Update counts track how many optimizer steps touched
// each node.
struct AdapterBank {
    std::map<std::string, AdapterParams> adapters;
    std::map<std::string, int64_t> update_counts;
    const Backbone* backbone = nullptr;

    bool has(const std::string& node_id) const { return adapters.count(node_id) > 0; }
    AdapterParams& at(const std::string& node_id);
    const AdapterParams& at(const std::string& node_id) const;
    uint64_t checksum(const std::string& node_id) const;
};

// Graph-building forwards.
int adapter_forward(Exec& exec, int hidden, AdapterParams& params, int layer, bool trainable);
int chain_forward(Exec& exec, int hidden, const AdapterChain& chain, int layer);

// Value-level adapter application (single layer, no tape).
Tensor adapter_forward_value(const Tensor& hidden, const AdapterParams& params, int layer);

}  // namespace phyadapt
