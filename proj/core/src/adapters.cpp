#include "phyadapt/adapters.hpp"

#include <cmath>

#include "phyadapt/errors.hpp"

namespace phyadapt {

AdapterParams new_adapter(const AdapterSpec& spec, uint64_t seed) {
    if (spec.hidden_dim < 1 || spec.bottleneck_dim < 1 || spec.num_layers < 1) {
        throw ConfigError("new_adapter: dimensions must be >= 1 for node '" + spec.node_id + "'");
    }
    AdapterParams params;
    params.spec = spec;
    params.layers.resize(static_cast<size_t>(spec.num_layers));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(spec.hidden_dim));
    for (int l = 0; l < spec.num_layers; ++l) {
        Rng rng(derive_seed(seed, "adapter:" + spec.node_id, static_cast<uint64_t>(l)));
        auto& layer = params.layers[static_cast<size_t>(l)];
        layer.w_down = Tensor::randn({spec.hidden_dim, spec.bottleneck_dim}, rng, stddev);
        layer.b_down = Tensor({spec.bottleneck_dim});
        layer.w_up = Tensor({spec.bottleneck_dim, spec.hidden_dim});  // zero: identity start
    }
    return params;
}

int64_t param_count(const AdapterSpec& spec) {
    const int64_t h = spec.hidden_dim, d = spec.bottleneck_dim;
    return static_cast<int64_t>(spec.num_layers) * (2 * h * d + d);
}

int64_t param_count(const AdapterParams& params) {
    int64_t n = 0;
    for (const auto& layer : params.layers) {
        n += layer.w_down.size() + layer.b_down.size() + layer.w_up.size();
    }
    return n;
}

int constrained_bottleneck(int d, int k) {
    if (k < 1) throw ConfigError("constrained_bottleneck: factor must be >= 1");
    if (d % k != 0) {
        throw ConfigError("constrained_bottleneck: " + std::to_string(d) +
                          " is not divisible by " + std::to_string(k) +
                          "; choose a bottleneck divisible by the reduction factor");
    }
    return d / k;
}

std::vector<std::pair<std::string, Tensor*>> AdapterParams::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        out.emplace_back(p + "w_down", &layers[l].w_down);
        out.emplace_back(p + "b_down", &layers[l].b_down);
        out.emplace_back(p + "w_up", &layers[l].w_up);
    }
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> AdapterParams::named_params() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        out.emplace_back(p + "w_down", &layers[l].w_down);
        out.emplace_back(p + "b_down", &layers[l].b_down);
        out.emplace_back(p + "w_up", &layers[l].w_up);
    }
    return out;
}

uint64_t AdapterParams::checksum() const {
    uint64_t h = 14695981039346656037ULL;
    for (const auto& [name, t] : named_params()) h = checksum_accumulate(h, *t);
    return h;
}

AdapterParams& AdapterBank::at(const std::string& node_id) {
    auto it = adapters.find(node_id);
    if (it == adapters.end()) throw ConfigError("adapter bank has no node '" + node_id + "'");
    return it->second;
}

const AdapterParams& AdapterBank::at(const std::string& node_id) const {
    auto it = adapters.find(node_id);
    if (it == adapters.end()) throw ConfigError("adapter bank has no node '" + node_id + "'");
    return it->second;
}

uint64_t AdapterBank::checksum(const std::string& node_id) const {
    return at(node_id).checksum();
}

int64_t AdapterChain::param_count() const {
    int64_t n = 0;
    for (const auto& m : members) n += phyadapt::param_count(*m.params);
    return n;
}

std::vector<std::string> AdapterChain::node_ids() const {
    std::vector<std::string> out;
    out.reserve(members.size());
    for (const auto& m : members) out.push_back(m.node_id);
    return out;
}

int adapter_forward(Exec& exec, int hidden, AdapterParams& params, int layer, bool trainable) {
    if (layer < 0 || layer >= static_cast<int>(params.layers.size())) {
        throw ConfigError("adapter_forward: layer " + std::to_string(layer) +
                          " out of range for node '" + params.spec.node_id + "'");
    }
    const int h = exec.g.value(hidden).cols();
    if (h != params.spec.hidden_dim) {
        throw ShapeError("adapter_forward: hidden width " + std::to_string(h) +
                         " does not match adapter hidden_dim " +
                         std::to_string(params.spec.hidden_dim));
    }
    auto& lp = params.layers[static_cast<size_t>(layer)];
    const int w_down = exec.weights(lp.w_down, trainable);
    const int b_down = exec.weights(lp.b_down, trainable);
    const int w_up = exec.weights(lp.w_up, trainable);

    int z = exec.g.matmul(hidden, w_down);
    z = exec.g.add_row_broadcast(z, b_down);
    switch (params.spec.activation) {
        case AdapterActivation::Gelu: z = exec.g.gelu(z, GeluKind::TanhApprox); break;
        case AdapterActivation::GeluExact: z = exec.g.gelu(z, GeluKind::Exact); break;
        case AdapterActivation::Identity: break;
    }
    const int up = exec.g.matmul(z, w_up);
    return exec.g.add(hidden, up);
}

int chain_forward(Exec& exec, int hidden, const AdapterChain& chain, int layer) {
    int x = hidden;
    for (const auto& member : chain.members) {
        if (member.params == nullptr) {
            throw ConfigError("chain_forward: unresolved node '" + member.node_id + "'");
        }
        x = adapter_forward(exec, x, *member.params, layer, member.trainable);
    }
    return x;
}

Tensor adapter_forward_value(const Tensor& hidden, const AdapterParams& params, int layer) {
    Exec exec;
    const int h = exec.g.leaf(hidden, false);
    const int out = adapter_forward(exec, h, const_cast<AdapterParams&>(params), layer, false);
    return exec.g.value(out);
}

}  // namespace phyadapt
