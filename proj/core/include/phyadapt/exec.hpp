#pragma once

#include <unordered_map>
#include <utility>
#include <vector>

#include "phyadapt/rng.hpp"
#include "phyadapt/tensor.hpp"

namespace phyadapt {

// One forward/backward execution. Wraps a tape plus a parameter-to-node
// cache so that a tensor used by several batch rows is registered as a
// single leaf, and keeps the list of trainable (node, parameter) pairs
// the optimizer walks after backward. Parameter updates are applied in
// registration order, which is fixed by the model code, so steps are
// deterministic.
struct Exec {
    Graph g;
    bool training = false;
    double dropout_rate = 0.0;
    Rng* dropout_rng = nullptr;

    std::unordered_map<const Tensor*, int> leaf_cache;
    std::vector<std::pair<int, Tensor*>> trainables;

    int param(Tensor& t) {
        auto it = leaf_cache.find(&t);
        if (it != leaf_cache.end()) return it->second;
        const int id = g.leaf(t, true);
        leaf_cache.emplace(&t, id);
        trainables.emplace_back(id, &t);
        return id;
    }

    int frozen(const Tensor& t) {
        auto it = leaf_cache.find(&t);
        if (it != leaf_cache.end()) return it->second;
        const int id = g.leaf(t, false);
        leaf_cache.emplace(&t, id);
        return id;
    }

    int weights(Tensor& t, bool trainable) { return trainable ? param(t) : frozen(t); }

    // Inverted dropout on node x when in training mode with a live RNG.
    int maybe_dropout(int x) {
        if (!training || dropout_rate <= 0.0 || dropout_rng == nullptr) return x;
        const double keep_prob = 1.0 - dropout_rate;
        std::vector<uint8_t> keep(static_cast<size_t>(g.value(x).size()));
        for (auto& k : keep) k = dropout_rng->bernoulli(keep_prob) ? 1 : 0;
        return g.dropout(x, keep, keep_prob);
    }
};

}  // namespace phyadapt
