#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "phyadapt/errors.hpp"
#include "phyadapt/rng.hpp"

namespace phyadapt {

// Dense row-major float64 tensor. Rank is arbitrary but the encoder only
// needs vectors and matrices; shape helpers assume rank <= 2 where noted.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v);
    static Tensor identity(int n);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    // Gaussian init with mean 0 and the given stddev.
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }

    // 2-D accessors; a rank-1 tensor behaves as a single row.
    int rows() const;
    int cols() const;
    double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols() + c]; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    double item() const;  // requires size() == 1
    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    bool requires_grad = false;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// Plain (non-autodiff) matrix product; also used by op backward passes.
Tensor matmul_value(const Tensor& a, const Tensor& b);
Tensor transpose_value(const Tensor& a);

uint64_t checksum(const Tensor& t);
uint64_t checksum_accumulate(uint64_t h, const Tensor& t);

enum class GeluKind { TanhApprox, Exact };

double gelu_scalar(double x, GeluKind kind);
double gelu_grad_scalar(double x, GeluKind kind);

constexpr int kIgnoreIndex = -1;  // cross-entropy "no label" sentinel

// Reverse-mode tape. Nodes are appended in construction order, so input
// ids are always smaller than the ids that consume them; backward is a
// single reverse scan that visits each reachable node exactly once.
class Graph {
public:
    struct Node {
        const char* op;
        std::vector<int> inputs;
        Tensor value;
        bool needs_grad = false;  // some trainable leaf is reachable below
        std::function<void(Graph&, int)> backward;
    };

    // Leaves. `leaf` copies the tensor in; `trainable` marks it as a
    // gradient target independent of where the value came from.
    int leaf(const Tensor& value, bool trainable);
    int constant(const Tensor& value) { return leaf(value, false); }

    // Elementwise and broadcast arithmetic.
    int add(int a, int b);
    int mul(int a, int b);
    int scale(int a, double c);
    int add_row_broadcast(int mat, int row);  // row added to every row of mat
    int add_col_broadcast(int mat, int col);  // col added to every column
    int add_scalar_broadcast(int mat, int scalar);

    // Linear algebra.
    int matmul(int a, int b);
    int transpose(int a);

    // Structure.
    int concat_rows(const std::vector<int>& parts);
    int concat_cols(const std::vector<int>& parts);
    int slice_rows(int a, int row_begin, int row_end);
    int row(int a, int r) { return slice_rows(a, r, r + 1); }

    // Lookup: out[i, :] = table[ids[i], :]. Gradient scatter-adds.
    int gather_rows(int table, const std::vector<int>& ids);

    // Neural-net ops.
    int layer_norm(int x, int gamma, int beta, double eps);
    int softmax(int x, int axis);
    // Row softmax over unmasked columns only; masked columns get exactly 0
    // probability and receive no gradient.
    int masked_softmax_rows(int x, const std::vector<uint8_t>& col_valid);
    int gelu(int x, GeluKind kind = GeluKind::TanhApprox);
    // Inverted dropout with a caller-supplied keep mask.
    int dropout(int x, const std::vector<uint8_t>& keep, double keep_prob);

    // Mean negative log-softmax probability of targets over rows whose
    // target != ignore_index. Throws InputError if every row is ignored.
    int cross_entropy(int logits, const std::vector<int>& targets,
                      std::optional<int> ignore_index = kIgnoreIndex);

    int sum(int x);

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    size_t num_nodes() const { return nodes_.size(); }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

    // Reverse pass from a scalar loss node. Gradients are computed for
    // every node on a path between a trainable leaf and the loss.
    void backward(int loss_id);

    bool has_grad(int id) const;
    const Tensor& grad(int id) const;  // throws if absent

private:
    int push(Node n);
    void accumulate_grad(int id, const Tensor& g);
    Tensor& grad_ref(int id);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<uint8_t> grad_set_;

    friend class GraphGradAccess;
};

}  // namespace phyadapt
