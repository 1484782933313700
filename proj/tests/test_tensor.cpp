#include <doctest.h>

#include <cmath>

#include "phyadapt/gradcheck.hpp"
#include "phyadapt/tensor.hpp"

using namespace phyadapt;

namespace {

// Builds a fresh graph from current parameter values, returns loss and
// (optionally) the analytic gradients for `params`.
double run_loss(const std::function<int(Graph&, std::vector<int>&)>& build,
                std::vector<Tensor*> params, std::vector<Tensor>* grads_out) {
    Graph g;
    std::vector<int> param_nodes;
    for (Tensor* p : params) param_nodes.push_back(g.leaf(*p, true));
    const int loss = build(g, param_nodes);
    if (grads_out) {
        g.backward(loss);
        grads_out->clear();
        for (int id : param_nodes) grads_out->push_back(g.grad(id));
    }
    return g.value(loss).item();
}

GradCheckReport check_gradients(const std::function<int(Graph&, std::vector<int>&)>& build,
                                std::vector<Tensor*> params, uint64_t seed) {
    std::vector<Tensor> grads;
    run_loss(build, params, &grads);
    auto loss_fn = [&]() { return run_loss(build, params, nullptr); };
    return finite_difference_check(loss_fn, params, grads, 1e-4, 256, seed);
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul identity and selector cases") {
    Graph g;
    const int i2 = g.constant(Tensor::identity(2));
    const int m = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    const Tensor& prod = g.value(g.matmul(i2, m));
    CHECK(prod.at(0, 0) == 1.0);
    CHECK(prod.at(0, 1) == 2.0);
    CHECK(prod.at(1, 0) == 3.0);
    CHECK(prod.at(1, 1) == 4.0);

    const int sel = g.constant(Tensor({1, 2}, {1, 0}));
    const int col = g.constant(Tensor({2, 1}, {0, 5}));
    CHECK(g.value(g.matmul(sel, col)).item() == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Graph g;
    const int a = g.constant(Tensor({2, 3}));
    const int b = g.constant(Tensor({2, 3}));
    CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("matmul gradient vs central finite differences") {
    for (uint64_t seed : {1, 2, 3}) {
        Rng rng(seed);
        Tensor a = Tensor::randn({3, 4}, rng, 1.0);
        Tensor b = Tensor::randn({4, 2}, rng, 1.0);
        auto build = [](Graph& g, std::vector<int>& p) { return g.sum(g.matmul(p[0], p[1])); };
        const auto report = check_gradients(build, {&a, &b}, seed);
        CHECK(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("layer_norm constant row maps to beta") {
    Graph g;
    const int x = g.constant(Tensor({1, 3}, {7.0, 7.0, 7.0}));
    const int gamma = g.constant(Tensor::full({3}, 1.0));
    const int beta = g.constant(Tensor({3}));
    const Tensor& y = g.value(g.layer_norm(x, gamma, beta, 1e-5));
    for (int j = 0; j < 3; ++j) CHECK(y.at(0, j) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("layer_norm already-normalized row") {
    Graph g;
    const int x = g.constant(Tensor({1, 2}, {1.0, -1.0}));
    const int gamma = g.constant(Tensor::full({2}, 1.0));
    const int beta = g.constant(Tensor({2}));
    const Tensor& y = g.value(g.layer_norm(x, gamma, beta, 1e-12));
    CHECK(y.at(0, 0) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(y.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-5));
}

TEST_CASE("layer_norm row mean equals mean(beta) and gradient checks") {
    for (uint64_t seed : {4, 5, 6}) {
        Rng rng(seed);
        Tensor x = Tensor::randn({4, 8}, rng, 2.0);
        Tensor gamma = Tensor::full({8}, 1.3);
        Tensor beta = Tensor::randn({8}, rng, 0.5);
        {
            Graph g;
            const Tensor& y = g.value(
                g.layer_norm(g.constant(x), g.constant(gamma), g.constant(beta), 1e-5));
            double beta_mean = 0.0;
            for (int j = 0; j < 8; ++j) beta_mean += beta[j];
            beta_mean /= 8;
            for (int i = 0; i < 4; ++i) {
                double row_mean = 0.0;
                for (int j = 0; j < 8; ++j) row_mean += y.at(i, j);
                row_mean /= 8;
                CHECK(row_mean == doctest::Approx(beta_mean).epsilon(1e-9));
            }
        }
        auto build = [](Graph& g, std::vector<int>& p) {
            return g.sum(g.gelu(g.layer_norm(p[0], p[1], p[2], 1e-5)));
        };
        const auto report = check_gradients(build, {&x, &gamma, &beta}, seed);
        CHECK(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("softmax symmetry, stability, and row sums") {
    Graph g;
    const Tensor& sym = g.value(g.softmax(g.constant(Tensor({1, 2}, {0.0, 0.0})), 1));
    CHECK(sym.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));

    const Tensor& stable = g.value(g.softmax(g.constant(Tensor({1, 2}, {1000.0, 0.0})), 1));
    CHECK(stable.all_finite());
    CHECK(stable.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(11);
    const Tensor& rows = g.value(g.softmax(g.constant(Tensor::randn({5, 9}, rng, 3.0)), 1));
    for (int i = 0; i < 5; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 9; ++j) sum += rows.at(i, j);
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
    // axis 0: columns sum to 1.
    const Tensor& cols = g.value(g.softmax(g.constant(Tensor::randn({5, 9}, rng, 3.0)), 0));
    for (int j = 0; j < 9; ++j) {
        double sum = 0.0;
        for (int i = 0; i < 5; ++i) sum += cols.at(i, j);
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("softmax gradient") {
    Rng rng(12);
    Tensor x = Tensor::randn({3, 6}, rng, 2.0);
    Tensor w = Tensor::randn({3, 6}, rng, 1.0);
    auto build = [&](Graph& g, std::vector<int>& p) {
        return g.sum(g.mul(g.softmax(p[0], 1), g.constant(w)));
    };
    CHECK(check_gradients(build, {&x}, 12).max_rel_err < 1e-4);
}

TEST_CASE("gelu values and asymptote") {
    CHECK(gelu_scalar(0.0, GeluKind::TanhApprox) == 0.0);
    CHECK(gelu_scalar(0.0, GeluKind::Exact) == 0.0);
    CHECK(gelu_scalar(10.0, GeluKind::TanhApprox) == doctest::Approx(10.0).epsilon(1e-6));
    CHECK(gelu_scalar(10.0, GeluKind::Exact) == doctest::Approx(10.0).epsilon(1e-6));
    // The two variants agree loosely everywhere.
    for (double x = -4.0; x <= 4.0; x += 0.25) {
        CHECK(gelu_scalar(x, GeluKind::TanhApprox) ==
              doctest::Approx(gelu_scalar(x, GeluKind::Exact)).epsilon(1e-2));
    }
}

TEST_CASE("gelu gradient, both variants") {
    for (uint64_t seed : {21, 22, 23}) {
        Rng rng(seed);
        Tensor x = Tensor::randn({4, 5}, rng, 1.5);
        for (GeluKind kind : {GeluKind::TanhApprox, GeluKind::Exact}) {
            auto build = [kind](Graph& g, std::vector<int>& p) {
                return g.sum(g.gelu(p[0], kind));
            };
            CHECK(check_gradients(build, {&x}, seed).max_rel_err < 1e-4);
        }
    }
}

TEST_CASE("cross_entropy uniform and confident cases") {
    Graph g;
    const int uniform = g.cross_entropy(g.constant(Tensor({1, 2}, {0.0, 0.0})), {0}, std::nullopt);
    CHECK(g.value(uniform).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    const int confident =
        g.cross_entropy(g.constant(Tensor({1, 2}, {20.0, -20.0})), {0}, std::nullopt);
    CHECK(g.value(confident).item() == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("cross_entropy rejects all-ignored rows") {
    Graph g;
    const int logits = g.constant(Tensor({2, 3}));
    CHECK_THROWS_AS(g.cross_entropy(logits, {-1, -1}, -1), InputError);
}

TEST_CASE("cross_entropy gradient with ignore_index") {
    for (uint64_t seed : {31, 32, 33}) {
        Rng rng(seed);
        Tensor logits = Tensor::randn({4, 5}, rng, 2.0);
        const std::vector<int> targets{1, -1, 4, 0};
        auto build = [&](Graph& g, std::vector<int>& p) {
            return g.cross_entropy(p[0], targets, -1);
        };
        CHECK(check_gradients(build, {&logits}, seed).max_rel_err < 1e-4);
    }
}

TEST_CASE("backward: sum gives all-ones, chain rule by hand") {
    {
        Graph g;
        Tensor w({2, 3}, {1, 2, 3, 4, 5, 6});
        const int wn = g.leaf(w, true);
        g.backward(g.sum(wn));
        for (int64_t i = 0; i < 6; ++i) CHECK(g.grad(wn)[i] == 1.0);
    }
    {
        // loss = (w*x)^2 at w=3, x=2 -> dw = 2*(wx)*x = 24
        Graph g;
        Tensor w({1}, {3.0});
        const int wn = g.leaf(w, true);
        const int wx = g.scale(wn, 2.0);
        const int loss = g.mul(wx, wx);
        g.backward(g.sum(loss));
        CHECK(g.grad(wn).item() == doctest::Approx(24.0).epsilon(1e-12));
    }
}

TEST_CASE("backward rejects non-scalar loss") {
    Graph g;
    const int x = g.leaf(Tensor({2, 2}), true);
    CHECK_THROWS_AS(g.backward(x), ShapeError);
}

TEST_CASE("backward is deterministic bitwise") {
    auto run = []() {
        Rng rng(77);
        Graph g;
        const int a = g.leaf(Tensor::randn({4, 4}, rng, 1.0), true);
        const int b = g.leaf(Tensor::randn({4, 4}, rng, 1.0), true);
        const int loss = g.sum(g.gelu(g.matmul(g.softmax(a, 1), b)));
        g.backward(loss);
        return std::make_pair(g.grad(a).data(), g.grad(b).data());
    };
    const auto r1 = run();
    const auto r2 = run();
    CHECK(r1.first == r2.first);   // exact bit equality
    CHECK(r1.second == r2.second);
}

TEST_CASE("graph reuses a node's gradient across consumers") {
    Graph g;
    Tensor x({1}, {2.0});
    const int xn = g.leaf(x, true);
    // loss = x*x + x -> dx = 2x + 1 = 5
    const int loss = g.add(g.mul(xn, xn), xn);
    g.backward(loss);
    CHECK(g.grad(xn).item() == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("finite_difference_check: quadratic is tight, step validated") {
    Tensor w({3}, {1.0, -2.0, 0.5});
    auto loss_fn = [&]() {
        double s = 0.0;
        for (int64_t i = 0; i < w.size(); ++i) s += w[i] * w[i];
        return s;
    };
    Tensor grad({3});
    for (int64_t i = 0; i < 3; ++i) grad[i] = 2.0 * w[i];
    const auto report = finite_difference_check(loss_fn, {&w}, {grad}, 1e-4);
    CHECK(report.max_rel_err < 1e-8);
    CHECK_THROWS_AS(finite_difference_check(loss_fn, {&w}, {grad}, 0.0), ShapeError);
}

TEST_CASE("finite_difference_check flags a wrong gradient") {
    Tensor w({2}, {1.0, 2.0});
    auto loss_fn = [&]() { return w[0] * w[0] + w[1] * w[1]; };
    Tensor wrong({2}, {2.0 * w[0], 1.0 * w[1]});  // second coordinate off by 2x
    const auto report = finite_difference_check(loss_fn, {&w}, {wrong}, 1e-4);
    CHECK(report.max_rel_err > 0.1);
}

TEST_CASE("masked softmax ignores masked columns exactly") {
    Graph g;
    Rng rng(5);
    Tensor x = Tensor::randn({3, 4}, rng, 1.0);
    const std::vector<uint8_t> mask{1, 1, 0, 1};
    const Tensor& y = g.value(g.masked_softmax_rows(g.constant(x), mask));
    for (int i = 0; i < 3; ++i) {
        CHECK(y.at(i, 2) == 0.0);
        double sum = 0.0;
        for (int j = 0; j < 4; ++j) sum += y.at(i, j);
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
    // Gradient through the masked op.
    Tensor w = Tensor::randn({3, 4}, rng, 1.0);
    auto build = [&](Graph& gg, std::vector<int>& p) {
        return gg.sum(gg.mul(gg.masked_softmax_rows(p[0], mask), gg.constant(w)));
    };
    CHECK(check_gradients(build, {&x}, 5).max_rel_err < 1e-4);
}

TEST_CASE("structural ops gradients: concat, slice, gather, broadcasts, transpose") {
    Rng rng(9);
    Tensor a = Tensor::randn({3, 4}, rng, 1.0);
    Tensor b = Tensor::randn({2, 4}, rng, 1.0);
    Tensor c = Tensor::randn({3, 2}, rng, 1.0);
    Tensor row = Tensor::randn({4}, rng, 1.0);
    Tensor col = Tensor::randn({3}, rng, 1.0);
    Tensor table = Tensor::randn({5, 4}, rng, 1.0);

    auto build = [&](Graph& g, std::vector<int>& p) {
        const int cat_rows = g.concat_rows({p[0], p[1]});          // [5x4]
        const int sliced = g.slice_rows(cat_rows, 1, 4);           // [3x4]
        const int with_row = g.add_row_broadcast(sliced, p[3]);    // + row
        const int with_col = g.add_col_broadcast(with_row, p[4]);  // + col
        const int cat_cols = g.concat_cols({with_col, p[2]});        // [3x6]
        const int gathered = g.gather_rows(p[5], {0, 2, 4});         // [3x4]
        const int prod = g.matmul(g.transpose(cat_cols), gathered);  // [6x4]
        return g.add(g.sum(prod), g.sum(g.gelu(cat_cols)));
    };
    const auto report = check_gradients(build, {&a, &b, &c, &row, &col, &table}, 9);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("gradients match finite differences across 20 seeds (mixed op soup)") {
    for (uint64_t seed = 100; seed < 120; ++seed) {
        Rng rng(seed);
        Tensor a = Tensor::randn({3, 5}, rng, 1.0);
        Tensor b = Tensor::randn({5, 4}, rng, 1.0);
        Tensor gamma = Tensor::full({4}, 1.1);
        Tensor beta = Tensor::randn({4}, rng, 0.3);
        const std::vector<int> targets{2, 0, -1};
        auto build = [&](Graph& g, std::vector<int>& p) {
            const int z = g.layer_norm(g.gelu(g.matmul(p[0], p[1])), p[2], p[3], 1e-5);
            return g.cross_entropy(z, targets, -1);
        };
        const auto report = check_gradients(build, {&a, &b, &gamma, &beta}, seed);
        CAPTURE(seed);
        CHECK(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("forward ops keep finite inputs finite") {
    Rng rng(41);
    Graph g;
    const int x = g.constant(Tensor::randn({4, 6}, rng, 50.0));
    CHECK(g.value(g.gelu(x)).all_finite());
    CHECK(g.value(g.softmax(x, 1)).all_finite());
    const int gamma = g.constant(Tensor::full({6}, 1.0));
    const int beta = g.constant(Tensor({6}));
    CHECK(g.value(g.layer_norm(x, gamma, beta, 1e-5)).all_finite());
}

TEST_CASE("tensor invariants: shape product, finite checks") {
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
    Tensor t({2, 2}, {1, 2, 3, 4});
    CHECK(t.size() == 4);
    CHECK(t.all_finite());
    t[2] = std::nan("");
    CHECK_FALSE(t.all_finite());
}

}  // TEST_SUITE
