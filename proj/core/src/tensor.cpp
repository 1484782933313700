#include "phyadapt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace phyadapt {

namespace {

int64_t shape_product(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape");
        n *= d;
    }
    return n;
}

std::string shape_to_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_product(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != static_cast<int64_t>(data_.size())) {
        throw ShapeError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_to_str(shape_));
    }
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
}

Tensor Tensor::identity(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = rng.normal() * stddev;
    return t;
}

int Tensor::rows() const {
    if (shape_.size() == 1) return 1;
    if (shape_.size() == 2) return shape_[0];
    throw ShapeError("rows() needs rank <= 2, got shape " + shape_str());
}

int Tensor::cols() const {
    if (shape_.size() == 1) return shape_[0];
    if (shape_.size() == 2) return shape_[1];
    throw ShapeError("cols() needs rank <= 2, got shape " + shape_str());
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str());
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const { return shape_to_str(shape_); }

Tensor matmul_value(const Tensor& a, const Tensor& b) {
    const int m = a.rows(), k = a.cols();
    const int k2 = b.rows(), n = b.cols();
    if (k != k2) {
        throw ShapeError("matmul inner dimensions disagree: " + a.shape_str() +
                         " x " + b.shape_str());
    }
    Tensor out({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (int i = 0; i < m; ++i) {
        const double* arow = pa + static_cast<size_t>(i) * k;
        double* orow = po + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            if (aik == 0.0) continue;
            const double* brow = pb + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Tensor transpose_value(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

uint64_t checksum_accumulate(uint64_t h, const Tensor& t) {
    for (double v : t.data()) {
        uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xffu;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

uint64_t checksum(const Tensor& t) {
    return checksum_accumulate(14695981039346656037ULL, t);
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu_scalar(double x, GeluKind kind) {
    if (kind == GeluKind::TanhApprox) {
        return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
    }
    return 0.5 * x * (1.0 + std::erf(x / M_SQRT2));
}

double gelu_grad_scalar(double x, GeluKind kind) {
    if (kind == GeluKind::TanhApprox) {
        const double u = kGeluC * (x + kGeluA * x * x * x);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    }
    const double cdf = 0.5 * (1.0 + std::erf(x / M_SQRT2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

// ---------------------------------------------------------------------------
// Graph

int Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Graph::leaf(const Tensor& value, bool trainable) {
    Node n;
    n.op = "leaf";
    n.value = value;
    n.needs_grad = trainable;
    return push(std::move(n));
}

int Graph::add(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) {
        throw ShapeError("add shape mismatch: " + ta.shape_str() + " vs " + tb.shape_str());
    }
    Node n;
    n.op = "add";
    n.inputs = {a, b};
    n.value = ta;
    for (int64_t i = 0; i < tb.size(); ++i) n.value[i] += tb[i];
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.backward = [a, b](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        g.accumulate_grad(a, gr);
        g.accumulate_grad(b, gr);
    };
    return push(std::move(n));
}

int Graph::mul(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) {
        throw ShapeError("mul shape mismatch: " + ta.shape_str() + " vs " + tb.shape_str());
    }
    Node n;
    n.op = "mul";
    n.inputs = {a, b};
    n.value = ta;
    for (int64_t i = 0; i < tb.size(); ++i) n.value[i] *= tb[i];
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.backward = [a, b](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        Tensor da = g.value(b);
        Tensor db = g.value(a);
        for (int64_t i = 0; i < gr.size(); ++i) {
            da[i] *= gr[i];
            db[i] *= gr[i];
        }
        g.accumulate_grad(a, da);
        g.accumulate_grad(b, db);
    };
    return push(std::move(n));
}

int Graph::scale(int a, double c) {
    Node n;
    n.op = "scale";
    n.inputs = {a};
    n.value = value(a);
    for (double& v : n.value.data()) v *= c;
    n.needs_grad = node(a).needs_grad;
    n.backward = [a, c](Graph& g, int self) {
        Tensor da = g.grad(self);
        for (double& v : da.data()) v *= c;
        g.accumulate_grad(a, da);
    };
    return push(std::move(n));
}

int Graph::add_row_broadcast(int mat, int row) {
    const Tensor& tm = value(mat);
    const Tensor& tr = value(row);
    const int m = tm.rows(), c = tm.cols();
    if (tr.size() != c) {
        throw ShapeError("add_row_broadcast: " + tm.shape_str() + " vs row " + tr.shape_str());
    }
    Node n;
    n.op = "add_row_broadcast";
    n.inputs = {mat, row};
    n.value = tm;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) n.value.at(i, j) += tr[j];
    n.needs_grad = node(mat).needs_grad || node(row).needs_grad;
    n.backward = [mat, row, m, c](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        g.accumulate_grad(mat, gr);
        Tensor drow = g.value(row);
        std::fill(drow.data().begin(), drow.data().end(), 0.0);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j) drow[j] += gr.at(i, j);
        g.accumulate_grad(row, drow);
    };
    return push(std::move(n));
}

int Graph::add_col_broadcast(int mat, int col) {
    const Tensor& tm = value(mat);
    const Tensor& tc = value(col);
    const int m = tm.rows(), c = tm.cols();
    if (tc.size() != m) {
        throw ShapeError("add_col_broadcast: " + tm.shape_str() + " vs col " + tc.shape_str());
    }
    Node n;
    n.op = "add_col_broadcast";
    n.inputs = {mat, col};
    n.value = tm;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) n.value.at(i, j) += tc[i];
    n.needs_grad = node(mat).needs_grad || node(col).needs_grad;
    n.backward = [mat, col, m, c](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        g.accumulate_grad(mat, gr);
        Tensor dcol = g.value(col);
        std::fill(dcol.data().begin(), dcol.data().end(), 0.0);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j) dcol[i] += gr.at(i, j);
        g.accumulate_grad(col, dcol);
    };
    return push(std::move(n));
}

int Graph::add_scalar_broadcast(int mat, int scalar) {
    const Tensor& tm = value(mat);
    const Tensor& ts = value(scalar);
    if (ts.size() != 1) throw ShapeError("add_scalar_broadcast needs scalar, got " + ts.shape_str());
    Node n;
    n.op = "add_scalar_broadcast";
    n.inputs = {mat, scalar};
    n.value = tm;
    for (double& v : n.value.data()) v += ts[0];
    n.needs_grad = node(mat).needs_grad || node(scalar).needs_grad;
    n.backward = [mat, scalar](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        g.accumulate_grad(mat, gr);
        double s = 0.0;
        for (int64_t i = 0; i < gr.size(); ++i) s += gr[i];
        g.accumulate_grad(scalar, Tensor({1}, {s}));
    };
    return push(std::move(n));
}

int Graph::matmul(int a, int b) {
    Node n;
    n.op = "matmul";
    n.inputs = {a, b};
    n.value = matmul_value(value(a), value(b));
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.backward = [a, b](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        if (g.node(a).needs_grad) {
            g.accumulate_grad(a, matmul_value(gr, transpose_value(g.value(b))));
        }
        if (g.node(b).needs_grad) {
            g.accumulate_grad(b, matmul_value(transpose_value(g.value(a)), gr));
        }
    };
    return push(std::move(n));
}

int Graph::transpose(int a) {
    Node n;
    n.op = "transpose";
    n.inputs = {a};
    n.value = transpose_value(value(a));
    n.needs_grad = node(a).needs_grad;
    n.backward = [a](Graph& g, int self) {
        g.accumulate_grad(a, transpose_value(g.grad(self)));
    };
    return push(std::move(n));
}

int Graph::concat_rows(const std::vector<int>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows of zero parts");
    const int c = value(parts[0]).cols();
    int total = 0;
    bool needs = false;
    for (int p : parts) {
        if (value(p).cols() != c) {
            throw ShapeError("concat_rows column mismatch: " + value(parts[0]).shape_str() +
                             " vs " + value(p).shape_str());
        }
        total += value(p).rows();
        needs = needs || node(p).needs_grad;
    }
    Node n;
    n.op = "concat_rows";
    n.inputs = parts;
    n.value = Tensor({total, c});
    int r = 0;
    for (int p : parts) {
        const Tensor& t = value(p);
        std::copy(t.data().begin(), t.data().end(),
                  n.value.data().begin() + static_cast<size_t>(r) * c);
        r += t.rows();
    }
    n.needs_grad = needs;
    n.backward = [parts, c](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        int r0 = 0;
        for (int p : parts) {
            const int pr = g.value(p).rows();
            if (g.node(p).needs_grad) {
                Tensor dp = g.value(p).rank() == 1 ? Tensor({c}) : Tensor({pr, c});
                std::copy(gr.data().begin() + static_cast<size_t>(r0) * c,
                          gr.data().begin() + static_cast<size_t>(r0 + pr) * c,
                          dp.data().begin());
                g.accumulate_grad(p, dp);
            }
            r0 += pr;
        }
    };
    return push(std::move(n));
}

int Graph::concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of zero parts");
    const int m = value(parts[0]).rows();
    int total = 0;
    bool needs = false;
    for (int p : parts) {
        if (value(p).rows() != m) {
            throw ShapeError("concat_cols row mismatch: " + value(parts[0]).shape_str() +
                             " vs " + value(p).shape_str());
        }
        total += value(p).cols();
        needs = needs || node(p).needs_grad;
    }
    Node n;
    n.op = "concat_cols";
    n.inputs = parts;
    n.value = Tensor({m, total});
    int c0 = 0;
    for (int p : parts) {
        const Tensor& t = value(p);
        const int pc = t.cols();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < pc; ++j) n.value.at(i, c0 + j) = t.at(i, j);
        c0 += pc;
    }
    n.needs_grad = needs;
    n.backward = [parts, m](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        int c0 = 0;
        for (int p : parts) {
            const int pc = g.value(p).cols();
            if (g.node(p).needs_grad) {
                Tensor dp = g.value(p).rank() == 1 ? Tensor({pc}) : Tensor({m, pc});
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < pc; ++j)
                        dp[static_cast<int64_t>(i) * pc + j] = gr.at(i, c0 + j);
                g.accumulate_grad(p, dp);
            }
            c0 += pc;
        }
    };
    return push(std::move(n));
}

int Graph::slice_rows(int a, int row_begin, int row_end) {
    const Tensor& t = value(a);
    const int m = t.rows(), c = t.cols();
    if (row_begin < 0 || row_end > m || row_begin >= row_end) {
        throw ShapeError("slice_rows [" + std::to_string(row_begin) + "," +
                         std::to_string(row_end) + ") out of range for " + t.shape_str());
    }
    Node n;
    n.op = "slice_rows";
    n.inputs = {a};
    n.value = Tensor({row_end - row_begin, c});
    std::copy(t.data().begin() + static_cast<size_t>(row_begin) * c,
              t.data().begin() + static_cast<size_t>(row_end) * c, n.value.data().begin());
    n.needs_grad = node(a).needs_grad;
    n.backward = [a, row_begin, c](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        Tensor da = g.value(a);
        std::fill(da.data().begin(), da.data().end(), 0.0);
        std::copy(gr.data().begin(), gr.data().end(),
                  da.data().begin() + static_cast<size_t>(row_begin) * c);
        g.accumulate_grad(a, da);
    };
    return push(std::move(n));
}

int Graph::gather_rows(int table, const std::vector<int>& ids) {
    const Tensor& t = value(table);
    const int v = t.rows(), c = t.cols();
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= v) {
            throw InputError("gather_rows: id " + std::to_string(ids[i]) + " at position " +
                             std::to_string(i) + " outside table of " + std::to_string(v) + " rows");
        }
    }
    Node n;
    n.op = "gather_rows";
    n.inputs = {table};
    n.value = Tensor({static_cast<int>(ids.size()), c});
    for (size_t i = 0; i < ids.size(); ++i) {
        std::copy(t.data().begin() + static_cast<size_t>(ids[i]) * c,
                  t.data().begin() + (static_cast<size_t>(ids[i]) + 1) * c,
                  n.value.data().begin() + i * c);
    }
    n.needs_grad = node(table).needs_grad;
    n.backward = [table, ids, c](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        Tensor dt = g.value(table);
        std::fill(dt.data().begin(), dt.data().end(), 0.0);
        for (size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < c; ++j) dt.at(ids[i], j) += gr.at(static_cast<int>(i), j);
        g.accumulate_grad(table, dt);
    };
    return push(std::move(n));
}

int Graph::layer_norm(int x, int gamma, int beta, double eps) {
    const Tensor& tx = value(x);
    const Tensor& tg = value(gamma);
    const Tensor& tb = value(beta);
    const int m = tx.rows(), h = tx.cols();
    if (eps <= 0.0) throw ShapeError("layer_norm eps must be positive");
    if (tg.size() != h || tb.size() != h) {
        throw ShapeError("layer_norm parameter size mismatch: x " + tx.shape_str() +
                         ", gamma " + tg.shape_str() + ", beta " + tb.shape_str());
    }
    Node n;
    n.op = "layer_norm";
    n.inputs = {x, gamma, beta};
    n.value = Tensor({m, h});
    Tensor xhat({m, h});
    std::vector<double> inv_std(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        double mean = 0.0;
        for (int j = 0; j < h; ++j) mean += tx.at(i, j);
        mean /= h;
        double var = 0.0;
        for (int j = 0; j < h; ++j) {
            const double d = tx.at(i, j) - mean;
            var += d * d;
        }
        var /= h;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = is;
        for (int j = 0; j < h; ++j) {
            const double xh = (tx.at(i, j) - mean) * is;
            xhat.at(i, j) = xh;
            n.value.at(i, j) = tg[j] * xh + tb[j];
        }
    }
    n.needs_grad = node(x).needs_grad || node(gamma).needs_grad || node(beta).needs_grad;
    n.backward = [x, gamma, beta, m, h, xhat, inv_std](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        const Tensor& tg = g.value(gamma);
        Tensor dgamma = g.value(gamma);
        Tensor dbeta = g.value(beta);
        std::fill(dgamma.data().begin(), dgamma.data().end(), 0.0);
        std::fill(dbeta.data().begin(), dbeta.data().end(), 0.0);
        Tensor dx({m, h});
        for (int i = 0; i < m; ++i) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (int j = 0; j < h; ++j) {
                const double dxh = gr.at(i, j) * tg[j];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xhat.at(i, j);
                dgamma[j] += gr.at(i, j) * xhat.at(i, j);
                dbeta[j] += gr.at(i, j);
            }
            mean_dxhat /= h;
            mean_dxhat_xhat /= h;
            for (int j = 0; j < h; ++j) {
                const double dxh = gr.at(i, j) * tg[j];
                dx.at(i, j) = (dxh - mean_dxhat - xhat.at(i, j) * mean_dxhat_xhat) *
                              inv_std[static_cast<size_t>(i)];
            }
        }
        g.accumulate_grad(x, dx);
        g.accumulate_grad(gamma, dgamma);
        g.accumulate_grad(beta, dbeta);
    };
    return push(std::move(n));
}

int Graph::softmax(int x, int axis) {
    const Tensor& tx = value(x);
    if (tx.rank() > 2) throw ShapeError("softmax needs rank <= 2, got " + tx.shape_str());
    const int effective_axis = tx.rank() == 1 ? 0 : axis;
    if (tx.rank() == 2 && axis != 0 && axis != 1) {
        throw ShapeError("softmax axis " + std::to_string(axis) + " invalid for " + tx.shape_str());
    }
    if (tx.rank() == 1 && axis != 0) {
        throw ShapeError("softmax axis " + std::to_string(axis) + " invalid for " + tx.shape_str());
    }
    // Column softmax delegates to row softmax between transposes.
    if (tx.rank() == 2 && effective_axis == 0) {
        return transpose(softmax(transpose(x), 1));
    }
    const int m = tx.rows(), c = tx.cols();
    Node n;
    n.op = "softmax";
    n.inputs = {x};
    n.value = tx;
    for (int i = 0; i < m; ++i) {
        double mx = n.value.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, n.value.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(n.value.at(i, j) - mx);
            n.value.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < c; ++j) n.value.at(i, j) /= sum;
    }
    n.needs_grad = node(x).needs_grad;
    n.backward = [x, m, c](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        const Tensor& y = g.value(self);
        Tensor dx = y.rank() == 1 ? Tensor({c}) : Tensor({m, c});
        for (int i = 0; i < m; ++i) {
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += gr.at(i, j) * y.at(i, j);
            for (int j = 0; j < c; ++j)
                dx[static_cast<int64_t>(i) * c + j] = y.at(i, j) * (gr.at(i, j) - dot);
        }
        g.accumulate_grad(x, dx);
    };
    return push(std::move(n));
}

int Graph::masked_softmax_rows(int x, const std::vector<uint8_t>& col_valid) {
    const Tensor& tx = value(x);
    const int m = tx.rows(), c = tx.cols();
    if (static_cast<int>(col_valid.size()) != c) {
        throw ShapeError("masked_softmax_rows mask length " + std::to_string(col_valid.size()) +
                         " vs " + std::to_string(c) + " columns");
    }
    bool any_valid = false;
    for (uint8_t v : col_valid) any_valid = any_valid || v;
    if (!any_valid) throw InputError("masked_softmax_rows: all columns masked");
    Node n;
    n.op = "masked_softmax_rows";
    n.inputs = {x};
    n.value = Tensor({m, c});
    for (int i = 0; i < m; ++i) {
        double mx = -HUGE_VAL;
        for (int j = 0; j < c; ++j)
            if (col_valid[static_cast<size_t>(j)]) mx = std::max(mx, tx.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            if (!col_valid[static_cast<size_t>(j)]) continue;
            const double e = std::exp(tx.at(i, j) - mx);
            n.value.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < c; ++j)
            if (col_valid[static_cast<size_t>(j)]) n.value.at(i, j) /= sum;
    }
    n.needs_grad = node(x).needs_grad;
    n.backward = [x, m, c, col_valid](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        const Tensor& y = g.value(self);
        Tensor dx({m, c});
        for (int i = 0; i < m; ++i) {
            double dot = 0.0;
            for (int j = 0; j < c; ++j)
                if (col_valid[static_cast<size_t>(j)]) dot += gr.at(i, j) * y.at(i, j);
            for (int j = 0; j < c; ++j) {
                if (!col_valid[static_cast<size_t>(j)]) continue;
                dx.at(i, j) = y.at(i, j) * (gr.at(i, j) - dot);
            }
        }
        g.accumulate_grad(x, dx);
    };
    return push(std::move(n));
}

int Graph::gelu(int x, GeluKind kind) {
    Node n;
    n.op = "gelu";
    n.inputs = {x};
    n.value = value(x);
    for (double& v : n.value.data()) v = gelu_scalar(v, kind);
    n.needs_grad = node(x).needs_grad;
    n.backward = [x, kind](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        Tensor dx = g.value(x);
        for (int64_t i = 0; i < dx.size(); ++i) dx[i] = gr[i] * gelu_grad_scalar(dx[i], kind);
        g.accumulate_grad(x, dx);
    };
    return push(std::move(n));
}

int Graph::dropout(int x, const std::vector<uint8_t>& keep, double keep_prob) {
    const Tensor& tx = value(x);
    if (static_cast<int64_t>(keep.size()) != tx.size()) {
        throw ShapeError("dropout mask size mismatch");
    }
    if (keep_prob <= 0.0 || keep_prob > 1.0) throw ShapeError("dropout keep_prob out of (0,1]");
    Node n;
    n.op = "dropout";
    n.inputs = {x};
    n.value = tx;
    const double inv = 1.0 / keep_prob;
    for (int64_t i = 0; i < n.value.size(); ++i)
        n.value[i] = keep[static_cast<size_t>(i)] ? n.value[i] * inv : 0.0;
    n.needs_grad = node(x).needs_grad;
    n.backward = [x, keep, inv](Graph& g, int self) {
        const Tensor& gr = g.grad(self);
        Tensor dx = gr;
        for (int64_t i = 0; i < dx.size(); ++i)
            dx[i] = keep[static_cast<size_t>(i)] ? dx[i] * inv : 0.0;
        g.accumulate_grad(x, dx);
    };
    return push(std::move(n));
}

int Graph::cross_entropy(int logits, const std::vector<int>& targets,
                         std::optional<int> ignore_index) {
    const Tensor& tl = value(logits);
    const int m = tl.rows(), c = tl.cols();
    if (static_cast<int>(targets.size()) != m) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(m) + " logit rows");
    }
    int valid = 0;
    for (int t : targets) {
        const bool ignored = ignore_index && t == *ignore_index;
        if (!ignored) {
            if (t < 0 || t >= c) {
                throw InputError("cross_entropy: target " + std::to_string(t) +
                                 " outside [0," + std::to_string(c) + ")");
            }
            ++valid;
        }
    }
    if (valid == 0) throw InputError("cross_entropy: every target is ignored, loss undefined");

    Node n;
    n.op = "cross_entropy";
    n.inputs = {logits};
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
        const bool ignored = ignore_index && targets[static_cast<size_t>(i)] == *ignore_index;
        if (ignored) continue;
        double mx = tl.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, tl.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < c; ++j) sum += std::exp(tl.at(i, j) - mx);
        const double lse = mx + std::log(sum);
        loss += lse - tl.at(i, targets[static_cast<size_t>(i)]);
    }
    loss /= valid;
    n.value = Tensor::scalar(loss);
    n.needs_grad = node(logits).needs_grad;
    n.backward = [logits, targets, ignore_index, m, c, valid](Graph& g, int self) {
        const double gscale = g.grad(self).item() / valid;
        const Tensor& tl = g.value(logits);
        Tensor dl({m, c});
        for (int i = 0; i < m; ++i) {
            const int t = targets[static_cast<size_t>(i)];
            if (ignore_index && t == *ignore_index) continue;
            double mx = tl.at(i, 0);
            for (int j = 1; j < c; ++j) mx = std::max(mx, tl.at(i, j));
            double sum = 0.0;
            for (int j = 0; j < c; ++j) sum += std::exp(tl.at(i, j) - mx);
            for (int j = 0; j < c; ++j) {
                const double p = std::exp(tl.at(i, j) - mx) / sum;
                dl.at(i, j) = gscale * (p - (j == t ? 1.0 : 0.0));
            }
        }
        g.accumulate_grad(logits, dl);
    };
    return push(std::move(n));
}

int Graph::sum(int x) {
    Node n;
    n.op = "sum";
    n.inputs = {x};
    double s = 0.0;
    for (double v : value(x).data()) s += v;
    n.value = Tensor::scalar(s);
    n.needs_grad = node(x).needs_grad;
    n.backward = [x](Graph& g, int self) {
        const double gv = g.grad(self).item();
        Tensor dx = g.value(x);
        std::fill(dx.data().begin(), dx.data().end(), gv);
        g.accumulate_grad(x, dx);
    };
    return push(std::move(n));
}

void Graph::backward(int loss_id) {
    if (loss_id < 0 || loss_id >= static_cast<int>(nodes_.size())) {
        throw ShapeError("backward: loss node id out of range");
    }
    if (value(loss_id).size() != 1) {
        throw ShapeError("backward requires a scalar loss, got " + value(loss_id).shape_str());
    }
    grads_.assign(nodes_.size(), Tensor());
    grad_set_.assign(nodes_.size(), 0);
    grads_[static_cast<size_t>(loss_id)] = Tensor::scalar(1.0);
    grad_set_[static_cast<size_t>(loss_id)] = 1;
    for (int id = loss_id; id >= 0; --id) {
        if (!grad_set_[static_cast<size_t>(id)]) continue;
        auto& nd = nodes_[static_cast<size_t>(id)];
        if (nd.backward) nd.backward(*this, id);
    }
}

void Graph::accumulate_grad(int id, const Tensor& g) {
    if (!nodes_[static_cast<size_t>(id)].needs_grad) return;
    if (!grad_set_[static_cast<size_t>(id)]) {
        grads_[static_cast<size_t>(id)] = g;
        grad_set_[static_cast<size_t>(id)] = 1;
    } else {
        Tensor& acc = grads_[static_cast<size_t>(id)];
        for (int64_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
}

Tensor& Graph::grad_ref(int id) { return grads_[static_cast<size_t>(id)]; }

bool Graph::has_grad(int id) const {
    return id >= 0 && id < static_cast<int>(grad_set_.size()) &&
           grad_set_[static_cast<size_t>(id)];
}

const Tensor& Graph::grad(int id) const {
    if (!has_grad(id)) {
        throw ShapeError("no gradient recorded for node " + std::to_string(id));
    }
    return grads_[static_cast<size_t>(id)];
}

}  // namespace phyadapt
