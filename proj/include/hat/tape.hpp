#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "hat/tensor.hpp"

namespace hat {

// Define-by-run reverse-mode tape over dense matrices.
//
// The scalar type is a template parameter: training runs on float tapes,
// the finite-difference gradient checker runs everything in double so the
// oracle comparison is not limited by f32 rounding. Gradients are always
// accumulated in double. Node ids are topologically ordered by construction;
// backward() walks them in strict reverse order exactly once.
template <class T>
class Tape {
public:
    enum class Op : uint8_t {
        Leaf,
        MatMul,
        AddBias,
        Add,
        Sub,
        Affine,      // s0 * x + s1, elementwise
        Relu,
        Sigmoid,
        LogClamped,  // log(max(x, kLogClamp))
        Concat,      // along columns, aux = left width
        Mean,
        Sum,
        L2Norm,      // whole tensor -> scalar
        L2NormRows,  // [m x n] -> [m x 1]
        SoftmaxXent, // mean cross-entropy, integer labels
    };

    static constexpr double kLogClamp = 1e-12;
    static constexpr double kNormGuard = 1e-12;

    struct Node {
        Op op;
        int a = -1, b = -1;
        int rows = 0, cols = 0;
        T s0 = 0, s1 = 0;
        int aux = 0;
        std::vector<T> val;
        std::vector<T> cache;       // op-specific locals for backward
        std::vector<int> labels;    // SoftmaxXent only
    };

    void reset() {
        nodes_.clear();
        grads_.clear();
        relu_signs_.clear();
    }

    int size() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int id) const { return nodes_[id]; }
    const std::vector<T>& val(int id) const { return nodes_[id].val; }
    int rows(int id) const { return nodes_[id].rows; }
    int cols(int id) const { return nodes_[id].cols; }

    T scalar(int id) const {
        const Node& n = nodes_[id];
        if (n.val.size() != 1)
            throw ContractError("Tape::scalar: node is " + Tensor::shape_str(n.rows, n.cols) +
                                ", not a scalar");
        return n.val[0];
    }

    // Signs (x > 0) of every ReLU pre-activation seen so far, in evaluation
    // order. Two evaluations whose signatures differ crossed a kink.
    const std::vector<uint8_t>& relu_signs() const { return relu_signs_; }

    int leaf(const Tensor& t) {
        Node n{};
        n.op = Op::Leaf;
        n.rows = t.rows;
        n.cols = t.cols;
        n.val.assign(t.data.begin(), t.data.end());
        return push(std::move(n));
    }

    int leaf_values(int rows, int cols, std::vector<T> values) {
        if (values.size() != static_cast<size_t>(rows) * cols)
            throw ShapeError("Tape::leaf_values: size mismatch for " +
                             Tensor::shape_str(rows, cols));
        Node n{};
        n.op = Op::Leaf;
        n.rows = rows;
        n.cols = cols;
        n.val = std::move(values);
        return push(std::move(n));
    }

    int matmul(int a, int b) {
        const Node& na = nodes_[a];
        const Node& nb = nodes_[b];
        if (na.cols != nb.rows)
            throw ShapeError("matmul: inner dimensions disagree, " +
                             Tensor::shape_str(na.rows, na.cols) + " * " +
                             Tensor::shape_str(nb.rows, nb.cols));
        Node n{};
        n.op = Op::MatMul;
        n.a = a;
        n.b = b;
        n.rows = na.rows;
        n.cols = nb.cols;
        n.val.assign(static_cast<size_t>(n.rows) * n.cols, T(0));
        const int m = na.rows, k = na.cols, c = nb.cols;
        for (int i = 0; i < m; ++i) {
            T* out = n.val.data() + static_cast<size_t>(i) * c;
            const T* arow = na.val.data() + static_cast<size_t>(i) * k;
            for (int p = 0; p < k; ++p) {
                const T av = arow[p];
                if (av == T(0)) continue;
                const T* brow = nb.val.data() + static_cast<size_t>(p) * c;
                for (int j = 0; j < c; ++j) out[j] += av * brow[j];
            }
        }
        return push(std::move(n));
    }

    // x [m x n] + bias [1 x n], broadcast over rows
    int add_bias(int x, int bias) {
        const Node& nx = nodes_[x];
        const Node& nb = nodes_[bias];
        if (nb.rows != 1 || nb.cols != nx.cols)
            throw ShapeError("add_bias: bias " + Tensor::shape_str(nb.rows, nb.cols) +
                             " does not broadcast over " + Tensor::shape_str(nx.rows, nx.cols));
        Node n = like(Op::AddBias, x, bias, nx);
        for (int i = 0; i < nx.rows; ++i)
            for (int j = 0; j < nx.cols; ++j)
                n.val[static_cast<size_t>(i) * nx.cols + j] =
                    nx.val[static_cast<size_t>(i) * nx.cols + j] + nb.val[j];
        return push(std::move(n));
    }

    int add(int a, int b) { return binary(Op::Add, a, b); }
    int sub(int a, int b) { return binary(Op::Sub, a, b); }

    int affine(int a, T mul, T shift) {
        Node n = like(Op::Affine, a, -1, nodes_[a]);
        n.s0 = mul;
        n.s1 = shift;
        for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = mul * nodes_[a].val[i] + shift;
        return push(std::move(n));
    }
    int scale(int a, T mul) { return affine(a, mul, T(0)); }

    int relu(int a) {
        Node n = like(Op::Relu, a, -1, nodes_[a]);
        for (size_t i = 0; i < n.val.size(); ++i) {
            const T x = nodes_[a].val[i];
            const bool pos = x > T(0);
            n.val[i] = pos ? x : T(0);
            relu_signs_.push_back(pos ? 1 : 0);
        }
        return push(std::move(n));
    }

    int sigmoid(int a) {
        Node n = like(Op::Sigmoid, a, -1, nodes_[a]);
        for (size_t i = 0; i < n.val.size(); ++i)
            n.val[i] = T(1) / (T(1) + std::exp(-nodes_[a].val[i]));
        return push(std::move(n));
    }

    int log_clamped(int a) {
        Node n = like(Op::LogClamped, a, -1, nodes_[a]);
        for (size_t i = 0; i < n.val.size(); ++i) {
            const T x = nodes_[a].val[i];
            n.val[i] = std::log(x > T(kLogClamp) ? x : T(kLogClamp));
        }
        return push(std::move(n));
    }

    // [m x p] ++ [m x q] -> [m x (p+q)]
    int concat_cols(int a, int b) {
        const Node& na = nodes_[a];
        const Node& nb = nodes_[b];
        if (na.rows != nb.rows)
            throw ShapeError("concat: row counts differ, " +
                             Tensor::shape_str(na.rows, na.cols) + " vs " +
                             Tensor::shape_str(nb.rows, nb.cols));
        Node n{};
        n.op = Op::Concat;
        n.a = a;
        n.b = b;
        n.rows = na.rows;
        n.cols = na.cols + nb.cols;
        n.aux = na.cols;
        n.val.resize(static_cast<size_t>(n.rows) * n.cols);
        for (int i = 0; i < n.rows; ++i) {
            T* out = n.val.data() + static_cast<size_t>(i) * n.cols;
            for (int j = 0; j < na.cols; ++j) out[j] = na.val[static_cast<size_t>(i) * na.cols + j];
            for (int j = 0; j < nb.cols; ++j)
                out[na.cols + j] = nb.val[static_cast<size_t>(i) * nb.cols + j];
        }
        return push(std::move(n));
    }

    int mean(int a) {
        Node n = scalar_node(Op::Mean, a);
        double acc = 0;
        for (T v : nodes_[a].val) acc += static_cast<double>(v);
        n.val[0] = static_cast<T>(acc / static_cast<double>(nodes_[a].val.size()));
        return push(std::move(n));
    }

    int sum(int a) {
        Node n = scalar_node(Op::Sum, a);
        double acc = 0;
        for (T v : nodes_[a].val) acc += static_cast<double>(v);
        n.val[0] = static_cast<T>(acc);
        return push(std::move(n));
    }

    int l2norm(int a) {
        Node n = scalar_node(Op::L2Norm, a);
        double acc = 0;
        for (T v : nodes_[a].val) acc += static_cast<double>(v) * v;
        n.val[0] = static_cast<T>(std::sqrt(acc));
        return push(std::move(n));
    }

    int l2norm_rows(int a) {
        const Node& na = nodes_[a];
        Node n{};
        n.op = Op::L2NormRows;
        n.a = a;
        n.rows = na.rows;
        n.cols = 1;
        n.val.resize(na.rows);
        for (int i = 0; i < na.rows; ++i) {
            double acc = 0;
            const T* row = na.val.data() + static_cast<size_t>(i) * na.cols;
            for (int j = 0; j < na.cols; ++j) acc += static_cast<double>(row[j]) * row[j];
            n.val[i] = static_cast<T>(std::sqrt(acc));
        }
        return push(std::move(n));
    }

    // logits [m x K], labels in [0, K) -> mean cross-entropy scalar.
    // Softmax probabilities are cached for the backward pass.
    int softmax_xent(int logits, std::vector<int> labels) {
        const Node& nl = nodes_[logits];
        if (static_cast<int>(labels.size()) != nl.rows)
            throw ShapeError("softmax_xent: " + std::to_string(labels.size()) +
                             " labels for logits " + Tensor::shape_str(nl.rows, nl.cols));
        Node n{};
        n.op = Op::SoftmaxXent;
        n.a = logits;
        n.rows = 1;
        n.cols = 1;
        n.labels = std::move(labels);
        n.cache.resize(nl.val.size());
        const int K = nl.cols;
        double loss = 0;
        for (int i = 0; i < nl.rows; ++i) {
            const T* row = nl.val.data() + static_cast<size_t>(i) * K;
            T* prow = n.cache.data() + static_cast<size_t>(i) * K;
            T mx = row[0];
            for (int j = 1; j < K; ++j) mx = std::max(mx, row[j]);
            double z = 0;
            for (int j = 0; j < K; ++j) {
                prow[j] = std::exp(row[j] - mx);
                z += static_cast<double>(prow[j]);
            }
            for (int j = 0; j < K; ++j) prow[j] = static_cast<T>(prow[j] / z);
            const int y = n.labels[i];
            if (y < 0 || y >= K) throw ContractError("softmax_xent: label out of range");
            loss -= std::log(std::max(static_cast<double>(prow[y]), kLogClamp));
        }
        n.val.assign(1, static_cast<T>(loss / nl.rows));
        return push(std::move(n));
    }

    // Reverse accumulation from a scalar loss. Gradients of nodes the loss
    // does not reach stay exactly zero.
    void backward(int loss) {
        const Node& nl = nodes_[loss];
        if (nl.val.size() != 1)
            throw ContractError("backward: loss must be scalar, got " +
                                Tensor::shape_str(nl.rows, nl.cols));
        grads_.assign(nodes_.size(), {});
        for (size_t i = 0; i < nodes_.size(); ++i) grads_[i].assign(nodes_[i].val.size(), 0.0);
        grads_[loss][0] = 1.0;
        for (int id = loss; id >= 0; --id) backward_node(id);
    }

    const std::vector<double>& grad(int id) const { return grads_[id]; }

    Tensor grad_tensor(int id) const {
        const Node& n = nodes_[id];
        std::vector<float> out(grads_[id].size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(grads_[id][i]);
        return Tensor::from(n.rows, n.cols, std::move(out));
    }

private:
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    std::vector<uint8_t> relu_signs_;

    int push(Node&& n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Node like(Op op, int a, int b, const Node& src) {
        Node n{};
        n.op = op;
        n.a = a;
        n.b = b;
        n.rows = src.rows;
        n.cols = src.cols;
        n.val.resize(src.val.size());
        return n;
    }

    Node scalar_node(Op op, int a) {
        Node n{};
        n.op = op;
        n.a = a;
        n.rows = 1;
        n.cols = 1;
        n.val.resize(1);
        return n;
    }

    int binary(Op op, int a, int b) {
        const Node& na = nodes_[a];
        const Node& nb = nodes_[b];
        if (na.rows != nb.rows || na.cols != nb.cols)
            throw ShapeError("elementwise op: shapes differ, " +
                             Tensor::shape_str(na.rows, na.cols) + " vs " +
                             Tensor::shape_str(nb.rows, nb.cols));
        Node n = like(op, a, b, na);
        if (op == Op::Add)
            for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = na.val[i] + nb.val[i];
        else
            for (size_t i = 0; i < n.val.size(); ++i) n.val[i] = na.val[i] - nb.val[i];
        return push(std::move(n));
    }

    void backward_node(int id) {
        const Node& n = nodes_[id];
        const std::vector<double>& g = grads_[id];
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::MatMul: {
                const Node& na = nodes_[n.a];
                const Node& nb = nodes_[n.b];
                std::vector<double>& ga = grads_[n.a];
                std::vector<double>& gb = grads_[n.b];
                const int m = na.rows, k = na.cols, c = nb.cols;
                // dA = dC * B^T
                for (int i = 0; i < m; ++i) {
                    const double* grow = g.data() + static_cast<size_t>(i) * c;
                    double* garow = ga.data() + static_cast<size_t>(i) * k;
                    for (int p = 0; p < k; ++p) {
                        const T* brow = nb.val.data() + static_cast<size_t>(p) * c;
                        double acc = 0;
                        for (int j = 0; j < c; ++j) acc += grow[j] * static_cast<double>(brow[j]);
                        garow[p] += acc;
                    }
                }
                // dB = A^T * dC
                for (int p = 0; p < k; ++p) {
                    double* gbrow = gb.data() + static_cast<size_t>(p) * c;
                    for (int i = 0; i < m; ++i) {
                        const double av = static_cast<double>(na.val[static_cast<size_t>(i) * k + p]);
                        if (av == 0.0) continue;
                        const double* grow = g.data() + static_cast<size_t>(i) * c;
                        for (int j = 0; j < c; ++j) gbrow[j] += av * grow[j];
                    }
                }
                break;
            }
            case Op::AddBias: {
                std::vector<double>& gx = grads_[n.a];
                std::vector<double>& gb = grads_[n.b];
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                for (int i = 0; i < n.rows; ++i)
                    for (int j = 0; j < n.cols; ++j)
                        gb[j] += g[static_cast<size_t>(i) * n.cols + j];
                break;
            }
            case Op::Add: {
                std::vector<double>& ga = grads_[n.a];
                std::vector<double>& gb = grads_[n.b];
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case Op::Sub: {
                std::vector<double>& ga = grads_[n.a];
                std::vector<double>& gb = grads_[n.b];
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                }
                break;
            }
            case Op::Affine: {
                std::vector<double>& ga = grads_[n.a];
                const double s = static_cast<double>(n.s0);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
                break;
            }
            case Op::Relu: {
                const Node& na = nodes_[n.a];
                std::vector<double>& ga = grads_[n.a];
                // subgradient 0 at the kink
                for (size_t i = 0; i < g.size(); ++i)
                    if (na.val[i] > T(0)) ga[i] += g[i];
                break;
            }
            case Op::Sigmoid: {
                std::vector<double>& ga = grads_[n.a];
                for (size_t i = 0; i < g.size(); ++i) {
                    const double y = static_cast<double>(n.val[i]);
                    ga[i] += g[i] * y * (1.0 - y);
                }
                break;
            }
            case Op::LogClamped: {
                const Node& na = nodes_[n.a];
                std::vector<double>& ga = grads_[n.a];
                for (size_t i = 0; i < g.size(); ++i) {
                    const double x = static_cast<double>(na.val[i]);
                    if (x > kLogClamp) ga[i] += g[i] / x;
                    // clamped region: derivative is 0
                }
                break;
            }
            case Op::Concat: {
                const int p = n.aux;
                const int q = n.cols - p;
                std::vector<double>& ga = grads_[n.a];
                std::vector<double>& gb = grads_[n.b];
                for (int i = 0; i < n.rows; ++i) {
                    const double* grow = g.data() + static_cast<size_t>(i) * n.cols;
                    for (int j = 0; j < p; ++j) ga[static_cast<size_t>(i) * p + j] += grow[j];
                    for (int j = 0; j < q; ++j) gb[static_cast<size_t>(i) * q + j] += grow[p + j];
                }
                break;
            }
            case Op::Mean: {
                std::vector<double>& ga = grads_[n.a];
                const double w = g[0] / static_cast<double>(ga.size());
                for (double& v : ga) v += w;
                break;
            }
            case Op::Sum: {
                std::vector<double>& ga = grads_[n.a];
                for (double& v : ga) v += g[0];
                break;
            }
            case Op::L2Norm: {
                const Node& na = nodes_[n.a];
                std::vector<double>& ga = grads_[n.a];
                const double norm = static_cast<double>(n.val[0]);
                if (norm > kNormGuard) {
                    const double w = g[0] / norm;
                    for (size_t i = 0; i < ga.size(); ++i)
                        ga[i] += w * static_cast<double>(na.val[i]);
                }
                break;
            }
            case Op::L2NormRows: {
                const Node& na = nodes_[n.a];
                std::vector<double>& ga = grads_[n.a];
                for (int i = 0; i < na.rows; ++i) {
                    const double norm = static_cast<double>(n.val[i]);
                    if (norm <= kNormGuard) continue;
                    const double w = g[i] / norm;
                    const T* row = na.val.data() + static_cast<size_t>(i) * na.cols;
                    double* grow = ga.data() + static_cast<size_t>(i) * na.cols;
                    for (int j = 0; j < na.cols; ++j) grow[j] += w * static_cast<double>(row[j]);
                }
                break;
            }
            case Op::SoftmaxXent: {
                const Node& na = nodes_[n.a];
                std::vector<double>& ga = grads_[n.a];
                const int K = na.cols;
                const double w = g[0] / na.rows;
                for (int i = 0; i < na.rows; ++i) {
                    const T* prow = n.cache.data() + static_cast<size_t>(i) * K;
                    double* grow = ga.data() + static_cast<size_t>(i) * K;
                    for (int j = 0; j < K; ++j) {
                        double d = static_cast<double>(prow[j]);
                        if (j == n.labels[i]) d -= 1.0;
                        grow[j] += w * d;
                    }
                }
                break;
            }
        }
    }
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace hat
