#include "digan/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace digan {

Eigen::Index numel(const Shape& shape) {
    Eigen::Index n = 1;
    for (Eigen::Index e : shape) n *= e;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) os << " x ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void TensorNode::accumulate_grad(const Eigen::VectorXd& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
        grad = g;
    } else {
        grad += g;
    }
}

Eigen::VectorXd& TensorNode::ensure_grad() {
    if (grad.size() == 0) grad = Eigen::VectorXd::Zero(numel(shape));
    return grad;
}

// ---- Tensor ---------------------------------------------------------------

Tensor make_op_result(Shape shape, Eigen::VectorXd value, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    for (const Tensor& p : parents) {
        if (p.node()->requires_grad) node->requires_grad = true;
    }
    if (node->requires_grad) {
        for (const Tensor& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(node);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->value = Eigen::VectorXd::Zero(numel(shape));
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->value = Eigen::VectorXd::Constant(numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return full({1}, value, requires_grad);
}

Tensor Tensor::from_flat(Shape shape, Eigen::VectorXd data, bool requires_grad) {
    if (numel(shape) != data.size()) {
        throw DimensionError("from_flat: shape " + shape_string(shape) + " does not hold " +
                             std::to_string(data.size()) + " values");
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m, bool requires_grad) {
    RowMat rm = m;
    Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(rm.data(), rm.size());
    return from_flat({m.rows(), m.cols()}, std::move(flat), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
bool Tensor::requires_grad() const { return node_->requires_grad; }
const Eigen::VectorXd& Tensor::data() const { return node_->value; }
Eigen::VectorXd& Tensor::mutable_data() { return node_->value; }

Eigen::Map<const RowMat> Tensor::matrix() const {
    if (ndim() != 2) {
        throw DimensionError("matrix view requires rank 2, got " + shape_string(shape()));
    }
    return Eigen::Map<const RowMat>(node_->value.data(), shape()[0], shape()[1]);
}

bool Tensor::has_grad() const { return node_->grad.size() > 0; }

const Eigen::VectorXd& Tensor::grad() const {
    if (!has_grad()) {
        throw ContractError("grad requested before any backward pass");
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_->grad.size() > 0) node_->grad.setZero();
}

double Tensor::item() const {
    if (size() != 1) {
        throw ContractError("item() requires a one-element tensor, got " + shape_string(shape()));
    }
    return node_->value[0];
}

// ---- graph ----------------------------------------------------------------

ComputeGraph ComputeGraph::trace(const Tensor& root) {
    ComputeGraph graph;
    if (!root.node()->requires_grad) return graph;

    // Iterative post-order DFS over grad-requiring nodes; the resulting
    // order_ is topological (parents before children).
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    graph.keep_alive_.push_back(root.node());

    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        bool descended = false;
        while (next_child < node->parents.size()) {
            TensorNode* parent = node->parents[next_child].get();
            ++next_child;
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
                descended = true;
                break;
            }
        }
        if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
            graph.order_.push_back(stack.back().first);
            stack.pop_back();
        }
    }
    return graph;
}

void ComputeGraph::run_backward() const {
    if (order_.empty()) return;
    // Interior grads are fresh per pass; leaf grads accumulate across passes.
    for (TensorNode* node : order_) {
        if (node->backward_fn) {
            if (node->grad.size() == 0) {
                node->grad = Eigen::VectorXd::Zero(numel(node->shape));
            } else {
                node->grad.setZero();
            }
        }
    }
    TensorNode* root = order_.back();
    root->accumulate_grad(Eigen::VectorXd::Ones(1));
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
}

void backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward requires a scalar root, got " + shape_string(loss.shape()));
    }
    if (!loss.node()->requires_grad) {
        throw ContractError("backward root is not reachable from any tracked tensor");
    }
    ComputeGraph::trace(loss).run_backward();
}

// ---- elementwise ops --------------------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    }
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto pa = a.node();
    auto pb = b.node();
    return make_op_result(a.shape(), a.data() + b.data(), {a, b}, [pa, pb](TensorNode& out) {
        pa->accumulate_grad(out.grad);
        pb->accumulate_grad(out.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto pa = a.node();
    auto pb = b.node();
    return make_op_result(a.shape(), a.data() - b.data(), {a, b}, [pa, pb](TensorNode& out) {
        pa->accumulate_grad(out.grad);
        pb->accumulate_grad(-out.grad);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto pa = a.node();
    auto pb = b.node();
    return make_op_result(a.shape(), (a.data().array() * b.data().array()).matrix(), {a, b},
                          [pa, pb](TensorNode& out) {
                              pa->accumulate_grad(
                                  (out.grad.array() * pb->value.array()).matrix());
                              pb->accumulate_grad(
                                  (out.grad.array() * pa->value.array()).matrix());
                          });
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    auto pa = a.node();
    auto pb = b.node();
    return make_op_result(a.shape(), (a.data().array() / b.data().array()).matrix(), {a, b},
                          [pa, pb](TensorNode& out) {
                              pa->accumulate_grad(
                                  (out.grad.array() / pb->value.array()).matrix());
                              pb->accumulate_grad((-out.grad.array() * pa->value.array() /
                                                   pb->value.array().square())
                                                      .matrix());
                          });
}

Tensor affine(const Tensor& x, double a, double b) {
    auto px = x.node();
    return make_op_result(x.shape(), (a * x.data().array() + b).matrix(), {x},
                          [px, a](TensorNode& out) { px->accumulate_grad(a * out.grad); });
}

Tensor scalar_mul(const Tensor& x, double a) { return affine(x, a, 0.0); }

Tensor relu(const Tensor& x) {
    auto px = x.node();
    return make_op_result(x.shape(), x.data().cwiseMax(0.0), {x}, [px](TensorNode& out) {
        px->accumulate_grad(
            (out.grad.array() * (px->value.array() > 0.0).cast<double>()).matrix());
    });
}

Tensor sigmoid(const Tensor& x) {
    Eigen::VectorXd y(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        y[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    auto px = x.node();
    return make_op_result(x.shape(), std::move(y), {x}, [px](TensorNode& out) {
        px->accumulate_grad(
            (out.grad.array() * out.value.array() * (1.0 - out.value.array())).matrix());
    });
}

Tensor log(const Tensor& x) {
    auto px = x.node();
    return make_op_result(x.shape(), x.data().array().log().matrix(), {x},
                          [px](TensorNode& out) {
                              px->accumulate_grad(
                                  (out.grad.array() / px->value.array()).matrix());
                          });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    auto px = x.node();
    return make_op_result(x.shape(), x.data().cwiseMax(lo).cwiseMin(hi), {x},
                          [px, lo, hi](TensorNode& out) {
                              Eigen::ArrayXd pass = ((px->value.array() >= lo) &&
                                                     (px->value.array() <= hi))
                                                        .cast<double>();
                              px->accumulate_grad((out.grad.array() * pass).matrix());
                          });
}

Tensor sum(const Tensor& x) {
    auto px = x.node();
    const Eigen::Index n = x.size();
    Eigen::VectorXd v(1);
    v[0] = x.data().sum();
    return make_op_result({1}, std::move(v), {x}, [px, n](TensorNode& out) {
        px->accumulate_grad(Eigen::VectorXd::Constant(n, out.grad[0]));
    });
}

Tensor mean(const Tensor& x) { return scalar_mul(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw DimensionError("reshape: " + shape_string(x.shape()) + " has " +
                             std::to_string(x.size()) + " elements, target " +
                             shape_string(shape) + " has " + std::to_string(numel(shape)));
    }
    auto px = x.node();
    return make_op_result(std::move(shape), x.data(), {x},
                          [px](TensorNode& out) { px->accumulate_grad(out.grad); });
}

Tensor permute3(const Tensor& x, const std::array<int, 3>& order) {
    if (x.ndim() != 3) {
        throw DimensionError("permute3 requires rank 3, got " + shape_string(x.shape()));
    }
    const Shape& s = x.shape();
    Shape out_shape{s[static_cast<std::size_t>(order[0])], s[static_cast<std::size_t>(order[1])],
                    s[static_cast<std::size_t>(order[2])]};
    const Eigen::Index n = x.size();
    // map[o] = source flat index feeding output flat index o
    std::vector<Eigen::Index> map(static_cast<std::size_t>(n));
    const Eigen::Index src_stride[3] = {s[1] * s[2], s[2], 1};
    Eigen::Index o = 0;
    for (Eigen::Index i0 = 0; i0 < out_shape[0]; ++i0) {
        for (Eigen::Index i1 = 0; i1 < out_shape[1]; ++i1) {
            for (Eigen::Index i2 = 0; i2 < out_shape[2]; ++i2) {
                Eigen::Index coords[3];
                coords[order[0]] = i0;
                coords[order[1]] = i1;
                coords[order[2]] = i2;
                map[static_cast<std::size_t>(o++)] = coords[0] * src_stride[0] +
                                                     coords[1] * src_stride[1] + coords[2];
            }
        }
    }
    Eigen::VectorXd value(n);
    for (Eigen::Index i = 0; i < n; ++i) value[i] = x.data()[map[static_cast<std::size_t>(i)]];
    auto px = x.node();
    return make_op_result(std::move(out_shape), std::move(value), {x},
                          [px, map = std::move(map)](TensorNode& out) {
                              if (!px->requires_grad) return;
                              Eigen::VectorXd& g = px->ensure_grad();
                              for (Eigen::Index i = 0; i < out.grad.size(); ++i) {
                                  g[map[static_cast<std::size_t>(i)]] += out.grad[i];
                              }
                          });
}

Tensor select0(const Tensor& x, Eigen::Index i) {
    if (x.ndim() < 1 || i < 0 || i >= x.shape()[0]) {
        throw DimensionError("select0: index " + std::to_string(i) + " out of range for " +
                             shape_string(x.shape()));
    }
    Shape out_shape(x.shape().begin() + 1, x.shape().end());
    if (out_shape.empty()) out_shape = {1};
    const Eigen::Index rest = numel(out_shape);
    auto px = x.node();
    Eigen::VectorXd value = x.data().segment(i * rest, rest);
    return make_op_result(std::move(out_shape), std::move(value), {x},
                          [px, i, rest](TensorNode& out) {
                              if (!px->requires_grad) return;
                              px->ensure_grad().segment(i * rest, rest) += out.grad;
                          });
}

Tensor stack0(const std::vector<Tensor>& items) {
    if (items.empty()) throw ContractError("stack0: empty item list");
    const Shape& item_shape = items[0].shape();
    for (const Tensor& t : items) check_same_shape(items[0], t, "stack0");
    const Eigen::Index rest = numel(item_shape);
    const auto n = static_cast<Eigen::Index>(items.size());
    Shape out_shape{n};
    out_shape.insert(out_shape.end(), item_shape.begin(), item_shape.end());
    Eigen::VectorXd value(n * rest);
    for (Eigen::Index k = 0; k < n; ++k) {
        value.segment(k * rest, rest) = items[static_cast<std::size_t>(k)].data();
    }
    std::vector<std::shared_ptr<TensorNode>> parents;
    parents.reserve(items.size());
    for (const Tensor& t : items) parents.push_back(t.node());
    return make_op_result(std::move(out_shape), std::move(value), items,
                          [parents = std::move(parents), rest](TensorNode& out) {
                              for (std::size_t k = 0; k < parents.size(); ++k) {
                                  if (!parents[k]->requires_grad) continue;
                                  parents[k]->ensure_grad() += out.grad.segment(
                                      static_cast<Eigen::Index>(k) * rest, rest);
                              }
                          });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    if (x.ndim() != 2 || v.size() != x.shape()[1]) {
        throw DimensionError("add_rowvec: " + shape_string(x.shape()) + " with vector " +
                             shape_string(v.shape()));
    }
    const Eigen::Index r = x.shape()[0];
    const Eigen::Index c = x.shape()[1];
    Eigen::VectorXd value = x.data();
    for (Eigen::Index i = 0; i < r; ++i) value.segment(i * c, c) += v.data();
    auto px = x.node();
    auto pv = v.node();
    return make_op_result(x.shape(), std::move(value), {x, v}, [px, pv, r, c](TensorNode& out) {
        px->accumulate_grad(out.grad);
        Eigen::VectorXd gv = Eigen::VectorXd::Zero(c);
        for (Eigen::Index i = 0; i < r; ++i) gv += out.grad.segment(i * c, c);
        pv->accumulate_grad(gv);
    });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<Eigen::Index>& indices) {
    if (table.ndim() != 2) {
        throw DimensionError("embedding_lookup: table must be rank 2, got " +
                             shape_string(table.shape()));
    }
    const Eigen::Index rows = table.shape()[0];
    const Eigen::Index d = table.shape()[1];
    for (Eigen::Index idx : indices) {
        if (idx < 0 || idx >= rows) {
            throw DimensionError("embedding_lookup: index " + std::to_string(idx) +
                                 " outside table " + shape_string(table.shape()));
        }
    }
    const auto n = static_cast<Eigen::Index>(indices.size());
    Eigen::VectorXd value(n * d);
    for (Eigen::Index b = 0; b < n; ++b) {
        value.segment(b * d, d) = table.data().segment(indices[static_cast<std::size_t>(b)] * d, d);
    }
    auto pt = table.node();
    return make_op_result({n, d}, std::move(value), {table},
                          [pt, d, idx = indices](TensorNode& out) {
                              if (!pt->requires_grad) return;
                              Eigen::VectorXd& g = pt->ensure_grad();
                              for (std::size_t b = 0; b < idx.size(); ++b) {
                                  g.segment(idx[b] * d, d) +=
                                      out.grad.segment(static_cast<Eigen::Index>(b) * d, d);
                              }
                          });
}

// ---- matrix ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()));
    }
    const Eigen::Index r = a.shape()[0];
    const Eigen::Index k = a.shape()[1];
    const Eigen::Index c = b.shape()[1];
    Eigen::Map<const RowMat> ma(a.data().data(), r, k);
    Eigen::Map<const RowMat> mb(b.data().data(), k, c);
    RowMat mc = ma * mb;
    Eigen::VectorXd value = Eigen::Map<const Eigen::VectorXd>(mc.data(), mc.size());
    auto pa = a.node();
    auto pb = b.node();
    return make_op_result({r, c}, std::move(value), {a, b}, [pa, pb, r, k, c](TensorNode& out) {
        Eigen::Map<const RowMat> gy(out.grad.data(), r, c);
        Eigen::Map<const RowMat> ma(pa->value.data(), r, k);
        Eigen::Map<const RowMat> mb(pb->value.data(), k, c);
        RowMat ga = gy * mb.transpose();
        RowMat gb = ma.transpose() * gy;
        pa->accumulate_grad(Eigen::Map<const Eigen::VectorXd>(ga.data(), ga.size()));
        pb->accumulate_grad(Eigen::Map<const Eigen::VectorXd>(gb.data(), gb.size()));
    });
}

Tensor transpose2(const Tensor& x) {
    if (x.ndim() != 2) {
        throw DimensionError("transpose2 requires rank 2, got " + shape_string(x.shape()));
    }
    const Eigen::Index r = x.shape()[0];
    const Eigen::Index c = x.shape()[1];
    RowMat xt = Eigen::Map<const RowMat>(x.data().data(), r, c).transpose();
    Eigen::VectorXd value = Eigen::Map<const Eigen::VectorXd>(xt.data(), xt.size());
    auto px = x.node();
    return make_op_result({c, r}, std::move(value), {x}, [px, r, c](TensorNode& out) {
        RowMat g = Eigen::Map<const RowMat>(out.grad.data(), c, r).transpose();
        px->accumulate_grad(Eigen::Map<const Eigen::VectorXd>(g.data(), g.size()));
    });
}

Tensor softmax_rows(const Tensor& x) {
    if (x.ndim() != 2) {
        throw DimensionError("softmax_rows requires rank 2, got " + shape_string(x.shape()));
    }
    if (!x.data().allFinite()) {
        throw NumericError("softmax_rows: non-finite input");
    }
    const Eigen::Index r = x.shape()[0];
    const Eigen::Index c = x.shape()[1];
    Eigen::VectorXd value(r * c);
    for (Eigen::Index i = 0; i < r; ++i) {
        const auto row = x.data().segment(i * c, c);
        const double m = row.maxCoeff();
        Eigen::ArrayXd e = (row.array() - m).exp();
        value.segment(i * c, c) = (e / e.sum()).matrix();
    }
    auto px = x.node();
    return make_op_result({r, c}, std::move(value), {x}, [px, r, c](TensorNode& out) {
        Eigen::VectorXd g(r * c);
        for (Eigen::Index i = 0; i < r; ++i) {
            const auto y = out.value.segment(i * c, c);
            const auto gy = out.grad.segment(i * c, c);
            const double dot = gy.dot(y);
            g.segment(i * c, c) = (y.array() * (gy.array() - dot)).matrix();
        }
        px->accumulate_grad(g);
    });
}

// ---- conv2d -----------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
    if (x.ndim() != 4 || kernels.ndim() != 4) {
        throw DimensionError("conv2d: expected rank-4 input and kernels, got " +
                             shape_string(x.shape()) + " and " + shape_string(kernels.shape()));
    }
    const Eigen::Index B = x.shape()[0], cin = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const Eigen::Index cout = kernels.shape()[0], kcin = kernels.shape()[1],
                       kh = kernels.shape()[2], kw = kernels.shape()[3];
    if (kcin != cin) {
        throw DimensionError("conv2d: channel mismatch, input " + shape_string(x.shape()) +
                             " vs kernels " + shape_string(kernels.shape()));
    }
    if (bias.size() != cout) {
        throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " for " +
                             std::to_string(cout) + " output channels");
    }
    const Eigen::Index pt = (kh - 1) / 2; // even kernels pad extra at bottom/right
    const Eigen::Index pl = (kw - 1) / 2;

    const double* xd = x.data().data();
    const double* kd = kernels.data().data();
    const double* bd = bias.data().data();
    Eigen::VectorXd value(B * cout * H * W);
    double* yd = value.data();

    const Eigen::Index x_bs = cin * H * W, x_cs = H * W;
    const Eigen::Index k_os = cin * kh * kw, k_cs = kh * kw;
    const Eigen::Index y_bs = cout * H * W, y_cs = H * W;

    for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index co = 0; co < cout; ++co) {
            for (Eigen::Index i = 0; i < H; ++i) {
                for (Eigen::Index j = 0; j < W; ++j) {
                    double acc = bd[co];
                    for (Eigen::Index ci = 0; ci < cin; ++ci) {
                        for (Eigen::Index u = 0; u < kh; ++u) {
                            const Eigen::Index yy = i + u - pt;
                            if (yy < 0 || yy >= H) continue;
                            for (Eigen::Index v = 0; v < kw; ++v) {
                                const Eigen::Index xx = j + v - pl;
                                if (xx < 0 || xx >= W) continue;
                                acc += xd[b * x_bs + ci * x_cs + yy * W + xx] *
                                       kd[co * k_os + ci * k_cs + u * kw + v];
                            }
                        }
                    }
                    yd[b * y_bs + co * y_cs + i * W + j] = acc;
                }
            }
        }
    }

    auto px = x.node();
    auto pk = kernels.node();
    auto pb = bias.node();
    return make_op_result(
        {B, cout, H, W}, std::move(value), {x, kernels, bias},
        [px, pk, pb, B, cin, H, W, cout, kh, kw, pt, pl, x_bs, x_cs, k_os, k_cs, y_bs,
         y_cs](TensorNode& out) {
            const double* xd = px->value.data();
            const double* kd = pk->value.data();
            const double* gy = out.grad.data();
            Eigen::VectorXd gx = Eigen::VectorXd::Zero(px->value.size());
            Eigen::VectorXd gk = Eigen::VectorXd::Zero(pk->value.size());
            Eigen::VectorXd gb = Eigen::VectorXd::Zero(pb->value.size());
            for (Eigen::Index b = 0; b < B; ++b) {
                for (Eigen::Index co = 0; co < cout; ++co) {
                    for (Eigen::Index i = 0; i < H; ++i) {
                        for (Eigen::Index j = 0; j < W; ++j) {
                            const double g = gy[b * y_bs + co * y_cs + i * W + j];
                            gb[co] += g;
                            for (Eigen::Index ci = 0; ci < cin; ++ci) {
                                for (Eigen::Index u = 0; u < kh; ++u) {
                                    const Eigen::Index yy = i + u - pt;
                                    if (yy < 0 || yy >= H) continue;
                                    for (Eigen::Index v = 0; v < kw; ++v) {
                                        const Eigen::Index xx = j + v - pl;
                                        if (xx < 0 || xx >= W) continue;
                                        const Eigen::Index xi = b * x_bs + ci * x_cs + yy * W + xx;
                                        const Eigen::Index ki = co * k_os + ci * k_cs + u * kw + v;
                                        gx[xi] += g * kd[ki];
                                        gk[ki] += g * xd[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            px->accumulate_grad(gx);
            pk->accumulate_grad(gk);
            pb->accumulate_grad(gb);
        });
}

Tensor conv2d_single(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
    if (x.ndim() != 3) {
        throw DimensionError("conv2d_single: expected rank-3 input, got " +
                             shape_string(x.shape()));
    }
    Tensor batched = reshape(x, {1, x.shape()[0], x.shape()[1], x.shape()[2]});
    Tensor y = conv2d(batched, kernels, bias);
    return reshape(y, {y.shape()[1], y.shape()[2], y.shape()[3]});
}

// ---- batch norm ---------------------------------------------------------------

RunningStats RunningStats::make(Eigen::Index channels) {
    RunningStats s;
    s.mean = Eigen::VectorXd::Zero(channels);
    s.var = Eigen::VectorXd::Ones(channels);
    return s;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, Mode mode,
                  RunningStats& stats) {
    if (x.ndim() < 2) {
        throw DimensionError("batch_norm requires rank >= 2, got " + shape_string(x.shape()));
    }
    const Eigen::Index B = x.shape()[0];
    const Eigen::Index C = x.shape()[1];
    if (B == 0) throw ContractError("batch_norm: empty batch");
    if (eps <= 0.0) throw ContractError("batch_norm: eps must be positive");
    if (gamma.size() != C || beta.size() != C) {
        throw DimensionError("batch_norm: gamma/beta " + shape_string(gamma.shape()) + "/" +
                             shape_string(beta.shape()) + " for " + std::to_string(C) +
                             " channels");
    }
    if (stats.mean.size() != C) {
        throw DimensionError("batch_norm: running stats hold " +
                             std::to_string(stats.mean.size()) + " channels, input has " +
                             std::to_string(C));
    }
    const Eigen::Index R = x.size() / (B * C); // spatial extent per channel per item
    const Eigen::Index N = B * R;

    Eigen::VectorXd mu(C), var(C);
    if (mode == Mode::train) {
        for (Eigen::Index c = 0; c < C; ++c) {
            double s = 0.0;
            for (Eigen::Index b = 0; b < B; ++b) {
                s += x.data().segment((b * C + c) * R, R).sum();
            }
            mu[c] = s / static_cast<double>(N);
            double sq = 0.0;
            for (Eigen::Index b = 0; b < B; ++b) {
                sq += (x.data().segment((b * C + c) * R, R).array() - mu[c]).square().sum();
            }
            var[c] = sq / static_cast<double>(N);
        }
        stats.mean = (1.0 - stats.momentum) * stats.mean + stats.momentum * mu;
        stats.var = (1.0 - stats.momentum) * stats.var + stats.momentum * var;
    } else {
        mu = stats.mean;
        var = stats.var;
    }

    Eigen::VectorXd inv_std = (var.array() + eps).rsqrt().matrix();
    Eigen::VectorXd value(x.size());
    for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index c = 0; c < C; ++c) {
            const Eigen::Index off = (b * C + c) * R;
            value.segment(off, R) =
                ((x.data().segment(off, R).array() - mu[c]) * inv_std[c] * gamma.data()[c] +
                 beta.data()[c])
                    .matrix();
        }
    }

    auto px = x.node();
    auto pg = gamma.node();
    auto pb = beta.node();
    const bool train = mode == Mode::train;
    return make_op_result(
        x.shape(), std::move(value), {x, gamma, beta},
        [px, pg, pb, B, C, R, N, train, mu = std::move(mu),
         inv_std = std::move(inv_std)](TensorNode& out) {
            Eigen::VectorXd gx = Eigen::VectorXd::Zero(px->value.size());
            Eigen::VectorXd gg = Eigen::VectorXd::Zero(C);
            Eigen::VectorXd gb = Eigen::VectorXd::Zero(C);
            for (Eigen::Index c = 0; c < C; ++c) {
                // gather per-channel sums of dY and dY*xhat
                double sum_g = 0.0, sum_gx = 0.0;
                for (Eigen::Index b = 0; b < B; ++b) {
                    const Eigen::Index off = (b * C + c) * R;
                    const auto g = out.grad.segment(off, R).array();
                    const auto xh =
                        (px->value.segment(off, R).array() - mu[c]) * inv_std[c];
                    sum_g += g.sum();
                    sum_gx += (g * xh).sum();
                }
                gg[c] = sum_gx;
                gb[c] = sum_g;
                const double gamma_c = pg->value[c];
                const double scale = gamma_c * inv_std[c];
                for (Eigen::Index b = 0; b < B; ++b) {
                    const Eigen::Index off = (b * C + c) * R;
                    const auto g = out.grad.segment(off, R).array();
                    const auto xh =
                        (px->value.segment(off, R).array() - mu[c]) * inv_std[c];
                    if (train) {
                        gx.segment(off, R) =
                            (scale * (g - sum_g / static_cast<double>(N) -
                                      xh * (sum_gx / static_cast<double>(N))))
                                .matrix();
                    } else {
                        gx.segment(off, R) = (scale * g).matrix();
                    }
                }
            }
            px->accumulate_grad(gx);
            pg->accumulate_grad(gg);
            pb->accumulate_grad(gb);
        });
}

// ---- optimizer ------------------------------------------------------------------

AdamState AdamState::make(const std::vector<Tensor>& params, double lr) {
    AdamState s;
    s.lr = lr;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor& p : params) {
        s.m.push_back(Eigen::VectorXd::Zero(p.size()));
        s.v.push_back(Eigen::VectorXd::Zero(p.size()));
    }
    return s;
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (params.size() != state.m.size()) {
        throw DimensionError("adam_step: state holds " + std::to_string(state.m.size()) +
                             " buffers for " + std::to_string(params.size()) + " parameters");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (state.m[i].size() != p.size()) {
            throw DimensionError("adam_step: moment buffer " + std::to_string(state.m[i].size()) +
                                 " vs parameter " + shape_string(p.shape()));
        }
        Eigen::VectorXd g = p.has_grad() ? p.grad() : Eigen::VectorXd::Zero(p.size());
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseProduct(g);
        Eigen::ArrayXd m_hat = state.m[i].array() / bc1;
        Eigen::ArrayXd v_hat = state.v[i].array() / bc2;
        p.mutable_data().array() -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

void zero_grads(std::vector<Tensor>& params) {
    for (Tensor& p : params) p.zero_grad();
}

} // namespace digan
