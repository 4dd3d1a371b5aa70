#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "digan/errors.hpp"

namespace digan {

using Shape = std::vector<Eigen::Index>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Index numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorNode;

// Dense 64-bit-float tensor with optional reverse-mode gradient tracking.
// A Tensor is a cheap value-semantic handle onto a shared node; ops are free
// functions that record the graph as they execute. Values are immutable after
// construction except for leaf parameters updated by the optimizer between
// graph executions; grad buffers accumulate across backward calls until
// zero_grad.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_flat(Shape shape, Eigen::VectorXd data, bool requires_grad = false);
    static Tensor from_matrix(const Eigen::MatrixXd& m, bool requires_grad = false);

    bool valid() const { return node_ != nullptr; }
    const Shape& shape() const;
    Eigen::Index dim(int axis) const { return shape().at(static_cast<std::size_t>(axis)); }
    int ndim() const { return static_cast<int>(shape().size()); }
    Eigen::Index size() const { return numel(shape()); }
    bool requires_grad() const;

    const Eigen::VectorXd& data() const;
    Eigen::VectorXd& mutable_data();
    // Row-major matrix view of a rank-2 tensor.
    Eigen::Map<const RowMat> matrix() const;
    Eigen::MatrixXd to_matrix() const { return matrix(); }

    bool has_grad() const;
    const Eigen::VectorXd& grad() const;
    void zero_grad();

    // Value of a one-element tensor.
    double item() const;

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;

    friend Tensor make_op_result(Shape shape, Eigen::VectorXd value,
                                 std::vector<Tensor> parents,
                                 std::function<void(TensorNode&)> backward_fn);
};

struct TensorNode {
    Shape shape;
    Eigen::VectorXd value;
    Eigen::VectorXd grad; // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(TensorNode&)> backward_fn;

    void accumulate_grad(const Eigen::VectorXd& g);
    // Zero-initialized grad buffer for in-place accumulation.
    Eigen::VectorXd& ensure_grad();
};

// Topologically ordered record of the executed ops reaching one root.
// backward() walks the order once, in reverse. A graph is confined to one
// thread; independent graphs may run on independent threads since they share
// no mutable state.
class ComputeGraph {
public:
    static ComputeGraph trace(const Tensor& root);
    const std::vector<TensorNode*>& order() const { return order_; }
    void run_backward() const;

private:
    std::vector<TensorNode*> order_;
    std::vector<std::shared_ptr<TensorNode>> keep_alive_;
};

// Accumulates gradients on every reachable requires_grad tensor.
// The root must be scalar.
void backward(const Tensor& loss);

// ---- elementwise and shape ops ------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
// a * x + b applied elementwise.
Tensor affine(const Tensor& x, double a, double b);
Tensor scalar_mul(const Tensor& x, double a);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// Axis permutation of a rank-3 tensor; order is the source axis per target axis.
Tensor permute3(const Tensor& x, const std::array<int, 3>& order);
// Subtensor at position i of axis 0.
Tensor select0(const Tensor& x, Eigen::Index i);
// Stacks equally shaped tensors along a new axis 0.
Tensor stack0(const std::vector<Tensor>& items);
// Adds a length-c row vector to every row of an r x c tensor.
Tensor add_rowvec(const Tensor& x, const Tensor& v);
// Picks rows of table by index; gradients scatter back into the table.
Tensor embedding_lookup(const Tensor& table, const std::vector<Eigen::Index>& indices);

// ---- matrix and network ops ---------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2(const Tensor& x);
// Row-wise softmax of a rank-2 tensor, stabilized by row-max subtraction.
Tensor softmax_rows(const Tensor& x);

// Cross-correlation with zero same-padding and stride 1.
// x: [B x Cin x H x W], kernels: [Cout x Cin x kh x kw], bias: [Cout].
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias);
// Single-item convenience: x [Cin x H x W] -> [Cout x H x W].
Tensor conv2d_single(const Tensor& x, const Tensor& kernels, const Tensor& bias);

enum class Mode { train, infer };

struct RunningStats {
    Eigen::VectorXd mean; // per channel
    Eigen::VectorXd var;
    double momentum = 0.1;

    static RunningStats make(Eigen::Index channels);
};

// Channel-wise batch normalization over axis 1 of [B x C x ...].
// Train mode normalizes with batch moments (biased variance) and updates the
// running stats; infer mode normalizes with the running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  Mode mode, RunningStats& stats);

// ---- optimizer ------------------------------------------------------------

// Adaptive moment estimation with bias correction.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<Eigen::VectorXd> m;
    std::vector<Eigen::VectorXd> v;

    static AdamState make(const std::vector<Tensor>& params, double lr = 1e-3);
};

// One update over params from their accumulated grads. Params with no grad
// buffer are treated as zero-gradient.
void adam_step(std::vector<Tensor>& params, AdamState& state);

void zero_grads(std::vector<Tensor>& params);

} // namespace digan
