#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsde::ad {

// Dense row-major tensor of 64-bit floats. Rank 1 (vectors) and rank 2
// (matrices) cover everything the models need; scalars are shape {1}.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {}

    static Tensor zeros(std::vector<std::size_t> s);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor vec(std::vector<double> d);

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }
    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }
    double item() const;
    bool finite() const;
};

using NodeId = int;

// Append-only reverse-mode tape. Nodes are created in topological order
// (inputs precede consumers), so one reverse sweep from the loss node
// populates every reachable gradient. Single-threaded by contract;
// distinct tapes may live on distinct threads.
class Tape {
public:
    NodeId leaf(Tensor v);
    // Leaf tagged with an external parameter slot so gradients can be
    // routed back to a parameter registry after backward().
    NodeId param(Tensor v, int slot);

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);   // elementwise
    NodeId div(NodeId a, NodeId b);   // elementwise
    NodeId matvec(NodeId w, NodeId x);
    NodeId scale(NodeId a, double k);
    NodeId add_const(NodeId a, double k);
    NodeId neg(NodeId a);
    NodeId square(NodeId a);
    NodeId tanh(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId softplus(NodeId a);
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId clamp_min(NodeId a, double floor);
    NodeId sum(NodeId a);
    NodeId dot(NodeId a, NodeId b);
    NodeId concat(std::span<const NodeId> parts);
    NodeId slice(NodeId a, std::size_t start, std::size_t len);
    NodeId index(NodeId a, std::size_t i);
    NodeId logsumexp(NodeId a);
    NodeId smul(NodeId v, NodeId s);  // vector times scalar node
    NodeId detach(NodeId a);          // value copy, blocks gradient flow

    const Tensor& value(NodeId n) const { return nodes_[n].value; }
    const Tensor& grad(NodeId n) const;

    // Reverse sweep from a scalar loss. Throws on non-scalar loss.
    void backward(NodeId loss);

    // Visit every param-tagged node with a populated gradient.
    void visit_param_grads(const std::function<void(int slot, const Tensor&)>& fn) const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        int param_slot = -1;
        std::function<void(Tape&, NodeId)> back;  // nullptr for leaves
    };

    NodeId push(Tensor v, std::function<void(Tape&, NodeId)> back, const char* op);
    Tensor& grad_buf(NodeId n);

    std::vector<Node> nodes_;
    bool swept_ = false;
};

}  // namespace lsde::ad
