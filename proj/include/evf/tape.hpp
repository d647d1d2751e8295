#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evf/tensor.hpp"

namespace evf {

enum class Op : uint8_t {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Concat,
    Slice,
    Sigmoid,
    Tanh,
    Relu,
    Softplus,
    Exp,
    Log,
    Square,
    Sum,
    Mean,
    Broadcast,
    MeanStack,
};

const char* op_name(Op op);

// Reverse-mode tape. Ops compute eagerly as they are recorded, in definition
// order, so node ids are already a topological order; backward walks them in
// exact reverse. The recorded program can be replayed in float or double with
// substituted leaf values, which is what the finite-difference oracle uses.
class Tape {
public:
    using Id = int32_t;

    struct Node {
        Op op = Op::Leaf;
        std::vector<Id> in;
        Tensor value;
        bool requires_grad = false;  // leaf whose gradient is reported
        bool grad_path = false;      // reaches a requires_grad leaf
        int a0 = 0, a1 = 0;          // slice begin/len
        std::vector<int> perm;       // MeanStack canonical summation order
        std::string name;
    };

    Id leaf(Tensor v, bool requires_grad = false, std::string name = {});
    Id constant(Tensor v, std::string name = {});
    Id scalar(float v);

    Id matmul(Id a, Id b);
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);
    Id concat(const std::vector<Id>& xs);
    Id slice(Id a, int begin, int len);
    Id sigmoid(Id a);
    Id tanh(Id a);
    Id relu(Id a);
    Id softplus(Id a);
    Id exp(Id a);
    Id log(Id a);
    Id square(Id a);
    Id sum(Id a);
    Id mean(Id a);
    Id broadcast(Id a, std::vector<int> shape);
    Id mean_stack(const std::vector<Id>& xs);

    const Tensor& value(Id id) const { return node(id).value; }
    const Node& node(Id id) const;
    size_t size() const { return nodes_.size(); }
    Id find(const std::string& name) const;  // -1 if absent

    // loss must be a scalar ({1}); gradient accumulation over fan-out is summation
    void backward(Id loss);
    bool has_grad(Id id) const;
    Tensor grad(Id leaf) const;  // zeros if the leaf was never reached

    // re-execute the recorded program with some leaf values replaced
    template <typename S>
    std::vector<S> replay(Id out, const std::map<Id, std::vector<S>>& leaf_overrides) const;

    // central differences (f(x+h)-f(x-h))/2h per component, evaluated in f64
    std::vector<double> finite_difference(Id loss, Id leaf, double h) const;
    Tensor finite_difference_tensor(Id loss, Id leaf, double h) const;

private:
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;  // parallel to nodes_ after backward
    bool backward_done_ = false;

    Id push(Node n);
    Id unary(Op op, Id a);
    std::string label(Id id) const;
    template <typename S, typename GetPtr>
    void eval_node(const Node& n, GetPtr in_ptr, S* out) const;
};

}  // namespace evf
