#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gradfeat/ops.hpp"
#include "gradfeat/tensor.hpp"

namespace gradfeat {

/// Reverse-mode tape for feed-forward chains. Every recorded op appends one node;
/// backward replays the nodes in exact reverse order and sums cotangents for values
/// consumed more than once.
class Tape {
public:
    using Var = std::size_t;

    /// Leaf that does not need a gradient.
    Var constant(Tensor value);
    /// Leaf that receives an input gradient but is not a named parameter.
    Var input(Tensor value);
    /// Named parameter leaf; its gradient is reported under `name`.
    Var parameter(std::string name, Tensor value);

    Var conv2d(Var x, Var w, std::optional<Var> b, const ops::Conv2dOptions& opt);
    Var dense(Var x, Var w, std::optional<Var> b, float weight_scale = 1.0f);
    Var relu(Var x);
    Var pool(Var x, const ops::PoolOptions& opt);
    Var reshape(Var x, Shape shape);

    const Tensor& value(Var v) const { return values_.at(v); }
    bool requires_grad(Var v) const { return requires_grad_.at(v); }
    std::size_t num_ops() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }

    /// ReLU mask recorded for the op that produced `v` (must be a relu output).
    const std::vector<std::uint8_t>& relu_mask(Var v) const;

    struct Gradients {
        std::map<std::string, Tensor> params;
        std::vector<std::optional<Tensor>> values; // indexed by Var, set for every var on the gradient path

        const Tensor* wrt(Var v) const {
            return v < values.size() && values[v] ? &*values[v] : nullptr;
        }
    };

    /// Propagates `seed` (the cotangent of `output`) back through every recorded op.
    /// Throws StateError on an empty tape.
    Gradients backward(Var output, const Tensor& seed) const;

private:
    enum class OpKind { conv2d, dense, relu, pool, reshape };

    struct Node {
        OpKind kind;
        std::vector<Var> inputs; // x, w, [b]
        Var output;
        bool has_bias = false;
        ops::Conv2dOptions conv;
        ops::PoolOptions pool;
        float weight_scale = 1.0f;
        Tensor cols;                      // conv: lowered input
        std::vector<std::uint8_t> mask;   // relu
        std::vector<std::size_t> argmax;  // max pool
    };

    Var push_value(Tensor value, bool requires_grad);
    bool any_requires_grad(const std::vector<Var>& vs) const;

    std::vector<Tensor> values_;
    std::vector<bool> requires_grad_;
    std::vector<std::optional<std::size_t>> producer_;
    std::map<Var, std::string> param_names_;
    std::vector<Node> nodes_;
};

} // namespace gradfeat
