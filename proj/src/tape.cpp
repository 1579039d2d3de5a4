#include "gradfeat/tape.hpp"

#include "gradfeat/error.hpp"

namespace gradfeat {

Tape::Var Tape::push_value(Tensor value, bool requires_grad) {
    values_.push_back(std::move(value));
    requires_grad_.push_back(requires_grad);
    producer_.push_back(std::nullopt);
    return values_.size() - 1;
}

bool Tape::any_requires_grad(const std::vector<Var>& vs) const {
    for (Var v : vs)
        if (requires_grad_.at(v)) return true;
    return false;
}

Tape::Var Tape::constant(Tensor value) { return push_value(std::move(value), false); }

Tape::Var Tape::input(Tensor value) { return push_value(std::move(value), true); }

Tape::Var Tape::parameter(std::string name, Tensor value) {
    Var v = push_value(std::move(value), true);
    param_names_[v] = std::move(name);
    return v;
}

Tape::Var Tape::conv2d(Var x, Var w, std::optional<Var> b, const ops::Conv2dOptions& opt) {
    Node n{};
    n.kind = OpKind::conv2d;
    n.inputs = {x, w};
    if (b) n.inputs.push_back(*b);
    n.has_bias = b.has_value();
    n.conv = opt;
    const Tensor& xv = values_.at(x);
    const Tensor& wv = values_.at(w);
    const Shape os = ops::conv2d_output_shape(xv.shape(), wv.shape(), opt.stride, opt.pad);
    n.cols = ops::im2col(xv, wv.dim(2), wv.dim(3), opt.stride, opt.pad);
    Tensor out = ops::conv2d_lowered(n.cols, os, wv, b ? &values_.at(*b) : nullptr, opt.weight_scale);
    n.output = push_value(std::move(out), any_requires_grad(n.inputs));
    producer_[n.output] = nodes_.size();
    nodes_.push_back(std::move(n));
    return nodes_.back().output;
}

Tape::Var Tape::dense(Var x, Var w, std::optional<Var> b, float weight_scale) {
    Node n{};
    n.kind = OpKind::dense;
    n.inputs = {x, w};
    if (b) n.inputs.push_back(*b);
    n.has_bias = b.has_value();
    n.weight_scale = weight_scale;
    Tensor out = ops::dense(values_.at(x), values_.at(w), b ? &values_.at(*b) : nullptr, weight_scale);
    n.output = push_value(std::move(out), any_requires_grad(n.inputs));
    producer_[n.output] = nodes_.size();
    nodes_.push_back(std::move(n));
    return nodes_.back().output;
}

Tape::Var Tape::relu(Var x) {
    Node n{};
    n.kind = OpKind::relu;
    n.inputs = {x};
    auto r = ops::relu(values_.at(x));
    n.mask = std::move(r.mask);
    n.output = push_value(std::move(r.output), requires_grad_.at(x));
    producer_[n.output] = nodes_.size();
    nodes_.push_back(std::move(n));
    return nodes_.back().output;
}

Tape::Var Tape::pool(Var x, const ops::PoolOptions& opt) {
    Node n{};
    n.kind = OpKind::pool;
    n.inputs = {x};
    n.pool = opt;
    auto r = ops::pool(values_.at(x), opt);
    n.argmax = std::move(r.argmax);
    n.output = push_value(std::move(r.output), requires_grad_.at(x));
    producer_[n.output] = nodes_.size();
    nodes_.push_back(std::move(n));
    return nodes_.back().output;
}

Tape::Var Tape::reshape(Var x, Shape shape) {
    Node n{};
    n.kind = OpKind::reshape;
    n.inputs = {x};
    n.output = push_value(values_.at(x).reshaped(std::move(shape)), requires_grad_.at(x));
    producer_[n.output] = nodes_.size();
    nodes_.push_back(std::move(n));
    return nodes_.back().output;
}

const std::vector<std::uint8_t>& Tape::relu_mask(Var v) const {
    const auto& p = producer_.at(v);
    if (!p || nodes_[*p].kind != OpKind::relu) throw StateError("value was not produced by a relu");
    return nodes_[*p].mask;
}

Tape::Gradients Tape::backward(Var output, const Tensor& seed) const {
    if (nodes_.empty()) throw StateError("backward called on an empty tape");
    if (output >= values_.size()) throw StateError("backward output is not a tape value");
    if (seed.shape() != values_[output].shape())
        throw DimensionError("backward seed " + shape_str(seed.shape()) + " does not match output " +
                             shape_str(values_[output].shape()));

    Gradients g;
    g.values.resize(values_.size());
    g.values[output] = seed;

    auto accumulate = [&](Var v, Tensor contrib) {
        if (!requires_grad_[v]) return;
        if (g.values[v])
            axpy(1.0f, contrib, *g.values[v]);
        else
            g.values[v] = std::move(contrib);
    };

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        const Node& n = *it;
        if (n.output > output || !g.values[n.output]) continue;
        const Tensor& dout = *g.values[n.output];
        switch (n.kind) {
        case OpKind::conv2d: {
            const Tensor& x = values_[n.inputs[0]];
            const Tensor& w = values_[n.inputs[1]];
            if (requires_grad_[n.inputs[0]]) accumulate(n.inputs[0], ops::conv2d_backward_input(dout, w, x.shape(), n.conv));
            if (requires_grad_[n.inputs[1]])
                accumulate(n.inputs[1], ops::conv2d_backward_weight(dout, n.cols, w.shape(), n.conv.weight_scale));
            if (n.has_bias && requires_grad_[n.inputs[2]]) accumulate(n.inputs[2], ops::conv2d_backward_bias(dout));
            break;
        }
        case OpKind::dense: {
            const Tensor& x = values_[n.inputs[0]];
            const Tensor& w = values_[n.inputs[1]];
            if (requires_grad_[n.inputs[0]]) accumulate(n.inputs[0], ops::dense_backward_input(dout, w, n.weight_scale));
            if (requires_grad_[n.inputs[1]])
                accumulate(n.inputs[1], ops::dense_backward_weight(dout, x, n.weight_scale));
            if (n.has_bias && requires_grad_[n.inputs[2]]) accumulate(n.inputs[2], ops::dense_backward_bias(dout));
            break;
        }
        case OpKind::relu:
            accumulate(n.inputs[0], ops::apply_mask(dout, n.mask));
            break;
        case OpKind::pool:
            accumulate(n.inputs[0], ops::pool_backward(dout, values_[n.inputs[0]].shape(), n.pool, n.argmax));
            break;
        case OpKind::reshape:
            accumulate(n.inputs[0], dout.reshaped(values_[n.inputs[0]].shape()));
            break;
        }
    }

    for (const auto& [v, name] : param_names_) {
        if (v > output) continue;
        g.params[name] = g.values[v] ? *g.values[v] : Tensor::zeros_like(values_[v]);
    }
    return g;
}

} // namespace gradfeat
