#include "mpfedkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mpfedkd/error.hpp"

namespace mpfedkd::ad {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (auto e : shape_)
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
    if (shape_size(shape_) != data_.size())
        throw ShapeError("shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) +
                         " elements");
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
    auto n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const { return shape_.empty() ? 0 : shape_[0]; }

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

std::span<const double> Tensor::row(std::size_t r) const {
    auto c = cols();
    return std::span<const double>(data_).subspan(r * c, c);
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
        throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
}

const Tensor& Var::value() const { return tape_->nodes_.at(id_).value; }

bool Var::requires_grad() const { return tape_->nodes_.at(id_).requires_grad; }

const Tensor& Gradients::of(const Var& leaf) const {
    if (tape_ == nullptr || !tape_->owns(leaf)) throw Error("gradient requested for a value from another tape");
    if (!tape_->nodes_[leaf.id()].is_leaf) throw Error("gradients are only reported for leaves");
    if (auto& g = grads_[leaf.id()]) return *g;
    auto& z = zeros_[leaf.id()];
    if (!z) z = Tensor::zeros(leaf.shape());
    return *z;
}

namespace {

void check_finite(const Tensor& t, const char* where) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite value produced at ") + where);
}

}  // namespace

Var Tape::leaf(Tensor value) {
    check_finite(value, "leaf");
    nodes_.push_back({std::move(value), {}, {}, true, true});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
    check_finite(value, "constant");
    nodes_.push_back({std::move(value), {}, {}, false, true});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardRule rule) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(rule));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardRule rule) {
    check_finite(value, "op output");
    Node node;
    node.value = std::move(value);
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        if (!owns(in)) throw Error("op input does not belong to this tape");
        node.inputs.push_back(in.id_);
        node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
    }
    if (node.requires_grad) node.rule = std::move(rule);
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Gradients Tape::backward(const Var& loss) const {
    if (!owns(loss)) throw Error("loss is not recorded on this tape");
    if (!loss.value().is_scalar()) throw ShapeError("loss must be a scalar, got " + shape_string(loss.shape()));

    Gradients out;
    out.tape_ = this;
    out.grads_.resize(nodes_.size());
    out.zeros_.resize(nodes_.size());
    auto& grads = out.grads_;
    grads[loss.id()] = Tensor::full(loss.shape(), 1.0);

    std::vector<const Tensor*> in_values;
    std::vector<Tensor*> in_grads;
    // Creation order is a topological order, so one reverse sweep suffices.
    for (std::size_t k = loss.id() + 1; k-- > 0;) {
        const Node& node = nodes_[k];
        if (node.is_leaf || !node.requires_grad || !grads[k]) continue;
        in_values.clear();
        in_grads.clear();
        for (auto id : node.inputs) {
            in_values.push_back(&nodes_[id].value);
            if (nodes_[id].requires_grad) {
                if (!grads[id]) grads[id] = Tensor::zeros(nodes_[id].value.shape());
                in_grads.push_back(&*grads[id]);
            } else {
                in_grads.push_back(nullptr);
            }
        }
        node.rule(GradContext{node.value, *grads[k], in_values, in_grads});
        for (auto* g : in_grads)
            if (g) check_finite(*g, "backward");
    }

    for (std::size_t k = 0; k < nodes_.size(); ++k)
        if (!nodes_[k].is_leaf) grads[k].reset();
    return out;
}

}  // namespace mpfedkd::ad
