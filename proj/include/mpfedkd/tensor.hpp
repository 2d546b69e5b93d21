#pragma once

// Dense row-major f64 tensors and a per-forward-pass gradient tape.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mpfedkd::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    // Leading extent and the product of the remaining extents.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    std::span<const double> row(std::size_t r) const;

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    // Value of a single-element tensor.
    double item() const;

    bool is_scalar() const noexcept { return data_.size() == 1; }
    bool all_finite() const noexcept;

    Tensor reshaped(Shape shape) const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

class Tape;

// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape& tape() const { return *tape_; }
    std::uint32_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }
    bool requires_grad() const;

private:
    friend class Tape;
    Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::uint32_t id_ = 0;
};

// What a backward rule sees. input_grads[i] is null when input i does not
// need a gradient; rules accumulate into the non-null ones.
struct GradContext {
    const Tensor& output;
    const Tensor& output_grad;
    std::span<const Tensor* const> inputs;
    std::span<Tensor* const> input_grads;
};

using BackwardRule = std::function<void(const GradContext&)>;

class Gradients {
public:
    // Gradient for a leaf; zeros when the loss does not depend on it.
    const Tensor& of(const Var& leaf) const;

private:
    friend class Tape;
    const Tape* tape_ = nullptr;
    std::vector<std::optional<Tensor>> grads_;
    mutable std::vector<std::optional<Tensor>> zeros_;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value);
    Var constant(Tensor value);

    // Records an op output. Inputs must live on this tape.
    Var record(Tensor value, std::span<const Var> inputs, BackwardRule rule);
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardRule rule);

    Gradients backward(const Var& loss) const;

    std::size_t size() const noexcept { return nodes_.size(); }
    bool owns(const Var& v) const noexcept { return v.tape_ == this && v.id_ < nodes_.size(); }

private:
    friend class Var;
    friend class Gradients;

    struct Node {
        Tensor value;
        std::vector<std::uint32_t> inputs;
        BackwardRule rule;
        bool requires_grad = false;
        bool is_leaf = false;
    };

    std::vector<Node> nodes_;
};

}  // namespace mpfedkd::ad
