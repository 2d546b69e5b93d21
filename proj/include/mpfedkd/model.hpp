#pragma once

// Backbone contract: representation layers produce embeddings, a linear
// classifier head maps embeddings to logits.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mpfedkd/ops.hpp"
#include "mpfedkd/tensor.hpp"

namespace mpfedkd::model {

enum class BackboneKind { linear, mlp, cnn };

BackboneKind parse_backbone_kind(const std::string& name);
std::string to_string(BackboneKind kind);

struct BackboneSpec {
    BackboneKind kind = BackboneKind::mlp;
    std::size_t input_dim = 2;
    std::size_t hidden_dim = 16;
    std::size_t embedding_dim = 8;
    std::size_t num_classes = 3;

    // cnn only: two valid convolutions, then fc_hidden -> embedding_dim.
    std::size_t channels = 1;
    std::size_t height = 28;
    std::size_t width = 28;
    std::size_t kernel = 5;
    std::size_t conv1_channels = 4;
    std::size_t conv2_channels = 8;
    std::size_t fc_hidden = 64;

    void validate() const;
    std::vector<ad::Shape> parameter_shapes() const;
    // How many leading tensors of parameter_shapes() belong to the representation.
    std::size_t representation_tensors() const;
};

// Flat parameter vector plus the shape manifest needed to rebuild tensors.
struct ModelSnapshot {
    std::vector<double> values;
    std::vector<ad::Shape> manifest;
    std::uint64_t round = 0;

    static ModelSnapshot flatten(std::span<const ad::Tensor> params, std::uint64_t round);
    std::vector<ad::Tensor> unflatten() const;

    // Little-endian binary layout:
    //   "MPFKSNAP" | u32 version | u64 round | u32 tensor count
    //   | per tensor: u32 rank, rank x u64 extent | u64 value count | f64 values
    std::vector<std::uint8_t> serialize() const;
    static ModelSnapshot deserialize(std::span<const std::uint8_t> bytes);

    void write(const std::filesystem::path& path) const;
    static ModelSnapshot read(const std::filesystem::path& path);

    friend bool operator==(const ModelSnapshot&, const ModelSnapshot&) = default;
};

struct ForwardPass {
    std::vector<ad::Var> params;
    ad::Var embeddings;
    ad::Var logits;
};

struct Outputs {
    ad::Tensor embeddings;
    ad::Tensor logits;
};

class Backbone {
public:
    Backbone() = default;

    static Backbone initialize(const BackboneSpec& spec, std::uint64_t seed);
    static Backbone from_parameters(const BackboneSpec& spec, std::vector<ad::Tensor> params);
    static Backbone restore(const BackboneSpec& spec, const ModelSnapshot& snapshot);

    const BackboneSpec& spec() const noexcept { return spec_; }
    std::span<const ad::Tensor> parameters() const noexcept { return params_; }
    std::span<ad::Tensor> parameters() noexcept { return params_; }
    std::size_t parameter_count() const noexcept;

    // Parameters enter the tape as leaves when trainable, constants otherwise.
    ForwardPass forward(ad::Tape& tape, const ad::Var& batch, bool trainable = true) const;
    ForwardPass forward(ad::Tape& tape, const ad::Tensor& batch, bool trainable = true) const;

    // Tape-free inference.
    Outputs evaluate(const ad::Tensor& batch) const;

    ModelSnapshot snapshot(std::uint64_t round) const { return ModelSnapshot::flatten(params_, round); }

    friend bool operator==(const Backbone& a, const Backbone& b) { return a.params_ == b.params_; }

private:
    BackboneSpec spec_;
    std::vector<ad::Tensor> params_;
};

// params[i] -= delta * grads[i]
void sgd_step(Backbone& backbone, std::span<const ad::Tensor> grads, double delta);

// Pulls the per-parameter gradients of a forward pass out of a backward result.
std::vector<ad::Tensor> parameter_gradients(const ForwardPass& pass, const ad::Gradients& grads);

}  // namespace mpfedkd::model
