#pragma once

// Local loss kernels. All are built from diffcore ops, so gradients come from
// the tape. Squared differences between an embedding and a prototype are
// reduced by the mean over embedding dimensions.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mpfedkd/ops.hpp"
#include "mpfedkd/tensor.hpp"

namespace mpfedkd::losses {

struct LossWeights {
    double mu1 = 0.9;            // CE share; SKD gets 1 - mu1
    double mu2 = 1.0;            // prototype alignment
    double mu3 = 0.1;            // LEMGP
    double lemgp_balance = 0.5;  // attractive vs repulsive mix, in (0, 1]
    double lemgp_scale = 0.5;    // distance scale inside both LEMGP terms
    double tau = 0.1;            // distillation temperature

    void validate() const;
};

// One vector per class; classes never observed are absent.
class GlobalPrototypes {
public:
    GlobalPrototypes() = default;
    GlobalPrototypes(std::size_t num_classes, std::size_t dim);

    std::size_t num_classes() const noexcept { return protos_.size(); }
    std::size_t dim() const noexcept { return dim_; }

    bool has(int c) const;
    std::span<const double> get(int c) const;
    void set(int c, std::vector<double> value);
    std::vector<int> available() const;
    bool empty() const { return available().empty(); }

    friend bool operator==(const GlobalPrototypes&, const GlobalPrototypes&) = default;

private:
    std::size_t dim_ = 0;
    std::vector<std::optional<std::vector<double>>> protos_;
};

// Prototype vectors placed on a tape, keyed by class.
using PrototypeVars = std::map<int, ad::Var>;

PrototypeVars bind_prototypes(ad::Tape& tape, const GlobalPrototypes& protos, bool trainable = false);

struct ClassGroups {
    std::vector<int> classes;                    // ascending
    std::vector<std::vector<std::size_t>> rows;  // rows[k] are the batch rows of classes[k]
};

ClassGroups group_by_class(std::span<const int> labels);

// A prototype-based loss plus whether no class overlapped with the
// available prototypes (the value is then 0).
struct PrototypeLoss {
    ad::Var value;
    bool no_overlap = false;
};

// Mean over the batch of -log softmax(logits)[label].
ad::Var ce_loss(const ad::Var& logits, std::span<const int> labels);

// tau^2 * mean over rows of KL(softmax(teacher/tau) || softmax(student/tau)).
// The teacher side is treated as a constant.
ad::Var skd_loss(const ad::Var& teacher_logits, const ad::Var& student_logits, double tau);

// Class-averaged mean squared distance between last-round embeddings
// (constants) and the current global prototype of their class.
PrototypeLoss pa_loss(const ad::Var& previous_embeddings, std::span<const int> labels, const PrototypeVars& protos);

// Sum over classes of scale * mean squared distance between current
// embeddings and their class prototype (prototypes held constant).
PrototypeLoss lemgp_attractive(const ad::Var& embeddings, std::span<const int> labels, const PrototypeVars& protos,
                               double scale);

// log sum_c exp(-scale * mean over all rows of the squared distance to
// prototype c), over the given classes.
ad::Var lemgp_repulsive(const ad::Var& embeddings, const PrototypeVars& protos, std::span<const int> classes,
                        double scale);

ad::Var lemgp_loss(const ad::Var& attractive, const ad::Var& repulsive, double balance);

// Round 1 returns ce itself. Later rounds combine all four components.
ad::Var local_loss(const ad::Var& ce, const ad::Var& skd, const ad::Var& pa, const ad::Var& lemgp,
                   const LossWeights& weights, std::size_t round);

// Single-prototype regularizer used by the FedProto baseline: class-averaged
// mean squared distance between each class's batch-mean embedding and its
// global prototype (prototypes constant).
PrototypeLoss proto_regularizer(const ad::Var& embeddings, std::span<const int> labels, const PrototypeVars& protos);

}  // namespace mpfedkd::losses
