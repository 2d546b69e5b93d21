#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mpfedkd::metrics {

double accuracy(std::span<const int> preds, std::span<const int> labels);

struct ErrorPair {
    double rmse = 0.0;
    double mae = 0.0;
};

// Errors over raw class indices.
ErrorPair rmse_mae(std::span<const int> preds, std::span<const int> labels);

// Unweighted mean of per-class F1 over classes 0..num_classes-1. A class with
// no true and no predicted samples scores 0.
double macro_f1(std::span<const int> preds, std::span<const int> labels, std::size_t num_classes);

// Mean of per-round accuracies.
double average_accuracy(std::span<const double> round_accuracies);

std::vector<int> argmax_rows(std::span<const double> logits, std::size_t num_classes);

}  // namespace mpfedkd::metrics
