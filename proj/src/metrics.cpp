#include "mpfedkd/metrics.hpp"

#include <cmath>
#include <cstdlib>

#include "mpfedkd/error.hpp"

namespace mpfedkd::metrics {

namespace {

void require_pair(std::span<const int> preds, std::span<const int> labels) {
    if (preds.empty() || labels.empty()) throw Error("metrics need at least one prediction");
    if (preds.size() != labels.size()) throw ShapeError("predictions and labels differ in length");
}

}  // namespace

double accuracy(std::span<const int> preds, std::span<const int> labels) {
    require_pair(preds, labels);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

ErrorPair rmse_mae(std::span<const int> preds, std::span<const int> labels) {
    require_pair(preds, labels);
    double sq = 0.0, ab = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double d = static_cast<double>(preds[i]) - static_cast<double>(labels[i]);
        sq += d * d;
        ab += std::abs(d);
    }
    const double n = static_cast<double>(preds.size());
    return {std::sqrt(sq / n), ab / n};
}

double macro_f1(std::span<const int> preds, std::span<const int> labels, std::size_t num_classes) {
    require_pair(preds, labels);
    if (num_classes == 0) throw Error("macro_f1 needs at least one class");
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int p = preds[i], y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw Error("macro_f1: label outside the class range");
        const bool p_ok = p >= 0 && static_cast<std::size_t>(p) < num_classes;
        if (p == y) {
            ++tp[static_cast<std::size_t>(y)];
        } else {
            ++fn[static_cast<std::size_t>(y)];
            if (p_ok) ++fp[static_cast<std::size_t>(p)];
        }
    }
    double total = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const double denom = 2.0 * static_cast<double>(tp[c]) + static_cast<double>(fp[c] + fn[c]);
        if (denom > 0.0) total += 2.0 * static_cast<double>(tp[c]) / denom;
    }
    return total / static_cast<double>(num_classes);
}

double average_accuracy(std::span<const double> round_accuracies) {
    if (round_accuracies.empty()) throw Error("average accuracy needs at least one round");
    double s = 0.0;
    for (double a : round_accuracies) s += a;
    return s / static_cast<double>(round_accuracies.size());
}

std::vector<int> argmax_rows(std::span<const double> logits, std::size_t num_classes) {
    std::vector<int> out;
    out.reserve(logits.size() / num_classes);
    for (std::size_t r = 0; r + num_classes <= logits.size(); r += num_classes) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < num_classes; ++c)
            if (logits[r + c] > logits[r + best]) best = c;
        out.push_back(static_cast<int>(best));
    }
    return out;
}

}  // namespace mpfedkd::metrics
