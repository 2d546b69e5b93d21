#include "mpfedkd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mpfedkd/error.hpp"

namespace mpfedkd::ad {

namespace {

void require_rank2(const Var& v, const char* op) {
    if (v.value().rank() != 2) throw ShapeError(std::string(op) + " expects a matrix, got " + shape_string(v.shape()));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

void require_same_tape(const Var& a, const Var& b) {
    if (&a.tape() != &b.tape()) throw Error("op inputs live on different tapes");
}

template <class F>
Var unary(const Var& a, F f, BackwardRule rule) {
    Tensor out = a.value();
    for (auto& v : out.data()) v = f(v);
    return a.tape().record(std::move(out), {a}, std::move(rule));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    require_same_tape(a, b);
    const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k)
        throw ShapeError("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));

    const auto A = a.value().data();
    const auto B = b.value().data();
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aip * B[p * n + j];
        }

    return a.tape().record(Tensor({m, n}, std::move(c)), {a, b}, [m, k, n](const GradContext& ctx) {
        const auto G = ctx.output_grad.data();
        const auto A = ctx.inputs[0]->data();
        const auto B = ctx.inputs[1]->data();
        if (auto* ga = ctx.input_grads[0]) {
            auto dA = ga->data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
                    dA[i * k + p] += s;
                }
        }
        if (auto* gb = ctx.input_grads[1]) {
            auto dB = gb->data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = A[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * G[i * n + j];
                }
        }
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    require_same_tape(a, b);
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return a.tape().record(std::move(out), {a, b}, [](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        for (auto* gi : ctx.input_grads)
            if (gi) {
                auto d = gi->data();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
            }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    require_same_tape(a, b);
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    return a.tape().record(std::move(out), {a, b}, [](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        if (auto* ga = ctx.input_grads[0]) {
            auto d = ga->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
        if (auto* gb = ctx.input_grads[1]) {
            auto d = gb->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    require_same_tape(a, b);
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
    return a.tape().record(std::move(out), {a, b}, [](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        const auto av = ctx.inputs[0]->data();
        const auto bv = ctx.inputs[1]->data();
        if (auto* ga = ctx.input_grads[0]) {
            auto d = ga->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
        }
        if (auto* gb = ctx.input_grads[1]) {
            auto d = gb->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
        }
    });
}

Var scale(const Var& a, double factor) {
    return unary(a, [factor](double v) { return v * factor; }, [factor](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        auto d = ctx.input_grads[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * g[i];
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var add_row(const Var& x, const Var& bias) {
    require_rank2(x, "add_row");
    require_same_tape(x, bias);
    const auto n = x.shape()[0], k = x.shape()[1];
    if (bias.value().size() != k)
        throw ShapeError("add_row: bias " + shape_string(bias.shape()) + " does not fit " + shape_string(x.shape()));
    Tensor out = x.value();
    auto o = out.data();
    auto b = bias.value().data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) o[i * k + j] += b[j];
    return x.tape().record(std::move(out), {x, bias}, [n, k](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        if (auto* gx = ctx.input_grads[0]) {
            auto d = gx->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
        if (auto* gb = ctx.input_grads[1]) {
            auto d = gb->data();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) d[j] += g[i * k + j];
        }
    });
}

Var sub_row(const Var& x, const Var& row) {
    require_rank2(x, "sub_row");
    require_same_tape(x, row);
    const auto n = x.shape()[0], k = x.shape()[1];
    if (row.value().size() != k)
        throw ShapeError("sub_row: row " + shape_string(row.shape()) + " does not fit " + shape_string(x.shape()));
    Tensor out = x.value();
    auto o = out.data();
    auto r = row.value().data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) o[i * k + j] -= r[j];
    return x.tape().record(std::move(out), {x, row}, [n, k](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        if (auto* gx = ctx.input_grads[0]) {
            auto d = gx->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
        if (auto* gr = ctx.input_grads[1]) {
            auto d = gr->data();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) d[j] -= g[i * k + j];
        }
    });
}

Var relu(const Var& a) {
    return unary(a, [](double v) { return v > 0.0 ? v : 0.0; }, [](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        const auto x = ctx.inputs[0]->data();
        auto d = ctx.input_grads[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i)
            if (x[i] > 0.0) d[i] += g[i];
    });
}

Var exp(const Var& a) {
    return unary(a, [](double v) { return std::exp(v); }, [](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        const auto y = ctx.output.data();
        auto d = ctx.input_grads[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i];
    });
}

Var log(const Var& a) {
    for (double v : a.value().data())
        if (!(v > 0.0)) throw NumericError("log of a non-positive value");
    return unary(a, [](double v) { return std::log(v); }, [](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        const auto x = ctx.inputs[0]->data();
        auto d = ctx.input_grads[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] / x[i];
    });
}

Var square(const Var& a) {
    return unary(a, [](double v) { return v * v; }, [](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        const auto x = ctx.inputs[0]->data();
        auto d = ctx.input_grads[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * x[i] * g[i];
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.tape().record(Tensor::scalar(s), {a}, [](const GradContext& ctx) {
        const double g = ctx.output_grad[0];
        for (auto& d : ctx.input_grads[0]->data()) d += g;
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Tensor log_softmax_rows(const Tensor& logits, double tau) {
    if (!(tau > 0.0)) throw Error("temperature must be positive");
    if (logits.rank() != 2) throw ShapeError("softmax expects [n x C] logits, got " + shape_string(logits.shape()));
    const auto n = logits.rows(), c = logits.cols();
    Tensor out = logits;
    auto o = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        auto row = o.subspan(i * c, c);
        double mx = -std::numeric_limits<double>::infinity();
        for (auto& v : row) {
            v /= tau;
            mx = std::max(mx, v);
        }
        double s = 0.0;
        for (double v : row) s += std::exp(v - mx);
        const double lse = mx + std::log(s);
        for (auto& v : row) v -= lse;
    }
    return out;
}

Tensor softmax_rows(const Tensor& logits, double tau) {
    if (!(tau > 0.0)) throw Error("temperature must be positive");
    if (logits.rank() != 2) throw ShapeError("softmax expects [n x C] logits, got " + shape_string(logits.shape()));
    const auto n = logits.rows(), c = logits.cols();
    Tensor out = logits;
    auto o = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        auto row = o.subspan(i * c, c);
        double mx = -std::numeric_limits<double>::infinity();
        for (auto& v : row) {
            v /= tau;
            mx = std::max(mx, v);
        }
        double s = 0.0;
        for (auto& v : row) {
            v = std::exp(v - mx);
            s += v;
        }
        for (auto& v : row) v /= s;
    }
    return out;
}

Var softmax_t(const Var& logits, double tau) {
    Tensor out = softmax_rows(logits.value(), tau);
    const auto n = out.rows(), c = out.cols();
    return logits.tape().record(std::move(out), {logits}, [tau, n, c](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        const auto y = ctx.output.data();
        auto d = ctx.input_grads[0]->data();
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
            for (std::size_t j = 0; j < c; ++j) d[i * c + j] += y[i * c + j] * (g[i * c + j] - dot) / tau;
        }
    });
}

Var log_softmax_t(const Var& logits, double tau) {
    Tensor out = log_softmax_rows(logits.value(), tau);
    const auto n = out.rows(), c = out.cols();
    return logits.tape().record(std::move(out), {logits}, [tau, n, c](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        const auto y = ctx.output.data();
        auto d = ctx.input_grads[0]->data();
        for (std::size_t i = 0; i < n; ++i) {
            double gs = 0.0;
            for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
            for (std::size_t j = 0; j < c; ++j) d[i * c + j] += (g[i * c + j] - std::exp(y[i * c + j]) * gs) / tau;
        }
    });
}

Var gather(const Var& x, std::span<const int> labels) {
    require_rank2(x, "gather");
    const auto n = x.shape()[0], c = x.shape()[1];
    if (labels.size() != n) throw ShapeError("gather: one label per row required");
    std::vector<int> idx(labels.begin(), labels.end());
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= c)
            throw ShapeError("gather: label " + std::to_string(idx[i]) + " outside [0, " + std::to_string(c) + ")");
        out[i] = x.value().at(i, static_cast<std::size_t>(idx[i]));
    }
    return x.tape().record(Tensor({n}, std::move(out)), {x}, [idx = std::move(idx), c](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        auto d = ctx.input_grads[0]->data();
        for (std::size_t i = 0; i < idx.size(); ++i) d[i * c + static_cast<std::size_t>(idx[i])] += g[i];
    });
}

Var select_rows(const Var& x, std::span<const std::size_t> rows) {
    require_rank2(x, "select_rows");
    if (rows.empty()) throw ShapeError("select_rows: empty selection");
    const auto n = x.shape()[0], k = x.shape()[1];
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    std::vector<double> out;
    out.reserve(idx.size() * k);
    for (auto r : idx) {
        if (r >= n) throw ShapeError("select_rows: row index out of range");
        auto src = x.value().row(r);
        out.insert(out.end(), src.begin(), src.end());
    }
    const auto m = idx.size();
    return x.tape().record(Tensor({m, k}, std::move(out)), {x}, [idx = std::move(idx), k](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        auto d = ctx.input_grads[0]->data();
        for (std::size_t j = 0; j < idx.size(); ++j)
            for (std::size_t q = 0; q < k; ++q) d[idx[j] * k + q] += g[j * k + q];
    });
}

Var stack(std::span<const Var> scalars) {
    if (scalars.empty()) throw ShapeError("stack: nothing to stack");
    std::vector<double> out;
    out.reserve(scalars.size());
    for (const auto& s : scalars) {
        require_same_tape(scalars[0], s);
        out.push_back(s.value().item());
    }
    return scalars[0].tape().record(Tensor::vector(std::move(out)), scalars, [](const GradContext& ctx) {
        for (std::size_t i = 0; i < ctx.input_grads.size(); ++i)
            if (auto* gi = ctx.input_grads[i]) (*gi)[0] += ctx.output_grad[i];
    });
}

Var logsumexp(const Var& v) {
    const auto x = v.value().data();
    double mx = -std::numeric_limits<double>::infinity();
    for (double e : x) mx = std::max(mx, e);
    double s = 0.0;
    for (double e : x) s += std::exp(e - mx);
    return v.tape().record(Tensor::scalar(mx + std::log(s)), {v}, [](const GradContext& ctx) {
        const double g = ctx.output_grad[0];
        const double lse = ctx.output[0];
        const auto x = ctx.inputs[0]->data();
        auto d = ctx.input_grads[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * std::exp(x[i] - lse);
    });
}

Var reshape(const Var& a, Shape shape) {
    return a.tape().record(a.value().reshaped(std::move(shape)), {a}, [](const GradContext& ctx) {
        const auto g = ctx.output_grad.data();
        auto d = ctx.input_grads[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    });
}

Var conv2d(const Var& input, const Var& weight, const Var& bias, const ConvGeometry& geom) {
    require_rank2(input, "conv2d");
    require_same_tape(input, weight);
    require_same_tape(input, bias);
    const auto C = geom.channels, H = geom.height, W = geom.width, K = geom.kernel, OC = geom.out_channels;
    if (K == 0 || K > H || K > W) throw ShapeError("conv2d: kernel larger than image");
    if (input.shape()[1] != C * H * W) throw ShapeError("conv2d: input width does not match geometry");
    if (weight.value().size() != OC * C * K * K) throw ShapeError("conv2d: weight size does not match geometry");
    if (bias.value().size() != OC) throw ShapeError("conv2d: bias size does not match geometry");
    const auto n = input.shape()[0], OH = geom.out_height(), OW = geom.out_width();

    const auto X = input.value().data();
    const auto Wt = weight.value().data();
    const auto B = bias.value().data();
    std::vector<double> out(n * OC * OH * OW);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < OC; ++o)
            for (std::size_t y = 0; y < OH; ++y)
                for (std::size_t x = 0; x < OW; ++x) {
                    double acc = B[o];
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ky = 0; ky < K; ++ky)
                            for (std::size_t kx = 0; kx < K; ++kx)
                                acc += Wt[((o * C + c) * K + ky) * K + kx] * X[s * C * H * W + (c * H + y + ky) * W + x + kx];
                    out[((s * OC + o) * OH + y) * OW + x] = acc;
                }

    return input.tape().record(Tensor({n, OC * OH * OW}, std::move(out)), {input, weight, bias},
                               [=](const GradContext& ctx) {
                                   const auto G = ctx.output_grad.data();
                                   const auto X = ctx.inputs[0]->data();
                                   const auto Wt = ctx.inputs[1]->data();
                                   auto* gx = ctx.input_grads[0];
                                   auto* gw = ctx.input_grads[1];
                                   auto* gb = ctx.input_grads[2];
                                   for (std::size_t s = 0; s < n; ++s)
                                       for (std::size_t o = 0; o < OC; ++o)
                                           for (std::size_t y = 0; y < OH; ++y)
                                               for (std::size_t x = 0; x < OW; ++x) {
                                                   const double g = G[((s * OC + o) * OH + y) * OW + x];
                                                   if (gb) (*gb)[o] += g;
                                                   for (std::size_t c = 0; c < C; ++c)
                                                       for (std::size_t ky = 0; ky < K; ++ky)
                                                           for (std::size_t kx = 0; kx < K; ++kx) {
                                                               const auto wi = ((o * C + c) * K + ky) * K + kx;
                                                               const auto xi = s * C * H * W + (c * H + y + ky) * W + x + kx;
                                                               if (gw) (*gw)[wi] += g * X[xi];
                                                               if (gx) (*gx)[xi] += g * Wt[wi];
                                                           }
                                               }
                               });
}

}  // namespace mpfedkd::ad
