#include "mpfedkd/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mpfedkd/error.hpp"
#include "mpfedkd/rng.hpp"

namespace mpfedkd::model {

using ad::Shape;
using ad::Tensor;
using ad::Var;

BackboneKind parse_backbone_kind(const std::string& name) {
    if (name == "linear") return BackboneKind::linear;
    if (name == "mlp") return BackboneKind::mlp;
    if (name == "cnn") return BackboneKind::cnn;
    throw ConfigError("unknown backbone '" + name + "' (expected linear, mlp or cnn)");
}

std::string to_string(BackboneKind kind) {
    switch (kind) {
        case BackboneKind::linear: return "linear";
        case BackboneKind::mlp: return "mlp";
        case BackboneKind::cnn: return "cnn";
    }
    return "?";
}

void BackboneSpec::validate() const {
    if (input_dim == 0 || embedding_dim == 0 || num_classes == 0) throw ConfigError("backbone dimensions must be positive");
    if (kind == BackboneKind::mlp && hidden_dim == 0) throw ConfigError("mlp hidden width must be positive");
    if (kind == BackboneKind::cnn) {
        if (channels * height * width != input_dim) throw ConfigError("cnn input_dim must equal channels*height*width");
        if (kernel == 0 || 2 * (kernel - 1) >= std::min(height, width))
            throw ConfigError("cnn kernel too large for the image size");
        if (conv1_channels == 0 || conv2_channels == 0 || fc_hidden == 0) throw ConfigError("cnn widths must be positive");
    }
}

namespace {

struct CnnDims {
    ad::ConvGeometry conv1, conv2;
    std::size_t flat;
};

CnnDims cnn_dims(const BackboneSpec& s) {
    CnnDims d;
    d.conv1 = {s.channels, s.height, s.width, s.kernel, s.conv1_channels};
    d.conv2 = {s.conv1_channels, d.conv1.out_height(), d.conv1.out_width(), s.kernel, s.conv2_channels};
    d.flat = s.conv2_channels * d.conv2.out_height() * d.conv2.out_width();
    return d;
}

}  // namespace

std::vector<Shape> BackboneSpec::parameter_shapes() const {
    switch (kind) {
        case BackboneKind::linear:
            return {{input_dim, embedding_dim}, {embedding_dim}, {embedding_dim, num_classes}, {num_classes}};
        case BackboneKind::mlp:
            return {{input_dim, hidden_dim},     {hidden_dim},  {hidden_dim, embedding_dim},
                    {embedding_dim},             {embedding_dim, num_classes}, {num_classes}};
        case BackboneKind::cnn: {
            auto d = cnn_dims(*this);
            return {{conv1_channels, channels * kernel * kernel},
                    {conv1_channels},
                    {conv2_channels, conv1_channels * kernel * kernel},
                    {conv2_channels},
                    {d.flat, fc_hidden},
                    {fc_hidden},
                    {fc_hidden, embedding_dim},
                    {embedding_dim},
                    {embedding_dim, num_classes},
                    {num_classes}};
        }
    }
    return {};
}

std::size_t BackboneSpec::representation_tensors() const { return parameter_shapes().size() - 2; }

Backbone Backbone::initialize(const BackboneSpec& spec, std::uint64_t seed) {
    spec.validate();
    auto rng = make_rng(seed, {stream::init});
    Backbone b;
    b.spec_ = spec;
    auto shapes = spec.parameter_shapes();
    // Weights and the bias that follows them share the weight's fan-in.
    for (std::size_t i = 0; i < shapes.size(); i += 2) {
        const double fan_in = static_cast<double>(shapes[i].size() == 2 && spec.kind == BackboneKind::cnn && i < 4
                                                      ? shapes[i][1]
                                                      : shapes[i][0]);
        const double bound = 1.0 / std::sqrt(fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t j = i; j < i + 2; ++j) {
            std::vector<double> v(ad::shape_size(shapes[j]));
            for (auto& x : v) x = dist(rng);
            b.params_.emplace_back(shapes[j], std::move(v));
        }
    }
    return b;
}

Backbone Backbone::from_parameters(const BackboneSpec& spec, std::vector<Tensor> params) {
    spec.validate();
    auto shapes = spec.parameter_shapes();
    if (params.size() != shapes.size()) throw ShapeError("parameter count does not match the backbone");
    for (std::size_t i = 0; i < shapes.size(); ++i)
        if (params[i].shape() != shapes[i])
            throw ShapeError("parameter " + std::to_string(i) + " has shape " + ad::shape_string(params[i].shape()) +
                             ", expected " + ad::shape_string(shapes[i]));
    Backbone b;
    b.spec_ = spec;
    b.params_ = std::move(params);
    return b;
}

Backbone Backbone::restore(const BackboneSpec& spec, const ModelSnapshot& snapshot) {
    return from_parameters(spec, snapshot.unflatten());
}

std::size_t Backbone::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
}

ForwardPass Backbone::forward(ad::Tape& tape, const Tensor& batch, bool trainable) const {
    return forward(tape, tape.constant(batch), trainable);
}

ForwardPass Backbone::forward(ad::Tape& tape, const Var& batch, bool trainable) const {
    if (batch.value().rank() != 2 || batch.shape()[1] != spec_.input_dim)
        throw ShapeError("batch " + ad::shape_string(batch.shape()) + " does not match backbone input width " +
                         std::to_string(spec_.input_dim));
    ForwardPass pass;
    pass.params.reserve(params_.size());
    for (const auto& p : params_) pass.params.push_back(trainable ? tape.leaf(p) : tape.constant(p));
    const auto& P = pass.params;

    auto dense = [&](const Var& x, std::size_t w) { return ad::add_row(ad::matmul(x, P[w]), P[w + 1]); };

    switch (spec_.kind) {
        case BackboneKind::linear:
            pass.embeddings = dense(batch, 0);
            pass.logits = dense(pass.embeddings, 2);
            break;
        case BackboneKind::mlp: {
            auto h = ad::relu(dense(batch, 0));
            pass.embeddings = ad::relu(dense(h, 2));
            pass.logits = dense(pass.embeddings, 4);
            break;
        }
        case BackboneKind::cnn: {
            auto d = cnn_dims(spec_);
            auto c1 = ad::relu(ad::conv2d(batch, P[0], P[1], d.conv1));
            auto c2 = ad::relu(ad::conv2d(c1, P[2], P[3], d.conv2));
            auto f1 = ad::relu(dense(c2, 4));
            pass.embeddings = ad::relu(dense(f1, 6));
            pass.logits = dense(pass.embeddings, 8);
            break;
        }
    }
    return pass;
}

Outputs Backbone::evaluate(const Tensor& batch) const {
    ad::Tape tape;
    auto pass = forward(tape, batch, false);
    return {pass.embeddings.value(), pass.logits.value()};
}

void sgd_step(Backbone& backbone, std::span<const Tensor> grads, double delta) {
    if (!(delta > 0.0)) throw ConfigError("learning rate must be positive");
    auto params = backbone.parameters();
    if (grads.size() != params.size()) throw ShapeError("gradient list does not align with parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (grads[i].shape() != params[i].shape()) throw ShapeError("gradient shape mismatch for parameter " + std::to_string(i));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].data();
        auto g = grads[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) p[j] -= delta * g[j];
    }
}

std::vector<Tensor> parameter_gradients(const ForwardPass& pass, const ad::Gradients& grads) {
    std::vector<Tensor> out;
    out.reserve(pass.params.size());
    for (const auto& p : pass.params) out.push_back(grads.of(p));
    return out;
}

// ---------------------------------------------------------------- snapshots

ModelSnapshot ModelSnapshot::flatten(std::span<const Tensor> params, std::uint64_t round) {
    ModelSnapshot s;
    s.round = round;
    for (const auto& p : params) {
        s.manifest.push_back(p.shape());
        s.values.insert(s.values.end(), p.data().begin(), p.data().end());
    }
    return s;
}

std::vector<Tensor> ModelSnapshot::unflatten() const {
    std::vector<Tensor> out;
    std::size_t offset = 0;
    for (const auto& shape : manifest) {
        auto n = ad::shape_size(shape);
        if (offset + n > values.size()) throw ShapeError("snapshot manifest exceeds stored values");
        out.emplace_back(shape, std::vector<double>(values.begin() + offset, values.begin() + offset + n));
        offset += n;
    }
    if (offset != values.size()) throw ShapeError("snapshot holds values not covered by its manifest");
    return out;
}

namespace {

constexpr char kMagic[8] = {'M', 'P', 'F', 'K', 'S', 'N', 'A', 'P'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    auto u = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
        if (pos_ + sizeof(U) > bytes_.size()) throw Error("snapshot buffer truncated");
        U u = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(U);
        return std::bit_cast<T>(u);
    }

    std::span<const std::uint8_t> take(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw Error("snapshot buffer truncated");
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> ModelSnapshot::serialize() const {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_le(out, kVersion);
    put_le(out, round);
    put_le(out, static_cast<std::uint32_t>(manifest.size()));
    for (const auto& shape : manifest) {
        put_le(out, static_cast<std::uint32_t>(shape.size()));
        for (auto e : shape) put_le(out, static_cast<std::uint64_t>(e));
    }
    put_le(out, static_cast<std::uint64_t>(values.size()));
    for (double v : values) put_le(out, v);
    return out;
}

ModelSnapshot ModelSnapshot::deserialize(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    auto magic = r.take(sizeof(kMagic));
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) throw Error("not a model snapshot (bad magic)");
    if (auto v = r.get<std::uint32_t>(); v != kVersion) throw Error("unsupported snapshot version " + std::to_string(v));
    ModelSnapshot s;
    s.round = r.get<std::uint64_t>();
    auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        auto rank = r.get<std::uint32_t>();
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>());
        s.manifest.push_back(std::move(shape));
    }
    auto n = r.get<std::uint64_t>();
    s.values.resize(n);
    for (auto& v : s.values) v = r.get<double>();
    if (!r.done()) throw Error("trailing bytes after snapshot");
    s.unflatten();
    return s;
}

void ModelSnapshot::write(const std::filesystem::path& path) const {
    auto bytes = serialize();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ModelSnapshot ModelSnapshot::read(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace mpfedkd::model
