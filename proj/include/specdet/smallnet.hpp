#pragma once

// Small double-precision CNN: forward pass with named activation capture,
// reverse-mode gradients w.r.t. the input and parameters, seeded SGD training
// and a binary file format ("SSNET1").
//
// Architecture descriptors are single-line text, e.g.
//
//   input:3x32x32 conv1:conv:16:3:1:1 relu1:relu conv2:conv:32:3:2:1 relu2:relu
//   conv3:conv:32:3:1:1 relu3:relu gap:avgpool fc:dense:2
//
// conv fields are out_channels:kernel:stride:padding, dense is units,
// avgpool is global average pooling. The last layer must be dense; its
// outputs are the logits fed to the softmax cross-entropy head.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specdet/common.hpp"
#include "specdet/tensor.hpp"

namespace specdet {

enum class LayerKind { conv, relu, avgpool, dense };

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::relu;
    std::size_t out_channels = 0;  // conv
    std::size_t kernel = 0;        // conv
    std::size_t stride = 1;        // conv
    std::size_t padding = 0;       // conv
    std::size_t units = 0;         // dense

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Architecture {
    std::size_t in_channels = 3, in_height = 32, in_width = 32;
    std::vector<LayerSpec> layers;

    friend bool operator==(const Architecture&, const Architecture&) = default;

    static Architecture default_for(std::size_t channels, std::size_t height, std::size_t width,
                                    std::size_t classes) {
        Architecture a;
        a.in_channels = channels;
        a.in_height = height;
        a.in_width = width;
        a.layers = {
            {"conv1", LayerKind::conv, 16, 3, 1, 1, 0}, {"relu1", LayerKind::relu},
            {"conv2", LayerKind::conv, 32, 3, 2, 1, 0}, {"relu2", LayerKind::relu},
            {"conv3", LayerKind::conv, 32, 3, 1, 1, 0}, {"relu3", LayerKind::relu},
            {"gap", LayerKind::avgpool},                 {"fc", LayerKind::dense, 0, 0, 1, 0, classes},
        };
        return a;
    }

    std::string to_string() const {
        std::ostringstream os;
        os << "input:" << in_channels << 'x' << in_height << 'x' << in_width;
        for (const auto& l : layers) {
            os << ' ' << l.name << ':';
            switch (l.kind) {
                case LayerKind::conv:
                    os << "conv:" << l.out_channels << ':' << l.kernel << ':' << l.stride << ':' << l.padding;
                    break;
                case LayerKind::relu: os << "relu"; break;
                case LayerKind::avgpool: os << "avgpool"; break;
                case LayerKind::dense: os << "dense:" << l.units; break;
            }
        }
        return os.str();
    }

    static Architecture parse(const std::string& text) {
        auto split = [](const std::string& s, char sep) {
            std::vector<std::string> out;
            std::string cur;
            std::istringstream is(s);
            while (std::getline(is, cur, sep)) out.push_back(cur);
            return out;
        };
        auto number = [&](const std::string& s, const std::string& ctx) -> std::size_t {
            try {
                std::size_t pos = 0;
                const long long v = std::stoll(s, &pos);
                if (pos != s.size() || v < 0) throw std::invalid_argument(s);
                return static_cast<std::size_t>(v);
            } catch (const std::exception&) {
                throw ConfigError("architecture: bad number '" + s + "' in " + ctx);
            }
        };

        std::istringstream is(text);
        std::string tok;
        Architecture a;
        a.layers.clear();
        bool have_input = false;
        while (is >> tok) {
            const auto f = split(tok, ':');
            if (f.size() == 2 && f[0] == "input") {
                const auto d = split(f[1], 'x');
                if (d.size() != 3) throw ConfigError("architecture: input must be CxHxW, got '" + f[1] + "'");
                a.in_channels = number(d[0], tok);
                a.in_height = number(d[1], tok);
                a.in_width = number(d[2], tok);
                have_input = true;
                continue;
            }
            if (f.size() < 2) throw ConfigError("architecture: malformed layer token '" + tok + "'");
            LayerSpec l;
            l.name = f[0];
            if (f[1] == "conv" && f.size() == 6) {
                l.kind = LayerKind::conv;
                l.out_channels = number(f[2], tok);
                l.kernel = number(f[3], tok);
                l.stride = number(f[4], tok);
                l.padding = number(f[5], tok);
            } else if (f[1] == "relu" && f.size() == 2) {
                l.kind = LayerKind::relu;
            } else if (f[1] == "avgpool" && f.size() == 2) {
                l.kind = LayerKind::avgpool;
            } else if (f[1] == "dense" && f.size() == 3) {
                l.kind = LayerKind::dense;
                l.units = number(f[2], tok);
            } else {
                throw ConfigError("architecture: unknown layer token '" + tok + "'");
            }
            a.layers.push_back(l);
        }
        if (!have_input) throw ConfigError("architecture: missing input:CxHxW token");
        return a;
    }
};

struct LayerParams {
    std::vector<double> weight;
    std::vector<double> bias;

    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Post-layer activations keyed by layer name.
struct ActivationTrace {
    std::map<std::string, Tensor> maps;

    const Tensor& at(const std::string& name) const {
        auto it = maps.find(name);
        if (it == maps.end()) throw DataError("activation trace has no layer '" + name + "'");
        return it->second;
    }
    bool contains(const std::string& name) const { return maps.count(name) != 0; }
};

struct ForwardResult {
    Tensor logits;
    ActivationTrace trace;
};

struct LossGradient {
    double loss = 0.0;
    Tensor logits;
    Tensor input_grad;
};

inline Tensor softmax(const Tensor& logits) {
    Tensor p(logits.shape());
    const double m = *std::max_element(logits.data().begin(), logits.data().end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) sum += (p[i] = std::exp(logits[i] - m));
    for (auto& v : p.data()) v /= sum;
    return p;
}

inline double cross_entropy(const Tensor& logits, int label) {
    const double m = *std::max_element(logits.data().begin(), logits.data().end());
    double sum = 0.0;
    for (double z : logits.data()) sum += std::exp(z - m);
    return m + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

inline int argmax(const Tensor& logits) {
    return static_cast<int>(std::max_element(logits.data().begin(), logits.data().end()) -
                            logits.data().begin());
}

class Network {
public:
    Network() = default;

    /// Zero-initialised parameters. Throws ConfigError naming the first
    /// layer whose input shape it cannot accept.
    explicit Network(Architecture arch) : arch_(std::move(arch)) { build(); }

    /// Glorot-uniform weights in [-s, s], s = sqrt(6 / (fan_in + fan_out)),
    /// zero biases.
    static Network initialized(Architecture arch, std::uint64_t seed) {
        Network net(std::move(arch));
        Rng rng(seed);
        for (std::size_t li = 0; li < net.arch_.layers.size(); ++li) {
            const auto& l = net.arch_.layers[li];
            double fan_in = 0, fan_out = 0;
            if (l.kind == LayerKind::conv) {
                fan_in = static_cast<double>(net.in_shapes_[li][0] * l.kernel * l.kernel);
                fan_out = static_cast<double>(l.out_channels * l.kernel * l.kernel);
            } else if (l.kind == LayerKind::dense) {
                fan_in = static_cast<double>(shape_size(net.in_shapes_[li]));
                fan_out = static_cast<double>(l.units);
            } else {
                continue;
            }
            const double s = std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& w : net.params_[li].weight) w = rng.uniform(-s, s);
        }
        return net;
    }

    const Architecture& architecture() const { return arch_; }
    Shape input_shape() const { return {arch_.in_channels, arch_.in_height, arch_.in_width}; }
    std::size_t class_count() const { return arch_.layers.back().units; }
    std::size_t layer_count() const { return arch_.layers.size(); }

    std::vector<std::string> layer_names() const {
        std::vector<std::string> names;
        for (const auto& l : arch_.layers) names.push_back(l.name);
        return names;
    }

    const Shape& output_shape(const std::string& layer) const { return out_shapes_[index_of(layer)]; }
    const Shape& output_shape(std::size_t i) const { return out_shapes_.at(i); }

    /// Layers producing (C, H, W) maps, i.e. the ones usable for spectra.
    std::vector<std::string> spatial_layers() const {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < arch_.layers.size(); ++i)
            if (out_shapes_[i].size() == 3) names.push_back(arch_.layers[i].name);
        return names;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.weight.size() + p.bias.size();
        return n;
    }

    LayerParams& params(const std::string& layer) { return params_[index_of(layer)]; }
    const LayerParams& params(const std::string& layer) const { return params_[index_of(layer)]; }
    std::vector<LayerParams>& all_params() { return params_; }
    const std::vector<LayerParams>& all_params() const { return params_; }

    friend bool operator==(const Network& a, const Network& b) {
        return a.arch_ == b.arch_ && a.params_ == b.params_;
    }

    std::size_t index_of(const std::string& layer) const {
        for (std::size_t i = 0; i < arch_.layers.size(); ++i)
            if (arch_.layers[i].name == layer) return i;
        std::string valid;
        for (const auto& l : arch_.layers) valid += (valid.empty() ? "" : ", ") + l.name;
        throw DataError("unknown layer '" + layer + "'; valid layers: " + valid);
    }

    // -----------------------------------------------------------------------

    ForwardResult forward(const Tensor& input, const std::set<std::string>& capture = {}) const {
        for (const auto& name : capture) index_of(name);
        auto acts = forward_all(input);
        ForwardResult r;
        for (const auto& name : capture) r.trace.maps.emplace(name, acts[index_of(name)]);
        r.logits = std::move(acts.back());
        return r;
    }

    ForwardResult forward(const Image& image, const std::set<std::string>& capture = {}) const {
        return forward(image.tensor(), capture);
    }

    Tensor logits(const Tensor& input) const { return forward_all(input).back(); }
    Tensor logits(const Image& image) const { return logits(image.tensor()); }
    int predict(const Image& image) const { return argmax(logits(image)); }

    /// Cross-entropy loss at `label`, the logits and d(loss)/d(input).
    LossGradient loss_gradient(const Tensor& input, int label) const {
        check_label(label);
        auto acts = forward_all(input);
        LossGradient r;
        r.logits = acts.back();
        r.loss = cross_entropy(r.logits, label);
        Tensor up = softmax(r.logits);
        up[static_cast<std::size_t>(label)] -= 1.0;
        r.input_grad = backward(input, acts, up, nullptr);
        return r;
    }

    Tensor input_gradient(const Image& image, int label) const {
        return loss_gradient(image.tensor(), label).input_grad;
    }

    /// Vector-Jacobian product of the logits w.r.t. the input.
    Tensor logits_vjp(const Tensor& input, const Tensor& upstream) const {
        auto acts = forward_all(input);
        if (upstream.size() != acts.back().size()) throw DataError("logits_vjp: upstream size mismatch");
        return backward(input, acts, upstream, nullptr);
    }

    /// Adds d(loss)/d(params) for one sample into `grads` (same layout as
    /// all_params()) and returns the loss.
    double accumulate_param_gradient(const Tensor& input, int label, std::vector<LayerParams>& grads) const {
        check_label(label);
        auto acts = forward_all(input);
        const double loss = cross_entropy(acts.back(), label);
        Tensor up = softmax(acts.back());
        up[static_cast<std::size_t>(label)] -= 1.0;
        backward(input, acts, up, &grads);
        return loss;
    }

    std::vector<LayerParams> zero_like_params() const {
        std::vector<LayerParams> g(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            g[i].weight.assign(params_[i].weight.size(), 0.0);
            g[i].bias.assign(params_[i].bias.size(), 0.0);
        }
        return g;
    }

    // -----------------------------------------------------------------------
    // Serialization

    std::vector<unsigned char> serialize() const {
        io::Writer w;
        w.magic("SSNET1");
        w.str(arch_.to_string());
        for (const auto& p : params_) {
            w.f64s(p.weight);
            w.f64s(p.bias);
        }
        return w.buffer();
    }

    static Network deserialize(std::vector<unsigned char> bytes, const std::string& what = "network") {
        io::Reader r(std::move(bytes), what);
        r.expect_magic("SSNET1");
        Network net(Architecture::parse(r.str()));
        for (auto& p : net.params_) {
            p.weight = r.f64s(p.weight.size());
            p.bias = r.f64s(p.bias.size());
        }
        r.expect_end();
        return net;
    }

    void save(const std::string& path) const {
        io::Writer w;
        const auto bytes = serialize();
        w.bytes(bytes.data(), bytes.size());
        w.save(path);
    }

    static Network load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open network file: " + path);
        std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return deserialize(std::move(data), path);
    }

private:
    void check_label(int label) const {
        if (label < 0 || static_cast<std::size_t>(label) >= class_count())
            throw DataError("label " + std::to_string(label) + " out of range for " +
                            std::to_string(class_count()) + " classes");
    }

    void build() {
        if (arch_.layers.empty()) throw ConfigError("architecture has no layers");
        if (arch_.in_channels == 0 || arch_.in_height == 0 || arch_.in_width == 0)
            throw ConfigError("architecture input dimensions must be positive");
        std::set<std::string> seen;
        Shape cur = input_shape();
        for (const auto& l : arch_.layers) {
            if (l.name.empty() || !seen.insert(l.name).second)
                throw ConfigError("layer names must be unique and non-empty (offending: '" + l.name + "')");
            in_shapes_.push_back(cur);
            LayerParams p;
            switch (l.kind) {
                case LayerKind::conv: {
                    if (cur.size() != 3)
                        throw ConfigError("layer '" + l.name + "': conv needs a CxHxW input, got " + shape_string(cur));
                    if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0)
                        throw ConfigError("layer '" + l.name + "': conv channels, kernel and stride must be positive");
                    const auto oh = conv_out(cur[1], l), ow = conv_out(cur[2], l);
                    if (oh == 0 || ow == 0)
                        throw ConfigError("layer '" + l.name + "': kernel " + std::to_string(l.kernel) +
                                          " does not fit input " + shape_string(cur));
                    p.weight.assign(l.out_channels * cur[0] * l.kernel * l.kernel, 0.0);
                    p.bias.assign(l.out_channels, 0.0);
                    cur = {l.out_channels, oh, ow};
                    break;
                }
                case LayerKind::relu: break;
                case LayerKind::avgpool:
                    if (cur.size() != 3)
                        throw ConfigError("layer '" + l.name + "': avgpool needs a CxHxW input, got " + shape_string(cur));
                    cur = {cur[0]};
                    break;
                case LayerKind::dense:
                    if (l.units == 0) throw ConfigError("layer '" + l.name + "': dense units must be positive");
                    p.weight.assign(l.units * shape_size(cur), 0.0);
                    p.bias.assign(l.units, 0.0);
                    cur = {l.units};
                    break;
            }
            params_.push_back(std::move(p));
            out_shapes_.push_back(cur);
        }
        if (arch_.layers.back().kind != LayerKind::dense)
            throw ConfigError("layer '" + arch_.layers.back().name + "': the last layer must be dense (logits)");
        if (arch_.layers.back().units < 2) throw ConfigError("the logits layer needs at least 2 classes");
    }

    // floor((in + 2*pad - kernel) / stride) + 1, or 0 if the kernel does not fit.
    static std::size_t conv_out(std::size_t in, const LayerSpec& l) {
        const std::size_t padded = in + 2 * l.padding;
        if (padded < l.kernel) return 0;
        return (padded - l.kernel) / l.stride + 1;
    }

    // Valid output-column range [lo, hi) for kernel offset k, so that
    // 0 <= o*stride + k - pad < in.
    static void valid_range(std::size_t in, std::size_t out, std::size_t k, const LayerSpec& l,
                            std::size_t& lo, std::size_t& hi) {
        const long long s = static_cast<long long>(l.stride);
        const long long off = static_cast<long long>(k) - static_cast<long long>(l.padding);
        long long a = off >= 0 ? 0 : (-off + s - 1) / s;
        long long b = (static_cast<long long>(in) - 1 - off);
        b = b < 0 ? -1 : b / s;
        a = std::max<long long>(a, 0);
        b = std::min<long long>(b, static_cast<long long>(out) - 1);
        lo = static_cast<std::size_t>(a);
        hi = b < a ? lo : static_cast<std::size_t>(b + 1);
    }

    // Unfolds the input into a (C*K*K) x (OH*OW) row-major matrix; padded
    // positions are zero.
    static void im2col(const Tensor& x, const LayerSpec& l, const Shape& os, std::vector<double>& col) {
        const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), K = l.kernel, S = l.stride;
        const std::size_t OH = os[1], OW = os[2], P = OH * OW;
        std::fill(col.begin(), col.end(), 0.0);
        const double* in = x.data().data();
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t ky = 0; ky < K; ++ky) {
                std::size_t ylo, yhi;
                valid_range(H, OH, ky, l, ylo, yhi);
                for (std::size_t kx = 0; kx < K; ++kx) {
                    std::size_t xlo, xhi;
                    valid_range(W, OW, kx, l, xlo, xhi);
                    if (xhi == xlo) continue;
                    double* row = col.data() + ((c * K + ky) * K + kx) * P;
                    const std::size_t ix0 = xlo * S + kx - l.padding;
                    for (std::size_t oy = ylo; oy < yhi; ++oy) {
                        const double* irow = in + (c * H + oy * S + ky - l.padding) * W + ix0;
                        double* orow = row + oy * OW + xlo;
                        for (std::size_t j = 0; j < xhi - xlo; ++j) orow[j] = irow[j * S];
                    }
                }
            }
        }
    }

    // Adjoint of im2col: scatters-adds column gradients back onto the input.
    static void col2im(const double* col, const LayerSpec& l, const Shape& os, Tensor& gin) {
        const std::size_t C = gin.dim(0), H = gin.dim(1), W = gin.dim(2), K = l.kernel, S = l.stride;
        const std::size_t OH = os[1], OW = os[2], P = OH * OW;
        double* out = gin.data().data();
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t ky = 0; ky < K; ++ky) {
                std::size_t ylo, yhi;
                valid_range(H, OH, ky, l, ylo, yhi);
                for (std::size_t kx = 0; kx < K; ++kx) {
                    std::size_t xlo, xhi;
                    valid_range(W, OW, kx, l, xlo, xhi);
                    if (xhi == xlo) continue;
                    const double* row = col + ((c * K + ky) * K + kx) * P;
                    const std::size_t ix0 = xlo * S + kx - l.padding;
                    for (std::size_t oy = ylo; oy < yhi; ++oy) {
                        double* grow = out + (c * H + oy * S + ky - l.padding) * W + ix0;
                        const double* crow = row + oy * OW + xlo;
                        for (std::size_t j = 0; j < xhi - xlo; ++j) grow[j * S] += crow[j];
                    }
                }
            }
        }
    }

    std::vector<Tensor> forward_all(const Tensor& input) const {
        if (input.shape() != input_shape())
            throw DataError("layer '" + arch_.layers.front().name + "': input shape " + shape_string(input.shape()) +
                            " does not match network input " + shape_string(input_shape()));
        std::vector<Tensor> acts;
        acts.reserve(arch_.layers.size());
        for (std::size_t li = 0; li < arch_.layers.size(); ++li) {
            const Tensor& x = li == 0 ? input : acts.back();
            acts.push_back(forward_layer(li, x));
        }
        return acts;
    }

    Tensor forward_layer(std::size_t li, const Tensor& x) const {
        const auto& l = arch_.layers[li];
        const auto& p = params_[li];
        switch (l.kind) {
            case LayerKind::conv: {
                const auto& os = out_shapes_[li];
                const std::size_t OC = l.out_channels, P = os[1] * os[2];
                const std::size_t CKK = x.dim(0) * l.kernel * l.kernel;
                std::vector<double> col(CKK * P);
                im2col(x, l, os, col);
                Tensor y(os);
                using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
                Eigen::Map<const RowMat> W(p.weight.data(), static_cast<Eigen::Index>(OC), static_cast<Eigen::Index>(CKK));
                Eigen::Map<const RowMat> X(col.data(), static_cast<Eigen::Index>(CKK), static_cast<Eigen::Index>(P));
                Eigen::Map<RowMat> Y(y.data().data(), static_cast<Eigen::Index>(OC), static_cast<Eigen::Index>(P));
                Y.noalias() = W * X;
                for (std::size_t o = 0; o < OC; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += p.bias[o];
                return y;
            }
            case LayerKind::relu: {
                Tensor y = x;
                for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
                return y;
            }
            case LayerKind::avgpool: {
                const std::size_t C = x.dim(0), plane = x.dim(1) * x.dim(2);
                Tensor y({C});
                for (std::size_t c = 0; c < C; ++c) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) s += x[c * plane + i];
                    y[c] = s / static_cast<double>(plane);
                }
                return y;
            }
            case LayerKind::dense: {
                const std::size_t n = x.size();
                Tensor y({l.units});
                for (std::size_t u = 0; u < l.units; ++u) {
                    const double* w = p.weight.data() + u * n;
                    double s = p.bias[u];
                    for (std::size_t j = 0; j < n; ++j) s += w[j] * x[j];
                    y[u] = s;
                }
                return y;
            }
        }
        return x;
    }

    // Backpropagates `upstream` (d loss / d logits) to the input. Parameter
    // gradients are accumulated when `grads` is non-null.
    Tensor backward(const Tensor& input, const std::vector<Tensor>& acts, Tensor upstream,
                    std::vector<LayerParams>* grads) const {
        Tensor g = std::move(upstream);
        for (std::size_t li = arch_.layers.size(); li-- > 0;) {
            const Tensor& x = li == 0 ? input : acts[li - 1];
            const auto& l = arch_.layers[li];
            const auto& p = params_[li];
            Tensor gin(x.shape());
            switch (l.kind) {
                case LayerKind::conv: {
                    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
                    const auto& os = out_shapes_[li];
                    const auto OC = static_cast<Eigen::Index>(l.out_channels);
                    const auto P = static_cast<Eigen::Index>(os[1] * os[2]);
                    const auto CKK = static_cast<Eigen::Index>(x.dim(0) * l.kernel * l.kernel);
                    Eigen::Map<const RowMat> W(p.weight.data(), OC, CKK);
                    Eigen::Map<const RowMat> G(g.data().data(), OC, P);
                    RowMat gcol = W.transpose() * G;
                    col2im(gcol.data(), l, os, gin);
                    if (grads) {
                        std::vector<double> col(static_cast<std::size_t>(CKK * P));
                        im2col(x, l, os, col);
                        Eigen::Map<const RowMat> X(col.data(), CKK, P);
                        Eigen::Map<RowMat> GW((*grads)[li].weight.data(), OC, CKK);
                        GW.noalias() += G * X.transpose();
                        for (Eigen::Index o = 0; o < OC; ++o) (*grads)[li].bias[static_cast<std::size_t>(o)] += G.row(o).sum();
                    }
                    break;
                }
                case LayerKind::relu:
                    for (std::size_t i = 0; i < x.size(); ++i) gin[i] = x[i] > 0.0 ? g[i] : 0.0;
                    break;
                case LayerKind::avgpool: {
                    const std::size_t C = x.dim(0), plane = x.dim(1) * x.dim(2);
                    for (std::size_t c = 0; c < C; ++c) {
                        const double v = g[c] / static_cast<double>(plane);
                        std::fill(gin.data().begin() + static_cast<std::ptrdiff_t>(c * plane),
                                  gin.data().begin() + static_cast<std::ptrdiff_t>((c + 1) * plane), v);
                    }
                    break;
                }
                case LayerKind::dense: {
                    const std::size_t n = x.size();
                    for (std::size_t u = 0; u < l.units; ++u) {
                        const double* w = p.weight.data() + u * n;
                        const double gu = g[u];
                        for (std::size_t j = 0; j < n; ++j) gin[j] += w[j] * gu;
                        if (grads) {
                            double* gw = (*grads)[li].weight.data() + u * n;
                            for (std::size_t j = 0; j < n; ++j) gw[j] += gu * x[j];
                            (*grads)[li].bias[u] += gu;
                        }
                    }
                    break;
                }
            }
            g = std::move(gin);
        }
        return g;
    }

    Architecture arch_;
    std::vector<Shape> in_shapes_;
    std::vector<Shape> out_shapes_;
    std::vector<LayerParams> params_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
    int epochs = 12;
    double learning_rate = 0.01;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
};

struct TrainResult {
    Network net;
    /// Mean training-set cross-entropy after each epoch.
    std::vector<double> epoch_loss;
};

inline double mean_loss(const Network& net, const LabeledImages& data) {
    double s = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) s += cross_entropy(net.logits(data.images[i]), data.labels[i]);
    return s / static_cast<double>(data.size());
}

inline double accuracy(const Network& net, const LabeledImages& data) {
    if (data.size() == 0) throw DataError("accuracy: empty dataset");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < data.size(); ++i) ok += net.predict(data.images[i]) == data.labels[i];
    return static_cast<double>(ok) / static_cast<double>(data.size());
}

/// Mini-batch SGD on mean cross-entropy. The sample order of every epoch is
/// shuffled from (seed, epoch); gradients are summed in sample order.
inline TrainResult train_with_history(Network net, const LabeledImages& data, const TrainOptions& opt) {
    data.validate();
    if (data.size() == 0) throw DataError("training set is empty");
    if (data.class_count < 2 || static_cast<std::size_t>(data.class_count) > net.class_count())
        throw DataError("training needs at least 2 classes and no more than the network's " +
                        std::to_string(net.class_count()));
    if (std::set<int>(data.labels.begin(), data.labels.end()).size() < 2)
        throw DataError("training set contains a single class");
    if (opt.epochs < 0 || !(opt.learning_rate > 0.0) || opt.batch_size == 0)
        throw ConfigError("training: epochs >= 0, learning rate > 0 and batch size > 0 required");

    TrainResult result;
    std::vector<std::size_t> order(data.size());
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
            const std::size_t end = std::min(order.size(), start + opt.batch_size);
            auto grads = net.zero_like_params();
            double batch_loss = 0.0;
            for (std::size_t k = start; k < end; ++k)
                batch_loss += net.accumulate_param_gradient(data.images[order[k]].tensor(), data.labels[order[k]], grads);
            if (!std::isfinite(batch_loss))
                throw NumericError("training diverged: non-finite loss in epoch " + std::to_string(epoch));
            const double scale = opt.learning_rate / static_cast<double>(end - start);
            auto& params = net.all_params();
            for (std::size_t li = 0; li < params.size(); ++li) {
                for (std::size_t j = 0; j < params[li].weight.size(); ++j) params[li].weight[j] -= scale * grads[li].weight[j];
                for (std::size_t j = 0; j < params[li].bias.size(); ++j) params[li].bias[j] -= scale * grads[li].bias[j];
            }
        }
        const double loss = mean_loss(net, data);
        if (!std::isfinite(loss))
            throw NumericError("training diverged: non-finite loss after epoch " + std::to_string(epoch));
        result.epoch_loss.push_back(loss);
    }
    result.net = std::move(net);
    return result;
}

inline Network train(Network net, const LabeledImages& data, const TrainOptions& opt) {
    return train_with_history(std::move(net), data, opt).net;
}

}  // namespace specdet
