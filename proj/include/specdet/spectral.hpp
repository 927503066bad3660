#pragma once

// 2D discrete Fourier transform, magnitude spectra and the spectral feature
// vectors used by the detectors. Coefficients are kept in natural order
// (DC at index 0); no centre shift is applied.

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "specdet/common.hpp"
#include "specdet/smallnet.hpp"
#include "specdet/tensor.hpp"

namespace specdet {

using Complex = std::complex<double>;

template <class T>
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<T> d) : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != r * c) throw DataError("matrix data length does not match its shape");
    }

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

using RealMatrix = Matrix<double>;
using ComplexMatrix = Matrix<Complex>;

inline RealMatrix plane_matrix(std::span<const double> plane, std::size_t rows, std::size_t cols) {
    return RealMatrix(rows, cols, std::vector<double>(plane.begin(), plane.end()));
}

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// exp(-2*pi*i*k/n) with k reduced mod n first, so large index products do
// not lose precision in the angle.
inline Complex twiddle(std::size_t k, std::size_t n) {
    const double a = -2.0 * std::numbers::pi * static_cast<double>(k % n) / static_cast<double>(n);
    return {std::cos(a), std::sin(a)};
}

// In-place iterative radix-2 Cooley-Tukey, n a power of two.
inline void fft_radix2(std::vector<Complex>& a, const std::vector<Complex>& tw) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2, step = n / len;
        for (std::size_t start = 0; start < n; start += len) {
            for (std::size_t k = 0; k < half; ++k) {
                const Complex u = a[start + k];
                const Complex v = a[start + k + half] * tw[k * step];
                a[start + k] = u + v;
                a[start + k + half] = u - v;
            }
        }
    }
}

// Direct O(n^2) transform for lengths that are not powers of two.
inline void dft_direct(std::vector<Complex>& a, const std::vector<Complex>& tw) {
    const std::size_t n = a.size();
    std::vector<Complex> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        Complex s{};
        for (std::size_t j = 0; j < n; ++j) s += a[j] * tw[(k * j) % n];
        out[k] = s;
    }
    a.swap(out);
}

class Transform1d {
public:
    explicit Transform1d(std::size_t n) : n_(n), tw_(n) {
        for (std::size_t k = 0; k < n; ++k) tw_[k] = twiddle(k, n);
    }
    void operator()(std::vector<Complex>& a) const {
        if (is_pow2(n_))
            fft_radix2(a, tw_);
        else
            dft_direct(a, tw_);
    }

private:
    std::size_t n_;
    std::vector<Complex> tw_;
};

}  // namespace detail

/// Reference 2D DFT by direct summation over every (m, n), O(M^2 N^2).
inline ComplexMatrix dft2_brute(const RealMatrix& x) {
    if (x.rows == 0 || x.cols == 0 || x.data.size() != x.rows * x.cols)
        throw DataError("dft2_brute: input must be a non-empty rectangular matrix");
    const std::size_t M = x.rows, N = x.cols;
    ComplexMatrix F(M, N);
    for (std::size_t l = 0; l < M; ++l) {
        for (std::size_t k = 0; k < N; ++k) {
            Complex s{};
            for (std::size_t m = 0; m < M; ++m) {
                const Complex row_tw = detail::twiddle(l * m, M);
                for (std::size_t n = 0; n < N; ++n) s += row_tw * detail::twiddle(k * n, N) * x(m, n);
            }
            F(l, k) = s;
        }
    }
    return F;
}

/// Row-column 2D DFT: radix-2 FFT along power-of-two dimensions, direct
/// per-dimension DFT otherwise.
inline ComplexMatrix fft2(const RealMatrix& x) {
    if (x.rows == 0 || x.cols == 0 || x.data.size() != x.rows * x.cols)
        throw DataError("fft2: input must be a non-empty rectangular matrix");
    const std::size_t M = x.rows, N = x.cols;
    ComplexMatrix F(M, N);
    const detail::Transform1d row_t(N), col_t(M);
    std::vector<Complex> buf(N);
    for (std::size_t r = 0; r < M; ++r) {
        for (std::size_t c = 0; c < N; ++c) buf[c] = x(r, c);
        row_t(buf);
        for (std::size_t c = 0; c < N; ++c) F(r, c) = buf[c];
    }
    buf.resize(M);
    for (std::size_t c = 0; c < N; ++c) {
        for (std::size_t r = 0; r < M; ++r) buf[r] = F(r, c);
        col_t(buf);
        for (std::size_t r = 0; r < M; ++r) F(r, c) = buf[r];
    }
    return F;
}

/// |F(l,k)| = sqrt(Re^2 + Im^2) elementwise.
inline RealMatrix magnitude(const ComplexMatrix& F) {
    RealMatrix m(F.rows, F.cols);
    for (std::size_t i = 0; i < F.data.size(); ++i) m.data[i] = std::hypot(F.data[i].real(), F.data[i].imag());
    return m;
}

inline RealMatrix magnitude_spectrum(const RealMatrix& x) { return magnitude(fft2(x)); }

// ---------------------------------------------------------------------------
// Feature vectors

enum class FeatureLabel : int { clean = 0, adversarial = 1 };

struct Provenance {
    std::size_t sample_id = 0;
    std::string attack = "clean";
    double epsilon = 0.0;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct FeatureVector {
    std::vector<double> values;
    FeatureLabel label = FeatureLabel::clean;
    Provenance provenance;

    int label_value() const { return static_cast<int>(label); }

    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

struct SpectralOptions {
    /// Use log(1 + |F|) instead of the raw magnitude.
    bool log_scale = false;
};

namespace detail {
inline void append_spectrum(std::vector<double>& out, std::span<const double> plane, std::size_t h, std::size_t w,
                            const SpectralOptions& opt) {
    const auto mag = magnitude_spectrum(plane_matrix(plane, h, w));
    for (double v : mag.data) out.push_back(opt.log_scale ? std::log1p(v) : v);
}
}  // namespace detail

inline std::size_t blackbox_dimension(std::size_t channels, std::size_t height, std::size_t width) {
    return channels * height * width;
}

/// Concatenated magnitude spectra of every colour channel, channel order
/// 0..C-1, each flattened row-major. Length C*H*W.
inline FeatureVector blackbox_features(const Image& image, const SpectralOptions& opt = {}) {
    FeatureVector fv;
    fv.values.reserve(image.size());
    for (std::size_t c = 0; c < image.channels(); ++c)
        detail::append_spectrum(fv.values, image.channel(c), image.height(), image.width(), opt);
    return fv;
}

/// Sum over the selected layers of C*H*W.
inline std::size_t whitebox_dimension(const Network& net, const std::vector<std::string>& layers) {
    std::size_t d = 0;
    for (const auto& name : layers) {
        const auto& s = net.output_shape(name);
        if (s.size() != 3) throw DataError("layer '" + name + "' has no 2D feature maps (shape " + shape_string(s) + ")");
        d += shape_size(s);
    }
    return d;
}

/// Magnitude spectra of every 2D map of the requested layers, in the given
/// layer order then channel order.
inline FeatureVector whitebox_features(const ActivationTrace& trace, const std::vector<std::string>& layers,
                                       const SpectralOptions& opt = {}) {
    if (layers.empty()) throw DataError("whitebox_features: the layer list is empty");
    FeatureVector fv;
    for (const auto& name : layers) {
        if (!trace.contains(name)) throw DataError("whitebox_features: layer '" + name + "' missing from trace");
        const Tensor& t = trace.at(name);
        if (t.rank() != 3)
            throw DataError("whitebox_features: layer '" + name + "' is not a CxHxW map (" + shape_string(t.shape()) + ")");
        const std::size_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
        for (std::size_t c = 0; c < C; ++c)
            detail::append_spectrum(fv.values, t.span().subspan(c * H * W, H * W), H, W, opt);
    }
    return fv;
}

inline FeatureVector whitebox_features(const Network& net, const Image& image, const std::vector<std::string>& layers,
                                       const SpectralOptions& opt = {}) {
    if (layers.empty()) throw DataError("whitebox_features: the layer list is empty");
    const auto r = net.forward(image, std::set<std::string>(layers.begin(), layers.end()));
    return whitebox_features(r.trace, layers, opt);
}

// ---------------------------------------------------------------------------
// Difference heatmaps

struct DiffHeatmaps {
    std::vector<RealMatrix> mean_spatial;     // per channel, mean of (adv - clean)
    std::vector<RealMatrix> spectral;         // per channel, sum of |fft2(adv - clean)|
};

inline DiffHeatmaps diff_heatmaps(const std::vector<Image>& clean, const std::vector<Image>& adv) {
    if (clean.size() != adv.size())
        throw DataError("diff_heatmaps: " + std::to_string(clean.size()) + " clean vs " + std::to_string(adv.size()) +
                        " adversarial images");
    if (clean.empty()) throw DataError("diff_heatmaps: no image pairs");
    const std::size_t C = clean[0].channels(), H = clean[0].height(), W = clean[0].width();
    DiffHeatmaps out;
    out.mean_spatial.assign(C, RealMatrix(H, W));
    out.spectral.assign(C, RealMatrix(H, W));
    for (std::size_t i = 0; i < clean.size(); ++i) {
        if (clean[i].tensor().shape() != clean[0].tensor().shape() || adv[i].tensor().shape() != clean[0].tensor().shape())
            throw DataError("diff_heatmaps: image shapes differ at pair " + std::to_string(i));
        for (std::size_t c = 0; c < C; ++c) {
            RealMatrix d(H, W);
            const auto a = adv[i].channel(c), b = clean[i].channel(c);
            for (std::size_t j = 0; j < H * W; ++j) d.data[j] = a[j] - b[j];
            for (std::size_t j = 0; j < H * W; ++j) out.mean_spatial[c].data[j] += d.data[j];
            const auto mag = magnitude_spectrum(d);
            for (std::size_t j = 0; j < H * W; ++j) out.spectral[c].data[j] += mag.data[j];
        }
    }
    const double n = static_cast<double>(clean.size());
    for (auto& m : out.mean_spatial)
        for (auto& v : m.data) v /= n;
    return out;
}

/// Pearson correlation of two equally sized maps; 1.0 when both are constant.
inline double normalized_cross_correlation(const RealMatrix& a, const RealMatrix& b) {
    if (a.data.size() != b.data.size()) throw DataError("normalized_cross_correlation: size mismatch");
    const double n = static_cast<double>(a.data.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        ma += a.data[i];
        mb += b.data[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double da = a.data[i] - ma, db = b.data[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return (saa == sbb) ? 1.0 : 0.0;
    return sab / std::sqrt(saa * sbb);
}

/// Binary PGM (P5) with min-max normalisation to 0..255 and a text sidecar
/// `<path>.txt` holding the range. A constant map is written all-zero.
inline void write_pgm(const std::string& path, const RealMatrix& m) {
    double lo = m.data.empty() ? 0.0 : m.data[0], hi = lo;
    for (double v : m.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "P5\n" << m.cols << ' ' << m.rows << "\n255\n";
    for (double v : m.data) {
        const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
    }
    if (!out) throw DataError("write failed: " + path);

    std::ofstream side(path + ".txt");
    if (!side) throw DataError("cannot open for writing: " + path + ".txt");
    side << std::setprecision(17) << "min " << lo << "\nmax " << hi << "\n";
}

}  // namespace specdet
