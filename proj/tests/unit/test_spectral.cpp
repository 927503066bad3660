#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

#include "specdet/spectral.hpp"

using namespace specdet;

namespace {

RealMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    RealMatrix m(r, c);
    for (auto& v : m.data) v = rng.uniform(-1.0, 1.0);
    return m;
}

// Textbook DFT written independently of the library.
ComplexMatrix oracle_dft(const RealMatrix& x) {
    ComplexMatrix F(x.rows, x.cols);
    for (std::size_t l = 0; l < x.rows; ++l)
        for (std::size_t k = 0; k < x.cols; ++k) {
            Complex s{};
            for (std::size_t m = 0; m < x.rows; ++m)
                for (std::size_t n = 0; n < x.cols; ++n) {
                    const double angle = -2.0 * std::numbers::pi *
                                         (static_cast<double>(l * m) / static_cast<double>(x.rows) +
                                          static_cast<double>(k * n) / static_cast<double>(x.cols));
                    s += x(m, n) * std::polar(1.0, angle);
                }
            F(l, k) = s;
        }
    return F;
}

double max_rel_diff(const ComplexMatrix& a, const ComplexMatrix& b) {
    double scale = 0, worst = 0;
    for (const auto& v : b.data) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst / std::max(scale, 1e-300);
}

Image random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng r(seed);
    std::vector<double> px(c * h * w);
    for (auto& v : px) v = r.uniform();
    return Image(c, h, w, std::move(px));
}

}  // namespace

TEST(Dft, ConstantIsDcOnly) {
    const std::size_t N = 8;
    const RealMatrix x(N, N, std::vector<double>(N * N, 0.3));
    const auto F = dft2_brute(x);
    EXPECT_NEAR(F(0, 0).real(), 0.3 * N * N, 1e-12);
    for (std::size_t i = 1; i < F.data.size(); ++i) EXPECT_LT(std::abs(F.data[i]), 1e-12);
    EXPECT_NEAR(magnitude(fft2(x))(0, 0), 0.3 * N * N, 1e-12);
}

TEST(Dft, ImpulseIsFlat) {
    RealMatrix x(4, 6);
    x(0, 0) = 1.0;
    for (const auto& v : dft2_brute(x).data) EXPECT_NEAR(std::abs(v - Complex(1.0, 0.0)), 0.0, 1e-12);
    for (const auto& v : fft2(x).data) EXPECT_NEAR(std::abs(v - Complex(1.0, 0.0)), 0.0, 1e-12);
}

TEST(Dft, BruteMatchesOracle) {
    const auto x = random_matrix(8, 8, 1);
    EXPECT_LT(max_rel_diff(dft2_brute(x), oracle_dft(x)), 1e-12);
    const auto y = random_matrix(5, 3, 2);
    EXPECT_LT(max_rel_diff(dft2_brute(y), oracle_dft(y)), 1e-12);
}

TEST(Fft, MatchesBruteOnAllSizes) {
    const std::vector<std::size_t> sizes = {2, 3, 4, 5, 6, 8, 12, 16, 32};
    std::uint64_t seed = 0;
    for (auto r : sizes)
        for (auto c : sizes) {
            const auto x = random_matrix(r, c, ++seed);
            EXPECT_LT(max_rel_diff(fft2(x), dft2_brute(x)), 1e-9) << r << "x" << c;
        }
}

TEST(Fft, ThirtyTwoSquareMatchesOracle) {
    const auto x = random_matrix(32, 32, 77);
    EXPECT_LT(max_rel_diff(fft2(x), oracle_dft(x)), 1e-9);
}

TEST(Fft, Parseval) {
    for (auto [r, c] : {std::pair<std::size_t, std::size_t>{32, 32}, {6, 12}, {5, 8}}) {
        const auto x = random_matrix(r, c, r * 100 + c);
        double sx = 0, sf = 0;
        for (double v : x.data) sx += v * v;
        for (const auto& v : fft2(x).data) sf += std::norm(v);
        EXPECT_NEAR(sx, sf / static_cast<double>(r * c), 1e-9 * sx);
    }
}

TEST(Fft, Linearity) {
    const auto x = random_matrix(16, 8, 3), y = random_matrix(16, 8, 4);
    const double a = 1.7, b = -0.4;
    RealMatrix z(16, 8);
    for (std::size_t i = 0; i < z.data.size(); ++i) z.data[i] = a * x.data[i] + b * y.data[i];
    const auto Fx = fft2(x), Fy = fft2(y), Fz = fft2(z);
    for (std::size_t i = 0; i < Fz.data.size(); ++i) EXPECT_LT(std::abs(Fz.data[i] - (a * Fx.data[i] + b * Fy.data[i])), 1e-9);
}

TEST(Fft, RejectsEmpty) {
    EXPECT_THROW(fft2(RealMatrix{}), DataError);
    EXPECT_THROW(dft2_brute(RealMatrix{}), DataError);
}

TEST(Magnitude, ThreeFourFive) {
    const ComplexMatrix F(1, 1, std::vector<Complex>{{3.0, 4.0}});
    EXPECT_DOUBLE_EQ(magnitude(F)(0, 0), 5.0);
}

TEST(Magnitude, ConjugateSymmetryForRealInput) {
    for (auto [M, N] : {std::pair<std::size_t, std::size_t>{8, 8}, {6, 10}}) {
        const auto m = magnitude_spectrum(random_matrix(M, N, M + N));
        for (std::size_t l = 0; l < M; ++l)
            for (std::size_t k = 0; k < N; ++k) {
                const double a = m(l, k), b = m((M - l) % M, (N - k) % N);
                EXPECT_GE(a, 0.0);
                EXPECT_LE(std::abs(a - b), 1e-9 * std::max(1.0, a));
            }
    }
}

TEST(Blackbox, DimensionAndChannelSegments) {
    const auto img = random_image(3, 32, 32, 5);
    const auto fv = blackbox_features(img);
    ASSERT_EQ(fv.values.size(), 3072u);
    EXPECT_EQ(blackbox_dimension(3, 32, 32), 3072u);
    for (double v : fv.values) EXPECT_GE(v, 0.0);
    for (std::size_t c = 0; c < 3; ++c) {
        const auto ref = magnitude(oracle_dft(plane_matrix(img.channel(c), 32, 32)));
        for (std::size_t i = 0; i < 1024; ++i) EXPECT_NEAR(fv.values[c * 1024 + i], ref.data[i], 1e-9);
    }
}

TEST(Blackbox, IdenticalChannelsGiveIdenticalSegments) {
    const auto one = random_image(1, 8, 8, 6);
    std::vector<double> px;
    for (int c = 0; c < 2; ++c) px.insert(px.end(), one.pixels().begin(), one.pixels().end());
    const auto fv = blackbox_features(Image(2, 8, 8, px));
    for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(fv.values[i], fv.values[64 + i]);
}

TEST(Blackbox, NegationChangesOnlyDc) {
    const auto img = random_image(3, 8, 8, 7);
    std::vector<double> neg(img.pixels());
    for (auto& v : neg) v = 1.0 - v;
    const auto a = blackbox_features(img), b = blackbox_features(Image(3, 8, 8, neg));
    for (std::size_t c = 0; c < 3; ++c) {
        // 1 - x has DC 64 - sum(x) and every other coefficient negated.
        double sum = 0;
        for (double v : img.channel(c)) sum += v;
        EXPECT_NEAR(a.values[c * 64], std::abs(sum), 1e-9);
        EXPECT_NEAR(b.values[c * 64], std::abs(64.0 - sum), 1e-9);
        for (std::size_t i = 1; i < 64; ++i) EXPECT_NEAR(a.values[c * 64 + i], b.values[c * 64 + i], 1e-9);
    }
}

TEST(Blackbox, ChannelPermutationPermutesSegments) {
    const auto img = random_image(3, 4, 4, 8);
    const std::size_t perm[3] = {2, 0, 1};
    std::vector<double> px;
    for (auto c : perm) px.insert(px.end(), img.channel(c).begin(), img.channel(c).end());
    const auto a = blackbox_features(img), b = blackbox_features(Image(3, 4, 4, px));
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(b.values[k * 16 + i], a.values[perm[k] * 16 + i]);
}

TEST(Blackbox, LogScaleOption) {
    const auto img = random_image(1, 4, 4, 9);
    const auto raw = blackbox_features(img), lg = blackbox_features(img, {true});
    for (std::size_t i = 0; i < raw.values.size(); ++i) EXPECT_DOUBLE_EQ(lg.values[i], std::log1p(raw.values[i]));
}

TEST(Whitebox, SixteenChannelLayerDimension) {
    ActivationTrace t;
    Rng r(1);
    std::vector<double> v(16 * 16 * 16);
    for (auto& x : v) x = r.uniform();
    t.maps["l"] = Tensor({16, 16, 16}, v);
    const auto a = whitebox_features(t, {"l"});
    EXPECT_EQ(a.values.size(), 4096u);
    EXPECT_EQ(a, whitebox_features(t, {"l"}));
}

TEST(Whitebox, LayerOrderThenChannelOrder) {
    ActivationTrace t;
    t.maps["a"] = Tensor({1, 2, 2}, std::vector<double>{1, 0, 0, 0});
    t.maps["b"] = Tensor({2, 2, 2}, std::vector<double>{1, 1, 1, 1, 2, 0, 0, 0});
    const auto fv = whitebox_features(t, {"b", "a"});
    const std::vector<double> expected = {4, 0, 0, 0, 2, 2, 2, 2, 1, 1, 1, 1};
    ASSERT_EQ(fv.values.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(fv.values[i], expected[i], 1e-12);
}

TEST(Whitebox, Errors) {
    ActivationTrace t;
    t.maps["a"] = Tensor({1, 2, 2}, 0.0);
    EXPECT_THROW(whitebox_features(t, {}), DataError);
    try {
        whitebox_features(t, {"a", "missing"});
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("missing"), std::string::npos);
    }
}

TEST(Heatmaps, IdenticalPairsGiveZero) {
    const std::vector<Image> imgs = {random_image(3, 8, 8, 1), random_image(3, 8, 8, 2)};
    const auto h = diff_heatmaps(imgs, imgs);
    for (std::size_t c = 0; c < 3; ++c) {
        for (double v : h.mean_spatial[c].data) EXPECT_EQ(v, 0.0);
        for (double v : h.spectral[c].data) EXPECT_EQ(v, 0.0);
    }
}

TEST(Heatmaps, ImpulseDifferenceIsFlat) {
    const auto clean = Image(1, 8, 8, 0.5);
    std::vector<double> px(64, 0.5);
    px[19] = 0.6;
    const auto h = diff_heatmaps({clean}, {Image(1, 8, 8, px)});
    for (double v : h.spectral[0].data) EXPECT_NEAR(v, 0.1, 1e-12);
    EXPECT_NEAR(h.mean_spatial[0].data[19], 0.1, 1e-12);
}

TEST(Heatmaps, Errors) {
    EXPECT_THROW(diff_heatmaps({}, {}), DataError);
    EXPECT_THROW(diff_heatmaps({random_image(1, 2, 2, 1)}, {}), DataError);
}

TEST(Heatmaps, NormalizedCrossCorrelation) {
    const auto a = random_matrix(4, 4, 3);
    RealMatrix b(4, 4);
    for (std::size_t i = 0; i < 16; ++i) b.data[i] = 2 * a.data[i] + 1;
    EXPECT_NEAR(normalized_cross_correlation(a, b), 1.0, 1e-12);
    for (auto& v : b.data) v = -v;
    EXPECT_NEAR(normalized_cross_correlation(a, b), -1.0, 1e-12);
}

TEST(Pgm, HeaderAndScaling) {
    const auto dir = std::filesystem::temp_directory_path() / "specdet_pgm_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "m.pgm").string();
    write_pgm(path, RealMatrix(2, 3, std::vector<double>{0, 1, 2, 3, 4, 5}));
    std::ifstream in(path, std::ios::binary);
    std::string magic;
    std::size_t w, h, maxv;
    in >> magic >> w >> h >> maxv;
    in.get();
    EXPECT_EQ(magic, "P5");
    EXPECT_EQ(w, 3u);
    EXPECT_EQ(h, 2u);
    EXPECT_EQ(maxv, 255u);
    std::vector<unsigned char> px(6);
    in.read(reinterpret_cast<char*>(px.data()), 6);
    EXPECT_EQ(px.front(), 0);
    EXPECT_EQ(px.back(), 255);
    EXPECT_TRUE(std::filesystem::exists(path + ".txt"));
    std::filesystem::remove_all(dir);
}
