#include <atomic>
#include <filesystem>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "specdet/common.hpp"
#include "specdet/tensor.hpp"

using namespace specdet;

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next();
        EXPECT_EQ(x, b.next());
        differs |= x != c.next();
    }
    EXPECT_TRUE(differs);
}

TEST(Rng, UniformAndIndexRanges) {
    Rng r(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        EXPECT_LT(r.index(7), 7u);
    }
    EXPECT_THROW(r.index(0), std::invalid_argument);
}

TEST(Rng, NormalMoments) {
    Rng r(5);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        s += v;
        s2 += v * v;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    Rng r(9);
    r.shuffle(v);
    EXPECT_EQ(std::set<int>(v.begin(), v.end()).size(), 50u);
}

TEST(DeriveSeed, DistinctPerStageAndIndex) {
    EXPECT_EQ(derive_seed(7, "attack"), derive_seed(7, "attack"));
    EXPECT_NE(derive_seed(7, "attack"), derive_seed(7, "detector"));
    EXPECT_NE(derive_seed(7, "attack"), derive_seed(8, "attack"));
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(3, i));
    EXPECT_EQ(seen.size(), 1000u);
}

TEST(Io, WriterReaderRoundTrip) {
    io::Writer w;
    w.magic("TEST1");
    w.u8(7);
    w.u32(123456);
    w.u64(1ULL << 40);
    w.f64(-2.5);
    w.str("hello");
    w.f64s({1.0, 2.0, 3.5});
    io::Reader r(w.buffer(), "buf");
    r.expect_magic("TEST1");
    EXPECT_EQ(r.u8(), 7);
    EXPECT_EQ(r.u32(), 123456u);
    EXPECT_EQ(r.u64(), 1ULL << 40);
    EXPECT_EQ(r.f64(), -2.5);
    EXPECT_EQ(r.str(), "hello");
    EXPECT_EQ(r.f64s(3), (std::vector<double>{1.0, 2.0, 3.5}));
    EXPECT_NO_THROW(r.expect_end());
}

TEST(Io, TruncatedAndWrongMagicFail) {
    io::Writer w;
    w.magic("TEST1");
    w.u64(5);
    auto bytes = w.buffer();
    {
        io::Reader r(bytes, "buf");
        EXPECT_THROW(r.expect_magic("OTHER"), DataError);
    }
    bytes.pop_back();
    io::Reader r(bytes, "buf");
    r.expect_magic("TEST1");
    EXPECT_THROW(r.u64(), DataError);
}

TEST(ParallelFor, EachIndexOnceAnyThreadCount) {
    for (unsigned threads : {1u, 2u, 5u}) {
        std::vector<std::atomic<int>> hits(37);
        parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i]++; });
        for (auto& h : hits) EXPECT_EQ(h.load(), 1);
    }
}

TEST(ParallelFor, RethrowsWorkerError) {
    EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                     if (i == 4) throw DataError("boom");
                 }),
                 DataError);
}

TEST(Image, RejectsOutOfRangePixels) {
    EXPECT_THROW(Image(1, 2, 2, std::vector<double>{0, 0.5, 1.0, 1.5}), DataError);
    EXPECT_THROW(Image(1, 2, 2, std::vector<double>{0, 0.5, 1.0}), DataError);
    EXPECT_NO_THROW(Image(1, 2, 2, std::vector<double>{0, 0.5, 1.0, 0.25}));
}

TEST(Image, Quantize8bitHitsLevels) {
    const Image img(1, 1, 3, std::vector<double>{0.1, 0.5, 0.999});
    const auto q = quantize_8bit(img);
    for (double v : q.pixels()) EXPECT_NEAR(v * 255.0, std::round(v * 255.0), 1e-9);
    EXPECT_LE(linf_distance(img, q), 0.5 / 255.0 + 1e-12);
}
