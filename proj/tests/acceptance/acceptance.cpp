// One gtest per acceptance criterion; prints "PASS <name>" or "FAIL <name>"
// after each so the result lines can be grepped from the ctest log.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <gtest/gtest.h>

#include "specdet/harness/experiment.hpp"
#include "../support/reference_triples.hpp"

using namespace specdet;
using namespace specdet::harness;
namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RealMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    RealMatrix m(r, c);
    for (auto& v : m.data) v = rng.uniform(-1.0, 1.0);
    return m;
}

double max_rel_diff(const ComplexMatrix& a, const ComplexMatrix& b) {
    double scale = 0, worst = 0;
    for (const auto& v : b.data) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst / std::max(scale, 1e-300);
}

Image random_image(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
    std::vector<double> px(c * h * w);
    for (auto& v : px) v = rng.uniform();
    return Image(c, h, w, std::move(px));
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("specdet_acceptance_" + name);
    fs::remove_all(p);
    return p;
}

class ResultLines : public testing::EmptyTestEventListener {
    void OnTestEnd(const testing::TestInfo& info) override {
        std::cout << (info.result()->Passed() ? "PASS " : "FAIL ") << info.name() << std::endl;
    }
};

}  // namespace

TEST(Acceptance, FftOracle) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<std::size_t> sizes = {2, 3, 4, 5, 8, 12, 16, 32};
    Rng rng(1);
    for (auto r : sizes)
        for (auto c : sizes) {
            const auto x = random_matrix(r, c, rng);
            EXPECT_LT(max_rel_diff(fft2(x), dft2_brute(x)), 1e-9) << r << "x" << c;
        }
    for (int i = 0; i < 100; ++i) {
        const auto r = sizes[rng.index(sizes.size())], c = sizes[rng.index(sizes.size())];
        const auto x = random_matrix(r, c, rng), y = random_matrix(r, c, rng);
        const auto Fx = fft2(x), Fy = fft2(y);
        double sx = 0, sf = 0;
        for (double v : x.data) sx += v * v;
        for (const auto& v : Fx.data) sf += std::norm(v);
        EXPECT_NEAR(sx, sf / static_cast<double>(r * c), 1e-9 * sx);
        const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
        RealMatrix z(r, c);
        for (std::size_t k = 0; k < z.data.size(); ++k) z.data[k] = a * x.data[k] + b * y.data[k];
        ComplexMatrix expected(r, c);
        for (std::size_t k = 0; k < z.data.size(); ++k) expected.data[k] = a * Fx.data[k] + b * Fy.data[k];
        EXPECT_LT(max_rel_diff(fft2(z), expected), 1e-9);
    }
    EXPECT_LT(seconds_since(t0), 10.0);
}

TEST(Acceptance, GradientOracle) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(2);
    const auto net = Network::initialized(Architecture::default_for(3, 16, 16, 3), 5);
    const auto img = random_image(3, 16, 16, rng);
    const int label = 2;
    const auto g = net.input_gradient(img, label);
    const double h = 1e-5;
    double worst = 0;
    for (int k = 0; k < 100; ++k) {
        const std::size_t i = rng.index(img.size());
        Tensor plus = img.tensor(), minus = img.tensor();
        plus[i] += h;
        minus[i] -= h;
        const double fd = (cross_entropy(net.logits(plus), label) - cross_entropy(net.logits(minus), label)) / (2 * h);
        worst = std::max(worst, std::abs(fd - g[i]) / std::max(1e-6, std::abs(fd) + std::abs(g[i])));
    }
    EXPECT_LT(worst, 1e-3);

    FeatureMatrix Z(40, std::vector<double>(25));
    std::vector<int> y(40);
    for (std::size_t i = 0; i < Z.size(); ++i) {
        for (auto& v : Z[i]) v = rng.normal();
        y[i] = static_cast<int>(rng.index(2));
    }
    std::vector<double> w(25);
    for (auto& v : w) v = rng.uniform(-1, 1);
    const double b = 0.3, lambda = 0.01, hw = 1e-6;
    double gb = 0;
    const auto gw = logreg_gradient(Z, y, w, b, lambda, gb);
    double worst_lr = 0;
    for (int k = 0; k < 100; ++k) {
        const std::size_t j = rng.index(w.size() + 1);
        double fd, an;
        if (j == w.size()) {
            fd = (logreg_loss(Z, y, w, b + hw, lambda) - logreg_loss(Z, y, w, b - hw, lambda)) / (2 * hw);
            an = gb;
        } else {
            auto wp = w, wm = w;
            wp[j] += hw;
            wm[j] -= hw;
            fd = (logreg_loss(Z, y, wp, b, lambda) - logreg_loss(Z, y, wm, b, lambda)) / (2 * hw);
            an = gw[j];
        }
        worst_lr = std::max(worst_lr, std::abs(fd - an) / std::max(1e-8, std::abs(an)));
    }
    EXPECT_LT(worst_lr, 1e-6);
    EXPECT_LT(seconds_since(t0), 30.0);
}

TEST(Acceptance, AttackInvariants) {
    Rng rng(3);
    std::vector<Network> nets;
    for (std::uint64_t s = 0; s < 5; ++s) nets.push_back(Network::initialized(Architecture::default_for(3, 8, 8, 3), s));
    std::size_t checked = 0, violations = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto& net = nets[rng.index(nets.size())];
        const auto img = random_image(3, 8, 8, rng);
        AttackBudget b;
        b.epsilon = rng.uniform(1e-4, 0.5);
        b.steps = 1 + static_cast<int>(rng.index(10));
        b.step_size = b.epsilon * rng.uniform(0.05, 1.5);
        b.seed = rng.next();
        b.random_start = rng.coin();
        b.early_exit = rng.coin();
        const int label = static_cast<int>(rng.index(3));
        AttackOutcome o;
        switch (i % 3) {
            case 0: o = fgsm(net, img, label, b); break;
            case 1: o = pgd(net, img, label, b); break;
            default: o = square_attack(net, img, label, b); break;
        }
        ++checked;
        bool ok = o.linf() <= b.epsilon + 1e-9;
        for (double v : o.adversarial.pixels()) ok &= v >= 0.0 && v <= 1.0;
        if (o.success) ok &= net.predict(o.adversarial) != label;
        violations += ok ? 0 : 1;
    }
    EXPECT_EQ(checked, 1000u);
    EXPECT_EQ(violations, 0u);

    for (int i = 0; i < 50; ++i) {
        const auto& net = nets[rng.index(nets.size())];
        const auto img = random_image(3, 8, 8, rng);
        AttackBudget b;
        b.epsilon = rng.uniform(1e-3, 0.3);
        b.steps = 1;
        b.step_size = b.epsilon;
        b.random_start = false;
        b.early_exit = false;
        const int label = static_cast<int>(rng.index(3));
        EXPECT_EQ(pgd(net, img, label, b).adversarial, fgsm(net, img, label, b).adversarial);
    }
}

TEST(Acceptance, TableArithmeticOracle) {
    for (const auto& t : reference_triples()) {
        const double got = 100.0 * asrd(t.fnr / 100.0, t.asr / 100.0);
        EXPECT_LE(std::abs(got - t.asrd), 0.1 + 1e-9)
            << t.where << ": " << t.asr << " x " << t.fnr << "% = " << got << ", printed " << t.asrd;
    }
}

TEST(Acceptance, DeskScalePipeline) {
    ExperimentConfig cfg;
    cfg.out = scratch("desk").string();
    cfg.modes = {DetectionMode::black};
    cfg.detectors = {DetectorKind::forest};
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = cmd_pipeline(cfg);
    const double elapsed = seconds_since(t0);
    ASSERT_EQ(r.rows.size(), 1u);
    const auto& rep = find_report(r.rows[0], DetectionMode::black, DetectorKind::forest);
    std::cout << "held-out accuracy " << r.target.test_accuracy << ", ASR " << r.rows[0].stats.asr << " over "
              << r.rows[0].stats.attacked << ", F1 " << rep.f1 << ", FNR " << rep.fnr << ", " << elapsed << " s\n";
    EXPECT_EQ(cfg.synth.classes, 2);
    EXPECT_EQ(cfg.synth.per_class, 500);
    EXPECT_EQ(cfg.synth.size, 32);
    EXPECT_GE(r.target.test_accuracy, 0.90);
    EXPECT_GE(r.rows[0].stats.asr, 0.90);
    EXPECT_GE(rep.f1, 0.90);
    EXPECT_LE(rep.fnr, 0.10);
    EXPECT_LT(elapsed, 300.0);
    fs::remove_all(cfg.out);
}

TEST(Acceptance, EpsilonMonotonicity) {
    const std::vector<std::string> eps = {"8/255", "2/255", "0.5/255"};
    std::vector<std::vector<double>> f1(eps.size());
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ExperimentConfig cfg;
        cfg.seed = seed;
        cfg.out = scratch("mono_" + std::to_string(seed)).string();
        cfg.epsilons = eps;
        cfg.modes = {DetectionMode::black};
        cfg.detectors = {DetectorKind::forest};
        const auto r = cmd_pipeline(cfg);
        std::cout << "seed " << seed << ":";
        for (std::size_t i = 0; i < eps.size(); ++i) {
            const double v = find_report(r.rows[i], DetectionMode::black, DetectorKind::forest).f1;
            f1[i].push_back(v);
            std::cout << ' ' << eps[i] << " ASR " << r.rows[i].stats.asr << " F1 " << v;
        }
        std::cout << '\n';
        fs::remove_all(cfg.out);
    }
    std::vector<double> median;
    for (auto& v : f1) {
        std::sort(v.begin(), v.end());
        median.push_back(v[v.size() / 2]);
    }
    std::cout << "median F1:";
    for (std::size_t i = 0; i < eps.size(); ++i) std::cout << ' ' << eps[i] << '=' << median[i];
    std::cout << '\n';
    for (std::size_t i = 1; i < median.size(); ++i) EXPECT_LE(median[i], median[i - 1]) << eps[i];
    EXPECT_GE(median.front() - median.back(), 0.15);
}

TEST(Acceptance, Determinism) {
    const auto root = scratch("determinism");
    for (const char* run : {"a", "b"}) {
        const auto cmd = std::string(SPECDET_CLI) + " --out " + (root / run).string() + " pipeline > " +
                         (root / (std::string(run) + ".log")).string() + " 2>&1";
        fs::create_directories(root);
        ASSERT_EQ(std::system(cmd.c_str()), 0) << cmd;
    }
    std::size_t compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
        if (!entry.is_regular_file() || entry.path().filename() == "manifest.json") continue;
        const auto rel = fs::relative(entry.path(), root / "a");
        // config.txt records the output directory itself.
        if (rel == "config.txt") continue;
        ASSERT_TRUE(fs::exists(root / "b" / rel)) << rel;
        EXPECT_EQ(slurp(entry.path()), slurp(root / "b" / rel)) << rel;
        ++compared;
    }
    EXPECT_GE(compared, 10u);
    fs::remove_all(root);
}

TEST(Acceptance, SerializationRoundTrip) {
    const auto dir = scratch("serialization");
    fs::create_directories(dir);
    Rng rng(4);

    auto net = Network::initialized(Architecture::default_for(3, 16, 16, 3), 8);
    net.save((dir / "n.ssnet").string());
    const auto loaded = Network::load((dir / "n.ssnet").string());
    EXPECT_TRUE(loaded == net);
    loaded.save((dir / "n2.ssnet").string());
    EXPECT_EQ(slurp(dir / "n.ssnet"), slurp(dir / "n2.ssnet"));

    std::vector<FeatureVector> set;
    for (int i = 0; i < 60; ++i) {
        FeatureVector f;
        for (int j = 0; j < 6; ++j) f.values.push_back(rng.normal() + (i % 2) * 0.5);
        f.label = static_cast<FeatureLabel>(i % 2);
        set.push_back(f);
    }
    for (auto kind : {DetectorKind::logreg, DetectorKind::forest}) {
        const auto m = train_detector(kind, set, {}, 3);
        const auto path = dir / ("d_" + to_string(kind) + ".ssdet");
        save_detector(path.string(), m);
        const auto back = load_detector(path.string());
        EXPECT_EQ(back, m);
        EXPECT_EQ(serialize(back), serialize(m));
    }

    std::vector<unsigned char> bytes(cifar_record * 3);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<unsigned char>(i % cifar_record == 0 ? rng.index(10) : rng.index(256));
    {
        std::ofstream out(dir / "c.bin", std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    save_cifar10_binary((dir / "c2.bin").string(), load_cifar10_binary((dir / "c.bin").string()));
    EXPECT_EQ(slurp(dir / "c.bin"), slurp(dir / "c2.bin"));
    fs::remove_all(dir);
}

int main(int argc, char** argv) {
    testing::InitGoogleTest(&argc, argv);
    testing::UnitTest::GetInstance()->listeners().Append(new ResultLines);
    return RUN_ALL_TESTS();
}
