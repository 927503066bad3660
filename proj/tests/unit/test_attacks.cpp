#include <atomic>
#include <filesystem>

#include <gtest/gtest.h>

#include "specdet/attacks.hpp"

using namespace specdet;

namespace {

Image random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng r(seed);
    std::vector<double> px(c * h * w);
    for (auto& v : px) v = r.uniform();
    return Image(c, h, w, std::move(px));
}

Network small_net(std::uint64_t seed) { return Network::initialized(Architecture::default_for(3, 8, 8, 3), seed); }

void expect_invariants(const AttackOutcome& o, double eps, const Network& net) {
    EXPECT_LE(o.linf(), eps + 1e-9);
    for (double v : o.adversarial.pixels()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    if (o.success) EXPECT_NE(net.predict(o.adversarial), o.label);
}

}  // namespace

TEST(Attacks, InvariantsOverRandomBudgets) {
    Rng r(1);
    for (int trial = 0; trial < 12; ++trial) {
        const auto net = small_net(trial);
        const auto img = random_image(3, 8, 8, 100 + trial);
        AttackBudget b;
        b.epsilon = r.uniform(0.001, 0.3);
        b.steps = 1 + static_cast<int>(r.index(15));
        b.step_size = b.epsilon * r.uniform(0.1, 1.0);
        b.seed = r.next();
        b.random_start = r.coin();
        b.early_exit = r.coin();
        const int label = net.predict(img);
        expect_invariants(fgsm(net, img, label, b), b.epsilon, net);
        expect_invariants(pgd(net, img, label, b), b.epsilon, net);
        expect_invariants(square_attack(net, img, label, b), b.epsilon, net);
    }
}

TEST(Attacks, ZeroGradientFgsmLeavesImage) {
    const Network zero(Architecture::default_for(3, 8, 8, 2));
    const auto img = random_image(3, 8, 8, 3);
    AttackBudget b;
    b.epsilon = std::numeric_limits<double>::min();
    const auto o = fgsm(zero, img, 0, b);
    EXPECT_EQ(o.adversarial, img);
    b.epsilon = 0.1;
    EXPECT_EQ(fgsm(zero, img, 0, b).adversarial, img);
}

TEST(Attacks, PgdOneStepEqualsFgsm) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto net = small_net(s);
        const auto img = random_image(3, 8, 8, s + 10);
        AttackBudget b;
        b.epsilon = 0.05;
        b.steps = 1;
        b.step_size = b.epsilon;
        b.random_start = false;
        b.early_exit = false;
        const int label = static_cast<int>(s % 3);
        EXPECT_EQ(pgd(net, img, label, b).adversarial, fgsm(net, img, label, b).adversarial);
    }
}

TEST(Attacks, SameSeedSameOutcome) {
    const auto net = small_net(2);
    const auto img = random_image(3, 8, 8, 4);
    AttackBudget b;
    b.seed = 99;
    EXPECT_EQ(pgd(net, img, 1, b), pgd(net, img, 1, b));
    EXPECT_EQ(square_attack(net, img, 1, b), square_attack(net, img, 1, b));
}

TEST(Attacks, SquareSingleRejectedProposal) {
    // A constant-logit model never increases the loss, so the only proposal
    // is rejected.
    const ForwardOnly flat{[](const Tensor&) { return Tensor({2}, std::vector<double>{1.0, 0.0}); }};
    const auto img = random_image(3, 8, 8, 5);
    AttackBudget b;
    b.steps = 1;
    const auto o = square_attack(flat, img, 0, b);
    EXPECT_EQ(o.adversarial, img);
    EXPECT_FALSE(o.success);
    EXPECT_EQ(o.queries_or_steps, 2);
    EXPECT_TRUE(square_attack(flat, img, 1, b).success);
}

TEST(Attacks, SquareUsesLogitsOnly) {
    const auto net = small_net(6);
    const auto img = random_image(3, 8, 8, 6);
    std::atomic<int> calls{0};
    const ForwardOnly handle{[&](const Tensor& x) {
        ++calls;
        return net.logits(x);
    }};
    AttackBudget b;
    b.epsilon = 0.1;
    b.steps = 50;
    b.seed = 3;
    const int label = net.predict(img);
    const auto via_handle = square_attack(handle, img, label, b);
    EXPECT_EQ(via_handle, square_attack(net, img, label, b));
    EXPECT_EQ(calls.load(), via_handle.queries_or_steps);
}

TEST(Cascade, SingleAttackEqualsDirectRun) {
    const auto net = small_net(7);
    std::vector<Image> imgs;
    std::vector<int> labels;
    for (std::uint64_t i = 0; i < 6; ++i) {
        imgs.push_back(random_image(3, 8, 8, 200 + i));
        labels.push_back(net.predict(imgs.back()));
    }
    AttackBudget b;
    b.epsilon = 0.05;
    b.seed = 12;
    const auto attack = make_attack(AttackKind::pgd);
    const auto outs = standard_cascade(net, imgs, labels, {attack}, b);
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        auto direct = attack.run(net, imgs[i], labels[i], sample_budget(b, i));
        direct.sample_id = i;
        EXPECT_EQ(outs[i], direct);
    }
}

TEST(Cascade, SecondAttackSkippedWhenFirstSucceeds) {
    const auto net = small_net(8);
    std::vector<Image> imgs = {random_image(3, 8, 8, 1), random_image(3, 8, 8, 2)};
    std::vector<int> labels = {net.predict(imgs[0]), net.predict(imgs[1])};
    int b_calls = 0;
    const NamedAttack always{"always", [](const Network&, const Image& x, int y, const AttackBudget&) {
                                 AttackOutcome o;
                                 o.label = y;
                                 o.original = x;
                                 o.adversarial = x;
                                 o.success = true;
                                 return o;
                             }};
    const NamedAttack counted{"counted", [&](const Network& n, const Image& x, int y, const AttackBudget& bb) {
                                  ++b_calls;
                                  return fgsm(n, x, y, bb);
                              }};
    const auto outs = standard_cascade(net, imgs, labels, {always, counted}, AttackBudget{});
    EXPECT_EQ(b_calls, 0);
    for (const auto& o : outs) EXPECT_EQ(o.attack_name, "always");
}

TEST(Cascade, CleanErrorsMarked) {
    const auto net = small_net(9);
    const auto img = random_image(3, 8, 8, 3);
    const int wrong = (net.predict(img) + 1) % 3;
    const auto outs = standard_cascade(net, {img}, {wrong}, {make_attack(AttackKind::fgsm)}, AttackBudget{});
    EXPECT_TRUE(outs[0].success);
    EXPECT_EQ(outs[0].attack_name, "clean-error");
    EXPECT_EQ(outs[0].adversarial, img);
}

TEST(Cascade, DominatesEachAttackAndEqualsUnion) {
    const auto net = small_net(10);
    std::vector<Image> imgs;
    std::vector<int> labels;
    for (std::uint64_t i = 0; i < 20; ++i) {
        imgs.push_back(random_image(3, 8, 8, 300 + i));
        labels.push_back(net.predict(imgs.back()));
    }
    AttackBudget b;
    b.epsilon = 0.01;
    b.seed = 5;
    AttackSettings s;
    s.square_queries = 40;
    s.pgd_steps = 5;
    const std::vector<NamedAttack> attacks = {make_attack(AttackKind::fgsm, s), make_attack(AttackKind::square, s),
                                              make_attack(AttackKind::pgd, s)};
    const auto cascade = standard_cascade(net, imgs, labels, attacks, b);
    std::vector<std::vector<AttackOutcome>> single;
    for (const auto& a : attacks) single.push_back(standard_cascade(net, imgs, labels, {a}, b));
    auto successes = [](const std::vector<AttackOutcome>& v) {
        return std::count_if(v.begin(), v.end(), [](const auto& o) { return o.success; });
    };
    for (const auto& v : single) EXPECT_GE(successes(cascade), successes(v));
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        bool any = false;
        for (const auto& v : single) any |= v[i].success;
        EXPECT_EQ(cascade[i].success, any) << i;
    }
}

TEST(Cascade, Errors) {
    const auto net = small_net(1);
    EXPECT_THROW(standard_cascade(net, {}, {}, {}, AttackBudget{}), ConfigError);
    AttackBudget bad;
    bad.epsilon = 0.0;
    EXPECT_THROW(standard_cascade(net, {}, {}, {make_attack(AttackKind::pgd)}, bad), ConfigError);
    EXPECT_THROW(parse_attack_kind("apgd"), ConfigError);
}

TEST(Outcomes, FileRoundTrip) {
    const auto net = small_net(11);
    std::vector<Image> imgs = {random_image(3, 8, 8, 1), random_image(3, 8, 8, 2)};
    std::vector<int> labels = {0, 1};
    const auto outs = standard_cascade(net, imgs, labels, {make_attack(AttackKind::pgd)}, AttackBudget{});
    const auto dir = std::filesystem::temp_directory_path() / "specdet_outcomes_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "o.ssadv").string();
    save_outcomes(path, {0.03, 40, 7}, outs);
    OutcomeHeader h;
    EXPECT_EQ(load_outcomes(path, &h), outs);
    EXPECT_EQ(h.steps, 40);
    EXPECT_EQ(h.seed, 7u);
    save_outcome_index((dir / "o.csv").string(), outs);
    std::ifstream csv(dir / "o.csv");
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "sample_id,attack_name,success,linf");
    std::filesystem::remove_all(dir);
}
