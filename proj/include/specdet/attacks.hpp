#pragma once

// L-infinity attacks against a Network: FGSM, PGD with cross-entropy loss,
// a gradient-free square-patch random search, and the "standard" cascade in
// which only the samples an attack failed on are handed to the next one.

#include <cassert>
#include <cmath>
#include <concepts>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "specdet/common.hpp"
#include "specdet/smallnet.hpp"
#include "specdet/tensor.hpp"

namespace specdet {

struct AttackBudget {
    double epsilon = 8.0 / 255.0;
    int steps = 40;
    double step_size = 2.0 / 255.0;
    std::uint64_t seed = 0;
    bool random_start = true;
    bool early_exit = true;

    void validate() const {
        if (!(epsilon > 0.0 && epsilon <= 1.0))
            throw ConfigError("attack budget: epsilon must be in (0, 1], got " + std::to_string(epsilon));
        if (steps < 1) throw ConfigError("attack budget: steps must be >= 1");
        if (!(step_size > 0.0)) throw ConfigError("attack budget: step size must be > 0");
    }
};

struct AttackOutcome {
    std::size_t sample_id = 0;
    int label = 0;
    Image original;
    Image adversarial;
    bool success = false;
    std::string attack_name;
    int queries_or_steps = 0;

    double linf() const { return linf_distance(original, adversarial); }

    friend bool operator==(const AttackOutcome&, const AttackOutcome&) = default;
};

/// Anything that maps an input tensor to logits. Square search only needs
/// this; gradient attacks need a full Network.
template <class M>
concept LogitsModel = requires(const M& m, const Tensor& x) {
    { m.logits(x) } -> std::convertible_to<Tensor>;
};

/// Forward-only handle around an arbitrary logits function.
struct ForwardOnly {
    std::function<Tensor(const Tensor&)> fn;
    Tensor logits(const Tensor& x) const { return fn(x); }
};

namespace detail {

inline double sign(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

// x + step * sign(g), projected onto the eps-ball around `orig` and [0, 1].
inline void signed_step(std::vector<double>& x, const std::vector<double>& orig, const Tensor& grad, double step,
                        double eps) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        double v = x[i] + step * sign(grad[i]);
        v = std::min(std::max(v, orig[i] - eps), orig[i] + eps);
        x[i] = std::min(std::max(v, 0.0), 1.0);
    }
}

inline Image as_image(const Image& like, std::vector<double> px) {
    return Image(like.channels(), like.height(), like.width(), std::move(px));
}

inline bool within_budget(const std::vector<double>& x, const std::vector<double>& orig, double eps) {
    for (std::size_t i = 0; i < x.size(); ++i)
        if (std::abs(x[i] - orig[i]) > eps + 1e-9 || x[i] < 0.0 || x[i] > 1.0) return false;
    return true;
}

}  // namespace detail

/// x' = clip(x + eps * sign(grad_x CE(x, label))).
inline AttackOutcome fgsm(const Network& net, const Image& image, int label, const AttackBudget& budget) {
    budget.validate();
    const auto lg = net.loss_gradient(image.tensor(), label);
    std::vector<double> x = image.pixels();
    detail::signed_step(x, image.pixels(), lg.input_grad, budget.epsilon, budget.epsilon);
    AttackOutcome out;
    out.label = label;
    out.original = image;
    out.adversarial = detail::as_image(image, std::move(x));
    out.success = net.predict(out.adversarial) != label;
    out.attack_name = "fgsm";
    out.queries_or_steps = 1;
    return out;
}

/// Projected sign-gradient ascent on cross-entropy with optional uniform
/// random start. With early_exit the loop stops at the first iterate that is
/// misclassified.
inline AttackOutcome pgd(const Network& net, const Image& image, int label, const AttackBudget& budget) {
    budget.validate();
    const auto& orig = image.pixels();
    const double eps = budget.epsilon;
    std::vector<double> x = orig;
    if (budget.random_start) {
        Rng rng(budget.seed);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double v = orig[i] + rng.uniform(-eps, eps);
            v = std::min(std::max(v, orig[i] - eps), orig[i] + eps);
            x[i] = std::min(std::max(v, 0.0), 1.0);
        }
    }
    int steps_taken = 0;
    bool fooled = false;
    for (int t = 0; t < budget.steps; ++t) {
        const auto lg = net.loss_gradient(Tensor(image.tensor().shape(), x), label);
        if (budget.early_exit && (t > 0 || budget.random_start) && argmax(lg.logits) != label) {
            fooled = true;
            break;
        }
        detail::signed_step(x, orig, lg.input_grad, budget.step_size, eps);
        assert(detail::within_budget(x, orig, eps));
        ++steps_taken;
    }
    AttackOutcome out;
    out.label = label;
    out.original = image;
    out.adversarial = detail::as_image(image, std::move(x));
    out.success = fooled || net.predict(out.adversarial) != label;
    out.attack_name = "pgd";
    out.queries_or_steps = steps_taken;
    return out;
}

/// Random search over square patches. Each proposal sets a random square to
/// orig +/- eps with an independent sign per channel and is kept when the
/// cross-entropy increases. The side starts at ceil(0.3 * min(H, W)) and
/// halves every steps/5 proposals. Uses logits only.
template <LogitsModel Model>
AttackOutcome square_attack(const Model& model, const Image& image, int label, const AttackBudget& budget) {
    budget.validate();
    const std::size_t C = image.channels(), H = image.height(), W = image.width();
    const auto& orig = image.pixels();
    const double eps = budget.epsilon;
    const Shape shape = image.tensor().shape();

    std::vector<double> best = orig;
    Tensor logits = model.logits(image.tensor());
    if (logits.size() <= static_cast<std::size_t>(label) || label < 0)
        throw DataError("square_attack: label " + std::to_string(label) + " out of range");
    double best_loss = cross_entropy(logits, label);
    int queries = 1;
    bool fooled = argmax(logits) != label;

    Rng rng(budget.seed);
    const std::size_t side0 = static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(std::min(H, W))));
    const int halve_every = std::max(1, budget.steps / 5);
    std::vector<double> cand;
    for (int t = 0; t < budget.steps && !fooled; ++t) {
        const int halvings = t / halve_every;
        std::size_t side = halvings >= 63 ? 0 : (side0 >> halvings);
        side = std::clamp<std::size_t>(side, 1, std::min(H, W));
        const std::size_t y0 = rng.index(H - side + 1), x0 = rng.index(W - side + 1);
        cand = best;
        for (std::size_t c = 0; c < C; ++c) {
            const double s = rng.coin() ? eps : -eps;
            for (std::size_t y = y0; y < y0 + side; ++y) {
                for (std::size_t xx = x0; xx < x0 + side; ++xx) {
                    const std::size_t i = (c * H + y) * W + xx;
                    cand[i] = std::min(std::max(orig[i] + s, 0.0), 1.0);
                }
            }
        }
        const Tensor cl = model.logits(Tensor(shape, cand));
        ++queries;
        const double loss = cross_entropy(cl, label);
        if (loss > best_loss) {
            best_loss = loss;
            best.swap(cand);
            fooled = argmax(cl) != label;
        }
    }

    AttackOutcome out;
    out.label = label;
    out.original = image;
    out.adversarial = detail::as_image(image, std::move(best));
    out.success = fooled;
    out.attack_name = "square";
    out.queries_or_steps = queries;
    return out;
}

// ---------------------------------------------------------------------------
// Attack registry and cascade

enum class AttackKind { fgsm, pgd, square };

inline std::string to_string(AttackKind k) {
    switch (k) {
        case AttackKind::fgsm: return "fgsm";
        case AttackKind::pgd: return "pgd";
        case AttackKind::square: return "square";
    }
    return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
    if (s == "fgsm") return AttackKind::fgsm;
    if (s == "pgd") return AttackKind::pgd;
    if (s == "square") return AttackKind::square;
    throw ConfigError("unknown attack '" + s + "' (expected fgsm, pgd or square)");
}

/// Per-attack settings layered on top of the shared epsilon and seed.
struct AttackSettings {
    int pgd_steps = 40;
    double pgd_step_fraction = 0.25;  // step size as a fraction of epsilon
    bool pgd_random_start = true;
    int square_queries = 400;
    bool early_exit = true;
};

using AttackFn = std::function<AttackOutcome(const Network&, const Image&, int, const AttackBudget&)>;

struct NamedAttack {
    std::string name;
    AttackFn run;
};

inline NamedAttack make_attack(AttackKind kind, const AttackSettings& s = {}) {
    switch (kind) {
        case AttackKind::fgsm:
            return {"fgsm", [](const Network& n, const Image& x, int y, const AttackBudget& b) { return fgsm(n, x, y, b); }};
        case AttackKind::pgd:
            return {"pgd", [s](const Network& n, const Image& x, int y, AttackBudget b) {
                        b.steps = s.pgd_steps;
                        b.step_size = s.pgd_step_fraction * b.epsilon;
                        b.random_start = s.pgd_random_start;
                        b.early_exit = s.early_exit;
                        return pgd(n, x, y, b);
                    }};
        case AttackKind::square:
            return {"square", [s](const Network& n, const Image& x, int y, AttackBudget b) {
                        b.steps = s.square_queries;
                        return square_attack(n, x, y, b);
                    }};
    }
    throw ConfigError("unknown attack kind");
}

/// Budget for sample `i`: same settings, seed derived from (seed, i).
inline AttackBudget sample_budget(const AttackBudget& b, std::size_t i) {
    AttackBudget s = b;
    s.seed = derive_seed(b.seed, static_cast<std::uint64_t>(i));
    return s;
}

/// Standard-mode cascade. Samples the clean network already misclassifies
/// are returned as success with zero perturbation and attack_name
/// "clean-error". Every other sample carries the outcome of the first
/// attack that succeeds, or the last attack's failed outcome.
inline std::vector<AttackOutcome> standard_cascade(const Network& net, const std::vector<Image>& images,
                                                   const std::vector<int>& labels,
                                                   const std::vector<NamedAttack>& attacks, const AttackBudget& budget,
                                                   unsigned threads = 1) {
    if (attacks.empty()) throw ConfigError("standard_cascade: the attack list is empty");
    if (images.size() != labels.size()) throw DataError("standard_cascade: images and labels differ in length");
    budget.validate();
    std::vector<AttackOutcome> out(images.size());
    parallel_for(images.size(), threads, [&](std::size_t i) {
        if (net.predict(images[i]) != labels[i]) {
            AttackOutcome o;
            o.label = labels[i];
            o.original = images[i];
            o.adversarial = images[i];
            o.success = true;
            o.attack_name = "clean-error";
            o.sample_id = i;
            out[i] = std::move(o);
            return;
        }
        const AttackBudget b = sample_budget(budget, i);
        for (const auto& a : attacks) {
            out[i] = a.run(net, images[i], labels[i], b);
            out[i].attack_name = a.name;
            out[i].sample_id = i;
            if (out[i].success) break;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Outcome dumps: binary "SSADV1" file plus a CSV index.

struct OutcomeHeader {
    double epsilon = 0.0;
    int steps = 0;
    std::uint64_t seed = 0;
};

inline void save_outcomes(const std::string& path, const OutcomeHeader& h, const std::vector<AttackOutcome>& outs) {
    io::Writer w;
    w.magic("SSADV1");
    w.f64(h.epsilon);
    w.u32(static_cast<std::uint32_t>(h.steps));
    w.u64(h.seed);
    w.u64(outs.size());
    for (const auto& o : outs) {
        w.u64(o.sample_id);
        w.u32(static_cast<std::uint32_t>(o.label));
        w.u8(o.success ? 1 : 0);
        w.str(o.attack_name);
        w.u32(static_cast<std::uint32_t>(o.queries_or_steps));
        w.u32(static_cast<std::uint32_t>(o.original.channels()));
        w.u32(static_cast<std::uint32_t>(o.original.height()));
        w.u32(static_cast<std::uint32_t>(o.original.width()));
        w.f64s(o.original.pixels());
        w.f64s(o.adversarial.pixels());
    }
    w.save(path);
}

inline std::vector<AttackOutcome> load_outcomes(const std::string& path, OutcomeHeader* header = nullptr) {
    auto r = io::Reader::from_file(path);
    r.expect_magic("SSADV1");
    OutcomeHeader h;
    h.epsilon = r.f64();
    h.steps = static_cast<int>(r.u32());
    h.seed = r.u64();
    const auto n = r.u64();
    std::vector<AttackOutcome> outs;
    for (std::uint64_t i = 0; i < n; ++i) {
        AttackOutcome o;
        o.sample_id = r.u64();
        o.label = static_cast<int>(r.u32());
        o.success = r.u8() != 0;
        o.attack_name = r.str();
        o.queries_or_steps = static_cast<int>(r.u32());
        const std::size_t c = r.u32(), hh = r.u32(), ww = r.u32();
        o.original = Image(c, hh, ww, r.f64s(c * hh * ww));
        o.adversarial = Image(c, hh, ww, r.f64s(c * hh * ww));
        outs.push_back(std::move(o));
    }
    r.expect_end();
    if (header) *header = h;
    return outs;
}

inline void save_outcome_index(const std::string& path, const std::vector<AttackOutcome>& outs) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "sample_id,attack_name,success,linf\n";
    for (const auto& o : outs) {
        std::ostringstream linf;
        linf << std::setprecision(17) << o.linf();
        out << o.sample_id << ',' << o.attack_name << ',' << (o.success ? 1 : 0) << ',' << linf.str() << '\n';
    }
}

}  // namespace specdet
