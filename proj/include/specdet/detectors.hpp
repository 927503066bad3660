#pragma once

// Binary detectors over spectral feature vectors: L2-regularised logistic
// regression on standardised features and a CART random forest (Gini,
// bootstrap bagging, random feature subsets). Both serialise to "SSDET1".

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "specdet/common.hpp"
#include "specdet/spectral.hpp"

namespace specdet {

using FeatureMatrix = std::vector<std::vector<double>>;

namespace detail {

inline std::size_t check_training_set(const FeatureMatrix& X, const std::vector<int>& y, const char* who) {
    if (X.empty()) throw DataError(std::string(who) + ": empty training set");
    if (X.size() != y.size()) throw DataError(std::string(who) + ": feature and label counts differ");
    const std::size_t d = X[0].size();
    if (d == 0) throw DataError(std::string(who) + ": zero-dimensional features");
    bool has0 = false, has1 = false;
    for (std::size_t i = 0; i < X.size(); ++i) {
        if (X[i].size() != d)
            throw DataError(std::string(who) + ": dimension mismatch at row " + std::to_string(i) + " (" +
                            std::to_string(X[i].size()) + " vs " + std::to_string(d) + ")");
        if (y[i] == 0)
            has0 = true;
        else if (y[i] == 1)
            has1 = true;
        else
            throw DataError(std::string(who) + ": labels must be 0 or 1");
    }
    if (!has0 || !has1) throw DataError(std::string(who) + ": training data contains a single class");
    return d;
}

inline void split_features(const std::vector<FeatureVector>& fv, FeatureMatrix& X, std::vector<int>& y) {
    X.clear();
    y.clear();
    for (const auto& f : fv) {
        X.push_back(f.values);
        y.push_back(f.label_value());
    }
}

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z))
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace detail

// ---------------------------------------------------------------------------

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> stddev;  // floored at 1e-12

    static constexpr double floor = 1e-12;

    static Standardizer fit(const FeatureMatrix& X) {
        if (X.empty()) throw DataError("standardizer: empty input");
        const std::size_t d = X[0].size();
        const double n = static_cast<double>(X.size());
        Standardizer s;
        s.mean.assign(d, 0.0);
        s.stddev.assign(d, 0.0);
        for (const auto& row : X) {
            if (row.size() != d) throw DataError("standardizer: dimension mismatch");
            for (std::size_t j = 0; j < d; ++j) s.mean[j] += row[j];
        }
        for (auto& m : s.mean) m /= n;
        for (const auto& row : X)
            for (std::size_t j = 0; j < d; ++j) s.stddev[j] += (row[j] - s.mean[j]) * (row[j] - s.mean[j]);
        for (auto& v : s.stddev) v = std::max(std::sqrt(v / n), floor);
        return s;
    }

    std::size_t dimension() const { return mean.size(); }

    std::vector<double> transform(const std::vector<double>& x) const {
        if (x.size() != mean.size())
            throw DataError("standardizer: expected dimension " + std::to_string(mean.size()) + ", got " +
                            std::to_string(x.size()));
        std::vector<double> z(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - mean[j]) / stddev[j];
        return z;
    }

    FeatureMatrix transform(const FeatureMatrix& X) const {
        FeatureMatrix Z;
        Z.reserve(X.size());
        for (const auto& row : X) Z.push_back(transform(row));
        return Z;
    }

    friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

// ---------------------------------------------------------------------------
// Logistic regression

struct LogRegHyper {
    double lambda = 1e-4;
    int iterations = 500;
    double learning_rate = 0.1;

    friend bool operator==(const LogRegHyper&, const LogRegHyper&) = default;
};

struct LogRegModel {
    std::vector<double> weights;
    double bias = 0.0;
    LogRegHyper hyper;

    friend bool operator==(const LogRegModel&, const LogRegModel&) = default;
};

/// Mean cross-entropy plus (lambda / 2) * |w|^2 on already standardised rows.
inline double logreg_loss(const FeatureMatrix& Z, const std::vector<int>& y, const std::vector<double>& w, double b,
                          double lambda) {
    double s = 0.0;
    for (std::size_t i = 0; i < Z.size(); ++i) {
        const double z = std::inner_product(w.begin(), w.end(), Z[i].begin(), b);
        s += detail::softplus(z) - y[i] * z;
    }
    double reg = 0.0;
    for (double v : w) reg += v * v;
    return s / static_cast<double>(Z.size()) + 0.5 * lambda * reg;
}

/// Gradient of logreg_loss; returns d/dw and writes d/db into `grad_b`.
inline std::vector<double> logreg_gradient(const FeatureMatrix& Z, const std::vector<int>& y,
                                           const std::vector<double>& w, double b, double lambda, double& grad_b) {
    std::vector<double> g(w.size(), 0.0);
    grad_b = 0.0;
    for (std::size_t i = 0; i < Z.size(); ++i) {
        const double z = std::inner_product(w.begin(), w.end(), Z[i].begin(), b);
        const double r = detail::sigmoid(z) - y[i];
        for (std::size_t j = 0; j < w.size(); ++j) g[j] += r * Z[i][j];
        grad_b += r;
    }
    const double n = static_cast<double>(Z.size());
    for (std::size_t j = 0; j < w.size(); ++j) g[j] = g[j] / n + lambda * w[j];
    grad_b /= n;
    return g;
}

struct LogRegTrained {
    Standardizer standardizer;
    LogRegModel model;
    std::vector<double> loss_history;  // objective before each iteration, then the final value
};

/// Full-batch gradient descent from zero. A step that would raise the
/// objective is halved until it does not (at most 30 times), so the
/// training loss never increases.
inline LogRegTrained logreg_train(const FeatureMatrix& X, const std::vector<int>& y, const LogRegHyper& hyper = {}) {
    const std::size_t d = detail::check_training_set(X, y, "logreg_train");
    if (hyper.iterations < 0 || !(hyper.learning_rate > 0.0) || hyper.lambda < 0.0)
        throw ConfigError("logreg_train: iterations >= 0, learning rate > 0 and lambda >= 0 required");
    LogRegTrained out;
    out.standardizer = Standardizer::fit(X);
    const auto Z = out.standardizer.transform(X);
    std::vector<double> w(d, 0.0);
    double b = 0.0;
    double loss = logreg_loss(Z, y, w, b, hyper.lambda);
    std::vector<double> wn(d);
    for (int it = 0; it < hyper.iterations; ++it) {
        out.loss_history.push_back(loss);
        double gb = 0.0;
        const auto g = logreg_gradient(Z, y, w, b, hyper.lambda, gb);
        double step = hyper.learning_rate;
        double next = loss;
        double bn = b;
        for (int halvings = 0; halvings <= 30; ++halvings, step *= 0.5) {
            for (std::size_t j = 0; j < d; ++j) wn[j] = w[j] - step * g[j];
            bn = b - step * gb;
            next = logreg_loss(Z, y, wn, bn, hyper.lambda);
            if (next <= loss) break;
        }
        if (!std::isfinite(next)) throw NumericError("logreg_train: non-finite loss at iteration " + std::to_string(it));
        if (next > loss) break;  // no descent step exists at float resolution
        w.swap(wn);
        b = bn;
        loss = next;
    }
    out.loss_history.push_back(loss);
    out.model.weights = std::move(w);
    out.model.bias = b;
    out.model.hyper = hyper;
    return out;
}

inline LogRegTrained logreg_train(const std::vector<FeatureVector>& fv, const LogRegHyper& hyper = {}) {
    FeatureMatrix X;
    std::vector<int> y;
    detail::split_features(fv, X, y);
    return logreg_train(X, y, hyper);
}

/// sigmoid(w . standardize(x) + b): probability of the adversarial class.
inline double logreg_predict(const Standardizer& s, const LogRegModel& m, const std::vector<double>& x) {
    if (x.size() != m.weights.size())
        throw DataError("logreg_predict: expected dimension " + std::to_string(m.weights.size()) + ", got " +
                        std::to_string(x.size()));
    const auto z = s.transform(x);
    return detail::sigmoid(std::inner_product(m.weights.begin(), m.weights.end(), z.begin(), m.bias));
}

// ---------------------------------------------------------------------------
// Random forest

struct ForestHyper {
    int trees = 100;
    int max_features = 0;  // 0: ceil(sqrt(d))
    int min_samples_split = 2;

    friend bool operator==(const ForestHyper&, const ForestHyper&) = default;
};

struct TreeNode {
    std::int64_t feature = -1;  // -1 marks a leaf
    double threshold = 0.0;     // go left when x[feature] <= threshold
    std::int64_t left = -1, right = -1;
    double p0 = 0.5, p1 = 0.5;  // leaf class probabilities

    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct DecisionTree {
    std::vector<TreeNode> nodes;

    double predict(const std::vector<double>& x) const {
        std::size_t i = 0;
        while (nodes[i].feature >= 0)
            i = static_cast<std::size_t>(x[static_cast<std::size_t>(nodes[i].feature)] <= nodes[i].threshold
                                             ? nodes[i].left
                                             : nodes[i].right);
        return nodes[i].p1;
    }

    friend bool operator==(const DecisionTree&, const DecisionTree&) = default;
};

struct ForestModel {
    std::vector<DecisionTree> trees;
    ForestHyper hyper;
    std::uint64_t seed = 0;
    std::size_t dimension = 0;

    friend bool operator==(const ForestModel&, const ForestModel&) = default;
};

namespace detail {

inline double gini(double n0, double n1) {
    const double n = n0 + n1;
    if (n <= 0) return 0.0;
    const double a = n0 / n, b = n1 / n;
    return 1.0 - a * a - b * b;
}

class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& X, const std::vector<int>& y, std::size_t mtry, int min_split, Rng& rng)
        : X_(X), y_(y), mtry_(mtry), min_split_(static_cast<std::size_t>(std::max(min_split, 2))), rng_(rng),
          perm_(X[0].size()) {
        std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    }

    DecisionTree build(std::vector<std::size_t> rows) {
        DecisionTree t;
        t.nodes.emplace_back();
        struct Work {
            std::size_t node;
            std::vector<std::size_t> rows;
        };
        std::vector<Work> stack;
        stack.push_back({0, std::move(rows)});
        while (!stack.empty()) {
            Work w = std::move(stack.back());
            stack.pop_back();
            double n1 = 0;
            for (auto r : w.rows) n1 += y_[r];
            const double n = static_cast<double>(w.rows.size());
            const double n0 = n - n1;
            TreeNode& node = t.nodes[w.node];
            node.p0 = n0 / n;
            node.p1 = n1 / n;
            if (n0 == 0 || n1 == 0 || w.rows.size() < min_split_) continue;

            Split best;
            if (!find_split(w.rows, n0, n1, best)) continue;

            std::vector<std::size_t> left, right;
            for (auto r : w.rows) (X_[r][best.feature] <= best.threshold ? left : right).push_back(r);
            const auto li = t.nodes.size();
            t.nodes.emplace_back();
            t.nodes.emplace_back();
            TreeNode& parent = t.nodes[w.node];
            parent.feature = static_cast<std::int64_t>(best.feature);
            parent.threshold = best.threshold;
            parent.left = static_cast<std::int64_t>(li);
            parent.right = static_cast<std::int64_t>(li + 1);
            stack.push_back({li + 1, std::move(right)});
            stack.push_back({li, std::move(left)});
        }
        return t;
    }

private:
    struct Split {
        std::size_t feature = 0;
        double threshold = 0.0;
        double gain = -1.0;
        bool valid = false;
    };

    static bool better(const Split& a, const Split& b) {
        if (!b.valid) return true;
        if (a.gain != b.gain) return a.gain > b.gain;
        if (a.feature != b.feature) return a.feature < b.feature;
        return a.threshold < b.threshold;
    }

    // Draws features without replacement; examines at least mtry of them and
    // keeps drawing while none has produced a valid split.
    bool find_split(const std::vector<std::size_t>& rows, double n0, double n1, Split& best) {
        const std::size_t d = perm_.size();
        const double parent = gini(n0, n1);
        const double n = n0 + n1;
        std::vector<std::pair<double, int>> vals(rows.size());
        for (std::size_t k = 0; k < d; ++k) {
            if (k >= mtry_ && best.valid) break;
            std::swap(perm_[k], perm_[k + rng_.index(d - k)]);
            const std::size_t f = perm_[k];
            for (std::size_t i = 0; i < rows.size(); ++i) vals[i] = {X_[rows[i]][f], y_[rows[i]]};
            std::sort(vals.begin(), vals.end());
            double l0 = 0, l1 = 0;
            for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
                (vals[i].second ? l1 : l0) += 1;
                if (!(vals[i].first < vals[i + 1].first)) continue;
                const double nl = l0 + l1, nr = n - nl;
                const double g = parent - (nl / n) * gini(l0, l1) - (nr / n) * gini(n0 - l0, n1 - l1);
                Split s{f, 0.5 * (vals[i].first + vals[i + 1].first), g, true};
                // midpoint can round up onto the right value for adjacent doubles
                if (!(s.threshold < vals[i + 1].first)) s.threshold = vals[i].first;
                if (better(s, best)) best = s;
            }
        }
        return best.valid;
    }

    const FeatureMatrix& X_;
    const std::vector<int>& y_;
    std::size_t mtry_;
    std::size_t min_split_;
    Rng& rng_;
    std::vector<std::size_t> perm_;
};

}  // namespace detail

/// One bootstrap resample of size n per tree; tree t draws from
/// derive_seed(seed, t) so trees are independent of build order.
inline ForestModel forest_train(const FeatureMatrix& X, const std::vector<int>& y, const ForestHyper& hyper,
                                std::uint64_t seed, unsigned threads = 1) {
    const std::size_t d = detail::check_training_set(X, y, "forest_train");
    if (hyper.trees < 1 || hyper.max_features < 0 || hyper.min_samples_split < 2)
        throw ConfigError("forest_train: trees >= 1, max_features >= 0 and min_samples_split >= 2 required");
    const std::size_t mtry = hyper.max_features > 0
                                 ? std::min<std::size_t>(static_cast<std::size_t>(hyper.max_features), d)
                                 : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
    ForestModel m;
    m.hyper = hyper;
    m.seed = seed;
    m.dimension = d;
    m.trees.resize(static_cast<std::size_t>(hyper.trees));
    parallel_for(m.trees.size(), threads, [&](std::size_t t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
        std::vector<std::size_t> rows(X.size());
        for (auto& r : rows) r = rng.index(X.size());
        detail::TreeBuilder b(X, y, mtry, hyper.min_samples_split, rng);
        m.trees[t] = b.build(std::move(rows));
    });
    return m;
}

inline ForestModel forest_train(const std::vector<FeatureVector>& fv, const ForestHyper& hyper, std::uint64_t seed,
                                unsigned threads = 1) {
    FeatureMatrix X;
    std::vector<int> y;
    detail::split_features(fv, X, y);
    return forest_train(X, y, hyper, seed, threads);
}

/// Mean of the per-tree leaf probabilities for the adversarial class.
inline double forest_predict(const ForestModel& m, const std::vector<double>& x) {
    if (x.size() != m.dimension)
        throw DataError("forest_predict: expected dimension " + std::to_string(m.dimension) + ", got " +
                        std::to_string(x.size()));
    if (m.trees.empty()) throw DataError("forest_predict: the forest has no trees");
    double s = 0.0;
    for (const auto& t : m.trees) s += t.predict(x);
    return s / static_cast<double>(m.trees.size());
}

// ---------------------------------------------------------------------------
// Detector wrapper and serialization

enum class DetectorKind : std::uint8_t { logreg = 1, forest = 2 };

inline std::string to_string(DetectorKind k) { return k == DetectorKind::logreg ? "lr" : "rf"; }

inline DetectorKind parse_detector_kind(const std::string& s) {
    if (s == "lr" || s == "logreg") return DetectorKind::logreg;
    if (s == "rf" || s == "forest") return DetectorKind::forest;
    throw ConfigError("unknown detector '" + s + "' (expected lr or rf)");
}

struct DetectorHyper {
    LogRegHyper logreg;
    ForestHyper forest;
};

struct DetectorModel {
    DetectorKind kind = DetectorKind::forest;
    Standardizer standardizer;  // logreg only
    LogRegModel logreg;
    ForestModel forest;

    double predict(const std::vector<double>& x) const {
        return kind == DetectorKind::logreg ? logreg_predict(standardizer, logreg, x) : forest_predict(forest, x);
    }

    friend bool operator==(const DetectorModel&, const DetectorModel&) = default;
};

inline DetectorModel train_detector(DetectorKind kind, const std::vector<FeatureVector>& train,
                                    const DetectorHyper& hyper, std::uint64_t seed, unsigned threads = 1) {
    DetectorModel m;
    m.kind = kind;
    if (kind == DetectorKind::logreg) {
        auto t = logreg_train(train, hyper.logreg);
        m.standardizer = std::move(t.standardizer);
        m.logreg = std::move(t.model);
    } else {
        m.forest = forest_train(train, hyper.forest, seed, threads);
    }
    return m;
}

inline std::vector<unsigned char> serialize(const DetectorModel& m) {
    io::Writer w;
    w.magic("SSDET1");
    w.u8(static_cast<std::uint8_t>(m.kind));
    if (m.kind == DetectorKind::logreg) {
        w.f64(m.logreg.hyper.lambda);
        w.u32(static_cast<std::uint32_t>(m.logreg.hyper.iterations));
        w.f64(m.logreg.hyper.learning_rate);
        w.u64(m.logreg.weights.size());
        w.f64s(m.standardizer.mean);
        w.f64s(m.standardizer.stddev);
        w.f64s(m.logreg.weights);
        w.f64(m.logreg.bias);
    } else {
        const auto& f = m.forest;
        w.u32(static_cast<std::uint32_t>(f.hyper.trees));
        w.u32(static_cast<std::uint32_t>(f.hyper.max_features));
        w.u32(static_cast<std::uint32_t>(f.hyper.min_samples_split));
        w.u64(f.seed);
        w.u64(f.dimension);
        w.u64(f.trees.size());
        for (const auto& t : f.trees) {
            w.u64(t.nodes.size());
            for (const auto& n : t.nodes) {
                w.i64(n.feature);
                w.f64(n.threshold);
                w.i64(n.left);
                w.i64(n.right);
                w.f64(n.p0);
                w.f64(n.p1);
            }
        }
    }
    return w.buffer();
}

inline DetectorModel deserialize_detector(std::vector<unsigned char> bytes, const std::string& what = "detector") {
    io::Reader r(std::move(bytes), what);
    r.expect_magic("SSDET1");
    DetectorModel m;
    const auto kind = r.u8();
    if (kind == static_cast<std::uint8_t>(DetectorKind::logreg)) {
        m.kind = DetectorKind::logreg;
        m.logreg.hyper.lambda = r.f64();
        m.logreg.hyper.iterations = static_cast<int>(r.u32());
        m.logreg.hyper.learning_rate = r.f64();
        const auto d = r.u64();
        m.standardizer.mean = r.f64s(d);
        m.standardizer.stddev = r.f64s(d);
        m.logreg.weights = r.f64s(d);
        m.logreg.bias = r.f64();
    } else if (kind == static_cast<std::uint8_t>(DetectorKind::forest)) {
        m.kind = DetectorKind::forest;
        auto& f = m.forest;
        f.hyper.trees = static_cast<int>(r.u32());
        f.hyper.max_features = static_cast<int>(r.u32());
        f.hyper.min_samples_split = static_cast<int>(r.u32());
        f.seed = r.u64();
        f.dimension = r.u64();
        f.trees.resize(r.u64());
        for (auto& t : f.trees) {
            t.nodes.resize(r.u64());
            for (auto& n : t.nodes) {
                n.feature = r.i64();
                n.threshold = r.f64();
                n.left = r.i64();
                n.right = r.i64();
                n.p0 = r.f64();
                n.p1 = r.f64();
            }
        }
    } else {
        throw DataError(what + ": unknown detector kind tag " + std::to_string(kind));
    }
    r.expect_end();
    return m;
}

inline void save_detector(const std::string& path, const DetectorModel& m) {
    io::Writer w;
    const auto b = serialize(m);
    w.bytes(b.data(), b.size());
    w.save(path);
}

inline DetectorModel load_detector(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open detector file: " + path);
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_detector(std::move(data), path);
}

}  // namespace specdet
