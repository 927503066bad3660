#pragma once

// Experiment configuration: a flat key = value text format where repeating
// a key builds a list. Every key, its default and a one-line description
// come from one field table, so parsing and printing cannot drift apart.

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "specdet/attacks.hpp"
#include "specdet/common.hpp"
#include "specdet/data.hpp"
#include "specdet/detectors.hpp"
#include "specdet/smallnet.hpp"

namespace specdet::harness {

struct ExperimentConfig {
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string out = "run";

    std::string dataset = "synthetic";  // synthetic | cifar
    std::vector<std::string> cifar_train;
    std::vector<std::string> cifar_test;
    SynthOptions synth;
    double target_split = 0.8;

    std::string architecture = "default";
    TrainOptions train;

    std::vector<AttackKind> attacks = {AttackKind::pgd};
    std::vector<std::string> epsilons = {"8/255"};
    AttackSettings attack;
    std::size_t attack_samples = 0;  // 0 = whole test split

    std::vector<DetectionMode> modes = {DetectionMode::black, DetectionMode::white};
    std::vector<std::string> layers = {"relu1", "relu2", "relu3"};
    std::vector<DetectorKind> detectors = {DetectorKind::logreg, DetectorKind::forest};
    DetectorHyper detector;
    bool log_scale = false;
    bool quantize_8bit = false;
    std::size_t detection_samples = 1500;
    std::size_t fig1_samples = 1000;
};

/// Parses "8/255", "0.5/255" or a plain decimal.
inline double epsilon_value(const std::string& text) {
    auto number = [&](std::string_view s) {
        double v = 0.0;
        const auto* end = s.data() + s.size();
        const auto [p, ec] = std::from_chars(s.data(), end, v);
        if (ec != std::errc() || p != end || s.empty()) throw ConfigError("bad epsilon '" + text + "'");
        return v;
    };
    const auto slash = text.find('/');
    const double v = slash == std::string::npos
                         ? number(text)
                         : number(std::string_view(text).substr(0, slash)) /
                               number(std::string_view(text).substr(slash + 1));
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError("epsilon '" + text + "' must lie in (0, 1]");
    return v;
}

/// File-name friendly form of an epsilon string: "8/255" -> "8-255".
inline std::string epsilon_tag(const std::string& text) {
    std::string t = text;
    for (char& c : t)
        if (c == '/') c = '-';
    return t;
}

namespace config_detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
        throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
    return out;
}

inline std::string format(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}
inline std::string format(bool v) { return v ? "true" : "false"; }
inline std::string format(const std::string& v) { return v; }
template <std::integral T>
std::string format(T v) { return std::to_string(v); }

inline void parse_into(const std::string& key, const std::string& v, double& out) { out = parse_number<double>(key, v); }
inline void parse_into(const std::string& key, const std::string& v, std::string& out) {
    if (v.empty()) throw ConfigError("config key '" + key + "': empty value");
    out = v;
}
inline void parse_into(const std::string& key, const std::string& v, bool& out) {
    if (v == "true" || v == "1" || v == "yes") out = true;
    else if (v == "false" || v == "0" || v == "no") out = false;
    else throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}
template <std::integral T>
void parse_into(const std::string& key, const std::string& v, T& out) { out = parse_number<T>(key, v); }

struct Field {
    std::string key;
    std::string doc;
    bool list = false;
    std::function<std::vector<std::string>(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::vector<std::string>&)> set;
};

template <class Ref>
Field scalar(std::string key, std::string doc, Ref ref) {
    Field f;
    f.key = key;
    f.doc = std::move(doc);
    f.get = [ref](const ExperimentConfig& c) { return std::vector<std::string>{format(ref(c))}; };
    f.set = [ref, key](ExperimentConfig& c, const std::vector<std::string>& v) {
        if (v.size() != 1) throw ConfigError("config key '" + key + "' is not a list but was given " +
                                             std::to_string(v.size()) + " times");
        parse_into(key, v[0], ref(c));
    };
    return f;
}

template <class Ref, class ToString, class FromString>
Field list(std::string key, std::string doc, Ref ref, ToString to, FromString from) {
    Field f;
    f.key = std::move(key);
    f.doc = std::move(doc);
    f.list = true;
    f.get = [ref, to](const ExperimentConfig& c) {
        std::vector<std::string> out;
        for (const auto& x : ref(c)) out.push_back(to(x));
        return out;
    };
    f.set = [ref, from](ExperimentConfig& c, const std::vector<std::string>& v) {
        auto& dst = ref(c);
        dst.clear();
        for (const auto& s : v)
            if (!s.empty()) dst.push_back(from(s));  // "key =" alone clears the list
    };
    return f;
}

inline const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        auto same = [](const std::string& s) { return s; };
        auto path = [](const std::string& s) {
            if (s.empty()) throw ConfigError("empty path in config");
            return s;
        };
        auto eps = [](const std::string& s) {
            (void)epsilon_value(s);
            return s;
        };
        auto attack_to = [](AttackKind k) { return to_string(k); };
        auto mode_to = [](DetectionMode m) { return to_string(m); };
        auto det_to = [](DetectorKind k) { return to_string(k); };
        std::vector<Field> t;
        t.push_back(scalar("seed", "master seed; every stage derives its own seed from it",
                           [](auto& c) -> auto& { return c.seed; }));
        t.push_back(scalar("threads", "worker threads for attacks, features and forests",
                           [](auto& c) -> auto& { return c.threads; }));
        t.push_back(scalar("out", "output directory", [](auto& c) -> auto& { return c.out; }));
        t.push_back(scalar("dataset", "synthetic | cifar", [](auto& c) -> auto& { return c.dataset; }));
        t.push_back(list("cifar_train", "CIFAR-10 binary batch used to train the target (repeatable)",
                         [](auto& c) -> auto& { return c.cifar_train; }, same, path));
        t.push_back(list("cifar_test", "CIFAR-10 binary batch attacked and used for detection (repeatable)",
                         [](auto& c) -> auto& { return c.cifar_test; }, same, path));
        t.push_back(scalar("synth_classes", "synthetic: number of classes",
                           [](auto& c) -> auto& { return c.synth.classes; }));
        t.push_back(scalar("synth_per_class", "synthetic: images per class",
                           [](auto& c) -> auto& { return c.synth.per_class; }));
        t.push_back(scalar("synth_size", "synthetic: image side length",
                           [](auto& c) -> auto& { return c.synth.size; }));
        t.push_back(scalar("synth_texture_amplitude", "synthetic: class grating amplitude",
                           [](auto& c) -> auto& { return c.synth.texture_amplitude; }));
        t.push_back(scalar("synth_dominance_min", "synthetic: lower bound of the own-class grating weight",
                           [](auto& c) -> auto& { return c.synth.dominance_min; }));
        t.push_back(scalar("synth_dominance_max", "synthetic: upper bound of the own-class grating weight",
                           [](auto& c) -> auto& { return c.synth.dominance_max; }));
        t.push_back(scalar("synth_background_amplitude", "synthetic: smooth background variation",
                           [](auto& c) -> auto& { return c.synth.background_amplitude; }));
        t.push_back(scalar("synth_color_jitter", "synthetic: per-sample colour offset",
                           [](auto& c) -> auto& { return c.synth.color_jitter; }));
        t.push_back(scalar("synth_noise", "synthetic: pixel noise standard deviation",
                           [](auto& c) -> auto& { return c.synth.noise; }));
        t.push_back(scalar("target_split", "synthetic: fraction used to train the target, rest is the test set",
                           [](auto& c) -> auto& { return c.target_split; }));
        t.push_back(scalar("architecture", "'default' or a descriptor such as 'input:3x32x32 c1:conv:8:3:1:1 ...'",
                           [](auto& c) -> auto& { return c.architecture; }));
        t.push_back(scalar("train_epochs", "target training epochs", [](auto& c) -> auto& { return c.train.epochs; }));
        t.push_back(scalar("train_learning_rate", "target SGD learning rate",
                           [](auto& c) -> auto& { return c.train.learning_rate; }));
        t.push_back(scalar("train_batch_size", "target SGD mini-batch size",
                           [](auto& c) -> auto& { return c.train.batch_size; }));
        t.push_back(list("attack", "fgsm | pgd | square (repeatable; cascade order)",
                         [](auto& c) -> auto& { return c.attacks; }, attack_to, parse_attack_kind));
        t.push_back(list("epsilon", "L-inf budget such as 8/255 (repeatable; one sweep row each)",
                         [](auto& c) -> auto& { return c.epsilons; }, same, eps));
        t.push_back(scalar("pgd_steps", "PGD iterations", [](auto& c) -> auto& { return c.attack.pgd_steps; }));
        t.push_back(scalar("pgd_step_fraction", "PGD step size as a fraction of epsilon",
                           [](auto& c) -> auto& { return c.attack.pgd_step_fraction; }));
        t.push_back(scalar("pgd_random_start", "PGD starts from a random point in the ball",
                           [](auto& c) -> auto& { return c.attack.pgd_random_start; }));
        t.push_back(scalar("square_queries", "square attack query budget",
                           [](auto& c) -> auto& { return c.attack.square_queries; }));
        t.push_back(scalar("early_exit", "iterative attacks stop once the label flips",
                           [](auto& c) -> auto& { return c.attack.early_exit; }));
        t.push_back(scalar("attack_samples", "attack at most this many test images (0 = all)",
                           [](auto& c) -> auto& { return c.attack_samples; }));
        t.push_back(list("mode", "black | white (repeatable)", [](auto& c) -> auto& { return c.modes; }, mode_to,
                         parse_detection_mode));
        t.push_back(list("layer", "white-box feature layer (repeatable)", [](auto& c) -> auto& { return c.layers; },
                         same, same));
        t.push_back(list("detector", "lr | rf (repeatable)", [](auto& c) -> auto& { return c.detectors; }, det_to,
                         parse_detector_kind));
        t.push_back(scalar("lr_lambda", "logistic regression L2 strength",
                           [](auto& c) -> auto& { return c.detector.logreg.lambda; }));
        t.push_back(scalar("lr_iterations", "logistic regression gradient steps",
                           [](auto& c) -> auto& { return c.detector.logreg.iterations; }));
        t.push_back(scalar("lr_learning_rate", "logistic regression step size",
                           [](auto& c) -> auto& { return c.detector.logreg.learning_rate; }));
        t.push_back(scalar("rf_trees", "random forest size", [](auto& c) -> auto& { return c.detector.forest.trees; }));
        t.push_back(scalar("rf_max_features", "features tried per split (0 = ceil(sqrt(d)))",
                           [](auto& c) -> auto& { return c.detector.forest.max_features; }));
        t.push_back(scalar("rf_min_samples_split", "smallest node that may be split",
                           [](auto& c) -> auto& { return c.detector.forest.min_samples_split; }));
        t.push_back(scalar("log_scale", "use log(1 + |F|) instead of |F|",
                           [](auto& c) -> auto& { return c.log_scale; }));
        t.push_back(scalar("quantize_8bit", "round adversarial images to 8-bit levels before feature extraction",
                           [](auto& c) -> auto& { return c.quantize_8bit; }));
        t.push_back(scalar("detection_samples", "cap on clean + adversarial samples per detection set",
                           [](auto& c) -> auto& { return c.detection_samples; }));
        t.push_back(scalar("fig1_samples", "cap on image pairs accumulated per heatmap",
                           [](auto& c) -> auto& { return c.fig1_samples; }));
        return t;
    }();
    return table;
}

}  // namespace config_detail

/// Applies `key = value` lines on top of `base`. Lines starting with '#'
/// and blank lines are ignored. A list key given in the text replaces the
/// whole default list.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config",
                                     ExperimentConfig base = {}) {
    using namespace config_detail;
    std::map<std::string, std::vector<std::string>> values;
    std::vector<std::string> order;
    std::istringstream is(text);
    std::string line;
    for (int lineno = 1; std::getline(is, line); ++lineno) {
        const auto content = trim(line);
        if (content.empty() || content[0] == '#') continue;
        const auto eq = content.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        const auto key = trim(std::string_view(content).substr(0, eq));
        const auto value = trim(std::string_view(content).substr(eq + 1));
        if (!values.count(key)) order.push_back(key);
        values[key].push_back(value);
    }
    for (const auto& key : order) {
        const auto& table = fields();
        const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
        if (it == table.end()) throw ConfigError(origin + ": unknown key '" + key + "'");
        it->set(base, values[key]);
    }
    return base;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

/// Full config as parseable text, one commented line per key.
inline std::string to_text(const ExperimentConfig& cfg) {
    std::ostringstream os;
    for (const auto& f : config_detail::fields()) {
        os << "# " << f.doc << '\n';
        const auto vals = f.get(cfg);
        if (vals.empty()) os << "# " << f.key << " =\n";
        for (const auto& v : vals) os << f.key << " = " << v << '\n';
    }
    return os.str();
}

inline Architecture architecture_for(const ExperimentConfig& cfg) {
    const bool synthetic = cfg.dataset == "synthetic";
    const std::size_t size = synthetic ? static_cast<std::size_t>(cfg.synth.size) : 32;
    const std::size_t classes = synthetic ? static_cast<std::size_t>(cfg.synth.classes) : 10;
    if (cfg.architecture == "default") return Architecture::default_for(3, size, size, classes);
    auto a = Architecture::parse(cfg.architecture);
    if (a.in_channels != 3 || a.in_height != size || a.in_width != size)
        throw ConfigError("architecture input " + std::to_string(a.in_channels) + "x" + std::to_string(a.in_height) +
                          "x" + std::to_string(a.in_width) + " does not match the dataset's 3x" +
                          std::to_string(size) + "x" + std::to_string(size));
    return a;
}

inline void validate(const ExperimentConfig& cfg) {
    if (cfg.dataset != "synthetic" && cfg.dataset != "cifar")
        throw ConfigError("dataset must be 'synthetic' or 'cifar', got '" + cfg.dataset + "'");
    if (cfg.dataset == "cifar" && (cfg.cifar_train.empty() || cfg.cifar_test.empty()))
        throw ConfigError("dataset = cifar needs at least one cifar_train and one cifar_test file");
    if (cfg.epsilons.empty()) throw ConfigError("the epsilon list is empty");
    for (const auto& e : cfg.epsilons) (void)epsilon_value(e);
    if (cfg.attacks.empty()) throw ConfigError("the attack list is empty");
    if (cfg.modes.empty()) throw ConfigError("the mode list is empty");
    if (cfg.detectors.empty()) throw ConfigError("the detector list is empty");
    if (!(cfg.target_split > 0.0 && cfg.target_split < 1.0)) throw ConfigError("target_split must lie in (0, 1)");
    if (cfg.train.epochs < 0 || !(cfg.train.learning_rate > 0.0) || cfg.train.batch_size == 0)
        throw ConfigError("training needs epochs >= 0, train_learning_rate > 0 and train_batch_size > 0");
    if (cfg.attack.pgd_steps < 1 || cfg.attack.square_queries < 1 || !(cfg.attack.pgd_step_fraction > 0.0))
        throw ConfigError("pgd_steps, square_queries and pgd_step_fraction must be positive");
    if (cfg.detection_samples < 2) throw ConfigError("detection_samples must be at least 2");
    if (cfg.detector.forest.trees < 1) throw ConfigError("rf_trees must be at least 1");
    if (cfg.threads < 1) throw ConfigError("threads must be at least 1");

    const Network probe(architecture_for(cfg));
    const bool white = std::find(cfg.modes.begin(), cfg.modes.end(), DetectionMode::white) != cfg.modes.end();
    if (white && cfg.layers.empty()) throw ConfigError("white-box mode needs at least one layer");
    for (const auto& l : cfg.layers) (void)probe.index_of(l);
}

}  // namespace specdet::harness
