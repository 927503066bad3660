#pragma once

// Dataset ingestion (CIFAR-10 binary batches), the synthetic desk-scale
// generator, stratified splits and assembly of balanced clean/adversarial
// detection datasets.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "specdet/attacks.hpp"
#include "specdet/common.hpp"
#include "specdet/smallnet.hpp"
#include "specdet/spectral.hpp"
#include "specdet/tensor.hpp"

namespace specdet {

// ---------------------------------------------------------------------------
// CIFAR-10 binary records: 1 label byte + 3072 channel-major pixel bytes.

inline constexpr std::size_t cifar_pixels = 3 * 32 * 32;
inline constexpr std::size_t cifar_record = 1 + cifar_pixels;

inline LabeledImages decode_cifar10(const std::vector<unsigned char>& bytes, const std::string& what = "cifar data") {
    if (bytes.size() % cifar_record != 0)
        throw DataError(what + ": length " + std::to_string(bytes.size()) + " is not a multiple of " +
                        std::to_string(cifar_record) + " (expected " +
                        std::to_string((bytes.size() / cifar_record + 1) * cifar_record) + " or " +
                        std::to_string(bytes.size() / cifar_record * cifar_record) + " bytes)");
    LabeledImages out;
    out.class_count = 10;
    const std::size_t n = bytes.size() / cifar_record;
    out.images.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        const unsigned char* rec = bytes.data() + r * cifar_record;
        if (rec[0] >= 10)
            throw DataError(what + ": record " + std::to_string(r) + " has label byte " + std::to_string(rec[0]));
        std::vector<double> px(cifar_pixels);
        for (std::size_t i = 0; i < cifar_pixels; ++i) px[i] = rec[1 + i] / 255.0;
        out.images.emplace_back(3, 32, 32, std::move(px));
        out.labels.push_back(rec[0]);
    }
    return out;
}

inline LabeledImages load_cifar10_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open CIFAR-10 file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_cifar10(bytes, path);
}

/// Inverse of decode_cifar10; pixels are rounded to the nearest 8-bit level.
/// Requires 3x32x32 images and labels below 256.
inline std::vector<unsigned char> encode_cifar10(const LabeledImages& data) {
    data.validate();
    std::vector<unsigned char> out;
    out.reserve(data.size() * cifar_record);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& img = data.images[i];
        if (img.channels() != 3 || img.height() != 32 || img.width() != 32)
            throw DataError("encode_cifar10: image " + std::to_string(i) + " is not 3x32x32");
        if (data.labels[i] > 255) throw DataError("encode_cifar10: label does not fit in a byte");
        out.push_back(static_cast<unsigned char>(data.labels[i]));
        for (double v : img.pixels()) out.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    return out;
}

inline void save_cifar10_binary(const std::string& path, const LabeledImages& data) {
    const auto bytes = encode_cifar10(data);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthOptions {
    int classes = 2;
    int per_class = 500;
    int size = 32;
    std::uint64_t seed = 0;
    double texture_amplitude = 0.08;   // class grating amplitude
    double dominance_min = 0.5;        // own-class grating weight ~ U(dominance_min, dominance_max)
    double dominance_max = 1.0;
    double background_amplitude = 0.08;// per-sample smooth variation
    double color_jitter = 0.08;        // per-sample, per-channel offset
    double noise = 0.015;              // per-pixel Gaussian noise
};

namespace detail {

struct Wave {
    double fx = 0, fy = 0, phase = 0;
    double amp[3] = {0, 0, 0};
};

inline Wave random_wave(Rng& rng, int min_freq, int max_freq) {
    Wave w;
    const auto span = static_cast<std::size_t>(max_freq - min_freq + 1);
    do {
        w.fx = static_cast<double>(min_freq + static_cast<int>(rng.index(span))) * (rng.coin() ? 1.0 : -1.0);
        w.fy = static_cast<double>(min_freq + static_cast<int>(rng.index(span)));
        if (rng.coin()) w.fx = 0.0;
    } while (w.fx == 0 && w.fy == 0);
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return w;
}

inline double wave_value(const Wave& w, std::size_t c, double x, double y, double size) {
    return w.amp[c % 3] * std::cos(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) / size + w.phase);
}

}  // namespace detail

/// Texture-coded classes. Every class owns a mid-frequency grating with
/// fixed per-channel amplitudes; a sample mixes all class gratings (random
/// phases) with its own class weighted ~U(dominance_min, dominance_max) and the rest
/// sharing the remainder, on top of a mid-grey background with a random
/// colour offset, a smooth low-frequency variation and pixel noise, clipped
/// to [0, 1]. Labels cycle 0, 1, ..., classes-1.
inline LabeledImages synth_dataset(const SynthOptions& opt) {
    if (opt.classes < 2 || opt.per_class < 1 || opt.size < 4)
        throw ConfigError("synth_dataset: classes >= 2, per_class >= 1 and size >= 4 required");
    if (!(opt.dominance_min > 0.0 && opt.dominance_min <= opt.dominance_max && opt.dominance_max <= 1.0))
        throw ConfigError("synth_dataset: need 0 < dominance_min <= dominance_max <= 1");
    const std::size_t C = 3, S = static_cast<std::size_t>(opt.size);
    const double size = static_cast<double>(S);

    // Class gratings are evenly spread in orientation at a period of about
    // six pixels, with a small seeded jitter in angle and frequency.
    std::vector<detail::Wave> gratings;
    Rng trng(derive_seed(opt.seed, "synth-templates"));
    for (int k = 0; k < opt.classes; ++k) {
        detail::Wave w;
        const double angle = std::numbers::pi * (k + trng.uniform(-0.1, 0.1)) / opt.classes;
        const double cycles = size / 6.0 * trng.uniform(0.9, 1.1);
        w.fx = cycles * std::cos(angle);
        w.fy = cycles * std::sin(angle);
        for (double& a : w.amp) a = opt.texture_amplitude * trng.uniform(0.6, 1.0);
        gratings.push_back(w);
    }

    LabeledImages out;
    out.class_count = opt.classes;
    const std::uint64_t sample_seed = derive_seed(opt.seed, "synth-samples");
    const std::size_t total = static_cast<std::size_t>(opt.classes) * static_cast<std::size_t>(opt.per_class);
    out.images.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        const int label = static_cast<int>(i % static_cast<std::size_t>(opt.classes));
        Rng rng(derive_seed(sample_seed, static_cast<std::uint64_t>(i)));

        std::vector<double> weight(static_cast<std::size_t>(opt.classes), 0.0);
        const double own = rng.uniform(opt.dominance_min, opt.dominance_max);
        double rest = 0.0;
        for (int k = 0; k < opt.classes; ++k)
            if (k != label) rest += (weight[static_cast<std::size_t>(k)] = rng.uniform(0.0, 1.0));
        for (int k = 0; k < opt.classes; ++k)
            if (k != label) weight[static_cast<std::size_t>(k)] *= (1.0 - own) / rest;
        weight[static_cast<std::size_t>(label)] = own;

        std::vector<detail::Wave> waves;
        for (int k = 0; k < opt.classes; ++k) {
            auto w = gratings[static_cast<std::size_t>(k)];
            w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            for (double& a : w.amp) a *= weight[static_cast<std::size_t>(k)];
            waves.push_back(w);
        }
        for (int k = 0; k < 2; ++k) {
            auto w = detail::random_wave(rng, 1, 2);
            for (double& a : w.amp) a = opt.background_amplitude * rng.uniform(-1.0, 1.0);
            waves.push_back(w);
        }
        double offset[3];
        for (double& o : offset) o = opt.color_jitter * rng.uniform(-1.0, 1.0);

        std::vector<double> px(C * S * S);
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t y = 0; y < S; ++y) {
                for (std::size_t x = 0; x < S; ++x) {
                    double v = 0.5 + offset[c];
                    for (const auto& w : waves)
                        v += detail::wave_value(w, c, static_cast<double>(x), static_cast<double>(y), size);
                    v += opt.noise * rng.normal();
                    px[(c * S + y) * S + x] = std::clamp(v, 0.0, 1.0);
                }
            }
        }
        out.images.emplace_back(C, S, S, std::move(px));
        out.labels.push_back(label);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits

/// Indices of a label-stratified split: within each label the members are
/// shuffled from `seed` and the first round(train_fraction * n) go to train.
inline std::vector<bool> stratified_split(const std::vector<int>& labels, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("split fraction must be in (0, 1)");
    std::vector<bool> is_train(labels.size(), false);
    std::vector<int> strata(labels);
    std::sort(strata.begin(), strata.end());
    strata.erase(std::unique(strata.begin(), strata.end()), strata.end());
    for (int s : strata) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == s) members.push_back(i);
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
        rng.shuffle(members);
        const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
        for (std::size_t k = 0; k < n_train; ++k) is_train[members[k]] = true;
    }
    return is_train;
}

struct TrainTestImages {
    LabeledImages train;
    LabeledImages test;
};

inline TrainTestImages split_labeled(const LabeledImages& data, double train_fraction, std::uint64_t seed) {
    data.validate();
    const auto is_train = stratified_split(data.labels, train_fraction, seed);
    TrainTestImages out;
    out.train.class_count = out.test.class_count = data.class_count;
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto& dst = is_train[i] ? out.train : out.test;
        dst.images.push_back(data.images[i]);
        dst.labels.push_back(data.labels[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Detection datasets

enum class DetectionMode { black, white };

inline std::string to_string(DetectionMode m) { return m == DetectionMode::black ? "black" : "white"; }

inline DetectionMode parse_detection_mode(const std::string& s) {
    if (s == "black") return DetectionMode::black;
    if (s == "white") return DetectionMode::white;
    throw ConfigError("unknown detection mode '" + s + "' (expected black or white)");
}

struct FeatureOptions {
    DetectionMode mode = DetectionMode::black;
    std::vector<std::string> layers;  // white-box layer selection
    SpectralOptions spectral;
    bool quantize_8bit = false;       // applied to adversarial images only
    unsigned threads = 1;
};

/// Expected feature length for a mode.
inline std::size_t feature_dimension(const Network& net, const FeatureOptions& opt) {
    if (opt.mode == DetectionMode::black) {
        const auto s = net.input_shape();
        return blackbox_dimension(s[0], s[1], s[2]);
    }
    return whitebox_dimension(net, opt.layers);
}

inline FeatureVector extract_features(const Network& net, const Image& image, const FeatureOptions& opt) {
    if (opt.mode == DetectionMode::black) return blackbox_features(image, opt.spectral);
    return whitebox_features(net, image, opt.layers, opt.spectral);
}

enum class SplitSide : std::uint8_t { train = 0, test = 1 };

struct DetectionDataset {
    std::vector<FeatureVector> features;
    std::vector<SplitSide> split;
    std::uint64_t seed = 0;

    std::vector<FeatureVector> side(SplitSide s) const {
        std::vector<FeatureVector> out;
        for (std::size_t i = 0; i < features.size(); ++i)
            if (split[i] == s) out.push_back(features[i]);
        return out;
    }
    std::vector<FeatureVector> train() const { return side(SplitSide::train); }
    std::vector<FeatureVector> test() const { return side(SplitSide::test); }
};

inline bool counts_as_perturbation(const AttackOutcome& o) { return o.success && o.attack_name != "clean-error"; }

/// Positives: features of successful adversarial images (clean-error
/// outcomes carry no perturbation and are skipped). Negatives: an equal-size
/// seeded random subset of the clean pool. `max_samples` > 0 caps the total
/// (half per class). Split 80:20 stratified by label.
inline DetectionDataset build_detection_dataset(const std::vector<Image>& clean,
                                                const std::vector<AttackOutcome>& outcomes, const Network& net,
                                                const FeatureOptions& opt, std::uint64_t seed, double epsilon = 0.0,
                                                std::size_t max_samples = 0) {
    std::vector<const AttackOutcome*> pos;
    for (const auto& o : outcomes)
        if (counts_as_perturbation(o)) pos.push_back(&o);
    if (pos.empty()) throw DataError("build_detection_dataset: no successful adversarial examples");
    if (max_samples > 0 && pos.size() > max_samples / 2) {
        Rng rng(derive_seed(seed, "positive-subset"));
        rng.shuffle(pos);
        pos.resize(std::max<std::size_t>(1, max_samples / 2));
        std::sort(pos.begin(), pos.end(), [](auto* a, auto* b) { return a->sample_id < b->sample_id; });
    }
    if (clean.size() < pos.size())
        throw DataError("build_detection_dataset: " + std::to_string(pos.size()) + " positives but only " +
                        std::to_string(clean.size()) + " clean images; cannot balance 1:1");
    if (opt.mode == DetectionMode::white && opt.layers.empty())
        throw ConfigError("build_detection_dataset: white-box mode needs at least one layer");

    std::vector<std::size_t> clean_idx(clean.size());
    std::iota(clean_idx.begin(), clean_idx.end(), std::size_t{0});
    {
        Rng rng(derive_seed(seed, "clean-subset"));
        rng.shuffle(clean_idx);
    }
    clean_idx.resize(pos.size());
    std::sort(clean_idx.begin(), clean_idx.end());

    const std::size_t n = 2 * pos.size();
    DetectionDataset ds;
    ds.seed = seed;
    ds.features.resize(n);
    parallel_for(n, opt.threads, [&](std::size_t i) {
        FeatureVector fv;
        if (i < pos.size()) {
            const auto& o = *pos[i];
            const Image adv = opt.quantize_8bit ? quantize_8bit(o.adversarial) : o.adversarial;
            fv = extract_features(net, adv, opt);
            fv.label = FeatureLabel::adversarial;
            fv.provenance = {o.sample_id, o.attack_name, epsilon};
        } else {
            const std::size_t c = clean_idx[i - pos.size()];
            fv = extract_features(net, clean[c], opt);
            fv.label = FeatureLabel::clean;
            fv.provenance = {c, "clean", epsilon};
        }
        ds.features[i] = std::move(fv);
    });

    const std::size_t dim = feature_dimension(net, opt);
    for (const auto& f : ds.features)
        if (f.values.size() != dim) throw DataError("build_detection_dataset: feature length mismatch");

    std::vector<int> labels;
    for (const auto& f : ds.features) labels.push_back(f.label_value());
    const auto is_train = stratified_split(labels, 0.8, derive_seed(seed, "detector-split"));
    for (bool t : is_train) ds.split.push_back(t ? SplitSide::train : SplitSide::test);
    return ds;
}

// ---------------------------------------------------------------------------
// Feature dumps ("SSFEAT1"): used to pass features between CLI stages.

inline void save_detection_dataset(const std::string& path, const DetectionDataset& ds) {
    io::Writer w;
    w.magic("SSFEAT1");
    w.u64(ds.seed);
    w.u64(ds.features.size());
    for (std::size_t i = 0; i < ds.features.size(); ++i) {
        const auto& f = ds.features[i];
        w.u8(static_cast<std::uint8_t>(f.label));
        w.u8(static_cast<std::uint8_t>(ds.split[i]));
        w.u64(f.provenance.sample_id);
        w.str(f.provenance.attack);
        w.f64(f.provenance.epsilon);
        w.u64(f.values.size());
        w.f64s(f.values);
    }
    w.save(path);
}

inline DetectionDataset load_detection_dataset(const std::string& path) {
    auto r = io::Reader::from_file(path);
    r.expect_magic("SSFEAT1");
    DetectionDataset ds;
    ds.seed = r.u64();
    const auto n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        FeatureVector f;
        const auto label = r.u8();
        const auto side = r.u8();
        if (label > 1 || side > 1) throw DataError(path + ": corrupt feature record " + std::to_string(i));
        f.label = static_cast<FeatureLabel>(label);
        f.provenance.sample_id = r.u64();
        f.provenance.attack = r.str();
        f.provenance.epsilon = r.f64();
        f.values = r.f64s(r.u64());
        ds.features.push_back(std::move(f));
        ds.split.push_back(static_cast<SplitSide>(side));
    }
    r.expect_end();
    return ds;
}

}  // namespace specdet
