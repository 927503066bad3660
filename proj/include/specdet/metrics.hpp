#pragma once

// Attack and detection metrics: ASR, confusion counts at threshold 0.5, F1,
// FNR and ASRD = FNR * ASR.

#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "specdet/attacks.hpp"
#include "specdet/common.hpp"

namespace specdet {

/// Fraction of outcomes flagged successful.
inline double compute_asr(const std::vector<AttackOutcome>& outcomes) {
    if (outcomes.empty()) throw DataError("compute_asr: no outcomes");
    std::size_t s = 0;
    for (const auto& o : outcomes) s += o.success ? 1 : 0;
    return static_cast<double>(s) / static_cast<double>(outcomes.size());
}

inline double compute_asr(std::size_t successes, std::size_t total) {
    if (total == 0) throw DataError("compute_asr: no samples");
    if (successes > total) throw DataError("compute_asr: more successes than samples");
    return static_cast<double>(successes) / static_cast<double>(total);
}

struct EvalConfig {
    std::string epsilon;  // as written in the config, e.g. "8/255"
    std::string mode;     // black | white
    std::string detector; // lr | rf
    std::string attack;   // attack or cascade label
    std::uint64_t seed = 0;

    friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct EvalReport {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double f1 = 0.0;
    double fnr = 0.0;
    double asr = 0.0;
    double asrd = 0.0;
    EvalConfig config;
};

/// ASRD = FNR * ASR.
inline double asrd(double fnr, double asr) { return fnr * asr; }

/// Predictions are (probability of adversarial, true label) pairs; the
/// predicted label is prob >= 0.5. Positives are adversarial (label 1).
inline EvalReport evaluate_detector(const std::vector<std::pair<double, int>>& predictions, double asr,
                                    EvalConfig config = {}) {
    if (!(asr >= 0.0 && asr <= 1.0)) throw DataError("evaluate_detector: ASR must lie in [0, 1]");
    EvalReport r;
    r.config = std::move(config);
    for (const auto& [p, label] : predictions) {
        if (label != 0 && label != 1) throw DataError("evaluate_detector: labels must be 0 or 1");
        const bool predicted = p >= 0.5;
        if (label == 1)
            (predicted ? r.tp : r.fn) += 1;
        else
            (predicted ? r.fp : r.tn) += 1;
    }
    if (r.tp + r.fn == 0) throw DataError("evaluate_detector: no adversarial (positive) ground-truth samples");
    if (r.tn + r.fp == 0) throw DataError("evaluate_detector: no clean (negative) ground-truth samples");
    r.fnr = static_cast<double>(r.fn) / static_cast<double>(r.fn + r.tp);
    const std::size_t f1_den = 2 * r.tp + r.fp + r.fn;
    r.f1 = static_cast<double>(2 * r.tp) / static_cast<double>(f1_den);
    r.asr = asr;
    r.asrd = asrd(r.fnr, r.asr);
    return r;
}

/// Percentage with one decimal, zero padded to two integer digits ("05.3").
inline std::string percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04.1f", 100.0 * fraction);
    return buf;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["epsilon"] = r.config.epsilon;
    j["mode"] = r.config.mode;
    j["detector"] = r.config.detector;
    j["attack"] = r.config.attack;
    j["seed"] = r.config.seed;
    j["tp"] = r.tp;
    j["fp"] = r.fp;
    j["tn"] = r.tn;
    j["fn"] = r.fn;
    j["f1"] = r.f1;
    j["fnr"] = r.fnr;
    j["asr"] = r.asr;
    j["asrd"] = r.asrd;
    return j;
}

inline EvalReport report_from_json(const nlohmann::ordered_json& j) {
    EvalReport r;
    r.config.epsilon = j.at("epsilon").get<std::string>();
    r.config.mode = j.at("mode").get<std::string>();
    r.config.detector = j.at("detector").get<std::string>();
    r.config.attack = j.at("attack").get<std::string>();
    r.config.seed = j.at("seed").get<std::uint64_t>();
    r.tp = j.at("tp").get<std::size_t>();
    r.fp = j.at("fp").get<std::size_t>();
    r.tn = j.at("tn").get<std::size_t>();
    r.fn = j.at("fn").get<std::size_t>();
    r.f1 = j.at("f1").get<double>();
    r.fnr = j.at("fnr").get<double>();
    r.asr = j.at("asr").get<double>();
    r.asrd = j.at("asrd").get<double>();
    return r;
}

inline std::string csv_header() { return "epsilon,mode,detector,attack,tp,fp,tn,fn,ASR,F1,FNR,ASRD"; }

inline std::string csv_row(const EvalReport& r) {
    return r.config.epsilon + ',' + r.config.mode + ',' + r.config.detector + ',' + r.config.attack + ',' +
           std::to_string(r.tp) + ',' + std::to_string(r.fp) + ',' + std::to_string(r.tn) + ',' +
           std::to_string(r.fn) + ',' + percent(r.asr) + ',' + percent(r.f1) + ',' + percent(r.fnr) + ',' +
           percent(r.asrd);
}

inline void write_report(const std::string& stem, const EvalReport& r) {
    {
        std::ofstream j(stem + ".json");
        if (!j) throw DataError("cannot open for writing: " + stem + ".json");
        j << to_json(r).dump(2) << '\n';
    }
    std::ofstream c(stem + ".csv");
    if (!c) throw DataError("cannot open for writing: " + stem + ".csv");
    c << csv_header() << '\n' << csv_row(r) << '\n';
}

}  // namespace specdet
