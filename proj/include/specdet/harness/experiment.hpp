#pragma once

// Experiment orchestration. Every command writes into one run directory:
// deterministic artifacts (config echo, models, reports, tables) plus a
// manifest.json that alone carries timestamps and stage timings. An
// INCOMPLETE marker exists until the command finishes.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "specdet/attacks.hpp"
#include "specdet/data.hpp"
#include "specdet/detectors.hpp"
#include "specdet/harness/config.hpp"
#include "specdet/metrics.hpp"
#include "specdet/smallnet.hpp"
#include "specdet/spectral.hpp"

namespace specdet::harness {

namespace fs = std::filesystem;

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw DataError("write failed: " + path.string());
}

inline void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

class RunDirectory {
public:
    RunDirectory(const std::string& root, std::string command, const ExperimentConfig& cfg)
        : root_(root), command_(std::move(command)), seed_(cfg.seed), started_(utc_timestamp()) {
        std::error_code ec;
        fs::create_directories(root_, ec);
        if (ec) throw DataError("cannot create output directory " + root_.string() + ": " + ec.message());
        write_text(root_ / "INCOMPLETE", command_ + " has not finished\n");
        write_text(root_ / "config.txt", to_text(cfg));
        write_manifest("running");
    }
    RunDirectory(const RunDirectory&) = delete;
    RunDirectory& operator=(const RunDirectory&) = delete;

    ~RunDirectory() {
        if (finished_) return;
        try {
            write_manifest("incomplete");
        } catch (...) {
        }
    }

    fs::path path(const std::string& rel) const {
        const fs::path p = root_ / rel;
        fs::create_directories(p.parent_path());
        return p;
    }

    /// Runs fn as a named stage. Errors are rethrown with the stage name in
    /// front, keeping their category, and recorded in the manifest.
    template <class Fn>
    auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
        const auto t0 = std::chrono::steady_clock::now();
        auto done = [&] {
            stages_.push_back({name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
        };
        auto fail = [&](const char* what) {
            done();
            failed_stage_ = name;
            error_ = what;
            write_manifest("incomplete");
        };
        try {
            if constexpr (std::is_void_v<decltype(fn())>) {
                fn();
                done();
            } else {
                auto r = fn();
                done();
                return r;
            }
        } catch (const ConfigError& e) {
            fail(e.what());
            throw ConfigError("stage " + name + ": " + e.what());
        } catch (const DataError& e) {
            fail(e.what());
            throw DataError("stage " + name + ": " + e.what());
        } catch (const NumericError& e) {
            fail(e.what());
            throw NumericError("stage " + name + ": " + e.what());
        } catch (const std::exception& e) {
            fail(e.what());
            throw Error("stage " + name + ": " + e.what());
        }
    }

    void finish() {
        fs::remove(root_ / "INCOMPLETE");
        finished_ = true;
        write_manifest("complete");
    }

    const fs::path& root() const { return root_; }

private:
    void write_manifest(const std::string& status) const {
        nlohmann::ordered_json j;
        j["command"] = command_;
        j["seed"] = seed_;
        j["status"] = status;
        j["started_at"] = started_;
        j["updated_at"] = utc_timestamp();
        if (!failed_stage_.empty()) {
            j["failed_stage"] = failed_stage_;
            j["error"] = error_;
        }
        j["stages"] = nlohmann::ordered_json::array();
        for (const auto& [name, seconds] : stages_) j["stages"].push_back({{"name", name}, {"seconds", seconds}});
        write_json(root_ / "manifest.json", j);
    }

    fs::path root_;
    std::string command_;
    std::uint64_t seed_;
    std::string started_;
    std::vector<std::pair<std::string, double>> stages_;
    std::string failed_stage_, error_;
    bool finished_ = false;
};

// ---------------------------------------------------------------------------
// Stage building blocks

struct Datasets {
    LabeledImages train;
    LabeledImages test;
};

inline LabeledImages load_cifar_files(const std::vector<std::string>& paths) {
    LabeledImages all;
    all.class_count = 10;
    for (const auto& p : paths) {
        auto part = load_cifar10_binary(p);
        for (std::size_t i = 0; i < part.size(); ++i) {
            all.images.push_back(std::move(part.images[i]));
            all.labels.push_back(part.labels[i]);
        }
    }
    return all;
}

inline Datasets load_datasets(const ExperimentConfig& cfg) {
    if (cfg.dataset == "cifar") return {load_cifar_files(cfg.cifar_train), load_cifar_files(cfg.cifar_test)};
    SynthOptions so = cfg.synth;
    so.seed = derive_seed(cfg.seed, "synthetic-data");
    auto split = split_labeled(synth_dataset(so), cfg.target_split, derive_seed(cfg.seed, "target-split"));
    return {std::move(split.train), std::move(split.test)};
}

struct TargetModel {
    Network net;
    std::vector<double> epoch_loss;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
};

inline TargetModel train_target(const ExperimentConfig& cfg, const Datasets& data) {
    TrainOptions opt = cfg.train;
    opt.seed = derive_seed(cfg.seed, "net-train");
    auto init = Network::initialized(architecture_for(cfg), derive_seed(cfg.seed, "net-init"));
    auto r = train_with_history(std::move(init), data.train, opt);
    TargetModel t;
    t.net = std::move(r.net);
    t.epoch_loss = std::move(r.epoch_loss);
    t.train_accuracy = accuracy(t.net, data.train);
    t.test_accuracy = accuracy(t.net, data.test);
    return t;
}

inline nlohmann::ordered_json to_json(const TargetModel& t) {
    nlohmann::ordered_json j;
    j["architecture"] = t.net.architecture().to_string();
    j["parameters"] = t.net.parameter_count();
    j["epoch_loss"] = t.epoch_loss;
    j["train_accuracy"] = t.train_accuracy;
    j["test_accuracy"] = t.test_accuracy;
    return j;
}

/// Test images handed to the attacks; clean negatives come from the same pool.
struct AttackPool {
    std::vector<Image> images;
    std::vector<int> labels;
};

inline AttackPool attack_pool(const ExperimentConfig& cfg, const LabeledImages& test) {
    std::vector<std::size_t> idx(test.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (cfg.attack_samples > 0 && cfg.attack_samples < idx.size()) {
        Rng rng(derive_seed(cfg.seed, "attack-pool"));
        rng.shuffle(idx);
        idx.resize(cfg.attack_samples);
        std::sort(idx.begin(), idx.end());
    }
    AttackPool pool;
    for (auto i : idx) {
        pool.images.push_back(test.images[i]);
        pool.labels.push_back(test.labels[i]);
    }
    return pool;
}

/// "pgd", or "pgd+square" for a cascade.
inline std::string attack_label(const std::vector<AttackKind>& kinds) {
    std::string s;
    for (auto k : kinds) s += (s.empty() ? "" : "+") + to_string(k);
    return s;
}

inline std::vector<AttackOutcome> run_attacks(const ExperimentConfig& cfg, const Network& net, const AttackPool& pool,
                                              const std::vector<AttackKind>& kinds, const std::string& epsilon) {
    std::vector<NamedAttack> attacks;
    for (auto k : kinds) attacks.push_back(make_attack(k, cfg.attack));
    AttackBudget budget;
    budget.epsilon = epsilon_value(epsilon);
    budget.seed = derive_seed(cfg.seed, "attack/" + attack_label(kinds) + "/" + epsilon);
    budget.early_exit = cfg.attack.early_exit;
    return standard_cascade(net, pool.images, pool.labels, attacks, budget, cfg.threads);
}

struct AttackStats {
    std::size_t attacked = 0;      // correctly classified before the attack
    std::size_t successes = 0;
    std::size_t clean_errors = 0;
    double asr = 0.0;
};

/// ASR over the samples the network classified correctly; clean errors are
/// counted separately.
inline AttackStats attack_stats(const std::vector<AttackOutcome>& outcomes) {
    AttackStats s;
    for (const auto& o : outcomes) {
        if (o.attack_name == "clean-error") {
            ++s.clean_errors;
            continue;
        }
        ++s.attacked;
        s.successes += o.success ? 1 : 0;
    }
    if (s.attacked == 0) throw DataError("the network misclassifies every attacked sample");
    s.asr = compute_asr(s.successes, s.attacked);
    return s;
}

inline nlohmann::ordered_json to_json(const AttackStats& s, const std::string& epsilon, const std::string& label) {
    nlohmann::ordered_json j;
    j["epsilon"] = epsilon;
    j["attack"] = label;
    j["attacked"] = s.attacked;
    j["successes"] = s.successes;
    j["clean_errors"] = s.clean_errors;
    j["asr"] = s.asr;
    return j;
}

inline FeatureOptions feature_options(const ExperimentConfig& cfg, DetectionMode mode,
                                      std::vector<std::string> layers = {}) {
    FeatureOptions fo;
    fo.mode = mode;
    fo.layers = layers.empty() ? cfg.layers : std::move(layers);
    fo.spectral.log_scale = cfg.log_scale;
    fo.quantize_8bit = cfg.quantize_8bit;
    fo.threads = cfg.threads;
    return fo;
}

inline DetectionDataset detection_set(const ExperimentConfig& cfg, const Network& net, const AttackPool& pool,
                                      const std::vector<AttackOutcome>& outcomes, const FeatureOptions& fo,
                                      const std::string& label, const std::string& epsilon,
                                      const std::string& variant = "") {
    const auto seed = derive_seed(cfg.seed, "detect/" + label + "/" + epsilon + "/" + to_string(fo.mode) + variant);
    return build_detection_dataset(pool.images, outcomes, net, fo, seed, epsilon_value(epsilon), cfg.detection_samples);
}

inline DetectorModel fit_detector(const ExperimentConfig& cfg, DetectorKind kind, const DetectionDataset& ds) {
    return train_detector(kind, ds.train(), cfg.detector, derive_seed(ds.seed, "detector/" + to_string(kind)),
                          cfg.threads);
}

inline EvalReport score(const DetectorModel& model, const std::vector<FeatureVector>& test, double asr,
                        EvalConfig config) {
    std::vector<std::pair<double, int>> preds;
    preds.reserve(test.size());
    for (const auto& f : test) preds.emplace_back(model.predict(f.values), f.label_value());
    return evaluate_detector(preds, asr, std::move(config));
}

inline std::string report_stem(const std::string& label, const std::string& epsilon, DetectionMode mode,
                               DetectorKind kind) {
    return "reports/" + label + "_" + epsilon_tag(epsilon) + "_" + to_string(mode) + "_" + to_string(kind);
}

// ---------------------------------------------------------------------------
// Commands

struct SweepRow {
    std::string epsilon;
    AttackStats stats;
    std::vector<EvalReport> reports;  // modes x detectors, config order
};

struct PipelineResult {
    TargetModel target;
    std::vector<SweepRow> rows;
};

inline const EvalReport& find_report(const SweepRow& row, DetectionMode mode, DetectorKind kind) {
    for (const auto& r : row.reports)
        if (r.config.mode == to_string(mode) && r.config.detector == to_string(kind)) return r;
    throw DataError("no report for " + to_string(mode) + "/" + to_string(kind));
}

/// Table-1-shaped summary: one row per epsilon, then F1, FNR and ASRD
/// blocks per mode with one column per detector.
inline std::string summary_csv(const ExperimentConfig& cfg, const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "epsilon,ASR";
    for (auto m : cfg.modes)
        for (const char* metric : {"F1", "FNR", "ASRD"})
            for (auto d : cfg.detectors) os << ',' << to_string(m) << '_' << metric << '_' << to_string(d);
    os << '\n';
    for (const auto& row : rows) {
        os << row.epsilon << ',' << percent(row.stats.asr);
        for (auto m : cfg.modes) {
            for (int metric = 0; metric < 3; ++metric) {
                for (auto d : cfg.detectors) {
                    const auto& r = find_report(row, m, d);
                    os << ',' << percent(metric == 0 ? r.f1 : metric == 1 ? r.fnr : r.asrd);
                }
            }
        }
        os << '\n';
    }
    return os.str();
}

inline void save_target(RunDirectory& run, const TargetModel& t) {
    t.net.save(run.path("net.ssnet").string());
    write_json(run.path("target.json"), to_json(t));
}

/// Full sweep in standard (cascade) mode: train the target, attack the test
/// pool at every epsilon, then train and score every detector in every mode.
inline PipelineResult cmd_pipeline(const ExperimentConfig& cfg) {
    validate(cfg);
    RunDirectory run(cfg.out, "pipeline", cfg);
    PipelineResult result;
    const auto data = run.stage("data", [&] { return load_datasets(cfg); });
    result.target = run.stage("train-target", [&] { return train_target(cfg, data); });
    run.stage("save-target", [&] { save_target(run, result.target); });
    const auto& net = result.target.net;
    const auto pool = attack_pool(cfg, data.test);
    const auto label = attack_label(cfg.attacks);

    for (const auto& eps : cfg.epsilons) {
        SweepRow row;
        row.epsilon = eps;
        const auto dir = "eps_" + epsilon_tag(eps) + "/";
        const auto outcomes = run.stage("attack " + eps, [&] {
            auto outs = run_attacks(cfg, net, pool, cfg.attacks, eps);
            save_outcomes(run.path(dir + "outcomes.ssadv").string(),
                          {epsilon_value(eps), cfg.attack.pgd_steps, cfg.seed}, outs);
            save_outcome_index(run.path(dir + "outcomes.csv").string(), outs);
            return outs;
        });
        row.stats = run.stage("asr " + eps, [&] {
            auto s = attack_stats(outcomes);
            write_json(run.path(dir + "asr.json"), to_json(s, eps, label));
            return s;
        });
        for (auto mode : cfg.modes) {
            const auto ds = run.stage("features " + eps + " " + to_string(mode), [&] {
                return detection_set(cfg, net, pool, outcomes, feature_options(cfg, mode), label, eps);
            });
            const auto test = ds.test();
            for (auto kind : cfg.detectors) {
                row.reports.push_back(run.stage("detector " + eps + " " + to_string(mode) + " " + to_string(kind), [&] {
                    const auto model = fit_detector(cfg, kind, ds);
                    auto r = score(model, test, row.stats.asr, {eps, to_string(mode), to_string(kind), label, cfg.seed});
                    write_report(run.path(report_stem(label, eps, mode, kind)).string(), r);
                    return r;
                }));
            }
        }
        result.rows.push_back(std::move(row));
    }
    run.stage("summary", [&] { write_text(run.path("summary.csv"), summary_csv(cfg, result.rows)); });
    run.finish();
    return result;
}

struct IndividualResult {
    TargetModel target;
    std::vector<std::string> attacks;
    std::map<std::string, AttackStats> stats;                  // per attack
    std::vector<EvalReport> reports;                           // attack x mode x detector
    std::map<std::string, std::vector<std::vector<double>>> cross;  // "mode/detector" -> F1[train][test]
};

/// Each configured attack on every pool sample at the first epsilon, with
/// per-attack detectors and a train-on-A / test-on-B F1 matrix.
inline IndividualResult cmd_individual(const ExperimentConfig& cfg) {
    validate(cfg);
    RunDirectory run(cfg.out, "individual", cfg);
    IndividualResult result;
    const auto& eps = cfg.epsilons.front();
    const auto data = run.stage("data", [&] { return load_datasets(cfg); });
    result.target = run.stage("train-target", [&] { return train_target(cfg, data); });
    run.stage("save-target", [&] { save_target(run, result.target); });
    const auto& net = result.target.net;
    const auto pool = attack_pool(cfg, data.test);

    std::map<std::string, std::map<DetectionMode, DetectionDataset>> sets;
    for (auto kind : cfg.attacks) {
        const auto name = to_string(kind);
        result.attacks.push_back(name);
        const auto outcomes = run.stage("attack " + name, [&] { return run_attacks(cfg, net, pool, {kind}, eps); });
        const auto stats = run.stage("asr " + name, [&] {
            auto s = attack_stats(outcomes);
            write_json(run.path("attacks/" + name + "_" + epsilon_tag(eps) + ".json"), to_json(s, eps, name));
            return s;
        });
        result.stats[name] = stats;
        for (auto mode : cfg.modes)
            sets[name][mode] = run.stage("features " + name + " " + to_string(mode), [&] {
                return detection_set(cfg, net, pool, outcomes, feature_options(cfg, mode), name, eps);
            });
    }

    std::ostringstream table;
    table << "mode,detector";
    for (const auto& a : result.attacks) table << ',' << a;
    table << '\n';
    for (auto mode : cfg.modes) {
        for (auto det : cfg.detectors) {
            const auto key = to_string(mode) + "/" + to_string(det);
            auto& matrix = result.cross[key];
            std::vector<double> diagonal;
            for (const auto& train_on : result.attacks) {
                const auto& train_set = sets[train_on][mode];
                const auto model = run.stage("detector " + train_on + " " + key,
                                             [&] { return fit_detector(cfg, det, train_set); });
                std::vector<double> row;
                for (const auto& test_on : result.attacks) {
                    auto r = run.stage("score " + train_on + " on " + test_on + " " + key, [&] {
                        return score(model, sets[test_on][mode].test(), result.stats[test_on].asr,
                                     {eps, to_string(mode), to_string(det), test_on, cfg.seed});
                    });
                    if (train_on == test_on) {
                        write_report(run.path(report_stem(test_on, eps, mode, det)).string(), r);
                        result.reports.push_back(r);
                        diagonal.push_back(r.f1);
                    }
                    row.push_back(r.f1);
                }
                matrix.push_back(std::move(row));
            }
            table << to_string(mode) << ',' << to_string(det);
            for (double f : diagonal) table << ',' << percent(f);
            table << '\n';

            std::ostringstream cross;
            cross << "train\\test";
            for (const auto& a : result.attacks) cross << ',' << a;
            cross << '\n';
            for (std::size_t i = 0; i < result.attacks.size(); ++i) {
                cross << result.attacks[i];
                for (double f : matrix[i]) cross << ',' << percent(f);
                cross << '\n';
            }
            write_text(run.path("cross_f1_" + to_string(mode) + "_" + to_string(det) + ".csv"), cross.str());
        }
    }
    write_text(run.path("individual_f1.csv"), table.str());
    run.finish();
    return result;
}

struct LayerRow {
    std::string layer;
    std::size_t dimension = 0;
    std::vector<double> f1;  // attacks x detectors, config order
};

/// White-box detection from one layer at a time, per attack, at the first
/// epsilon.
inline std::vector<LayerRow> cmd_layer_study(const ExperimentConfig& cfg) {
    validate(cfg);
    RunDirectory run(cfg.out, "layer-study", cfg);
    const auto& eps = cfg.epsilons.front();
    const auto data = run.stage("data", [&] { return load_datasets(cfg); });
    const auto target = run.stage("train-target", [&] { return train_target(cfg, data); });
    run.stage("save-target", [&] { save_target(run, target); });
    const auto& net = target.net;
    const auto pool = attack_pool(cfg, data.test);

    std::vector<std::vector<AttackOutcome>> outcomes;
    std::vector<AttackStats> stats;
    for (auto kind : cfg.attacks) {
        outcomes.push_back(run.stage("attack " + to_string(kind), [&] { return run_attacks(cfg, net, pool, {kind}, eps); }));
        stats.push_back(attack_stats(outcomes.back()));
    }

    std::vector<LayerRow> rows;
    for (const auto& layer : net.spatial_layers()) {
        LayerRow row;
        row.layer = layer;
        row.dimension = whitebox_dimension(net, {layer});
        const auto fo = feature_options(cfg, DetectionMode::white, {layer});
        for (std::size_t a = 0; a < cfg.attacks.size(); ++a) {
            const auto name = to_string(cfg.attacks[a]);
            const auto ds = run.stage("features " + layer + " " + name, [&] {
                return detection_set(cfg, net, pool, outcomes[a], fo, name, eps, "/" + layer);
            });
            for (auto det : cfg.detectors) {
                row.f1.push_back(run.stage("detector " + layer + " " + name + " " + to_string(det), [&] {
                    const auto model = fit_detector(cfg, det, ds);
                    return score(model, ds.test(), stats[a].asr, {eps, "white", to_string(det), name, cfg.seed}).f1;
                }));
            }
        }
        rows.push_back(std::move(row));
    }

    std::ostringstream os;
    os << "layer,dim";
    for (auto kind : cfg.attacks)
        for (auto det : cfg.detectors) os << ',' << to_string(kind) << '_' << to_string(det);
    os << '\n';
    for (const auto& r : rows) {
        os << r.layer << ',' << r.dimension;
        for (double f : r.f1) os << ',' << percent(f);
        os << '\n';
    }
    write_text(run.path("layer_study.csv"), os.str());
    run.finish();
    return rows;
}

struct Fig1Maps {
    std::string attack;
    std::size_t pairs = 0;
    RealMatrix spatial;   // channel mean of the mean difference
    RealMatrix spectral;  // channel sum of accumulated difference spectra
};

/// Collapses per-channel heatmaps to one greyscale map each.
inline Fig1Maps combine_heatmaps(const DiffHeatmaps& h) {
    Fig1Maps m;
    m.spatial = RealMatrix(h.mean_spatial[0].rows, h.mean_spatial[0].cols);
    m.spectral = RealMatrix(h.spectral[0].rows, h.spectral[0].cols);
    for (std::size_t c = 0; c < h.mean_spatial.size(); ++c) {
        for (std::size_t j = 0; j < m.spatial.data.size(); ++j) {
            m.spatial.data[j] += h.mean_spatial[c].data[j] / static_cast<double>(h.mean_spatial.size());
            m.spectral.data[j] += h.spectral[c].data[j];
        }
    }
    return m;
}

/// Successful perturbations only, at most `limit` pairs in sample order.
inline Fig1Maps fig1_maps(const std::vector<AttackOutcome>& outcomes, const std::string& attack, std::size_t limit) {
    std::vector<Image> clean, adv;
    for (const auto& o : outcomes) {
        if (!counts_as_perturbation(o)) continue;
        if (limit > 0 && clean.size() >= limit) break;
        clean.push_back(o.original);
        adv.push_back(o.adversarial);
    }
    if (clean.empty()) throw DataError("attack " + attack + " produced no successful perturbations to accumulate");
    auto m = combine_heatmaps(diff_heatmaps(clean, adv));
    m.attack = attack;
    m.pairs = clean.size();
    return m;
}

inline std::vector<Fig1Maps> cmd_fig1(const ExperimentConfig& cfg) {
    validate(cfg);
    RunDirectory run(cfg.out, "fig1", cfg);
    const auto& eps = cfg.epsilons.front();
    const auto data = run.stage("data", [&] { return load_datasets(cfg); });
    const auto target = run.stage("train-target", [&] { return train_target(cfg, data); });
    run.stage("save-target", [&] { save_target(run, target); });
    const auto pool = attack_pool(cfg, data.test);

    std::vector<Fig1Maps> maps;
    for (auto kind : cfg.attacks) {
        const auto name = to_string(kind);
        const auto outcomes = run.stage("attack " + name, [&] { return run_attacks(cfg, target.net, pool, {kind}, eps); });
        maps.push_back(run.stage("heatmaps " + name, [&] {
            auto m = fig1_maps(outcomes, name, cfg.fig1_samples);
            write_pgm(run.path("fig1/" + name + "_spatial.pgm").string(), m.spatial);
            write_pgm(run.path("fig1/" + name + "_spectral.pgm").string(), m.spectral);
            return m;
        }));
    }
    std::ostringstream os;
    os << "attack_a,attack_b,pairs_a,pairs_b,spectral_ncc\n" << std::setprecision(17);
    for (std::size_t i = 0; i < maps.size(); ++i)
        for (std::size_t j = i + 1; j < maps.size(); ++j)
            os << maps[i].attack << ',' << maps[j].attack << ',' << maps[i].pairs << ',' << maps[j].pairs << ','
               << normalized_cross_correlation(maps[i].spectral, maps[j].spectral) << '\n';
    write_text(run.path("fig1/ncc.csv"), os.str());
    run.finish();
    return maps;
}

// ---------------------------------------------------------------------------
// Single-stage commands; they exchange files so a run can be resumed or
// inspected stage by stage. Reports match the pipeline's for the same config.

inline void cmd_train_target(const ExperimentConfig& cfg) {
    validate(cfg);
    RunDirectory run(cfg.out, "train-target", cfg);
    const auto data = run.stage("data", [&] { return load_datasets(cfg); });
    const auto target = run.stage("train-target", [&] { return train_target(cfg, data); });
    run.stage("save-target", [&] { save_target(run, target); });
    run.finish();
}

inline void cmd_attack(const ExperimentConfig& cfg, const std::string& net_path) {
    validate(cfg);
    RunDirectory run(cfg.out, "attack", cfg);
    const auto net = run.stage("load-net", [&] { return Network::load(net_path); });
    const auto data = run.stage("data", [&] { return load_datasets(cfg); });
    const auto pool = attack_pool(cfg, data.test);
    const auto label = attack_label(cfg.attacks);
    for (const auto& eps : cfg.epsilons) {
        const auto dir = "eps_" + epsilon_tag(eps) + "/";
        run.stage("attack " + eps, [&] {
            const auto outs = run_attacks(cfg, net, pool, cfg.attacks, eps);
            save_outcomes(run.path(dir + "outcomes.ssadv").string(), {epsilon_value(eps), cfg.attack.pgd_steps, cfg.seed},
                          outs);
            save_outcome_index(run.path(dir + "outcomes.csv").string(), outs);
            write_json(run.path(dir + "asr.json"), to_json(attack_stats(outs), eps, label));
        });
    }
    run.finish();
}

/// Finds which configured epsilon an outcome file was produced with.
inline std::string epsilon_of(const ExperimentConfig& cfg, double value) {
    for (const auto& e : cfg.epsilons)
        if (epsilon_value(e) == value) return e;
    throw ConfigError("outcome file epsilon " + std::to_string(value) + " is not in the configured epsilon list");
}

inline void cmd_features(const ExperimentConfig& cfg, const std::string& net_path, const std::string& outcomes_path) {
    validate(cfg);
    RunDirectory run(cfg.out, "features", cfg);
    const auto net = run.stage("load-net", [&] { return Network::load(net_path); });
    OutcomeHeader header;
    const auto outcomes = run.stage("load-outcomes", [&] { return load_outcomes(outcomes_path, &header); });
    const auto eps = epsilon_of(cfg, header.epsilon);
    const auto data = run.stage("data", [&] { return load_datasets(cfg); });
    const auto pool = attack_pool(cfg, data.test);
    for (auto mode : cfg.modes) {
        run.stage("features " + to_string(mode), [&] {
            const auto ds = detection_set(cfg, net, pool, outcomes, feature_options(cfg, mode),
                                          attack_label(cfg.attacks), eps);
            save_detection_dataset(
                run.path("features_" + epsilon_tag(eps) + "_" + to_string(mode) + ".ssfeat").string(), ds);
        });
    }
    run.finish();
}

inline void cmd_train_detector(const ExperimentConfig& cfg, const std::string& features_path) {
    validate(cfg);
    RunDirectory run(cfg.out, "train-detector", cfg);
    const auto ds = run.stage("load-features", [&] { return load_detection_dataset(features_path); });
    const auto stem = fs::path(features_path).stem().string();
    for (auto kind : cfg.detectors) {
        run.stage("detector " + to_string(kind), [&] {
            save_detector(run.path("detector_" + stem + "_" + to_string(kind) + ".ssdet").string(),
                          fit_detector(cfg, kind, ds));
        });
    }
    run.finish();
}

inline EvalReport cmd_evaluate(const ExperimentConfig& cfg, const std::string& features_path,
                               const std::string& detector_path, const std::string& outcomes_path,
                               DetectionMode mode) {
    validate(cfg);
    RunDirectory run(cfg.out, "evaluate", cfg);
    const auto ds = run.stage("load-features", [&] { return load_detection_dataset(features_path); });
    const auto model = run.stage("load-detector", [&] { return load_detector(detector_path); });
    OutcomeHeader header;
    const auto stats = run.stage("asr", [&] { return attack_stats(load_outcomes(outcomes_path, &header)); });
    const auto eps = epsilon_of(cfg, header.epsilon);
    const auto label = attack_label(cfg.attacks);
    const auto r = run.stage("evaluate", [&] {
        auto rep = score(model, ds.test(), stats.asr, {eps, to_string(mode), to_string(model.kind), label, cfg.seed});
        write_report(run.path(report_stem(label, eps, mode, model.kind)).string(), rep);
        return rep;
    });
    run.finish();
    return r;
}

}  // namespace specdet::harness
