// specdet: command line front end for the detection experiments.
//
//   specdet [--config FILE] [--seed N] [--out DIR] [--quantize-8bit] <command>
//
// Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 non-finite numbers, 1 anything else.

#include <iostream>

#include <CLI11.hpp>

#include "specdet/harness/experiment.hpp"

using namespace specdet;
using namespace specdet::harness;

namespace {

void print_target(const TargetModel& t) {
    std::cout << "target: train accuracy " << t.train_accuracy << ", test accuracy " << t.test_accuracy << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral detection of adversarial examples on a small CNN"};
    app.fallthrough();

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out;
    unsigned threads = 0;
    bool quantize = false, print_config = false;
    app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides the config)");
    auto* out_opt = app.add_option("--out", out, "output directory (overrides the config)");
    auto* threads_opt = app.add_option("--threads", threads, "worker threads (overrides the config)");
    app.add_flag("--quantize-8bit", quantize, "round adversarial images to 8-bit levels before feature extraction");
    app.add_flag("--print-config", print_config, "print the effective configuration with all defaults and exit");

    std::string net_path, outcomes_path, features_path, detector_path, mode_name = "black";
    auto* train_target_cmd = app.add_subcommand("train-target", "train the target network");
    auto* attack_cmd = app.add_subcommand("attack", "attack the test pool at every epsilon (standard mode)");
    attack_cmd->add_option("--net", net_path, "trained network (.ssnet)")->required()->check(CLI::ExistingFile);
    auto* features_cmd = app.add_subcommand("features", "spectral features from an outcome file");
    features_cmd->add_option("--net", net_path, "trained network (.ssnet)")->required()->check(CLI::ExistingFile);
    features_cmd->add_option("--outcomes", outcomes_path, "attack outcomes (.ssadv)")->required()->check(CLI::ExistingFile);
    auto* train_detector_cmd = app.add_subcommand("train-detector", "train the configured detectors on a feature file");
    train_detector_cmd->add_option("--features", features_path, "feature file (.ssfeat)")
        ->required()
        ->check(CLI::ExistingFile);
    auto* evaluate_cmd = app.add_subcommand("evaluate", "score a detector on the test split of a feature file");
    evaluate_cmd->add_option("--features", features_path, "feature file (.ssfeat)")->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--detector", detector_path, "detector model (.ssdet)")->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--outcomes", outcomes_path, "outcomes the features came from, for the ASR")
        ->required()
        ->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--mode", mode_name, "black | white, used to label the report");
    auto* pipeline_cmd = app.add_subcommand("pipeline", "full epsilon sweep: attacks, both modes, all detectors");
    auto* individual_cmd = app.add_subcommand("individual", "per-attack detection and cross-attack F1 matrix");
    auto* layer_cmd = app.add_subcommand("layer-study", "white-box detection from one layer at a time");
    auto* fig1_cmd = app.add_subcommand("fig1", "mean spatial and accumulated spectral difference heatmaps");
    app.require_subcommand(0, 1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
        if (seed_opt->count()) cfg.seed = seed;
        if (out_opt->count()) cfg.out = out;
        if (threads_opt->count()) cfg.threads = threads;
        if (quantize) cfg.quantize_8bit = true;

        if (print_config) {
            std::cout << to_text(cfg);
            return 0;
        }
        if (app.get_subcommands().empty()) throw ConfigError("no command given (see --help)");

        if (train_target_cmd->parsed()) {
            cmd_train_target(cfg);
        } else if (attack_cmd->parsed()) {
            cmd_attack(cfg, net_path);
        } else if (features_cmd->parsed()) {
            cmd_features(cfg, net_path, outcomes_path);
        } else if (train_detector_cmd->parsed()) {
            cmd_train_detector(cfg, features_path);
        } else if (evaluate_cmd->parsed()) {
            const auto r = cmd_evaluate(cfg, features_path, detector_path, outcomes_path, parse_detection_mode(mode_name));
            std::cout << csv_header() << '\n' << csv_row(r) << '\n';
        } else if (pipeline_cmd->parsed()) {
            const auto r = cmd_pipeline(cfg);
            print_target(r.target);
            std::cout << summary_csv(cfg, r.rows);
        } else if (individual_cmd->parsed()) {
            const auto r = cmd_individual(cfg);
            print_target(r.target);
            std::ifstream table(fs::path(cfg.out) / "individual_f1.csv");
            std::cout << table.rdbuf();
        } else if (layer_cmd->parsed()) {
            cmd_layer_study(cfg);
            std::ifstream table(fs::path(cfg.out) / "layer_study.csv");
            std::cout << table.rdbuf();
        } else if (fig1_cmd->parsed()) {
            for (const auto& m : cmd_fig1(cfg))
                std::cout << m.attack << ": " << m.pairs << " pairs -> " << (fs::path(cfg.out) / "fig1" / m.attack)
                          << "_{spatial,spectral}.pgm\n";
        }
        std::cout << "output: " << cfg.out << '\n';
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
