// ecgfreq: batch front-end for the sampling-frequency study pipeline.
//
//   ecgfreq synth   --out DIR [--patients N] [--records N] [--fs HZ] [--seed N]
//   ecgfreq prepare --config cfg.json
//   ecgfreq split   --config cfg.json [--seed N]
//   ecgfreq train   --config cfg.json [--arch A]... [--fs HZ]... [--seed N]
//   ecgfreq eval    --config cfg.json [--arch A]... [--fs HZ]...
//   ecgfreq report  --config cfg.json [--arch A]... [--fs HZ]...
//
// Exit codes: 0 success, 2 configuration error, 3 missing upstream stage,
// 4 data error, 1 unexpected failure.

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ecgfreq/experiment.hpp"
#include "ecgfreq/synth.hpp"

namespace {

int exit_code_for(const ecgfreq::Error& e) {
    switch (e.code()) {
        case ecgfreq::Errc::ConfigError:
            return 2;
        case ecgfreq::Errc::MissingStage:
            return 3;
        default:
            return 4;
    }
}

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> archs;
    std::vector<std::uint32_t> fs_list;
    std::int64_t seed = -1;  // -1 = not given
};

// Load the user's config file and fold CLI overrides into it *before*
// materialization so the config hash reflects what actually ran.
ecgfreq::ExperimentConfig load_with_overrides(const CommonArgs& args) {
    std::ifstream in(args.config_path);
    if (!in) ecgfreq::fail(ecgfreq::Errc::ConfigError, "cannot open config file: " + args.config_path);
    nlohmann::json user;
    try {
        user = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        ecgfreq::fail(ecgfreq::Errc::ConfigError,
                      "config file " + args.config_path + " is not valid JSON: " + e.what());
    }
    if (args.seed >= 0) {
        user["split"]["seed"] = args.seed;
        user["train"]["seed"] = args.seed;
    }
    return ecgfreq::parse_config(user);
}

ecgfreq::CellFilter make_filter(const CommonArgs& args) {
    ecgfreq::CellFilter f;
    for (const std::string& a : args.archs) f.archs.push_back(ecgfreq::nn::parse_arch(a));
    f.fs_list = args.fs_list;
    return f;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool cell_filters, bool seed) {
    cmd->add_option("--config", args.config_path, "experiment config JSON")->required();
    if (cell_filters) {
        cmd->add_option("--arch", args.archs, "restrict to architecture (cnn1d|cnnlstm), repeatable");
        cmd->add_option("--fs", args.fs_list, "restrict to sampling frequency in Hz, repeatable");
    }
    if (seed) cmd->add_option("--seed", args.seed, "override split/train seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ECG sampling-frequency study pipeline"};
    app.require_subcommand(1);

    CommonArgs args;

    // synth has its own small argument set.
    std::string synth_out;
    ecgfreq::synth::SynthSpec synth_spec;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic ECG dataset + manifest");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--patients", synth_spec.n_patients, "number of patients (first half AFIB)");
    synth->add_option("--records", synth_spec.records_per_patient, "records per patient");
    synth->add_option("--fs", synth_spec.fs_hz, "native sampling frequency in Hz");
    synth->add_option("--duration", synth_spec.duration_s, "record duration in seconds");
    synth->add_option("--seed", synth_spec.seed, "generator seed");

    CLI::App* prepare = app.add_subcommand("prepare", "clean, QC, resample and normalize records");
    add_common(prepare, args, false, false);
    CLI::App* split = app.add_subcommand("split", "patient-safe holdout, balancing and k-fold split");
    add_common(split, args, false, true);
    CLI::App* train = app.add_subcommand("train", "cross-validated training per (arch, fs) cell");
    add_common(train, args, true, true);
    CLI::App* eval_cmd = app.add_subcommand("eval", "fold/ensemble predictions from checkpoints");
    add_common(eval_cmd, args, true, false);
    CLI::App* report = app.add_subcommand("report", "aggregate metrics, curves and calibration");
    add_common(report, args, true, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        // CLI11 returns 0 for --help; anything else is a usage/config problem.
        return rc == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) {
            ecgfreq::DatasetManifest m = ecgfreq::synth::generate_dataset(synth_out, synth_spec);
            std::cout << "synth: wrote " << m.entries.size() << " records for "
                      << synth_spec.n_patients << " patients under " << synth_out << "\n";
            return 0;
        }

        ecgfreq::ExperimentConfig cfg = load_with_overrides(args);
        std::cout << "config " << cfg.config_hash << " (" << args.config_path << ")\n";

        if (prepare->parsed()) {
            ecgfreq::PrepareSummary s = ecgfreq::cmd_prepare(cfg);
            std::cout << "prepare: " << s.n_input << " records in, " << s.n_accepted
                      << " accepted, " << s.n_rejected << " rejected by QC\n";
        } else if (split->parsed()) {
            ecgfreq::SplitSummary s = ecgfreq::cmd_split(cfg);
            std::cout << "split: " << s.n_test_patients << " test patients, "
                      << s.n_fold_patients << " fold patients, " << s.n_excluded_patients
                      << " excluded; balanced pool " << s.n_balanced_records << " records\n";
        } else if (train->parsed()) {
            ecgfreq::TrainSummary s = ecgfreq::cmd_train(cfg, make_filter(args));
            for (const auto& r : s.rows)
                std::cout << "train " << r.cell << " fold" << r.fold << ": best epoch "
                          << r.best_epoch << " (monitored value "
                          << ecgfreq::csv::fmt_short(r.best_val_metric) << ")\n";
        } else if (eval_cmd->parsed()) {
            ecgfreq::EvalSummary s = ecgfreq::cmd_eval(cfg, make_filter(args));
            for (const auto& r : s.rows) {
                std::cout << "eval " << r.cell << ": val AUROC";
                for (double a : r.val_auroc) std::cout << ' ' << ecgfreq::csv::fmt_short(a);
                std::cout << "; ensemble test AUROC " << ecgfreq::csv::fmt_short(r.test_auroc)
                          << "\n";
            }
        } else if (report->parsed()) {
            ecgfreq::ReportSummary s = ecgfreq::cmd_report(cfg, make_filter(args));
            const auto& cells = s.metrics.at("cells");
            std::cout << "report: " << cells.size() << " (arch, fs) cells -> "
                      << (ecgfreq::StagePaths(cfg.output_root).report_dir().string()) << "\n";
            const auto& ord = s.metrics.at("qualitative_orderings");
            if (ord.at("complete").get<bool>()) {
                for (const auto& c : ord.at("checks"))
                    std::cout << "  ordering " << c.at("name").get<std::string>() << ": "
                              << (c.at("pass").get<bool>() ? "holds" : "does not hold") << " ("
                              << ecgfreq::csv::fmt_short(c.at("value").get<double>()) << " "
                              << c.at("relation").get<std::string>() << " "
                              << ecgfreq::csv::fmt_short(c.at("threshold").get<double>()) << ")\n";
            } else {
                std::cout << "  orderings skipped: full 2-arch x 4-frequency grid not present\n";
            }
        }
        return 0;
    } catch (const ecgfreq::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
