#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ecgfreq/csv.hpp"
#include "oracles.hpp"

// These tests drive the installed command-line binary end to end.  The test
// runner passes its location through the ECGFREQ_CLI environment variable.

namespace {

std::string cli_path() {
    const char* p = std::getenv("ECGFREQ_CLI");
    REQUIRE(p != nullptr);
    return p;
}

// Runs the binary with the given arguments, capturing stdout+stderr into
// `log`, and returns its exit code.
int run_cli(const std::string& args, const std::string& log) {
    const std::string cmd = "\"" + cli_path() + "\" " + args + " > \"" + log + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

}  // namespace

TEST_CASE("cli usage errors exit with the configuration code") {
    oracle::TempDir td("cli_usage");
    const std::string log = td.str("log.txt");
    CHECK(run_cli("--help", log) == 0);
    CHECK(slurp(log).find("synth") != std::string::npos);
    CHECK(run_cli("frobnicate", log) == 2);
    CHECK(run_cli("prepare", log) == 2);  // --config is required
}

TEST_CASE("cli distinguishes config, staging, and data failures") {
    oracle::TempDir td("cli_errors");
    const std::string log = td.str("log.txt");

    // A typo anywhere in the config is refused up front.
    write_json(td.str("typo.json"), {{"bogus_knob", 1}});
    CHECK(run_cli("prepare --config " + td.str("typo.json"), log) == 2);
    CHECK(slurp(log).find("unknown config key 'bogus_knob'") != std::string::npos);

    // Malformed JSON is a config error too.
    {
        std::ofstream out(td.str("broken.json"));
        out << "{ nope";
    }
    CHECK(run_cli("prepare --config " + td.str("broken.json"), log) == 2);
    CHECK(run_cli("prepare --config " + td.str("absent.json"), log) == 2);

    // Stages refuse to run before their inputs exist.
    write_json(td.str("ok.json"), {{"manifest", td.str("data/manifest.csv")},
                                   {"output_root", td.str("out")}});
    CHECK(run_cli("split --config " + td.str("ok.json"), log) == 3);
    CHECK(slurp(log).find("run the 'prepare' stage first") != std::string::npos);
    CHECK(run_cli("train --config " + td.str("ok.json"), log) == 3);

    // A config that points at a missing dataset is a data problem, not usage.
    CHECK(run_cli("prepare --config " + td.str("ok.json"), log) == 4);
}

TEST_CASE("synth writes a loadable manifest") {
    oracle::TempDir td("cli_synth");
    const std::string log = td.str("log.txt");
    const int rc = run_cli(
        "synth --out " + td.str("data") + " --patients 6 --records 2 --fs 500 --duration 4 --seed 7",
        log);
    REQUIRE(rc == 0);
    CHECK(slurp(log).find("12 records") != std::string::npos);
    ecgfreq::csv::Table t = ecgfreq::csv::read_file(td.str("data/manifest.csv"));
    CHECK(t.rows.size() == 12);
    // First half of the patients carry the positive label.
    std::size_t afib = 0;
    for (const auto& r : t.rows) afib += (r[t.col("label")] == "AFIB");
    CHECK(afib == 6);
}

TEST_CASE("full pipeline runs on a small synthetic dataset") {
    oracle::TempDir td("cli_pipeline");
    const std::string log = td.str("log.txt");

    REQUIRE(run_cli("synth --out " + td.str("data") +
                        " --patients 8 --records 1 --fs 500 --duration 4 --seed 11",
                    log) == 0);

    const nlohmann::json cfg = {
        {"manifest", td.str("data/manifest.csv")},
        {"output_root", td.str("out")},
        {"target_fs", {62, 100}},
        {"duration_s", 4},
        {"split", {{"test_frac", 0.3}, {"k", 2}, {"seed", 3}}},
        {"archs", {"cnn1d"}},
        {"train", {{"max_epochs", 1}, {"patience", 1}, {"batch_size", 8}}},
        {"metrics", {{"grid_points", 21}}},
    };
    write_json(td.str("cfg.json"), cfg);
    const std::string c = " --config " + td.str("cfg.json");

    REQUIRE(run_cli("prepare" + c, log) == 0);
    CHECK(slurp(log).find("8 accepted") != std::string::npos);
    for (const char* fs : {"62hz", "100hz"})
        CHECK(std::ifstream(td.str("out/proc/") + fs + "/manifest.csv").good());
    // The resolved config is persisted next to the artifacts it produced.
    nlohmann::json resolved;
    {
        std::ifstream in(td.str("out/config.resolved.json"));
        REQUIRE(in.good());
        in >> resolved;
    }
    CHECK(resolved.at("config_hash").get<std::string>().size() == 16);
    CHECK(resolved.at("duration_s") == 4);

    REQUIRE(run_cli("split" + c, log) == 0);
    const std::string first_split = slurp(td.str("out/split/split.csv"));
    // Re-running the stage with the same seed reproduces the file exactly.
    REQUIRE(run_cli("split" + c, log) == 0);
    CHECK(slurp(td.str("out/split/split.csv")) == first_split);

    REQUIRE(run_cli("train" + c, log) == 0);
    const std::string train_log = slurp(log);
    for (const char* cell : {"cnn1d/62hz", "cnn1d/100hz"})
        CHECK(train_log.find(std::string("train ") + cell) != std::string::npos);
    for (const char* fs : {"62hz", "100hz"})
        for (const char* fold : {"fold0", "fold1"}) {
            const std::string run = td.str("out/runs/cnn1d/") + fs + "/" + fold;
            CHECK(std::ifstream(run + "/checkpoint.eckp").good());
            CHECK(std::ifstream(run + "/epochs.csv").good());
        }

    REQUIRE(run_cli("eval" + c, log) == 0);
    for (const char* fs : {"62hz", "100hz"}) {
        const std::string dir = td.str("out/eval/cnn1d/") + fs;
        CHECK(std::ifstream(dir + "/val_fold0.csv").good());
        CHECK(std::ifstream(dir + "/val_fold1.csv").good());
        CHECK(std::ifstream(dir + "/test_ensemble.csv").good());
    }

    REQUIRE(run_cli("report" + c, log) == 0);
    nlohmann::json metrics;
    {
        std::ifstream in(td.str("out/report/metrics.json"));
        REQUIRE(in.good());
        in >> metrics;
    }
    const nlohmann::json& cells = metrics.at("cells");
    REQUIRE(cells.is_array());
    REQUIRE(cells.size() == 2);
    for (const auto& cell : cells) {
        CHECK(cell.at("arch") == "cnn1d");
        CHECK(cell.at("n_folds") == 2);
        CHECK(cell.at("test").contains("auroc"));
        CHECK(cell.at("val_mean").contains("f1"));
    }
    CHECK(cells[0].at("fs_hz") == 62);
    CHECK(cells[1].at("fs_hz") == 100);
    // Two frequencies of one architecture cannot support the cross-grid
    // ordering checks, and the report says so rather than guessing.
    CHECK(metrics.at("qualitative_orderings").at("complete").get<bool>() == false);
    CHECK(std::ifstream(td.str("out/report/table.csv")).good());

    // eval on a narrowed grid still works after the fact;
    // asking for an unconfigured frequency is refused as a usage error.
    CHECK(run_cli("eval" + c + " --fs 62", log) == 0);
    CHECK(run_cli("eval" + c + " --fs 250", log) == 2);
    CHECK(run_cli("eval" + c + " --arch cnnlstm", log) == 2);
}
