#pragma once

// Experiment orchestration: a JSON config is materialized into a fully
// resolved parameter set, hashed, and driven through five stages
// (prepare -> split -> train -> eval -> report).  Every stage writes its
// artifacts under one output root and stamps them with the config hash so
// any file can be traced back to the exact configuration that produced it.
//
// Stage layout under <output_root>/:
//   config.resolved.json
//   qc.csv
//   proc/<fs>hz/<record_id>.ecgb + manifest.csv     (prepare)
//   split/split.csv + balanced_manifest.csv          (split)
//   runs/<arch>/<fs>hz/fold<i>/checkpoint.eckp + epochs.csv   (train)
//   eval/<arch>/<fs>hz/val_fold<i>.csv + test_ensemble.csv    (eval)
//   report/metrics.json, table.csv, confusion.csv,
//          curves/*.csv, calibration/*.csv           (report)

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ecgfreq/cohort.hpp"
#include "ecgfreq/csv.hpp"
#include "ecgfreq/ecg_store.hpp"
#include "ecgfreq/errors.hpp"
#include "ecgfreq/metrics.hpp"
#include "ecgfreq/models.hpp"
#include "ecgfreq/preprocess.hpp"
#include "ecgfreq/rng.hpp"
#include "ecgfreq/trainer.hpp"

namespace ecgfreq {

namespace stdfs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config hash
// ---------------------------------------------------------------------------

// FNV-1a 64-bit over the canonical (key-sorted) JSON dump.
inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= static_cast<std::uint64_t>(c);
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::string manifest;     // path to the raw dataset manifest CSV
    std::string output_root;  // directory receiving all stage artifacts

    std::vector<std::uint32_t> target_fs;  // sampling frequencies under study
    std::uint32_t duration_s = 10;         // segment length in seconds
    double clip_mv = 32.0;                 // amplitude clip before normalization
    QcThresholds qc;

    double split_test_frac = 0.3;
    std::uint32_t split_k = 5;
    std::uint64_t split_seed = 42;

    std::vector<nn::ArchId> archs;
    train::TrainConfig train_base;                      // shared across arch x fs
    std::map<nn::ArchId, train::TrainConfig> train_arch;  // per-arch overrides

    std::size_t metrics_n_bins = 10;
    double metrics_tau = 0.5;
    std::size_t metrics_grid_points = 101;

    json resolved;            // fully materialized configuration
    std::string config_hash;  // FNV-1a of resolved.dump()

    const train::TrainConfig& train_for(nn::ArchId arch) const {
        auto it = train_arch.find(arch);
        return it == train_arch.end() ? train_base : it->second;
    }
};

namespace detail {

inline json config_defaults() {
    json train = {
        {"learning_rate", 1e-3}, {"batch_size", 64},   {"max_epochs", 100},
        {"patience", 10},        {"monitor", "val_f1"}, {"dropout_p", 0.3},
        {"class_weights", "auto"}, {"seed", nullptr},
        {"cnn1d", json::object()}, {"cnnlstm", json::object()},
    };
    return json{
        {"manifest", "manifest.csv"},
        {"output_root", "out"},
        {"target_fs", json::array({62, 100, 250, 500})},
        {"duration_s", 10},
        {"clip_mv", 32.0},
        {"qc",
         {{"flatline_std", 1e-4},
          {"noise_cutoff_frac", 0.4},
          {"noise_power_frac", 0.5}}},
        {"split", {{"test_frac", 0.3}, {"k", 5}, {"seed", 42}}},
        {"archs", json::array({"cnn1d", "cnnlstm"})},
        {"train", train},
        {"metrics", {{"n_bins", 10}, {"tau", 0.5}, {"grid_points", 101}}},
    };
}

// Merge user values over defaults.  Unknown keys are config errors so typos
// surface instead of silently reverting to defaults.  Sampling frequency must
// not change the training recipe, so any attempt to key training parameters
// by frequency ("per_fs") is refused outright.
inline void merge_config(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object())
        fail(Errc::ConfigError, "config section '" + (prefix.empty() ? "<root>" : prefix) +
                                    "' must be a JSON object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it.key() == "per_fs")
            fail(Errc::ConfigError,
                 "config key '" + path +
                     "': training parameters may not vary with sampling frequency");
        if (!base.contains(it.key()))
            fail(Errc::ConfigError, "unknown config key '" + path + "'");
        json& slot = base[it.key()];
        // Per-arch override blocks stay sparse here; their keys are validated
        // against the full train block when the config is parsed.
        const bool arch_block = path == "train.cnn1d" || path == "train.cnnlstm";
        if (slot.is_object() && it.value().is_object() && !arch_block) {
            merge_config(slot, it.value(), path);
        } else {
            slot = it.value();
        }
    }
}

inline double need_number(const json& j, const std::string& path) {
    if (!j.is_number()) fail(Errc::ConfigError, "config key '" + path + "' must be a number");
    return j.get<double>();
}

inline std::uint64_t need_uint(const json& j, const std::string& path) {
    if (!j.is_number_integer() || j.get<std::int64_t>() < 0)
        fail(Errc::ConfigError, "config key '" + path + "' must be a non-negative integer");
    return j.get<std::uint64_t>();
}

inline std::string need_string(const json& j, const std::string& path) {
    if (!j.is_string()) fail(Errc::ConfigError, "config key '" + path + "' must be a string");
    return j.get<std::string>();
}

inline train::Monitor parse_monitor(const std::string& s, const std::string& path) {
    if (s == "val_f1") return train::Monitor::VAL_F1;
    if (s == "val_loss") return train::Monitor::VAL_LOSS;
    fail(Errc::ConfigError, "config key '" + path + "' must be 'val_f1' or 'val_loss', got '" + s + "'");
}

inline train::TrainConfig parse_train_block(const json& t, const std::string& prefix,
                                            std::uint64_t fallback_seed) {
    train::TrainConfig cfg;
    cfg.learning_rate = need_number(t.at("learning_rate"), prefix + ".learning_rate");
    if (!(cfg.learning_rate > 0))
        fail(Errc::ConfigError, "config key '" + prefix + ".learning_rate' must be positive");
    cfg.batch_size = static_cast<std::size_t>(need_uint(t.at("batch_size"), prefix + ".batch_size"));
    if (cfg.batch_size == 0)
        fail(Errc::ConfigError, "config key '" + prefix + ".batch_size' must be at least 1");
    cfg.max_epochs = static_cast<std::size_t>(need_uint(t.at("max_epochs"), prefix + ".max_epochs"));
    if (cfg.max_epochs == 0)
        fail(Errc::ConfigError, "config key '" + prefix + ".max_epochs' must be at least 1");
    cfg.patience = static_cast<std::size_t>(need_uint(t.at("patience"), prefix + ".patience"));
    if (cfg.patience == 0)
        fail(Errc::ConfigError, "config key '" + prefix + ".patience' must be at least 1");
    cfg.monitor = parse_monitor(need_string(t.at("monitor"), prefix + ".monitor"), prefix + ".monitor");
    cfg.dropout_p = need_number(t.at("dropout_p"), prefix + ".dropout_p");
    if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0))
        fail(Errc::ConfigError, "config key '" + prefix + ".dropout_p' must be in [0, 1)");
    const json& cw = t.at("class_weights");
    if (cw.is_string()) {
        if (cw.get<std::string>() != "auto")
            fail(Errc::ConfigError,
                 "config key '" + prefix + ".class_weights' must be \"auto\" or [w0, w1]");
        cfg.class_weights.reset();  // inverse-frequency weights computed per fold
    } else if (cw.is_array() && cw.size() == 2 && cw[0].is_number() && cw[1].is_number()) {
        const double w0 = cw[0].get<double>(), w1 = cw[1].get<double>();
        if (!(w0 > 0) || !(w1 > 0))
            fail(Errc::ConfigError, "config key '" + prefix + ".class_weights' entries must be positive");
        cfg.class_weights = std::make_pair(w0, w1);
    } else {
        fail(Errc::ConfigError,
             "config key '" + prefix + ".class_weights' must be \"auto\" or [w0, w1]");
    }
    const json& seed = t.at("seed");
    if (seed.is_null())
        cfg.seed = fallback_seed;
    else
        cfg.seed = need_uint(seed, prefix + ".seed");
    return cfg;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& user) {
    json resolved = detail::config_defaults();
    detail::merge_config(resolved, user, "");

    ExperimentConfig cfg;
    cfg.manifest = detail::need_string(resolved.at("manifest"), "manifest");
    cfg.output_root = detail::need_string(resolved.at("output_root"), "output_root");
    if (cfg.manifest.empty()) fail(Errc::ConfigError, "config key 'manifest' must not be empty");
    if (cfg.output_root.empty()) fail(Errc::ConfigError, "config key 'output_root' must not be empty");

    const json& tfs = resolved.at("target_fs");
    if (!tfs.is_array() || tfs.empty())
        fail(Errc::ConfigError, "config key 'target_fs' must be a non-empty array");
    for (const json& f : tfs) {
        std::uint64_t v = detail::need_uint(f, "target_fs[]");
        if (v != 62 && v != 100 && v != 250 && v != 500)
            fail(Errc::ConfigError,
                 "config key 'target_fs' entries must be one of 62, 100, 250, 500; got " +
                     std::to_string(v));
        if (std::find(cfg.target_fs.begin(), cfg.target_fs.end(),
                      static_cast<std::uint32_t>(v)) != cfg.target_fs.end())
            fail(Errc::ConfigError, "config key 'target_fs' has duplicate entry " + std::to_string(v));
        cfg.target_fs.push_back(static_cast<std::uint32_t>(v));
    }

    cfg.duration_s = static_cast<std::uint32_t>(detail::need_uint(resolved.at("duration_s"), "duration_s"));
    if (cfg.duration_s == 0) fail(Errc::ConfigError, "config key 'duration_s' must be at least 1");
    cfg.clip_mv = detail::need_number(resolved.at("clip_mv"), "clip_mv");
    if (!(cfg.clip_mv > 0)) fail(Errc::ConfigError, "config key 'clip_mv' must be positive");

    const json& qc = resolved.at("qc");
    cfg.qc.flatline_std = detail::need_number(qc.at("flatline_std"), "qc.flatline_std");
    cfg.qc.noise_cutoff_frac = detail::need_number(qc.at("noise_cutoff_frac"), "qc.noise_cutoff_frac");
    cfg.qc.noise_power_frac = detail::need_number(qc.at("noise_power_frac"), "qc.noise_power_frac");
    if (!(cfg.qc.flatline_std > 0)) fail(Errc::ConfigError, "config key 'qc.flatline_std' must be positive");
    if (!(cfg.qc.noise_cutoff_frac > 0 && cfg.qc.noise_cutoff_frac < 0.5))
        fail(Errc::ConfigError, "config key 'qc.noise_cutoff_frac' must be in (0, 0.5)");
    if (!(cfg.qc.noise_power_frac > 0 && cfg.qc.noise_power_frac < 1))
        fail(Errc::ConfigError, "config key 'qc.noise_power_frac' must be in (0, 1)");

    const json& split = resolved.at("split");
    cfg.split_test_frac = detail::need_number(split.at("test_frac"), "split.test_frac");
    if (!(cfg.split_test_frac > 0 && cfg.split_test_frac < 1))
        fail(Errc::ConfigError, "config key 'split.test_frac' must lie strictly between 0 and 1");
    cfg.split_k = static_cast<std::uint32_t>(detail::need_uint(split.at("k"), "split.k"));
    if (cfg.split_k < 2) fail(Errc::ConfigError, "config key 'split.k' must be at least 2");
    cfg.split_seed = detail::need_uint(split.at("seed"), "split.seed");

    const json& archs = resolved.at("archs");
    if (!archs.is_array() || archs.empty())
        fail(Errc::ConfigError, "config key 'archs' must be a non-empty array");
    for (const json& a : archs) {
        nn::ArchId id = nn::parse_arch(detail::need_string(a, "archs[]"));
        if (std::find(cfg.archs.begin(), cfg.archs.end(), id) != cfg.archs.end())
            fail(Errc::ConfigError, "config key 'archs' has duplicate entry '" + nn::arch_name(id) + "'");
        cfg.archs.push_back(id);
    }

    const json& train = resolved.at("train");
    cfg.train_base = detail::parse_train_block(train, "train", cfg.split_seed);
    for (nn::ArchId id : {nn::ArchId::CNN1D, nn::ArchId::CNN_LSTM}) {
        const json& over = train.at(nn::arch_name(id));
        if (!over.is_object())
            fail(Errc::ConfigError, "config key 'train." + nn::arch_name(id) + "' must be an object");
        if (over.empty()) continue;
        json merged = train;
        merged.erase("cnn1d");
        merged.erase("cnnlstm");
        detail::merge_config(merged, over, "train." + nn::arch_name(id));
        cfg.train_arch[id] =
            detail::parse_train_block(merged, "train." + nn::arch_name(id), cfg.split_seed);
    }

    const json& met = resolved.at("metrics");
    cfg.metrics_n_bins = static_cast<std::size_t>(detail::need_uint(met.at("n_bins"), "metrics.n_bins"));
    if (cfg.metrics_n_bins == 0) fail(Errc::ConfigError, "config key 'metrics.n_bins' must be at least 1");
    cfg.metrics_tau = detail::need_number(met.at("tau"), "metrics.tau");
    if (!(cfg.metrics_tau >= 0 && cfg.metrics_tau <= 1))
        fail(Errc::ConfigError, "config key 'metrics.tau' must be in [0, 1]");
    cfg.metrics_grid_points =
        static_cast<std::size_t>(detail::need_uint(met.at("grid_points"), "metrics.grid_points"));
    if (cfg.metrics_grid_points < 2)
        fail(Errc::ConfigError, "config key 'metrics.grid_points' must be at least 2");

    // The decision threshold used for validation F1 during training matches
    // the reporting threshold.
    cfg.train_base.tau = cfg.metrics_tau;
    for (auto& [id, tc] : cfg.train_arch) tc.tau = cfg.metrics_tau;

    cfg.resolved = resolved;
    cfg.config_hash = fnv1a_hex(resolved.dump());
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::ConfigError, "cannot open config file: " + path);
    json user;
    try {
        user = json::parse(in);
    } catch (const json::exception& e) {
        fail(Errc::ConfigError, "config file " + path + " is not valid JSON: " + e.what());
    }
    return parse_config(user);
}

// ---------------------------------------------------------------------------
// Stage paths
// ---------------------------------------------------------------------------

struct StagePaths {
    stdfs::path root;

    explicit StagePaths(const std::string& output_root) : root(output_root) {}

    stdfs::path resolved_config() const { return root / "config.resolved.json"; }
    stdfs::path qc_csv() const { return root / "qc.csv"; }
    stdfs::path proc_dir(std::uint32_t fs) const {
        return root / "proc" / (std::to_string(fs) + "hz");
    }
    stdfs::path proc_manifest(std::uint32_t fs) const { return proc_dir(fs) / "manifest.csv"; }
    stdfs::path split_dir() const { return root / "split"; }
    stdfs::path split_csv() const { return split_dir() / "split.csv"; }
    stdfs::path balanced_manifest() const { return split_dir() / "balanced_manifest.csv"; }
    stdfs::path run_dir(nn::ArchId arch, std::uint32_t fs, std::uint32_t fold) const {
        return root / "runs" / nn::arch_name(arch) / (std::to_string(fs) + "hz") /
               ("fold" + std::to_string(fold));
    }
    stdfs::path checkpoint(nn::ArchId arch, std::uint32_t fs, std::uint32_t fold) const {
        return run_dir(arch, fs, fold) / "checkpoint.eckp";
    }
    stdfs::path epochs_csv(nn::ArchId arch, std::uint32_t fs, std::uint32_t fold) const {
        return run_dir(arch, fs, fold) / "epochs.csv";
    }
    stdfs::path eval_dir(nn::ArchId arch, std::uint32_t fs) const {
        return root / "eval" / nn::arch_name(arch) / (std::to_string(fs) + "hz");
    }
    stdfs::path val_predictions(nn::ArchId arch, std::uint32_t fs, std::uint32_t fold) const {
        return eval_dir(arch, fs) / ("val_fold" + std::to_string(fold) + ".csv");
    }
    stdfs::path test_predictions(nn::ArchId arch, std::uint32_t fs) const {
        return eval_dir(arch, fs) / "test_ensemble.csv";
    }
    stdfs::path report_dir() const { return root / "report"; }
    stdfs::path metrics_json() const { return report_dir() / "metrics.json"; }
    stdfs::path table_csv() const { return report_dir() / "table.csv"; }
    stdfs::path confusion_csv() const { return report_dir() / "confusion.csv"; }
    stdfs::path curves_dir() const { return report_dir() / "curves"; }
    stdfs::path calibration_dir() const { return report_dir() / "calibration"; }
};

namespace detail {

inline void require_artifact(const stdfs::path& p, const std::string& producing_stage) {
    if (!stdfs::exists(p))
        fail(Errc::MissingStage, "missing artifact " + p.string() + "; run the '" +
                                     producing_stage + "' stage first");
}

inline std::string cell_tag(nn::ArchId arch, std::uint32_t fs) {
    return nn::arch_name(arch) + "/" + std::to_string(fs) + "hz";
}

}  // namespace detail

// Restrict a configured (arch, fs) grid by optional CLI filters.
struct CellFilter {
    std::vector<nn::ArchId> archs;        // empty = all configured
    std::vector<std::uint32_t> fs_list;   // empty = all configured

    bool wants(nn::ArchId a) const {
        return archs.empty() || std::find(archs.begin(), archs.end(), a) != archs.end();
    }
    bool wants_fs(std::uint32_t fs) const {
        return fs_list.empty() ||
               std::find(fs_list.begin(), fs_list.end(), fs) != fs_list.end();
    }
};

inline std::vector<std::pair<nn::ArchId, std::uint32_t>> select_cells(const ExperimentConfig& cfg,
                                                                      const CellFilter& filter) {
    for (nn::ArchId a : filter.archs)
        if (std::find(cfg.archs.begin(), cfg.archs.end(), a) == cfg.archs.end())
            fail(Errc::ConfigError,
                 "architecture '" + nn::arch_name(a) + "' is not in the configured arch list");
    for (std::uint32_t fs : filter.fs_list)
        if (std::find(cfg.target_fs.begin(), cfg.target_fs.end(), fs) == cfg.target_fs.end())
            fail(Errc::ConfigError,
                 "sampling frequency " + std::to_string(fs) + " is not in the configured target_fs list");
    std::vector<std::pair<nn::ArchId, std::uint32_t>> cells;
    for (nn::ArchId a : cfg.archs) {
        if (!filter.wants(a)) continue;
        for (std::uint32_t fs : cfg.target_fs)
            if (filter.wants_fs(fs)) cells.emplace_back(a, fs);
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Stage: prepare
// ---------------------------------------------------------------------------

struct PrepareSummary {
    std::size_t n_input = 0;
    std::size_t n_accepted = 0;
    std::size_t n_rejected = 0;
};

inline void write_resolved_config(const ExperimentConfig& cfg, const StagePaths& paths) {
    stdfs::create_directories(paths.root);
    json out = cfg.resolved;
    out["config_hash"] = cfg.config_hash;
    std::ofstream f(paths.resolved_config());
    if (!f) fail(Errc::IoFailure, "cannot write " + paths.resolved_config().string());
    f << out.dump(2) << "\n";
    if (!f) fail(Errc::IoFailure, "failed writing " + paths.resolved_config().string());
}

// Clean -> clip -> quality-check each record, then emit one resampled,
// normalized, fixed-duration copy per target frequency.  Labels are carried
// through untouched; records failing QC are logged and dropped.
inline PrepareSummary cmd_prepare(const ExperimentConfig& cfg) {
    StagePaths paths(cfg.output_root);
    DatasetManifest source = read_manifest(cfg.manifest);
    if (source.entries.empty()) fail(Errc::EmptyManifest, "manifest has no records: " + cfg.manifest);

    write_resolved_config(cfg, paths);
    for (std::uint32_t fs : cfg.target_fs) stdfs::create_directories(paths.proc_dir(fs));

    std::vector<QcReport> qc_rows;
    std::map<std::uint32_t, DatasetManifest> out_manifests;
    for (std::uint32_t fs : cfg.target_fs)
        out_manifests[fs].source_path = paths.proc_manifest(fs).string();

    PrepareSummary summary;
    summary.n_input = source.entries.size();

    const stdfs::path source_dir = stdfs::path(source.source_path).parent_path();
    for (const ManifestEntry& entry : source.entries) {
        stdfs::path rec_path = entry.path;
        if (rec_path.is_relative()) rec_path = source_dir / rec_path;
        EcgRecord rec = load_record(rec_path.string());
        rec.record_id = entry.record_id;
        rec.patient_id = entry.patient_id;
        if (rec.fs_hz != entry.fs_hz)
            fail(Errc::DataError, "record " + entry.record_id + ": manifest fs_hz " +
                                      std::to_string(entry.fs_hz) + " but file header says " +
                                      std::to_string(rec.fs_hz));
        if (rec.n_leads != 12)
            fail(Errc::DataError, "record " + entry.record_id + ": expected 12 leads, got " +
                                      std::to_string(rec.n_leads));

        rec = clean_nonfinite(std::move(rec));
        rec = clip_amplitude(std::move(rec), cfg.clip_mv);
        // Records are nominally duration_s long already; a longer recording is
        // cut to its leading window here so resampling never warps time.
        const std::uint64_t nominal = static_cast<std::uint64_t>(rec.fs_hz) * cfg.duration_s;
        if (rec.n_samples > nominal) rec = segment(rec, cfg.duration_s);
        QcReport qc = quality_check(rec, cfg.qc);
        qc_rows.push_back(qc);
        if (!qc.accepted) {
            ++summary.n_rejected;
            continue;
        }
        ++summary.n_accepted;

        for (std::uint32_t fs : cfg.target_fs) {
            ResampleSpec spec = make_resample_spec(rec.fs_hz, fs, cfg.duration_s);
            EcgRecord out = resample_record(rec, spec);
            out = zscore_normalize(std::move(out));
            out = segment(out, cfg.duration_s);
            const std::string fname = entry.record_id + ".ecgb";
            write_record(out, (paths.proc_dir(fs) / fname).string());
            ManifestEntry pe;
            pe.record_id = entry.record_id;
            pe.patient_id = entry.patient_id;
            pe.label = entry.label;
            pe.fs_hz = fs;
            pe.path = fname;
            out_manifests[fs].entries.push_back(pe);
        }
    }

    if (summary.n_accepted == 0)
        fail(Errc::DataError, "no records passed quality control");

    for (std::uint32_t fs : cfg.target_fs)
        write_manifest(out_manifests[fs], paths.proc_manifest(fs).string(), cfg.config_hash);
    write_qc_csv(qc_rows, paths.qc_csv().string(), cfg.config_hash);
    return summary;
}

// ---------------------------------------------------------------------------
// Stage: split
// ---------------------------------------------------------------------------

struct SplitSummary {
    std::size_t n_test_patients = 0;
    std::size_t n_fold_patients = 0;
    std::size_t n_excluded_patients = 0;
    std::size_t n_balanced_records = 0;
};

// Patient-level holdout, then per-class undersampling of the training pool,
// then stratified k-fold over the balanced pool.  All decisions are made at
// the reference frequency; the same patient partition applies verbatim to
// every other frequency because record ids are shared.
inline SplitSummary cmd_split(const ExperimentConfig& cfg) {
    StagePaths paths(cfg.output_root);
    const std::uint32_t fs0 = cfg.target_fs.front();
    detail::require_artifact(paths.proc_manifest(fs0), "prepare");

    DatasetManifest proc = read_manifest(paths.proc_manifest(fs0).string());
    DatasetManifest binary = filter_labels(proc);
    if (binary.entries.empty())
        fail(Errc::DataError, "no records with a binary label after filtering");

    SplitAssignment holdout =
        holdout_split(binary, cfg.split_test_frac, derive_seed(cfg.split_seed, "holdout"));

    DatasetManifest train_pool;
    train_pool.source_path = binary.source_path;
    for (const ManifestEntry& e : binary.entries)
        if (record_assignment(holdout, e).kind == Assignment::Kind::Pending)
            train_pool.entries.push_back(e);
    if (train_pool.entries.empty()) fail(Errc::DataError, "holdout left no training records");

    DatasetManifest balanced =
        undersample_balance(train_pool, derive_seed(cfg.split_seed, "undersample"));
    SplitAssignment folds =
        stratified_patient_kfold(balanced, cfg.split_k, derive_seed(cfg.split_seed, "kfold"));

    // Merge: test assignments win, then fold assignments, then anything left
    // in the binary cohort was dropped by undersampling -> excluded.
    SplitAssignment merged;
    merged.seed = cfg.split_seed;
    merged.k = cfg.split_k;
    SplitSummary summary;
    for (const auto& [pid, a] : holdout.assignment) {
        if (a.kind == Assignment::Kind::Test) {
            merged.assignment[pid] = a;
            ++summary.n_test_patients;
        }
    }
    for (const auto& [pid, a] : folds.assignment) {
        merged.assignment[pid] = a;
        ++summary.n_fold_patients;
    }
    for (const auto& [pid, a] : holdout.assignment) {
        if (!merged.assignment.count(pid)) {
            merged.assignment[pid] = Assignment::excluded();
            ++summary.n_excluded_patients;
        }
    }
    summary.n_balanced_records = balanced.entries.size();

    stdfs::create_directories(paths.split_dir());
    write_split_csv(merged, paths.split_csv().string(), cfg.config_hash);
    // The balanced manifest lives under split/; point its record paths back
    // into the processed store so the file stays loadable on its own.
    for (ManifestEntry& e : balanced.entries)
        if (stdfs::path(e.path).is_relative())
            e.path = "../proc/" + std::to_string(fs0) + "hz/" + e.path;
    write_manifest(balanced, paths.balanced_manifest().string(), cfg.config_hash);
    return summary;
}

// ---------------------------------------------------------------------------
// Stage: train
// ---------------------------------------------------------------------------

namespace detail {

// Records at frequency `fs` restricted to the balanced pool, grouped by fold.
inline std::vector<std::vector<ManifestEntry>> fold_entries(const DatasetManifest& proc_binary,
                                                            const SplitAssignment& split,
                                                            const std::set<std::string>& balanced_ids) {
    std::vector<std::vector<ManifestEntry>> folds(split.k);
    for (const ManifestEntry& e : proc_binary.entries) {
        if (!balanced_ids.count(e.record_id)) continue;
        Assignment a = record_assignment(split, e);
        if (a.kind == Assignment::Kind::Fold) folds[a.fold].push_back(e);
    }
    for (std::uint32_t i = 0; i < split.k; ++i)
        if (folds[i].empty())
            fail(Errc::DataError, "fold " + std::to_string(i) + " has no records at this frequency");
    return folds;
}

inline train::Dataset load_dataset(const DatasetManifest& manifest,
                                   const std::vector<ManifestEntry>& entries) {
    train::Dataset ds;
    for (const ManifestEntry& e : entries) ds.add(load_record(e, manifest));
    return ds;
}

struct CellInputs {
    DatasetManifest proc_binary;               // binary-labeled records at this fs
    std::vector<std::vector<ManifestEntry>> folds;
    std::vector<ManifestEntry> test_entries;
};

inline CellInputs load_cell_inputs(const ExperimentConfig& cfg, const StagePaths& paths,
                                   std::uint32_t fs) {
    detail::require_artifact(paths.proc_manifest(fs), "prepare");
    detail::require_artifact(paths.split_csv(), "split");
    detail::require_artifact(paths.balanced_manifest(), "split");

    CellInputs in;
    DatasetManifest proc = read_manifest(paths.proc_manifest(fs).string());
    in.proc_binary = filter_labels(proc);
    SplitAssignment split = read_split_csv(paths.split_csv().string());
    if (split.k != cfg.split_k)
        fail(Errc::FoldCountMismatch, "split.csv has k=" + std::to_string(split.k) +
                                          " but config expects k=" + std::to_string(cfg.split_k));

    DatasetManifest balanced = read_manifest(paths.balanced_manifest().string());
    std::set<std::string> balanced_ids;
    for (const ManifestEntry& e : balanced.entries) balanced_ids.insert(e.record_id);

    in.folds = fold_entries(in.proc_binary, split, balanced_ids);
    in.test_entries = records_where(in.proc_binary, split, Assignment::test());
    if (in.test_entries.empty())
        fail(Errc::DataError, "held-out test partition has no records at this frequency");
    return in;
}

}  // namespace detail

struct TrainSummary {
    // One entry per trained fold: (cell tag, fold, best epoch, best val metric).
    struct Row {
        std::string cell;
        std::uint32_t fold;
        std::size_t best_epoch;
        double best_val_metric;
    };
    std::vector<Row> rows;
};

inline TrainSummary cmd_train(const ExperimentConfig& cfg, const CellFilter& filter = {}) {
    StagePaths paths(cfg.output_root);
    TrainSummary summary;
    for (auto [arch, fs] : select_cells(cfg, filter)) {
        detail::CellInputs in = detail::load_cell_inputs(cfg, paths, fs);

        std::vector<train::Dataset> fold_data;
        fold_data.reserve(in.folds.size());
        for (const auto& entries : in.folds)
            fold_data.push_back(detail::load_dataset(in.proc_binary, entries));

        train::TrainConfig tc = cfg.train_for(arch);
        tc.arch = arch;
        tc.fs_hz = fs;

        std::vector<train::FoldResult> results = train::cross_validate(tc, fold_data);
        for (std::uint32_t fold = 0; fold < results.size(); ++fold) {
            train::FoldResult& r = results[fold];
            stdfs::create_directories(paths.run_dir(arch, fs, fold));
            nn::CheckpointMeta meta;
            meta.arch = arch;
            meta.fs_hz = fs;
            meta.fold = fold;
            meta.dropout_p = tc.dropout_p;
            meta.best_epoch = r.best_epoch;
            meta.best_val_metric = r.best_val_metric;
            meta.monitor = tc.monitor == train::Monitor::VAL_F1 ? "val_f1" : "val_loss";
            nn::save_checkpoint(*r.net, meta, paths.checkpoint(arch, fs, fold).string());
            train::write_epoch_csv(r.logs, paths.epochs_csv(arch, fs, fold).string(),
                                   cfg.config_hash);
            summary.rows.push_back(
                {detail::cell_tag(arch, fs), fold, r.best_epoch, r.best_val_metric});
        }
    }
    return summary;
}

// ---------------------------------------------------------------------------
// Stage: eval
// ---------------------------------------------------------------------------

struct EvalSummary {
    // One entry per cell: (cell tag, per-fold val AUROC, ensemble test AUROC).
    struct Row {
        std::string cell;
        std::vector<double> val_auroc;
        double test_auroc = 0.0;
    };
    std::vector<Row> rows;
};

// Re-run every fold's best checkpoint over its validation fold (prediction
// CSVs per fold) and over the held-out test set; test logits are averaged
// across folds into one ensemble prediction set.
inline EvalSummary cmd_eval(const ExperimentConfig& cfg, const CellFilter& filter = {}) {
    StagePaths paths(cfg.output_root);
    EvalSummary summary;
    for (auto [arch, fs] : select_cells(cfg, filter)) {
        detail::CellInputs in = detail::load_cell_inputs(cfg, paths, fs);
        for (std::uint32_t fold = 0; fold < cfg.split_k; ++fold)
            detail::require_artifact(paths.checkpoint(arch, fs, fold), "train");

        stdfs::create_directories(paths.eval_dir(arch, fs));
        train::Dataset test_data = detail::load_dataset(in.proc_binary, in.test_entries);

        EvalSummary::Row row;
        row.cell = detail::cell_tag(arch, fs);
        std::vector<metrics::PredictionSet> test_runs;
        for (std::uint32_t fold = 0; fold < cfg.split_k; ++fold) {
            auto [meta, net] = nn::load_checkpoint(paths.checkpoint(arch, fs, fold).string());
            if (meta.arch != arch || meta.fs_hz != fs || meta.fold != fold)
                fail(Errc::BadCheckpoint,
                     "checkpoint " + paths.checkpoint(arch, fs, fold).string() +
                         " was trained for " + detail::cell_tag(meta.arch, meta.fs_hz) + "/fold" +
                         std::to_string(meta.fold) + ", not " + detail::cell_tag(arch, fs) +
                         "/fold" + std::to_string(fold));

            train::Dataset val_data = detail::load_dataset(in.proc_binary, in.folds[fold]);
            metrics::PredictionSet val_preds = train::evaluate(
                *net, val_data, detail::cell_tag(arch, fs) + "/fold" + std::to_string(fold),
                cfg.train_for(arch).batch_size);
            metrics::write_prediction_csv(val_preds, paths.val_predictions(arch, fs, fold).string(),
                                          cfg.config_hash);
            row.val_auroc.push_back(metrics::auroc(val_preds.p1, val_preds.y));

            test_runs.push_back(train::evaluate(
                *net, test_data, detail::cell_tag(arch, fs) + "/fold" + std::to_string(fold),
                cfg.train_for(arch).batch_size));
        }

        metrics::PredictionSet ensemble = metrics::ensemble_logits(test_runs);
        ensemble.context = detail::cell_tag(arch, fs) + "/ensemble";
        metrics::write_prediction_csv(ensemble, paths.test_predictions(arch, fs).string(),
                                      cfg.config_hash);
        row.test_auroc = metrics::auroc(ensemble.p1, ensemble.y);
        summary.rows.push_back(std::move(row));
    }
    return summary;
}

// ---------------------------------------------------------------------------
// Stage: report
// ---------------------------------------------------------------------------

// Scalar metrics for one prediction set under one decision threshold.
struct ScalarMetrics {
    metrics::ClassificationMetrics cls;
    double auroc = 0.0;
    double brier = 0.0;
    double ece = 0.0;       // positive-rate calibration error on p1
    double ece_conf = 0.0;  // confidence variant on max(p, 1-p)
};

inline ScalarMetrics scalar_metrics(const metrics::PredictionSet& ps, double tau,
                                    std::size_t n_bins) {
    ScalarMetrics m;
    metrics::ConfusionMatrix cm = metrics::confusion(ps.p1, ps.y, tau);
    m.cls = metrics::classification_metrics(cm);
    m.auroc = metrics::auroc(ps.p1, ps.y);
    m.brier = metrics::brier(ps.p1, ps.y);
    m.ece = metrics::ece(ps.p1, ps.y, n_bins).first;
    m.ece_conf = metrics::ece_conf(ps.p1, ps.y, n_bins, tau);
    return m;
}

static constexpr const char* kScalarMetricNames[] = {
    "accuracy", "f1",    "precision", "sensitivity", "specificity",
    "mcc",      "auroc", "brier",     "ece",         "ece_conf"};

inline std::vector<double> scalar_metric_values(const ScalarMetrics& m) {
    return {m.cls.accuracy, m.cls.f1,  m.cls.precision, m.cls.sensitivity, m.cls.specificity,
            m.cls.mcc,      m.auroc,   m.brier,         m.ece,             m.ece_conf};
}

namespace detail {

inline std::pair<double, double> mean_population_std(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    return {mean, std::sqrt(var)};
}

}  // namespace detail

// Test-set metrics that feed the frequency-effect orderings, one per cell.
struct CellTestMetrics {
    double accuracy = 0.0;
    double sensitivity = 0.0;
    double auroc = 0.0;
    double ece = 0.0;
};

struct OrderingCheck {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    std::string relation;  // ">=" or "<="
    bool pass = false;
};

// The qualitative findings the study design is meant to surface, reduced to
// explicit inequalities over test metrics:
//   1. cnn1d AUROC at 100 Hz exceeds 500 Hz by a clear margin,
//   2. cnn1d sensitivity drops from 100 Hz to 500 Hz,
//   3. cnnlstm accuracy is nearly flat across all four frequencies,
//   4/5. cnnlstm is at least as well calibrated as cnn1d at 250 and 500 Hz.
inline std::vector<OrderingCheck> qualitative_orderings(
    const std::map<std::pair<std::string, std::uint32_t>, CellTestMetrics>& cells) {
    auto get = [&](const char* arch, std::uint32_t fs) -> const CellTestMetrics& {
        auto it = cells.find({arch, fs});
        if (it == cells.end())
            fail(Errc::DataError, std::string("orderings need cell ") + arch + "/" +
                                      std::to_string(fs) + "hz");
        return it->second;
    };
    std::vector<OrderingCheck> checks;
    {
        OrderingCheck c;
        c.name = "cnn1d_auroc_gap_100hz_minus_500hz";
        c.value = get("cnn1d", 100).auroc - get("cnn1d", 500).auroc;
        c.threshold = 0.003;
        c.relation = ">=";
        c.pass = c.value >= c.threshold;
        checks.push_back(c);
    }
    {
        OrderingCheck c;
        c.name = "cnn1d_sensitivity_drop_100hz_minus_500hz";
        c.value = get("cnn1d", 100).sensitivity - get("cnn1d", 500).sensitivity;
        c.threshold = 0.02;
        c.relation = ">=";
        c.pass = c.value >= c.threshold;
        checks.push_back(c);
    }
    {
        OrderingCheck c;
        c.name = "cnnlstm_accuracy_spread_across_fs";
        double lo = 1.0, hi = 0.0;
        for (std::uint32_t fs : {62u, 100u, 250u, 500u}) {
            double a = get("cnnlstm", fs).accuracy;
            lo = std::min(lo, a);
            hi = std::max(hi, a);
        }
        c.value = hi - lo;
        c.threshold = 0.01;
        c.relation = "<=";
        c.pass = c.value <= c.threshold;
        checks.push_back(c);
    }
    for (std::uint32_t fs : {250u, 500u}) {
        OrderingCheck c;
        c.name = "cnnlstm_ece_le_cnn1d_" + std::to_string(fs) + "hz";
        c.value = get("cnnlstm", fs).ece - get("cnn1d", fs).ece;
        c.threshold = 0.0;
        c.relation = "<=";
        c.pass = c.value <= c.threshold;
        checks.push_back(c);
    }
    return checks;
}

struct ReportSummary {
    json metrics;  // full contents of report/metrics.json
};

// Aggregate per-fold validation metrics (mean and population std across
// folds), ensemble test metrics, pooled confusions, ROC/PR bands on a fixed
// grid, calibration tables, and the qualitative frequency-effect orderings.
inline ReportSummary cmd_report(const ExperimentConfig& cfg, const CellFilter& filter = {}) {
    StagePaths paths(cfg.output_root);
    std::vector<std::pair<nn::ArchId, std::uint32_t>> cells = select_cells(cfg, filter);
    for (auto [arch, fs] : cells) {
        for (std::uint32_t fold = 0; fold < cfg.split_k; ++fold)
            detail::require_artifact(paths.val_predictions(arch, fs, fold), "eval");
        detail::require_artifact(paths.test_predictions(arch, fs), "eval");
    }

    stdfs::create_directories(paths.curves_dir());
    stdfs::create_directories(paths.calibration_dir());
    const std::vector<double> grid = metrics::uniform_grid(cfg.metrics_grid_points);

    json cells_json = json::array();
    std::map<std::pair<std::string, std::uint32_t>, CellTestMetrics> ordering_inputs;

    csv::Writer table(paths.table_csv().string());
    table.comment("config_hash=" + cfg.config_hash);
    {
        std::vector<std::string> h = {"arch", "fs_hz", "context"};
        for (const char* n : kScalarMetricNames) h.push_back(n);
        table.row(h);
    }

    csv::Writer confusion(paths.confusion_csv().string());
    confusion.comment("config_hash=" + cfg.config_hash);
    confusion.row({"arch", "fs_hz", "context", "tn", "fp", "fn", "tp"});

    for (auto [arch, fs] : cells) {
        const std::string arch_s = nn::arch_name(arch);
        const std::string fs_s = std::to_string(fs);
        const std::string file_tag = arch_s + "_" + fs_s + "hz";

        std::vector<metrics::PredictionSet> val_sets;
        for (std::uint32_t fold = 0; fold < cfg.split_k; ++fold)
            val_sets.push_back(
                metrics::read_prediction_csv(paths.val_predictions(arch, fs, fold).string()));
        metrics::PredictionSet test_set =
            metrics::read_prediction_csv(paths.test_predictions(arch, fs).string());

        // Per-fold validation metrics -> mean / population std.
        std::vector<ScalarMetrics> fold_metrics;
        std::set<std::string> degenerate;
        for (const auto& ps : val_sets) {
            fold_metrics.push_back(scalar_metrics(ps, cfg.metrics_tau, cfg.metrics_n_bins));
            for (const std::string& d : fold_metrics.back().cls.degenerate) degenerate.insert(d);
        }
        const std::size_t n_metrics = std::size(kScalarMetricNames);
        std::vector<double> val_mean(n_metrics), val_std(n_metrics);
        for (std::size_t m = 0; m < n_metrics; ++m) {
            std::vector<double> per_fold;
            for (const ScalarMetrics& fm : fold_metrics)
                per_fold.push_back(scalar_metric_values(fm)[m]);
            auto [mean, sd] = detail::mean_population_std(per_fold);
            val_mean[m] = mean;
            val_std[m] = sd;
        }

        ScalarMetrics test_metrics = scalar_metrics(test_set, cfg.metrics_tau, cfg.metrics_n_bins);
        for (const std::string& d : test_metrics.cls.degenerate) degenerate.insert(d);
        metrics::ConfusionMatrix test_cm = metrics::confusion(test_set.p1, test_set.y, cfg.metrics_tau);
        metrics::ConfusionMatrix val_cm = metrics::pooled_confusion(val_sets, cfg.metrics_tau);

        // Curves: per-fold validation band plus the single test curve.
        std::vector<std::vector<metrics::CurvePoint>> val_rocs, val_prs;
        for (const auto& ps : val_sets) {
            val_rocs.push_back(metrics::roc_curve(ps.p1, ps.y));
            val_prs.push_back(metrics::pr_curve(ps.p1, ps.y));
        }
        metrics::write_curve_csv(metrics::mean_curve_with_band(val_rocs, grid),
                                 (paths.curves_dir() / ("roc_val_" + file_tag + ".csv")).string(),
                                 cfg.config_hash);
        metrics::write_curve_csv(metrics::mean_curve_with_band(val_prs, grid),
                                 (paths.curves_dir() / ("pr_val_" + file_tag + ".csv")).string(),
                                 cfg.config_hash);
        metrics::write_curve_csv(metrics::curve_on_grid(metrics::roc_curve(test_set.p1, test_set.y), grid),
                                 (paths.curves_dir() / ("roc_test_" + file_tag + ".csv")).string(),
                                 cfg.config_hash);
        metrics::write_curve_csv(metrics::curve_on_grid(metrics::pr_curve(test_set.p1, test_set.y), grid),
                                 (paths.curves_dir() / ("pr_test_" + file_tag + ".csv")).string(),
                                 cfg.config_hash);

        // Calibration tables: ensemble test plus pooled validation.
        metrics::write_calibration_csv(
            metrics::ece(test_set.p1, test_set.y, cfg.metrics_n_bins).second,
            (paths.calibration_dir() / ("cal_test_" + file_tag + ".csv")).string(), cfg.config_hash);
        metrics::PredictionSet pooled_val;
        pooled_val.context = arch_s + "/" + fs_s + "hz/val_pooled";
        for (const auto& ps : val_sets)
            for (std::size_t i = 0; i < ps.size(); ++i)
                pooled_val.push(ps.record_ids[i], ps.z0[i], ps.z1[i], ps.y[i]);
        metrics::write_calibration_csv(
            metrics::ece(pooled_val.p1, pooled_val.y, cfg.metrics_n_bins).second,
            (paths.calibration_dir() / ("cal_val_" + file_tag + ".csv")).string(), cfg.config_hash);

        // Table rows.
        auto emit_row = [&](const std::string& context, const std::vector<double>& vals) {
            std::vector<std::string> row = {arch_s, fs_s, context};
            for (double v : vals) row.push_back(csv::fmt_short(v));
            table.row(row);
        };
        emit_row("val_mean", val_mean);
        emit_row("val_std", val_std);
        emit_row("test", scalar_metric_values(test_metrics));

        auto emit_confusion = [&](const std::string& context, const metrics::ConfusionMatrix& cm) {
            confusion.row({arch_s, fs_s, context, std::to_string(cm.tn), std::to_string(cm.fp),
                           std::to_string(cm.fn), std::to_string(cm.tp)});
        };
        emit_confusion("val_pooled", val_cm);
        emit_confusion("test", test_cm);

        // JSON cell.
        auto metric_obj = [&](const std::vector<double>& vals) {
            json o = json::object();
            for (std::size_t m = 0; m < n_metrics; ++m) o[kScalarMetricNames[m]] = vals[m];
            return o;
        };
        json cell;
        cell["arch"] = arch_s;
        cell["fs_hz"] = fs;
        cell["n_folds"] = cfg.split_k;
        cell["val_mean"] = metric_obj(val_mean);
        cell["val_std"] = metric_obj(val_std);
        cell["test"] = metric_obj(scalar_metric_values(test_metrics));
        cell["val_pooled_confusion"] =
            json{{"tn", val_cm.tn}, {"fp", val_cm.fp}, {"fn", val_cm.fn}, {"tp", val_cm.tp}};
        cell["test_confusion"] =
            json{{"tn", test_cm.tn}, {"fp", test_cm.fp}, {"fn", test_cm.fn}, {"tp", test_cm.tp}};
        cell["degenerate_metrics"] = json(std::vector<std::string>(degenerate.begin(), degenerate.end()));
        cells_json.push_back(cell);

        ordering_inputs[{arch_s, fs}] = {test_metrics.cls.accuracy, test_metrics.cls.sensitivity,
                                         test_metrics.auroc, test_metrics.ece};
    }
    table.close();
    confusion.close();

    // Orderings need the full 2x4 grid; with a partial grid they are skipped.
    json orderings;
    bool complete = true;
    for (const char* arch : {"cnn1d", "cnnlstm"})
        for (std::uint32_t fs : {62u, 100u, 250u, 500u})
            if (!ordering_inputs.count({arch, fs})) complete = false;
    orderings["complete"] = complete;
    orderings["checks"] = json::array();
    if (complete) {
        for (const OrderingCheck& c : qualitative_orderings(ordering_inputs)) {
            orderings["checks"].push_back(json{{"name", c.name},
                                               {"value", c.value},
                                               {"threshold", c.threshold},
                                               {"relation", c.relation},
                                               {"pass", c.pass}});
        }
    }

    json out;
    out["config_hash"] = cfg.config_hash;
    out["tau"] = cfg.metrics_tau;
    out["n_bins"] = cfg.metrics_n_bins;
    out["grid_points"] = cfg.metrics_grid_points;
    out["ece_definition"] =
        "primary 'ece' bins predicted p(positive) and compares bin-mean probability with the "
        "observed positive rate; 'ece_conf' is the confidence variant on max(p, 1-p) vs accuracy";
    out["early_stopping_note"] =
        "early stopping monitored '" +
        std::string(cfg.train_base.monitor == train::Monitor::VAL_F1 ? "val_f1" : "val_loss") +
        "'; the alternative is selectable via train.monitor";
    out["cells"] = cells_json;
    out["qualitative_orderings"] = orderings;

    std::ofstream f(paths.metrics_json());
    if (!f) fail(Errc::IoFailure, "cannot write " + paths.metrics_json().string());
    f << out.dump(2) << "\n";
    if (!f) fail(Errc::IoFailure, "failed writing " + paths.metrics_json().string());

    ReportSummary summary;
    summary.metrics = out;
    return summary;
}

}  // namespace ecgfreq
