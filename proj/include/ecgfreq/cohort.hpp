#pragma once

// Cohort construction: binary label filtering, patient-safe holdout split,
// majority-class undersampling, and stratified patient-level k-fold.
// Every shuffle goes through SplitMix64 + Fisher-Yates (that generator is
// part of the split CSV's external contract), and patients are canonically
// sorted before shuffling so assignments are independent of manifest row
// order. Strata are always consumed AFIB first, then NORM.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecgfreq/csv.hpp"
#include "ecgfreq/ecg_store.hpp"
#include "ecgfreq/errors.hpp"
#include "ecgfreq/rng.hpp"

namespace ecgfreq {

struct Assignment {
    enum class Kind { Test, Fold, Excluded, Pending } kind = Kind::Pending;
    std::uint32_t fold = 0; // meaningful only when kind == Fold

    static Assignment test() { return {Kind::Test, 0}; }
    static Assignment in_fold(std::uint32_t i) { return {Kind::Fold, i}; }
    static Assignment excluded() { return {Kind::Excluded, 0}; }
    static Assignment pending() { return {Kind::Pending, 0}; }

    bool operator==(const Assignment&) const = default;
};

struct SplitAssignment {
    std::uint64_t seed = 0;
    std::uint32_t k = 0;
    std::map<std::string, Assignment> assignment; // patient_id -> partition (sorted for stable output)
};

inline DatasetManifest filter_labels(const DatasetManifest& m) {
    DatasetManifest out;
    out.source_path = m.source_path;
    for (const auto& e : m.entries)
        if (e.is_binary_label()) out.entries.push_back(e);
    return out;
}

// Patient-level label: AFIB if any of the patient's records is AFIB.
inline std::map<std::string, Label> patient_labels(const DatasetManifest& m) {
    std::map<std::string, Label> out;
    for (const auto& e : m.entries) {
        auto [it, inserted] = out.try_emplace(e.patient_id, Label::NORM);
        if (e.is_afib()) it->second = Label::AFIB;
    }
    return out;
}

namespace detail {

// Unique patients of one stratum, lexicographically sorted (the canonical
// pre-shuffle order that makes assignments manifest-order independent).
inline std::vector<std::string> stratum_patients(const std::map<std::string, Label>& labels,
                                                 Label want) {
    std::vector<std::string> out;
    for (const auto& [pid, lab] : labels)
        if (lab == want) out.push_back(pid); // std::map iterates sorted
    return out;
}

} // namespace detail

inline SplitAssignment holdout_split(const DatasetManifest& m, double test_frac,
                                     std::uint64_t seed) {
    if (m.entries.empty()) fail(Errc::EmptyManifest, "holdout_split on empty manifest");
    if (!(test_frac > 0.0 && test_frac < 1.0))
        fail(Errc::ConfigError, "test_frac must be in (0,1), got " + std::to_string(test_frac));
    auto labels = patient_labels(m);
    SplitAssignment split;
    split.seed = seed;
    SplitMix64 rng(seed);
    for (Label stratum : {Label::AFIB, Label::NORM}) {
        std::vector<std::string> patients = detail::stratum_patients(labels, stratum);
        fisher_yates_shuffle(patients, rng);
        const std::size_t n_test =
            static_cast<std::size_t>(test_frac * static_cast<double>(patients.size()));
        for (std::size_t i = 0; i < patients.size(); ++i)
            split.assignment[patients[i]] = i < n_test ? Assignment::test() : Assignment::pending();
    }
    return split;
}

inline DatasetManifest undersample_balance(const DatasetManifest& subset, std::uint64_t seed) {
    std::vector<std::size_t> afib_rows, norm_rows;
    for (std::size_t i = 0; i < subset.entries.size(); ++i)
        (subset.entries[i].is_afib() ? afib_rows : norm_rows).push_back(i);
    if (afib_rows.empty() || norm_rows.empty())
        fail(Errc::SingleClassInput, "undersample_balance needs both classes (AFIB=" +
                                         std::to_string(afib_rows.size()) + ", NORM=" +
                                         std::to_string(norm_rows.size()) + ")");
    std::vector<std::size_t>& majority = afib_rows.size() > norm_rows.size() ? afib_rows : norm_rows;
    const std::size_t n_min = std::min(afib_rows.size(), norm_rows.size());
    SplitMix64 rng(seed);
    fisher_yates_shuffle(majority, rng);
    majority.resize(n_min);
    std::vector<bool> keep(subset.entries.size(), false);
    for (std::size_t i : afib_rows) keep[i] = true;
    for (std::size_t i : norm_rows) keep[i] = true;
    DatasetManifest out;
    out.source_path = subset.source_path;
    for (std::size_t i = 0; i < subset.entries.size(); ++i)
        if (keep[i]) out.entries.push_back(subset.entries[i]);
    return out;
}

inline SplitAssignment stratified_patient_kfold(const DatasetManifest& balanced_subset,
                                                std::uint32_t k, std::uint64_t seed) {
    if (k < 2) fail(Errc::ConfigError, "k must be >= 2, got " + std::to_string(k));
    auto labels = patient_labels(balanced_subset);
    SplitAssignment split;
    split.seed = seed;
    split.k = k;
    SplitMix64 rng(seed);
    for (Label stratum : {Label::AFIB, Label::NORM}) {
        std::vector<std::string> patients = detail::stratum_patients(labels, stratum);
        if (patients.size() < k)
            fail(Errc::TooFewPatients, std::string("stratum ") + label_name(stratum) + " has " +
                                           std::to_string(patients.size()) + " patients, need >= " +
                                           std::to_string(k));
        fisher_yates_shuffle(patients, rng);
        for (std::size_t i = 0; i < patients.size(); ++i)
            split.assignment[patients[i]] = Assignment::in_fold(static_cast<std::uint32_t>(i % k));
    }
    return split;
}

// Record partition = its patient's partition (the inheritance rule).
inline Assignment record_assignment(const SplitAssignment& split, const ManifestEntry& e) {
    auto it = split.assignment.find(e.patient_id);
    if (it == split.assignment.end())
        fail(Errc::InvariantViolation, "patient '" + e.patient_id + "' missing from split");
    return it->second;
}

inline std::vector<ManifestEntry> records_where(const DatasetManifest& m,
                                                const SplitAssignment& split, Assignment want) {
    std::vector<ManifestEntry> out;
    for (const auto& e : m.entries) {
        auto it = split.assignment.find(e.patient_id);
        if (it != split.assignment.end() && it->second == want) out.push_back(e);
    }
    return out;
}

inline std::string assignment_token(const Assignment& a) {
    switch (a.kind) {
        case Assignment::Kind::Test: return "test";
        case Assignment::Kind::Fold: return "fold" + std::to_string(a.fold);
        case Assignment::Kind::Excluded: return "excluded";
        case Assignment::Kind::Pending:
            fail(Errc::InvariantViolation, "pending partition state must not be serialized");
    }
    fail(Errc::InvariantViolation, "unreachable assignment kind");
}

inline Assignment parse_assignment_token(const std::string& s) {
    if (s == "test") return Assignment::test();
    if (s == "excluded") return Assignment::excluded();
    if (s.rfind("fold", 0) == 0)
        return Assignment::in_fold(static_cast<std::uint32_t>(
            csv::parse_ll(s.substr(4), "split assignment '" + s + "'")));
    fail(Errc::UnparsableRow, "unknown assignment token '" + s + "'");
}

// Rows sorted by patient_id (std::map order), one row per patient.
inline void write_split_csv(const SplitAssignment& split, const std::string& path,
                            const std::string& config_hash = "") {
    csv::Writer w(path);
    if (!config_hash.empty()) w.comment("config_hash=" + config_hash);
    w.row({"patient_id", "assignment"});
    for (const auto& [pid, a] : split.assignment) w.row({pid, assignment_token(a)});
    w.close();
}

inline SplitAssignment read_split_csv(const std::string& path) {
    csv::Table t = csv::read_file(path);
    SplitAssignment split;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const std::string& pid = t.at(i, "patient_id");
        Assignment a = parse_assignment_token(t.at(i, "assignment"));
        if (!split.assignment.emplace(pid, a).second)
            fail(Errc::UnparsableRow, path + ": duplicate patient_id '" + pid + "'");
        if (a.kind == Assignment::Kind::Fold) split.k = std::max(split.k, a.fold + 1);
    }
    return split;
}

} // namespace ecgfreq
