#pragma once

// Deterministic synthetic 12-lead dataset for smoke tests and demos.
// NORM records: regular rhythm with P-QRS-T complexes. AFIB records:
// irregular RR intervals, no P waves, and a 4-9 Hz fibrillatory baseline.
// Signals are clean by construction (finite, non-flat, low-frequency), so
// they pass the default quality-control thresholds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ecgfreq/ecg_store.hpp"
#include "ecgfreq/rng.hpp"

namespace ecgfreq::synth {

struct SynthSpec {
    std::size_t n_patients = 20;      // first half AFIB, second half NORM
    std::size_t records_per_patient = 2;
    std::uint32_t fs_hz = 500;
    std::uint32_t duration_s = 10;
    std::uint64_t seed = 7;
};

namespace detail {

inline void add_gaussian_bump(std::vector<double>& x, double fs, double center_s, double amp,
                              double width_s) {
    const double inv2w2 = 1.0 / (2.0 * width_s * width_s);
    const int lo = std::max(0, static_cast<int>((center_s - 4 * width_s) * fs));
    const int hi = std::min(static_cast<int>(x.size()),
                            static_cast<int>((center_s + 4 * width_s) * fs) + 1);
    for (int t = lo; t < hi; ++t) {
        const double dt = t / fs - center_s;
        x[static_cast<std::size_t>(t)] += amp * std::exp(-dt * dt * inv2w2);
    }
}

// One reference-lead waveform; per-lead copies scale it and add noise.
inline std::vector<double> reference_waveform(bool afib, double fs, double duration_s,
                                              SplitMix64& rng) {
    const std::size_t n = static_cast<std::size_t>(fs * duration_s);
    std::vector<double> x(n, 0.0);
    double t = 0.2;
    while (t < duration_s - 0.2) {
        if (!afib) add_gaussian_bump(x, fs, t - 0.16, 0.15, 0.025); // P wave
        add_gaussian_bump(x, fs, t - 0.02, -0.15, 0.01);            // Q
        add_gaussian_bump(x, fs, t, 1.0, 0.012);                    // R
        add_gaussian_bump(x, fs, t + 0.025, -0.2, 0.012);           // S
        add_gaussian_bump(x, fs, t + 0.25, 0.3, 0.06);              // T wave
        t += afib ? rng.uniform(0.4, 1.0) : 0.8 + 0.02 * rng.normal();
    }
    if (afib) {
        // fibrillatory baseline: three low-amplitude 4-9 Hz oscillations
        for (int w = 0; w < 3; ++w) {
            const double f = rng.uniform(4.0, 9.0);
            const double a = rng.uniform(0.04, 0.08);
            const double ph = rng.uniform(0.0, 6.283185307179586);
            for (std::size_t i = 0; i < n; ++i)
                x[i] += a * std::sin(6.283185307179586 * f * i / fs + ph);
        }
    }
    return x;
}

} // namespace detail

inline EcgRecord make_record(const std::string& record_id, const std::string& patient_id,
                             Label label, const SynthSpec& spec, std::uint64_t record_seed) {
    SplitMix64 rng(record_seed);
    const double fs = static_cast<double>(spec.fs_hz);
    std::vector<double> ref =
        detail::reference_waveform(label == Label::AFIB, fs, spec.duration_s, rng);
    EcgRecord r;
    r.record_id = record_id;
    r.patient_id = patient_id;
    r.label = label;
    r.fs_hz = spec.fs_hz;
    r.n_leads = 12;
    r.n_samples = static_cast<std::uint32_t>(ref.size());
    r.samples.resize(static_cast<std::size_t>(12) * r.n_samples);
    // conventional projection-ish lead scales; aVR (lead 3) is inverted
    static constexpr double kLeadScale[12] = {1.0, 1.1, 0.6, -0.9, 0.5,  0.8,
                                              0.7, 1.2, 1.3, 1.1,  0.95, 0.85};
    const double noise_sd = label == Label::AFIB ? 0.03 : 0.02;
    for (std::uint32_t l = 0; l < 12; ++l) {
        float* dst = r.lead(l);
        const double scale = kLeadScale[l] * rng.uniform(0.9, 1.1);
        for (std::uint32_t t = 0; t < r.n_samples; ++t)
            dst[t] = static_cast<float>(scale * ref[t] + noise_sd * rng.normal());
    }
    return r;
}

// Writes <dir>/records/*.ecgb plus <dir>/manifest.csv and returns the manifest.
inline DatasetManifest generate_dataset(const std::string& dir, const SynthSpec& spec = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "records");
    DatasetManifest m;
    std::size_t rec_no = 0;
    for (std::size_t p = 0; p < spec.n_patients; ++p) {
        const Label label = p < spec.n_patients / 2 ? Label::AFIB : Label::NORM;
        char pid[16];
        std::snprintf(pid, sizeof(pid), "p%03zu", p);
        for (std::size_t k = 0; k < spec.records_per_patient; ++k, ++rec_no) {
            char rid[16];
            std::snprintf(rid, sizeof(rid), "r%04zu", rec_no);
            EcgRecord r = make_record(rid, pid, label, spec,
                                      derive_seed(spec.seed, "record", rec_no));
            const std::string rel = std::string("records/") + rid + ".ecgb";
            write_record(r, (fs::path(dir) / rel).string());
            ManifestEntry e;
            e.record_id = rid;
            e.patient_id = pid;
            e.label = label_name(label);
            e.fs_hz = spec.fs_hz;
            e.path = rel;
            m.entries.push_back(e);
        }
    }
    const std::string manifest_path = (fs::path(dir) / "manifest.csv").string();
    write_manifest(m, manifest_path);
    m.source_path = manifest_path;
    return m;
}

} // namespace ecgfreq::synth
