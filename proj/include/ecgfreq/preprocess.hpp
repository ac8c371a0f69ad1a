#pragma once

// Signal preparation: non-finite cleaning, amplitude clipping, FFT-domain
// resampling, per-lead z-score, fixed-duration segmentation, and automated
// quality control. Pipeline order is fixed: clean -> clip -> resample ->
// z-score -> segment (QC runs on the cleaned/clipped source-rate record).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ecgfreq/ecg_store.hpp"
#include "ecgfreq/errors.hpp"
#include "ecgfreq/fft.hpp"

namespace ecgfreq {

struct QcReport {
    std::string record_id;
    std::vector<std::uint32_t> flatline_leads;
    std::vector<std::uint32_t> dead_leads;
    std::vector<std::uint32_t> noisy_leads;
    bool accepted = true; // true iff all three lists are empty
};

struct QcThresholds {
    double flatline_std = 1e-4;    // mV; population std below this flags flatline
    double noise_cutoff_frac = 0.4; // fraction of Nyquist above which power counts as noise
    double noise_power_frac = 0.5;  // flagged noisy when noise power fraction exceeds this
};

struct ResampleSpec {
    std::uint32_t source_fs = 0;
    std::uint32_t target_fs = 0;
    std::int64_t target_len = 0; // duration_s * target_fs for the standard pipeline
};

inline ResampleSpec make_resample_spec(std::uint32_t source_fs, std::uint32_t target_fs,
                                       std::uint32_t duration_s = 10) {
    return ResampleSpec{source_fs, target_fs,
                        static_cast<std::int64_t>(duration_s) * target_fs};
}

inline EcgRecord clean_nonfinite(EcgRecord r) {
    for (float& s : r.samples)
        if (!std::isfinite(s)) s = 0.0f;
    return r;
}

inline EcgRecord clip_amplitude(EcgRecord r, double limit_mv) {
    if (!(limit_mv > 0.0))
        fail(Errc::NonPositiveLimit, "clip limit must be positive, got " + std::to_string(limit_mv));
    const float lim = static_cast<float>(limit_mv);
    for (float& s : r.samples) s = std::clamp(s, -lim, lim);
    return r;
}

using fft::fft_resample; // real-vector resampler lives in fft.hpp

inline EcgRecord resample_record(const EcgRecord& r, const ResampleSpec& spec) {
    if (r.fs_hz != spec.source_fs)
        fail(Errc::FsMismatch, r.record_id + ": record fs " + std::to_string(r.fs_hz) +
                                   " != spec source fs " + std::to_string(spec.source_fs));
    EcgRecord out = r;
    out.fs_hz = spec.target_fs;
    out.n_samples = static_cast<std::uint32_t>(spec.target_len);
    out.samples.assign(static_cast<std::size_t>(r.n_leads) * out.n_samples, 0.0f);
    std::vector<double> lead(r.n_samples);
    for (std::uint32_t l = 0; l < r.n_leads; ++l) {
        const float* src = r.lead(l);
        for (std::uint32_t t = 0; t < r.n_samples; ++t) lead[t] = src[t];
        std::vector<double> res = fft_resample(lead, spec.target_len);
        float* dst = out.lead(l);
        for (std::size_t t = 0; t < res.size(); ++t) dst[t] = static_cast<float>(res[t]);
    }
    return out;
}

namespace detail {

// Mean and population std (divide by n) accumulated in double.
inline std::pair<double, double> lead_mean_std(const float* x, std::size_t n) {
    if (n == 0) return {0.0, 0.0};
    double mean = 0.0;
    for (std::size_t t = 0; t < n; ++t) mean += x[t];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const double d = x[t] - mean;
        ss += d * d;
    }
    return {mean, std::sqrt(ss / static_cast<double>(n))};
}

} // namespace detail

inline EcgRecord zscore_normalize(EcgRecord r) {
    for (std::uint32_t l = 0; l < r.n_leads; ++l) {
        float* x = r.lead(l);
        auto [mean, sd] = detail::lead_mean_std(x, r.n_samples);
        if (sd < 1e-8) {
            for (std::uint32_t t = 0; t < r.n_samples; ++t) x[t] = 0.0f;
        } else {
            const double inv = 1.0 / sd;
            for (std::uint32_t t = 0; t < r.n_samples; ++t)
                x[t] = static_cast<float>((x[t] - mean) * inv);
        }
    }
    return r;
}

inline EcgRecord segment(const EcgRecord& r, std::uint32_t duration_s) {
    const std::uint64_t need = static_cast<std::uint64_t>(duration_s) * r.fs_hz;
    if (r.n_samples < need)
        fail(Errc::TooShort, r.record_id + ": " + std::to_string(r.n_samples) + " samples < " +
                                 std::to_string(need) + " required for " + std::to_string(duration_s) +
                                 " s at " + std::to_string(r.fs_hz) + " Hz");
    if (r.n_samples == need) return r;
    EcgRecord out = r;
    out.n_samples = static_cast<std::uint32_t>(need);
    out.samples.resize(static_cast<std::size_t>(r.n_leads) * out.n_samples);
    for (std::uint32_t l = 0; l < r.n_leads; ++l) {
        const float* src = r.lead(l);
        float* dst = out.samples.data() + static_cast<std::size_t>(l) * out.n_samples;
        std::copy(src, src + out.n_samples, dst);
    }
    return out;
}

inline QcReport quality_check(const EcgRecord& r, const QcThresholds& thr = {}) {
    QcReport q;
    q.record_id = r.record_id;
    std::vector<double> lead(r.n_samples);
    for (std::uint32_t l = 0; l < r.n_leads; ++l) {
        const float* x = r.lead(l);
        auto [mean, sd] = detail::lead_mean_std(x, r.n_samples);
        (void)mean;
        if (sd < thr.flatline_std) q.flatline_leads.push_back(l);
        bool dead = true;
        for (std::uint32_t t = 1; t < r.n_samples && dead; ++t) dead = (x[t] == x[0]);
        if (dead) q.dead_leads.push_back(l);

        // Spectral noise: fraction of non-DC power at two-sided frequencies
        // above noise_cutoff_frac * Nyquist. Bin k maps to min(k, n-k)/n * fs.
        for (std::uint32_t t = 0; t < r.n_samples; ++t) lead[t] = x[t];
        std::vector<double> p = fft::power_spectrum(lead);
        const std::size_t n = p.size();
        double total = 0.0, high = 0.0;
        const double cutoff = thr.noise_cutoff_frac * 0.5; // as a fraction of fs
        for (std::size_t k = 1; k < n; ++k) {
            const double f_frac = static_cast<double>(std::min(k, n - k)) / static_cast<double>(n);
            total += p[k];
            if (f_frac > cutoff) high += p[k];
        }
        if (total > 0.0 && high / total > thr.noise_power_frac) q.noisy_leads.push_back(l);
    }
    q.accepted = q.flatline_leads.empty() && q.dead_leads.empty() && q.noisy_leads.empty();
    return q;
}

namespace detail {

inline std::string join_leads(const std::vector<std::uint32_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ';';
        s += std::to_string(v[i]);
    }
    return s;
}

} // namespace detail

inline void write_qc_csv(const std::vector<QcReport>& reports, const std::string& path,
                         const std::string& config_hash = "") {
    csv::Writer w(path);
    if (!config_hash.empty()) w.comment("config_hash=" + config_hash);
    w.row({"record_id", "accepted", "flatline_leads", "dead_leads", "noisy_leads"});
    for (const auto& q : reports)
        w.row({q.record_id, q.accepted ? "true" : "false", detail::join_leads(q.flatline_leads),
               detail::join_leads(q.dead_leads), detail::join_leads(q.noisy_leads)});
    w.close();
}

} // namespace ecgfreq
