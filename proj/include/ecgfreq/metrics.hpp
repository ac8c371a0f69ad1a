#pragma once

// Evaluation math: stable softmax, threshold decisions, confusion-derived
// metrics, rank-based AUROC (contractually equal to the Mann-Whitney
// pairwise definition), ROC/PR curves with fold mean +/- std bands, Brier,
// two ECE variants, logit-average ensembling, and pooled confusion counts.
// All functions are pure; degenerate 0/0 ratios become 0 with a flag so
// batch reports always complete.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ecgfreq/csv.hpp"
#include "ecgfreq/errors.hpp"

namespace ecgfreq::metrics {

// -------------------------------------------------------------------------
// Probabilities and decisions.

inline double softmax_prob(double z0, double z1) {
    if (!std::isfinite(z0) || !std::isfinite(z1))
        fail(Errc::NonFiniteLogit, "softmax_prob on non-finite logits");
    const double m = std::max(z0, z1);
    const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
    return e1 / (e0 + e1);
}

// AFIB decision at threshold tau; ties classify positive (p1 >= tau).
inline int decide(double p1, double tau = 0.5) { return p1 >= tau ? 1 : 0; }

struct PredictionSet {
    std::vector<std::string> record_ids;
    std::vector<double> z0, z1, p1;
    std::vector<int> y; // 1 = AFIB
    std::string context;

    std::size_t size() const { return record_ids.size(); }

    void push(const std::string& id, double lz0, double lz1, int label) {
        record_ids.push_back(id);
        z0.push_back(lz0);
        z1.push_back(lz1);
        p1.push_back(softmax_prob(lz0, lz1));
        y.push_back(label);
    }
};

// -------------------------------------------------------------------------
// Confusion-derived metrics.

struct ConfusionMatrix {
    long long tn = 0, fp = 0, fn = 0, tp = 0;
    long long total() const { return tn + fp + fn + tp; }
};

inline ConfusionMatrix confusion(const std::vector<double>& p1, const std::vector<int>& y,
                                 double tau = 0.5) {
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < p1.size(); ++i) {
        const int d = decide(p1[i], tau);
        if (y[i] == 1)
            (d == 1 ? cm.tp : cm.fn)++;
        else
            (d == 1 ? cm.fp : cm.tn)++;
    }
    return cm;
}

struct ClassificationMetrics {
    double accuracy = 0, precision = 0, sensitivity = 0, specificity = 0, f1 = 0, mcc = 0;
    std::vector<std::string> degenerate; // names of 0/0 ratios forced to 0
};

inline ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
    const double tp = static_cast<double>(cm.tp), tn = static_cast<double>(cm.tn);
    const double fp = static_cast<double>(cm.fp), fn = static_cast<double>(cm.fn);
    const double n = tp + tn + fp + fn;
    if (n == 0) fail(Errc::EmptyMatrix, "classification_metrics on empty confusion matrix");
    ClassificationMetrics m;
    auto ratio = [&](double num, double den, const char* name) {
        if (den == 0) {
            m.degenerate.push_back(name);
            return 0.0;
        }
        return num / den;
    };
    m.accuracy = (tp + tn) / n;
    m.precision = ratio(tp, tp + fp, "precision");
    m.sensitivity = ratio(tp, tp + fn, "sensitivity");
    m.specificity = ratio(tn, tn + fp, "specificity");
    m.f1 = ratio(2.0 * m.precision * m.sensitivity, m.precision + m.sensitivity, "f1");
    const double denom = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    m.mcc = ratio(tp * tn - fp * fn, denom, "mcc");
    return m;
}

// -------------------------------------------------------------------------
// AUROC via midranks; equals (#correct pairs + 0.5 #ties) / (n_pos * n_neg).

inline double auroc(const std::vector<double>& p1, const std::vector<int>& y) {
    const std::size_t n = p1.size();
    std::size_t n_pos = 0;
    for (int v : y) n_pos += v == 1 ? 1 : 0;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        fail(Errc::SingleClass, "auroc needs both classes (pos=" + std::to_string(n_pos) +
                                    ", neg=" + std::to_string(n_neg) + ")");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p1[a] < p1[b]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && p1[idx[j]] == p1[idx[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j + 1); // 1-based average rank
        for (std::size_t t = i; t < j; ++t)
            if (y[idx[t]] == 1) rank_sum_pos += midrank;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

// -------------------------------------------------------------------------
// Curves. Thresholds sweep unique scores descending; ROC starts at (0,0),
// PR is anchored at (0,1) so every curve spans x in [0,1].

struct CurvePoint {
    double x = 0, y = 0;
};

namespace detail {

struct ThresholdCounts {
    std::vector<double> thresholds; // unique scores, descending
    std::vector<long long> cum_tp, cum_fp;
    long long n_pos = 0, n_neg = 0;
};

inline ThresholdCounts threshold_sweep(const std::vector<double>& p1, const std::vector<int>& y) {
    ThresholdCounts tc;
    for (int v : y) (v == 1 ? tc.n_pos : tc.n_neg)++;
    if (tc.n_pos == 0 || tc.n_neg == 0)
        fail(Errc::SingleClass, "curve needs both classes present");
    std::vector<std::size_t> idx(p1.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p1[a] > p1[b]; });
    long long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() && p1[idx[j]] == p1[idx[i]]) {
            if (y[idx[j]] == 1)
                ++tp;
            else
                ++fp;
            ++j;
        }
        tc.thresholds.push_back(p1[idx[i]]);
        tc.cum_tp.push_back(tp);
        tc.cum_fp.push_back(fp);
        i = j;
    }
    return tc;
}

} // namespace detail

inline std::vector<CurvePoint> roc_curve(const std::vector<double>& p1, const std::vector<int>& y) {
    const auto tc = detail::threshold_sweep(p1, y);
    std::vector<CurvePoint> out;
    out.push_back({0.0, 0.0});
    for (std::size_t i = 0; i < tc.thresholds.size(); ++i)
        out.push_back({static_cast<double>(tc.cum_fp[i]) / static_cast<double>(tc.n_neg),
                       static_cast<double>(tc.cum_tp[i]) / static_cast<double>(tc.n_pos)});
    return out;
}

inline std::vector<CurvePoint> pr_curve(const std::vector<double>& p1, const std::vector<int>& y) {
    const auto tc = detail::threshold_sweep(p1, y);
    std::vector<CurvePoint> out;
    out.push_back({0.0, 1.0}); // zero-recall anchor
    for (std::size_t i = 0; i < tc.thresholds.size(); ++i) {
        const double tp = static_cast<double>(tc.cum_tp[i]);
        const double fp = static_cast<double>(tc.cum_fp[i]);
        out.push_back({tp / static_cast<double>(tc.n_pos), tp / (tp + fp)});
    }
    return out;
}

// Trapezoidal area under a curve's polyline (cross-check against auroc).
inline double trapezoid_area(const std::vector<CurvePoint>& c) {
    double a = 0.0;
    for (std::size_t i = 1; i < c.size(); ++i)
        a += (c[i].x - c[i - 1].x) * (c[i].y + c[i - 1].y) * 0.5;
    return a;
}

struct BandPoint {
    double x = 0, y_mean = 0, y_std = 0;
};

namespace detail {

// Piecewise-linear interpolation over a polyline with non-decreasing x.
// Queries outside the x-range clamp to the end values; at a vertical run of
// equal x the later (upper) point wins.
inline double interp_curve(const std::vector<CurvePoint>& c, double q) {
    if (q <= c.front().x) {
        // take the last point sharing the smallest x
        std::size_t i = 0;
        while (i + 1 < c.size() && c[i + 1].x == c.front().x) ++i;
        return c[i].y;
    }
    if (q >= c.back().x) return c.back().y;
    std::size_t i = 0;
    for (std::size_t j = 1; j < c.size(); ++j) {
        if (c[j].x <= q)
            i = j;
        else
            break;
    }
    if (c[i].x == q) return c[i].y;
    const auto& a = c[i];
    const auto& b = c[i + 1];
    return a.y + (b.y - a.y) * (q - a.x) / (b.x - a.x);
}

} // namespace detail

inline std::vector<double> uniform_grid(std::size_t points) {
    std::vector<double> g(points);
    for (std::size_t i = 0; i < points; ++i)
        g[i] = static_cast<double>(i) / static_cast<double>(points - 1);
    return g;
}

// Single curve interpolated onto a grid (band with zero spread).
inline std::vector<BandPoint> curve_on_grid(const std::vector<CurvePoint>& curve,
                                            const std::vector<double>& grid) {
    if (curve.size() < 2) fail(Errc::DegenerateCurve, "curve with fewer than 2 points");
    std::vector<BandPoint> out(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g)
        out[g] = {grid[g], detail::interp_curve(curve, grid[g]), 0.0};
    return out;
}

inline std::vector<BandPoint> mean_curve_with_band(const std::vector<std::vector<CurvePoint>>& curves,
                                                   const std::vector<double>& grid) {
    if (curves.size() < 2)
        fail(Errc::DegenerateCurve, "band needs >= 2 fold curves, got " +
                                        std::to_string(curves.size()));
    for (const auto& c : curves) {
        if (c.size() < 2) fail(Errc::DegenerateCurve, "curve with fewer than 2 points");
        for (std::size_t i = 1; i < c.size(); ++i)
            if (c[i].x < c[i - 1].x) fail(Errc::DegenerateCurve, "curve x values must be non-decreasing");
    }
    std::vector<BandPoint> out(grid.size());
    const double k = static_cast<double>(curves.size());
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double mean = 0.0;
        for (const auto& c : curves) mean += detail::interp_curve(c, grid[g]);
        mean /= k;
        double var = 0.0;
        for (const auto& c : curves) {
            const double d = detail::interp_curve(c, grid[g]) - mean;
            var += d * d;
        }
        out[g] = {grid[g], mean, std::sqrt(var / k)}; // population std across folds
    }
    return out;
}

// -------------------------------------------------------------------------
// Calibration.

inline double brier(const std::vector<double>& p1, const std::vector<int>& y) {
    if (p1.empty()) fail(Errc::EmptyInput, "brier on empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < p1.size(); ++i) {
        const double d = p1[i] - static_cast<double>(y[i]);
        s += d * d;
    }
    return s / static_cast<double>(p1.size());
}

struct CalibrationBins {
    struct Bin {
        double lo = 0, hi = 0;
        std::size_t count = 0;
        double mean_p = 0, pos_rate = 0;
    };
    std::size_t n_bins = 0;
    std::vector<Bin> bins;
};

// Primary ECE: equal-width bins over predicted p1 (final bin closed at 1);
// ECE = sum_b (count_b / N) * |positive_rate_b - mean_p1_b|.
inline std::pair<double, CalibrationBins> ece(const std::vector<double>& p1,
                                              const std::vector<int>& y, std::size_t n_bins = 10) {
    if (p1.empty()) fail(Errc::EmptyInput, "ece on empty input");
    if (n_bins < 1) fail(Errc::ConfigError, "ece needs n_bins >= 1");
    CalibrationBins cb;
    cb.n_bins = n_bins;
    cb.bins.resize(n_bins);
    std::vector<double> sum_p(n_bins, 0.0);
    std::vector<std::size_t> pos(n_bins, 0);
    for (std::size_t b = 0; b < n_bins; ++b) {
        cb.bins[b].lo = static_cast<double>(b) / static_cast<double>(n_bins);
        cb.bins[b].hi = static_cast<double>(b + 1) / static_cast<double>(n_bins);
    }
    for (std::size_t i = 0; i < p1.size(); ++i) {
        std::size_t b = static_cast<std::size_t>(p1[i] * static_cast<double>(n_bins));
        if (b >= n_bins) b = n_bins - 1;
        cb.bins[b].count++;
        sum_p[b] += p1[i];
        pos[b] += y[i] == 1 ? 1 : 0;
    }
    double e = 0.0;
    const double n = static_cast<double>(p1.size());
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (cb.bins[b].count == 0) continue;
        const double c = static_cast<double>(cb.bins[b].count);
        cb.bins[b].mean_p = sum_p[b] / c;
        cb.bins[b].pos_rate = static_cast<double>(pos[b]) / c;
        e += (c / n) * std::abs(cb.bins[b].pos_rate - cb.bins[b].mean_p);
    }
    return {e, cb};
}

// Companion ECE in confidence/accuracy form: bins over max(p1, 1-p1),
// comparing mean confidence with decision accuracy per bin.
inline double ece_conf(const std::vector<double>& p1, const std::vector<int>& y,
                       std::size_t n_bins = 10, double tau = 0.5) {
    if (p1.empty()) fail(Errc::EmptyInput, "ece_conf on empty input");
    std::vector<double> sum_conf(n_bins, 0.0);
    std::vector<std::size_t> count(n_bins, 0), correct(n_bins, 0);
    for (std::size_t i = 0; i < p1.size(); ++i) {
        const double conf = std::max(p1[i], 1.0 - p1[i]);
        std::size_t b = static_cast<std::size_t>(conf * static_cast<double>(n_bins));
        if (b >= n_bins) b = n_bins - 1;
        count[b]++;
        sum_conf[b] += conf;
        correct[b] += decide(p1[i], tau) == y[i] ? 1 : 0;
    }
    double e = 0.0;
    const double n = static_cast<double>(p1.size());
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (count[b] == 0) continue;
        const double c = static_cast<double>(count[b]);
        e += (c / n) * std::abs(static_cast<double>(correct[b]) / c - sum_conf[b] / c);
    }
    return e;
}

// -------------------------------------------------------------------------
// Fold aggregation.

// Element-wise mean of logits across folds, then softmax (NOT a mean of
// probabilities — the two differ whenever fold logits disagree).
inline PredictionSet ensemble_logits(const std::vector<PredictionSet>& folds) {
    if (folds.empty()) fail(Errc::FoldCountMismatch, "ensemble of zero folds");
    const std::size_t n = folds[0].size();
    for (const auto& f : folds) {
        if (f.size() != n)
            fail(Errc::MisalignedRecords, "fold prediction sets differ in length");
        for (std::size_t i = 0; i < n; ++i)
            if (f.record_ids[i] != folds[0].record_ids[i] || f.y[i] != folds[0].y[i])
                fail(Errc::MisalignedRecords, "fold prediction sets differ at record index " +
                                                  std::to_string(i));
    }
    PredictionSet out;
    out.context = "ensemble";
    const double k = static_cast<double>(folds.size());
    for (std::size_t i = 0; i < n; ++i) {
        double mz0 = 0.0, mz1 = 0.0;
        for (const auto& f : folds) {
            mz0 += f.z0[i];
            mz1 += f.z1[i];
        }
        out.push(folds[0].record_ids[i], mz0 / k, mz1 / k, folds[0].y[i]);
    }
    return out;
}

inline ConfusionMatrix pooled_confusion(const std::vector<PredictionSet>& folds, double tau = 0.5) {
    std::unordered_set<std::string> seen;
    ConfusionMatrix cm;
    for (const auto& f : folds) {
        for (std::size_t i = 0; i < f.size(); ++i) {
            if (!seen.insert(f.record_ids[i]).second)
                fail(Errc::OverlapDetected, "record '" + f.record_ids[i] +
                                                "' appears in more than one fold");
            const int d = decide(f.p1[i], tau);
            if (f.y[i] == 1)
                (d == 1 ? cm.tp : cm.fn)++;
            else
                (d == 1 ? cm.fp : cm.tn)++;
        }
    }
    return cm;
}

// -------------------------------------------------------------------------
// Prediction CSV: record_id,context,z0,z1,p1,label. Logits and p1 carry full
// double precision so downstream metrics are bit-reproducible.

inline void write_prediction_csv(const PredictionSet& ps, const std::string& path,
                                 const std::string& config_hash = "") {
    csv::Writer w(path);
    if (!config_hash.empty()) w.comment("config_hash=" + config_hash);
    w.row({"record_id", "context", "z0", "z1", "p1", "label"});
    for (std::size_t i = 0; i < ps.size(); ++i)
        w.row({ps.record_ids[i], ps.context, csv::fmt_full(ps.z0[i]), csv::fmt_full(ps.z1[i]),
               csv::fmt_full(ps.p1[i]), std::to_string(ps.y[i])});
    w.close();
}

inline PredictionSet read_prediction_csv(const std::string& path) {
    csv::Table t = csv::read_file(path);
    PredictionSet ps;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const std::string ctx = path + " row " + std::to_string(i + 1);
        if (ps.context.empty()) ps.context = t.at(i, "context");
        ps.record_ids.push_back(t.at(i, "record_id"));
        ps.z0.push_back(csv::parse_double(t.at(i, "z0"), ctx));
        ps.z1.push_back(csv::parse_double(t.at(i, "z1"), ctx));
        ps.p1.push_back(csv::parse_double(t.at(i, "p1"), ctx));
        ps.y.push_back(static_cast<int>(csv::parse_ll(t.at(i, "label"), ctx)));
    }
    return ps;
}

inline void write_curve_csv(const std::vector<BandPoint>& band, const std::string& path,
                            const std::string& config_hash = "") {
    csv::Writer w(path);
    if (!config_hash.empty()) w.comment("config_hash=" + config_hash);
    w.row({"x", "y_mean", "y_std"});
    for (const auto& p : band)
        w.row({csv::fmt_short(p.x), csv::fmt_short(p.y_mean), csv::fmt_short(p.y_std)});
    w.close();
}

inline void write_calibration_csv(const CalibrationBins& cb, const std::string& path,
                                  const std::string& config_hash = "") {
    csv::Writer w(path);
    if (!config_hash.empty()) w.comment("config_hash=" + config_hash);
    w.row({"lo", "hi", "count", "mean_p", "pos_rate"});
    for (const auto& b : cb.bins)
        w.row({csv::fmt_short(b.lo), csv::fmt_short(b.hi), std::to_string(b.count),
               csv::fmt_short(b.mean_p), csv::fmt_short(b.pos_rate)});
    w.close();
}

} // namespace ecgfreq::metrics
