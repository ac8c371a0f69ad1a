#pragma once

// Training loop: minibatch Adam on weighted cross-entropy, early stopping on
// a monitored validation metric with strict improvement, best-epoch
// checkpointing, and k-fold orchestration. Everything is seeded and
// single-threaded per fold, so identical config + data reproduce identical
// epoch logs bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "ecgfreq/ecg_store.hpp"
#include "ecgfreq/errors.hpp"
#include "ecgfreq/metrics.hpp"
#include "ecgfreq/models.hpp"
#include "ecgfreq/rng.hpp"
#include "ecgfreq/tensor.hpp"

namespace ecgfreq::train {

enum class Monitor { VAL_F1, VAL_LOSS };

inline const char* monitor_name(Monitor m) { return m == Monitor::VAL_F1 ? "val_f1" : "val_loss"; }

inline Monitor parse_monitor(const std::string& s) {
    if (s == "val_f1") return Monitor::VAL_F1;
    if (s == "val_loss") return Monitor::VAL_LOSS;
    fail(Errc::ConfigError, "unknown monitor '" + s + "' (expected val_f1|val_loss)");
}

struct TrainConfig {
    nn::ArchId arch = nn::ArchId::CNN1D;
    std::uint32_t fs_hz = 0;
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    Monitor monitor = Monitor::VAL_F1;
    std::optional<std::pair<double, double>> class_weights; // (w_norm, w_afib); auto when absent
    double dropout_p = 0.3;
    std::uint64_t seed = 42;
    double tau = 0.5;
};

struct EpochLog {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0, val_loss = 0, val_auroc = 0, val_f1 = 0;
};

// In-memory dataset: fixed-shape feature rows plus identity/label columns.
struct Dataset {
    std::vector<std::string> record_ids, patient_ids;
    std::vector<int> labels; // 1 = AFIB
    std::size_t n_leads = 0, len = 0;
    std::vector<float> features; // [n, n_leads, len]

    std::size_t size() const { return record_ids.size(); }

    void add(const EcgRecord& r) {
        if (size() == 0) {
            n_leads = r.n_leads;
            len = r.n_samples;
        } else if (r.n_leads != n_leads || r.n_samples != len) {
            fail(Errc::DataError, r.record_id + ": shape " + std::to_string(r.n_leads) + "x" +
                                      std::to_string(r.n_samples) + " does not match dataset " +
                                      std::to_string(n_leads) + "x" + std::to_string(len));
        }
        record_ids.push_back(r.record_id);
        patient_ids.push_back(r.patient_id);
        labels.push_back(r.label == Label::AFIB ? 1 : 0);
        features.insert(features.end(), r.samples.begin(), r.samples.end());
    }

    void fill_batch(const std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi,
                    nn::Tensor3<float>& x, std::vector<int>& y) const {
        const std::size_t bsz = hi - lo, row = n_leads * len;
        x = nn::Tensor3<float>(bsz, n_leads, len);
        y.resize(bsz);
        for (std::size_t b = 0; b < bsz; ++b) {
            const std::size_t i = idx[lo + b];
            std::copy(features.begin() + static_cast<std::ptrdiff_t>(i * row),
                      features.begin() + static_cast<std::ptrdiff_t>((i + 1) * row),
                      x.v.begin() + static_cast<std::ptrdiff_t>(b * row));
            y[b] = labels[i];
        }
    }
};

// -------------------------------------------------------------------------
// Early stopping: improvement must beat the best value by more than 1e-6
// (strictly); stops once `patience` consecutive epochs fail to improve.
class EarlyStopper {
public:
    EarlyStopper(Monitor monitor, std::size_t patience, double min_delta = 1e-6)
        : monitor_(monitor), patience_(patience), min_delta_(min_delta) {}

    // Feed one epoch's monitored value; returns true when it improved.
    bool observe(double value) {
        ++epoch_;
        const bool improved =
            epoch_ == 1 || (monitor_ == Monitor::VAL_F1 ? value > best_ + min_delta_
                                                        : value < best_ - min_delta_);
        if (improved) {
            best_ = value;
            best_epoch_ = epoch_;
            since_ = 0;
        } else {
            ++since_;
        }
        return improved;
    }

    bool should_stop() const { return since_ >= patience_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best_value() const { return best_; }

private:
    Monitor monitor_;
    std::size_t patience_;
    double min_delta_;
    std::size_t epoch_ = 0, best_epoch_ = 0, since_ = 0;
    double best_ = 0.0;
};

// -------------------------------------------------------------------------
// Adam over the flattened parameter list (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
public:
    explicit Adam(nn::Net<float>& net, double lr) : lr_(lr) {
        net.visit_params([&](const std::string&, std::vector<float>& d, std::vector<float>&,
                             const std::vector<std::size_t>&) {
            m_.emplace_back(d.size(), 0.0f);
            v_.emplace_back(d.size(), 0.0f);
        });
    }

    void step(nn::Net<float>& net) {
        ++t_;
        const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t_));
        std::size_t slot = 0;
        net.visit_params([&](const std::string&, std::vector<float>& p, std::vector<float>& g,
                             const std::vector<std::size_t>&) {
            std::vector<float>& m = m_[slot];
            std::vector<float>& v = v_[slot];
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = 0.9f * m[i] + 0.1f * g[i];
                v[i] = 0.999f * v[i] + 0.001f * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + 1e-8));
            }
            ++slot;
        });
    }

private:
    double lr_;
    std::size_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

// -------------------------------------------------------------------------
// Loss: cross-entropy weighted per true class, reduced by the sum of the
// applied weights (so balanced weights (1,1) give a plain mean). Returns the
// loss and writes d(loss)/d(logits) into dlogits.
inline double weighted_ce_loss(const nn::Tensor2<float>& logits, const std::vector<int>& y,
                               double w0, double w1, nn::Tensor2<float>& dlogits) {
    const std::size_t B = logits.nr;
    dlogits = nn::Tensor2<float>(B, 2);
    double wsum = 0.0;
    for (std::size_t i = 0; i < B; ++i) wsum += y[i] == 1 ? w1 : w0;
    double loss = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        const double z0 = logits.at(i, 0), z1 = logits.at(i, 1);
        const double m = std::max(z0, z1);
        const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
        const double lse = m + std::log(e0 + e1);
        const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
        const double w = y[i] == 1 ? w1 : w0;
        loss += w * (lse - (y[i] == 1 ? z1 : z0));
        dlogits.at(i, 0) = static_cast<float>(w * (p0 - (y[i] == 0 ? 1.0 : 0.0)) / wsum);
        dlogits.at(i, 1) = static_cast<float>(w * (p1 - (y[i] == 1 ? 1.0 : 0.0)) / wsum);
    }
    return loss / wsum;
}

// Unweighted mean cross-entropy in double (validation loss).
inline double mean_ce(const std::vector<double>& z0, const std::vector<double>& z1,
                      const std::vector<int>& y) {
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double m = std::max(z0[i], z1[i]);
        const double lse = m + std::log(std::exp(z0[i] - m) + std::exp(z1[i] - m));
        loss += lse - (y[i] == 1 ? z1[i] : z0[i]);
    }
    return loss / static_cast<double>(y.size());
}

// Eval-mode predictions over a dataset, batched.
inline metrics::PredictionSet evaluate(nn::Net<float>& net, const Dataset& ds,
                                       const std::string& context, std::size_t batch_size = 64) {
    metrics::PredictionSet ps;
    ps.context = context;
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    nn::Tensor3<float> x;
    std::vector<int> y;
    for (std::size_t lo = 0; lo < ds.size(); lo += batch_size) {
        const std::size_t hi = std::min(ds.size(), lo + batch_size);
        ds.fill_batch(idx, lo, hi, x, y);
        nn::Tensor2<float> logits = net.forward(x, false);
        for (std::size_t b = 0; b < hi - lo; ++b)
            ps.push(ds.record_ids[lo + b], logits.at(b, 0), logits.at(b, 1), y[b]);
    }
    return ps;
}

// -------------------------------------------------------------------------

struct FoldResult {
    std::vector<EpochLog> logs;
    std::size_t best_epoch = 0;
    double best_val_metric = 0.0;
    std::unique_ptr<nn::Net<float>> net; // parameters restored to the best epoch
    metrics::PredictionSet val_predictions; // from the best epoch
};

namespace detail {

using Snapshot = std::vector<std::vector<float>>;

inline Snapshot snapshot_state(nn::Net<float>& net) {
    Snapshot s;
    net.visit_params([&](const std::string&, std::vector<float>& d, std::vector<float>&,
                         const std::vector<std::size_t>&) { s.push_back(d); });
    net.visit_buffers([&](const std::string&, std::vector<float>& d,
                          const std::vector<std::size_t>&) { s.push_back(d); });
    return s;
}

inline void restore_state(nn::Net<float>& net, const Snapshot& s) {
    std::size_t i = 0;
    net.visit_params([&](const std::string&, std::vector<float>& d, std::vector<float>&,
                         const std::vector<std::size_t>&) { d = s[i++]; });
    net.visit_buffers([&](const std::string&, std::vector<float>& d,
                          const std::vector<std::size_t>&) { d = s[i++]; });
}

} // namespace detail

// Inverse-frequency class weights n_total / (2 * n_class) over the training set.
inline std::pair<double, double> auto_class_weights(const Dataset& train) {
    double n1 = 0;
    for (int v : train.labels) n1 += v == 1 ? 1 : 0;
    const double n0 = static_cast<double>(train.size()) - n1;
    if (n0 == 0 || n1 == 0)
        fail(Errc::SingleClassInput, "training pool has a single class; cannot weight");
    const double n = static_cast<double>(train.size());
    return {n / (2.0 * n0), n / (2.0 * n1)};
}

inline FoldResult train_fold(const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                             std::uint32_t fold_index = 0) {
    // Patient-safety guard before any training.
    {
        std::unordered_set<std::string> train_patients(train.patient_ids.begin(),
                                                       train.patient_ids.end());
        for (const auto& p : val.patient_ids)
            if (train_patients.count(p))
                fail(Errc::PatientLeak, "patient '" + p + "' present in both train and val");
    }
    if (train.size() == 0 || val.size() == 0)
        fail(Errc::DataError, "train and val sets must be non-empty");

    const auto [w0, w1] = cfg.class_weights ? *cfg.class_weights : auto_class_weights(train);

    FoldResult res;
    res.net = nn::build_net<float>(cfg.arch, cfg.dropout_p);
    nn::Net<float>& net = *res.net;
    // One stream per (arch, fs, fold) for init + dropout; a separate derived
    // stream orders the minibatches.
    const std::uint64_t fold_seed =
        derive_seed(derive_seed(cfg.seed, nn::arch_name(cfg.arch), cfg.fs_hz), "fold", fold_index);
    net.init_params(fold_seed);
    SplitMix64 batch_rng(derive_seed(fold_seed, "batches"));

    Adam opt(net, cfg.learning_rate);
    EarlyStopper stopper(cfg.monitor, cfg.patience);
    detail::Snapshot best_state = detail::snapshot_state(net);
    metrics::PredictionSet best_val;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    nn::Tensor3<float> x;
    std::vector<int> yb;
    nn::Tensor2<float> dlogits;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        fisher_yates_shuffle(order, batch_rng);
        double loss_sum = 0.0, weight_sum = 0.0;
        for (std::size_t lo = 0; lo < train.size(); lo += cfg.batch_size) {
            const std::size_t hi = std::min(train.size(), lo + cfg.batch_size);
            train.fill_batch(order, lo, hi, x, yb);
            net.zero_grad();
            nn::Tensor2<float> logits = net.forward(x, true);
            const double batch_loss = weighted_ce_loss(logits, yb, w0, w1, dlogits);
            if (!std::isfinite(batch_loss))
                fail(Errc::DivergedLoss, "non-finite training loss at epoch " +
                                             std::to_string(epoch));
            net.backward(dlogits);
            opt.step(net);
            double bw = 0.0;
            for (int v : yb) bw += v == 1 ? w1 : w0;
            loss_sum += batch_loss * bw;
            weight_sum += bw;
        }

        metrics::PredictionSet vp = evaluate(net, val, "val", cfg.batch_size);
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / weight_sum;
        log.val_loss = mean_ce(vp.z0, vp.z1, vp.y);
        log.val_auroc = metrics::auroc(vp.p1, vp.y);
        log.val_f1 = metrics::classification_metrics(metrics::confusion(vp.p1, vp.y, cfg.tau)).f1;
        res.logs.push_back(log);

        const double monitored = cfg.monitor == Monitor::VAL_F1 ? log.val_f1 : log.val_loss;
        if (stopper.observe(monitored)) {
            best_state = detail::snapshot_state(net);
            best_val = vp;
            best_val.context = "val";
        }
        if (stopper.should_stop()) break;
    }

    detail::restore_state(net, best_state);
    res.best_epoch = stopper.best_epoch();
    res.best_val_metric = stopper.best_value();
    res.val_predictions = best_val;
    return res;
}

// Standard k-fold rotation: fold i validates, the rest train.
inline std::vector<FoldResult> cross_validate(const TrainConfig& cfg,
                                              const std::vector<Dataset>& folds) {
    if (folds.size() < 2) fail(Errc::ConfigError, "cross_validate needs >= 2 folds");
    std::vector<FoldResult> out;
    for (std::size_t i = 0; i < folds.size(); ++i) {
        Dataset train;
        for (std::size_t j = 0; j < folds.size(); ++j) {
            if (j == i) continue;
            for (std::size_t r = 0; r < folds[j].size(); ++r) {
                EcgRecord rec;
                rec.record_id = folds[j].record_ids[r];
                rec.patient_id = folds[j].patient_ids[r];
                rec.label = folds[j].labels[r] == 1 ? Label::AFIB : Label::NORM;
                rec.n_leads = static_cast<std::uint32_t>(folds[j].n_leads);
                rec.n_samples = static_cast<std::uint32_t>(folds[j].len);
                const std::size_t row = folds[j].n_leads * folds[j].len;
                rec.samples.assign(folds[j].features.begin() + static_cast<std::ptrdiff_t>(r * row),
                                   folds[j].features.begin() +
                                       static_cast<std::ptrdiff_t>((r + 1) * row));
                train.add(rec);
            }
        }
        out.push_back(train_fold(cfg, train, folds[i], static_cast<std::uint32_t>(i)));
    }
    return out;
}

inline void write_epoch_csv(const std::vector<EpochLog>& logs, const std::string& path,
                            const std::string& config_hash = "") {
    csv::Writer w(path);
    if (!config_hash.empty()) w.comment("config_hash=" + config_hash);
    w.row({"epoch", "train_loss", "val_loss", "val_auroc", "val_f1"});
    for (const auto& l : logs)
        w.row({std::to_string(l.epoch), csv::fmt_full(l.train_loss), csv::fmt_full(l.val_loss),
               csv::fmt_full(l.val_auroc), csv::fmt_full(l.val_f1)});
    w.close();
}

} // namespace ecgfreq::train
