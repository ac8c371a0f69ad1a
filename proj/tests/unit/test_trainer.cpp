#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ecgfreq/trainer.hpp"
#include "oracles.hpp"

using namespace ecgfreq;

namespace {

Errc thrown_code(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an ecgfreq::Error");
    return Errc::InvariantViolation;
}

EcgRecord make_record(const std::string& rid, const std::string& pid, Label label,
                      std::uint32_t n_leads, std::uint32_t n_samples, std::uint64_t seed) {
    EcgRecord r;
    r.record_id = rid;
    r.patient_id = pid;
    r.label = label;
    r.fs_hz = 100;
    r.n_leads = n_leads;
    r.n_samples = n_samples;
    r.samples.resize(static_cast<std::size_t>(n_leads) * n_samples);
    SplitMix64 rng(seed);
    for (float& v : r.samples) v = static_cast<float>(rng.uniform(-1, 1));
    return r;
}

// Balanced 12-lead dataset with one record per distinct patient.
train::Dataset make_dataset(const std::string& prefix, std::size_t n, std::uint32_t len,
                            std::uint64_t seed) {
    train::Dataset ds;
    for (std::size_t i = 0; i < n; ++i)
        ds.add(make_record(prefix + std::to_string(i), prefix + "p" + std::to_string(i),
                           i % 2 == 0 ? Label::AFIB : Label::NORM, 12, len, seed + i));
    return ds;
}

}  // namespace

TEST_CASE("monitor parsing") {
    CHECK(train::parse_monitor("val_f1") == train::Monitor::VAL_F1);
    CHECK(train::parse_monitor("val_loss") == train::Monitor::VAL_LOSS);
    CHECK(thrown_code([] { train::parse_monitor("val_auroc"); }) == Errc::ConfigError);
    CHECK(std::string(train::monitor_name(train::Monitor::VAL_F1)) == "val_f1");
    CHECK(std::string(train::monitor_name(train::Monitor::VAL_LOSS)) == "val_loss");
}

TEST_CASE("early stopper on a score that plateaus") {
    // 0.8, 0.9, 0.9, 0.9 with patience 2: stops after the 4th epoch,
    // remembering epoch 2 as best.
    train::EarlyStopper s(train::Monitor::VAL_F1, 2);
    CHECK(s.observe(0.8));
    CHECK_FALSE(s.should_stop());
    CHECK(s.observe(0.9));
    CHECK_FALSE(s.should_stop());
    CHECK_FALSE(s.observe(0.9));
    CHECK_FALSE(s.should_stop());
    CHECK_FALSE(s.observe(0.9));
    CHECK(s.should_stop());
    CHECK(s.best_epoch() == 2);
    CHECK(s.best_value() == 0.9);
}

TEST_CASE("early stopper needs strict improvement beyond the minimum delta") {
    train::EarlyStopper s(train::Monitor::VAL_LOSS, 3);
    CHECK(s.observe(0.95));                 // first value always counts
    CHECK_FALSE(s.observe(0.95 - 1e-6));    // exactly at the delta: no
    CHECK(s.observe(0.9489));               // clear improvement: yes
    CHECK(s.best_epoch() == 3);
    CHECK(s.best_value() == 0.9489);

    // A terrible first value still becomes the baseline.
    train::EarlyStopper t(train::Monitor::VAL_LOSS, 1);
    CHECK(t.observe(5.0));
    CHECK(t.best_value() == 5.0);
}

TEST_CASE("weighted cross entropy with balanced weights is the plain mean") {
    SplitMix64 rng(42);
    const std::size_t B = 7;
    nn::Tensor2<float> logits(B, 2);
    std::vector<int> y(B);
    std::vector<double> z0(B), z1(B);
    for (std::size_t i = 0; i < B; ++i) {
        logits.at(i, 0) = static_cast<float>(rng.uniform(-3, 3));
        logits.at(i, 1) = static_cast<float>(rng.uniform(-3, 3));
        y[i] = rng.next() % 2 == 0 ? 1 : 0;
        z0[i] = logits.at(i, 0);
        z1[i] = logits.at(i, 1);
    }
    nn::Tensor2<float> dlogits;
    const double weighted = train::weighted_ce_loss(logits, y, 1.0, 1.0, dlogits);
    CHECK(weighted == Catch::Approx(train::mean_ce(z0, z1, y)).epsilon(1e-12));
}

TEST_CASE("weighted cross entropy worked example") {
    // Uniform logits: every sample costs ln 2; weights scale contributions
    // and the gradient, both normalized by the applied-weight sum.
    nn::Tensor2<float> logits(2, 2);  // all zeros
    std::vector<int> y = {1, 0};
    nn::Tensor2<float> d;
    const double loss = train::weighted_ce_loss(logits, y, 1.0, 3.0, d);
    CHECK(loss == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(d.at(0, 0) == Catch::Approx(3.0 * 0.5 / 4.0));
    CHECK(d.at(0, 1) == Catch::Approx(3.0 * (0.5 - 1.0) / 4.0));
    CHECK(d.at(1, 0) == Catch::Approx(1.0 * (0.5 - 1.0) / 4.0));
    CHECK(d.at(1, 1) == Catch::Approx(1.0 * 0.5 / 4.0));

    // Rescaling both weights changes nothing.
    nn::Tensor2<float> d2;
    const double loss2 = train::weighted_ce_loss(logits, y, 2.0, 6.0, d2);
    CHECK(loss2 == Catch::Approx(loss).epsilon(1e-12));
    for (std::size_t i = 0; i < d.v.size(); ++i)
        CHECK(d2.v[i] == Catch::Approx(d.v[i]).margin(1e-7));
}

TEST_CASE("weighted cross entropy gradient matches numeric differentiation") {
    SplitMix64 rng(4242);
    const std::size_t B = 5;
    const double w0 = 0.75, w1 = 1.5;
    nn::Tensor2<float> logits(B, 2);
    std::vector<int> y(B);
    for (std::size_t i = 0; i < B; ++i) {
        logits.at(i, 0) = static_cast<float>(rng.uniform(-2, 2));
        logits.at(i, 1) = static_cast<float>(rng.uniform(-2, 2));
        y[i] = rng.next() % 2 == 0 ? 1 : 0;
    }
    nn::Tensor2<float> d;
    (void)train::weighted_ce_loss(logits, y, w0, w1, d);

    nn::Tensor2<float> scratch;
    for (std::size_t i = 0; i < logits.v.size(); ++i) {
        // Perturb the float slot, then measure the step that actually landed.
        const float saved = logits.v[i];
        const float hi = saved + 1e-3f, lo = saved - 1e-3f;
        logits.v[i] = hi;
        const double up = train::weighted_ce_loss(logits, y, w0, w1, scratch);
        logits.v[i] = lo;
        const double dn = train::weighted_ce_loss(logits, y, w0, w1, scratch);
        logits.v[i] = saved;
        const double num = (up - dn) / (static_cast<double>(hi) - static_cast<double>(lo));
        CHECK(oracle::grad_rel_err(d.v[i], num) < 1e-4);
    }
}

TEST_CASE("auto class weights are inverse frequencies over half the pool") {
    train::Dataset ds;
    for (int i = 0; i < 6; ++i)
        ds.add(make_record("r" + std::to_string(i), "p" + std::to_string(i),
                           i < 2 ? Label::AFIB : Label::NORM, 2, 8, 10 + i));
    auto [w0, w1] = train::auto_class_weights(ds);
    CHECK(w0 == Catch::Approx(6.0 / (2.0 * 4.0)));
    CHECK(w1 == Catch::Approx(6.0 / (2.0 * 2.0)));

    train::Dataset mono;
    mono.add(make_record("r", "p", Label::NORM, 2, 8, 1));
    CHECK(thrown_code([&] { train::auto_class_weights(mono); }) == Errc::SingleClassInput);
}

TEST_CASE("dataset enforces a single record shape") {
    train::Dataset ds;
    ds.add(make_record("a", "pa", Label::AFIB, 2, 10, 1));
    CHECK(ds.n_leads == 2);
    CHECK(ds.len == 10);
    CHECK(thrown_code([&] { ds.add(make_record("b", "pb", Label::NORM, 2, 12, 2)); }) ==
          Errc::DataError);
    CHECK(thrown_code([&] { ds.add(make_record("c", "pc", Label::NORM, 3, 10, 3)); }) ==
          Errc::DataError);
    CHECK(ds.size() == 1);
}

TEST_CASE("fill_batch gathers rows in index order") {
    train::Dataset ds;
    for (int i = 0; i < 4; ++i) {
        EcgRecord r = make_record("r" + std::to_string(i), "p" + std::to_string(i),
                                  i % 2 == 0 ? Label::AFIB : Label::NORM, 2, 3, 0);
        for (std::size_t j = 0; j < r.samples.size(); ++j)
            r.samples[j] = static_cast<float>(10 * i + static_cast<int>(j));
        ds.add(r);
    }
    nn::Tensor3<float> x;
    std::vector<int> y;
    ds.fill_batch({3, 0, 2, 1}, 1, 3, x, y);  // rows 0 and 2
    REQUIRE(x.nb == 2);
    REQUIRE(x.nc == 2);
    REQUIRE(x.nt == 3);
    CHECK(x.at(0, 0, 0) == 0.0f);
    CHECK(x.at(0, 1, 2) == 5.0f);
    CHECK(x.at(1, 0, 0) == 20.0f);
    CHECK(x.at(1, 1, 2) == 25.0f);
    CHECK(y == std::vector<int>{1, 1});
}

TEST_CASE("training refuses patient overlap between train and val") {
    train::Dataset tr = make_dataset("t", 4, 16, 100);
    train::Dataset va = make_dataset("v", 2, 16, 200);
    va.patient_ids[0] = tr.patient_ids[1];  // inject the leak
    train::TrainConfig cfg;
    cfg.max_epochs = 1;
    CHECK(thrown_code([&] { train::train_fold(cfg, tr, va); }) == Errc::PatientLeak);

    train::Dataset empty;
    CHECK(thrown_code([&] { train::train_fold(cfg, tr, empty); }) == Errc::DataError);
    CHECK(thrown_code([&] { train::train_fold(cfg, empty, va); }) == Errc::DataError);
}

TEST_CASE("a small training fold runs deterministically end to end") {
    train::TrainConfig cfg;
    cfg.arch = nn::ArchId::CNN1D;
    cfg.fs_hz = 100;
    cfg.max_epochs = 3;
    cfg.patience = 10;
    cfg.batch_size = 4;
    cfg.seed = 2024;
    train::Dataset tr = make_dataset("t", 8, 16, 100);
    train::Dataset va = make_dataset("v", 4, 16, 200);

    train::FoldResult a = train::train_fold(cfg, tr, va, 0);
    train::FoldResult b = train::train_fold(cfg, tr, va, 0);
    REQUIRE(a.logs.size() == 3);
    REQUIRE(b.logs.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
        CHECK(a.logs[e].epoch == e + 1);
        CHECK(a.logs[e].train_loss == b.logs[e].train_loss);
        CHECK(a.logs[e].val_loss == b.logs[e].val_loss);
        CHECK(a.logs[e].val_auroc == b.logs[e].val_auroc);
        CHECK(a.logs[e].val_f1 == b.logs[e].val_f1);
    }
    CHECK(a.best_epoch == b.best_epoch);
    CHECK(a.best_val_metric == b.best_val_metric);
    CHECK(a.val_predictions.p1 == b.val_predictions.p1);
    CHECK(a.val_predictions.context == "val");
    CHECK(a.val_predictions.size() == va.size());

    // The returned net carries the best epoch's parameters: re-evaluating it
    // reproduces the stored validation predictions bit for bit.
    metrics::PredictionSet again = train::evaluate(*a.net, va, "val", cfg.batch_size);
    CHECK(again.z0 == a.val_predictions.z0);
    CHECK(again.z1 == a.val_predictions.z1);

    // A different fold index reseeds training.
    train::FoldResult c = train::train_fold(cfg, tr, va, 1);
    CHECK(c.logs[0].train_loss != a.logs[0].train_loss);
}

TEST_CASE("early stopping truncates the epoch log") {
    train::TrainConfig cfg;
    cfg.max_epochs = 50;
    cfg.patience = 2;
    cfg.batch_size = 4;
    cfg.seed = 7;
    train::Dataset tr = make_dataset("t", 8, 16, 300);
    train::Dataset va = make_dataset("v", 4, 16, 400);
    train::FoldResult r = train::train_fold(cfg, tr, va, 0);
    REQUIRE(!r.logs.empty());
    CHECK(r.logs.size() < 50);  // random-ish features cannot improve for 50 epochs
    CHECK(r.best_epoch >= 1);
    CHECK(r.best_epoch <= r.logs.size());
}

TEST_CASE("cross validation rotates folds and reseeds per fold") {
    train::TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.patience = 10;
    cfg.batch_size = 4;
    cfg.seed = 99;
    std::vector<train::Dataset> folds;
    for (int f = 0; f < 3; ++f) folds.push_back(make_dataset("f" + std::to_string(f), 4, 16, 500 + 50 * f));

    std::vector<train::FoldResult> res = train::cross_validate(cfg, folds);
    REQUIRE(res.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE(res[i].net != nullptr);
        CHECK(res[i].val_predictions.size() == folds[i].size());
        CHECK(res[i].logs.size() == 2);
        // Each fold's predictions cover exactly that fold's records.
        CHECK(res[i].val_predictions.record_ids == folds[i].record_ids);
    }
    // Fold models start from different derived seeds.
    CHECK(res[0].logs[0].train_loss != res[1].logs[0].train_loss);

    CHECK(thrown_code([&] {
              train::cross_validate(cfg, std::vector<train::Dataset>{folds[0]});
          }) == Errc::ConfigError);
}

TEST_CASE("epoch csv has the documented schema and hash comment") {
    oracle::TempDir td("trainer");
    std::vector<train::EpochLog> logs = {{1, 0.9, 0.8, 0.6, 0.5}, {2, 0.7, 0.75, 0.65, 0.55}};
    train::write_epoch_csv(logs, td.str("epochs.csv"), "cafe0123");
    std::vector<std::string> comments;
    csv::Table t = csv::read_file(td.str("epochs.csv"), &comments);
    REQUIRE(t.header ==
            std::vector<std::string>{"epoch", "train_loss", "val_loss", "val_auroc", "val_f1"});
    REQUIRE(t.rows.size() == 2);
    CHECK(csv::parse_ll(t.at(1, "epoch"), "t") == 2);
    CHECK(csv::parse_double(t.at(0, "train_loss"), "t") == 0.9);
    REQUIRE(comments.size() == 1);
    CHECK(comments[0] == "# config_hash=cafe0123");
}
