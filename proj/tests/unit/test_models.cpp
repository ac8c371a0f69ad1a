#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ecgfreq/models.hpp"
#include "ecgfreq/rng.hpp"
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

nn::Tensor3<float> random_input(std::size_t B, std::size_t T, std::uint64_t seed) {
    nn::Tensor3<float> x(B, 12, T);
    SplitMix64 rng(seed);
    for (float& v : x.v) v = static_cast<float>(rng.uniform(-1.5, 1.5));
    return x;
}

std::vector<float> all_params(nn::Net<float>& net) {
    std::vector<float> out;
    net.visit_params([&](const std::string&, std::vector<float>& d, std::vector<float>&,
                         const std::vector<std::size_t>&) { out.insert(out.end(), d.begin(), d.end()); });
    return out;
}

std::vector<float> all_buffers(nn::Net<float>& net) {
    std::vector<float> out;
    net.visit_buffers([&](const std::string&, std::vector<float>& d,
                          const std::vector<std::size_t>&) { out.insert(out.end(), d.begin(), d.end()); });
    return out;
}

}  // namespace

TEST_CASE("architecture names parse both ways") {
    CHECK(nn::arch_name(nn::ArchId::CNN1D) == "cnn1d");
    CHECK(nn::arch_name(nn::ArchId::CNN_LSTM) == "cnnlstm");
    CHECK(nn::parse_arch("cnn1d") == nn::ArchId::CNN1D);
    CHECK(nn::parse_arch("cnnlstm") == nn::ArchId::CNN_LSTM);
    CHECK_THROWS_AS(nn::parse_arch("resnet"), Error);
}

TEST_CASE("parameter counts are fixed by the architecture alone") {
    auto cnn = nn::build_cnn1d<float>();
    CHECK(cnn->param_count() == 154146);
    auto lstm = nn::build_cnn_lstm<float>();
    CHECK(lstm->param_count() == 917146);

    // The graph is length-agnostic: one instance serves every sampling rate,
    // and the count is identical before and after forwards at each length.
    cnn->init_params(7);
    lstm->init_params(7);
    for (std::size_t T : {620u, 1000u, 2500u, 5000u}) {
        nn::Tensor3<float> x = random_input(1, T, 1000 + T);
        nn::Tensor2<float> yc = cnn->forward(x, false);
        REQUIRE(yc.nr == 1);
        REQUIRE(yc.nc == 2);
        nn::Tensor2<float> yl = lstm->forward(x, false);
        REQUIRE(yl.nr == 1);
        REQUIRE(yl.nc == 2);
        for (float v : yc.v) CHECK(std::isfinite(v));
        for (float v : yl.v) CHECK(std::isfinite(v));
        CHECK(cnn->param_count() == 154146);
        CHECK(lstm->param_count() == 917146);
    }
}

TEST_CASE("forward emits one logit pair per batch row") {
    auto net = nn::build_cnn1d<float>();
    net->init_params(3);
    nn::Tensor3<float> x = random_input(4, 620, 55);
    nn::Tensor2<float> y = net->forward(x, true);
    CHECK(y.nr == 4);
    CHECK(y.nc == 2);
}

TEST_CASE("minimum input lengths are enforced") {
    auto cnn = nn::build_cnn1d<float>();
    CHECK(cnn->min_input_len() == 8);
    cnn->init_params(1);
    CHECK(thrown_code([&] { cnn->forward(random_input(1, 7, 1), false); }) == Errc::InputTooShort);
    CHECK_NOTHROW(cnn->forward(random_input(1, 8, 1), false));

    auto lstm = nn::build_cnn_lstm<float>();
    CHECK(lstm->min_input_len() == 256);
    lstm->init_params(1);
    CHECK(thrown_code([&] { lstm->forward(random_input(1, 255, 1), false); }) == Errc::InputTooShort);
    CHECK_NOTHROW(lstm->forward(random_input(1, 256, 1), false));
}

TEST_CASE("concatenating blocks halve time and double channels") {
    // The eight-block front end maps channels 12 -> 32 -> ... -> 256 while
    // each stage halves the clip (floor division).
    const std::vector<std::size_t> conv_channels = {16, 16, 32, 32, 64, 64, 128, 128};
    std::vector<nn::ShortcutConvBlock<float>> blocks;
    std::size_t c = 12;
    for (std::size_t co : conv_channels) {
        blocks.emplace_back(c, co, 10, 0.0);
        c = 2 * co;
    }
    SplitMix64 init_rng(4);
    for (auto& b : blocks) b.init(init_rng);

    SplitMix64 drop_rng(5);
    nn::Tensor3<float> h = random_input(1, 620, 6);
    const std::vector<std::size_t> want_t = {310, 155, 77, 38, 19, 9, 4, 2};
    const std::vector<std::size_t> want_c = {32, 32, 64, 64, 128, 128, 256, 256};
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        h = blocks[i].forward(h, false, drop_rng);
        CHECK(h.nt == want_t[i]);
        CHECK(h.nc == want_c[i]);
    }
}

TEST_CASE("recurrent stage consumes the 256-channel feature map") {
    nn::CnnLstm<float> net;
    CHECK(net.final_channels() == 256);
    bool saw_wx = false;
    net.visit_params([&](const std::string& name, std::vector<float>&, std::vector<float>&,
                         const std::vector<std::size_t>& shape) {
        if (name == "lstm.wx") {
            saw_wx = true;
            REQUIRE(shape.size() == 2);
            CHECK(shape[0] == 4 * 128);
            CHECK(shape[1] == 256);
        }
    });
    CHECK(saw_wx);
}

TEST_CASE("weight init is a pure function of the seed") {
    auto a = nn::build_cnn1d<float>();
    auto b = nn::build_cnn1d<float>();
    a->init_params(123);
    b->init_params(123);
    CHECK(all_params(*a) == all_params(*b));

    b->init_params(124);
    CHECK(all_params(*a) != all_params(*b));

    // Re-initializing resets, it does not perturb.
    b->init_params(123);
    CHECK(all_params(*a) == all_params(*b));
}

TEST_CASE("zero_grad clears every gradient slot") {
    auto net = nn::build_cnn1d<float>();
    net->init_params(9);
    nn::Tensor3<float> x = random_input(2, 64, 10);
    nn::Tensor2<float> y = net->forward(x, true);
    nn::Tensor2<float> dy(y.nr, y.nc);
    for (float& v : dy.v) v = 0.25f;
    net->backward(dy);
    double sum_before = 0.0;
    net->visit_params([&](const std::string&, std::vector<float>&, std::vector<float>& g,
                          const std::vector<std::size_t>&) {
        for (float v : g) sum_before += std::abs(static_cast<double>(v));
    });
    CHECK(sum_before > 0.0);
    net->zero_grad();
    net->visit_params([&](const std::string&, std::vector<float>&, std::vector<float>& g,
                          const std::vector<std::size_t>&) {
        for (float v : g) CHECK(v == 0.0f);
    });
}

TEST_CASE("checkpoint round trip preserves weights, buffers, and metadata") {
    oracle::TempDir td("models");
    for (nn::ArchId arch : {nn::ArchId::CNN1D, nn::ArchId::CNN_LSTM}) {
        auto net = nn::build_net<float>(arch, 0.3);
        net->init_params(77);
        // One training forward moves the normalization running stats off their
        // defaults so the buffer payload is exercised too.
        const std::size_t T = arch == nn::ArchId::CNN1D ? 64 : 512;
        (void)net->forward(random_input(2, T, 20), true);

        nn::CheckpointMeta meta;
        meta.arch = arch;
        meta.fs_hz = 100;
        meta.fold = 3;
        meta.dropout_p = 0.3;
        meta.best_epoch = 7;
        meta.best_val_metric = 0.9125;
        meta.monitor = "val_f1";
        const std::string path = td.str(nn::arch_name(arch) + ".eckp");
        nn::save_checkpoint(*net, meta, path);

        nn::LoadedCheckpoint lc = nn::load_checkpoint(path);
        CHECK(lc.meta.arch == arch);
        CHECK(lc.meta.fs_hz == 100);
        CHECK(lc.meta.fold == 3);
        CHECK(lc.meta.dropout_p == 0.3);
        CHECK(lc.meta.best_epoch == 7);
        CHECK(lc.meta.best_val_metric == 0.9125);
        CHECK(lc.meta.monitor == "val_f1");
        CHECK(all_params(*lc.net) == all_params(*net));
        CHECK(all_buffers(*lc.net) == all_buffers(*net));

        // Eval-mode logits are bit-identical on both instances.
        nn::Tensor3<float> probe = random_input(2, T, 21);
        CHECK(net->forward(probe, false).v == lc.net->forward(probe, false).v);
    }
}

TEST_CASE("corrupt checkpoints are rejected with a stable code") {
    oracle::TempDir td("models_corrupt");
    auto net = nn::build_cnn1d<float>();
    net->init_params(5);
    nn::CheckpointMeta meta;
    meta.arch = nn::ArchId::CNN1D;
    const std::string good = td.str("good.eckp");
    nn::save_checkpoint(*net, meta, good);

    auto clone = [&](const std::string& name) {
        std::ifstream in(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return std::pair<std::string, std::string>(td.str(name), bytes);
    };

    {
        auto [path, bytes] = clone("magic.eckp");
        bytes[0] = 'X';
        std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        CHECK(thrown_code([&] { nn::load_checkpoint(path); }) == Errc::BadCheckpoint);
    }
    {
        auto [path, bytes] = clone("version.eckp");
        bytes[4] = 2;  // format version u32 LE
        std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        CHECK(thrown_code([&] { nn::load_checkpoint(path); }) == Errc::BadCheckpoint);
    }
    {
        auto [path, bytes] = clone("truncated.eckp");
        bytes.resize(bytes.size() - 100);
        std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        CHECK(thrown_code([&] { nn::load_checkpoint(path); }) == Errc::BadCheckpoint);
    }
    CHECK(thrown_code([&] { nn::load_checkpoint(td.str("absent.eckp")); }) == Errc::IoFailure);
}

TEST_CASE("dropout stream differs between training forwards but not eval ones") {
    auto net = nn::build_cnn1d<float>(0.5);
    net->init_params(11);
    nn::Tensor3<float> x = random_input(2, 64, 30);
    // Two training forwards consume the dropout stream: masks differ.
    nn::Tensor2<float> t1 = net->forward(x, true);
    nn::Tensor2<float> t2 = net->forward(x, true);
    CHECK(t1.v != t2.v);
    // Eval forwards are pure.
    net->init_params(11);
    nn::Tensor2<float> e1 = net->forward(x, false);
    nn::Tensor2<float> e2 = net->forward(x, false);
    CHECK(e1.v == e2.v);
}
