#pragma once

// The two architectures as explicit layer compositions behind a small
// virtual interface, plus the versioned checkpoint container. Channel
// schedules are constructor arguments so tests can build micro-models for
// gradient checks; build_cnn1d()/build_cnn_lstm() pin the real schedules.
// Graph structure never depends on the sampling rate — only activation
// lengths do.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ecgfreq/errors.hpp"
#include "ecgfreq/layers.hpp"
#include "ecgfreq/rng.hpp"
#include "ecgfreq/tensor.hpp"

namespace ecgfreq::nn {

enum class ArchId { CNN1D, CNN_LSTM };

inline std::string arch_name(ArchId a) { return a == ArchId::CNN1D ? "cnn1d" : "cnnlstm"; }

inline ArchId parse_arch(const std::string& s) {
    if (s == "cnn1d") return ArchId::CNN1D;
    if (s == "cnnlstm") return ArchId::CNN_LSTM;
    fail(Errc::ConfigError, "unknown architecture '" + s + "' (expected cnn1d|cnnlstm)");
}

template <typename S>
class Net {
public:
    virtual ~Net() = default;
    // x is [B, n_leads, T]; returns logits [B, 2]. Training mode enables
    // dropout and batch statistics; eval mode is deterministic.
    virtual Tensor2<S> forward(const Tensor3<S>& x, bool train) = 0;
    virtual void backward(const Tensor2<S>& dlogits) = 0;
    virtual void zero_grad() = 0;
    virtual void visit_params(const ParamFn<S>& fn) = 0;
    virtual void visit_buffers(const BufferFn<S>& fn) = 0;
    virtual std::size_t min_input_len() const = 0;
    virtual ArchId arch() const = 0;
    virtual double dropout_p() const = 0;
    // Deterministic weight init; also reseeds the dropout stream.
    virtual void init_params(std::uint64_t seed) = 0;

    std::size_t param_count() {
        std::size_t n = 0;
        visit_params([&](const std::string&, std::vector<S>& d, std::vector<S>&,
                         const std::vector<std::size_t>&) { n += d.size(); });
        return n;
    }

protected:
    void check_input(const Tensor3<S>& x) const {
        if (x.nt < min_input_len())
            fail(Errc::InputTooShort, std::string(arch_name(arch())) + " needs T >= " +
                                          std::to_string(min_input_len()) + ", got " +
                                          std::to_string(x.nt));
    }

    static void check_logits(const Tensor2<S>& y) {
        for (S v : y.v)
            if (!std::isfinite(static_cast<double>(v)))
                fail(Errc::NonFiniteActivation, "non-finite logit produced");
    }
};

// ---------------------------------------------------------------------------
// CNN1D: Conv(k7)+BN+ReLU+MaxPool2, Conv(k5)+BN+ReLU+MaxPool2,
// Conv(k5)+BN+ReLU+MaxPool2, Conv(k3)+BN+ReLU, adaptive avg pool -> 1,
// dropout, affine -> n_classes.
struct Cnn1dSpec {
    std::size_t n_leads = 12;
    std::vector<std::size_t> channels = {32, 64, 128, 256};
    std::vector<std::size_t> kernels = {7, 5, 5, 3};
    std::vector<bool> pool = {true, true, true, false};
    std::size_t n_classes = 2;
    double dropout_p = 0.3;
};

template <typename S>
class Cnn1d final : public Net<S> {
public:
    explicit Cnn1d(const Cnn1dSpec& spec = {}) : spec_(spec), drop_(spec.dropout_p), rng_(0) {
        std::size_t c = spec.n_leads;
        for (std::size_t i = 0; i < spec.channels.size(); ++i) {
            convs_.emplace_back(c, spec.channels[i], spec.kernels[i]);
            bns_.emplace_back(spec.channels[i]);
            c = spec.channels[i];
        }
        relus_.resize(spec.channels.size());
        pools_.resize(spec.channels.size());
        fc_ = Linear<S>(c, spec.n_classes);
        // min T: every pooled stage must keep at least one sample.
        std::size_t n_pools = 0;
        for (bool p : spec.pool) n_pools += p ? 1 : 0;
        min_len_ = std::size_t(1) << n_pools;
    }

    Tensor2<S> forward(const Tensor3<S>& x, bool train) override {
        this->check_input(x);
        Tensor3<S> h = x;
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            h = convs_[i].forward(h);
            h = bns_[i].forward(h, train);
            h = relus_[i].forward(h);
            if (spec_.pool[i]) h = pools_[i].forward(h);
        }
        Tensor2<S> f = gap_.forward(h);
        f = drop_.forward(f, train, rng_);
        Tensor2<S> y = fc_.forward(f);
        this->check_logits(y);
        return y;
    }

    void backward(const Tensor2<S>& dlogits) override {
        Tensor2<S> d2 = fc_.backward(dlogits);
        d2 = drop_.backward(d2);
        Tensor3<S> d = gap_.backward(d2);
        for (std::size_t i = convs_.size(); i-- > 0;) {
            if (spec_.pool[i]) d = pools_[i].backward(d);
            d = relus_[i].backward(d);
            d = bns_[i].backward(d);
            d = convs_[i].backward(d);
        }
    }

    void zero_grad() override {
        visit_params([](const std::string&, std::vector<S>&, std::vector<S>& g,
                        const std::vector<std::size_t>&) {
            for (S& x : g) x = S(0);
        });
    }

    void visit_params(const ParamFn<S>& fn) override {
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            const std::string p = "conv" + std::to_string(i + 1);
            convs_[i].visit(p, fn);
            bns_[i].visit("bn" + std::to_string(i + 1), fn);
        }
        fc_.visit("fc", fn);
    }

    void visit_buffers(const BufferFn<S>& fn) override {
        for (std::size_t i = 0; i < bns_.size(); ++i)
            bns_[i].visit_buffers("bn" + std::to_string(i + 1), fn);
    }

    std::size_t min_input_len() const override { return min_len_; }
    ArchId arch() const override { return ArchId::CNN1D; }
    double dropout_p() const override { return spec_.dropout_p; }

    void init_params(std::uint64_t seed) override {
        SplitMix64 rng(derive_seed(seed, "init"));
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            convs_[i].init(rng);
            bns_[i].init(rng);
        }
        fc_.init(rng);
        rng_ = SplitMix64(derive_seed(seed, "dropout"));
    }

private:
    Cnn1dSpec spec_;
    std::vector<Conv1d<S>> convs_;
    std::vector<BatchNorm1d<S>> bns_;
    std::vector<ReLU<S>> relus_;
    std::vector<MaxPool2<S>> pools_;
    AdaptiveAvgPool1<S> gap_;
    Dropout2<S> drop_;
    Linear<S> fc_;
    SplitMix64 rng_;
    std::size_t min_len_ = 8;
};

// ---------------------------------------------------------------------------
// CNN-LSTM: 8 shortcut conv blocks, each BN -> Conv(k10) -> ReLU -> Dropout
// plus a 1x1-conv shortcut added before pooling; parallel avg/max pool(2)
// outputs concatenate along channels (time halves, channels double). Then
// permute, single-layer LSTM, temporal mean pooling, dropout, affine head.
template <typename S>
struct ShortcutConvBlock {
    BatchNorm1d<S> bn;
    Conv1d<S> conv;
    ReLU<S> relu;
    Dropout<S> drop;
    Conv1d<S> shortcut;
    AvgPool2<S> avg;
    MaxPool2<S> max;

    ShortcutConvBlock(std::size_t c_in, std::size_t c_out, std::size_t k, double p)
        : bn(c_in), conv(c_in, c_out, k), drop(p), shortcut(c_in, c_out, 1) {}

    Tensor3<S> forward(const Tensor3<S>& x, bool train, SplitMix64& rng) {
        Tensor3<S> main = drop.forward(relu.forward(conv.forward(bn.forward(x, train))), train, rng);
        Tensor3<S> sc = shortcut.forward(x);
        for (std::size_t i = 0; i < main.v.size(); ++i) main.v[i] += sc.v[i];
        Tensor3<S> a = avg.forward(main);
        Tensor3<S> m = max.forward(main);
        Tensor3<S> y(a.nb, a.nc * 2, a.nt);
        for (std::size_t bi = 0; bi < a.nb; ++bi)
            for (std::size_t ci = 0; ci < a.nc; ++ci) {
                std::memcpy(y.ch(bi, ci), a.ch(bi, ci), a.nt * sizeof(S));
                std::memcpy(y.ch(bi, a.nc + ci), m.ch(bi, ci), a.nt * sizeof(S));
            }
        return y;
    }

    Tensor3<S> backward(const Tensor3<S>& dy) {
        const std::size_t C = dy.nc / 2;
        Tensor3<S> da(dy.nb, C, dy.nt), dm(dy.nb, C, dy.nt);
        for (std::size_t bi = 0; bi < dy.nb; ++bi)
            for (std::size_t ci = 0; ci < C; ++ci) {
                std::memcpy(da.ch(bi, ci), dy.ch(bi, ci), dy.nt * sizeof(S));
                std::memcpy(dm.ch(bi, ci), dy.ch(bi, C + ci), dy.nt * sizeof(S));
            }
        Tensor3<S> ds = avg.backward(da);
        Tensor3<S> dsm = max.backward(dm);
        for (std::size_t i = 0; i < ds.v.size(); ++i) ds.v[i] += dsm.v[i];
        Tensor3<S> dx = bn.backward(conv.backward(relu.backward(drop.backward(ds))));
        Tensor3<S> dsc = shortcut.backward(ds);
        for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dsc.v[i];
        return dx;
    }

    void visit(const std::string& prefix, const ParamFn<S>& fn) {
        bn.visit(prefix + ".bn", fn);
        conv.visit(prefix + ".conv", fn);
        shortcut.visit(prefix + ".shortcut", fn);
    }

    void visit_buffers(const std::string& prefix, const BufferFn<S>& fn) {
        bn.visit_buffers(prefix + ".bn", fn);
    }

    void init(SplitMix64& rng) {
        bn.init(rng);
        conv.init(rng);
        shortcut.init(rng);
    }
};

struct CnnLstmSpec {
    std::size_t n_leads = 12;
    // Conv output channels per block; concat doubles each, so block i>1 takes
    // 2 * conv_channels[i-1] inputs and the final map has 2 * back() channels.
    std::vector<std::size_t> conv_channels = {16, 16, 32, 32, 64, 64, 128, 128};
    std::size_t kernel = 10;
    std::size_t lstm_hidden = 128;
    std::size_t n_classes = 2;
    double dropout_p = 0.3;
};

template <typename S>
class CnnLstm final : public Net<S> {
public:
    explicit CnnLstm(const CnnLstmSpec& spec = {}) : spec_(spec), drop_(spec.dropout_p), rng_(0) {
        std::size_t c = spec.n_leads;
        for (std::size_t co : spec.conv_channels) {
            blocks_.emplace_back(c, co, spec.kernel, spec.dropout_p);
            c = 2 * co;
        }
        final_channels_ = c;
        lstm_ = Lstm<S>(c, spec.lstm_hidden);
        fc_ = Linear<S>(spec.lstm_hidden, spec.n_classes);
        min_len_ = std::size_t(1) << spec.conv_channels.size();
    }

    Tensor2<S> forward(const Tensor3<S>& x, bool train) override {
        this->check_input(x);
        Tensor3<S> h = x;
        for (auto& b : blocks_) h = b.forward(h, train, rng_);
        h = permute_ct(h); // [B, T', C] for the recurrent stage
        h = lstm_.forward(h);
        Tensor2<S> f = pool_.forward(h);
        f = drop_.forward(f, train, rng_);
        Tensor2<S> y = fc_.forward(f);
        this->check_logits(y);
        return y;
    }

    void backward(const Tensor2<S>& dlogits) override {
        Tensor2<S> d2 = fc_.backward(dlogits);
        d2 = drop_.backward(d2);
        Tensor3<S> d = pool_.backward(d2);
        d = lstm_.backward(d);
        d = permute_ct(d); // back to [B, C, T']
        for (std::size_t i = blocks_.size(); i-- > 0;) d = blocks_[i].backward(d);
    }

    void zero_grad() override {
        visit_params([](const std::string&, std::vector<S>&, std::vector<S>& g,
                        const std::vector<std::size_t>&) {
            for (S& x : g) x = S(0);
        });
    }

    void visit_params(const ParamFn<S>& fn) override {
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].visit("block" + std::to_string(i + 1), fn);
        lstm_.visit("lstm", fn);
        fc_.visit("fc", fn);
    }

    void visit_buffers(const BufferFn<S>& fn) override {
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].visit_buffers("block" + std::to_string(i + 1), fn);
    }

    std::size_t min_input_len() const override { return min_len_; }
    ArchId arch() const override { return ArchId::CNN_LSTM; }
    double dropout_p() const override { return spec_.dropout_p; }
    std::size_t final_channels() const { return final_channels_; }

    void init_params(std::uint64_t seed) override {
        SplitMix64 rng(derive_seed(seed, "init"));
        for (auto& b : blocks_) b.init(rng);
        lstm_.init(rng);
        fc_.init(rng);
        rng_ = SplitMix64(derive_seed(seed, "dropout"));
    }

private:
    CnnLstmSpec spec_;
    std::vector<ShortcutConvBlock<S>> blocks_;
    Lstm<S> lstm_;
    MeanOverTime<S> pool_;
    Dropout2<S> drop_;
    Linear<S> fc_;
    SplitMix64 rng_;
    std::size_t min_len_ = 256, final_channels_ = 256;
};

template <typename S = float>
std::unique_ptr<Net<S>> build_cnn1d(double dropout_p = 0.3) {
    Cnn1dSpec spec;
    spec.dropout_p = dropout_p;
    return std::make_unique<Cnn1d<S>>(spec);
}

template <typename S = float>
std::unique_ptr<Net<S>> build_cnn_lstm(double dropout_p = 0.3) {
    CnnLstmSpec spec;
    spec.dropout_p = dropout_p;
    return std::make_unique<CnnLstm<S>>(spec);
}

template <typename S = float>
std::unique_ptr<Net<S>> build_net(ArchId arch, double dropout_p = 0.3) {
    return arch == ArchId::CNN1D ? build_cnn1d<S>(dropout_p) : build_cnn_lstm<S>(dropout_p);
}

// ---------------------------------------------------------------------------
// Checkpoint container (ECKP): "ECKP" magic, u32 LE format version, u32 LE
// JSON header length, JSON header, then all tensors (params followed by
// batch-norm running stats) as float32 LE at element offsets recorded in the
// header's name -> (offset, shape) index.

struct CheckpointMeta {
    ArchId arch = ArchId::CNN1D;
    std::uint32_t fs_hz = 0;
    std::uint32_t fold = 0;
    double dropout_p = 0.3;
    std::uint32_t best_epoch = 0;
    double best_val_metric = 0.0;
    std::string monitor = "val_f1";
};

namespace detail {

inline void put_u32_le(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32_le(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) fail(Errc::BadCheckpoint, path + ": truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace detail

inline void save_checkpoint(Net<float>& net, const CheckpointMeta& meta, const std::string& path) {
    nlohmann::json tensors = nlohmann::json::array();
    std::vector<float> blob;
    auto add = [&](const std::string& name, std::vector<float>& data,
                   const std::vector<std::size_t>& shape) {
        tensors.push_back({{"name", name}, {"offset", blob.size()}, {"shape", shape}});
        blob.insert(blob.end(), data.begin(), data.end());
    };
    net.visit_params([&](const std::string& n, std::vector<float>& d, std::vector<float>&,
                         const std::vector<std::size_t>& s) { add(n, d, s); });
    net.visit_buffers([&](const std::string& n, std::vector<float>& d,
                          const std::vector<std::size_t>& s) { add(n, d, s); });
    nlohmann::json header = {{"arch", arch_name(meta.arch)},
                             {"fs_hz", meta.fs_hz},
                             {"fold", meta.fold},
                             {"dropout_p", meta.dropout_p},
                             {"best_epoch", meta.best_epoch},
                             {"best_val_metric", meta.best_val_metric},
                             {"monitor", meta.monitor},
                             {"n_values", blob.size()},
                             {"tensors", tensors}};
    const std::string hdr = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoFailure, "cannot open " + path + " for writing");
    out.write("ECKP", 4);
    detail::put_u32_le(out, 1);
    detail::put_u32_le(out, static_cast<std::uint32_t>(hdr.size()));
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    static_assert(sizeof(float) == 4);
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(blob.data()),
                  static_cast<std::streamsize>(blob.size() * 4));
    } else {
        for (float f : blob) {
            const std::uint32_t u = std::bit_cast<std::uint32_t>(f);
            detail::put_u32_le(out, u);
        }
    }
    out.flush();
    if (!out) fail(Errc::IoFailure, "write failed for " + path);
}

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::unique_ptr<Net<float>> net;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::IoFailure, "cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "ECKP", 4) != 0)
        fail(Errc::BadCheckpoint, path + ": not a checkpoint file");
    const std::uint32_t version = detail::get_u32_le(in, path);
    if (version != 1)
        fail(Errc::BadCheckpoint, path + ": format version " + std::to_string(version) +
                                      ", expected 1");
    const std::uint32_t hdr_len = detail::get_u32_le(in, path);
    std::string hdr(hdr_len, '\0');
    in.read(hdr.data(), hdr_len);
    if (in.gcount() != static_cast<std::streamsize>(hdr_len))
        fail(Errc::BadCheckpoint, path + ": truncated JSON header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hdr);
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::BadCheckpoint, path + ": bad JSON header: " + e.what());
    }

    LoadedCheckpoint lc;
    try {
        lc.meta.arch = parse_arch(header.at("arch").get<std::string>());
        lc.meta.fs_hz = header.at("fs_hz").get<std::uint32_t>();
        lc.meta.fold = header.at("fold").get<std::uint32_t>();
        lc.meta.dropout_p = header.at("dropout_p").get<double>();
        lc.meta.best_epoch = header.at("best_epoch").get<std::uint32_t>();
        lc.meta.best_val_metric = header.at("best_val_metric").get<double>();
        lc.meta.monitor = header.at("monitor").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::BadCheckpoint, path + ": missing header field: " + e.what());
    }

    std::size_t n_values = 0;
    try {
        n_values = header.at("n_values").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::BadCheckpoint, path + ": missing header field: " + e.what());
    }
    std::vector<float> blob(n_values);
    in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(n_values * 4));
    if (in.gcount() != static_cast<std::streamsize>(n_values * 4))
        fail(Errc::BadCheckpoint, path + ": truncated tensor payload");
    if constexpr (std::endian::native != std::endian::little) {
        for (float& f : blob) {
            std::uint32_t u = std::bit_cast<std::uint32_t>(f);
            u = ((u & 0xFFu) << 24) | ((u & 0xFF00u) << 8) | ((u >> 8) & 0xFF00u) | (u >> 24);
            f = std::bit_cast<float>(u);
        }
    }

    struct Slot {
        std::size_t offset;
        std::vector<std::size_t> shape;
    };
    std::unordered_map<std::string, Slot> index;
    try {
        for (const auto& t : header.at("tensors"))
            index[t.at("name").get<std::string>()] = {t.at("offset").get<std::size_t>(),
                                                      t.at("shape").get<std::vector<std::size_t>>()};
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::BadCheckpoint, path + ": bad tensor index: " + e.what());
    }

    lc.net = build_net<float>(lc.meta.arch, lc.meta.dropout_p);
    auto fill = [&](const std::string& name, std::vector<float>& data,
                    const std::vector<std::size_t>& shape) {
        auto it = index.find(name);
        if (it == index.end()) fail(Errc::BadCheckpoint, path + ": missing tensor '" + name + "'");
        if (it->second.shape != shape)
            fail(Errc::BadCheckpoint, path + ": shape mismatch for tensor '" + name + "'");
        if (it->second.offset + data.size() > blob.size())
            fail(Errc::BadCheckpoint, path + ": tensor '" + name + "' overruns payload");
        std::copy(blob.begin() + static_cast<std::ptrdiff_t>(it->second.offset),
                  blob.begin() + static_cast<std::ptrdiff_t>(it->second.offset + data.size()),
                  data.begin());
    };
    lc.net->visit_params([&](const std::string& n, std::vector<float>& d, std::vector<float>&,
                             const std::vector<std::size_t>& s) { fill(n, d, s); });
    lc.net->visit_buffers([&](const std::string& n, std::vector<float>& d,
                              const std::vector<std::size_t>& s) { fill(n, d, s); });
    return lc;
}

} // namespace ecgfreq::nn
