#pragma once

// Dense row-major tensors, templated on scalar so the same layer code runs
// in float for training and double for finite-difference gradient checks.

#include <cstddef>
#include <vector>

namespace ecgfreq::nn {

// 3-axis tensor. Convolutional stages use it as [batch, channel, time];
// the recurrent stage reuses it as [batch, time, feature] after the permute.
// Either way ch(i, j) is a contiguous row of length nt.
template <typename S>
struct Tensor3 {
    std::size_t nb = 0, nc = 0, nt = 0;
    std::vector<S> v;

    Tensor3() = default;
    Tensor3(std::size_t b, std::size_t c, std::size_t t) : nb(b), nc(c), nt(t), v(b * c * t, S(0)) {}

    S* ch(std::size_t b, std::size_t c) { return v.data() + (b * nc + c) * nt; }
    const S* ch(std::size_t b, std::size_t c) const { return v.data() + (b * nc + c) * nt; }
    S& at(std::size_t b, std::size_t c, std::size_t t) { return v[(b * nc + c) * nt + t]; }
    S at(std::size_t b, std::size_t c, std::size_t t) const { return v[(b * nc + c) * nt + t]; }
};

template <typename S>
struct Tensor2 {
    std::size_t nr = 0, nc = 0;
    std::vector<S> v;

    Tensor2() = default;
    Tensor2(std::size_t r, std::size_t c) : nr(r), nc(c), v(r * c, S(0)) {}

    S* row(std::size_t r) { return v.data() + r * nc; }
    const S* row(std::size_t r) const { return v.data() + r * nc; }
    S& at(std::size_t r, std::size_t c) { return v[r * nc + c]; }
    S at(std::size_t r, std::size_t c) const { return v[r * nc + c]; }
};

} // namespace ecgfreq::nn
