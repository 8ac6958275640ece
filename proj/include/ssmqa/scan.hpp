#pragma once

// Selective-scan kernels for the discretized diagonal recurrence
//   h_t = exp(delta_t * A) * h_{t-1} + zoh(A, delta_t) * B_t * u_t
//   y_t = <C_t, h_t> + D * u_t
// on a single sequence. Templated on the float type so the same code runs
// at 32 and 64 bit.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ssmqa::scan {

// Affine map h -> a * h + b; the element type of the associative scan.
template <std::floating_point T>
struct Affine {
    T a{1};
    T b{0};
};

// Apply `first`, then `second`: (a1, b1) o (a2, b2) = (a2 a1, a2 b1 + b2).
template <std::floating_point T>
constexpr Affine<T> combine(const Affine<T>& first, const Affine<T>& second) {
    return {second.a * first.a, second.a * first.b + second.b};
}

// Zero-order-hold coefficients for one (a, delta) pair.
// a_bar = exp(delta a); b_scale = (exp(delta a) - 1) / a, with b_scale = delta
// when |a| < 1e-12.
template <std::floating_point T>
struct ZohCoefficients {
    T a_bar;
    T b_scale;
};

template <std::floating_point T>
ZohCoefficients<T> zoh(T a, T delta) {
    if (!(delta > T(0))) {
        throw std::invalid_argument("zoh: delta must be positive");
    }
    const T x = delta * a;
    if (std::abs(a) < T(1e-12)) {
        return {std::exp(x), delta};
    }
    return {std::exp(x), std::expm1(x) / a};
}

// d(b_scale)/da, using a series near x = delta*a = 0 where the closed form cancels.
template <std::floating_point T>
T zoh_b_scale_da(T a, T delta) {
    const T x = delta * a;
    if (std::abs(x) < T(1e-3)) {
        return delta * delta * (T(0.5) + x / T(3) + x * x / T(8) + x * x * x / T(30));
    }
    return (x * std::exp(x) - std::expm1(x)) / (a * a);
}

template <std::floating_point T>
struct ZohResult {
    T a_bar;
    std::vector<T> b_bar;
};

template <std::floating_point T>
ZohResult<T> discretize_zoh(T a, std::span<const T> b, T delta) {
    const auto c = zoh(a, delta);
    ZohResult<T> r{c.a_bar, std::vector<T>(b.size())};
    for (std::size_t i = 0; i < b.size(); ++i) {
        r.b_bar[i] = c.b_scale * b[i];
    }
    return r;
}

// One sequence of a diagonal selective scan. Row-major layouts:
// u, delta: [T, C]; A: [C, N]; B, Cm: [T, N]; D: [C].
template <std::floating_point T>
struct ScanProblem {
    std::size_t steps = 0;
    std::size_t channels = 0;
    std::size_t state = 0;
    std::span<const T> u;
    std::span<const T> delta;
    std::span<const T> A;
    std::span<const T> B;
    std::span<const T> Cm;
    std::span<const T> D;

    void validate() const {
        const std::size_t tc = steps * channels;
        const std::size_t tn = steps * state;
        if (state < 1 || u.size() != tc || delta.size() != tc || A.size() != channels * state || B.size() != tn ||
            Cm.size() != tn || D.size() != channels) {
            throw std::invalid_argument("selective scan: inconsistent shapes (T=" + std::to_string(steps) +
                                        ", C=" + std::to_string(channels) + ", N=" + std::to_string(state) + ")");
        }
    }
};

// Sequential reference. `states`, when non-empty, receives h_t as [T, C, N].
template <std::floating_point T>
void selective_scan_sequential(const ScanProblem<T>& p, std::span<T> y, std::span<T> states = {}) {
    p.validate();
    const std::size_t C = p.channels;
    const std::size_t N = p.state;
    if (y.size() != p.steps * C || (!states.empty() && states.size() != p.steps * C * N)) {
        throw std::invalid_argument("selective scan: output size mismatch");
    }
    std::vector<T> h(C * N, T(0));
    for (std::size_t t = 0; t < p.steps; ++t) {
        const T* bt = p.B.data() + t * N;
        const T* ct = p.Cm.data() + t * N;
        for (std::size_t c = 0; c < C; ++c) {
            const T ut = p.u[t * C + c];
            const T dt = p.delta[t * C + c];
            T acc = p.D[c] * ut;
            T* hc = h.data() + c * N;
            for (std::size_t n = 0; n < N; ++n) {
                const auto z = zoh(p.A[c * N + n], dt);
                hc[n] = z.a_bar * hc[n] + z.b_scale * bt[n] * ut;
                acc += ct[n] * hc[n];
            }
            y[t * C + c] = acc;
        }
        if (!states.empty()) {
            std::copy(h.begin(), h.end(), states.begin() + static_cast<std::ptrdiff_t>(t * C * N));
        }
    }
}

// In-place inclusive scan with a work-efficient up-sweep/down-sweep tree.
// The combine order is fixed by the tree, independent of threading.
template <std::floating_point T>
void inclusive_affine_scan(std::span<Affine<T>> xs, std::vector<Affine<T>>& scratch) {
    const std::size_t n = xs.size();
    if (n <= 1) {
        return;
    }
    std::size_t size = 1;
    while (size < n) {
        size <<= 1;
    }
    scratch.assign(size, Affine<T>{});
    std::copy(xs.begin(), xs.end(), scratch.begin());
    for (std::size_t d = 1; d < size; d <<= 1) {
        for (std::size_t i = 2 * d - 1; i < size; i += 2 * d) {
            scratch[i] = combine(scratch[i - d], scratch[i]);
        }
    }
    scratch[size - 1] = Affine<T>{};
    for (std::size_t d = size >> 1; d >= 1; d >>= 1) {
        for (std::size_t i = 2 * d - 1; i < size; i += 2 * d) {
            const Affine<T> left = scratch[i - d];
            scratch[i - d] = scratch[i];
            scratch[i] = combine(scratch[i], left);
        }
    }
    // scratch now holds the exclusive prefix
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = combine(scratch[i], xs[i]);
    }
}

template <std::floating_point T>
void inclusive_affine_scan(std::span<Affine<T>> xs) {
    std::vector<Affine<T>> scratch;
    inclusive_affine_scan(xs, scratch);
}

struct ParallelOptions {
    // Worker threads over channels; results do not depend on this value.
    unsigned threads = 1;
};

// Same result as selective_scan_sequential, evaluated per (channel, state)
// lane with the associative scan over (a_bar_t, b_bar_t u_t) pairs.
template <std::floating_point T>
void selective_scan_parallel(const ScanProblem<T>& p, std::span<T> y, ParallelOptions opts = {}) {
    p.validate();
    const std::size_t C = p.channels;
    const std::size_t N = p.state;
    const std::size_t steps = p.steps;
    if (y.size() != steps * C) {
        throw std::invalid_argument("selective scan: output size mismatch");
    }
    auto run_channels = [&](std::size_t c0, std::size_t c1) {
        std::vector<Affine<T>> lane(steps);
        std::vector<Affine<T>> scratch;
        std::vector<T> acc(steps);
        for (std::size_t c = c0; c < c1; ++c) {
            for (std::size_t t = 0; t < steps; ++t) {
                acc[t] = p.D[c] * p.u[t * C + c];
            }
            for (std::size_t n = 0; n < N; ++n) {
                const T a = p.A[c * N + n];
                for (std::size_t t = 0; t < steps; ++t) {
                    const auto z = zoh(a, p.delta[t * C + c]);
                    lane[t] = {z.a_bar, z.b_scale * p.B[t * N + n] * p.u[t * C + c]};
                }
                inclusive_affine_scan(std::span<Affine<T>>(lane), scratch);
                for (std::size_t t = 0; t < steps; ++t) {
                    acc[t] += p.Cm[t * N + n] * lane[t].b;
                }
            }
            for (std::size_t t = 0; t < steps; ++t) {
                y[t * C + c] = acc[t];
            }
        }
    };
    const unsigned workers = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(C)));
    if (workers == 1) {
        run_channels(0, C);
        return;
    }
    std::vector<std::jthread> pool;
    const std::size_t per = (C + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t c0 = w * per;
        const std::size_t c1 = std::min(C, c0 + per);
        if (c0 < c1) {
            pool.emplace_back(run_channels, c0, c1);
        }
    }
}

// Scalar-per-head problem: channels are split into `heads` contiguous groups;
// each head shares one decay rate A_h and one step size delta_{t,h} across
// all its channels and state dims. delta: [T, H]; A: [H].
template <std::floating_point T>
struct HeadScanProblem {
    std::size_t steps = 0;
    std::size_t channels = 0;
    std::size_t state = 0;
    std::size_t heads = 1;
    std::span<const T> u;
    std::span<const T> delta;
    std::span<const T> A;
    std::span<const T> B;
    std::span<const T> Cm;
    std::span<const T> D;

    void validate() const {
        if (heads < 1 || channels % heads != 0 || state < 1 || u.size() != steps * channels ||
            delta.size() != steps * heads || A.size() != heads || B.size() != steps * state ||
            Cm.size() != steps * state || D.size() != channels) {
            throw std::invalid_argument("head scan: inconsistent shapes");
        }
    }
};

// Chunked evaluation: inside a chunk the output is a masked, decay-weighted
// (C_t . B_s) mixing matrix applied to the inputs; the state is carried
// across chunk boundaries.
template <std::floating_point T>
void head_scan_chunked(const HeadScanProblem<T>& p, std::size_t chunk, std::span<T> y) {
    p.validate();
    if (chunk < 1) {
        throw std::invalid_argument("head scan: chunk length must be >= 1");
    }
    const std::size_t C = p.channels;
    const std::size_t N = p.state;
    const std::size_t H = p.heads;
    const std::size_t P = C / H;
    if (y.size() != p.steps * C) {
        throw std::invalid_argument("head scan: output size mismatch");
    }
    std::vector<T> carry(C * N, T(0));
    std::vector<T> cum(chunk);
    std::vector<T> scale_in(chunk);
    std::vector<T> mix(chunk * chunk);
    for (std::size_t s0 = 0; s0 < p.steps; s0 += chunk) {
        const std::size_t len = std::min(chunk, p.steps - s0);
        for (std::size_t h = 0; h < H; ++h) {
            const T a = p.A[h];
            T running = T(0);
            for (std::size_t i = 0; i < len; ++i) {
                const T dt = p.delta[(s0 + i) * H + h];
                running += dt * a;
                cum[i] = running;
                scale_in[i] = zoh(a, dt).b_scale;
            }
            for (std::size_t i = 0; i < len; ++i) {
                const T* ci = p.Cm.data() + (s0 + i) * N;
                for (std::size_t j = 0; j <= i; ++j) {
                    const T* bj = p.B.data() + (s0 + j) * N;
                    T dot = T(0);
                    for (std::size_t n = 0; n < N; ++n) {
                        dot += ci[n] * bj[n];
                    }
                    mix[i * chunk + j] = dot * std::exp(cum[i] - cum[j]) * scale_in[j];
                }
            }
            for (std::size_t c = h * P; c < (h + 1) * P; ++c) {
                const T* hc = carry.data() + c * N;
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t t = s0 + i;
                    const T* ci = p.Cm.data() + t * N;
                    T from_carry = T(0);
                    for (std::size_t n = 0; n < N; ++n) {
                        from_carry += ci[n] * hc[n];
                    }
                    T acc = p.D[c] * p.u[t * C + c] + std::exp(cum[i]) * from_carry;
                    for (std::size_t j = 0; j <= i; ++j) {
                        acc += mix[i * chunk + j] * p.u[(s0 + j) * C + c];
                    }
                    y[t * C + c] = acc;
                }
                T* hw = carry.data() + c * N;
                const T end = cum[len - 1];
                for (std::size_t n = 0; n < N; ++n) {
                    T v = std::exp(end) * hw[n];
                    for (std::size_t j = 0; j < len; ++j) {
                        v += std::exp(end - cum[j]) * scale_in[j] * p.B[(s0 + j) * N + n] * p.u[(s0 + j) * C + c];
                    }
                    hw[n] = v;
                }
            }
        }
    }
}

} // namespace ssmqa::scan
