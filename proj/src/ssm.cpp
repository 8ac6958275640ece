#include "ssmqa/ssm.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "ssmqa/errors.hpp"
#include "ssmqa/lora.hpp"
#include "ssmqa/ops.hpp"
#include "ssmqa/rng.hpp"
#include "ssmqa/scan.hpp"

namespace ssmqa {

using detail::make_result;
using detail::tracks;

std::string to_string(BlockVariant v) {
    switch (v) {
    case BlockVariant::diagonal: return "diagonal";
    case BlockVariant::scalar_per_head: return "scalar_per_head";
    case BlockVariant::swa_hybrid: return "swa_hybrid";
    }
    return "?";
}

BlockVariant block_variant_from_string(const std::string& s) {
    if (s == "diagonal") {
        return BlockVariant::diagonal;
    }
    if (s == "scalar_per_head") {
        return BlockVariant::scalar_per_head;
    }
    if (s == "swa_hybrid" || s == "hybrid") {
        return BlockVariant::swa_hybrid;
    }
    throw ValidationError("unknown block variant '" + s + "'");
}

std::vector<BlockVariant> ModelConfig::layer_variants() const {
    std::vector<BlockVariant> out;
    for (int i = 0; i < n_layers; ++i) {
        if (variant == BlockVariant::swa_hybrid) {
            out.push_back(i % 2 == 1 ? BlockVariant::swa_hybrid : BlockVariant::diagonal);
        } else {
            out.push_back(variant);
        }
    }
    return out;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw ValidationError("model config: " + what); };
    if (n_layers < 0) fail("n_layers must be >= 0");
    if (d_model < 1) fail("d_model must be >= 1");
    if (state_size < 1) fail("state size N must be >= 1");
    if (vocab_size < 5) fail("vocab_size must leave room beyond the 4 specials");
    if (max_seq_len < 1) fail("max_seq_len must be >= 1");
    if (expand < 1) fail("expand must be >= 1");
    if (conv_width < 1) fail("conv_width must be >= 1");
    if (heads < 1) fail("heads must be >= 1");
    if (chunk_len < 1) fail("chunk_len must be >= 1");
    if (variant == BlockVariant::scalar_per_head && d_inner() % heads != 0) fail("d_inner must divide into heads");
    if (variant == BlockVariant::swa_hybrid) {
        if (d_model % heads != 0) fail("d_model must divide into attention heads");
        if (swa_window < 1) fail("swa_window must be >= 1");
    }
}

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig c;
    c.preset_name = name;
    if (name == "toy" || name == "mamba" || name == "falcon-mamba" || name == "custom") {
        c.variant = BlockVariant::diagonal;
    } else if (name == "mamba2") {
        c.variant = BlockVariant::scalar_per_head;
        c.state_size = 64;
    } else if (name == "jamba" || name == "samba" || name == "hymba") {
        c.variant = BlockVariant::swa_hybrid;
    } else if (name == "zamba") {
        c.variant = BlockVariant::swa_hybrid;
        c.max_seq_len = 4096;
    } else {
        throw ValidationError("unknown model preset '" + name + "'");
    }
    return c;
}

std::vector<std::string> ModelConfig::preset_names() {
    return {"toy", "mamba", "mamba2", "falcon-mamba", "jamba", "zamba", "samba", "hymba"};
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"preset_name", c.preset_name}, {"n_layers", c.n_layers},
                       {"d_model", c.d_model},         {"state_size", c.state_size},
                       {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
                       {"expand", c.expand},           {"conv_width", c.conv_width},
                       {"dt_rank", c.dt_rank},         {"heads", c.heads},
                       {"swa_window", c.swa_window},   {"chunk_len", c.chunk_len},
                       {"variant", to_string(c.variant)},
                       {"scan_mode", c.scan_mode == ScanMode::parallel ? "parallel" : "sequential"},
                       {"norm_eps", c.norm_eps}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.preset_name = j.value("preset_name", d.preset_name);
    c.n_layers = j.value("n_layers", d.n_layers);
    c.d_model = j.value("d_model", d.d_model);
    c.state_size = j.value("state_size", d.state_size);
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
    c.expand = j.value("expand", d.expand);
    c.conv_width = j.value("conv_width", d.conv_width);
    c.dt_rank = j.value("dt_rank", d.dt_rank);
    c.heads = j.value("heads", d.heads);
    c.swa_window = j.value("swa_window", d.swa_window);
    c.chunk_len = j.value("chunk_len", d.chunk_len);
    c.variant = block_variant_from_string(j.value("variant", std::string("diagonal")));
    c.scan_mode = j.value("scan_mode", std::string("sequential")) == "parallel" ? ScanMode::parallel
                                                                                 : ScanMode::sequential;
    c.norm_eps = j.value("norm_eps", d.norm_eps);
}

std::vector<std::pair<std::string, Tensor*>> SsmBlockParams::fields() {
    return {{"norm", &norm},       {"in_proj", &in_proj}, {"conv_w", &conv_w}, {"conv_b", &conv_b},
            {"x_proj", &x_proj},   {"dt_proj", &dt_proj}, {"dt_bias", &dt_bias}, {"A_log", &A_log},
            {"D", &D},             {"out_proj", &out_proj}};
}

SsmBlockParams init_ssm_block(const ModelConfig& cfg, BlockVariant variant, std::uint64_t seed) {
    SsmBlockParams p;
    p.variant = variant;
    p.d_model = cfg.d_model;
    p.d_inner = cfg.d_inner();
    p.state_size = cfg.state_size;
    p.dt_rank = cfg.resolved_dt_rank();
    p.heads = variant == BlockVariant::scalar_per_head ? cfg.heads : 1;
    p.conv_width = cfg.conv_width;
    p.chunk_len = cfg.chunk_len;
    const int d = p.d_model;
    const int di = p.d_inner;
    const int n = p.state_size;
    const int r = p.dt_rank;
    auto u = [](double fan_in) { return 1.0 / std::sqrt(fan_in); };

    p.norm = Tensor::ones({d});
    p.in_proj = Tensor::uniform({d, 2 * di}, derive_seed(seed, 0), -u(d), u(d));
    p.conv_w = Tensor::uniform({cfg.conv_width, di}, derive_seed(seed, 1), -u(cfg.conv_width), u(cfg.conv_width));
    p.conv_b = Tensor::zeros({di});
    p.x_proj = Tensor::uniform({di, r + 2 * n}, derive_seed(seed, 2), -u(di), u(di));
    p.D = Tensor::ones({di});
    p.out_proj = Tensor::uniform({di, d}, derive_seed(seed, 3), -u(di), u(di));

    // step sizes log-uniform in [1e-3, 1e-1]; bias is their inverse softplus
    const int dt_width = variant == BlockVariant::scalar_per_head ? p.heads : di;
    p.dt_proj = Tensor::uniform({r, dt_width}, derive_seed(seed, 4), -u(r), u(r));
    Rng rng(derive_seed(seed, 5));
    std::vector<double> bias(static_cast<std::size_t>(dt_width));
    for (auto& b : bias) {
        const double dt = std::exp(std::log(1e-3) + rng.uniform() * (std::log(1e-1) - std::log(1e-3)));
        b = dt + std::log(-std::expm1(-dt));
    }
    p.dt_bias = Tensor::from_values({dt_width}, std::move(bias));

    if (variant == BlockVariant::scalar_per_head) {
        std::vector<double> a(static_cast<std::size_t>(p.heads));
        for (auto& v : a) {
            v = std::log(rng.uniform(1.0, 16.0));
        }
        p.A_log = Tensor::from_values({p.heads}, std::move(a));
    } else {
        std::vector<double> a(static_cast<std::size_t>(di * n));
        for (int c = 0; c < di; ++c) {
            for (int k = 0; k < n; ++k) {
                a[static_cast<std::size_t>(c * n + k)] = std::log(static_cast<double>(k + 1));
            }
        }
        p.A_log = Tensor::from_values({di, n}, std::move(a));
    }
    return p;
}

Tensor project(const Tensor& x, const Tensor& w, const std::string& name, const ForwardContext& ctx) {
    if (ctx.adapters != nullptr) {
        if (const LoraAdapter* ad = ctx.adapters->find(name)) {
            return lora_forward(x, w, *ad, ctx.training, ctx.rng);
        }
    }
    return matmul(x, w);
}

namespace {

struct ScanDims {
    std::size_t batch, steps, channels, state;
};

ScanDims scan_dims(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& Bm, const Tensor& Cm,
                   const Tensor& D) {
    if (u.rank() != 3 || delta.shape() != u.shape() || A.rank() != 2 || Bm.rank() != 3 || Cm.shape() != Bm.shape() ||
        D.rank() != 1) {
        throw ShapeError("selective_scan: bad ranks u " + shape_str(u.shape()) + " delta " +
                         shape_str(delta.shape()) + " A " + shape_str(A.shape()) + " B " + shape_str(Bm.shape()));
    }
    ScanDims d{static_cast<std::size_t>(u.dim(0)), static_cast<std::size_t>(u.dim(1)),
               static_cast<std::size_t>(u.dim(2)), static_cast<std::size_t>(A.dim(1))};
    if (A.dim(0) != u.dim(2) || D.dim(0) != u.dim(2) || Bm.dim(0) != u.dim(0) || Bm.dim(1) != u.dim(1) ||
        Bm.dim(2) != A.dim(1)) {
        throw ShapeError("selective_scan: shape mismatch u " + shape_str(u.shape()) + " A " + shape_str(A.shape()) +
                         " B " + shape_str(Bm.shape()) + " D " + shape_str(D.shape()));
    }
    return d;
}

// Sequential scan of one sequence that also stores states and coefficients.
void record_scan(const double* u, const double* delta, const double* A, const double* Bm, const double* Cm,
                 const double* D, const ScanDims& d, double* y, double* states, double* a_bars, double* b_scales) {
    const std::size_t C = d.channels;
    const std::size_t N = d.state;
    std::vector<double> h(C * N, 0.0);
    for (std::size_t t = 0; t < d.steps; ++t) {
        const double* bt = Bm + t * N;
        const double* ct = Cm + t * N;
        for (std::size_t c = 0; c < C; ++c) {
            const double ut = u[t * C + c];
            const double dt = delta[t * C + c];
            double acc = D[c] * ut;
            double* hc = h.data() + c * N;
            const std::size_t off = (t * C + c) * N;
            for (std::size_t n = 0; n < N; ++n) {
                const auto z = scan::zoh(A[c * N + n], dt);
                a_bars[off + n] = z.a_bar;
                b_scales[off + n] = z.b_scale;
                hc[n] = z.a_bar * hc[n] + z.b_scale * bt[n] * ut;
                states[off + n] = hc[n];
                acc += ct[n] * hc[n];
            }
            y[t * C + c] = acc;
        }
    }
}

// d(b_scale)/da from already computed coefficients; the series is used near zero.
double b_scale_da(double a, double dt, double a_bar, double b_scale) {
    if (std::abs(dt * a) < 1e-3) {
        return scan::zoh_b_scale_da(a, dt);
    }
    return (dt * a_bar - b_scale) / a;
}

} // namespace

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& Bm, const Tensor& Cm,
                      const Tensor& D, ScanMode mode) {
    const ScanDims d = scan_dims(u, delta, A, Bm, Cm, D);
    const std::size_t tc = d.steps * d.channels;
    const std::size_t tn = d.steps * d.state;
    const bool record = grad_enabled() && (u.requires_grad() || delta.requires_grad() || A.requires_grad() ||
                                           Bm.requires_grad() || Cm.requires_grad() || D.requires_grad());
    std::vector<double> y(d.batch * tc);
    auto states = std::make_shared<std::vector<double>>();
    // Discretization coefficients per (b, t, c, n), kept so backward needs no transcendentals.
    auto a_bars = std::make_shared<std::vector<double>>();
    auto b_scales = std::make_shared<std::vector<double>>();
    if (record) {
        states->resize(d.batch * tc * d.state);
        a_bars->resize(states->size());
        b_scales->resize(states->size());
    }
    for (std::size_t b = 0; b < d.batch; ++b) {
        if (record) {
            record_scan(u.data().data() + b * tc, delta.data().data() + b * tc, A.data().data(),
                        Bm.data().data() + b * tn, Cm.data().data() + b * tn, D.data().data(), d, y.data() + b * tc,
                        states->data() + b * tc * d.state, a_bars->data() + b * tc * d.state,
                        b_scales->data() + b * tc * d.state);
            continue;
        }
        scan::ScanProblem<double> prob;
        prob.steps = d.steps;
        prob.channels = d.channels;
        prob.state = d.state;
        prob.u = u.data().subspan(b * tc, tc);
        prob.delta = delta.data().subspan(b * tc, tc);
        prob.A = A.data();
        prob.B = Bm.data().subspan(b * tn, tn);
        prob.Cm = Cm.data().subspan(b * tn, tn);
        prob.D = D.data();
        std::span<double> yb(y.data() + b * tc, tc);
        if (mode == ScanMode::parallel) {
            scan::selective_scan_parallel(prob, yb);
        } else {
            scan::selective_scan_sequential(prob, yb);
        }
    }
    return make_result(u.shape(), std::move(y), {u, delta, A, Bm, Cm, D},
                       [d, states, a_bars, b_scales](TensorImpl& self) {
                           auto& pu = self.parents[0];
                           auto& pdelta = self.parents[1];
                           auto& pa = self.parents[2];
                           auto& pb = self.parents[3];
                           auto& pc = self.parents[4];
                           auto& pd = self.parents[5];
                           const std::size_t C = d.channels;
                           const std::size_t N = d.state;
                           const std::size_t tc = d.steps * C;
                           const std::size_t tn = d.steps * N;
                           std::vector<double> gu(pu->data.size(), 0.0);
                           std::vector<double> gdelta(pdelta->data.size(), 0.0);
                           std::vector<double> gA(pa->data.size(), 0.0);
                           std::vector<double> gB(pb->data.size(), 0.0);
                           std::vector<double> gC(pc->data.size(), 0.0);
                           std::vector<double> gD(pd->data.size(), 0.0);
                           std::vector<double> gh(C * N);
                           const auto& g = self.grad;
                           for (std::size_t b = 0; b < d.batch; ++b) {
                               std::fill(gh.begin(), gh.end(), 0.0);
                               const double* st = states->data() + b * tc * N;
                               for (std::size_t t = d.steps; t-- > 0;) {
                                   const double* bt = pb->data.data() + b * tn + t * N;
                                   const double* ct = pc->data.data() + b * tn + t * N;
                                   double* gbt = gB.data() + b * tn + t * N;
                                   double* gct = gC.data() + b * tn + t * N;
                                   for (std::size_t c = 0; c < C; ++c) {
                                       const std::size_t i = b * tc + t * C + c;
                                       const double gy = g[i];
                                       const double ut = pu->data[i];
                                       const double dt = pdelta->data[i];
                                       gD[c] += gy * ut;
                                       double gut = gy * pd->data[c];
                                       double gdt = 0.0;
                                       const double* ht = st + (t * C + c) * N;
                                       const double* hp = t > 0 ? st + ((t - 1) * C + c) * N : nullptr;
                                       const double* abc = a_bars->data() + (b * tc + t * C + c) * N;
                                       const double* bsc = b_scales->data() + (b * tc + t * C + c) * N;
                                       double* ghc = gh.data() + c * N;
                                       for (std::size_t n = 0; n < N; ++n) {
                                           const double a = pa->data[c * N + n];
                                           const double a_bar = abc[n];
                                           const double b_scale = bsc[n];
                                           gct[n] += gy * ht[n];
                                           const double ghn = ghc[n] + gy * ct[n];
                                           const double h_prev = hp != nullptr ? hp[n] : 0.0;
                                           const double d_abar = ghn * h_prev;
                                           const double d_bs = ghn * bt[n] * ut;
                                           gut += ghn * b_scale * bt[n];
                                           gbt[n] += ghn * b_scale * ut;
                                           gdt += d_abar * a * a_bar + d_bs * a_bar;
                                           gA[c * N + n] += d_abar * dt * a_bar + d_bs * b_scale_da(a, dt, a_bar, b_scale);
                                           ghc[n] = ghn * a_bar;
                                       }
                                       gu[i] += gut;
                                       gdelta[i] += gdt;
                                   }
                               }
                           }
                           auto flush = [](const ImplPtr& p, const std::vector<double>& gsrc) {
                               if (!tracks(p)) {
                                   return;
                               }
                               auto& dst = p->grad_buffer();
                               for (std::size_t k = 0; k < dst.size(); ++k) {
                                   dst[k] += gsrc[k];
                               }
                           };
                           flush(pu, gu);
                           flush(pdelta, gdelta);
                           flush(pa, gA);
                           flush(pb, gB);
                           flush(pc, gC);
                           flush(pd, gD);
                       },
                       "selective_scan");
}

Tensor head_selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& Bm, const Tensor& Cm,
                           const Tensor& D, int chunk_len) {
    if (u.rank() != 3 || delta.rank() != 3 || A.rank() != 1 || delta.dim(2) != A.dim(0) || delta.dim(0) != u.dim(0) ||
        delta.dim(1) != u.dim(1)) {
        throw ShapeError("head_selective_scan: u " + shape_str(u.shape()) + " delta " + shape_str(delta.shape()) +
                         " A " + shape_str(A.shape()));
    }
    const auto H = static_cast<std::size_t>(A.dim(0));
    const auto C = static_cast<std::size_t>(u.dim(2));
    const auto N = static_cast<std::size_t>(Bm.dim(2));
    if (C % H != 0) {
        throw ShapeError("head_selective_scan: channels do not split into heads");
    }
    const std::size_t P = C / H;
    const bool record = grad_enabled() && (u.requires_grad() || delta.requires_grad() || A.requires_grad() ||
                                           Bm.requires_grad() || Cm.requires_grad() || D.requires_grad());
    if (record) {
        std::vector<std::int64_t> channel_head(C);
        for (std::size_t c = 0; c < C; ++c) {
            channel_head[c] = static_cast<std::int64_t>(c / P);
        }
        std::vector<std::int64_t> lane_head(C * N);
        for (std::size_t i = 0; i < C * N; ++i) {
            lane_head[i] = static_cast<std::int64_t>(i / N / P);
        }
        const Tensor delta_full = index_select_last(delta, channel_head);
        const Tensor a_full = reshape(index_select_last(A, lane_head),
                                      {static_cast<std::int64_t>(C), static_cast<std::int64_t>(N)});
        return selective_scan(u, delta_full, a_full, Bm, Cm, D, ScanMode::sequential);
    }
    const auto batch = static_cast<std::size_t>(u.dim(0));
    const auto steps = static_cast<std::size_t>(u.dim(1));
    const std::size_t tc = steps * C;
    std::vector<double> y(batch * tc);
    for (std::size_t b = 0; b < batch; ++b) {
        scan::HeadScanProblem<double> prob;
        prob.steps = steps;
        prob.channels = C;
        prob.state = N;
        prob.heads = H;
        prob.u = u.data().subspan(b * tc, tc);
        prob.delta = delta.data().subspan(b * steps * H, steps * H);
        prob.A = A.data();
        prob.B = Bm.data().subspan(b * steps * N, steps * N);
        prob.Cm = Cm.data().subspan(b * steps * N, steps * N);
        prob.D = D.data();
        scan::head_scan_chunked(prob, static_cast<std::size_t>(chunk_len), std::span<double>(y.data() + b * tc, tc));
    }
    return Tensor::from_values(u.shape(), std::move(y));
}

Tensor ssm_block_forward(const Tensor& x, const SsmBlockParams& p, const std::string& name,
                         const ForwardContext& ctx) {
    if (x.rank() != 3 || x.dim(2) != p.d_model) {
        throw ShapeError("ssm block '" + name + "': input " + shape_str(x.shape()) + " does not end in d_model " +
                         std::to_string(p.d_model));
    }
    const std::int64_t di = p.d_inner;
    const std::int64_t r = p.dt_rank;
    const std::int64_t n = p.state_size;
    const Tensor h = rmsnorm(x, p.norm, ctx.norm_eps);
    const Tensor xz = project(h, p.in_proj, name + ".in_proj", ctx);
    const Tensor xi = slice_last(xz, 0, di);
    const Tensor z = slice_last(xz, di, 2 * di);
    const Tensor xc = silu(causal_conv1d(xi, p.conv_w, p.conv_b));
    const Tensor dbc = matmul(xc, p.x_proj);
    const Tensor dt_in = slice_last(dbc, 0, r);
    const Tensor bm = slice_last(dbc, r, r + n);
    const Tensor cm = slice_last(dbc, r + n, r + 2 * n);
    const Tensor delta = softplus(add(matmul(dt_in, p.dt_proj), p.dt_bias));
    const Tensor a = neg(exp(p.A_log));
    Tensor y;
    if (p.variant == BlockVariant::scalar_per_head) {
        y = head_selective_scan(xc, delta, a, bm, cm, p.D, p.chunk_len);
    } else {
        y = selective_scan(xc, delta, a, bm, cm, p.D, ctx.scan_mode);
    }
    const Tensor gated = mul(y, silu(z));
    return add(x, project(gated, p.out_proj, name + ".out_proj", ctx));
}

} // namespace ssmqa
