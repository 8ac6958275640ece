#include "ssmqa/attention.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "ssmqa/errors.hpp"
#include "ssmqa/ops.hpp"
#include "ssmqa/rng.hpp"

namespace ssmqa {

using detail::make_result;
using detail::tracks;

Tensor sliding_window_attention(const Tensor& q, const Tensor& k, const Tensor& v, int window, int heads) {
    if (window < 1) {
        throw std::invalid_argument("sliding_window_attention: window must be >= 1");
    }
    if (q.rank() != 3 || k.shape() != q.shape() || v.shape() != q.shape()) {
        throw ShapeError("sliding_window_attention: q/k/v must share shape [B, T, d], got " + shape_str(q.shape()));
    }
    if (heads < 1 || q.dim(2) % heads != 0) {
        throw ShapeError("sliding_window_attention: d_model " + std::to_string(q.dim(2)) + " not divisible by " +
                         std::to_string(heads) + " heads");
    }
    const auto B = static_cast<std::size_t>(q.dim(0));
    const auto T = static_cast<std::size_t>(q.dim(1));
    const auto d = static_cast<std::size_t>(q.dim(2));
    const auto H = static_cast<std::size_t>(heads);
    const std::size_t hd = d / H;
    const auto W = static_cast<std::size_t>(window);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    // probabilities for the visible window of every (b, h, t): [B, H, T, W]
    auto probs = std::make_shared<std::vector<double>>(B * H * T * W, 0.0);
    std::vector<double> out(B * T * d, 0.0);
    const auto qd = q.data();
    const auto kd = k.data();
    const auto vd = v.data();
    std::vector<double> s(W);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t lo = t + 1 >= W ? t + 1 - W : 0;
                const std::size_t len = t - lo + 1;
                const double* qt = qd.data() + (b * T + t) * d + h * hd;
                double mx = -INFINITY;
                for (std::size_t j = 0; j < len; ++j) {
                    const double* kj = kd.data() + (b * T + lo + j) * d + h * hd;
                    double dot = 0.0;
                    for (std::size_t e = 0; e < hd; ++e) {
                        dot += qt[e] * kj[e];
                    }
                    s[j] = dot * inv_sqrt;
                    mx = std::max(mx, s[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < len; ++j) {
                    s[j] = std::exp(s[j] - mx);
                    z += s[j];
                }
                double* pr = probs->data() + ((b * H + h) * T + t) * W;
                double* o = out.data() + (b * T + t) * d + h * hd;
                for (std::size_t j = 0; j < len; ++j) {
                    pr[j] = s[j] / z;
                    const double* vj = vd.data() + (b * T + lo + j) * d + h * hd;
                    for (std::size_t e = 0; e < hd; ++e) {
                        o[e] += pr[j] * vj[e];
                    }
                }
            }
        }
    }
    return make_result(q.shape(), std::move(out), {q, k, v},
                       [B, T, d, H, hd, W, inv_sqrt, probs](TensorImpl& self) {
                           auto& pq = self.parents[0];
                           auto& pk = self.parents[1];
                           auto& pv = self.parents[2];
                           std::vector<double> gq(B * T * d, 0.0);
                           std::vector<double> gk(B * T * d, 0.0);
                           std::vector<double> gv(B * T * d, 0.0);
                           std::vector<double> dp(W);
                           const auto& g = self.grad;
                           for (std::size_t b = 0; b < B; ++b) {
                               for (std::size_t h = 0; h < H; ++h) {
                                   for (std::size_t t = 0; t < T; ++t) {
                                       const std::size_t lo = t + 1 >= W ? t + 1 - W : 0;
                                       const std::size_t len = t - lo + 1;
                                       const double* pr = probs->data() + ((b * H + h) * T + t) * W;
                                       const double* go = g.data() + (b * T + t) * d + h * hd;
                                       double dot = 0.0;
                                       for (std::size_t j = 0; j < len; ++j) {
                                           const std::size_t row = (b * T + lo + j) * d + h * hd;
                                           double acc = 0.0;
                                           for (std::size_t e = 0; e < hd; ++e) {
                                               acc += go[e] * pv->data[row + e];
                                               gv[row + e] += pr[j] * go[e];
                                           }
                                           dp[j] = acc;
                                           dot += pr[j] * acc;
                                       }
                                       const std::size_t qrow = (b * T + t) * d + h * hd;
                                       for (std::size_t j = 0; j < len; ++j) {
                                           const double ds = pr[j] * (dp[j] - dot) * inv_sqrt;
                                           const std::size_t row = (b * T + lo + j) * d + h * hd;
                                           for (std::size_t e = 0; e < hd; ++e) {
                                               gq[qrow + e] += ds * pk->data[row + e];
                                               gk[row + e] += ds * pq->data[qrow + e];
                                           }
                                       }
                                   }
                               }
                           }
                           auto flush = [](const ImplPtr& p, const std::vector<double>& src) {
                               if (!tracks(p)) {
                                   return;
                               }
                               auto& dst = p->grad_buffer();
                               for (std::size_t i = 0; i < dst.size(); ++i) {
                                   dst[i] += src[i];
                               }
                           };
                           flush(pq, gq);
                           flush(pk, gk);
                           flush(pv, gv);
                       },
                       "sliding_window_attention");
}

std::vector<std::pair<std::string, Tensor*>> AttentionBlockParams::fields() {
    return {{"norm", &norm}, {"q_proj", &q_proj}, {"k_proj", &k_proj}, {"v_proj", &v_proj}, {"o_proj", &o_proj}};
}

AttentionBlockParams init_attention_block(const ModelConfig& cfg, std::uint64_t seed) {
    AttentionBlockParams p;
    p.d_model = cfg.d_model;
    p.heads = cfg.heads;
    p.window = cfg.swa_window;
    const std::int64_t d = cfg.d_model;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    p.norm = Tensor::ones({d});
    p.q_proj = Tensor::uniform({d, d}, derive_seed(seed, 0), -bound, bound);
    p.k_proj = Tensor::uniform({d, d}, derive_seed(seed, 1), -bound, bound);
    p.v_proj = Tensor::uniform({d, d}, derive_seed(seed, 2), -bound, bound);
    p.o_proj = Tensor::uniform({d, d}, derive_seed(seed, 3), -bound, bound);
    return p;
}

Tensor swa_block_forward(const Tensor& x, const AttentionBlockParams& p, const std::string& name,
                         const ForwardContext& ctx) {
    const Tensor n = rmsnorm(x, p.norm, ctx.norm_eps);
    const Tensor q = project(n, p.q_proj, name + ".q_proj", ctx);
    const Tensor k = project(n, p.k_proj, name + ".k_proj", ctx);
    const Tensor v = project(n, p.v_proj, name + ".v_proj", ctx);
    const Tensor att = sliding_window_attention(q, k, v, p.window, p.heads);
    return add(x, project(att, p.o_proj, name + ".o_proj", ctx));
}

} // namespace ssmqa
