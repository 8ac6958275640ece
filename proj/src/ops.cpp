#include "ssmqa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "ssmqa/errors.hpp"
#include "ssmqa/rng.hpp"

namespace ssmqa {

using detail::make_result;
using detail::tracks;

namespace {

// Number of elements of `b` when its shape is a trailing suffix of `a`.
std::size_t suffix_period(const Tensor& a, const Tensor& b, const char* op) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
        throw ShapeError(std::string(op) + ": cannot combine " + shape_str(as) + " with " + shape_str(bs));
    }
    return b.numel();
}

enum class BinOp { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp kind, const char* name) {
    const std::size_t period = suffix_period(a, b, name);
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(x.size());
    if (period == 0) {
        return make_result(a.shape(), std::move(out), {a, b}, nullptr, name);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = y[i % period];
        switch (kind) {
        case BinOp::add: out[i] = x[i] + v; break;
        case BinOp::sub: out[i] = x[i] - v; break;
        case BinOp::mul: out[i] = x[i] * v; break;
        }
    }
    return make_result(a.shape(), std::move(out), {a, b},
                       [kind, period](TensorImpl& self) {
                           auto& pa = self.parents[0];
                           auto& pb = self.parents[1];
                           const auto& g = self.grad;
                           if (tracks(pa)) {
                               auto& ga = pa->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   ga[i] += kind == BinOp::mul ? g[i] * pb->data[i % period] : g[i];
                               }
                           }
                           if (tracks(pb)) {
                               auto& gb = pb->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   switch (kind) {
                                   case BinOp::add: gb[i % period] += g[i]; break;
                                   case BinOp::sub: gb[i % period] -= g[i]; break;
                                   case BinOp::mul: gb[i % period] += g[i] * pa->data[i]; break;
                                   }
                               }
                           }
                       },
                       name);
}

struct MatDims {
    std::size_t batch, m, k, n;
    bool b_batched;
};

MatDims matmul_dims(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul: operands must be at least 2-D, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    MatDims d{};
    d.m = static_cast<std::size_t>(a.dim(-2));
    d.k = static_cast<std::size_t>(a.dim(-1));
    d.n = static_cast<std::size_t>(b.dim(-1));
    if (static_cast<std::size_t>(b.dim(-2)) != d.k) {
        throw ShapeError("matmul: inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    d.batch = (d.m * d.k == 0) ? 0 : a.numel() / (d.m * d.k);
    d.b_batched = b.rank() > 2;
    if (d.b_batched) {
        const auto& as = a.shape();
        const auto& bs = b.shape();
        if (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) {
            throw ShapeError("matmul: batch dims differ: " + shape_str(as) + " x " + shape_str(bs));
        }
    }
    return d;
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) {
                continue;
            }
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                ci[j] += av * bp[j];
            }
        }
    }
}

// da[m,k] += dc[m,n] * b[k,n]^T. b is transposed once so the inner loop runs
// over contiguous k and vectorizes, instead of m*k serial dot products.
void gemm_nt(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> bt(k * n);
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) {
            bt[j * k + p] = b[p * n + j];
        }
    }
    gemm_nn(dc, bt.data(), da, m, n, k);
}

// db[k,n] += a[m,k]^T * dc[m,n]
void gemm_tn(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* gi = dc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) {
                continue;
            }
            double* bp = db + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                bp[j] += av * gi[j];
            }
        }
    }
}

std::size_t normalize_axis(int axis, int rank, const char* op) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " +
                         std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul, "mul"); }

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) {
        v *= s;
    }
    return make_result(a.shape(), std::move(out), {a},
                       [s](TensorImpl& self) {
                           auto& ga = self.parents[0]->grad_buffer();
                           for (std::size_t i = 0; i < ga.size(); ++i) {
                               ga[i] += s * self.grad[i];
                           }
                       },
                       "scale");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const MatDims d = matmul_dims(a, b);
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(static_cast<std::int64_t>(d.n));
    std::vector<double> out(d.batch * d.m * d.n, 0.0);
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    for (std::size_t s = 0; s < d.batch; ++s) {
        gemm_nn(ap + s * d.m * d.k, bp + (d.b_batched ? s * d.k * d.n : 0), out.data() + s * d.m * d.n, d.m, d.k,
                d.n);
    }
    return make_result(std::move(out_shape), std::move(out), {a, b},
                       [d](TensorImpl& self) {
                           auto& pa = self.parents[0];
                           auto& pb = self.parents[1];
                           const double* g = self.grad.data();
                           if (tracks(pa)) {
                               double* ga = pa->grad_buffer().data();
                               const double* bv = pb->data.data();
                               for (std::size_t s = 0; s < d.batch; ++s) {
                                   gemm_nt(g + s * d.m * d.n, bv + (d.b_batched ? s * d.k * d.n : 0),
                                           ga + s * d.m * d.k, d.m, d.k, d.n);
                               }
                           }
                           if (tracks(pb)) {
                               double* gb = pb->grad_buffer().data();
                               const double* av = pa->data.data();
                               for (std::size_t s = 0; s < d.batch; ++s) {
                                   gemm_tn(av + s * d.m * d.k, g + s * d.m * d.n,
                                           gb + (d.b_batched ? s * d.k * d.n : 0), d.m, d.k, d.n);
                               }
                           }
                       },
                       "matmul");
}

Tensor transpose(const Tensor& a) {
    if (a.rank() < 2) {
        throw ShapeError("transpose: need rank >= 2, got " + shape_str(a.shape()));
    }
    const auto rows = static_cast<std::size_t>(a.dim(-2));
    const auto cols = static_cast<std::size_t>(a.dim(-1));
    const std::size_t mat = rows * cols;
    const std::size_t batch = mat == 0 ? 0 : a.numel() / mat;
    Shape shape = a.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    std::vector<double> out(a.numel());
    const auto x = a.data();
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                out[s * mat + j * rows + i] = x[s * mat + i * cols + j];
            }
        }
    }
    return make_result(std::move(shape), std::move(out), {a},
                       [rows, cols, batch, mat](TensorImpl& self) {
                           auto& ga = self.parents[0]->grad_buffer();
                           for (std::size_t s = 0; s < batch; ++s) {
                               for (std::size_t i = 0; i < rows; ++i) {
                                   for (std::size_t j = 0; j < cols; ++j) {
                                       ga[s * mat + i * cols + j] += self.grad[s * mat + j * rows + i];
                                   }
                               }
                           }
                       },
                       "transpose");
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (shape_numel(shape) != static_cast<std::int64_t>(a.numel())) {
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result(shape, std::move(out), {a},
                       [](TensorImpl& self) {
                           auto& ga = self.parents[0]->grad_buffer();
                           for (std::size_t i = 0; i < ga.size(); ++i) {
                               ga[i] += self.grad[i];
                           }
                       },
                       "reshape");
}

Tensor slice_last(const Tensor& a, std::int64_t begin, std::int64_t end) {
    const std::int64_t width = a.dim(-1);
    if (begin < 0 || end < begin || end > width) {
        throw ShapeError("slice_last: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                         shape_str(a.shape()));
    }
    const auto w = static_cast<std::size_t>(width);
    const auto b0 = static_cast<std::size_t>(begin);
    const auto len = static_cast<std::size_t>(end - begin);
    const std::size_t rows = w == 0 ? 0 : a.numel() / w;
    Shape shape = a.shape();
    shape.back() = end - begin;
    std::vector<double> out(rows * len);
    const auto x = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(r * w + b0), len,
                    out.begin() + static_cast<std::ptrdiff_t>(r * len));
    }
    return make_result(std::move(shape), std::move(out), {a},
                       [rows, w, b0, len](TensorImpl& self) {
                           auto& ga = self.parents[0]->grad_buffer();
                           for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t j = 0; j < len; ++j) {
                                   ga[r * w + b0 + j] += self.grad[r * len + j];
                               }
                           }
                       },
                       "slice_last");
}

Tensor index_select_last(const Tensor& a, std::span<const std::int64_t> index) {
    const auto w = static_cast<std::size_t>(a.dim(-1));
    for (auto i : index) {
        if (i < 0 || static_cast<std::size_t>(i) >= w) {
            throw ShapeError("index_select_last: index " + std::to_string(i) + " out of range " + std::to_string(w));
        }
    }
    const std::size_t rows = w == 0 ? 0 : a.numel() / w;
    const std::size_t n = index.size();
    Shape shape = a.shape();
    shape.back() = static_cast<std::int64_t>(n);
    std::vector<double> out(rows * n);
    const auto x = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) {
            out[r * n + j] = x[r * w + static_cast<std::size_t>(index[j])];
        }
    }
    std::vector<std::int64_t> idx(index.begin(), index.end());
    return make_result(std::move(shape), std::move(out), {a},
                       [rows, w, idx = std::move(idx)](TensorImpl& self) {
                           auto& ga = self.parents[0]->grad_buffer();
                           const std::size_t n = idx.size();
                           for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t j = 0; j < n; ++j) {
                                   ga[r * w + static_cast<std::size_t>(idx[j])] += self.grad[r * n + j];
                               }
                           }
                       },
                       "index_select_last");
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids, const Shape& ids_shape) {
    if (table.rank() != 2) {
        throw ShapeError("embedding: table must be [V, d], got " + shape_str(table.shape()));
    }
    if (shape_numel(ids_shape) != static_cast<std::int64_t>(ids.size())) {
        throw ShapeError("embedding: ids do not match shape " + shape_str(ids_shape));
    }
    const std::int64_t vocab = table.dim(0);
    const auto d = static_cast<std::size_t>(table.dim(1));
    for (auto id : ids) {
        if (id < 0 || id >= vocab) {
            throw std::out_of_range("embedding: token id " + std::to_string(id) + " outside vocab of " +
                                    std::to_string(vocab));
        }
    }
    Shape shape = ids_shape;
    shape.push_back(static_cast<std::int64_t>(d));
    std::vector<double> out(ids.size() * d);
    const auto t = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(t.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[i]) * d), d,
                    out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    std::vector<std::int64_t> rows(ids.begin(), ids.end());
    return make_result(std::move(shape), std::move(out), {table},
                       [d, rows = std::move(rows)](TensorImpl& self) {
                           auto& gt = self.parents[0]->grad_buffer();
                           for (std::size_t i = 0; i < rows.size(); ++i) {
                               const std::size_t base = static_cast<std::size_t>(rows[i]) * d;
                               for (std::size_t j = 0; j < d; ++j) {
                                   gt[base + j] += self.grad[i * d + j];
                               }
                           }
                       },
                       "embedding");
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Tensor map_unary(const Tensor& x, Unary f) {
    const auto in = x.data();
    std::vector<double> out(in.size());
    const char* name = "unary";
    switch (f) {
    case Unary::exp:
        name = "exp";
        for (std::size_t i = 0; i < in.size(); ++i) {
            out[i] = std::exp(in[i]);
        }
        detail::check_finite(out, name);
        break;
    case Unary::sigmoid:
        name = "sigmoid";
        for (std::size_t i = 0; i < in.size(); ++i) {
            out[i] = stable_sigmoid(in[i]);
        }
        break;
    case Unary::silu:
        name = "silu";
        for (std::size_t i = 0; i < in.size(); ++i) {
            out[i] = in[i] * stable_sigmoid(in[i]);
        }
        break;
    case Unary::softplus:
        name = "softplus";
        for (std::size_t i = 0; i < in.size(); ++i) {
            out[i] = stable_softplus(in[i]);
        }
        break;
    case Unary::neg:
        name = "neg";
        for (std::size_t i = 0; i < in.size(); ++i) {
            out[i] = -in[i];
        }
        break;
    }
    return make_result(x.shape(), std::move(out), {x},
                       [f](TensorImpl& self) {
                           auto& p = self.parents[0];
                           auto& gx = p->grad_buffer();
                           const auto& xv = p->data;
                           const auto& g = self.grad;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               double dydx = 0.0;
                               switch (f) {
                               case Unary::exp: dydx = self.data[i]; break;
                               case Unary::sigmoid: dydx = self.data[i] * (1.0 - self.data[i]); break;
                               case Unary::silu: {
                                   const double s = stable_sigmoid(xv[i]);
                                   dydx = s + xv[i] * s * (1.0 - s);
                                   break;
                               }
                               case Unary::softplus: dydx = stable_sigmoid(xv[i]); break;
                               case Unary::neg: dydx = -1.0; break;
                               }
                               gx[i] += g[i] * dydx;
                           }
                       },
                       name);
}

Tensor softmax(const Tensor& x, int axis) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
    const auto& shape = x.shape();
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (std::size_t i = 0; i < ax; ++i) {
        outer *= static_cast<std::size_t>(shape[i]);
    }
    for (std::size_t i = ax + 1; i < shape.size(); ++i) {
        inner *= static_cast<std::size_t>(shape[i]);
    }
    const auto len = static_cast<std::size_t>(shape[ax]);
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = o * len * inner + j;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < len; ++k) {
                mx = std::max(mx, in[base + k * inner]);
            }
            double z = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                const double e = std::exp(in[base + k * inner] - mx);
                out[base + k * inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < len; ++k) {
                out[base + k * inner] /= z;
            }
        }
    }
    return make_result(x.shape(), std::move(out), {x},
                       [outer, inner, len](TensorImpl& self) {
                           auto& gx = self.parents[0]->grad_buffer();
                           const auto& y = self.data;
                           const auto& g = self.grad;
                           for (std::size_t o = 0; o < outer; ++o) {
                               for (std::size_t j = 0; j < inner; ++j) {
                                   const std::size_t base = o * len * inner + j;
                                   double dot = 0.0;
                                   for (std::size_t k = 0; k < len; ++k) {
                                       dot += g[base + k * inner] * y[base + k * inner];
                                   }
                                   for (std::size_t k = 0; k < len; ++k) {
                                       const std::size_t i = base + k * inner;
                                       gx[i] += y[i] * (g[i] - dot);
                                   }
                               }
                           }
                       },
                       "softmax");
}

Tensor rmsnorm(const Tensor& x, const Tensor& gamma, double eps) {
    if (gamma.rank() != 1 || x.rank() < 1 || gamma.dim(0) != x.dim(-1)) {
        throw ShapeError("rmsnorm: gamma " + shape_str(gamma.shape()) + " does not match " + shape_str(x.shape()));
    }
    const auto d = static_cast<std::size_t>(x.dim(-1));
    const std::size_t rows = d == 0 ? 0 : x.numel() / d;
    const auto in = x.data();
    const auto gm = gamma.data();
    std::vector<double> out(in.size());
    std::vector<double> inv_rms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            ss += in[r * d + j] * in[r * d + j];
        }
        const double s = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
        inv_rms[r] = s;
        for (std::size_t j = 0; j < d; ++j) {
            out[r * d + j] = gm[j] * in[r * d + j] * s;
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma},
                       [d, rows, inv_rms = std::move(inv_rms)](TensorImpl& self) {
                           auto& px = self.parents[0];
                           auto& pg = self.parents[1];
                           const auto& xv = px->data;
                           const auto& gv = pg->data;
                           const auto& g = self.grad;
                           const auto dd = static_cast<double>(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double s = inv_rms[r];
                               if (tracks(px)) {
                                   auto& gx = px->grad_buffer();
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       dot += g[r * d + j] * gv[j] * xv[r * d + j];
                                   }
                                   const double c = s * s * s * dot / dd;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       gx[r * d + j] += gv[j] * s * g[r * d + j] - c * xv[r * d + j];
                                   }
                               }
                               if (tracks(pg)) {
                                   auto& gg = pg->grad_buffer();
                                   for (std::size_t j = 0; j < d; ++j) {
                                       gg[j] += g[r * d + j] * xv[r * d + j] * s;
                                   }
                               }
                           }
                       },
                       "rmsnorm");
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets, std::int64_t ignore_index,
                     std::span<const double> weights) {
    if (logits.rank() < 1) {
        throw ShapeError("cross_entropy: logits must have a class dim");
    }
    const auto v = static_cast<std::size_t>(logits.dim(-1));
    const std::size_t rows = v == 0 ? 0 : logits.numel() / v;
    if (targets.size() != rows) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) +
                         " rows");
    }
    if (!weights.empty() && weights.size() != rows) {
        throw ShapeError("cross_entropy: weights do not match rows");
    }
    std::size_t counted = 0;
    for (auto t : targets) {
        if (t == ignore_index) {
            continue;
        }
        if (t < 0 || static_cast<std::size_t>(t) >= v) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(v) +
                                    " classes");
        }
        ++counted;
    }
    if (counted == 0) {
        throw std::invalid_argument("cross_entropy: every position is ignored");
    }
    std::vector<double> w(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] != ignore_index) {
            w[r] = weights.empty() ? 1.0 / static_cast<double>(counted) : weights[r];
        }
    }
    const auto x = logits.data();
    std::vector<double> probs(rows * v);
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (w[r] == 0.0) {
            continue;
        }
        const double* row = x.data() + r * v;
        const double mx = *std::max_element(row, row + v);
        double z = 0.0;
        for (std::size_t k = 0; k < v; ++k) {
            const double e = std::exp(row[k] - mx);
            probs[r * v + k] = e;
            z += e;
        }
        for (std::size_t k = 0; k < v; ++k) {
            probs[r * v + k] /= z;
        }
        const double lse = mx + std::log(z);
        loss += w[r] * (lse - row[static_cast<std::size_t>(targets[r])]);
    }
    std::vector<std::int64_t> tg(targets.begin(), targets.end());
    return make_result({}, {loss}, {logits},
                       [v, rows, w = std::move(w), probs = std::move(probs), tg = std::move(tg)](TensorImpl& self) {
                           auto& gx = self.parents[0]->grad_buffer();
                           const double g = self.grad[0];
                           for (std::size_t r = 0; r < rows; ++r) {
                               if (w[r] == 0.0) {
                                   continue;
                               }
                               const double c = g * w[r];
                               for (std::size_t k = 0; k < v; ++k) {
                                   gx[r * v + k] += c * probs[r * v + k];
                               }
                               gx[r * v + static_cast<std::size_t>(tg[r])] -= c;
                           }
                       },
                       "cross_entropy");
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) {
        s += v;
    }
    return make_result({}, {s}, {x},
                       [](TensorImpl& self) {
                           auto& gx = self.parents[0]->grad_buffer();
                           for (auto& g : gx) {
                               g += self.grad[0];
                           }
                       },
                       "sum");
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) {
        throw ShapeError("mean of empty tensor");
    }
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) {
        throw std::invalid_argument("dropout: p must be in [0, 1)");
    }
    if (!training || p == 0.0) {
        return x;
    }
    const double keep = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) {
        m = rng.uniform() < p ? 0.0 : keep;
    }
    return mul(x, Tensor::from_values(x.shape(), std::move(mask)));
}

Tensor causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() < 2 || weight.rank() != 2 || bias.rank() != 1 || weight.dim(1) != x.dim(-1) ||
        bias.dim(0) != x.dim(-1)) {
        throw ShapeError("causal_conv1d: x " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                         ", bias " + shape_str(bias.shape()));
    }
    const auto c = static_cast<std::size_t>(x.dim(-1));
    const auto t_len = static_cast<std::size_t>(x.dim(-2));
    const auto k = static_cast<std::size_t>(weight.dim(0));
    const std::size_t seq = t_len * c;
    const std::size_t batch = seq == 0 ? 0 : x.numel() / seq;
    const auto in = x.data();
    const auto w = weight.data();
    const auto b = bias.data();
    std::vector<double> out(x.numel());
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t t = 0; t < t_len; ++t) {
            double* o = out.data() + s * seq + t * c;
            std::copy(b.begin(), b.end(), o);
            for (std::size_t j = 0; j < k; ++j) {
                // tap j reads input at t - (k - 1) + j
                if (t + j + 1 < k) {
                    continue;
                }
                const double* xi = in.data() + s * seq + (t + j + 1 - k) * c;
                const double* wj = w.data() + j * c;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    o[ch] += wj[ch] * xi[ch];
                }
            }
        }
    }
    return make_result(x.shape(), std::move(out), {x, weight, bias},
                       [c, t_len, k, seq, batch](TensorImpl& self) {
                           auto& px = self.parents[0];
                           auto& pw = self.parents[1];
                           auto& pb = self.parents[2];
                           const auto& g = self.grad;
                           const bool gx_on = tracks(px);
                           const bool gw_on = tracks(pw);
                           double* gx = gx_on ? px->grad_buffer().data() : nullptr;
                           double* gw = gw_on ? pw->grad_buffer().data() : nullptr;
                           if (tracks(pb)) {
                               auto& gb = pb->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   gb[i % c] += g[i];
                               }
                           }
                           if (!gx_on && !gw_on) {
                               return;
                           }
                           for (std::size_t s = 0; s < batch; ++s) {
                               for (std::size_t t = 0; t < t_len; ++t) {
                                   const double* go = g.data() + s * seq + t * c;
                                   for (std::size_t j = 0; j < k; ++j) {
                                       if (t + j + 1 < k) {
                                           continue;
                                       }
                                       const std::size_t src = s * seq + (t + j + 1 - k) * c;
                                       for (std::size_t ch = 0; ch < c; ++ch) {
                                           if (gx_on) {
                                               gx[src + ch] += go[ch] * pw->data[j * c + ch];
                                           }
                                           if (gw_on) {
                                               gw[j * c + ch] += go[ch] * px->data[src + ch];
                                           }
                                       }
                                   }
                               }
                           }
                       },
                       "causal_conv1d");
}

} // namespace ssmqa
