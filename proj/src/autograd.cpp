#include "claire/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace claire {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using CRowMap = Eigen::Map<const RowMat>;

bool any_grad(std::initializer_list<Var> vs) {
    for (const auto& v : vs)
        if (v->requires_grad) return true;
    return false;
}

Var make_result(Tensor value, std::vector<Var> parents) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw invalid_input_error(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                  " vs " + b->value.shape_str());
}

// im2col for stride-1, zero-padded convolution. col is (Cin*K*K) x (Ho*Wo), row-major.
void im2col(const double* x, std::size_t C, std::size_t H, std::size_t W, std::size_t K,
            std::size_t pad, double* col) {
    const std::size_t Ho = H + 2 * pad - K + 1;
    const std::size_t Wo = W + 2 * pad - K + 1;
    const std::size_t cols = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ki = 0; ki < K; ++ki) {
            for (std::size_t kj = 0; kj < K; ++kj) {
                double* dst = col + ((c * K + ki) * K + kj) * cols;
                for (std::size_t oi = 0; oi < Ho; ++oi) {
                    const long ii = static_cast<long>(oi + ki) - static_cast<long>(pad);
                    if (ii < 0 || ii >= static_cast<long>(H)) {
                        std::fill(dst + oi * Wo, dst + (oi + 1) * Wo, 0.0);
                        continue;
                    }
                    const double* src = x + (c * H + ii) * W;
                    for (std::size_t oj = 0; oj < Wo; ++oj) {
                        const long jj = static_cast<long>(oj + kj) - static_cast<long>(pad);
                        dst[oi * Wo + oj] =
                            (jj < 0 || jj >= static_cast<long>(W)) ? 0.0 : src[jj];
                    }
                }
            }
        }
    }
}

void col2im_accum(const double* col, std::size_t C, std::size_t H, std::size_t W, std::size_t K,
                  std::size_t pad, double* dx) {
    const std::size_t Ho = H + 2 * pad - K + 1;
    const std::size_t Wo = W + 2 * pad - K + 1;
    const std::size_t cols = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ki = 0; ki < K; ++ki) {
            for (std::size_t kj = 0; kj < K; ++kj) {
                const double* src = col + ((c * K + ki) * K + kj) * cols;
                for (std::size_t oi = 0; oi < Ho; ++oi) {
                    const long ii = static_cast<long>(oi + ki) - static_cast<long>(pad);
                    if (ii < 0 || ii >= static_cast<long>(H)) continue;
                    double* dst = dx + (c * H + ii) * W;
                    for (std::size_t oj = 0; oj < Wo; ++oj) {
                        const long jj = static_cast<long>(oj + kj) - static_cast<long>(pad);
                        if (jj >= 0 && jj < static_cast<long>(W)) dst[jj] += src[oi * Wo + oj];
                    }
                }
            }
        }
    }
}

}  // namespace

Var make_var(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

Var make_const(Tensor value) { return make_var(std::move(value), false); }

Var make_scalar(double v) { return make_const(Tensor::from_data({1}, {v})); }

void backward(const Var& root) {
    if (!root->grad.same_shape(root->value)) {
        root->ensure_grad();
        root->grad.fill(1.0);
    }
    // Iterative post-order DFS over parents.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->requires_grad) n->backward_fn();
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    auto r = make_result(std::move(out), {a, b});
    if (r->requires_grad) {
        Var ra = a, rb = b;
        Node* rn = r.get();
        r->backward_fn = [ra, rb, rn] {
            const Tensor& g = rn->grad;
            if (ra->requires_grad) {
                Tensor& ga = ra->ensure_grad();
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            if (rb->requires_grad) {
                Tensor& gb = rb->ensure_grad();
                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
            }
        };
    }
    return r;
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    auto r = make_result(std::move(out), {a, b});
    if (r->requires_grad) {
        Var ra = a, rb = b;
        Node* rn = r.get();
        r->backward_fn = [ra, rb, rn] {
            const Tensor& g = rn->grad;
            if (ra->requires_grad) {
                Tensor& ga = ra->ensure_grad();
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            if (rb->requires_grad) {
                Tensor& gb = rb->ensure_grad();
                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
            }
        };
    }
    return r;
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    auto r = make_result(std::move(out), {a, b});
    if (r->requires_grad) {
        Var ra = a, rb = b;
        Node* rn = r.get();
        r->backward_fn = [ra, rb, rn] {
            const Tensor& g = rn->grad;
            if (ra->requires_grad) {
                Tensor& ga = ra->ensure_grad();
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * rb->value[i];
            }
            if (rb->requires_grad) {
                Tensor& gb = rb->ensure_grad();
                for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * ra->value[i];
            }
        };
    }
    return r;
}

Var div(const Var& a, const Var& b) {
    check_same_shape(a, b, "div");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= b->value[i];
    auto r = make_result(std::move(out), {a, b});
    if (r->requires_grad) {
        Var ra = a, rb = b;
        Node* rn = r.get();
        r->backward_fn = [ra, rb, rn] {
            const Tensor& g = rn->grad;
            if (ra->requires_grad) {
                Tensor& ga = ra->ensure_grad();
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / rb->value[i];
            }
            if (rb->requires_grad) {
                Tensor& gb = rb->ensure_grad();
                for (std::size_t i = 0; i < g.numel(); ++i)
                    gb[i] -= g[i] * ra->value[i] / (rb->value[i] * rb->value[i]);
            }
        };
    }
    return r;
}

Var scalar_mul(const Var& a, double c) {
    Tensor out = a->value;
    for (auto& v : out.vec()) v *= c;
    auto r = make_result(std::move(out), {a});
    if (r->requires_grad) {
        Var ra = a;
        Node* rn = r.get();
        r->backward_fn = [ra, rn, c] {
            Tensor& ga = ra->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.numel(); ++i) ga[i] += rn->grad[i] * c;
        };
    }
    return r;
}

Var scalar_add(const Var& a, double c) {
    Tensor out = a->value;
    for (auto& v : out.vec()) v += c;
    auto r = make_result(std::move(out), {a});
    if (r->requires_grad) {
        Var ra = a;
        Node* rn = r.get();
        r->backward_fn = [ra, rn] {
            Tensor& ga = ra->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.numel(); ++i) ga[i] += rn->grad[i];
        };
    }
    return r;
}

Var relu(const Var& a) {
    Tensor out = a->value;
    for (auto& v : out.vec()) v = v > 0.0 ? v : 0.0;
    auto r = make_result(std::move(out), {a});
    if (r->requires_grad) {
        Var ra = a;
        Node* rn = r.get();
        r->backward_fn = [ra, rn] {
            Tensor& ga = ra->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.numel(); ++i)
                if (ra->value[i] > 0.0) ga[i] += rn->grad[i];
        };
    }
    return r;
}

Var sigmoid(const Var& a) {
    Tensor out = a->value;
    for (auto& v : out.vec()) v = 1.0 / (1.0 + std::exp(-v));
    auto r = make_result(std::move(out), {a});
    if (r->requires_grad) {
        Var ra = a;
        Node* rn = r.get();
        r->backward_fn = [ra, rn] {
            Tensor& ga = ra->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.numel(); ++i) {
                const double y = rn->value[i];
                ga[i] += rn->grad[i] * y * (1.0 - y);
            }
        };
    }
    return r;
}

Var one_minus(const Var& a) {
    Tensor out = a->value;
    for (auto& v : out.vec()) v = 1.0 - v;
    auto r = make_result(std::move(out), {a});
    if (r->requires_grad) {
        Var ra = a;
        Node* rn = r.get();
        r->backward_fn = [ra, rn] {
            Tensor& ga = ra->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.numel(); ++i) ga[i] -= rn->grad[i];
        };
    }
    return r;
}

Var pow_const(const Var& a, double p) {
    if (p == 1.0) return a;  // exact identity, keeps reduction identities bit-clean
    Tensor out = a->value;
    for (auto& v : out.vec()) v = v > 0.0 ? std::pow(v, p) : 0.0;
    auto r = make_result(std::move(out), {a});
    if (r->requires_grad) {
        Var ra = a;
        Node* rn = r.get();
        r->backward_fn = [ra, rn, p] {
            Tensor& ga = ra->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.numel(); ++i) {
                const double x = ra->value[i];
                if (x > 0.0) ga[i] += rn->grad[i] * p * std::pow(x, p - 1.0);
                // subgradient 0 at x = 0
            }
        };
    }
    return r;
}

Var log_clamped(const Var& a, double eps) {
    Tensor out = a->value;
    for (auto& v : out.vec()) v = std::log(std::max(v, eps));
    auto r = make_result(std::move(out), {a});
    if (r->requires_grad) {
        Var ra = a;
        Node* rn = r.get();
        r->backward_fn = [ra, rn, eps] {
            Tensor& ga = ra->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.numel(); ++i) {
                const double x = ra->value[i];
                if (x > eps) ga[i] += rn->grad[i] / x;
            }
        };
    }
    return r;
}

Var mul_const(const Var& a, const Tensor& c) {
    if (!a->value.same_shape(c))
        throw invalid_input_error("mul_const: shape mismatch");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
    auto r = make_result(std::move(out), {a});
    if (r->requires_grad) {
        Var ra = a;
        Node* rn = r.get();
        Tensor cc = c;
        r->backward_fn = [ra, rn, cc = std::move(cc)] {
            Tensor& ga = ra->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.numel(); ++i) ga[i] += rn->grad[i] * cc[i];
        };
    }
    return r;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var sum_all(const Var& a) {
    double s = 0.0;
    for (double v : a->value.vec()) s += v;
    auto r = make_result(Tensor::from_data({1}, {s}), {a});
    if (r->requires_grad) {
        Var ra = a;
        Node* rn = r.get();
        r->backward_fn = [ra, rn] {
            Tensor& ga = ra->ensure_grad();
            const double g = rn->grad[0];
            for (auto& v : ga.vec()) v += g;
        };
    }
    return r;
}

Var mean_all(const Var& a) { return scalar_mul(sum_all(a), 1.0 / static_cast<double>(a->value.numel())); }

Var class_sum(const Var& a) {
    const auto& s = a->value.shape();
    const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
    Tensor out({C}, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double* p = a->value.data() + (n * C + c) * HW;
            double acc = 0.0;
            for (std::size_t i = 0; i < HW; ++i) acc += p[i];
            out[c] += acc;
        }
    auto r = make_result(std::move(out), {a});
    if (r->requires_grad) {
        Var ra = a;
        Node* rn = r.get();
        r->backward_fn = [ra, rn, N, C, HW] {
            Tensor& ga = ra->ensure_grad();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    double* p = ga.data() + (n * C + c) * HW;
                    const double g = rn->grad[c];
                    for (std::size_t i = 0; i < HW; ++i) p[i] += g;
                }
        };
    }
    return r;
}

Var channel_sum(const Var& a) {
    const auto& s = a->value.shape();
    const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
    Tensor out({N, 1, s[2], s[3]}, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double* p = a->value.data() + (n * C + c) * HW;
            double* o = out.data() + n * HW;
            for (std::size_t i = 0; i < HW; ++i) o[i] += p[i];
        }
    auto r = make_result(std::move(out), {a});
    if (r->requires_grad) {
        Var ra = a;
        Node* rn = r.get();
        r->backward_fn = [ra, rn, N, C, HW] {
            Tensor& ga = ra->ensure_grad();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    double* p = ga.data() + (n * C + c) * HW;
                    const double* g = rn->grad.data() + n * HW;
                    for (std::size_t i = 0; i < HW; ++i) p[i] += g[i];
                }
        };
    }
    return r;
}

Var channel_mean(const Var& a) {
    return scalar_mul(channel_sum(a), 1.0 / static_cast<double>(a->value.dim(1)));
}

Var channel_max(const Var& a) {
    const auto& s = a->value.shape();
    const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
    Tensor out({N, 1, s[2], s[3]}, 0.0);
    auto argmax = std::make_shared<std::vector<std::size_t>>(N * HW);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < HW; ++i) {
            double best = a->value[(n * C + 0) * HW + i];
            std::size_t bc = 0;
            for (std::size_t c = 1; c < C; ++c) {
                const double v = a->value[(n * C + c) * HW + i];
                if (v > best) {
                    best = v;
                    bc = c;
                }
            }
            out[n * HW + i] = best;
            (*argmax)[n * HW + i] = bc;
        }
    auto r = make_result(std::move(out), {a});
    if (r->requires_grad) {
        Var ra = a;
        Node* rn = r.get();
        r->backward_fn = [ra, rn, argmax, N, C, HW] {
            Tensor& ga = ra->ensure_grad();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t i = 0; i < HW; ++i)
                    ga[(n * C + (*argmax)[n * HW + i]) * HW + i] += rn->grad[n * HW + i];
        };
    }
    return r;
}

Var global_avg_pool(const Var& a) {
    const auto& s = a->value.shape();
    const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
    Tensor out({N, C}, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double* p = a->value.data() + (n * C + c) * HW;
            double acc = 0.0;
            for (std::size_t i = 0; i < HW; ++i) acc += p[i];
            out[n * C + c] = acc / static_cast<double>(HW);
        }
    auto r = make_result(std::move(out), {a});
    if (r->requires_grad) {
        Var ra = a;
        Node* rn = r.get();
        r->backward_fn = [ra, rn, N, C, HW] {
            Tensor& ga = ra->ensure_grad();
            const double inv = 1.0 / static_cast<double>(HW);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    double* p = ga.data() + (n * C + c) * HW;
                    const double g = rn->grad[n * C + c] * inv;
                    for (std::size_t i = 0; i < HW; ++i) p[i] += g;
                }
        };
    }
    return r;
}

// ---------------------------------------------------------------------------
// structural
// ---------------------------------------------------------------------------

static Var concat_impl(std::vector<Var> parts) {
    const auto& s0 = parts[0]->value.shape();
    const std::size_t N = s0[0], H = s0[2], W = s0[3], HW = H * W;
    std::size_t Ctot = 0;
    for (const auto& p : parts) {
        const auto& s = p->value.shape();
        if (s[0] != N || s[2] != H || s[3] != W)
            throw invalid_input_error("concat_channels: spatial/batch mismatch");
        Ctot += s[1];
    }
    Tensor out({N, Ctot, H, W}, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t coff = 0;
        for (const auto& p : parts) {
            const std::size_t C = p->value.dim(1);
            std::copy(p->value.data() + n * C * HW, p->value.data() + (n + 1) * C * HW,
                      out.data() + (n * Ctot + coff) * HW);
            coff += C;
        }
    }
    auto r = make_result(std::move(out), parts);
    if (r->requires_grad) {
        Node* rn = r.get();
        auto ps = std::make_shared<std::vector<Var>>(std::move(parts));
        r->backward_fn = [ps, rn, N, Ctot, HW] {
            for (std::size_t n = 0; n < N; ++n) {
                std::size_t coff = 0;
                for (auto& p : *ps) {
                    const std::size_t C = p->value.dim(1);
                    if (p->requires_grad) {
                        Tensor& g = p->ensure_grad();
                        const double* src = rn->grad.data() + (n * Ctot + coff) * HW;
                        double* dst = g.data() + n * C * HW;
                        for (std::size_t i = 0; i < C * HW; ++i) dst[i] += src[i];
                    }
                    coff += C;
                }
            }
        };
    }
    return r;
}

Var concat_channels(const Var& a, const Var& b) { return concat_impl({a, b}); }
Var concat_channels(const Var& a, const Var& b, const Var& c) { return concat_impl({a, b, c}); }

Var scale_channels(const Var& x, const Var& s) {
    const auto& xs = x->value.shape();
    const std::size_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
    if (s->value.rank() != 2 || s->value.dim(0) != N || s->value.dim(1) != C)
        throw invalid_input_error("scale_channels: gate shape mismatch");
    Tensor out = x->value;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            double* p = out.data() + (n * C + c) * HW;
            const double g = s->value[n * C + c];
            for (std::size_t i = 0; i < HW; ++i) p[i] *= g;
        }
    auto r = make_result(std::move(out), {x, s});
    if (r->requires_grad) {
        Var rx = x, rs = s;
        Node* rn = r.get();
        r->backward_fn = [rx, rs, rn, N, C, HW] {
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const double* g = rn->grad.data() + (n * C + c) * HW;
                    if (rx->requires_grad) {
                        double* gx = rx->ensure_grad().data() + (n * C + c) * HW;
                        const double sv = rs->value[n * C + c];
                        for (std::size_t i = 0; i < HW; ++i) gx[i] += g[i] * sv;
                    }
                    if (rs->requires_grad) {
                        const double* xv = rx->value.data() + (n * C + c) * HW;
                        double acc = 0.0;
                        for (std::size_t i = 0; i < HW; ++i) acc += g[i] * xv[i];
                        rs->ensure_grad()[n * C + c] += acc;
                    }
                }
        };
    }
    return r;
}

Var scale_spatial(const Var& x, const Var& g) {
    const auto& xs = x->value.shape();
    const std::size_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
    const auto& gs = g->value.shape();
    if (gs.size() != 4 || gs[0] != N || gs[1] != 1 || gs[2] != xs[2] || gs[3] != xs[3])
        throw invalid_input_error("scale_spatial: gate shape mismatch");
    Tensor out = x->value;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            double* p = out.data() + (n * C + c) * HW;
            const double* gm = g->value.data() + n * HW;
            for (std::size_t i = 0; i < HW; ++i) p[i] *= gm[i];
        }
    auto r = make_result(std::move(out), {x, g});
    if (r->requires_grad) {
        Var rx = x, rg = g;
        Node* rn = r.get();
        r->backward_fn = [rx, rg, rn, N, C, HW] {
            for (std::size_t n = 0; n < N; ++n) {
                const double* gm = rg->value.data() + n * HW;
                for (std::size_t c = 0; c < C; ++c) {
                    const double* gr = rn->grad.data() + (n * C + c) * HW;
                    if (rx->requires_grad) {
                        double* gx = rx->ensure_grad().data() + (n * C + c) * HW;
                        for (std::size_t i = 0; i < HW; ++i) gx[i] += gr[i] * gm[i];
                    }
                    if (rg->requires_grad) {
                        double* gg = rg->ensure_grad().data() + n * HW;
                        const double* xv = rx->value.data() + (n * C + c) * HW;
                        for (std::size_t i = 0; i < HW; ++i) gg[i] += gr[i] * xv[i];
                    }
                }
            }
        };
    }
    return r;
}

// ---------------------------------------------------------------------------
// neural-net primitives
// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t pad) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (xs.size() != 4 || ws.size() != 4)
        throw invalid_input_error("conv2d: expected 4-D input and weights");
    const std::size_t N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
    const std::size_t Cout = ws[0], K = ws[2];
    if (ws[1] != Cin)
        throw config_error("conv2d: weight input channels " + std::to_string(ws[1]) +
                           " do not match input " + std::to_string(Cin));
    if (H + 2 * pad < K || W + 2 * pad < K)
        throw invalid_input_error("conv2d: kernel larger than padded input");
    const std::size_t Ho = H + 2 * pad - K + 1;
    const std::size_t Wo = W + 2 * pad - K + 1;
    const std::size_t Kc = Cin * K * K;
    const std::size_t cols = Ho * Wo;

    Tensor out({N, Cout, Ho, Wo}, 0.0);
    std::vector<double> colbuf(Kc * cols);
    CRowMap Wm(w->value.data(), Cout, Kc);
    for (std::size_t n = 0; n < N; ++n) {
        im2col(x->value.data() + n * Cin * H * W, Cin, H, W, K, pad, colbuf.data());
        CRowMap colm(colbuf.data(), Kc, cols);
        RowMap outm(out.data() + n * Cout * cols, Cout, cols);
        outm.noalias() = Wm * colm;
        for (std::size_t o = 0; o < Cout; ++o) outm.row(o).array() += b->value[o];
    }

    auto r = make_result(std::move(out), {x, w, b});
    if (r->requires_grad) {
        Var rx = x, rw = w, rb = b;
        Node* rn = r.get();
        r->backward_fn = [rx, rw, rb, rn, N, Cin, H, W, Cout, K, pad, Ho, Wo, Kc, cols] {
            std::vector<double> colbuf(Kc * cols);
            std::vector<double> dcolbuf(Kc * cols);
            CRowMap Wm(rw->value.data(), Cout, Kc);
            for (std::size_t n = 0; n < N; ++n) {
                CRowMap gout(rn->grad.data() + n * Cout * cols, Cout, cols);
                if (rb->requires_grad) {
                    Tensor& gb = rb->ensure_grad();
                    for (std::size_t o = 0; o < Cout; ++o) gb[o] += gout.row(o).sum();
                }
                if (rw->requires_grad || rx->requires_grad)
                    im2col(rx->value.data() + n * Cin * H * W, Cin, H, W, K, pad, colbuf.data());
                if (rw->requires_grad) {
                    CRowMap colm(colbuf.data(), Kc, cols);
                    RowMap gw(rw->ensure_grad().data(), Cout, Kc);
                    gw.noalias() += gout * colm.transpose();
                }
                if (rx->requires_grad) {
                    RowMap dcol(dcolbuf.data(), Kc, cols);
                    dcol.noalias() = Wm.transpose() * gout;
                    col2im_accum(dcolbuf.data(), Cin, H, W, K, pad,
                                 rx->ensure_grad().data() + n * Cin * H * W);
                }
            }
        };
    }
    return r;
}

namespace {

struct BnStats {
    std::vector<double> mean, invstd;
};

}  // namespace

Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta, Tensor* running_mean,
                    Tensor* running_var, double momentum, double eps) {
    const auto& xs = x->value.shape();
    const std::size_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
    const double M = static_cast<double>(N * HW);
    auto st = std::make_shared<BnStats>();
    st->mean.resize(C);
    st->invstd.resize(C);
    Tensor out(xs, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        double m = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const double* p = x->value.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) m += p[i];
        }
        m /= M;
        double v = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const double* p = x->value.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
                const double d = p[i] - m;
                v += d * d;
            }
        }
        v /= M;
        st->mean[c] = m;
        st->invstd[c] = 1.0 / std::sqrt(v + eps);
        if (running_mean) (*running_mean)[c] = (1.0 - momentum) * (*running_mean)[c] + momentum * m;
        if (running_var) (*running_var)[c] = (1.0 - momentum) * (*running_var)[c] + momentum * v;
        const double g = gamma->value[c], bv = beta->value[c];
        for (std::size_t n = 0; n < N; ++n) {
            const double* p = x->value.data() + (n * C + c) * HW;
            double* o = out.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i)
                o[i] = g * (p[i] - m) * st->invstd[c] + bv;
        }
    }
    auto r = make_result(std::move(out), {x, gamma, beta});
    if (r->requires_grad) {
        Var rx = x, rg = gamma, rbta = beta;
        Node* rn = r.get();
        r->backward_fn = [rx, rg, rbta, rn, st, N, C, HW, M] {
            for (std::size_t c = 0; c < C; ++c) {
                const double m = st->mean[c], is = st->invstd[c];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t n = 0; n < N; ++n) {
                    const double* dy = rn->grad.data() + (n * C + c) * HW;
                    const double* xv = rx->value.data() + (n * C + c) * HW;
                    for (std::size_t i = 0; i < HW; ++i) {
                        sum_dy += dy[i];
                        sum_dy_xhat += dy[i] * (xv[i] - m) * is;
                    }
                }
                if (rg->requires_grad) rg->ensure_grad()[c] += sum_dy_xhat;
                if (rbta->requires_grad) rbta->ensure_grad()[c] += sum_dy;
                if (rx->requires_grad) {
                    const double g = rg->value[c];
                    double* gx0 = rx->ensure_grad().data();
                    for (std::size_t n = 0; n < N; ++n) {
                        const double* dy = rn->grad.data() + (n * C + c) * HW;
                        const double* xv = rx->value.data() + (n * C + c) * HW;
                        double* gx = gx0 + (n * C + c) * HW;
                        for (std::size_t i = 0; i < HW; ++i) {
                            const double xhat = (xv[i] - m) * is;
                            gx[i] += g * is * (dy[i] - sum_dy / M - xhat * sum_dy_xhat / M);
                        }
                    }
                }
            }
        };
    }
    return r;
}

Var batchnorm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
                   const Tensor& running_var, double eps) {
    const auto& xs = x->value.shape();
    const std::size_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
    Tensor out(xs, 0.0);
    std::vector<double> invstd(C);
    for (std::size_t c = 0; c < C; ++c) invstd[c] = 1.0 / std::sqrt(running_var[c] + eps);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double* p = x->value.data() + (n * C + c) * HW;
            double* o = out.data() + (n * C + c) * HW;
            const double g = gamma->value[c], bv = beta->value[c], m = running_mean[c],
                         is = invstd[c];
            for (std::size_t i = 0; i < HW; ++i) o[i] = g * (p[i] - m) * is + bv;
        }
    auto r = make_result(std::move(out), {x, gamma, beta});
    if (r->requires_grad) {
        Var rx = x, rg = gamma, rbta = beta;
        Node* rn = r.get();
        auto rm = std::make_shared<Tensor>(running_mean);
        auto is = std::make_shared<std::vector<double>>(std::move(invstd));
        r->backward_fn = [rx, rg, rbta, rn, rm, is, N, C, HW] {
            for (std::size_t c = 0; c < C; ++c) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t n = 0; n < N; ++n) {
                    const double* dy = rn->grad.data() + (n * C + c) * HW;
                    const double* xv = rx->value.data() + (n * C + c) * HW;
                    for (std::size_t i = 0; i < HW; ++i) {
                        sum_dy += dy[i];
                        sum_dy_xhat += dy[i] * (xv[i] - (*rm)[c]) * (*is)[c];
                    }
                }
                if (rg->requires_grad) rg->ensure_grad()[c] += sum_dy_xhat;
                if (rbta->requires_grad) rbta->ensure_grad()[c] += sum_dy;
                if (rx->requires_grad) {
                    const double gis = rg->value[c] * (*is)[c];
                    for (std::size_t n = 0; n < N; ++n) {
                        const double* dy = rn->grad.data() + (n * C + c) * HW;
                        double* gx = rx->ensure_grad().data() + (n * C + c) * HW;
                        for (std::size_t i = 0; i < HW; ++i) gx[i] += dy[i] * gis;
                    }
                }
            }
        };
    }
    return r;
}

Var maxpool2x2(const Var& x) {
    const auto& xs = x->value.shape();
    const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    if (H % 2 != 0 || W % 2 != 0)
        throw invalid_input_error("maxpool2x2: spatial dims must be even, got " +
                                  x->value.shape_str());
    const std::size_t Ho = H / 2, Wo = W / 2;
    Tensor out({N, C, Ho, Wo}, 0.0);
    auto arg = std::make_shared<std::vector<std::size_t>>(N * C * Ho * Wo);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double* p = x->value.data() + (n * C + c) * H * W;
            double* o = out.data() + (n * C + c) * Ho * Wo;
            std::size_t* am = arg->data() + (n * C + c) * Ho * Wo;
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    const std::size_t base = 2 * i * W + 2 * j;
                    const std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
                    std::size_t best = cand[0];
                    for (int k = 1; k < 4; ++k)
                        if (p[cand[k]] > p[best]) best = cand[k];
                    o[i * Wo + j] = p[best];
                    am[i * Wo + j] = best;
                }
        }
    auto r = make_result(std::move(out), {x});
    if (r->requires_grad) {
        Var rx = x;
        Node* rn = r.get();
        r->backward_fn = [rx, rn, arg, N, C, H, W, Ho, Wo] {
            Tensor& gx = rx->ensure_grad();
            for (std::size_t nc = 0; nc < N * C; ++nc) {
                const double* g = rn->grad.data() + nc * Ho * Wo;
                const std::size_t* am = arg->data() + nc * Ho * Wo;
                double* dst = gx.data() + nc * H * W;
                for (std::size_t i = 0; i < Ho * Wo; ++i) dst[am[i]] += g[i];
            }
        };
    }
    return r;
}

namespace {

struct LerpAxis {
    std::vector<std::size_t> i0, i1;
    std::vector<double> w0, w1;
};

LerpAxis make_lerp_axis(std::size_t in, std::size_t out) {
    LerpAxis ax;
    ax.i0.resize(out);
    ax.i1.resize(out);
    ax.w0.resize(out);
    ax.w1.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
        const double x = (static_cast<double>(o) + 0.5) * static_cast<double>(in) /
                             static_cast<double>(out) -
                         0.5;
        double fl = std::floor(x);
        double t = x - fl;
        long lo = static_cast<long>(fl);
        long hi = lo + 1;
        lo = std::clamp<long>(lo, 0, static_cast<long>(in) - 1);
        hi = std::clamp<long>(hi, 0, static_cast<long>(in) - 1);
        ax.i0[o] = static_cast<std::size_t>(lo);
        ax.i1[o] = static_cast<std::size_t>(hi);
        ax.w0[o] = 1.0 - t;
        ax.w1[o] = t;
    }
    return ax;
}

}  // namespace

Var upsample_bilinear2x(const Var& x) {
    const auto& xs = x->value.shape();
    const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const std::size_t Ho = 2 * H, Wo = 2 * W;
    auto ay = std::make_shared<LerpAxis>(make_lerp_axis(H, Ho));
    auto axx = std::make_shared<LerpAxis>(make_lerp_axis(W, Wo));
    Tensor out({N, C, Ho, Wo}, 0.0);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* p = x->value.data() + nc * H * W;
        double* o = out.data() + nc * Ho * Wo;
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                o[i * Wo + j] = ay->w0[i] * (axx->w0[j] * p[ay->i0[i] * W + axx->i0[j]] +
                                             axx->w1[j] * p[ay->i0[i] * W + axx->i1[j]]) +
                                ay->w1[i] * (axx->w0[j] * p[ay->i1[i] * W + axx->i0[j]] +
                                             axx->w1[j] * p[ay->i1[i] * W + axx->i1[j]]);
            }
    }
    auto r = make_result(std::move(out), {x});
    if (r->requires_grad) {
        Var rx = x;
        Node* rn = r.get();
        r->backward_fn = [rx, rn, ay, axx, N, C, H, W, Ho, Wo] {
            Tensor& gx = rx->ensure_grad();
            for (std::size_t nc = 0; nc < N * C; ++nc) {
                double* dst = gx.data() + nc * H * W;
                const double* g = rn->grad.data() + nc * Ho * Wo;
                for (std::size_t i = 0; i < Ho; ++i)
                    for (std::size_t j = 0; j < Wo; ++j) {
                        const double gv = g[i * Wo + j];
                        dst[ay->i0[i] * W + axx->i0[j]] += ay->w0[i] * axx->w0[j] * gv;
                        dst[ay->i0[i] * W + axx->i1[j]] += ay->w0[i] * axx->w1[j] * gv;
                        dst[ay->i1[i] * W + axx->i0[j]] += ay->w1[i] * axx->w0[j] * gv;
                        dst[ay->i1[i] * W + axx->i1[j]] += ay->w1[i] * axx->w1[j] * gv;
                    }
            }
        };
    }
    return r;
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const std::size_t N = x->value.dim(0), Cin = x->value.dim(1);
    const std::size_t Cout = w->value.dim(0);
    if (w->value.dim(1) != Cin) throw config_error("linear: weight shape mismatch");
    Tensor out({N, Cout}, 0.0);
    CRowMap xm(x->value.data(), N, Cin);
    CRowMap wm(w->value.data(), Cout, Cin);
    RowMap om(out.data(), N, Cout);
    om.noalias() = xm * wm.transpose();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < Cout; ++o) out[n * Cout + o] += b->value[o];
    auto r = make_result(std::move(out), {x, w, b});
    if (r->requires_grad) {
        Var rx = x, rw = w, rb = b;
        Node* rn = r.get();
        r->backward_fn = [rx, rw, rb, rn, N, Cin, Cout] {
            CRowMap g(rn->grad.data(), N, Cout);
            if (rx->requires_grad) {
                RowMap gx(rx->ensure_grad().data(), N, Cin);
                CRowMap wm(rw->value.data(), Cout, Cin);
                gx.noalias() += g * wm;
            }
            if (rw->requires_grad) {
                RowMap gw(rw->ensure_grad().data(), Cout, Cin);
                CRowMap xm(rx->value.data(), N, Cin);
                gw.noalias() += g.transpose() * xm;
            }
            if (rb->requires_grad) {
                Tensor& gb = rb->ensure_grad();
                for (std::size_t o = 0; o < Cout; ++o) gb[o] += g.col(o).sum();
            }
        };
    }
    return r;
}

Var softmax_channel(const Var& x) {
    const auto& xs = x->value.shape();
    const std::size_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
    Tensor out(xs, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < HW; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < C; ++c)
                mx = std::max(mx, x->value[(n * C + c) * HW + i]);
            double sum = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                const double e = std::exp(x->value[(n * C + c) * HW + i] - mx);
                out[(n * C + c) * HW + i] = e;
                sum += e;
            }
            for (std::size_t c = 0; c < C; ++c) out[(n * C + c) * HW + i] /= sum;
        }
    auto r = make_result(std::move(out), {x});
    if (r->requires_grad) {
        Var rx = x;
        Node* rn = r.get();
        r->backward_fn = [rx, rn, N, C, HW] {
            Tensor& gx = rx->ensure_grad();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t i = 0; i < HW; ++i) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        dot += rn->grad[(n * C + c) * HW + i] * rn->value[(n * C + c) * HW + i];
                    for (std::size_t c = 0; c < C; ++c) {
                        const double y = rn->value[(n * C + c) * HW + i];
                        gx[(n * C + c) * HW + i] += y * (rn->grad[(n * C + c) * HW + i] - dot);
                    }
                }
        };
    }
    return r;
}

}  // namespace claire
