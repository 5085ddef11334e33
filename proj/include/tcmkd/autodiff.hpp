#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Graph is a tape: operations compute their output eagerly and append a
// node holding the value, a gradient buffer and a backward closure.
// backward() seeds the loss gradient and sweeps the tape in reverse creation
// order, which is a valid topological order because the tape is append-only.
//
// Conventions fixed here and relied on by checkpoint portability and tests:
//   - conv1d uses cross-correlation semantics (no kernel flip)
//   - "same" padding puts floor(total/2) on the left
//   - reductions accumulate in double regardless of the storage type
//   - relu subgradient at 0 is 0
//   - loops run in a fixed order; forward passes are bit-deterministic

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcmkd/tensor.hpp"

namespace tcmkd {

enum class Padding { valid, same };

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Named trainable tensor with persistent gradient and Adam state.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> adam_m;
    Tensor<T> adam_v;
    int64_t step_count = 0;
    bool has_grad = false; // set by backward(), cleared by adam_step()

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape), adam_m(value.shape), adam_v(value.shape) {}

    void zero_grad() {
        grad.fill(T(0));
        has_grad = false;
    }
};

template <typename T>
class Graph {
public:
    struct Var {
        int id = -1;
    };

    // Constant leaf; gradients are not propagated past it.
    Var input(Tensor<T> v) { return push(std::move(v), {}, nullptr); }

    // Differentiable leaf bound to a parameter. The parameter value is
    // copied onto the tape; backward() accumulates into p.grad.
    Var param(Parameter<T>& p) {
        Var v = push(p.value, {}, nullptr);
        nodes_[v.id].bound = &p;
        return v;
    }

    const Tensor<T>& value(Var v) const { return node(v).val; }
    const Tensor<T>& grad(Var v) const { return node(v).grad; }

    // out[b,o,j] = bias[o] + sum_{c,k} in[b,c,j*stride + k - pad_left] * w[o,c,k]
    Var conv1d(Var x, Var w, Var b, int stride, Padding pad) {
        const Tensor<T>& in = value(x);
        const Tensor<T>& wt = value(w);
        const Tensor<T>& bt = value(b);
        if (in.rank() != 3) throw shape_error("conv1d", "input must be [B,C_in,L], got " + in.shape_str());
        if (wt.rank() != 3) throw shape_error("conv1d", "weights must be [C_out,C_in,K], got " + wt.shape_str());
        const int B = in.dim(0), C_in = in.dim(1), L = in.dim(2);
        const int C_out = wt.dim(0), K = wt.dim(2);
        if (wt.dim(1) != C_in)
            throw shape_error("conv1d", "weight C_in axis " + std::to_string(wt.dim(1)) +
                                            " != input channel axis " + std::to_string(C_in));
        if (bt.rank() != 1 || bt.dim(0) != C_out)
            throw shape_error("conv1d", "bias must be [C_out]=" + std::to_string(C_out) + ", got " + bt.shape_str());
        if (stride < 1) throw shape_error("conv1d", "stride must be >= 1");

        int pad_left = 0, L_out = 0;
        if (pad == Padding::same) {
            L_out = (L + stride - 1) / stride;
            int total = std::max((L_out - 1) * stride + K - L, 0);
            pad_left = total / 2;
        } else {
            if (K > L) throw shape_error("conv1d", "kernel " + std::to_string(K) + " exceeds length " + std::to_string(L));
            L_out = (L - K) / stride + 1;
        }

        Tensor<T> out({B, C_out, L_out});
        for (int bi = 0; bi < B; ++bi) {
            const T* in_b = in.values.data() + static_cast<size_t>(bi) * C_in * L;
            T* out_b = out.values.data() + static_cast<size_t>(bi) * C_out * L_out;
            for (int o = 0; o < C_out; ++o) {
                const T* w_o = wt.values.data() + static_cast<size_t>(o) * C_in * K;
                for (int j = 0; j < L_out; ++j) {
                    double acc = static_cast<double>(bt.values[o]);
                    const int base = j * stride - pad_left;
                    for (int c = 0; c < C_in; ++c) {
                        const T* in_c = in_b + static_cast<size_t>(c) * L;
                        const T* w_c = w_o + static_cast<size_t>(c) * K;
                        const int k0 = std::max(0, -base);
                        const int k1 = std::min(K, L - base);
                        for (int k = k0; k < k1; ++k) acc += static_cast<double>(in_c[base + k]) * static_cast<double>(w_c[k]);
                    }
                    out_b[static_cast<size_t>(o) * L_out + j] = static_cast<T>(acc);
                }
            }
        }

        Var y = push(std::move(out), {x, w, b}, [=, this](Node& n) {
            Tensor<T>* din = grad_of(x);
            Tensor<T>* dw = grad_of(w);
            Tensor<T>* db = grad_of(b);
            const Tensor<T>& inv = value(x);
            const Tensor<T>& wv = value(w);
            for (int bi = 0; bi < B; ++bi) {
                const T* in_b = inv.values.data() + static_cast<size_t>(bi) * C_in * L;
                const T* g_b = n.grad.values.data() + static_cast<size_t>(bi) * C_out * L_out;
                for (int o = 0; o < C_out; ++o) {
                    const T* w_o = wv.values.data() + static_cast<size_t>(o) * C_in * K;
                    for (int j = 0; j < L_out; ++j) {
                        const T g = g_b[static_cast<size_t>(o) * L_out + j];
                        if (db) db->values[o] += g;
                        const int base = j * stride - pad_left;
                        const int k0 = std::max(0, -base);
                        const int k1 = std::min(K, L - base);
                        for (int c = 0; c < C_in; ++c) {
                            const size_t in_off = static_cast<size_t>(bi) * C_in * L + static_cast<size_t>(c) * L;
                            const size_t w_off = static_cast<size_t>(o) * C_in * K + static_cast<size_t>(c) * K;
                            for (int k = k0; k < k1; ++k) {
                                if (dw) dw->values[w_off + k] += in_b[static_cast<size_t>(c) * L + base + k] * g;
                                if (din) din->values[in_off + base + k] += w_o[static_cast<size_t>(c) * K + k] * g;
                            }
                        }
                    }
                }
            }
        });
        return y;
    }

    // out = x . W^T + bias, x:[B,F_in], W:[F_out,F_in], bias:[F_out]
    Var linear(Var x, Var w, Var b) {
        const Tensor<T>& in = value(x);
        const Tensor<T>& wt = value(w);
        const Tensor<T>& bt = value(b);
        if (in.rank() != 2) throw shape_error("linear", "input must be [B,F_in], got " + in.shape_str());
        const int B = in.dim(0), F_in = in.dim(1);
        if (wt.rank() != 2 || wt.dim(1) != F_in)
            throw shape_error("linear", "weights must be [F_out," + std::to_string(F_in) + "], got " + wt.shape_str());
        const int F_out = wt.dim(0);
        if (bt.rank() != 1 || bt.dim(0) != F_out)
            throw shape_error("linear", "bias must be [F_out]=" + std::to_string(F_out) + ", got " + bt.shape_str());

        Tensor<T> out({B, F_out});
        for (int bi = 0; bi < B; ++bi) {
            const T* in_b = in.values.data() + static_cast<size_t>(bi) * F_in;
            for (int f = 0; f < F_out; ++f) {
                const T* w_f = wt.values.data() + static_cast<size_t>(f) * F_in;
                double acc = static_cast<double>(bt.values[f]);
                for (int i = 0; i < F_in; ++i) acc += static_cast<double>(in_b[i]) * static_cast<double>(w_f[i]);
                out.values[static_cast<size_t>(bi) * F_out + f] = static_cast<T>(acc);
            }
        }

        return push(std::move(out), {x, w, b}, [=, this](Node& n) {
            Tensor<T>* din = grad_of(x);
            Tensor<T>* dw = grad_of(w);
            Tensor<T>* db = grad_of(b);
            const Tensor<T>& inv = value(x);
            const Tensor<T>& wv = value(w);
            for (int bi = 0; bi < B; ++bi) {
                const T* g_b = n.grad.values.data() + static_cast<size_t>(bi) * F_out;
                const T* in_b = inv.values.data() + static_cast<size_t>(bi) * F_in;
                for (int f = 0; f < F_out; ++f) {
                    const T g = g_b[f];
                    if (db) db->values[f] += g;
                    const T* w_f = wv.values.data() + static_cast<size_t>(f) * F_in;
                    for (int i = 0; i < F_in; ++i) {
                        if (dw) dw->values[static_cast<size_t>(f) * F_in + i] += in_b[i] * g;
                        if (din) din->values[static_cast<size_t>(bi) * F_in + i] += w_f[i] * g;
                    }
                }
            }
        });
    }

    Var relu(Var x) {
        const Tensor<T>& in = value(x);
        Tensor<T> out(in.shape);
        for (size_t i = 0; i < in.values.size(); ++i) out.values[i] = in.values[i] > T(0) ? in.values[i] : T(0);
        return push(std::move(out), {x}, [=, this](Node& n) {
            Tensor<T>* din = grad_of(x);
            if (!din) return;
            const Tensor<T>& inv = value(x);
            for (size_t i = 0; i < inv.values.size(); ++i)
                if (inv.values[i] > T(0)) din->values[i] += n.grad.values[i];
        });
    }

    // Non-overlapping max pooling along the last axis; a ragged tail is
    // padded with -inf (i.e. the tail window maxes over what is there).
    Var max_pool1d(Var x, int window = 2) {
        const Tensor<T>& in = value(x);
        if (in.rank() != 3) throw shape_error("max_pool1d", "input must be [B,C,L], got " + in.shape_str());
        if (window < 1) throw shape_error("max_pool1d", "window must be >= 1");
        const int B = in.dim(0), C = in.dim(1), L = in.dim(2);
        const int L_out = (L + window - 1) / window;

        Tensor<T> out({B, C, L_out});
        std::vector<int32_t> argmax(static_cast<size_t>(B) * C * L_out);
        size_t oi = 0;
        for (int bi = 0; bi < B; ++bi)
            for (int c = 0; c < C; ++c) {
                const T* row = in.values.data() + (static_cast<size_t>(bi) * C + c) * L;
                for (int j = 0; j < L_out; ++j, ++oi) {
                    const int t0 = j * window;
                    const int t1 = std::min(L, t0 + window);
                    int best = t0;
                    for (int t = t0 + 1; t < t1; ++t)
                        if (row[t] > row[best]) best = t;
                    out.values[oi] = row[best];
                    argmax[oi] = best;
                }
            }

        return push(std::move(out), {x}, [=, am = std::move(argmax), this](Node& n) {
            Tensor<T>* din = grad_of(x);
            if (!din) return;
            size_t k = 0;
            for (int bi = 0; bi < B; ++bi)
                for (int c = 0; c < C; ++c) {
                    T* drow = din->values.data() + (static_cast<size_t>(bi) * C + c) * L;
                    for (int j = 0; j < L_out; ++j, ++k) drow[am[k]] += n.grad.values[k];
                }
        });
    }

    // [B,C,L] -> [B,C*L]
    Var flatten(Var x) {
        const Tensor<T>& in = value(x);
        if (in.rank() != 3) throw shape_error("flatten", "input must be [B,C,L], got " + in.shape_str());
        Tensor<T> out({in.dim(0), in.dim(1) * in.dim(2)}, in.values);
        return push(std::move(out), {x}, [=, this](Node& n) {
            Tensor<T>* din = grad_of(x);
            if (!din) return;
            for (size_t i = 0; i < n.grad.values.size(); ++i) din->values[i] += n.grad.values[i];
        });
    }

    // Mean over the batch of -log softmax(logits)[label], max-subtracted.
    Var softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
        const Tensor<T>& lg = value(logits);
        if (lg.rank() != 2) throw shape_error("softmax_cross_entropy", "logits must be [B,C], got " + lg.shape_str());
        const int B = lg.dim(0), C = lg.dim(1);
        if (static_cast<int>(labels.size()) != B)
            throw shape_error("softmax_cross_entropy", "label count " + std::to_string(labels.size()) +
                                                           " != batch " + std::to_string(B));
        for (int i = 0; i < B; ++i)
            if (labels[i] < 0 || labels[i] >= C)
                throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                                        std::to_string(i) + " outside [0," + std::to_string(C) + ")");

        Tensor<T> soft({B, C});
        double loss_acc = 0.0;
        for (int bi = 0; bi < B; ++bi) {
            const T* row = lg.values.data() + static_cast<size_t>(bi) * C;
            T* srow = soft.values.data() + static_cast<size_t>(bi) * C;
            double m = static_cast<double>(row[0]);
            for (int c = 1; c < C; ++c) m = std::max(m, static_cast<double>(row[c]));
            double denom = 0.0;
            for (int c = 0; c < C; ++c) denom += std::exp(static_cast<double>(row[c]) - m);
            for (int c = 0; c < C; ++c) srow[c] = static_cast<T>(std::exp(static_cast<double>(row[c]) - m) / denom);
            loss_acc += std::log(denom) - (static_cast<double>(row[labels[bi]]) - m);
        }
        Tensor<T> out({1}, {static_cast<T>(loss_acc / B)});

        return push(std::move(out), {logits}, [=, s = std::move(soft), lab = labels, this](Node& n) {
            Tensor<T>* dl = grad_of(logits);
            if (!dl) return;
            const T g = n.grad.values[0];
            for (int bi = 0; bi < B; ++bi)
                for (int c = 0; c < C; ++c) {
                    T d = s.values[static_cast<size_t>(bi) * C + c];
                    if (c == lab[bi]) d -= T(1);
                    dl->values[static_cast<size_t>(bi) * C + c] += d / static_cast<T>(B) * g;
                }
        });
    }

    // Mean of elementwise squared differences over every entry.
    Var mse(Var a, Var b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        if (!av.same_shape(bv))
            throw shape_error("mse", "shapes differ: " + av.shape_str() + " vs " + bv.shape_str());
        const int64_t n = av.numel();
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double d = static_cast<double>(av.values[i]) - static_cast<double>(bv.values[i]);
            acc += d * d;
        }
        Tensor<T> out({1}, {static_cast<T>(acc / static_cast<double>(n))});
        return push(std::move(out), {a, b}, [=, this](Node& nd) {
            Tensor<T>* da = grad_of(a);
            Tensor<T>* db = grad_of(b);
            const Tensor<T>& avv = value(a);
            const Tensor<T>& bvv = value(b);
            const T g = nd.grad.values[0];
            const T scale = T(2) / static_cast<T>(n);
            for (int64_t i = 0; i < n; ++i) {
                const T d = (avv.values[i] - bvv.values[i]) * scale * g;
                if (da) da->values[i] += d;
                if (db) db->values[i] -= d;
            }
        });
    }

    Var add(Var a, Var b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        if (!av.same_shape(bv))
            throw shape_error("add", "shapes differ: " + av.shape_str() + " vs " + bv.shape_str());
        Tensor<T> out(av.shape);
        for (size_t i = 0; i < out.values.size(); ++i) out.values[i] = av.values[i] + bv.values[i];
        return push(std::move(out), {a, b}, [=, this](Node& n) {
            Tensor<T>* da = grad_of(a);
            Tensor<T>* db = grad_of(b);
            for (size_t i = 0; i < n.grad.values.size(); ++i) {
                if (da) da->values[i] += n.grad.values[i];
                if (db) db->values[i] += n.grad.values[i];
            }
        });
    }

    Var scale(Var a, T s) {
        const Tensor<T>& av = value(a);
        Tensor<T> out(av.shape);
        for (size_t i = 0; i < out.values.size(); ++i) out.values[i] = av.values[i] * s;
        return push(std::move(out), {a}, [=, this](Node& n) {
            Tensor<T>* da = grad_of(a);
            if (!da) return;
            for (size_t i = 0; i < n.grad.values.size(); ++i) da->values[i] += n.grad.values[i] * s;
        });
    }

    // Row-wise softmax of a value already on the tape; helper for
    // probability outputs, not differentiable (not a tape node).
    Tensor<T> softmax(Var logits) const {
        const Tensor<T>& lg = value(logits);
        if (lg.rank() != 2) throw shape_error("softmax", "logits must be [B,C], got " + lg.shape_str());
        const int B = lg.dim(0), C = lg.dim(1);
        Tensor<T> out({B, C});
        for (int bi = 0; bi < B; ++bi) {
            const T* row = lg.values.data() + static_cast<size_t>(bi) * C;
            T* orow = out.values.data() + static_cast<size_t>(bi) * C;
            double m = static_cast<double>(row[0]);
            for (int c = 1; c < C; ++c) m = std::max(m, static_cast<double>(row[c]));
            double denom = 0.0;
            for (int c = 0; c < C; ++c) denom += std::exp(static_cast<double>(row[c]) - m);
            for (int c = 0; c < C; ++c) orow[c] = static_cast<T>(std::exp(static_cast<double>(row[c]) - m) / denom);
        }
        return out;
    }

    // Reverse sweep from a scalar loss. Accumulates into bound Parameter
    // grads; calling twice without zeroing accumulates additively.
    void backward(Var loss) {
        Node& ln = node(loss);
        if (ln.val.numel() != 1)
            throw shape_error("backward", "loss must be scalar, got " + ln.val.shape_str());
        for (Node& n : nodes_) n.grad.fill(T(0));
        ln.grad.values[0] = T(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.back) n.back(n);
        }
        for (Node& n : nodes_) {
            if (!n.bound) continue;
            for (size_t i = 0; i < n.grad.values.size(); ++i) n.bound->grad.values[i] += n.grad.values[i];
            n.bound->has_grad = true;
        }
    }

    static std::invalid_argument shape_error(const std::string& op, const std::string& what) {
        return std::invalid_argument(op + ": " + what);
    }

private:
    struct Node {
        Tensor<T> val;
        Tensor<T> grad;
        std::vector<Var> parents;
        std::function<void(Node&)> back;
        Parameter<T>* bound = nullptr;
    };

    std::vector<Node> nodes_;

    Node& node(Var v) {
        if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw std::logic_error("graph: invalid var");
        return nodes_[static_cast<size_t>(v.id)];
    }
    const Node& node(Var v) const {
        if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw std::logic_error("graph: invalid var");
        return nodes_[static_cast<size_t>(v.id)];
    }

    // Gradient buffer of a parent, or null when the parent is a constant
    // leaf (inputs do not need gradients).
    Tensor<T>* grad_of(Var v) {
        Node& n = node(v);
        if (!n.back && !n.bound) return nullptr;
        return &n.grad;
    }

    // Set TCMKD_CHECK_FINITE=1 to validate every op output; off by default
    // to keep the training hot path lean.
    static bool check_finite_enabled() {
        static const bool enabled = std::getenv("TCMKD_CHECK_FINITE") != nullptr;
        return enabled;
    }

    Var push(Tensor<T> val, std::vector<Var> parents, std::function<void(Node&)> back) {
        if (check_finite_enabled() && !val.all_finite())
            throw std::runtime_error("graph: non-finite values in op output");
        Node n;
        n.grad = Tensor<T>(val.shape);
        n.val = std::move(val);
        n.parents = std::move(parents);
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }
};

// Adam with bias correction; gradients are zeroed after the step.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& cfg) {
    bool any = false;
    for (const Parameter<T>* p : params) any = any || p->has_grad;
    if (!any) throw std::logic_error("adam_step: no accumulated gradients; call backward() first");

    for (Parameter<T>* p : params) {
        p->step_count += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step_count));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step_count));
        for (size_t i = 0; i < p->value.values.size(); ++i) {
            const double g = static_cast<double>(p->grad.values[i]);
            const double m = cfg.beta1 * static_cast<double>(p->adam_m.values[i]) + (1.0 - cfg.beta1) * g;
            const double v = cfg.beta2 * static_cast<double>(p->adam_v.values[i]) + (1.0 - cfg.beta2) * g * g;
            p->adam_m.values[i] = static_cast<T>(m);
            p->adam_v.values[i] = static_cast<T>(v);
            const double update = cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.epsilon);
            p->value.values[i] = static_cast<T>(static_cast<double>(p->value.values[i]) - update);
        }
        p->zero_grad();
    }
}

template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const AdamConfig& cfg) {
    adam_step(std::span<Parameter<T>* const>(params.data(), params.size()), cfg);
}

// Central finite differences against the analytic gradient, in double.
// build must construct a fresh graph and return the scalar loss each call.
// Returns max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-8).
template <typename BuildFn>
double grad_check(BuildFn&& build, std::vector<Parameter<double>*> params, double eps = 1e-5) {
    for (Parameter<double>* p : params) p->zero_grad();
    {
        Graph<double> g;
        auto loss = build(g);
        g.backward(loss);
    }
    std::vector<Tensor<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter<double>* p : params) analytic.push_back(p->grad);

    auto eval = [&]() {
        Graph<double> g;
        auto loss = build(g);
        return g.value(loss).values[0];
    };

    double max_rel = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter<double>& p = *params[pi];
        for (size_t i = 0; i < p.value.values.size(); ++i) {
            const double orig = p.value.values[i];
            p.value.values[i] = orig + eps;
            const double fp = eval();
            p.value.values[i] = orig - eps;
            const double fm = eval();
            p.value.values[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[pi].values[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
        p.zero_grad();
    }
    return max_rel;
}

} // namespace tcmkd
