// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmface/numerics/param_store.hpp"
#include "mmface/numerics/tensor.hpp"

namespace mmface {

namespace kernels {

// C[n x m] += A[n x k] * B[k x m]
template <class T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        T* crow = c + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            if (av == T(0)) continue;
            const T* brow = b + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// dA[n x k] += dC[n x m] * B^T
template <class T>
void gemm_nt_acc(const T* dc, const T* b, T* da, std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const T* drow = dc + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const T* brow = b + p * m;
            T s = T(0);
            for (std::size_t j = 0; j < m; ++j) s += drow[j] * brow[j];
            da[i * k + p] += s;
        }
    }
}

// dB[k x m] += A^T * dC
template <class T>
void gemm_tn_acc(const T* a, const T* dc, T* db, std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const T* drow = dc + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            if (av == T(0)) continue;
            T* dbrow = db + p * m;
            for (std::size_t j = 0; j < m; ++j) dbrow[j] += av * drow[j];
        }
    }
}

template <class T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

}  // namespace kernels

/// eps = (1/K) * sum_k ( w_k * (n_k - n_b) + n_b ), elementwise. K = 0 returns n_b.
template <class T>
std::vector<T> eam_combine(std::span<const T> base, const std::vector<std::span<const T>>& aux,
                           std::span<const T> weights) {
    if (aux.size() != weights.size()) {
        throw DimError("eam_combine: " + std::to_string(aux.size()) + " auxiliary maps but " +
                       std::to_string(weights.size()) + " weights");
    }
    for (const auto& a : aux) {
        if (a.size() != base.size()) {
            throw DimError("eam_combine: auxiliary map of " + std::to_string(a.size()) +
                           " values vs base of " + std::to_string(base.size()));
        }
    }
    std::vector<T> out(base.begin(), base.end());
    const std::size_t k_count = aux.size();
    if (k_count == 0) return out;
    const T inv_k = T(1) / static_cast<T>(k_count);
    for (std::size_t i = 0; i < base.size(); ++i) {
        T acc = T(0);
        for (std::size_t k = 0; k < k_count; ++k) acc += weights[k] * (aux[k][i] - base[i]) + base[i];
        out[i] = inv_k * acc;
    }
    return out;
}

/// Reverse-mode tape over dense tensors. One Graph per forward pass; every
/// op records a backward closure that accumulates (+=) into its inputs.
/// Parameter leaves accumulate straight into the owning ParamStore.
template <class T>
class Graph {
public:
    struct Var {
        std::size_t id = 0;
    };

    explicit Graph(bool record = true) : record_(record) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return record_; }

    Var constant(Tensor<T> value) { return push(std::move(value), false); }

    Var param(ParamStore<T>& store, const std::string& name) {
        auto it = param_ids_.find(name);
        if (it != param_ids_.end()) return Var{it->second};
        Node n;
        n.ref = &store.param(name);
        n.grad_ref = &store.grad(name);
        n.requires_grad = record_;
        nodes_.push_back(std::move(n));
        const std::size_t id = nodes_.size() - 1;
        param_ids_.emplace(name, id);
        return Var{id};
    }

    const Tensor<T>& value(Var v) const {
        const Node& n = nodes_[v.id];
        return n.ref ? *n.ref : n.owned;
    }

    std::size_t size() const { return nodes_.size(); }

    // ---- elementwise --------------------------------------------------

    Var add(Var a, Var b) {
        same_dims("add", a, b);
        Tensor<T> out = value(a);
        const auto& bv = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
        return record(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
            const auto& gy = g.grad_of(self);
            g.accumulate(a, gy, T(1));
            g.accumulate(b, gy, T(1));
        });
    }

    Var sub(Var a, Var b) {
        same_dims("sub", a, b);
        Tensor<T> out = value(a);
        const auto& bv = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
        return record(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
            const auto& gy = g.grad_of(self);
            g.accumulate(a, gy, T(1));
            g.accumulate(b, gy, T(-1));
        });
    }

    Var mul(Var a, Var b) {
        same_dims("mul", a, b);
        Tensor<T> out = value(a);
        const auto& bv = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
        return record(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
            const auto& gy = g.grad_of(self);
            const auto& av = g.value(a);
            const auto& bv = g.value(b);
            if (auto* ga = g.grad_target(a)) {
                for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * bv[i];
            }
            if (auto* gb = g.grad_target(b)) {
                for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] += gy[i] * av[i];
            }
        });
    }

    Var scale(Var a, T c) {
        Tensor<T> out = value(a);
        for (auto& v : out.values()) v *= c;
        return record(std::move(out), {a}, [a, c](Graph& g, std::size_t self) {
            g.accumulate(a, g.grad_of(self), c);
        });
    }

    Var sigmoid(Var a) {
        Tensor<T> out = value(a);
        for (auto& v : out.values()) v = kernels::sigmoid(v);
        return record(std::move(out), {a}, [a](Graph& g, std::size_t self) {
            auto* ga = g.grad_target(a);
            if (!ga) return;
            const auto& gy = g.grad_of(self);
            const auto& y = g.value(Var{self});
            for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * y[i] * (T(1) - y[i]);
        });
    }

    /// a(x) = x * sigmoid(x)
    Var silu(Var a) {
        Tensor<T> out = value(a);
        for (auto& v : out.values()) v = v * kernels::sigmoid(v);
        return record(std::move(out), {a}, [a](Graph& g, std::size_t self) {
            auto* ga = g.grad_target(a);
            if (!ga) return;
            const auto& gy = g.grad_of(self);
            const auto& x = g.value(a);
            for (std::size_t i = 0; i < gy.size(); ++i) {
                const T s = kernels::sigmoid(x[i]);
                (*ga)[i] += gy[i] * (s + x[i] * s * (T(1) - s));
            }
        });
    }

    // ---- linear algebra -----------------------------------------------

    Var matmul(Var a, Var b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
            throw DimError("matmul: incompatible dims " + dims_str(av.dims()) + " and " + dims_str(bv.dims()));
        }
        const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
        Tensor<T> out = Tensor<T>::matrix(n, m);
        kernels::gemm_acc(av.data(), bv.data(), out.data(), n, k, m);
        return record(std::move(out), {a, b}, [a, b, n, k, m](Graph& g, std::size_t self) {
            const auto& gy = g.grad_of(self);
            if (auto* ga = g.grad_target(a)) kernels::gemm_nt_acc(gy.data(), g.value(b).data(), ga->data(), n, k, m);
            if (auto* gb = g.grad_target(b)) kernels::gemm_tn_acc(g.value(a).data(), gy.data(), gb->data(), n, k, m);
        });
    }

    Var transpose(Var a) {
        const auto& av = value(a);
        if (av.rank() != 2) throw DimError("transpose: expected rank 2, got " + dims_str(av.dims()));
        const std::size_t r = av.rows(), c = av.cols();
        Tensor<T> out = Tensor<T>::matrix(c, r);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
        return record(std::move(out), {a}, [a, r, c](Graph& g, std::size_t self) {
            auto* ga = g.grad_target(a);
            if (!ga) return;
            const auto& gy = g.grad_of(self);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) ga->at(i, j) += gy.at(j, i);
        });
    }

    /// Adds a 1 x d vector to every row of an n x d tensor.
    Var add_rowvec(Var x, Var v) {
        const auto& xv = value(x);
        const auto& vv = value(v);
        if (xv.rank() != 2 || vv.size() != xv.cols()) {
            throw DimError("add_rowvec: cannot broadcast " + dims_str(vv.dims()) + " over " + dims_str(xv.dims()));
        }
        Tensor<T> out = xv;
        const std::size_t n = xv.rows(), d = xv.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out.at(i, j) += vv[j];
        return record(std::move(out), {x, v}, [x, v, n, d](Graph& g, std::size_t self) {
            const auto& gy = g.grad_of(self);
            g.accumulate(x, gy, T(1));
            if (auto* gv = g.grad_target(v)) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) (*gv)[j] += gy.at(i, j);
            }
        });
    }

    /// n x d -> 1 x d mean over rows (the token axis).
    Var mean_rows(Var x) {
        const auto& xv = value(x);
        if (xv.rank() != 2) throw DimError("mean_rows: expected rank 2, got " + dims_str(xv.dims()));
        const std::size_t n = xv.rows(), d = xv.cols();
        Tensor<T> out = Tensor<T>::matrix(1, d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) out[j] += xv.at(i, j);
        const T inv = T(1) / static_cast<T>(n);
        for (auto& o : out.values()) o *= inv;
        return record(std::move(out), {x}, [x, n, d, inv](Graph& g, std::size_t self) {
            auto* gx = g.grad_target(x);
            if (!gx) return;
            const auto& gy = g.grad_of(self);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) gx->at(i, j) += gy[j] * inv;
        });
    }

    /// Stacks rank-2 tensors with equal column counts along the token axis.
    Var concat_rows(const std::vector<Var>& parts) { return concat(parts, true); }
    /// Joins rank-2 tensors with equal row counts along the feature axis.
    Var concat_cols(const std::vector<Var>& parts) { return concat(parts, false); }

    /// Softmax across the columns of each row.
    Var softmax_rows(Var x) {
        Tensor<T> out = value(x);
        const std::size_t n = out.rows(), d = out.cols();
        for (std::size_t i = 0; i < n; ++i) {
            T mx = out.at(i, 0);
            for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, out.at(i, j));
            T s = T(0);
            for (std::size_t j = 0; j < d; ++j) {
                out.at(i, j) = std::exp(out.at(i, j) - mx);
                s += out.at(i, j);
            }
            for (std::size_t j = 0; j < d; ++j) out.at(i, j) /= s;
        }
        return record(std::move(out), {x}, [x, n, d](Graph& g, std::size_t self) {
            auto* gx = g.grad_target(x);
            if (!gx) return;
            const auto& gy = g.grad_of(self);
            const auto& y = g.value(Var{self});
            for (std::size_t i = 0; i < n; ++i) {
                T dot = T(0);
                for (std::size_t j = 0; j < d; ++j) dot += gy.at(i, j) * y.at(i, j);
                for (std::size_t j = 0; j < d; ++j) gx->at(i, j) += y.at(i, j) * (gy.at(i, j) - dot);
            }
        });
    }

    /// Per-token linear map: X is n x in, W is [n, in, out] (one matrix per
    /// token position), B is n x out. Row i of the result is X_i W_i + B_i.
    Var tokenwise_linear(Var x, Var w, Var b) {
        const auto& xv = value(x);
        const auto& wv = value(w);
        const auto& bv = value(b);
        if (xv.rank() != 2 || wv.rank() != 3 || wv.dims()[0] != xv.rows() || wv.dims()[1] != xv.cols() ||
            bv.rank() != 2 || bv.rows() != xv.rows() || bv.cols() != wv.dims()[2]) {
            throw DimError("tokenwise_linear: incompatible dims " + dims_str(xv.dims()) + ", " +
                           dims_str(wv.dims()) + ", " + dims_str(bv.dims()));
        }
        const std::size_t n = xv.rows(), in = xv.cols(), out_d = wv.dims()[2];
        Tensor<T> out = bv;
        for (std::size_t i = 0; i < n; ++i) {
            kernels::gemm_acc(xv.data() + i * in, wv.data() + i * in * out_d, out.data() + i * out_d, 1, in, out_d);
        }
        return record(std::move(out), {x, w, b}, [x, w, b, n, in, out_d](Graph& g, std::size_t self) {
            const auto& gy = g.grad_of(self);
            auto* gx = g.grad_target(x);
            auto* gw = g.grad_target(w);
            const auto& xv = g.value(x);
            const auto& wv = g.value(w);
            for (std::size_t i = 0; i < n; ++i) {
                const T* gyi = gy.data() + i * out_d;
                if (gx) kernels::gemm_nt_acc(gyi, wv.data() + i * in * out_d, gx->data() + i * in, 1, in, out_d);
                if (gw) kernels::gemm_tn_acc(xv.data() + i * in, gyi, gw->data() + i * in * out_d, 1, in, out_d);
            }
            g.accumulate(b, gy, T(1));
        });
    }

    /// Differentiable form of eam_combine over S x S maps and a 1 x K weight row.
    Var eam_combine(Var base, const std::vector<Var>& aux, Var weights) {
        std::vector<std::span<const T>> aux_spans;
        for (auto a : aux) aux_spans.push_back(value(a).span());
        const auto& wv = value(weights);
        if (wv.size() != aux.size()) {
            throw DimError("eam_combine: weight dims " + dims_str(wv.dims()) + " vs " + std::to_string(aux.size()) +
                           " auxiliary maps");
        }
        auto combined = mmface::eam_combine<T>(value(base).span(), aux_spans, wv.span());
        Tensor<T> out(value(base).dims(), std::move(combined));
        std::vector<Var> inputs{base, weights};
        inputs.insert(inputs.end(), aux.begin(), aux.end());
        return record(std::move(out), inputs, [base, aux, weights](Graph& g, std::size_t self) {
            const auto& gy = g.grad_of(self);
            const auto& nb = g.value(base);
            const auto& wv = g.value(weights);
            const std::size_t k_count = aux.size();
            const T inv_k = T(1) / static_cast<T>(k_count);
            if (auto* gb = g.grad_target(base)) {
                T coef = T(0);
                for (std::size_t k = 0; k < k_count; ++k) coef += T(1) - wv[k];
                coef *= inv_k;
                for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] += gy[i] * coef;
            }
            for (std::size_t k = 0; k < k_count; ++k) {
                g.accumulate(aux[k], gy, wv[k] * inv_k);
            }
            if (auto* gw = g.grad_target(weights)) {
                for (std::size_t k = 0; k < k_count; ++k) {
                    const auto& nk = g.value(aux[k]);
                    T s = T(0);
                    for (std::size_t i = 0; i < gy.size(); ++i) s += gy[i] * (nk[i] - nb[i]);
                    (*gw)[k] += s * inv_k;
                }
            }
        });
    }

    // ---- reductions ---------------------------------------------------

    /// Mean of squared differences, 1 x 1.
    Var mse(Var pred, Var target) {
        same_dims("mse", pred, target);
        const auto& p = value(pred);
        const auto& t = value(target);
        T s = T(0);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const T d = p[i] - t[i];
            s += d * d;
        }
        const T inv = T(1) / static_cast<T>(p.size());
        Tensor<T> out = Tensor<T>::matrix(1, 1, s * inv);
        return record(std::move(out), {pred, target}, [pred, target, inv](Graph& g, std::size_t self) {
            const T gy = g.grad_of(self)[0];
            const auto& p = g.value(pred);
            const auto& t = g.value(target);
            auto* gp = g.grad_target(pred);
            auto* gt = g.grad_target(target);
            for (std::size_t i = 0; i < p.size(); ++i) {
                const T d = T(2) * inv * gy * (p[i] - t[i]);
                if (gp) (*gp)[i] += d;
                if (gt) (*gt)[i] -= d;
            }
        });
    }

    Var sum_squares(Var a) {
        const auto& av = value(a);
        T s = T(0);
        for (auto v : av.values()) s += v * v;
        return record(Tensor<T>::matrix(1, 1, s), {a}, [a](Graph& g, std::size_t self) {
            auto* ga = g.grad_target(a);
            if (!ga) return;
            const T gy = g.grad_of(self)[0];
            const auto& av = g.value(a);
            for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += T(2) * gy * av[i];
        });
    }

    /// Runs the tape backwards from a 1 x 1 loss with seed 1.
    void backward(Var loss) {
        const auto& lv = value(loss);
        if (lv.size() != 1) throw DimError("backward: loss must be scalar, got " + dims_str(lv.dims()));
        lv.require_finite("loss");
        if (!record_) throw NumericError("backward called on a non-recording graph");
        Tensor<T>* seed = grad_target(loss);
        if (!seed) return;
        (*seed)[0] += T(1);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.backward) continue;
            if (!n.grad_ref && n.grad.empty()) continue;
            n.backward(*this, i);
        }
    }

    /// Gradient accumulated at a non-parameter node (empty if none reached it).
    const Tensor<T>& grad_of(std::size_t id) const {
        const Node& n = nodes_[id];
        return n.grad_ref ? *n.grad_ref : n.grad;
    }
    const Tensor<T>& grad_of(Var v) const { return grad_of(v.id); }

private:
    using Backward = std::function<void(Graph&, std::size_t)>;

    struct Node {
        Tensor<T> owned;
        const Tensor<T>* ref = nullptr;
        Tensor<T> grad;
        Tensor<T>* grad_ref = nullptr;
        bool requires_grad = false;
        Backward backward;
    };

    Var push(Tensor<T> value, bool requires_grad) {
        Node n;
        n.owned = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward bw) {
        return record(std::move(value), std::vector<Var>(inputs), std::move(bw));
    }

    Var record(Tensor<T> value, const std::vector<Var>& inputs, Backward bw) {
        bool needs = false;
        if (record_) {
            for (auto in : inputs) needs = needs || nodes_[in.id].requires_grad;
        }
        Var v = push(std::move(value), needs);
        if (needs) nodes_[v.id].backward = std::move(bw);
        return v;
    }

    Tensor<T>* grad_target(Var v) {
        Node& n = nodes_[v.id];
        if (!n.requires_grad) return nullptr;
        if (n.grad_ref) return n.grad_ref;
        if (n.grad.empty()) n.grad = Tensor<T>(value(v).dims());
        return &n.grad;
    }

    void accumulate(Var v, const Tensor<T>& g, T c) {
        auto* target = grad_target(v);
        if (!target) return;
        for (std::size_t i = 0; i < g.size(); ++i) (*target)[i] += c * g[i];
    }

    void same_dims(const char* op, Var a, Var b) const {
        if (value(a).dims() != value(b).dims()) {
            throw DimError(std::string(op) + ": dims differ " + dims_str(value(a).dims()) + " vs " +
                           dims_str(value(b).dims()));
        }
    }

    Var concat(const std::vector<Var>& parts, bool along_rows) {
        if (parts.empty()) throw DimError("concat: no inputs");
        const auto& first = value(parts.front());
        std::size_t rows = 0, cols = 0;
        for (auto p : parts) {
            const auto& pv = value(p);
            if (pv.rank() != 2) throw DimError("concat: expected rank 2, got " + dims_str(pv.dims()));
            if (along_rows) {
                if (pv.cols() != first.cols())
                    throw DimError("concat_rows: column mismatch " + dims_str(first.dims()) + " vs " +
                                   dims_str(pv.dims()));
                rows += pv.rows();
                cols = pv.cols();
            } else {
                if (pv.rows() != first.rows())
                    throw DimError("concat_cols: row mismatch " + dims_str(first.dims()) + " vs " +
                                   dims_str(pv.dims()));
                cols += pv.cols();
                rows = pv.rows();
            }
        }
        Tensor<T> out = Tensor<T>::matrix(rows, cols);
        std::size_t offset = 0;
        for (auto p : parts) {
            const auto& pv = value(p);
            for (std::size_t i = 0; i < pv.rows(); ++i)
                for (std::size_t j = 0; j < pv.cols(); ++j) {
                    if (along_rows)
                        out.at(offset + i, j) = pv.at(i, j);
                    else
                        out.at(i, offset + j) = pv.at(i, j);
                }
            offset += along_rows ? pv.rows() : pv.cols();
        }
        return record(std::move(out), parts, [parts, along_rows](Graph& g, std::size_t self) {
            const auto& gy = g.grad_of(self);
            std::size_t offset = 0;
            for (auto p : parts) {
                const auto& pv = g.value(p);
                if (auto* gp = g.grad_target(p)) {
                    for (std::size_t i = 0; i < pv.rows(); ++i)
                        for (std::size_t j = 0; j < pv.cols(); ++j)
                            gp->at(i, j) += along_rows ? gy.at(offset + i, j) : gy.at(i, offset + j);
                }
                offset += along_rows ? pv.rows() : pv.cols();
            }
        });
    }

    bool record_;
    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> param_ids_;
};

}  // namespace mmface
