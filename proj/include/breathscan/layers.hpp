#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "breathscan/kernels.hpp"
#include "breathscan/nn.hpp"

// Sequence layers operate on time-major Mat<T> [frames x channels]. Each
// layer caches what its backward pass needs; backward() consumes the output
// gradient, accumulates parameter gradients (+=) and returns the input
// gradient. Layers hold state for one sequence at a time, so train steps run
// forward+backward per sequence before moving on.

namespace breathscan::nn {

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
void init_fan_in_uniform(std::vector<T>& w, long fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1L, fan_in)));
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
}

// Modified Gram-Schmidt orthonormalization of an n x n block.
template <typename T>
void init_orthogonal(T* w, long n, Rng& rng) {
    std::vector<double> a(static_cast<std::size_t>(n) * n);
    for (auto& v : a) v = rng.normal();
    for (long i = 0; i < n; ++i) {
        double* ri = a.data() + i * n;
        for (long j = 0; j < i; ++j) {
            const double* rj = a.data() + j * n;
            double dot = 0.0;
            for (long k = 0; k < n; ++k) dot += ri[k] * rj[k];
            for (long k = 0; k < n; ++k) ri[k] -= dot * rj[k];
        }
        double norm = 0.0;
        for (long k = 0; k < n; ++k) norm += ri[k] * ri[k];
        norm = std::sqrt(std::max(norm, 1e-30));
        for (long k = 0; k < n; ++k) ri[k] /= norm;
    }
    for (long i = 0; i < n * n; ++i) w[i] = static_cast<T>(a[i]);
}

// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
    long in = 0, out = 0;
    std::vector<T> w, b;    // w is [out x in]
    std::vector<T> gw, gb;
    Mat<T> x_;  // cached input

    void init(long in_dim, long out_dim, Rng& rng) {
        in = in_dim;
        out = out_dim;
        w.resize(static_cast<std::size_t>(in) * out);
        b.assign(out, T(0));
        gw.assign(w.size(), T(0));
        gb.assign(out, T(0));
        init_fan_in_uniform(w, in, rng);
    }

    void register_params(ParamRegistry<T>& reg, const std::string& path) {
        reg.add(path + ".w", w, gw);
        reg.add(path + ".b", b, gb);
    }

    Mat<T> forward(const Mat<T>& x) {
        x_ = x;
        Mat<T> y(x.rows, out);
        kernels::matmul_nt(x.data(), w.data(), y.data(), static_cast<int>(x.rows),
                           static_cast<int>(in), static_cast<int>(out));
        for (long i = 0; i < y.rows; ++i)
            for (long j = 0; j < out; ++j) y.at(i, j) += b[j];
        return y;
    }

    Mat<T> backward(const Mat<T>& gy) {
        // gw += gy^T * x ; gb += colsum(gy) ; gx = gy * w
        kernels::matmul_tn(gy.data(), x_.data(), gw.data(), static_cast<int>(out),
                           static_cast<int>(gy.rows), static_cast<int>(in), /*accumulate=*/true);
        for (long i = 0; i < gy.rows; ++i)
            for (long j = 0; j < out; ++j) gb[j] += gy.at(i, j);
        Mat<T> gx(gy.rows, in);
        kernels::matmul(gy.data(), w.data(), gx.data(), static_cast<int>(gy.rows),
                        static_cast<int>(out), static_cast<int>(in));
        return gx;
    }
};

// ---------------------------------------------------------------------------

template <typename T>
struct LayerNorm {
    long dim = 0;
    T eps = T(1e-5);
    std::vector<T> gamma, beta, ggamma, gbeta;
    Mat<T> xhat_;
    std::vector<T> inv_std_;

    void init(long d) {
        dim = d;
        gamma.assign(d, T(1));
        beta.assign(d, T(0));
        ggamma.assign(d, T(0));
        gbeta.assign(d, T(0));
    }

    void register_params(ParamRegistry<T>& reg, const std::string& path) {
        reg.add(path + ".gamma", gamma, ggamma);
        reg.add(path + ".beta", beta, gbeta);
    }

    Mat<T> forward(const Mat<T>& x) {
        xhat_ = Mat<T>(x.rows, dim);
        inv_std_.assign(x.rows, T(0));
        Mat<T> y(x.rows, dim);
        for (long i = 0; i < x.rows; ++i) {
            const T* xi = x.row(i);
            T mean = T(0);
            for (long j = 0; j < dim; ++j) mean += xi[j];
            mean /= T(dim);
            T var = T(0);
            for (long j = 0; j < dim; ++j) {
                const T d = xi[j] - mean;
                var += d * d;
            }
            var /= T(dim);
            const T inv = T(1) / std::sqrt(var + eps);
            inv_std_[i] = inv;
            for (long j = 0; j < dim; ++j) {
                const T xh = (xi[j] - mean) * inv;
                xhat_.at(i, j) = xh;
                y.at(i, j) = gamma[j] * xh + beta[j];
            }
        }
        return y;
    }

    Mat<T> backward(const Mat<T>& gy) {
        Mat<T> gx(gy.rows, dim);
        for (long i = 0; i < gy.rows; ++i) {
            const T* gyi = gy.row(i);
            const T* xh = xhat_.row(i);
            T sum_g = T(0), sum_gx = T(0);
            for (long j = 0; j < dim; ++j) {
                const T g = gyi[j] * gamma[j];
                sum_g += g;
                sum_gx += g * xh[j];
                ggamma[j] += gyi[j] * xh[j];
                gbeta[j] += gyi[j];
            }
            const T mean_g = sum_g / T(dim);
            const T mean_gx = sum_gx / T(dim);
            for (long j = 0; j < dim; ++j) {
                const T g = gyi[j] * gamma[j];
                gx.at(i, j) = (g - mean_g - xh[j] * mean_gx) * inv_std_[i];
            }
        }
        return gx;
    }
};

// ---------------------------------------------------------------------------

template <typename T>
struct Swish {
    Mat<T> x_;

    Mat<T> forward(const Mat<T>& x) {
        x_ = x;
        Mat<T> y(x.rows, x.cols);
        for (std::size_t i = 0; i < x.d.size(); ++i) {
            const T s = sigmoid(x.d[i]);
            y.d[i] = x.d[i] * s;
        }
        return y;
    }

    Mat<T> backward(const Mat<T>& gy) {
        Mat<T> gx(gy.rows, gy.cols);
        for (std::size_t i = 0; i < gy.d.size(); ++i) {
            const T s = sigmoid(x_.d[i]);
            gx.d[i] = gy.d[i] * (s + x_.d[i] * s * (T(1) - s));
        }
        return gx;
    }
};

// Inverted dropout; identity when p == 0 or in eval mode.
template <typename T>
struct Dropout {
    double p = 0.0;
    std::vector<T> mask_;
    bool active_ = false;

    Mat<T> forward(const Mat<T>& x, bool train, Rng& rng) {
        active_ = train && p > 0.0;
        if (!active_) return x;
        const T scale = static_cast<T>(1.0 / (1.0 - p));
        mask_.resize(x.d.size());
        Mat<T> y(x.rows, x.cols);
        for (std::size_t i = 0; i < x.d.size(); ++i) {
            mask_[i] = rng.uniform() < p ? T(0) : scale;
            y.d[i] = x.d[i] * mask_[i];
        }
        return y;
    }

    Mat<T> backward(const Mat<T>& gy) {
        if (!active_) return gy;
        Mat<T> gx(gy.rows, gy.cols);
        for (std::size_t i = 0; i < gy.d.size(); ++i) gx.d[i] = gy.d[i] * mask_[i];
        return gx;
    }
};

template <typename T>
struct ReluM {
    Mat<T> x_;

    Mat<T> forward(const Mat<T>& x) {
        x_ = x;
        Mat<T> y(x.rows, x.cols);
        for (std::size_t i = 0; i < x.d.size(); ++i) y.d[i] = std::max(T(0), x.d[i]);
        return y;
    }

    Mat<T> backward(const Mat<T>& gy) {
        Mat<T> gx(gy.rows, gy.cols);
        for (std::size_t i = 0; i < gy.d.size(); ++i)
            gx.d[i] = x_.d[i] > T(0) ? gy.d[i] : T(0);
        return gx;
    }
};

template <typename T>
struct Relu3 {
    Tensor3<T> x_;

    Tensor3<T> forward(const Tensor3<T>& x) {
        x_ = x;
        Tensor3<T> y(x.ch, x.h, x.w);
        for (std::size_t i = 0; i < x.d.size(); ++i) y.d[i] = std::max(T(0), x.d[i]);
        return y;
    }

    Tensor3<T> backward(const Tensor3<T>& gy) {
        Tensor3<T> gx(gy.ch, gy.h, gy.w);
        for (std::size_t i = 0; i < gy.d.size(); ++i)
            gx.d[i] = x_.d[i] > T(0) ? gy.d[i] : T(0);
        return gx;
    }
};

// Gated linear unit over channel pairs: [L x 2C] -> [L x C].
template <typename T>
struct Glu {
    Mat<T> x_;

    Mat<T> forward(const Mat<T>& x) {
        x_ = x;
        const long c = x.cols / 2;
        Mat<T> y(x.rows, c);
        for (long i = 0; i < x.rows; ++i)
            for (long j = 0; j < c; ++j)
                y.at(i, j) = x.at(i, j) * sigmoid(x.at(i, c + j));
        return y;
    }

    Mat<T> backward(const Mat<T>& gy) {
        const long c = gy.cols;
        Mat<T> gx(gy.rows, 2 * c);
        for (long i = 0; i < gy.rows; ++i) {
            for (long j = 0; j < c; ++j) {
                const T a = x_.at(i, j);
                const T s = sigmoid(x_.at(i, c + j));
                gx.at(i, j) = gy.at(i, j) * s;
                gx.at(i, c + j) = gy.at(i, j) * a * s * (T(1) - s);
            }
        }
        return gx;
    }
};

// ---------------------------------------------------------------------------

// Per-channel 1D convolution over time, odd kernel, same padding.
template <typename T>
struct DepthwiseConv1d {
    long channels = 0;
    int kernel = 0;
    std::vector<T> w, b, gw, gb;  // w is [channels x kernel]
    Mat<T> x_;

    void init(long ch, int k, Rng& rng) {
        channels = ch;
        kernel = k;
        w.resize(static_cast<std::size_t>(ch) * k);
        b.assign(ch, T(0));
        gw.assign(w.size(), T(0));
        gb.assign(ch, T(0));
        init_fan_in_uniform(w, k, rng);
    }

    void register_params(ParamRegistry<T>& reg, const std::string& path) {
        reg.add(path + ".w", w, gw);
        reg.add(path + ".b", b, gb);
    }

    Mat<T> forward(const Mat<T>& x) {
        x_ = x;
        const int half = kernel / 2;
        Mat<T> y(x.rows, channels);
        for (long t = 0; t < x.rows; ++t) {
            for (long c = 0; c < channels; ++c) {
                T acc = b[c];
                for (int k = 0; k < kernel; ++k) {
                    const long src = t + k - half;
                    if (src < 0 || src >= x.rows) continue;
                    acc += x.at(src, c) * w[static_cast<std::size_t>(c) * kernel + k];
                }
                y.at(t, c) = acc;
            }
        }
        return y;
    }

    Mat<T> backward(const Mat<T>& gy) {
        const int half = kernel / 2;
        Mat<T> gx(gy.rows, channels);
        gx.zero();
        for (long t = 0; t < gy.rows; ++t) {
            for (long c = 0; c < channels; ++c) {
                const T g = gy.at(t, c);
                gb[c] += g;
                for (int k = 0; k < kernel; ++k) {
                    const long src = t + k - half;
                    if (src < 0 || src >= gy.rows) continue;
                    gw[static_cast<std::size_t>(c) * kernel + k] += g * x_.at(src, c);
                    gx.at(src, c) += g * w[static_cast<std::size_t>(c) * kernel + k];
                }
            }
        }
        return gx;
    }
};

// Stride-2 transposed 1D convolution: [L x C] -> [2L+1 x C] with kernel 3.
template <typename T>
struct ConvTranspose1d {
    long in_ch = 0, out_ch = 0;
    int kernel = 3, stride = 2;
    std::vector<T> w, b, gw, gb;  // w is [in_ch x out_ch x kernel]
    Mat<T> x_;

    void init(long ci, long co, int k, int s, Rng& rng) {
        in_ch = ci;
        out_ch = co;
        kernel = k;
        stride = s;
        w.resize(static_cast<std::size_t>(ci) * co * k);
        b.assign(co, T(0));
        gw.assign(w.size(), T(0));
        gb.assign(co, T(0));
        init_fan_in_uniform(w, ci, rng);
    }

    void register_params(ParamRegistry<T>& reg, const std::string& path) {
        reg.add(path + ".w", w, gw);
        reg.add(path + ".b", b, gb);
    }

    long out_len(long in_len) const { return (in_len - 1) * stride + kernel; }

    Mat<T> forward(const Mat<T>& x) {
        x_ = x;
        Mat<T> y(out_len(x.rows), out_ch);
        for (long i = 0; i < y.rows; ++i)
            for (long co = 0; co < out_ch; ++co) y.at(i, co) = b[co];
        for (long t = 0; t < x.rows; ++t) {
            for (int k = 0; k < kernel; ++k) {
                const long dst = t * stride + k;
                for (long ci = 0; ci < in_ch; ++ci) {
                    const T xv = x.at(t, ci);
                    const T* wrow = w.data() + (static_cast<std::size_t>(ci) * out_ch) * kernel;
                    for (long co = 0; co < out_ch; ++co)
                        y.at(dst, co) += xv * wrow[co * kernel + k];
                }
            }
        }
        return y;
    }

    Mat<T> backward(const Mat<T>& gy) {
        Mat<T> gx(x_.rows, in_ch);
        gx.zero();
        for (long i = 0; i < gy.rows; ++i)
            for (long co = 0; co < out_ch; ++co) gb[co] += gy.at(i, co);
        for (long t = 0; t < x_.rows; ++t) {
            for (int k = 0; k < kernel; ++k) {
                const long dst = t * stride + k;
                for (long ci = 0; ci < in_ch; ++ci) {
                    const std::size_t wbase = (static_cast<std::size_t>(ci) * out_ch) * kernel;
                    T acc = T(0);
                    for (long co = 0; co < out_ch; ++co) {
                        const T g = gy.at(dst, co);
                        gw[wbase + co * kernel + k] += g * x_.at(t, ci);
                        acc += g * w[wbase + co * kernel + k];
                    }
                    gx.at(t, ci) += acc;
                }
            }
        }
        return gx;
    }
};

// 3x3 stride-2 2D convolution with 1-pixel padding; output dims are
// ceil(in/2).
template <typename T>
struct Conv2d {
    long in_ch = 0, out_ch = 0;
    std::vector<T> w, b, gw, gb;  // w is [out_ch x in_ch x 3 x 3]
    Tensor3<T> x_;

    void init(long ci, long co, Rng& rng) {
        in_ch = ci;
        out_ch = co;
        w.resize(static_cast<std::size_t>(co) * ci * 9);
        b.assign(co, T(0));
        gw.assign(w.size(), T(0));
        gb.assign(co, T(0));
        init_fan_in_uniform(w, ci * 9, rng);
    }

    void register_params(ParamRegistry<T>& reg, const std::string& path) {
        reg.add(path + ".w", w, gw);
        reg.add(path + ".b", b, gb);
    }

    static long out_dim(long in) { return (in + 1) / 2; }

    Tensor3<T> forward(const Tensor3<T>& x) {
        x_ = x;
        Tensor3<T> y(out_ch, out_dim(x.h), out_dim(x.w));
        for (long co = 0; co < out_ch; ++co) {
            for (long oy = 0; oy < y.h; ++oy) {
                for (long ox = 0; ox < y.w; ++ox) {
                    T acc = b[co];
                    for (long ci = 0; ci < in_ch; ++ci) {
                        const std::size_t wbase =
                            (static_cast<std::size_t>(co) * in_ch + ci) * 9;
                        for (int ky = 0; ky < 3; ++ky) {
                            const long sy = 2 * oy + ky - 1;
                            if (sy < 0 || sy >= x.h) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const long sx = 2 * ox + kx - 1;
                                if (sx < 0 || sx >= x.w) continue;
                                acc += x.at(ci, sy, sx) * w[wbase + ky * 3 + kx];
                            }
                        }
                    }
                    y.at(co, oy, ox) = acc;
                }
            }
        }
        return y;
    }

    Tensor3<T> backward(const Tensor3<T>& gy) {
        Tensor3<T> gx(in_ch, x_.h, x_.w);
        for (long co = 0; co < out_ch; ++co) {
            for (long oy = 0; oy < gy.h; ++oy) {
                for (long ox = 0; ox < gy.w; ++ox) {
                    const T g = gy.at(co, oy, ox);
                    gb[co] += g;
                    for (long ci = 0; ci < in_ch; ++ci) {
                        const std::size_t wbase =
                            (static_cast<std::size_t>(co) * in_ch + ci) * 9;
                        for (int ky = 0; ky < 3; ++ky) {
                            const long sy = 2 * oy + ky - 1;
                            if (sy < 0 || sy >= x_.h) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const long sx = 2 * ox + kx - 1;
                                if (sx < 0 || sx >= x_.w) continue;
                                gw[wbase + ky * 3 + kx] += g * x_.at(ci, sy, sx);
                                gx.at(ci, sy, sx) += g * w[wbase + ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
        return gx;
    }
};

// ---------------------------------------------------------------------------

// Multi-head self-attention with a learned per-head relative position bias
// (distance clipped to +-max_rel). Regularization dropout is applied by the
// enclosing block on the module output, not on attention weights.
template <typename T>
struct MultiHeadSelfAttention {
    long dim = 0, n_heads = 0, dk = 0;
    int max_rel = 64;
    Linear<T> wq, wk, wv, wo;
    std::vector<T> rel_bias, grel_bias;  // [n_heads x (2*max_rel+1)]

    // caches
    Mat<T> q_, k_, v_;
    std::vector<Mat<T>> att_;  // per head [L x L], softmax output

    void init(long d, long heads, int max_rel_dist, Rng& rng) {
        dim = d;
        n_heads = heads;
        dk = d / heads;
        max_rel = max_rel_dist;
        wq.init(d, d, rng);
        wk.init(d, d, rng);
        wv.init(d, d, rng);
        wo.init(d, d, rng);
        rel_bias.assign(static_cast<std::size_t>(heads) * (2 * max_rel + 1), T(0));
        grel_bias.assign(rel_bias.size(), T(0));
    }

    void register_params(ParamRegistry<T>& reg, const std::string& path) {
        wq.register_params(reg, path + ".wq");
        wk.register_params(reg, path + ".wk");
        wv.register_params(reg, path + ".wv");
        wo.register_params(reg, path + ".wo");
        reg.add(path + ".rel_bias", rel_bias, grel_bias);
    }

    long bias_index(long head, long delta) const {
        const long clipped = std::clamp(delta, -static_cast<long>(max_rel),
                                        static_cast<long>(max_rel));
        return head * (2 * max_rel + 1) + clipped + max_rel;
    }

    Mat<T> forward(const Mat<T>& x) {
        const long L = x.rows;
        q_ = wq.forward(x);
        k_ = wk.forward(x);
        v_ = wv.forward(x);
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));

        att_.assign(n_heads, Mat<T>());
        Mat<T> ctx(L, dim);
        for (long h = 0; h < n_heads; ++h) {
            Mat<T> scores(L, L);
            for (long i = 0; i < L; ++i) {
                const T* qi = q_.row(i) + h * dk;
                for (long j = 0; j < L; ++j) {
                    const T* kj = k_.row(j) + h * dk;
                    T dot = T(0);
                    for (long c = 0; c < dk; ++c) dot += qi[c] * kj[c];
                    scores.at(i, j) = dot * scale + rel_bias[bias_index(h, j - i)];
                }
            }
            for (long i = 0; i < L; ++i) {
                T* row = scores.row(i);
                T mx = row[0];
                for (long j = 1; j < L; ++j) mx = std::max(mx, row[j]);
                T sum = T(0);
                for (long j = 0; j < L; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    sum += row[j];
                }
                const T inv = T(1) / sum;
                for (long j = 0; j < L; ++j) row[j] *= inv;
            }
            att_[h] = std::move(scores);
            // ctx_h = att * v_h
            for (long i = 0; i < L; ++i) {
                T* out = ctx.row(i) + h * dk;
                std::fill(out, out + dk, T(0));
                const T* arow = att_[h].row(i);
                for (long j = 0; j < L; ++j) {
                    const T a = arow[j];
                    const T* vj = v_.row(j) + h * dk;
                    for (long c = 0; c < dk; ++c) out[c] += a * vj[c];
                }
            }
        }
        return wo.forward(ctx);
    }

    Mat<T> backward(const Mat<T>& gy) {
        const long L = gy.rows;
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
        Mat<T> gctx = wo.backward(gy);
        Mat<T> gq(L, dim), gk(L, dim), gv(L, dim);

        for (long h = 0; h < n_heads; ++h) {
            const Mat<T>& att = att_[h];
            // gatt[i][j] = gctx_h[i] . v_h[j] ; gv_h[j] += att[i][j] * gctx_h[i]
            Mat<T> gatt(L, L);
            for (long i = 0; i < L; ++i) {
                const T* gi = gctx.row(i) + h * dk;
                for (long j = 0; j < L; ++j) {
                    const T* vj = v_.row(j) + h * dk;
                    T dot = T(0);
                    for (long c = 0; c < dk; ++c) dot += gi[c] * vj[c];
                    gatt.at(i, j) = dot;
                    const T a = att.at(i, j);
                    T* gvj = gv.row(j) + h * dk;
                    for (long c = 0; c < dk; ++c) gvj[c] += a * gi[c];
                }
            }
            // softmax backward in place
            for (long i = 0; i < L; ++i) {
                const T* arow = att.row(i);
                T* grow = gatt.row(i);
                T dot = T(0);
                for (long j = 0; j < L; ++j) dot += grow[j] * arow[j];
                for (long j = 0; j < L; ++j) grow[j] = arow[j] * (grow[j] - dot);
            }
            // score grads -> q, k, rel_bias
            for (long i = 0; i < L; ++i) {
                const T* qi = q_.row(i) + h * dk;
                T* gqi = gq.row(i) + h * dk;
                const T* grow = gatt.row(i);
                for (long j = 0; j < L; ++j) {
                    const T g = grow[j];
                    const T* kj = k_.row(j) + h * dk;
                    T* gkj = gk.row(j) + h * dk;
                    for (long c = 0; c < dk; ++c) {
                        gqi[c] += g * scale * kj[c];
                        gkj[c] += g * scale * qi[c];
                    }
                    grel_bias[bias_index(h, j - i)] += g;
                }
            }
        }
        Mat<T> gx = wq.backward(gq);
        const Mat<T> gk_in = wk.backward(gk);
        const Mat<T> gv_in = wv.backward(gv);
        for (std::size_t i = 0; i < gx.d.size(); ++i) gx.d[i] += gk_in.d[i] + gv_in.d[i];
        return gx;
    }
};

// ---------------------------------------------------------------------------

// Single-direction LSTM with full BPTT. Gate order i, f, g, o. The reverse
// flag runs time back-to-front while keeping outputs at original positions.
template <typename T>
struct Lstm {
    long in = 0, hd = 0;
    bool reverse = false;
    std::vector<T> wx, wh, b, gwx, gwh, gb;  // wx [4hd x in], wh [4hd x hd]

    // per processing step caches
    Mat<T> x_;
    Mat<T> gates_;   // [L x 4hd] post-activation (i, f, g, o)
    Mat<T> c_;       // [L x hd] cell states per step
    Mat<T> h_;       // [L x hd] hidden states per step

    void init(long in_dim, long hidden, bool rev, Rng& rng) {
        in = in_dim;
        hd = hidden;
        reverse = rev;
        wx.resize(static_cast<std::size_t>(4 * hd) * in);
        wh.resize(static_cast<std::size_t>(4 * hd) * hd);
        b.assign(4 * hd, T(0));
        gwx.assign(wx.size(), T(0));
        gwh.assign(wh.size(), T(0));
        gb.assign(b.size(), T(0));
        init_fan_in_uniform(wx, in, rng);
        // Orthogonal recurrent weights, one block per gate.
        for (int gate = 0; gate < 4; ++gate)
            init_orthogonal(wh.data() + static_cast<std::size_t>(gate) * hd * hd, hd, rng);
        // Positive forget-gate bias.
        for (long j = 0; j < hd; ++j) b[hd + j] = T(1);
    }

    void register_params(ParamRegistry<T>& reg, const std::string& path) {
        reg.add(path + ".wx", wx, gwx);
        reg.add(path + ".wh", wh, gwh);
        reg.add(path + ".b", b, gb);
    }

    long time_of_step(long s, long L) const { return reverse ? L - 1 - s : s; }

    // y[t] = h state at time t; [L x hd]
    Mat<T> forward(const Mat<T>& x) {
        const long L = x.rows;
        x_ = x;
        gates_ = Mat<T>(L, 4 * hd);
        c_ = Mat<T>(L, hd);
        h_ = Mat<T>(L, hd);
        Mat<T> y(L, hd);
        std::vector<T> z(4 * hd);
        for (long s = 0; s < L; ++s) {
            const long t = time_of_step(s, L);
            const T* xt = x.row(t);
            const T* hprev = s > 0 ? h_.row(s - 1) : nullptr;
            for (long r = 0; r < 4 * hd; ++r) {
                T acc = b[r];
                const T* wxr = wx.data() + static_cast<std::size_t>(r) * in;
                for (long c = 0; c < in; ++c) acc += wxr[c] * xt[c];
                if (hprev) {
                    const T* whr = wh.data() + static_cast<std::size_t>(r) * hd;
                    for (long c = 0; c < hd; ++c) acc += whr[c] * hprev[c];
                }
                z[r] = acc;
            }
            T* gate = gates_.row(s);
            T* cs = c_.row(s);
            T* hs = h_.row(s);
            const T* cprev = s > 0 ? c_.row(s - 1) : nullptr;
            for (long j = 0; j < hd; ++j) {
                const T gi = sigmoid(z[j]);
                const T gf = sigmoid(z[hd + j]);
                const T gg = std::tanh(z[2 * hd + j]);
                const T go = sigmoid(z[3 * hd + j]);
                gate[j] = gi;
                gate[hd + j] = gf;
                gate[2 * hd + j] = gg;
                gate[3 * hd + j] = go;
                cs[j] = gf * (cprev ? cprev[j] : T(0)) + gi * gg;
                hs[j] = go * std::tanh(cs[j]);
            }
            std::copy(hs, hs + hd, y.row(t));
        }
        return y;
    }

    Mat<T> backward(const Mat<T>& gy) {
        const long L = gy.rows;
        Mat<T> gx(L, in);
        std::vector<T> dh(hd, T(0)), dc(hd, T(0)), dz(4 * hd);
        for (long s = L - 1; s >= 0; --s) {
            const long t = time_of_step(s, L);
            const T* gate = gates_.row(s);
            const T* cs = c_.row(s);
            const T* cprev = s > 0 ? c_.row(s - 1) : nullptr;
            const T* hprev = s > 0 ? h_.row(s - 1) : nullptr;
            const T* gyt = gy.row(t);
            for (long j = 0; j < hd; ++j) {
                const T gi = gate[j], gf = gate[hd + j], gg = gate[2 * hd + j],
                        go = gate[3 * hd + j];
                const T tc = std::tanh(cs[j]);
                const T dhj = gyt[j] + dh[j];
                const T dct = dhj * go * (T(1) - tc * tc) + dc[j];
                dz[j] = dct * gg * gi * (T(1) - gi);
                dz[hd + j] = dct * (cprev ? cprev[j] : T(0)) * gf * (T(1) - gf);
                dz[2 * hd + j] = dct * gi * (T(1) - gg * gg);
                dz[3 * hd + j] = dhj * tc * go * (T(1) - go);
                dc[j] = dct * gf;
            }
            // parameter grads and upstream grads
            const T* xt = x_.row(t);
            T* gxt = gx.row(t);
            std::fill(dh.begin(), dh.end(), T(0));
            for (long r = 0; r < 4 * hd; ++r) {
                const T d = dz[r];
                gb[r] += d;
                T* gwxr = gwx.data() + static_cast<std::size_t>(r) * in;
                const T* wxr = wx.data() + static_cast<std::size_t>(r) * in;
                for (long c = 0; c < in; ++c) {
                    gwxr[c] += d * xt[c];
                    gxt[c] += d * wxr[c];
                }
                if (hprev) {
                    T* gwhr = gwh.data() + static_cast<std::size_t>(r) * hd;
                    const T* whr = wh.data() + static_cast<std::size_t>(r) * hd;
                    for (long c = 0; c < hd; ++c) {
                        gwhr[c] += d * hprev[c];
                        dh[c] += d * whr[c];
                    }
                }
            }
        }
        return gx;
    }
};

// Bidirectional LSTM: each direction runs hidden/2 units, outputs concat to
// the input width.
template <typename T>
struct BiLstm {
    long dim = 0, hd = 0;
    Lstm<T> fwd, bwd;

    void init(long d, Rng& rng) {
        dim = d;
        hd = d / 2;
        fwd.init(d, hd, false, rng);
        bwd.init(d, hd, true, rng);
    }

    void register_params(ParamRegistry<T>& reg, const std::string& path) {
        fwd.register_params(reg, path + ".fwd");
        bwd.register_params(reg, path + ".bwd");
    }

    Mat<T> forward(const Mat<T>& x) {
        const Mat<T> hf = fwd.forward(x);
        const Mat<T> hb = bwd.forward(x);
        Mat<T> y(x.rows, 2 * hd);
        for (long t = 0; t < x.rows; ++t) {
            std::copy(hf.row(t), hf.row(t) + hd, y.row(t));
            std::copy(hb.row(t), hb.row(t) + hd, y.row(t) + hd);
        }
        return y;
    }

    Mat<T> backward(const Mat<T>& gy) {
        Mat<T> gf(gy.rows, hd), gb(gy.rows, hd);
        for (long t = 0; t < gy.rows; ++t) {
            std::copy(gy.row(t), gy.row(t) + hd, gf.row(t));
            std::copy(gy.row(t) + hd, gy.row(t) + 2 * hd, gb.row(t));
        }
        Mat<T> gx = fwd.backward(gf);
        const Mat<T> gx2 = bwd.backward(gb);
        for (std::size_t i = 0; i < gx.d.size(); ++i) gx.d[i] += gx2.d[i];
        return gx;
    }
};

// ---------------------------------------------------------------------------
// Conformer-style block composites (pre-norm, Macaron half-step FFNs,
// layer norm in the convolution module).

template <typename T>
struct FeedForward {
    LayerNorm<T> ln;
    Linear<T> lin1, lin2;
    Swish<T> act;
    Dropout<T> drop;

    void init(long dim, long expansion, double dropout, Rng& rng) {
        ln.init(dim);
        lin1.init(dim, dim * expansion, rng);
        lin2.init(dim * expansion, dim, rng);
        drop.p = dropout;
    }

    void register_params(ParamRegistry<T>& reg, const std::string& path) {
        ln.register_params(reg, path + ".ln");
        lin1.register_params(reg, path + ".lin1");
        lin2.register_params(reg, path + ".lin2");
    }

    Mat<T> forward(const Mat<T>& x, bool train, Rng& rng) {
        return drop.forward(lin2.forward(act.forward(lin1.forward(ln.forward(x)))), train, rng);
    }

    Mat<T> backward(const Mat<T>& gy) {
        return ln.backward(lin1.backward(act.backward(lin2.backward(drop.backward(gy)))));
    }
};

template <typename T>
struct AttentionModule {
    LayerNorm<T> ln;
    MultiHeadSelfAttention<T> mhsa;
    Dropout<T> drop;

    void init(long dim, long heads, int max_rel, double dropout, Rng& rng) {
        ln.init(dim);
        mhsa.init(dim, heads, max_rel, rng);
        drop.p = dropout;
    }

    void register_params(ParamRegistry<T>& reg, const std::string& path) {
        ln.register_params(reg, path + ".ln");
        mhsa.register_params(reg, path + ".mhsa");
    }

    Mat<T> forward(const Mat<T>& x, bool train, Rng& rng) {
        return drop.forward(mhsa.forward(ln.forward(x)), train, rng);
    }

    Mat<T> backward(const Mat<T>& gy) { return ln.backward(mhsa.backward(drop.backward(gy))); }
};

template <typename T>
struct ConvModule {
    LayerNorm<T> ln_pre, ln_mid;
    Linear<T> pw1, pw2;  // pointwise H->2H (GLU) and H->H
    Glu<T> glu;
    DepthwiseConv1d<T> dw;
    Swish<T> act;
    Dropout<T> drop;

    void init(long dim, int kernel, double dropout, Rng& rng) {
        ln_pre.init(dim);
        pw1.init(dim, 2 * dim, rng);
        dw.init(dim, kernel, rng);
        ln_mid.init(dim);
        pw2.init(dim, dim, rng);
        drop.p = dropout;
    }

    void register_params(ParamRegistry<T>& reg, const std::string& path) {
        ln_pre.register_params(reg, path + ".ln_pre");
        pw1.register_params(reg, path + ".pw1");
        dw.register_params(reg, path + ".dw");
        ln_mid.register_params(reg, path + ".ln_mid");
        pw2.register_params(reg, path + ".pw2");
    }

    Mat<T> forward(const Mat<T>& x, bool train, Rng& rng) {
        Mat<T> y = glu.forward(pw1.forward(ln_pre.forward(x)));
        y = act.forward(ln_mid.forward(dw.forward(y)));
        return drop.forward(pw2.forward(y), train, rng);
    }

    Mat<T> backward(const Mat<T>& gy) {
        Mat<T> g = pw2.backward(drop.backward(gy));
        g = dw.backward(ln_mid.backward(act.backward(g)));
        return ln_pre.backward(pw1.backward(glu.backward(g)));
    }
};

template <typename T>
struct ConformerBlock {
    FeedForward<T> ffn1, ffn2;
    AttentionModule<T> attn;
    ConvModule<T> conv;
    LayerNorm<T> ln_out;

    void init(long dim, long heads, int kernel, long expansion, int max_rel, double dropout,
              Rng& rng) {
        ffn1.init(dim, expansion, dropout, rng);
        attn.init(dim, heads, max_rel, dropout, rng);
        conv.init(dim, kernel, dropout, rng);
        ffn2.init(dim, expansion, dropout, rng);
        ln_out.init(dim);
    }

    void register_params(ParamRegistry<T>& reg, const std::string& path) {
        ffn1.register_params(reg, path + ".ffn1");
        attn.register_params(reg, path + ".attn");
        conv.register_params(reg, path + ".conv");
        ffn2.register_params(reg, path + ".ffn2");
        ln_out.register_params(reg, path + ".ln_out");
    }

    Mat<T> forward(const Mat<T>& x, bool train, Rng& rng) {
        Mat<T> h = x;
        add_scaled(h, ffn1.forward(h, train, rng), T(0.5));
        add_scaled(h, attn.forward(h, train, rng), T(1));
        add_scaled(h, conv.forward(h, train, rng), T(1));
        add_scaled(h, ffn2.forward(h, train, rng), T(0.5));
        return ln_out.forward(h);
    }

    Mat<T> backward(const Mat<T>& gy) {
        Mat<T> g = ln_out.backward(gy);
        accumulate(g, ffn2.backward(scaled(g, T(0.5))));
        accumulate(g, conv.backward(g));
        accumulate(g, attn.backward(g));
        accumulate(g, ffn1.backward(scaled(g, T(0.5))));
        return g;
    }

private:
    static void add_scaled(Mat<T>& x, const Mat<T>& y, T s) {
        for (std::size_t i = 0; i < x.d.size(); ++i) x.d[i] += s * y.d[i];
    }
    static Mat<T> scaled(const Mat<T>& x, T s) {
        Mat<T> y(x.rows, x.cols);
        for (std::size_t i = 0; i < x.d.size(); ++i) y.d[i] = s * x.d[i];
        return y;
    }
    static void accumulate(Mat<T>& x, const Mat<T>& y) {
        for (std::size_t i = 0; i < x.d.size(); ++i) x.d[i] += y.d[i];
    }
};

}  // namespace breathscan::nn
