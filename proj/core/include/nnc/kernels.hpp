#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "nnc/hlir.hpp"
#include "nnc/tensor.hpp"

namespace nnc::kernels {

/* ------------------------------------------------------------------ */
/*  Spatial geometry                                                   */
/* ------------------------------------------------------------------ */

/// Output extent of a strided window op. `same` pads to ceil(in/stride);
/// `valid` gives floor((in-k)/stride)+1.
int64_t window_out_extent(int64_t in, int64_t k, int64_t stride, hlir::Padding padding);

struct ConvGeom {
    int64_t n, ih, iw, ci;
    int64_t co, kh, kw, sh, sw;
    int64_t oh, ow;
    int64_t pad_top, pad_left;
};

ConvGeom conv_geometry(const std::vector<int64_t>& x_dims, const hlir::Attrs& attrs);

struct PoolGeom {
    int64_t n, ih, iw, c;
    int64_t kh, kw, sh, sw;
    int64_t oh, ow;
};

PoolGeom pool_geometry(const std::vector<int64_t>& x_dims, const hlir::Attrs& attrs);

/// Adaptive pooling window along one axis: [start, end).
inline int64_t adaptive_start(int64_t o, int64_t in, int64_t out) { return (o * in) / out; }
inline int64_t adaptive_end(int64_t o, int64_t in, int64_t out) {
    return ((o + 1) * in + out - 1) / out;
}

/* ------------------------------------------------------------------ */
/*  Elementwise                                                        */
/* ------------------------------------------------------------------ */

template <typename T>
void relu(const T* x, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_grad(const T* x, const T* g, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? g[i] : T(0);
}

template <typename T>
void add(const T* a, const T* b, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <typename T>
void copy(const T* x, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i];
}

/* ------------------------------------------------------------------ */
/*  CumSum: inclusive/exclusive, forward/reversed, along one axis      */
/* ------------------------------------------------------------------ */

template <typename T>
void cumsum(const T* x, T* y, const std::vector<int64_t>& dims, int64_t axis, bool exclusive,
            bool reverse) {
    int64_t outer = 1, inner = 1;
    int64_t len = dims.empty() ? 1 : dims[axis];
    for (int64_t i = 0; i < axis; ++i) outer *= dims[i];
    for (size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const T* xs = x + o * len * inner + in;
            T* ys = y + o * len * inner + in;
            T acc = T(0);
            if (!reverse) {
                for (int64_t i = 0; i < len; ++i) {
                    if (exclusive) {
                        ys[i * inner] = acc;
                        acc += xs[i * inner];
                    } else {
                        acc += xs[i * inner];
                        ys[i * inner] = acc;
                    }
                }
            } else {
                for (int64_t i = len - 1; i >= 0; --i) {
                    if (exclusive) {
                        ys[i * inner] = acc;
                        acc += xs[i * inner];
                    } else {
                        acc += xs[i * inner];
                        ys[i * inner] = acc;
                    }
                }
            }
        }
    }
}

/* ------------------------------------------------------------------ */
/*  Dense                                                              */
/* ------------------------------------------------------------------ */

// y[b,o] = sum_i x[b,i] * w[i,o] (+ bias[o])
template <typename T>
void dense(const T* x, const T* w, const T* bias, T* y, int64_t batch, int64_t in, int64_t out) {
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t o = 0; o < out; ++o) {
            T acc = bias ? bias[o] : T(0);
            for (int64_t i = 0; i < in; ++i) acc += x[b * in + i] * w[i * out + o];
            y[b * out + o] = acc;
        }
    }
}

// gx[b,i] = sum_o g[b,o] * w[i,o]
template <typename T>
void dense_grad_input(const T* g, const T* w, T* gx, int64_t batch, int64_t in, int64_t out) {
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t i = 0; i < in; ++i) {
            T acc = T(0);
            for (int64_t o = 0; o < out; ++o) acc += g[b * out + o] * w[i * out + o];
            gx[b * in + i] = acc;
        }
    }
}

// gw[i,o] = sum_b x[b,i] * g[b,o]
template <typename T>
void dense_grad_weight(const T* x, const T* g, T* gw, int64_t batch, int64_t in, int64_t out) {
    for (int64_t i = 0; i < in; ++i) {
        for (int64_t o = 0; o < out; ++o) {
            T acc = T(0);
            for (int64_t b = 0; b < batch; ++b) acc += x[b * in + i] * g[b * out + o];
            gw[i * out + o] = acc;
        }
    }
}

template <typename T>
void sum_cols(const T* g, T* gb, int64_t batch, int64_t out) {
    for (int64_t o = 0; o < out; ++o) {
        T acc = T(0);
        for (int64_t b = 0; b < batch; ++b) acc += g[b * out + o];
        gb[o] = acc;
    }
}

/* ------------------------------------------------------------------ */
/*  Conv2D (NHWC, kernel [kh,kw,ci,co])                                */
/* ------------------------------------------------------------------ */

template <typename T>
void conv2d(const T* x, const T* k, const T* bias, T* y, const ConvGeom& gm) {
    for (int64_t n = 0; n < gm.n; ++n) {
        for (int64_t oh = 0; oh < gm.oh; ++oh) {
            for (int64_t ow = 0; ow < gm.ow; ++ow) {
                for (int64_t co = 0; co < gm.co; ++co) {
                    T acc = bias ? bias[co] : T(0);
                    for (int64_t dh = 0; dh < gm.kh; ++dh) {
                        int64_t h = oh * gm.sh + dh - gm.pad_top;
                        if (h < 0 || h >= gm.ih) continue;
                        for (int64_t dw = 0; dw < gm.kw; ++dw) {
                            int64_t w = ow * gm.sw + dw - gm.pad_left;
                            if (w < 0 || w >= gm.iw) continue;
                            const T* xp = x + ((n * gm.ih + h) * gm.iw + w) * gm.ci;
                            const T* kp = k + ((dh * gm.kw + dw) * gm.ci) * gm.co + co;
                            for (int64_t ci = 0; ci < gm.ci; ++ci)
                                acc += xp[ci] * kp[ci * gm.co];
                        }
                    }
                    y[((n * gm.oh + oh) * gm.ow + ow) * gm.co + co] = acc;
                }
            }
        }
    }
}

template <typename T>
void conv2d_grad_input(const T* g, const T* k, T* gx, const ConvGeom& gm) {
    std::fill(gx, gx + gm.n * gm.ih * gm.iw * gm.ci, T(0));
    for (int64_t n = 0; n < gm.n; ++n) {
        for (int64_t oh = 0; oh < gm.oh; ++oh) {
            for (int64_t ow = 0; ow < gm.ow; ++ow) {
                const T* gp = g + ((n * gm.oh + oh) * gm.ow + ow) * gm.co;
                for (int64_t dh = 0; dh < gm.kh; ++dh) {
                    int64_t h = oh * gm.sh + dh - gm.pad_top;
                    if (h < 0 || h >= gm.ih) continue;
                    for (int64_t dw = 0; dw < gm.kw; ++dw) {
                        int64_t w = ow * gm.sw + dw - gm.pad_left;
                        if (w < 0 || w >= gm.iw) continue;
                        T* xp = gx + ((n * gm.ih + h) * gm.iw + w) * gm.ci;
                        const T* kp = k + ((dh * gm.kw + dw) * gm.ci) * gm.co;
                        for (int64_t ci = 0; ci < gm.ci; ++ci) {
                            T acc = T(0);
                            for (int64_t co = 0; co < gm.co; ++co)
                                acc += gp[co] * kp[ci * gm.co + co];
                            xp[ci] += acc;
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_grad_weight(const T* x, const T* g, T* gk, const ConvGeom& gm) {
    std::fill(gk, gk + gm.kh * gm.kw * gm.ci * gm.co, T(0));
    for (int64_t n = 0; n < gm.n; ++n) {
        for (int64_t oh = 0; oh < gm.oh; ++oh) {
            for (int64_t ow = 0; ow < gm.ow; ++ow) {
                const T* gp = g + ((n * gm.oh + oh) * gm.ow + ow) * gm.co;
                for (int64_t dh = 0; dh < gm.kh; ++dh) {
                    int64_t h = oh * gm.sh + dh - gm.pad_top;
                    if (h < 0 || h >= gm.ih) continue;
                    for (int64_t dw = 0; dw < gm.kw; ++dw) {
                        int64_t w = ow * gm.sw + dw - gm.pad_left;
                        if (w < 0 || w >= gm.iw) continue;
                        const T* xp = x + ((n * gm.ih + h) * gm.iw + w) * gm.ci;
                        T* kp = gk + ((dh * gm.kw + dw) * gm.ci) * gm.co;
                        for (int64_t ci = 0; ci < gm.ci; ++ci)
                            for (int64_t co = 0; co < gm.co; ++co)
                                kp[ci * gm.co + co] += xp[ci] * gp[co];
                    }
                }
            }
        }
    }
}

template <typename T>
void sum_nhw(const T* g, T* gb, int64_t n, int64_t h, int64_t w, int64_t c) {
    std::fill(gb, gb + c, T(0));
    for (int64_t i = 0; i < n * h * w; ++i)
        for (int64_t ch = 0; ch < c; ++ch) gb[ch] += g[i * c + ch];
}

/* ------------------------------------------------------------------ */
/*  Pooling                                                            */
/* ------------------------------------------------------------------ */

// idx (optional) records the window-linear argmax, first-in-scan-order
// on ties, as a float value 0..kh*kw-1.
template <typename T>
void maxpool2d(const T* x, T* y, T* idx, const PoolGeom& gm) {
    for (int64_t n = 0; n < gm.n; ++n) {
        for (int64_t oh = 0; oh < gm.oh; ++oh) {
            for (int64_t ow = 0; ow < gm.ow; ++ow) {
                for (int64_t c = 0; c < gm.c; ++c) {
                    T best{};
                    int64_t best_i = -1;
                    for (int64_t dh = 0; dh < gm.kh; ++dh) {
                        for (int64_t dw = 0; dw < gm.kw; ++dw) {
                            int64_t h = oh * gm.sh + dh;
                            int64_t w = ow * gm.sw + dw;
                            T v = x[((n * gm.ih + h) * gm.iw + w) * gm.c + c];
                            if (best_i < 0 || v > best) {
                                best = v;
                                best_i = dh * gm.kw + dw;
                            }
                        }
                    }
                    int64_t at = ((n * gm.oh + oh) * gm.ow + ow) * gm.c + c;
                    y[at] = best;
                    if (idx) idx[at] = static_cast<T>(best_i);
                }
            }
        }
    }
}

template <typename T>
void maxpool2d_grad(const T* idx, const T* g, T* gx, const PoolGeom& gm) {
    std::fill(gx, gx + gm.n * gm.ih * gm.iw * gm.c, T(0));
    for (int64_t n = 0; n < gm.n; ++n) {
        for (int64_t oh = 0; oh < gm.oh; ++oh) {
            for (int64_t ow = 0; ow < gm.ow; ++ow) {
                for (int64_t c = 0; c < gm.c; ++c) {
                    int64_t at = ((n * gm.oh + oh) * gm.ow + ow) * gm.c + c;
                    int64_t wi = static_cast<int64_t>(idx[at]);
                    int64_t h = oh * gm.sh + wi / gm.kw;
                    int64_t w = ow * gm.sw + wi % gm.kw;
                    gx[((n * gm.ih + h) * gm.iw + w) * gm.c + c] += g[at];
                }
            }
        }
    }
}

template <typename T>
void adaptive_avg_pool2d(const T* x, T* y, int64_t n, int64_t ih, int64_t iw, int64_t c,
                         int64_t oh, int64_t ow) {
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t o = 0; o < oh; ++o) {
            int64_t h0 = adaptive_start(o, ih, oh), h1 = adaptive_end(o, ih, oh);
            for (int64_t p = 0; p < ow; ++p) {
                int64_t w0 = adaptive_start(p, iw, ow), w1 = adaptive_end(p, iw, ow);
                T scale = T(1) / static_cast<T>((h1 - h0) * (w1 - w0));
                for (int64_t ch = 0; ch < c; ++ch) {
                    T acc = T(0);
                    for (int64_t h = h0; h < h1; ++h)
                        for (int64_t w = w0; w < w1; ++w)
                            acc += x[((b * ih + h) * iw + w) * c + ch];
                    y[((b * oh + o) * ow + p) * c + ch] = acc * scale;
                }
            }
        }
    }
}

template <typename T>
void adaptive_avg_pool2d_grad(const T* g, T* gx, int64_t n, int64_t ih, int64_t iw, int64_t c,
                              int64_t oh, int64_t ow) {
    std::fill(gx, gx + n * ih * iw * c, T(0));
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t o = 0; o < oh; ++o) {
            int64_t h0 = adaptive_start(o, ih, oh), h1 = adaptive_end(o, ih, oh);
            for (int64_t p = 0; p < ow; ++p) {
                int64_t w0 = adaptive_start(p, iw, ow), w1 = adaptive_end(p, iw, ow);
                T scale = T(1) / static_cast<T>((h1 - h0) * (w1 - w0));
                for (int64_t ch = 0; ch < c; ++ch) {
                    T gv = g[((b * oh + o) * ow + p) * c + ch] * scale;
                    for (int64_t h = h0; h < h1; ++h)
                        for (int64_t w = w0; w < w1; ++w)
                            gx[((b * ih + h) * iw + w) * c + ch] += gv;
                }
            }
        }
    }
}

/* ------------------------------------------------------------------ */
/*  Tiled GEMM route (im2col + blocked matmul, tile = 32)              */
/* ------------------------------------------------------------------ */

inline constexpr int64_t kGemmTile = 32;

// c[m,n] = sum_k a[m,k] * b[k,n]; c must be zero-initialized by the caller
// when accumulating from scratch.
template <typename T>
void matmul_tiled(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k) {
    for (int64_t i0 = 0; i0 < m; i0 += kGemmTile) {
        int64_t i1 = std::min(i0 + kGemmTile, m);
        for (int64_t k0 = 0; k0 < k; k0 += kGemmTile) {
            int64_t k1 = std::min(k0 + kGemmTile, k);
            for (int64_t j0 = 0; j0 < n; j0 += kGemmTile) {
                int64_t j1 = std::min(j0 + kGemmTile, n);
                for (int64_t i = i0; i < i1; ++i) {
                    for (int64_t kk = k0; kk < k1; ++kk) {
                        T av = a[i * k + kk];
                        const T* bp = b + kk * n;
                        T* cp = c + i * n;
                        for (int64_t j = j0; j < j1; ++j) cp[j] += av * bp[j];
                    }
                }
            }
        }
    }
}

template <typename T>
void dense_tiled(const T* x, const T* w, const T* bias, T* y, int64_t batch, int64_t in,
                 int64_t out) {
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t o = 0; o < out; ++o) y[b * out + o] = bias ? bias[o] : T(0);
    matmul_tiled(x, w, y, batch, out, in);
}

// Expands x into rows of [n*oh*ow, kh*kw*ci]; zero padding where the
// window leaves the input.
template <typename T>
void im2col(const T* x, T* cols, const ConvGeom& gm) {
    int64_t row = 0;
    for (int64_t n = 0; n < gm.n; ++n) {
        for (int64_t oh = 0; oh < gm.oh; ++oh) {
            for (int64_t ow = 0; ow < gm.ow; ++ow, ++row) {
                T* rp = cols + row * (gm.kh * gm.kw * gm.ci);
                for (int64_t dh = 0; dh < gm.kh; ++dh) {
                    int64_t h = oh * gm.sh + dh - gm.pad_top;
                    for (int64_t dw = 0; dw < gm.kw; ++dw) {
                        int64_t w = ow * gm.sw + dw - gm.pad_left;
                        T* cell = rp + (dh * gm.kw + dw) * gm.ci;
                        if (h < 0 || h >= gm.ih || w < 0 || w >= gm.iw) {
                            std::fill(cell, cell + gm.ci, T(0));
                        } else {
                            const T* xp = x + ((n * gm.ih + h) * gm.iw + w) * gm.ci;
                            std::copy(xp, xp + gm.ci, cell);
                        }
                    }
                }
            }
        }
    }
}

// The [kh,kw,ci,co] kernel layout is already the [kh*kw*ci, co] matrix.
template <typename T>
void conv2d_tiled(const T* x, const T* k, const T* bias, T* y, T* cols, const ConvGeom& gm) {
    im2col(x, cols, gm);
    int64_t rows = gm.n * gm.oh * gm.ow;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t co = 0; co < gm.co; ++co) y[r * gm.co + co] = bias ? bias[co] : T(0);
    matmul_tiled(cols, k, y, rows, gm.co, gm.kh * gm.kw * gm.ci);
}

/* ------------------------------------------------------------------ */
/*  Tensor-level node evaluation (used by constant folding)            */
/* ------------------------------------------------------------------ */

/// Evaluates one node with the reference kernels. `inputs` follow the
/// node's input order, `weights` its weights order. Returns one tensor
/// per node output (MaxPool2D with an argmax tap returns two).
std::vector<Tensor> eval_node(const hlir::Node& n, const std::vector<const Tensor*>& inputs,
                              const std::vector<const Tensor*>& weights);

/// Whole-graph evaluation on host tensors; returns every value.
/// Initializers come from the graph unless overridden by name.
std::map<std::string, Tensor> eval_graph(
    const hlir::Graph& g, const std::map<std::string, Tensor>& inputs,
    const std::map<std::string, Tensor>* weight_override = nullptr);

} // namespace nnc::kernels
