#include "medconv/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace medconv {

namespace {

template <typename T>
void check_rank(const TensorPtr<T>& t, std::size_t rank, const char* op, const char* what) {
    if (!t) throw Error(concat(op, ": ", what, " is null"));
    if (t->shape.size() != rank) {
        throw Error(concat(op, ": ", what, " must have rank ", rank, ", got shape ", shape_str(t->shape)));
    }
}

inline std::int64_t out_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
    return (in + 2 * p - k) / s + 1;
}

}  // namespace

template <typename T>
Triple conv_out_dims(const Triple& in, const Triple& kernel, const Triple& stride, const Triple& pad) {
    Triple out{};
    for (int a = 0; a < 3; ++a) {
        if (stride[a] < 1) throw Error(concat("conv3d: stride must be >= 1, got ", stride[a]));
        if (pad[a] < 0) throw Error(concat("conv3d: pad must be >= 0, got ", pad[a]));
        if (kernel[a] > in[a] + 2 * pad[a]) {
            throw Error(concat("conv3d: kernel extent ", kernel[a], " exceeds padded input extent ",
                               in[a] + 2 * pad[a], " on axis ", a));
        }
        out[a] = out_extent(in[a], kernel[a], stride[a], pad[a]);
        if (out[a] <= 0) throw Error(concat("conv3d: zero-sized output on axis ", a));
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv3d
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> conv3d(Tape<T>* tape, const TensorPtr<T>& input, const TensorPtr<T>& kernel,
                    const TensorPtr<T>& bias, const Triple& stride, const Triple& pad) {
    check_rank(input, 5, "conv3d", "input");
    check_rank(kernel, 5, "conv3d", "kernel");
    const std::int64_t N = input->shape[0], Cin = input->shape[1];
    const std::int64_t D = input->shape[2], H = input->shape[3], W = input->shape[4];
    const std::int64_t Cout = kernel->shape[0];
    if (kernel->shape[1] != Cin) {
        throw Error(concat("conv3d: kernel expects ", kernel->shape[1], " input channels, input has ", Cin));
    }
    const Triple kd{kernel->shape[2], kernel->shape[3], kernel->shape[4]};
    const Triple od = conv_out_dims<T>({D, H, W}, kd, stride, pad);
    if (bias) {
        check_rank(bias, 1, "conv3d", "bias");
        if (bias->shape[0] != Cout) {
            throw Error(concat("conv3d: bias has ", bias->shape[0], " entries, kernel has ", Cout, " filters"));
        }
    }

    auto out = make_tensor<T>({N, Cout, od[0], od[1], od[2]});
    const std::int64_t OD = od[0], OH = od[1], OW = od[2];
    const std::int64_t in_chan = D * H * W, out_chan = OD * OH * OW;
    const std::int64_t kvol = kd[0] * kd[1] * kd[2];
    const T* in_p = input->data.data();
    const T* k_p = kernel->data.data();
    T* out_p = out->data.data();

    // Loop order keeps the innermost accumulation contiguous along W for
    // stride 1, which is the hot path.
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t co = 0; co < Cout; ++co) {
            T* dst = out_p + (n * Cout + co) * out_chan;
            const T bv = bias ? bias->data[static_cast<std::size_t>(co)] : T(0);
            std::fill(dst, dst + out_chan, bv);
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                const T* src = in_p + (n * Cin + ci) * in_chan;
                const T* kern = k_p + (co * Cin + ci) * kvol;
                for (std::int64_t kz = 0; kz < kd[0]; ++kz) {
                    const std::int64_t od_lo = std::max<std::int64_t>(0, (pad[0] - kz + stride[0] - 1) / stride[0]);
                    const std::int64_t od_hi = std::min(OD, (D - 1 + pad[0] - kz) / stride[0] + 1);
                    for (std::int64_t ky = 0; ky < kd[1]; ++ky) {
                        const std::int64_t oh_lo = std::max<std::int64_t>(0, (pad[1] - ky + stride[1] - 1) / stride[1]);
                        const std::int64_t oh_hi = std::min(OH, (H - 1 + pad[1] - ky) / stride[1] + 1);
                        for (std::int64_t kx = 0; kx < kd[2]; ++kx) {
                            const std::int64_t ow_lo = std::max<std::int64_t>(0, (pad[2] - kx + stride[2] - 1) / stride[2]);
                            const std::int64_t ow_hi = std::min(OW, (W - 1 + pad[2] - kx) / stride[2] + 1);
                            const T wv = kern[(kz * kd[1] + ky) * kd[2] + kx];
                            if (wv == T(0)) continue;
                            for (std::int64_t oz = od_lo; oz < od_hi; ++oz) {
                                const std::int64_t iz = oz * stride[0] + kz - pad[0];
                                for (std::int64_t oy = oh_lo; oy < oh_hi; ++oy) {
                                    const std::int64_t iy = oy * stride[1] + ky - pad[1];
                                    const T* in_row = src + (iz * H + iy) * W + kx - pad[2];
                                    T* out_row = dst + (oz * OH + oy) * OW;
                                    if (stride[2] == 1) {
                                        for (std::int64_t ox = ow_lo; ox < ow_hi; ++ox) {
                                            out_row[ox] += wv * in_row[ox];
                                        }
                                    } else {
                                        for (std::int64_t ox = ow_lo; ox < ow_hi; ++ox) {
                                            out_row[ox] += wv * in_row[ox * stride[2]];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    const bool need_in = tracks_grad(input), need_k = tracks_grad(kernel), need_b = tracks_grad(bias);
    if (tape && (need_in || need_k || need_b)) {
        Triple st = stride, pd = pad, kdim = kd;
        tape->record(out, [=]() {
            const T* go = out->grad.data();
            const std::int64_t kvol2 = kdim[0] * kdim[1] * kdim[2];
            if (need_b) {
                bias->ensure_grad();
#pragma omp parallel for schedule(static)
                for (std::int64_t co = 0; co < Cout; ++co) {
                    T acc = T(0);
                    for (std::int64_t n = 0; n < N; ++n) {
                        const T* g = go + (n * Cout + co) * out_chan;
                        for (std::int64_t i = 0; i < out_chan; ++i) acc += g[i];
                    }
                    bias->grad[static_cast<std::size_t>(co)] += acc;
                }
            }
            if (need_k) {
                kernel->ensure_grad();
#pragma omp parallel for schedule(static)
                for (std::int64_t co = 0; co < Cout; ++co) {
                    for (std::int64_t ci = 0; ci < Cin; ++ci) {
                        T* kg = kernel->grad.data() + (co * Cin + ci) * kvol2;
                        for (std::int64_t kz = 0; kz < kdim[0]; ++kz) {
                            const std::int64_t od_lo = std::max<std::int64_t>(0, (pd[0] - kz + st[0] - 1) / st[0]);
                            const std::int64_t od_hi = std::min(OD, (D - 1 + pd[0] - kz) / st[0] + 1);
                            for (std::int64_t ky = 0; ky < kdim[1]; ++ky) {
                                const std::int64_t oh_lo = std::max<std::int64_t>(0, (pd[1] - ky + st[1] - 1) / st[1]);
                                const std::int64_t oh_hi = std::min(OH, (H - 1 + pd[1] - ky) / st[1] + 1);
                                for (std::int64_t kx = 0; kx < kdim[2]; ++kx) {
                                    const std::int64_t ow_lo = std::max<std::int64_t>(0, (pd[2] - kx + st[2] - 1) / st[2]);
                                    const std::int64_t ow_hi = std::min(OW, (W - 1 + pd[2] - kx) / st[2] + 1);
                                    T acc = T(0);
                                    for (std::int64_t n = 0; n < N; ++n) {
                                        const T* g = go + (n * Cout + co) * out_chan;
                                        const T* src = in_p + (n * Cin + ci) * in_chan;
                                        for (std::int64_t oz = od_lo; oz < od_hi; ++oz) {
                                            const std::int64_t iz = oz * st[0] + kz - pd[0];
                                            for (std::int64_t oy = oh_lo; oy < oh_hi; ++oy) {
                                                const std::int64_t iy = oy * st[1] + ky - pd[1];
                                                const T* in_row = src + (iz * H + iy) * W + kx - pd[2];
                                                const T* g_row = g + (oz * OH + oy) * OW;
                                                if (st[2] == 1) {
                                                    for (std::int64_t ox = ow_lo; ox < ow_hi; ++ox) {
                                                        acc += g_row[ox] * in_row[ox];
                                                    }
                                                } else {
                                                    for (std::int64_t ox = ow_lo; ox < ow_hi; ++ox) {
                                                        acc += g_row[ox] * in_row[ox * st[2]];
                                                    }
                                                }
                                            }
                                        }
                                    }
                                    kg[(kz * kdim[1] + ky) * kdim[2] + kx] += acc;
                                }
                            }
                        }
                    }
                }
            }
            if (need_in) {
                input->ensure_grad();
#pragma omp parallel for schedule(static)
                for (std::int64_t n = 0; n < N; ++n) {
                    for (std::int64_t co = 0; co < Cout; ++co) {
                        const T* g = go + (n * Cout + co) * out_chan;
                        for (std::int64_t ci = 0; ci < Cin; ++ci) {
                            T* ig = input->grad.data() + (n * Cin + ci) * in_chan;
                            const T* kern = k_p + (co * Cin + ci) * kvol2;
                            for (std::int64_t kz = 0; kz < kdim[0]; ++kz) {
                                const std::int64_t od_lo = std::max<std::int64_t>(0, (pd[0] - kz + st[0] - 1) / st[0]);
                                const std::int64_t od_hi = std::min(OD, (D - 1 + pd[0] - kz) / st[0] + 1);
                                for (std::int64_t ky = 0; ky < kdim[1]; ++ky) {
                                    const std::int64_t oh_lo = std::max<std::int64_t>(0, (pd[1] - ky + st[1] - 1) / st[1]);
                                    const std::int64_t oh_hi = std::min(OH, (H - 1 + pd[1] - ky) / st[1] + 1);
                                    for (std::int64_t kx = 0; kx < kdim[2]; ++kx) {
                                        const std::int64_t ow_lo = std::max<std::int64_t>(0, (pd[2] - kx + st[2] - 1) / st[2]);
                                        const std::int64_t ow_hi = std::min(OW, (W - 1 + pd[2] - kx) / st[2] + 1);
                                        const T wv = kern[(kz * kdim[1] + ky) * kdim[2] + kx];
                                        if (wv == T(0)) continue;
                                        for (std::int64_t oz = od_lo; oz < od_hi; ++oz) {
                                            const std::int64_t iz = oz * st[0] + kz - pd[0];
                                            for (std::int64_t oy = oh_lo; oy < oh_hi; ++oy) {
                                                const std::int64_t iy = oy * st[1] + ky - pd[1];
                                                T* ig_row = ig + (iz * H + iy) * W + kx - pd[2];
                                                const T* g_row = g + (oz * OH + oy) * OW;
                                                if (st[2] == 1) {
                                                    for (std::int64_t ox = ow_lo; ox < ow_hi; ++ox) {
                                                        ig_row[ox] += wv * g_row[ox];
                                                    }
                                                } else {
                                                    for (std::int64_t ox = ow_lo; ox < ow_hi; ++ox) {
                                                        ig_row[ox * st[2]] += wv * g_row[ox];
                                                    }
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch_norm3d
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> batch_norm3d(Tape<T>* tape, const TensorPtr<T>& input, const TensorPtr<T>& gamma,
                          const TensorPtr<T>& beta, T eps, Mode mode, BatchNormState<T>* state) {
    check_rank(input, 5, "batch_norm3d", "input");
    check_rank(gamma, 1, "batch_norm3d", "gamma");
    check_rank(beta, 1, "batch_norm3d", "beta");
    if (eps <= T(0)) throw Error("batch_norm3d: eps must be > 0");
    const std::int64_t N = input->shape[0], C = input->shape[1];
    const std::int64_t spatial = input->shape[2] * input->shape[3] * input->shape[4];
    if (gamma->shape[0] != C || beta->shape[0] != C) {
        throw Error(concat("batch_norm3d: gamma/beta length must equal channels (", C, "), got ",
                           gamma->shape[0], "/", beta->shape[0]));
    }
    if (!state) throw Error("batch_norm3d: running stats state is required");
    if (static_cast<std::int64_t>(state->running_mean.size()) != C) {
        throw Error(concat("batch_norm3d: state tracks ", state->running_mean.size(), " channels, input has ", C));
    }

    const std::int64_t m = N * spatial;
    std::vector<T> mean_c(static_cast<std::size_t>(C), T(0));
    std::vector<T> invstd_c(static_cast<std::size_t>(C), T(0));

    if (mode == Mode::kTrain) {
        for (std::int64_t c = 0; c < C; ++c) {
            T s = T(0);
            for (std::int64_t n = 0; n < N; ++n) {
                const T* p = input->data.data() + (n * C + c) * spatial;
                for (std::int64_t i = 0; i < spatial; ++i) s += p[i];
            }
            const T mu = s / static_cast<T>(m);
            T v = T(0);
            for (std::int64_t n = 0; n < N; ++n) {
                const T* p = input->data.data() + (n * C + c) * spatial;
                for (std::int64_t i = 0; i < spatial; ++i) {
                    const T d = p[i] - mu;
                    v += d * d;
                }
            }
            const T var = v / static_cast<T>(m);
            mean_c[static_cast<std::size_t>(c)] = mu;
            invstd_c[static_cast<std::size_t>(c)] = T(1) / std::sqrt(var + eps);
            state->running_mean[static_cast<std::size_t>(c)] =
                (T(1) - state->momentum) * state->running_mean[static_cast<std::size_t>(c)] + state->momentum * mu;
            state->running_var[static_cast<std::size_t>(c)] =
                (T(1) - state->momentum) * state->running_var[static_cast<std::size_t>(c)] + state->momentum * var;
        }
    } else {
        for (std::int64_t c = 0; c < C; ++c) {
            mean_c[static_cast<std::size_t>(c)] = state->running_mean[static_cast<std::size_t>(c)];
            invstd_c[static_cast<std::size_t>(c)] =
                T(1) / std::sqrt(state->running_var[static_cast<std::size_t>(c)] + eps);
        }
    }

    auto out = make_tensor<T>(input->shape);
    // Normalized values are kept for the backward pass.
    auto xhat = std::make_shared<std::vector<T>>(input->data.size());
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t c = 0; c < C; ++c) {
            const T* p = input->data.data() + (n * C + c) * spatial;
            T* xh = xhat->data() + (n * C + c) * spatial;
            T* o = out->data.data() + (n * C + c) * spatial;
            const T mu = mean_c[static_cast<std::size_t>(c)];
            const T is = invstd_c[static_cast<std::size_t>(c)];
            const T g = gamma->data[static_cast<std::size_t>(c)];
            const T b = beta->data[static_cast<std::size_t>(c)];
            for (std::int64_t i = 0; i < spatial; ++i) {
                xh[i] = (p[i] - mu) * is;
                o[i] = g * xh[i] + b;
            }
        }
    }

    const bool need_in = tracks_grad(input), need_g = tracks_grad(gamma), need_b = tracks_grad(beta);
    if (tape && (need_in || need_g || need_b)) {
        tape->record(out, [=]() {
            std::vector<T> sum_go(static_cast<std::size_t>(C), T(0));
            std::vector<T> sum_go_xh(static_cast<std::size_t>(C), T(0));
            for (std::int64_t n = 0; n < N; ++n) {
                for (std::int64_t c = 0; c < C; ++c) {
                    const T* g = out->grad.data() + (n * C + c) * spatial;
                    const T* xh = xhat->data() + (n * C + c) * spatial;
                    T a = T(0), bsum = T(0);
                    for (std::int64_t i = 0; i < spatial; ++i) {
                        a += g[i];
                        bsum += g[i] * xh[i];
                    }
                    sum_go[static_cast<std::size_t>(c)] += a;
                    sum_go_xh[static_cast<std::size_t>(c)] += bsum;
                }
            }
            if (need_b) {
                beta->ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) beta->grad[static_cast<std::size_t>(c)] += sum_go[static_cast<std::size_t>(c)];
            }
            if (need_g) {
                gamma->ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) gamma->grad[static_cast<std::size_t>(c)] += sum_go_xh[static_cast<std::size_t>(c)];
            }
            if (need_in) {
                input->ensure_grad();
                const T inv_m = T(1) / static_cast<T>(m);
                for (std::int64_t n = 0; n < N; ++n) {
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T* g = out->grad.data() + (n * C + c) * spatial;
                        const T* xh = xhat->data() + (n * C + c) * spatial;
                        T* ig = input->grad.data() + (n * C + c) * spatial;
                        const T k = gamma->data[static_cast<std::size_t>(c)] * invstd_c[static_cast<std::size_t>(c)];
                        if (mode == Mode::kTrain) {
                            const T mg = sum_go[static_cast<std::size_t>(c)] * inv_m;
                            const T mgx = sum_go_xh[static_cast<std::size_t>(c)] * inv_m;
                            for (std::int64_t i = 0; i < spatial; ++i) {
                                ig[i] += k * (g[i] - mg - xh[i] * mgx);
                            }
                        } else {
                            for (std::int64_t i = 0; i < spatial; ++i) ig[i] += k * g[i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pointwise / pooling / linear
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> relu(Tape<T>* tape, const TensorPtr<T>& input) {
    if (!input) throw Error("relu: input is null");
    auto out = make_tensor<T>(input->shape);
    const std::size_t n = input->data.size();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = input->data[i] > T(0) ? input->data[i] : T(0);
    if (tape && tracks_grad(input)) {
        tape->record(out, [=]() {
            input->ensure_grad();
            // Subgradient at 0 is 0.
            for (std::size_t i = 0; i < n; ++i) {
                if (input->data[i] > T(0)) input->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> max_pool3d(Tape<T>* tape, const TensorPtr<T>& input, const Triple& kernel,
                        const Triple& stride, const Triple& pad) {
    check_rank(input, 5, "max_pool3d", "input");
    for (int a = 0; a < 3; ++a) {
        if (pad[a] >= kernel[a]) throw Error("max_pool3d: pad must be smaller than kernel");
    }
    const std::int64_t N = input->shape[0], C = input->shape[1];
    const std::int64_t D = input->shape[2], H = input->shape[3], W = input->shape[4];
    const Triple od = conv_out_dims<T>({D, H, W}, kernel, stride, pad);
    auto out = make_tensor<T>({N, C, od[0], od[1], od[2]});
    const std::int64_t out_chan = od[0] * od[1] * od[2], in_chan = D * H * W;
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out->data.size());

    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const T* src = input->data.data() + nc * in_chan;
        T* dst = out->data.data() + nc * out_chan;
        std::int64_t* am = argmax->data() + nc * out_chan;
        std::int64_t o = 0;
        for (std::int64_t oz = 0; oz < od[0]; ++oz) {
            for (std::int64_t oy = 0; oy < od[1]; ++oy) {
                for (std::int64_t ox = 0; ox < od[2]; ++ox, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int64_t best_i = -1;
                    for (std::int64_t kz = 0; kz < kernel[0]; ++kz) {
                        const std::int64_t iz = oz * stride[0] + kz - pad[0];
                        if (iz < 0 || iz >= D) continue;
                        for (std::int64_t ky = 0; ky < kernel[1]; ++ky) {
                            const std::int64_t iy = oy * stride[1] + ky - pad[1];
                            if (iy < 0 || iy >= H) continue;
                            for (std::int64_t kx = 0; kx < kernel[2]; ++kx) {
                                const std::int64_t ix = ox * stride[2] + kx - pad[2];
                                if (ix < 0 || ix >= W) continue;
                                const std::int64_t idx = (iz * H + iy) * W + ix;
                                if (src[idx] > best) {
                                    best = src[idx];
                                    best_i = idx;
                                }
                            }
                        }
                    }
                    dst[o] = best;
                    am[o] = best_i;
                }
            }
        }
    }

    if (tape && tracks_grad(input)) {
        tape->record(out, [=]() {
            input->ensure_grad();
            for (std::int64_t nc = 0; nc < N * C; ++nc) {
                const T* g = out->grad.data() + nc * out_chan;
                const std::int64_t* am = argmax->data() + nc * out_chan;
                T* ig = input->grad.data() + nc * in_chan;
                for (std::int64_t o = 0; o < out_chan; ++o) ig[am[o]] += g[o];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> global_avg_pool3d(Tape<T>* tape, const TensorPtr<T>& input) {
    check_rank(input, 5, "global_avg_pool3d", "input");
    const std::int64_t N = input->shape[0], C = input->shape[1];
    const std::int64_t spatial = input->shape[2] * input->shape[3] * input->shape[4];
    auto out = make_tensor<T>({N, C});
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const T* p = input->data.data() + nc * spatial;
        T s = T(0);
        for (std::int64_t i = 0; i < spatial; ++i) s += p[i];
        out->data[static_cast<std::size_t>(nc)] = s / static_cast<T>(spatial);
    }
    if (tape && tracks_grad(input)) {
        tape->record(out, [=]() {
            input->ensure_grad();
            const T inv = T(1) / static_cast<T>(spatial);
            for (std::int64_t nc = 0; nc < N * C; ++nc) {
                const T g = out->grad[static_cast<std::size_t>(nc)] * inv;
                T* ig = input->grad.data() + nc * spatial;
                for (std::int64_t i = 0; i < spatial; ++i) ig[i] += g;
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> linear(Tape<T>* tape, const TensorPtr<T>& input, const TensorPtr<T>& weight,
                    const TensorPtr<T>& bias) {
    check_rank(input, 2, "linear", "input");
    check_rank(weight, 2, "linear", "weight");
    const std::int64_t N = input->shape[0], F = input->shape[1], O = weight->shape[0];
    if (weight->shape[1] != F) {
        throw Error(concat("linear: weight expects ", weight->shape[1], " features, input has ", F));
    }
    if (bias) {
        check_rank(bias, 1, "linear", "bias");
        if (bias->shape[0] != O) throw Error(concat("linear: bias length ", bias->shape[0], " != ", O));
    }
    auto out = make_tensor<T>({N, O});
    for (std::int64_t n = 0; n < N; ++n) {
        const T* x = input->data.data() + n * F;
        T* o = out->data.data() + n * O;
        for (std::int64_t j = 0; j < O; ++j) {
            const T* w = weight->data.data() + j * F;
            T s = bias ? bias->data[static_cast<std::size_t>(j)] : T(0);
            for (std::int64_t f = 0; f < F; ++f) s += x[f] * w[f];
            o[j] = s;
        }
    }
    const bool need_in = tracks_grad(input), need_w = tracks_grad(weight), need_b = tracks_grad(bias);
    if (tape && (need_in || need_w || need_b)) {
        tape->record(out, [=]() {
            if (need_b) {
                bias->ensure_grad();
                for (std::int64_t n = 0; n < N; ++n) {
                    const T* g = out->grad.data() + n * O;
                    for (std::int64_t j = 0; j < O; ++j) bias->grad[static_cast<std::size_t>(j)] += g[j];
                }
            }
            if (need_w) {
                weight->ensure_grad();
                for (std::int64_t n = 0; n < N; ++n) {
                    const T* g = out->grad.data() + n * O;
                    const T* x = input->data.data() + n * F;
                    for (std::int64_t j = 0; j < O; ++j) {
                        T* wg = weight->grad.data() + j * F;
                        const T gj = g[j];
                        for (std::int64_t f = 0; f < F; ++f) wg[f] += gj * x[f];
                    }
                }
            }
            if (need_in) {
                input->ensure_grad();
                for (std::int64_t n = 0; n < N; ++n) {
                    const T* g = out->grad.data() + n * O;
                    T* ig = input->grad.data() + n * F;
                    for (std::int64_t j = 0; j < O; ++j) {
                        const T* w = weight->data.data() + j * F;
                        const T gj = g[j];
                        for (std::int64_t f = 0; f < F; ++f) ig[f] += gj * w[f];
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> log_softmax(Tape<T>* tape, const TensorPtr<T>& input) {
    check_rank(input, 2, "log_softmax", "input");
    const std::int64_t N = input->shape[0], C = input->shape[1];
    if (C < 2) throw Error("log_softmax: needs at least 2 classes");
    auto out = make_tensor<T>(input->shape);
    for (std::int64_t n = 0; n < N; ++n) {
        const T* z = input->data.data() + n * C;
        T* o = out->data.data() + n * C;
        T mx = z[0];
        for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, z[c]);
        T s = T(0);
        for (std::int64_t c = 0; c < C; ++c) s += std::exp(z[c] - mx);
        const T lse = mx + std::log(s);
        for (std::int64_t c = 0; c < C; ++c) o[c] = z[c] - lse;
    }
    if (tape && tracks_grad(input)) {
        tape->record(out, [=]() {
            input->ensure_grad();
            for (std::int64_t n = 0; n < N; ++n) {
                const T* g = out->grad.data() + n * C;
                const T* o = out->data.data() + n * C;
                T* ig = input->grad.data() + n * C;
                T gsum = T(0);
                for (std::int64_t c = 0; c < C; ++c) gsum += g[c];
                for (std::int64_t c = 0; c < C; ++c) ig[c] += g[c] - std::exp(o[c]) * gsum;
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (!a || !b) throw Error("add: null input");
    if (a->shape != b->shape) {
        throw Error(concat("add: shape mismatch ", shape_str(a->shape), " vs ", shape_str(b->shape)));
    }
    auto out = make_tensor<T>(a->shape);
    for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    const bool need_a = tracks_grad(a), need_b = tracks_grad(b);
    if (tape && (need_a || need_b)) {
        tape->record(out, [=]() {
            if (need_a) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i];
            }
            if (need_b) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->data.size(); ++i) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> mul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (!a || !b) throw Error("mul: null input");
    if (a->shape != b->shape) {
        throw Error(concat("mul: shape mismatch ", shape_str(a->shape), " vs ", shape_str(b->shape)));
    }
    auto out = make_tensor<T>(a->shape);
    for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
    const bool need_a = tracks_grad(a), need_b = tracks_grad(b);
    if (tape && (need_a || need_b)) {
        tape->record(out, [=]() {
            if (need_a) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i] * b->data[i];
            }
            if (need_b) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->data.size(); ++i) b->grad[i] += out->grad[i] * a->data[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> sum(Tape<T>* tape, const TensorPtr<T>& input) {
    if (!input) throw Error("sum: input is null");
    auto out = make_tensor<T>(Shape{1});
    T s = T(0);
    for (T v : input->data) s += v;
    out->data[0] = s;
    if (tape && tracks_grad(input)) {
        tape->record(out, [=]() {
            input->ensure_grad();
            const T g = out->grad[0];
            for (std::size_t i = 0; i < input->data.size(); ++i) input->grad[i] += g;
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> mean(Tape<T>* tape, const TensorPtr<T>& input) {
    if (!input) throw Error("mean: input is null");
    auto out = make_tensor<T>(Shape{1});
    T s = T(0);
    for (T v : input->data) s += v;
    const T inv = T(1) / static_cast<T>(input->data.size());
    out->data[0] = s * inv;
    if (tape && tracks_grad(input)) {
        tape->record(out, [=]() {
            input->ensure_grad();
            const T g = out->grad[0] * inv;
            for (std::size_t i = 0; i < input->data.size(); ++i) input->grad[i] += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// loss kernels
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> weighted_nll(Tape<T>* tape, const TensorPtr<T>& logp,
                          const std::vector<std::int64_t>& labels, const std::vector<T>& sample_weights) {
    check_rank(logp, 2, "weighted_nll", "logp");
    const std::int64_t N = logp->shape[0], C = logp->shape[1];
    if (static_cast<std::int64_t>(labels.size()) != N || static_cast<std::int64_t>(sample_weights.size()) != N) {
        throw Error("weighted_nll: labels/weights length must equal batch size");
    }
    for (auto y : labels) {
        if (y < 0 || y >= C) throw Error(concat("weighted_nll: label ", y, " outside [0,", C, ")"));
    }
    auto out = make_tensor<T>(Shape{1});
    T s = T(0);
    for (std::int64_t n = 0; n < N; ++n) {
        s += sample_weights[static_cast<std::size_t>(n)] * (-logp->data[static_cast<std::size_t>(n * C + labels[static_cast<std::size_t>(n)])]);
    }
    out->data[0] = s / static_cast<T>(N);
    if (tape && tracks_grad(logp)) {
        auto lab = labels;
        auto w = sample_weights;
        tape->record(out, [=]() {
            logp->ensure_grad();
            const T g = out->grad[0] / static_cast<T>(N);
            for (std::int64_t n = 0; n < N; ++n) {
                logp->grad[static_cast<std::size_t>(n * C + lab[static_cast<std::size_t>(n)])] -=
                    g * w[static_cast<std::size_t>(n)];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> weighted_sigmoid_bce(Tape<T>* tape, const TensorPtr<T>& logits,
                                  const std::vector<std::int64_t>& labels, const std::vector<T>& class_weights) {
    check_rank(logits, 2, "weighted_sigmoid_bce", "logits");
    const std::int64_t N = logits->shape[0], C = logits->shape[1];
    if (static_cast<std::int64_t>(labels.size()) != N) throw Error("weighted_sigmoid_bce: labels length must equal batch size");
    if (static_cast<std::int64_t>(class_weights.size()) != C) throw Error("weighted_sigmoid_bce: one weight per class required");
    for (auto y : labels) {
        if (y < 0 || y >= C) throw Error(concat("weighted_sigmoid_bce: label ", y, " outside [0,", C, ")"));
    }
    auto out = make_tensor<T>(Shape{1});
    T s = T(0);
    for (std::int64_t n = 0; n < N; ++n) {
        const T* z = logits->data.data() + n * C;
        for (std::int64_t c = 0; c < C; ++c) {
            const T y = labels[static_cast<std::size_t>(n)] == c ? T(1) : T(0);
            // softplus(z) - y*z, computed stably
            const T zp = std::max(z[c], T(0));
            s += class_weights[static_cast<std::size_t>(c)] *
                 (zp - y * z[c] + std::log1p(std::exp(-std::abs(z[c]))));
        }
    }
    out->data[0] = s / static_cast<T>(N);
    if (tape && tracks_grad(logits)) {
        auto lab = labels;
        auto w = class_weights;
        tape->record(out, [=]() {
            logits->ensure_grad();
            const T g = out->grad[0] / static_cast<T>(N);
            for (std::int64_t n = 0; n < N; ++n) {
                const T* z = logits->data.data() + n * C;
                T* ig = logits->grad.data() + n * C;
                for (std::int64_t c = 0; c < C; ++c) {
                    const T y = lab[static_cast<std::size_t>(n)] == c ? T(1) : T(0);
                    const T sig = T(1) / (T(1) + std::exp(-z[c]));
                    ig[c] += g * w[static_cast<std::size_t>(c)] * (sig - y);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define MEDCONV_INSTANTIATE_OPS(T)                                                                          \
    template Triple conv_out_dims<T>(const Triple&, const Triple&, const Triple&, const Triple&);           \
    template TensorPtr<T> conv3d<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&, const TensorPtr<T>&, \
                                    const Triple&, const Triple&);                                          \
    template TensorPtr<T> batch_norm3d<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&,               \
                                          const TensorPtr<T>&, T, Mode, BatchNormState<T>*);                \
    template TensorPtr<T> relu<T>(Tape<T>*, const TensorPtr<T>&);                                           \
    template TensorPtr<T> max_pool3d<T>(Tape<T>*, const TensorPtr<T>&, const Triple&, const Triple&,        \
                                        const Triple&);                                                     \
    template TensorPtr<T> global_avg_pool3d<T>(Tape<T>*, const TensorPtr<T>&);                              \
    template TensorPtr<T> linear<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&, const TensorPtr<T>&); \
    template TensorPtr<T> log_softmax<T>(Tape<T>*, const TensorPtr<T>&);                                    \
    template TensorPtr<T> add<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&);                       \
    template TensorPtr<T> mul<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&);                       \
    template TensorPtr<T> sum<T>(Tape<T>*, const TensorPtr<T>&);                                            \
    template TensorPtr<T> mean<T>(Tape<T>*, const TensorPtr<T>&);                                           \
    template TensorPtr<T> weighted_nll<T>(Tape<T>*, const TensorPtr<T>&, const std::vector<std::int64_t>&,  \
                                          const std::vector<T>&);                                           \
    template TensorPtr<T> weighted_sigmoid_bce<T>(Tape<T>*, const TensorPtr<T>&,                            \
                                                  const std::vector<std::int64_t>&, const std::vector<T>&);

MEDCONV_INSTANTIATE_OPS(float)
MEDCONV_INSTANTIATE_OPS(double)

}  // namespace medconv
