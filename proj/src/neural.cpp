#include "amsbench/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "amsbench/errors.hpp"

namespace ams::nn {

namespace {

std::size_t shape_product(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (const int d : shape) {
        if (d < 0) throw InternalError("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(shape[i]);
    }
    return out + ")";
}

/// Rows interpretation of a tensor whose last axis has `last` entries.
std::size_t rows_of(const Tensor& t, int last, std::string_view what) {
    if (t.shape.empty() || t.shape.back() != last || t.numel() % static_cast<std::size_t>(last))
        throw InternalError(std::string(what) + ": expected last axis " + std::to_string(last) +
                            ", got shape " + t.shape_str());
    return t.numel() / static_cast<std::size_t>(last);
}

Tensor uniform_init(std::vector<int> shape, double bound, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& x : t.v) x = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Tensor::Tensor(std::vector<int> shape_, std::vector<double> values)
    : shape(std::move(shape_)), v(std::move(values)) {
    if (shape_product(shape) != v.size())
        throw InternalError("tensor shape " + shape_to_string(shape) + " does not hold " +
                            std::to_string(v.size()) + " values");
}

Tensor Tensor::zeros(std::vector<int> shape) {
    Tensor t;
    const std::size_t n = shape_product(shape);
    t.shape = std::move(shape);
    t.v.assign(n, 0.0);
    return t;
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

void require_shape(const Tensor& t, const std::vector<int>& expected, std::string_view what) {
    if (t.shape != expected)
        throw InternalError(std::string(what) + ": expected shape " + shape_to_string(expected) +
                            ", got " + t.shape_str());
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)) {
    grad = Tensor::zeros(value.shape);
}

void Parameter::zero_grad() { std::fill(grad.v.begin(), grad.v.end(), 0.0); }

void TrainConfig::validate() const {
    if (!(lr > 0)) throw ConfigError("train.lr must be > 0");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (max_epochs < 0) throw ConfigError("train.max_epochs must be >= 0");
    if (patience < 0) throw ConfigError("train.patience must be >= 0");
    if (!(clip_norm > 0)) throw ConfigError("train.clip_norm must be > 0");
    if (!(pos_weight_cap >= 1)) throw ConfigError("train.pos_weight_cap must be >= 1");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
        throw ConfigError("train.betas must be in [0, 1)");
    if (!(eps > 0)) throw ConfigError("train.eps must be > 0");
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, int in, int out, Rng& rng) : in_(in), out_(out) {
    if (in < 1 || out < 1) throw ConfigError("linear '" + name + "': sizes must be >= 1");
    const double k = 1.0 / std::sqrt(static_cast<double>(in));
    w = Parameter(name + ".w", uniform_init({in, out}, k, rng));
    b = Parameter(name + ".b", uniform_init({out}, k, rng));
}

Tensor Linear::forward(const Tensor& x) {
    const std::size_t rows = rows_of(x, in_, w.name);
    x_ = x;
    std::vector<int> out_shape = x.shape;
    out_shape.back() = out_;
    Tensor y = Tensor::zeros(std::move(out_shape));
    for (std::size_t r = 0; r < rows; ++r) {
        double* yr = &y.v[r * static_cast<std::size_t>(out_)];
        const double* xr = &x.v[r * static_cast<std::size_t>(in_)];
        for (int o = 0; o < out_; ++o) yr[o] = b.value[static_cast<std::size_t>(o)];
        for (int i = 0; i < in_; ++i) {
            const double xi = xr[i];
            const double* wi = &w.value.v[static_cast<std::size_t>(i) * out_];
            for (int o = 0; o < out_; ++o) yr[o] += xi * wi[o];
        }
    }
    return y;
}

Tensor Linear::backward(const Tensor& grad_y) {
    const std::size_t rows = rows_of(grad_y, out_, w.name + " backward");
    if (rows != rows_of(x_, in_, w.name))
        throw InternalError(w.name + ": backward batch does not match cached forward");
    Tensor gx = Tensor::zeros(x_.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* gy = &grad_y.v[r * static_cast<std::size_t>(out_)];
        const double* xr = &x_.v[r * static_cast<std::size_t>(in_)];
        double* gxr = &gx.v[r * static_cast<std::size_t>(in_)];
        for (int o = 0; o < out_; ++o) b.grad[static_cast<std::size_t>(o)] += gy[o];
        for (int i = 0; i < in_; ++i) {
            const double* wi = &w.value.v[static_cast<std::size_t>(i) * out_];
            double* gwi = &w.grad.v[static_cast<std::size_t>(i) * out_];
            double acc = 0;
            for (int o = 0; o < out_; ++o) {
                gwi[o] += xr[i] * gy[o];
                acc += wi[o] * gy[o];
            }
            gxr[i] = acc;
        }
    }
    return gx;
}

std::vector<Parameter*> Linear::parameters() { return {&w, &b}; }

// ---------------------------------------------------------------- Conv1d

Conv1d::Conv1d(std::string name, int in_channels, int out_channels, int kernel, Rng& rng)
    : in_ch_(in_channels), out_ch_(out_channels), kernel_(kernel) {
    if (in_channels < 1 || out_channels < 1 || kernel < 1)
        throw ConfigError("conv1d '" + name + "': sizes must be >= 1");
    const double k = 1.0 / std::sqrt(static_cast<double>(in_channels) * kernel);
    w = Parameter(name + ".w", uniform_init({out_channels, in_channels, kernel}, k, rng));
    b = Parameter(name + ".b", uniform_init({out_channels}, k, rng));
}

Tensor Conv1d::forward(const Tensor& x) {
    if (x.shape.size() != 3 || x.shape[1] != in_ch_)
        throw InternalError(w.name + ": expected input (N, " + std::to_string(in_ch_) +
                            ", L), got " + x.shape_str());
    const int N = x.shape[0], L = x.shape[2];
    if (kernel_ > L)
        throw ConfigError(w.name + ": kernel " + std::to_string(kernel_) +
                          " wider than input length " + std::to_string(L));
    x_ = x;
    const int pad = (kernel_ - 1) / 2;
    Tensor y = Tensor::zeros({N, out_ch_, L});
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < out_ch_; ++o) {
            double* yo = &y.v[(static_cast<std::size_t>(n) * out_ch_ + o) * L];
            for (int t = 0; t < L; ++t) yo[t] = b.value[static_cast<std::size_t>(o)];
            for (int c = 0; c < in_ch_; ++c) {
                const double* xc = &x.v[(static_cast<std::size_t>(n) * in_ch_ + c) * L];
                const double* wk = &w.value.v[(static_cast<std::size_t>(o) * in_ch_ + c) * kernel_];
                for (int t = 0; t < L; ++t)
                    for (int j = 0; j < kernel_; ++j) {
                        const int s = t + j - pad;
                        if (s >= 0 && s < L) yo[t] += wk[j] * xc[s];
                    }
            }
        }
    return y;
}

Tensor Conv1d::backward(const Tensor& grad_y) {
    const int N = x_.shape[0], L = x_.shape[2];
    require_shape(grad_y, {N, out_ch_, L}, w.name + " backward");
    const int pad = (kernel_ - 1) / 2;
    Tensor gx = Tensor::zeros(x_.shape);
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < out_ch_; ++o) {
            const double* gy = &grad_y.v[(static_cast<std::size_t>(n) * out_ch_ + o) * L];
            for (int t = 0; t < L; ++t) b.grad[static_cast<std::size_t>(o)] += gy[t];
            for (int c = 0; c < in_ch_; ++c) {
                const double* xc = &x_.v[(static_cast<std::size_t>(n) * in_ch_ + c) * L];
                double* gxc = &gx.v[(static_cast<std::size_t>(n) * in_ch_ + c) * L];
                const double* wk = &w.value.v[(static_cast<std::size_t>(o) * in_ch_ + c) * kernel_];
                double* gwk = &w.grad.v[(static_cast<std::size_t>(o) * in_ch_ + c) * kernel_];
                for (int t = 0; t < L; ++t)
                    for (int j = 0; j < kernel_; ++j) {
                        const int s = t + j - pad;
                        if (s >= 0 && s < L) {
                            gwk[j] += gy[t] * xc[s];
                            gxc[s] += gy[t] * wk[j];
                        }
                    }
            }
        }
    return gx;
}

std::vector<Parameter*> Conv1d::parameters() { return {&w, &b}; }

// -------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(std::string name, int features, double eps)
    : features_(features), eps_(eps) {
    if (features < 1) throw ConfigError("layernorm '" + name + "': features must be >= 1");
    gamma = Parameter(name + ".gamma", Tensor::full({features}, 1.0));
    beta = Parameter(name + ".beta", Tensor::zeros({features}));
}

Tensor LayerNorm::forward(const Tensor& x) {
    const std::size_t rows = rows_of(x, features_, gamma.name);
    const std::size_t F = static_cast<std::size_t>(features_);
    x_hat_ = Tensor::zeros(x.shape);
    inv_std_.assign(rows, 0.0);
    Tensor y = Tensor::zeros(x.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = &x.v[r * F];
        double mean = 0;
        for (std::size_t f = 0; f < F; ++f) mean += xr[f];
        mean /= static_cast<double>(F);
        double var = 0;
        for (std::size_t f = 0; f < F; ++f) var += (xr[f] - mean) * (xr[f] - mean);
        var /= static_cast<double>(F);
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[r] = inv;
        for (std::size_t f = 0; f < F; ++f) {
            const double xh = (xr[f] - mean) * inv;
            x_hat_[r * F + f] = xh;
            y[r * F + f] = gamma.value[f] * xh + beta.value[f];
        }
    }
    return y;
}

Tensor LayerNorm::backward(const Tensor& grad_y) {
    const std::size_t rows = rows_of(grad_y, features_, gamma.name + " backward");
    const std::size_t F = static_cast<std::size_t>(features_);
    Tensor gx = Tensor::zeros(grad_y.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* gy = &grad_y.v[r * F];
        const double* xh = &x_hat_.v[r * F];
        double mean_g = 0, mean_gx = 0;
        for (std::size_t f = 0; f < F; ++f) {
            gamma.grad[f] += gy[f] * xh[f];
            beta.grad[f] += gy[f];
            const double g = gy[f] * gamma.value[f];
            mean_g += g;
            mean_gx += g * xh[f];
        }
        mean_g /= static_cast<double>(F);
        mean_gx /= static_cast<double>(F);
        for (std::size_t f = 0; f < F; ++f) {
            const double g = gy[f] * gamma.value[f];
            gx[r * F + f] = inv_std_[r] * (g - mean_g - xh[f] * mean_gx);
        }
    }
    return gx;
}

std::vector<Parameter*> LayerNorm::parameters() { return {&gamma, &beta}; }

// ------------------------------------------------------------------- Relu

Tensor Relu::forward(const Tensor& x) {
    active_.assign(x.numel(), false);
    Tensor y = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        active_[i] = x[i] > 0;
        if (!active_[i]) y[i] = 0;
    }
    return y;
}

Tensor Relu::backward(const Tensor& grad_y) {
    if (active_.size() != grad_y.numel())
        throw InternalError("relu backward does not match cached forward");
    Tensor gx = grad_y;
    for (std::size_t i = 0; i < gx.numel(); ++i)
        if (!active_[i]) gx[i] = 0;
    return gx;
}

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(double p, std::uint64_t seed) : p_(p), rng_(Rng::splitmix(seed)) {
    if (p < 0 || p >= 1) throw ConfigError("dropout probability must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x) {
    if (!training_ || p_ == 0.0) {
        keep_.clear();
        return x;
    }
    const double scale = 1.0 / (1.0 - p_);
    keep_.resize(x.numel());
    Tensor y = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        keep_[i] = rng_.bernoulli(1.0 - p_) ? scale : 0.0;
        y[i] *= keep_[i];
    }
    return y;
}

Tensor Dropout::backward(const Tensor& grad_y) {
    if (keep_.empty()) return grad_y;
    if (keep_.size() != grad_y.numel())
        throw InternalError("dropout backward does not match cached forward");
    Tensor gx = grad_y;
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] *= keep_[i];
    return gx;
}

// --------------------------------------------------------------- GruLayer

GruLayer::GruLayer(std::string name, int input, int hidden, Rng& rng)
    : input_(input), hidden_(hidden) {
    if (input < 1 || hidden < 1) throw ConfigError("gru '" + name + "': sizes must be >= 1");
    const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
    w_ih = Parameter(name + ".w_ih", uniform_init({3 * hidden, input}, k, rng));
    w_hh = Parameter(name + ".w_hh", uniform_init({3 * hidden, hidden}, k, rng));
    b_ih = Parameter(name + ".b_ih", uniform_init({3 * hidden}, k, rng));
    b_hh = Parameter(name + ".b_hh", uniform_init({3 * hidden}, k, rng));
}

Tensor GruLayer::forward(const Tensor& x, const Tensor& mask) {
    if (x.shape.size() != 3 || x.shape[2] != input_)
        throw InternalError(w_ih.name + ": expected input (B, T, " + std::to_string(input_) +
                            "), got " + x.shape_str());
    const int B = x.shape[0], T = x.shape[1];
    require_shape(mask, {B, T}, w_ih.name + " mask");
    x_ = x;
    mask_ = mask;
    const std::size_t H = static_cast<std::size_t>(hidden_);
    const auto steps = static_cast<std::size_t>(T);
    r_.assign(steps, {});
    z_.assign(steps, {});
    n_.assign(steps, {});
    ghn_.assign(steps, {});
    h_prev_.assign(steps, {});

    Tensor h_all = Tensor::zeros({B, T, hidden_});
    std::vector<double> h(static_cast<std::size_t>(B) * H, 0.0);
    std::vector<double> gi(3 * H), gh(3 * H);
    for (int t = 0; t < T; ++t) {
        auto& rt = r_[static_cast<std::size_t>(t)];
        auto& zt = z_[static_cast<std::size_t>(t)];
        auto& nt = n_[static_cast<std::size_t>(t)];
        auto& ghnt = ghn_[static_cast<std::size_t>(t)];
        auto& hpt = h_prev_[static_cast<std::size_t>(t)];
        rt.resize(static_cast<std::size_t>(B) * H);
        zt.resize(static_cast<std::size_t>(B) * H);
        nt.resize(static_cast<std::size_t>(B) * H);
        ghnt.resize(static_cast<std::size_t>(B) * H);
        hpt = h;
        for (int bi = 0; bi < B; ++bi) {
            const double* xt = &x.v[(static_cast<std::size_t>(bi) * T + t) * input_];
            const double* hp = &h[static_cast<std::size_t>(bi) * H];
            for (std::size_t g = 0; g < 3 * H; ++g) {
                double a = b_ih.value[g];
                const double* wr = &w_ih.value.v[g * static_cast<std::size_t>(input_)];
                for (int i = 0; i < input_; ++i) a += wr[i] * xt[i];
                gi[g] = a;
                double c = b_hh.value[g];
                const double* wh = &w_hh.value.v[g * H];
                for (std::size_t i = 0; i < H; ++i) c += wh[i] * hp[i];
                gh[g] = c;
            }
            const double m = mask.v[static_cast<std::size_t>(bi) * T + t];
            double* hb = &h[static_cast<std::size_t>(bi) * H];
            double* out = &h_all.v[(static_cast<std::size_t>(bi) * T + t) * hidden_];
            for (std::size_t j = 0; j < H; ++j) {
                const double r = sigmoid(gi[j] + gh[j]);
                const double z = sigmoid(gi[H + j] + gh[H + j]);
                const double n = std::tanh(gi[2 * H + j] + r * gh[2 * H + j]);
                const std::size_t bj = static_cast<std::size_t>(bi) * H + j;
                rt[bj] = r;
                zt[bj] = z;
                nt[bj] = n;
                ghnt[bj] = gh[2 * H + j];
                const double h_new = (1.0 - z) * n + z * hb[j];
                hb[j] = m * h_new + (1.0 - m) * hb[j];
                out[j] = hb[j];
            }
        }
    }
    return h_all;
}

Tensor GruLayer::backward(const Tensor& grad_h) {
    const int B = x_.shape[0], T = x_.shape[1];
    require_shape(grad_h, {B, T, hidden_}, w_ih.name + " backward");
    const std::size_t H = static_cast<std::size_t>(hidden_);
    Tensor gx = Tensor::zeros(x_.shape);
    std::vector<double> carry(static_cast<std::size_t>(B) * H, 0.0);
    std::vector<double> da_r(H), da_z(H), da_n(H);
    for (int t = T - 1; t >= 0; --t) {
        const auto& rt = r_[static_cast<std::size_t>(t)];
        const auto& zt = z_[static_cast<std::size_t>(t)];
        const auto& nt = n_[static_cast<std::size_t>(t)];
        const auto& ghnt = ghn_[static_cast<std::size_t>(t)];
        const auto& hpt = h_prev_[static_cast<std::size_t>(t)];
        for (int bi = 0; bi < B; ++bi) {
            const double m = mask_.v[static_cast<std::size_t>(bi) * T + t];
            const double* gout = &grad_h.v[(static_cast<std::size_t>(bi) * T + t) * hidden_];
            double* cb = &carry[static_cast<std::size_t>(bi) * H];
            const double* xt = &x_.v[(static_cast<std::size_t>(bi) * T + t) * input_];
            const double* hp = &hpt[static_cast<std::size_t>(bi) * H];
            double* gxt = &gx.v[(static_cast<std::size_t>(bi) * T + t) * input_];
            for (std::size_t j = 0; j < H; ++j) {
                const std::size_t bj = static_cast<std::size_t>(bi) * H + j;
                const double dh = gout[j] + cb[j];
                const double dh_raw = m * dh;
                double dhp = (1.0 - m) * dh;  // grad to h_{t-1}
                const double r = rt[bj], z = zt[bj], n = nt[bj];
                const double dz = dh_raw * (hp[j] - n);
                const double dn = dh_raw * (1.0 - z);
                dhp += dh_raw * z;
                const double dan = dn * (1.0 - n * n);
                const double dr = dan * ghnt[bj];
                const double dar = dr * r * (1.0 - r);
                const double daz = dz * z * (1.0 - z);
                da_r[j] = dar;
                da_z[j] = daz;
                da_n[j] = dan;
                b_ih.grad[j] += dar;
                b_ih.grad[H + j] += daz;
                b_ih.grad[2 * H + j] += dan;
                b_hh.grad[j] += dar;
                b_hh.grad[H + j] += daz;
                b_hh.grad[2 * H + j] += dan * r;
                cb[j] = dhp;
            }
            // weight grads and input/hidden grads, gate by gate
            for (std::size_t j = 0; j < H; ++j) {
                const std::size_t bj = static_cast<std::size_t>(bi) * H + j;
                const double gr = da_r[j], gz = da_z[j], gn = da_n[j];
                const double gnr = gn * rt[bj];
                double* gwi_r = &w_ih.grad.v[j * static_cast<std::size_t>(input_)];
                double* gwi_z = &w_ih.grad.v[(H + j) * static_cast<std::size_t>(input_)];
                double* gwi_n = &w_ih.grad.v[(2 * H + j) * static_cast<std::size_t>(input_)];
                const double* wi_r = &w_ih.value.v[j * static_cast<std::size_t>(input_)];
                const double* wi_z = &w_ih.value.v[(H + j) * static_cast<std::size_t>(input_)];
                const double* wi_n = &w_ih.value.v[(2 * H + j) * static_cast<std::size_t>(input_)];
                for (int i = 0; i < input_; ++i) {
                    gwi_r[i] += gr * xt[i];
                    gwi_z[i] += gz * xt[i];
                    gwi_n[i] += gn * xt[i];
                    gxt[i] += wi_r[i] * gr + wi_z[i] * gz + wi_n[i] * gn;
                }
                double* gwh_r = &w_hh.grad.v[j * H];
                double* gwh_z = &w_hh.grad.v[(H + j) * H];
                double* gwh_n = &w_hh.grad.v[(2 * H + j) * H];
                const double* wh_r = &w_hh.value.v[j * H];
                const double* wh_z = &w_hh.value.v[(H + j) * H];
                const double* wh_n = &w_hh.value.v[(2 * H + j) * H];
                for (std::size_t i = 0; i < H; ++i) {
                    gwh_r[i] += gr * hp[i];
                    gwh_z[i] += gz * hp[i];
                    gwh_n[i] += gnr * hp[i];
                    cb[i] += wh_r[i] * gr + wh_z[i] * gz + wh_n[i] * gnr;
                }
            }
        }
    }
    return gx;
}

std::vector<Parameter*> GruLayer::parameters() { return {&w_ih, &w_hh, &b_ih, &b_hh}; }

// --------------------------------------------------------------- GruStack

GruStack::GruStack(std::string name, int input, int hidden, int layers, double dropout, Rng& rng) {
    if (layers < 1) throw ConfigError("gru '" + name + "': needs at least one layer");
    for (int l = 0; l < layers; ++l) {
        const int in = l == 0 ? input : hidden;
        layers_.push_back(
            std::make_unique<GruLayer>(name + ".l" + std::to_string(l), in, hidden, rng));
        if (l + 1 < layers)
            dropouts_.push_back(std::make_unique<Dropout>(dropout, rng.next_u64()));
    }
}

Tensor GruStack::forward(const Tensor& x, const Tensor& mask) {
    Tensor h = layers_[0]->forward(x, mask);
    for (std::size_t l = 1; l < layers_.size(); ++l) {
        h = dropouts_[l - 1]->forward(h);
        h = layers_[l]->forward(h, mask);
    }
    return h;
}

Tensor GruStack::backward(const Tensor& grad_h) {
    Tensor g = grad_h;
    for (std::size_t l = layers_.size(); l-- > 1;) {
        g = layers_[l]->backward(g);
        g = dropouts_[l - 1]->backward(g);
    }
    return layers_[0]->backward(g);
}

std::vector<Parameter*> GruStack::parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_)
        for (Parameter* p : l->parameters()) out.push_back(p);
    return out;
}

void GruStack::set_training(bool on) {
    for (auto& d : dropouts_) d->set_training(on);
}

int GruStack::hidden_size() const { return layers_.back()->hidden_size(); }

// ------------------------------------------------------------------- loss

BceResult bce_with_logits(const Tensor& logits, const Tensor& labels, const Tensor& mask,
                          double pos_weight) {
    if (logits.numel() != labels.numel() || logits.numel() != mask.numel())
        throw InternalError("bce_with_logits: logits " + logits.shape_str() + ", labels " +
                            labels.shape_str() + ", mask " + mask.shape_str() +
                            " differ in element count");
    BceResult res;
    res.grad_logits = Tensor::zeros(logits.shape);
    for (std::size_t i = 0; i < mask.numel(); ++i)
        if (mask[i] != 0.0) ++res.valid;
    if (res.valid == 0) {
        std::cerr << "warning: bce_with_logits over an all-masked batch; loss defined as 0\n";
        return res;
    }
    const double inv = 1.0 / static_cast<double>(res.valid);
    double total = 0;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        if (mask[i] == 0.0) continue;
        const double x = logits[i], y = labels[i];
        total += pos_weight * y * softplus(-x) + (1.0 - y) * softplus(x);
        const double s = sigmoid(x);
        res.grad_logits[i] = (pos_weight * y * (s - 1.0) + (1.0 - y) * s) * inv;
    }
    res.loss = total * inv;
    return res;
}

// ------------------------------------------------------------------ AdamW

AdamW::AdamW(std::vector<Parameter*> params, const TrainConfig& config)
    : params_(std::move(params)), cfg_(config) {
    cfg_.validate();
}

double global_grad_norm(std::span<Parameter* const> params) {
    double sq = 0;
    for (const Parameter* p : params)
        for (const double g : p->grad.v) sq += g * g;
    return std::sqrt(sq);
}

double AdamW::clip_gradients() {
    for (const Parameter* p : params_)
        for (const double g : p->grad.v)
            if (!std::isfinite(g))
                throw TrainError("non-finite gradient in parameter '" + p->name + "'");
    const double norm = global_grad_norm(params_);
    if (norm > cfg_.clip_norm) {
        const double scale = cfg_.clip_norm / norm;
        for (Parameter* p : params_)
            for (double& g : p->grad.v) g *= scale;
    }
    return norm;
}

void AdamW::step() {
    clip_gradients();
    for (Parameter* p : params_) {
        if (p->m.numel() != p->value.numel()) {
            p->m = Tensor::zeros(p->value.shape);
            p->v = Tensor::zeros(p->value.shape);
        }
        p->step += 1;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(p->step));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(p->step));
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double g = p->grad[i];
            p->m[i] = cfg_.beta1 * p->m[i] + (1.0 - cfg_.beta1) * g;
            p->v[i] = cfg_.beta2 * p->v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = p->m[i] / bc1;
            const double vhat = p->v[i] / bc2;
            // decoupled decay, independent of the adaptive step
            p->value[i] -= cfg_.lr * cfg_.weight_decay * p->value[i];
            p->value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            if (!std::isfinite(p->value[i]))
                throw TrainError("non-finite value in parameter '" + p->name +
                                 "' after optimizer step");
        }
    }
}

void AdamW::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

// -------------------------------------------------------------- gradcheck

GradCheckResult check_gradients(const std::function<double()>& loss,
                                std::span<Parameter* const> params, double step) {
    GradCheckResult res;
    for (Parameter* p : params) {
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + step;
            const double up = loss();
            p->value[i] = saved - step;
            const double down = loss();
            p->value[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double an = p->grad[i];
            const double diff = std::abs(fd - an);
            const double rel = diff < 1e-10 ? 0.0 : diff / std::max(std::abs(fd), std::abs(an));
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

// ------------------------------------------------------------ checkpoints

void save_checkpoint(const std::string& path, std::span<Parameter* const> params,
                     std::uint64_t config_hash, std::uint64_t seed) {
    std::ofstream bin(path, std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("cannot write checkpoint '" + path + "'");
    std::ofstream manifest(path + ".txt", std::ios::trunc);
    if (!manifest) throw IoError("cannot write checkpoint manifest '" + path + ".txt'");
    manifest << "config_hash " << std::hex << config_hash << std::dec << "\n";
    manifest << "seed " << seed << "\n";
    std::uint64_t offset = 0;  // in float32 slots
    for (const Parameter* p : params) {
        manifest << p->name << " ";
        for (std::size_t i = 0; i < p->value.shape.size(); ++i)
            manifest << (i ? "x" : "") << p->value.shape[i];
        manifest << " " << offset << "\n";
        for (const double x : p->value.v) {
            const float f = static_cast<float>(x);
            bin.write(reinterpret_cast<const char*>(&f), sizeof f);
        }
        offset += p->value.numel();
    }
    if (!bin || !manifest) throw IoError("short write to checkpoint '" + path + "'");
}

void load_checkpoint(const std::string& path, std::span<Parameter*> params) {
    std::ifstream manifest(path + ".txt");
    if (!manifest) throw IoError("cannot read checkpoint manifest '" + path + ".txt'");
    std::string line;
    std::getline(manifest, line);  // config_hash
    std::getline(manifest, line);  // seed
    for (Parameter* p : params) {
        if (!std::getline(manifest, line))
            throw ParseError("checkpoint manifest '" + path + ".txt': missing entry for '" +
                             p->name + "'");
        std::istringstream ls(line);
        std::string name, shape;
        std::uint64_t offset = 0;
        ls >> name >> shape >> offset;
        std::string want;
        for (std::size_t i = 0; i < p->value.shape.size(); ++i)
            want += (i ? "x" : "") + std::to_string(p->value.shape[i]);
        if (name != p->name || shape != want)
            throw ParseError("checkpoint manifest '" + path + ".txt': expected '" + p->name +
                             " " + want + "', found '" + name + " " + shape + "'");
    }
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw IoError("cannot read checkpoint '" + path + "'");
    for (Parameter* p : params) {
        for (double& x : p->value.v) {
            float f = 0;
            bin.read(reinterpret_cast<char*>(&f), sizeof f);
            if (!bin) throw ParseError("checkpoint '" + path + "' is truncated");
            x = static_cast<double>(f);
        }
    }
}

std::uint64_t checkpoint_hash(const std::string& path) {
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw IoError("cannot read checkpoint '" + path + "'");
    std::uint64_t h = 0xcbf29ce484222325ull;
    char c;
    while (bin.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace ams::nn
