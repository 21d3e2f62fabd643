#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "amsbench/rng.hpp"

namespace ams::nn {

/// Dense row-major value buffer. Training math runs in 64-bit throughout;
/// checkpoints are exported as 32-bit floats.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::vector<int> shape, std::vector<double> values);
    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);

    std::size_t numel() const { return v.size(); }
    int dim(std::size_t i) const { return shape[i]; }
    double& operator[](std::size_t i) { return v[i]; }
    double operator[](std::size_t i) const { return v[i]; }
    std::string shape_str() const;

    bool operator==(const Tensor&) const = default;
};

/// Throws InternalError naming both shapes when they differ.
void require_shape(const Tensor& t, const std::vector<int>& expected, std::string_view what);

/// Trainable value with its gradient accumulator and optimizer state.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;     ///< accumulated; callers zero it between steps
    Tensor m, v;     ///< AdamW moment estimates, sized on first use
    std::int64_t step = 0;

    Parameter() = default;
    Parameter(std::string name, Tensor value);
    void zero_grad();
};

/// Shared knobs for every gradient-trained model.
struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    int batch_size = 32;
    int max_epochs = 50;
    int patience = 5;          ///< early stopping on validation loss
    double clip_norm = 2.0;    ///< global gradient-norm ceiling
    std::uint64_t seed = 0;
    double pos_weight_cap = 100.0;
    // AdamW moments; conventional defaults, surfaced here for transparency
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;  ///< throws ConfigError
};

// ---------------------------------------------------------------- layers

/// y = x W + b over the last axis; leading axes are left alone.
class Linear {
public:
    /// Uniform(-k, k) init with k = 1/sqrt(in), like common DL defaults.
    Linear(std::string name, int in, int out, Rng& rng);

    Tensor forward(const Tensor& x);
    /// Accumulates parameter grads from the cached input; returns grad wrt x.
    Tensor backward(const Tensor& grad_y);
    std::vector<Parameter*> parameters();

    int in_features() const { return in_; }
    int out_features() const { return out_; }

    Parameter w;  ///< (in, out)
    Parameter b;  ///< (out)

private:
    int in_ = 0, out_ = 0;
    Tensor x_;  // cached forward input
};

/// Stride-1, zero-padded "same" 1-D convolution over (N, C, L).
class Conv1d {
public:
    Conv1d(std::string name, int in_channels, int out_channels, int kernel, Rng& rng);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_y);
    std::vector<Parameter*> parameters();

    Parameter w;  ///< (out, in, kernel)
    Parameter b;  ///< (out)

private:
    int in_ch_ = 0, out_ch_ = 0, kernel_ = 0;
    Tensor x_;
};

/// Normalization over the last axis with learned affine parameters.
class LayerNorm {
public:
    LayerNorm(std::string name, int features, double eps = 1e-5);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_y);
    std::vector<Parameter*> parameters();

    Parameter gamma;  ///< (features), ones
    Parameter beta;   ///< (features), zeros

private:
    int features_ = 0;
    double eps_;
    Tensor x_hat_;        // normalized input
    std::vector<double> inv_std_;  // per row
};

/// Elementwise max(x, 0).
class Relu {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_y);

private:
    std::vector<bool> active_;
};

/// Inverted dropout: scales by 1/(1-p) in training, identity in eval.
/// Masks are drawn from the layer's own stream, one batch per forward call,
/// so a fixed construction seed reproduces training exactly.
class Dropout {
public:
    Dropout(double p, std::uint64_t seed);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_y);
    void set_training(bool on) { training_ = on; }
    bool training() const { return training_; }

private:
    double p_;
    bool training_ = true;
    Rng rng_;
    std::vector<double> keep_;  // last mask, already scaled
};

/// One unidirectional GRU layer in the reset/update/candidate formulation:
///   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
///   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
/// Masked steps propagate the previous hidden state unchanged.
class GruLayer {
public:
    GruLayer(std::string name, int input, int hidden, Rng& rng);

    /// x: (B, T, input), mask: (B, T) -> hiddens (B, T, hidden), h_0 = 0.
    Tensor forward(const Tensor& x, const Tensor& mask);
    /// grad_h: (B, T, hidden) -> grad wrt x, accumulating parameter grads.
    Tensor backward(const Tensor& grad_h);
    std::vector<Parameter*> parameters();

    int hidden_size() const { return hidden_; }

    Parameter w_ih;  ///< (3*hidden, input), gate order r, z, n
    Parameter w_hh;  ///< (3*hidden, hidden)
    Parameter b_ih;  ///< (3*hidden)
    Parameter b_hh;  ///< (3*hidden)

private:
    int input_ = 0, hidden_ = 0;
    Tensor x_, mask_;
    // per-step caches, each (B, hidden)
    std::vector<std::vector<double>> r_, z_, n_, ghn_, h_prev_;
};

/// Stacked GRU with inter-layer dropout (none after the last layer).
class GruStack {
public:
    GruStack(std::string name, int input, int hidden, int layers, double dropout, Rng& rng);

    Tensor forward(const Tensor& x, const Tensor& mask);
    Tensor backward(const Tensor& grad_h);
    std::vector<Parameter*> parameters();
    void set_training(bool on);

    int hidden_size() const;

private:
    std::vector<std::unique_ptr<GruLayer>> layers_;
    std::vector<std::unique_ptr<Dropout>> dropouts_;
};

// ------------------------------------------------------------- functions

double sigmoid(double x);
double softplus(double x);  ///< log(1 + e^x), overflow-safe

// ----------------------------------------------------------------- loss

struct BceResult {
    double loss = 0.0;        ///< mean over valid steps; 0 when none are valid
    Tensor grad_logits;       ///< includes the 1/valid normalization
    std::int64_t valid = 0;   ///< number of unmasked steps
};

/// Numerically stable binary cross-entropy with logits:
///   l = pos_weight * y * softplus(-x) + (1 - y) * softplus(x)
/// averaged over steps with mask != 0. An all-masked batch yields loss 0
/// (with a stderr warning) rather than NaN.
BceResult bce_with_logits(const Tensor& logits, const Tensor& labels, const Tensor& mask,
                          double pos_weight = 1.0);

// ------------------------------------------------------------- optimizer

/// AdamW with decoupled weight decay. step() first clips the global
/// gradient norm to config.clip_norm, then applies bias-corrected updates.
class AdamW {
public:
    AdamW(std::vector<Parameter*> params, const TrainConfig& config);

    /// Scales all gradients so their joint L2 norm is at most clip_norm.
    /// Returns the pre-clip norm. Throws TrainError on non-finite gradients,
    /// naming the offending parameter.
    double clip_gradients();
    void step();
    void zero_grad();

    std::span<Parameter* const> params() const { return params_; }

private:
    std::vector<Parameter*> params_;
    TrainConfig cfg_;
};

/// Global L2 norm over a set of gradients.
double global_grad_norm(std::span<Parameter* const> params);

// ------------------------------------------------------------ gradcheck

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst;  ///< "name[flat_index]" of the worst coordinate
};

/// Central finite differences against the analytic gradients already stored
/// in each parameter's grad. `loss` must rerun the forward pass and return
/// the scalar; parameters are restored exactly after probing.
GradCheckResult check_gradients(const std::function<double()>& loss,
                                std::span<Parameter* const> params, double step = 1e-5);

// ----------------------------------------------------------- checkpoints

/// Writes `path` (flat float32 values, parameter order) and `path + ".txt"`
/// (one "name shape offset" line per parameter, after config_hash and seed
/// header lines).
void save_checkpoint(const std::string& path, std::span<Parameter* const> params,
                     std::uint64_t config_hash, std::uint64_t seed);

/// Loads values back into matching parameters. Throws ParseError when the
/// manifest disagrees with the given parameter names or shapes.
void load_checkpoint(const std::string& path, std::span<Parameter*> params);

/// FNV-1a over the checkpoint's binary payload.
std::uint64_t checkpoint_hash(const std::string& path);

}  // namespace ams::nn
