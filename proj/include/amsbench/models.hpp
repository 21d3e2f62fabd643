#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "amsbench/courses.hpp"
#include "amsbench/features.hpp"
#include "amsbench/neural.hpp"

namespace ams {

enum class ModelFamily { logreg, mlp, gru };
enum class TaskMode { stl, mtl_hard, mtl_uncertainty, mtl_mmoe_pcgrad };
enum class Resolution { daily, hourly_fused };

std::string_view family_name(ModelFamily f);
std::string_view mode_name(TaskMode m);
std::string_view resolution_name(Resolution r);
ModelFamily parse_family(std::string_view s);      ///< throws ConfigError
TaskMode parse_mode(std::string_view s);           ///< throws ConfigError
Resolution parse_resolution(std::string_view s);   ///< throws ConfigError

/// The co-occurring stewardship decisions shared by multi-task runs;
/// IV-to-oral stays single-task because it is the odd one out clinically.
std::vector<Target> mtl_default_targets();

struct GridShape {
    int bins = 0;
    int series = 0;
};

struct ModelSpec {
    ModelFamily family = ModelFamily::logreg;
    Resolution resolution = Resolution::daily;
    TaskMode mode = TaskMode::stl;
    std::vector<Target> targets = {Target::short_course};

    int mlp_hidden = 64;

    int gru_hidden = 128;
    int gru_layers = 2;
    double gru_dropout = 0.2;
    int max_seq_len = 512;

    // hourly-event encoder: per-bin projection, two convolutions, mean
    // pooling over bins, then a linear map to the embedding width
    int encoder_proj = 32;
    int encoder_conv1 = 32;
    int encoder_conv2 = 64;
    int encoder_kernel = 3;
    int encoder_embed = 64;

    int mmoe_experts = 4;
    int mmoe_expert_hidden = 32;

    nn::TrainConfig train;

    /// Throws ConfigError: tabular families are single-task daily models;
    /// MTL modes and the 1h-fused resolution require the gru family.
    void validate() const;
    /// Stable content hash of every field, for run manifests and resume.
    std::uint64_t config_hash() const;
};

// ------------------------------------------------------- MTL primitives

/// Unweighted sum of per-task losses.
double mtl_loss_hard(std::span<const double> task_losses);

/// Homoscedastic-uncertainty combination: sum of exp(-s_t) * L_t + s_t.
/// When grad_s is non-empty it receives d total / d s_t.
double mtl_loss_uncertainty(std::span<const double> task_losses, std::span<const double> s,
                            std::span<double> grad_s = {});

/// Running record of projection activity, for the non-conflict invariant:
/// right after each applied projection, the pair's inner product must be
/// non-negative up to rounding.
struct PcgradStats {
    std::int64_t steps = 0;        ///< pcgrad calls observed
    std::int64_t projections = 0;  ///< conflicting pairs projected
    double min_post_projection_dot = std::numeric_limits<double>::infinity();
};

/// Gradient surgery: each task's gradient is projected off every other
/// task's (original) gradient it conflicts with, visiting tasks in a
/// seeded random order; zero-norm opponents are skipped. Returns the
/// per-task projected gradients; the combined update is their sum.
std::vector<std::vector<double>> pcgrad_project(std::vector<std::vector<double>> grads, Rng& rng,
                                                PcgradStats* stats = nullptr);

/// Sum of pcgrad_project results.
std::vector<double> pcgrad_combine(std::vector<std::vector<double>> grads, Rng& rng,
                                   PcgradStats* stats = nullptr);

/// Hourly-grid encoder: a per-bin linear projection (width-1 convolution),
/// two same-padded convolutions with ReLU, global mean pooling over bins,
/// then a linear map to the embedding. Values and presence indicators enter
/// as stacked channels, so the input has 2*series channels.
class EventGridEncoder {
public:
    EventGridEncoder(const std::string& name, int series, const ModelSpec& spec, Rng& rng);

    /// grids: (N, 2*series, bins) -> embeddings (N, embed).
    nn::Tensor forward(const nn::Tensor& grids);
    nn::Tensor backward(const nn::Tensor& grad_embed);
    std::vector<nn::Parameter*> parameters();
    int embed_dim() const { return embed_.out_features(); }

private:
    nn::Conv1d proj_, conv1_, conv2_;
    nn::Relu relu1_, relu2_;
    nn::Linear embed_;
    int pool_len_ = 0;
};

/// Mixture-of-experts block with task-specific softmax gates over shared
/// single-hidden-layer experts; expert output width equals the input width.
class MmoeBlock {
public:
    MmoeBlock(const std::string& name, int input, int experts, int expert_hidden, int tasks,
              Rng& rng);

    /// x: (N, input) -> one (N, input) representation per task.
    std::vector<nn::Tensor> forward(const nn::Tensor& x);
    /// Backward for a single task's representation gradient; accumulates
    /// expert and gate gradients and returns this task's grad wrt x.
    nn::Tensor backward(int task, const nn::Tensor& grad_task);

    std::vector<nn::Parameter*> shared_parameters();          ///< experts
    std::vector<nn::Parameter*> task_parameters(int task);    ///< that gate
    int tasks() const { return static_cast<int>(gates_.size()); }

private:
    struct Expert {
        std::unique_ptr<nn::Linear> in, out;
        nn::Relu relu;
        nn::Tensor output;  // cached (N, input)
    };
    std::vector<Expert> experts_;
    std::vector<std::unique_ptr<nn::Linear>> gates_;
    std::vector<nn::Tensor> gate_probs_;  // per task (N, experts)
    nn::Tensor x_;
};

// ----------------------------------------------------------- trained API

/// A scored patient-day: probability per target, NaN for targets the
/// model does not predict. Row order follows the predict() input.
using DayProbs = std::array<double, kNumTargets>;

class Model {
public:
    explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}
    virtual ~Model() = default;

    const ModelSpec& spec() const { return spec_; }
    virtual std::vector<DayProbs> predict(std::span<const PatientDay> rows) = 0;
    virtual std::vector<nn::Parameter*> parameters() = 0;

    void save(const std::string& path, std::uint64_t seed);
    void load(const std::string& path);

protected:
    ModelSpec spec_;
};

/// Seeded construction; grid describes the hourly grids for 1h-fused
/// specs (ignored otherwise).
std::unique_ptr<Model> make_model(const ModelSpec& spec, const FeatureSchema& schema,
                                  GridShape grid = {});

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
};

struct TrainResult {
    std::unique_ptr<Model> model;
    std::vector<EpochStats> curve;
    int best_epoch = -1;
    std::array<double, kNumTargets> pos_weight{};  ///< as used, NaN if unused
    PcgradStats pcgrad;                            ///< populated by pcgrad runs
};

/// (negative count / positive count) over training rows, capped; tasks
/// with no positives fall back to the cap.
double pos_weight_for(std::span<const PatientDay> rows, Target target, double cap);

/// Trains per spec: L-BFGS for logreg, AdamW with early stopping on
/// validation loss for the neural families. Deterministic for a fixed
/// seed. Throws TrainError on numerical failure.
TrainResult train_model(const ModelSpec& spec, const FeatureSchema& schema,
                        std::span<const PatientDay> train_rows,
                        std::span<const PatientDay> val_rows, GridShape grid = {});

}  // namespace ams
