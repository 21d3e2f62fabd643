#include "amsbench/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "amsbench/csv.hpp"
#include "amsbench/errors.hpp"

namespace ams {

using nn::Parameter;
using nn::Tensor;

std::string_view family_name(ModelFamily f) {
    switch (f) {
        case ModelFamily::logreg: return "logreg";
        case ModelFamily::mlp: return "mlp";
        case ModelFamily::gru: return "gru";
    }
    throw InternalError("invalid model family");
}

std::string_view mode_name(TaskMode m) {
    switch (m) {
        case TaskMode::stl: return "stl";
        case TaskMode::mtl_hard: return "mtl_hard";
        case TaskMode::mtl_uncertainty: return "mtl_uncertainty";
        case TaskMode::mtl_mmoe_pcgrad: return "mtl_mmoe_pcgrad";
    }
    throw InternalError("invalid task mode");
}

std::string_view resolution_name(Resolution r) {
    switch (r) {
        case Resolution::daily: return "daily";
        case Resolution::hourly_fused: return "hourly_fused";
    }
    throw InternalError("invalid resolution");
}

ModelFamily parse_family(std::string_view s) {
    if (s == "logreg") return ModelFamily::logreg;
    if (s == "mlp") return ModelFamily::mlp;
    if (s == "gru") return ModelFamily::gru;
    throw ConfigError("unknown model family '" + std::string(s) + "'");
}

TaskMode parse_mode(std::string_view s) {
    if (s == "stl") return TaskMode::stl;
    if (s == "mtl_hard") return TaskMode::mtl_hard;
    if (s == "mtl_uncertainty") return TaskMode::mtl_uncertainty;
    if (s == "mtl_mmoe_pcgrad") return TaskMode::mtl_mmoe_pcgrad;
    throw ConfigError("unknown task mode '" + std::string(s) + "'");
}

Resolution parse_resolution(std::string_view s) {
    if (s == "daily") return Resolution::daily;
    if (s == "hourly_fused") return Resolution::hourly_fused;
    throw ConfigError("unknown resolution '" + std::string(s) + "'");
}

std::vector<Target> mtl_default_targets() {
    return {Target::deescalation, Target::discontinuation, Target::short_course};
}

void ModelSpec::validate() const {
    train.validate();
    if (targets.empty()) throw ConfigError("model.targets must not be empty");
    for (std::size_t i = 0; i < targets.size(); ++i)
        for (std::size_t j = i + 1; j < targets.size(); ++j)
            if (targets[i] == targets[j]) throw ConfigError("model.targets has duplicates");
    const bool tabular = family != ModelFamily::gru;
    if (mode != TaskMode::stl && tabular)
        throw ConfigError("multi-task modes require the gru family");
    if (resolution == Resolution::hourly_fused && tabular)
        throw ConfigError("1h-fused resolution requires the gru family");
    if (mode == TaskMode::stl && targets.size() != 1)
        throw ConfigError("single-task models take exactly one target");
    if (mlp_hidden < 1 || gru_hidden < 1 || gru_layers < 1 || max_seq_len < 1)
        throw ConfigError("model sizes must be >= 1");
    if (gru_dropout < 0 || gru_dropout >= 1)
        throw ConfigError("model.gru_dropout must be in [0, 1)");
    if (encoder_proj < 1 || encoder_conv1 < 1 || encoder_conv2 < 1 || encoder_kernel < 1 ||
        encoder_embed < 1)
        throw ConfigError("encoder sizes must be >= 1");
    if (mmoe_experts < 1 || mmoe_expert_hidden < 1)
        throw ConfigError("mmoe sizes must be >= 1");
}

std::uint64_t ModelSpec::config_hash() const {
    std::ostringstream s;
    s << "family=" << family_name(family) << "|res=" << resolution_name(resolution)
      << "|mode=" << mode_name(mode) << "|targets=";
    for (const Target t : targets) s << target_name(t) << ",";
    s << "|mlp=" << mlp_hidden << "|gru=" << gru_hidden << "x" << gru_layers << "x"
      << format_double(gru_dropout) << "|maxseq=" << max_seq_len << "|enc=" << encoder_proj << ","
      << encoder_conv1 << "," << encoder_conv2 << "," << encoder_kernel << "," << encoder_embed
      << "|mmoe=" << mmoe_experts << "x" << mmoe_expert_hidden
      << "|lr=" << format_double(train.lr) << "|wd=" << format_double(train.weight_decay)
      << "|bs=" << train.batch_size << "|ep=" << train.max_epochs << "|pat=" << train.patience
      << "|clip=" << format_double(train.clip_norm) << "|seed=" << train.seed
      << "|cap=" << format_double(train.pos_weight_cap) << "|b1=" << format_double(train.beta1)
      << "|b2=" << format_double(train.beta2) << "|eps=" << format_double(train.eps);
    return fnv1a(s.str());
}

// --------------------------------------------------------- MTL primitives

double mtl_loss_hard(std::span<const double> task_losses) {
    double total = 0;
    for (const double l : task_losses) total += l;
    return total;
}

double mtl_loss_uncertainty(std::span<const double> task_losses, std::span<const double> s,
                            std::span<double> grad_s) {
    if (task_losses.size() != s.size())
        throw InternalError("uncertainty loss: " + std::to_string(task_losses.size()) +
                            " losses vs " + std::to_string(s.size()) + " s parameters");
    if (!grad_s.empty() && grad_s.size() != s.size())
        throw InternalError("uncertainty loss: grad_s size mismatch");
    double total = 0;
    for (std::size_t t = 0; t < s.size(); ++t) {
        const double w = std::exp(-s[t]);
        total += w * task_losses[t] + s[t];
        if (!grad_s.empty()) grad_s[t] = -w * task_losses[t] + 1.0;
    }
    return total;
}

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
}

}  // namespace

std::vector<std::vector<double>> pcgrad_project(std::vector<std::vector<double>> grads, Rng& rng,
                                                PcgradStats* stats) {
    const std::size_t n = grads.size();
    for (std::size_t i = 1; i < n; ++i)
        if (grads[i].size() != grads[0].size())
            throw InternalError("pcgrad: task gradients differ in size");
    const std::vector<std::vector<double>> original = grads;
    std::vector<double> norm_sq(n, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (const double g : original[j]) norm_sq[j] += g * g;
    if (stats) ++stats->steps;

    std::vector<std::size_t> outer(n);
    for (std::size_t i = 0; i < n; ++i) outer[i] = i;
    shuffle_indices(outer, rng);
    for (const std::size_t i : outer) {
        std::vector<std::size_t> opponents;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) opponents.push_back(j);
        shuffle_indices(opponents, rng);
        for (const std::size_t j : opponents) {
            if (norm_sq[j] == 0.0) continue;  // nothing to conflict with
            double dot = 0;
            for (std::size_t k = 0; k < grads[i].size(); ++k) dot += grads[i][k] * original[j][k];
            if (dot >= 0) continue;
            const double scale = dot / norm_sq[j];
            for (std::size_t k = 0; k < grads[i].size(); ++k)
                grads[i][k] -= scale * original[j][k];
            if (stats) {
                double post = 0;
                for (std::size_t k = 0; k < grads[i].size(); ++k)
                    post += grads[i][k] * original[j][k];
                ++stats->projections;
                stats->min_post_projection_dot = std::min(stats->min_post_projection_dot, post);
            }
        }
    }
    return grads;
}

std::vector<double> pcgrad_combine(std::vector<std::vector<double>> grads, Rng& rng,
                                   PcgradStats* stats) {
    if (grads.empty()) return {};
    auto projected = pcgrad_project(std::move(grads), rng, stats);
    std::vector<double> sum(projected[0].size(), 0.0);
    for (const auto& g : projected)
        for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += g[k];
    return sum;
}

// ------------------------------------------------------ EventGridEncoder

EventGridEncoder::EventGridEncoder(const std::string& name, int series, const ModelSpec& spec,
                                   Rng& rng)
    : proj_(name + ".proj", 2 * series, spec.encoder_proj, 1, rng),
      conv1_(name + ".conv1", spec.encoder_proj, spec.encoder_conv1, spec.encoder_kernel, rng),
      conv2_(name + ".conv2", spec.encoder_conv1, spec.encoder_conv2, spec.encoder_kernel, rng),
      embed_(name + ".embed", spec.encoder_conv2, spec.encoder_embed, rng) {
    if (series < 1) throw ConfigError("event grid encoder needs >= 1 series");
}

Tensor EventGridEncoder::forward(const Tensor& grids) {
    Tensor h = proj_.forward(grids);
    h = relu1_.forward(conv1_.forward(h));
    h = relu2_.forward(conv2_.forward(h));
    const int N = h.shape[0], C = h.shape[1], L = h.shape[2];
    pool_len_ = L;
    Tensor pooled = Tensor::zeros({N, C});  // global mean over bins
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* src = &h.v[(static_cast<std::size_t>(n) * C + c) * L];
            double acc = 0;
            for (int l = 0; l < L; ++l) acc += src[l];
            pooled[static_cast<std::size_t>(n) * C + c] = acc / L;
        }
    return embed_.forward(pooled);
}

Tensor EventGridEncoder::backward(const Tensor& grad_embed) {
    const Tensor gpool = embed_.backward(grad_embed);
    const int N = gpool.shape[0], C = gpool.shape[1], L = pool_len_;
    Tensor gh = Tensor::zeros({N, C, L});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double g = gpool[static_cast<std::size_t>(n) * C + c] / L;
            double* dst = &gh.v[(static_cast<std::size_t>(n) * C + c) * L];
            for (int l = 0; l < L; ++l) dst[l] = g;
        }
    return proj_.backward(conv1_.backward(relu1_.backward(conv2_.backward(relu2_.backward(gh)))));
}

std::vector<Parameter*> EventGridEncoder::parameters() {
    std::vector<Parameter*> out;
    for (auto* c : {&proj_, &conv1_, &conv2_})
        for (Parameter* p : c->parameters()) out.push_back(p);
    for (Parameter* p : embed_.parameters()) out.push_back(p);
    return out;
}

// -------------------------------------------------------------- MmoeBlock

MmoeBlock::MmoeBlock(const std::string& name, int input, int experts, int expert_hidden,
                     int tasks, Rng& rng) {
    if (experts < 1 || tasks < 1) throw ConfigError("mmoe needs >= 1 expert and task");
    for (int e = 0; e < experts; ++e) {
        Expert ex;
        const std::string base = name + ".expert" + std::to_string(e);
        ex.in = std::make_unique<nn::Linear>(base + ".in", input, expert_hidden, rng);
        ex.out = std::make_unique<nn::Linear>(base + ".out", expert_hidden, input, rng);
        experts_.push_back(std::move(ex));
    }
    for (int t = 0; t < tasks; ++t)
        gates_.push_back(std::make_unique<nn::Linear>(name + ".gate" + std::to_string(t), input,
                                                      experts, rng));
    gate_probs_.resize(static_cast<std::size_t>(tasks));
}

std::vector<Tensor> MmoeBlock::forward(const Tensor& x) {
    x_ = x;
    const int input = gates_[0]->in_features();
    const std::size_t rows = x.numel() / static_cast<std::size_t>(input);
    const std::size_t E = experts_.size();
    for (auto& ex : experts_) ex.output = ex.out->forward(ex.relu.forward(ex.in->forward(x)));

    std::vector<Tensor> reps;
    for (std::size_t t = 0; t < gates_.size(); ++t) {
        const Tensor scores = gates_[t]->forward(x);  // (rows, E)
        Tensor probs = Tensor::zeros(scores.shape);
        for (std::size_t r = 0; r < rows; ++r) {
            double mx = -1e300;
            for (std::size_t e = 0; e < E; ++e) mx = std::max(mx, scores[r * E + e]);
            double z = 0;
            for (std::size_t e = 0; e < E; ++e) z += std::exp(scores[r * E + e] - mx);
            for (std::size_t e = 0; e < E; ++e)
                probs[r * E + e] = std::exp(scores[r * E + e] - mx) / z;
        }
        gate_probs_[t] = probs;
        Tensor rep = Tensor::zeros(x.shape);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t e = 0; e < E; ++e) {
                const double p = probs[r * E + e];
                const double* eo = &experts_[e].output.v[r * static_cast<std::size_t>(input)];
                double* out = &rep.v[r * static_cast<std::size_t>(input)];
                for (int f = 0; f < input; ++f) out[static_cast<std::size_t>(f)] += p * eo[f];
            }
        reps.push_back(std::move(rep));
    }
    return reps;
}

Tensor MmoeBlock::backward(int task, const Tensor& grad_task) {
    const int input = gates_[0]->in_features();
    const std::size_t rows = x_.numel() / static_cast<std::size_t>(input);
    const std::size_t E = experts_.size();
    const Tensor& probs = gate_probs_[static_cast<std::size_t>(task)];
    if (probs.numel() != rows * E) throw InternalError("mmoe backward before forward");

    // gate scores: softmax backward from d rep / d gate prob
    Tensor dscore = Tensor::zeros({static_cast<int>(rows), static_cast<int>(E)});
    Tensor gx = Tensor::zeros(x_.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* g = &grad_task.v[r * static_cast<std::size_t>(input)];
        double sum_dp_p = 0;
        for (std::size_t e = 0; e < E; ++e) {
            const double* eo = &experts_[e].output.v[r * static_cast<std::size_t>(input)];
            double dp = 0;
            for (int f = 0; f < input; ++f) dp += g[f] * eo[f];
            dscore[r * E + e] = dp;  // temporarily d rep / d prob
            sum_dp_p += dp * probs[r * E + e];
        }
        for (std::size_t e = 0; e < E; ++e)
            dscore[r * E + e] = probs[r * E + e] * (dscore[r * E + e] - sum_dp_p);
    }
    gx = gates_[static_cast<std::size_t>(task)]->backward(dscore);

    // experts: d rep / d expert_e = prob_e * grad
    for (std::size_t e = 0; e < E; ++e) {
        Tensor ge = Tensor::zeros(x_.shape);
        for (std::size_t r = 0; r < rows; ++r) {
            const double p = probs[r * E + e];
            const double* g = &grad_task.v[r * static_cast<std::size_t>(input)];
            double* o = &ge.v[r * static_cast<std::size_t>(input)];
            for (int f = 0; f < input; ++f) o[static_cast<std::size_t>(f)] = p * g[f];
        }
        auto& ex = experts_[e];
        const Tensor gin = ex.in->backward(ex.relu.backward(ex.out->backward(ge)));
        for (std::size_t k = 0; k < gx.numel(); ++k) gx[k] += gin[k];
    }
    return gx;
}

std::vector<Parameter*> MmoeBlock::shared_parameters() {
    std::vector<Parameter*> out;
    for (auto& ex : experts_) {
        for (Parameter* p : ex.in->parameters()) out.push_back(p);
        for (Parameter* p : ex.out->parameters()) out.push_back(p);
    }
    return out;
}

std::vector<Parameter*> MmoeBlock::task_parameters(int task) {
    return gates_[static_cast<std::size_t>(task)]->parameters();
}

// ------------------------------------------------------------- utilities

namespace {

constexpr std::size_t kNoRow = static_cast<std::size_t>(-1);

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

/// Consecutive same-admission runs, truncated to max_len rows each.
std::vector<std::pair<std::size_t, int>> group_rows(std::span<const PatientDay> rows,
                                                    int max_len) {
    std::vector<std::pair<std::size_t, int>> groups;
    std::size_t i = 0;
    while (i < rows.size()) {
        std::size_t j = i + 1;
        while (j < rows.size() && rows[j].admission_id == rows[i].admission_id) ++j;
        groups.emplace_back(i, static_cast<int>(std::min<std::size_t>(
                                   j - i, static_cast<std::size_t>(max_len))));
        i = j;
    }
    return groups;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

void snapshot_values(std::span<Parameter* const> params, std::vector<Tensor>& out) {
    out.clear();
    for (const Parameter* p : params) out.push_back(p->value);
}

void restore_values(std::span<Parameter* const> params, const std::vector<Tensor>& saved) {
    for (std::size_t i = 0; i < saved.size(); ++i) params[i]->value = saved[i];
}

}  // namespace

double pos_weight_for(std::span<const PatientDay> rows, Target target, double cap) {
    std::int64_t pos = 0, neg = 0;
    for (const auto& r : rows)
        (r.labels[static_cast<std::size_t>(target)] ? pos : neg) += 1;
    if (pos == 0) return cap;  // degenerate split; weight is then unused anyway
    return std::min(cap, static_cast<double>(neg) / static_cast<double>(pos));
}

// ------------------------------------------------------------ LogregModel

namespace {

class LogregModel final : public Model {
public:
    LogregModel(ModelSpec spec, const FeatureSchema& schema)
        : Model(std::move(spec)),
          w("logreg.w", Tensor::zeros({static_cast<int>(schema.size())})),
          b("logreg.b", Tensor::zeros({1})) {}

    std::vector<DayProbs> predict(std::span<const PatientDay> rows) override {
        const std::size_t F = w.value.numel();
        std::vector<DayProbs> out(rows.size());
        const auto t = static_cast<std::size_t>(spec_.targets[0]);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out[i].fill(nan_value());
            double z = b.value[0];
            for (std::size_t f = 0; f < F; ++f) z += w.value[f] * rows[i].features[f];
            out[i][t] = nn::sigmoid(z);
        }
        return out;
    }

    std::vector<Parameter*> parameters() override { return {&w, &b}; }

    Parameter w, b;
};

/// Limited-memory BFGS with Armijo backtracking. `f` fills grad and
/// returns the objective. Stops when max|grad| <= tol.
struct LbfgsOutcome {
    int iterations = 0;
    double objective = 0;
    bool converged = false;
};

LbfgsOutcome lbfgs_minimize(
    std::vector<double>& theta,
    const std::function<double(const std::vector<double>&, std::vector<double>&)>& f,
    int max_iter, double tol, const std::function<void(int, double)>& on_iter) {
    const std::size_t n = theta.size();
    const int memory = 10;
    std::vector<std::vector<double>> s_hist, y_hist;
    std::vector<double> rho_hist;
    std::vector<double> grad(n), new_grad(n);
    double fx = f(theta, grad);
    LbfgsOutcome out;
    out.objective = fx;

    for (int iter = 0; iter < max_iter; ++iter) {
        double gmax = 0;
        for (const double g : grad) gmax = std::max(gmax, std::abs(g));
        if (gmax <= tol) {
            out.converged = true;
            break;
        }
        // two-loop recursion for the search direction
        std::vector<double> q = grad;
        const std::size_t m = s_hist.size();
        std::vector<double> alpha(m);
        for (std::size_t k = m; k-- > 0;) {
            double sq = 0;
            for (std::size_t i = 0; i < n; ++i) sq += s_hist[k][i] * q[i];
            alpha[k] = rho_hist[k] * sq;
            for (std::size_t i = 0; i < n; ++i) q[i] -= alpha[k] * y_hist[k][i];
        }
        if (m > 0) {
            double sy = 0, yy = 0;
            for (std::size_t i = 0; i < n; ++i) {
                sy += s_hist[m - 1][i] * y_hist[m - 1][i];
                yy += y_hist[m - 1][i] * y_hist[m - 1][i];
            }
            const double gamma = sy / yy;
            for (double& qi : q) qi *= gamma;
        }
        for (double& qi : q) qi = -qi;  // descent direction

        double g_dot_d = 0;
        for (std::size_t i = 0; i < n; ++i) g_dot_d += grad[i] * q[i];
        if (g_dot_d >= 0) {  // safeguard: fall back to steepest descent
            for (std::size_t i = 0; i < n; ++i) q[i] = -grad[i];
            g_dot_d = 0;
            for (std::size_t i = 0; i < n; ++i) g_dot_d += grad[i] * q[i];
        }

        // Armijo backtracking
        double step = 1.0;
        std::vector<double> trial(n);
        double new_fx = fx;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t i = 0; i < n; ++i) trial[i] = theta[i] + step * q[i];
            new_fx = f(trial, new_grad);
            if (new_fx <= fx + 1e-4 * step * g_dot_d) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // no further progress at machine precision

        std::vector<double> s_vec(n), y_vec(n);
        for (std::size_t i = 0; i < n; ++i) {
            s_vec[i] = trial[i] - theta[i];
            y_vec[i] = new_grad[i] - grad[i];
        }
        double sy = 0;
        for (std::size_t i = 0; i < n; ++i) sy += s_vec[i] * y_vec[i];
        if (sy > 1e-12) {  // keep the inverse-Hessian estimate positive definite
            s_hist.push_back(std::move(s_vec));
            y_hist.push_back(std::move(y_vec));
            rho_hist.push_back(1.0 / sy);
            if (s_hist.size() > static_cast<std::size_t>(memory)) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
                rho_hist.erase(rho_hist.begin());
            }
        }
        theta = trial;
        grad = new_grad;
        fx = new_fx;
        out.iterations = iter + 1;
        out.objective = fx;
        if (on_iter) on_iter(iter + 1, fx);
    }
    return out;
}

TrainResult train_logreg(const ModelSpec& spec, const FeatureSchema& schema,
                         std::span<const PatientDay> train_rows,
                         std::span<const PatientDay> val_rows) {
    for (const auto& r : train_rows)
        for (const double v : r.features)
            if (!std::isfinite(v)) throw TrainError("non-finite feature in training rows");
    auto model = std::make_unique<LogregModel>(spec, schema);
    const std::size_t F = schema.size();
    const std::size_t N = train_rows.size();
    if (N < 1) throw TrainError("logreg: empty training set");
    const auto target = static_cast<std::size_t>(spec.targets[0]);
    // mean logistic loss + (1 / (2 C N)) * ||theta||^2 with C = 1.0; the
    // intercept is penalized like any coefficient
    const double lambda = 1.0 / static_cast<double>(N);

    const auto objective = [&](const std::vector<double>& theta, std::vector<double>& grad) {
        grad.assign(F + 1, 0.0);
        double loss = 0;
        for (const auto& row : train_rows) {
            double z = theta[F];
            for (std::size_t f = 0; f < F; ++f) z += theta[f] * row.features[f];
            const double y = row.labels[target] ? 1.0 : 0.0;
            loss += y * nn::softplus(-z) + (1.0 - y) * nn::softplus(z);
            const double d = nn::sigmoid(z) - y;
            for (std::size_t f = 0; f < F; ++f) grad[f] += d * row.features[f];
            grad[F] += d;
        }
        const double inv = 1.0 / static_cast<double>(N);
        loss *= inv;
        double reg = 0;
        for (std::size_t i = 0; i <= F; ++i) {
            grad[i] = grad[i] * inv + lambda * theta[i];
            reg += theta[i] * theta[i];
        }
        return loss + 0.5 * lambda * reg;
    };

    const auto val_bce = [&](const std::vector<double>& theta) {
        if (val_rows.empty()) return nan_value();
        double loss = 0;
        for (const auto& row : val_rows) {
            double z = theta[F];
            for (std::size_t f = 0; f < F; ++f) z += theta[f] * row.features[f];
            const double y = row.labels[target] ? 1.0 : 0.0;
            loss += y * nn::softplus(-z) + (1.0 - y) * nn::softplus(z);
        }
        return loss / static_cast<double>(val_rows.size());
    };

    TrainResult res;
    std::vector<double> theta(F + 1, 0.0);
    lbfgs_minimize(theta, objective, 3000, 1e-6, [&](int it, double fx) {
        res.curve.push_back({it, fx, val_bce(theta)});
    });
    for (std::size_t f = 0; f < F; ++f) model->w.value[f] = theta[f];
    model->b.value[0] = theta[F];
    res.best_epoch = static_cast<int>(res.curve.size()) - 1;
    res.pos_weight.fill(nan_value());
    res.model = std::move(model);
    return res;
}

// --------------------------------------------------------------- MlpModel

class MlpModel final : public Model {
public:
    MlpModel(ModelSpec spec, const FeatureSchema& schema, Rng& rng)
        : Model(std::move(spec)),
          hidden("mlp.hidden", static_cast<int>(schema.size()), spec_.mlp_hidden, rng),
          out("mlp.out", spec_.mlp_hidden, 1, rng) {}

    Tensor forward(const Tensor& x) { return out.forward(relu.forward(hidden.forward(x))); }
    void backward(const Tensor& grad_logits) {
        hidden.backward(relu.backward(out.backward(grad_logits)));
    }

    std::vector<DayProbs> predict(std::span<const PatientDay> rows) override {
        const auto F = static_cast<int>(hidden.in_features());
        Tensor x = Tensor::zeros({static_cast<int>(rows.size()), F});
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (int f = 0; f < F; ++f)
                x[i * static_cast<std::size_t>(F) + static_cast<std::size_t>(f)] =
                    rows[i].features[static_cast<std::size_t>(f)];
        const Tensor logits = forward(x);
        std::vector<DayProbs> outp(rows.size());
        const auto t = static_cast<std::size_t>(spec_.targets[0]);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            outp[i].fill(nan_value());
            outp[i][t] = nn::sigmoid(logits[i]);
        }
        return outp;
    }

    std::vector<Parameter*> parameters() override {
        std::vector<Parameter*> p = hidden.parameters();
        for (Parameter* q : out.parameters()) p.push_back(q);
        return p;
    }

    nn::Linear hidden, out;
    nn::Relu relu;
};

TrainResult train_mlp(const ModelSpec& spec, const FeatureSchema& schema,
                      std::span<const PatientDay> train_rows,
                      std::span<const PatientDay> val_rows) {
    Rng init(Rng::splitmix(spec.train.seed ^ fnv1a("model-init")));
    auto model = std::make_unique<MlpModel>(spec, schema, init);
    const auto target = static_cast<std::size_t>(spec.targets[0]);
    const double pw = pos_weight_for(train_rows, spec.targets[0], spec.train.pos_weight_cap);
    const std::size_t F = schema.size();

    const auto fill_batch = [&](std::span<const std::size_t> idx,
                                std::span<const PatientDay> rows, Tensor& x, Tensor& y,
                                Tensor& mask) {
        const int n = static_cast<int>(idx.size());
        x = Tensor::zeros({n, static_cast<int>(F)});
        y = Tensor::zeros({n, 1});
        mask = Tensor::full({n, 1}, 1.0);
        for (int i = 0; i < n; ++i) {
            const auto& row = rows[idx[static_cast<std::size_t>(i)]];
            for (std::size_t f = 0; f < F; ++f) x[static_cast<std::size_t>(i) * F + f] = row.features[f];
            y[static_cast<std::size_t>(i)] = row.labels[target] ? 1.0 : 0.0;
        }
    };

    nn::AdamW opt(model->parameters(), spec.train);
    Rng shuffle_rng(Rng::splitmix(spec.train.seed ^ fnv1a("epoch-shuffle")));
    auto order = iota_indices(train_rows.size());
    const auto val_idx = iota_indices(val_rows.size());

    TrainResult res;
    res.pos_weight.fill(nan_value());
    res.pos_weight[target] = pw;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_params;
    const auto params = model->parameters();
    snapshot_values(params, best_params);

    for (int epoch = 0; epoch < spec.train.max_epochs; ++epoch) {
        shuffle_indices(order, shuffle_rng);
        double train_loss = 0;
        int batches = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(spec.train.batch_size)) {
            const std::size_t len =
                std::min<std::size_t>(static_cast<std::size_t>(spec.train.batch_size),
                                      order.size() - at);
            Tensor x, y, mask;
            fill_batch(std::span(order).subspan(at, len), train_rows, x, y, mask);
            const Tensor logits = model->forward(x);
            const auto bce = nn::bce_with_logits(logits, y, mask, pw);
            if (!std::isfinite(bce.loss)) throw TrainError("non-finite mlp training loss");
            opt.zero_grad();
            model->backward(bce.grad_logits);
            opt.step();
            train_loss += bce.loss;
            ++batches;
        }
        train_loss /= std::max(1, batches);

        double val_loss = nan_value();
        if (!val_rows.empty()) {
            Tensor x, y, mask;
            fill_batch(val_idx, val_rows, x, y, mask);
            val_loss = nn::bce_with_logits(model->forward(x), y, mask, pw).loss;
        }
        res.curve.push_back({epoch, train_loss, val_loss});
        const double monitored = val_rows.empty() ? train_loss : val_loss;
        if (monitored < best_val) {
            best_val = monitored;
            res.best_epoch = epoch;
            snapshot_values(params, best_params);
        } else if (epoch - res.best_epoch >= spec.train.patience) {
            break;
        }
    }
    if (res.best_epoch >= 0) restore_values(params, best_params);
    res.model = std::move(model);
    return res;
}

}  // namespace

// --------------------------------------------------------------- GruModel

namespace {

class GruModel final : public Model {
public:
    GruModel(ModelSpec spec_in, const FeatureSchema& schema, GridShape grid, Rng& rng)
        : Model(std::move(spec_in)), grid_(grid) {
        const bool fused = spec_.resolution == Resolution::hourly_fused;
        if (fused) {
            if (grid_.bins < 1 || grid_.series < 1)
                throw ConfigError("1h-fused model requires hourly grids");
            // the within-day window aggregates duplicate what the hourly grid
            // carries, so the fused tabular branch drops them
            for (std::size_t f = 0; f < schema.size(); ++f)
                if (schema.defs()[f].kind != FeatureKind::window_aggregate)
                    kept_.push_back(f);
            encoder_ = std::make_unique<EventGridEncoder>("enc", grid_.series, spec_, rng);
            fuse_ln_ = std::make_unique<nn::LayerNorm>(
                "fuse.ln", static_cast<int>(kept_.size()) + spec_.encoder_embed);
            input_width_ = static_cast<int>(kept_.size()) + spec_.encoder_embed;
        } else {
            for (std::size_t f = 0; f < schema.size(); ++f) kept_.push_back(f);
            input_width_ = static_cast<int>(schema.size());
        }
        trunk_ = std::make_unique<nn::GruStack>("trunk", input_width_, spec_.gru_hidden,
                                                spec_.gru_layers, spec_.gru_dropout, rng);
        if (spec_.mode == TaskMode::mtl_mmoe_pcgrad)
            mmoe_ = std::make_unique<MmoeBlock>("mmoe", spec_.gru_hidden, spec_.mmoe_experts,
                                                spec_.mmoe_expert_hidden,
                                                static_cast<int>(spec_.targets.size()), rng);
        for (const Target t : spec_.targets)
            heads_.push_back(std::make_unique<nn::Linear>(
                "head." + std::string(target_name(t)), spec_.gru_hidden, 1, rng));
        if (spec_.mode == TaskMode::mtl_uncertainty)
            s_ = Parameter("uncertainty.s",
                           Tensor::zeros({static_cast<int>(spec_.targets.size())}));
    }

    struct Batch {
        int B = 0, T = 0;
        Tensor tab;     ///< (B, T, kept tabular width)
        Tensor grids;   ///< (B*T, 2*series, bins) in fused mode
        Tensor mask;    ///< (B, T)
        Tensor mask3;   ///< (B, T, 1)
        std::vector<Tensor> y;          ///< per task (B, T, 1)
        std::vector<std::size_t> src;   ///< (B*T) -> source row or kNoRow
    };

    Batch make_batch(std::span<const PatientDay> rows,
                     std::span<const std::pair<std::size_t, int>> groups) const {
        Batch b;
        b.B = static_cast<int>(groups.size());
        b.T = 0;
        for (const auto& [first, len] : groups) b.T = std::max(b.T, len);
        const auto K = static_cast<int>(kept_.size());
        b.tab = Tensor::zeros({b.B, b.T, K});
        b.mask = Tensor::zeros({b.B, b.T});
        b.mask3 = Tensor::zeros({b.B, b.T, 1});
        b.src.assign(static_cast<std::size_t>(b.B) * b.T, kNoRow);
        const bool fused = spec_.resolution == Resolution::hourly_fused;
        if (fused)
            b.grids = Tensor::zeros({b.B * b.T, 2 * grid_.series, grid_.bins});
        for (std::size_t t = 0; t < spec_.targets.size(); ++t)
            b.y.push_back(Tensor::zeros({b.B, b.T, 1}));

        for (int g = 0; g < b.B; ++g) {
            const auto [first, len] = groups[static_cast<std::size_t>(g)];
            for (int t = 0; t < len; ++t) {
                const auto& row = rows[first + static_cast<std::size_t>(t)];
                const std::size_t bt = static_cast<std::size_t>(g) * b.T + t;
                b.src[bt] = first + static_cast<std::size_t>(t);
                b.mask[bt] = 1.0;
                b.mask3[bt] = 1.0;
                double* tab = &b.tab.v[bt * static_cast<std::size_t>(K)];
                for (int f = 0; f < K; ++f)
                    tab[f] = row.features[kept_[static_cast<std::size_t>(f)]];
                for (std::size_t k = 0; k < spec_.targets.size(); ++k)
                    b.y[k][bt] = row.labels[static_cast<std::size_t>(spec_.targets[k])] ? 1.0 : 0.0;
                if (fused) {
                    const std::size_t S = static_cast<std::size_t>(grid_.series);
                    const std::size_t L = static_cast<std::size_t>(grid_.bins);
                    if (row.grid.size() != S * L)
                        throw ConfigError("1h-fused model requires hourly grids on every row");
                    double* cell = &b.grids.v[bt * 2 * S * L];
                    for (std::size_t s = 0; s < S; ++s)
                        for (std::size_t l = 0; l < L; ++l) {
                            cell[s * L + l] = row.grid[l * S + s];
                            cell[(S + s) * L + l] = row.grid_mask[l * S + s];
                        }
                }
            }
        }
        return b;
    }

    /// Per-task logits, each (B, T, 1) for identity heads or (B*T, 1) when
    /// routed through MMoE; element order is identical either way.
    std::vector<Tensor> forward(const Batch& b, bool training) {
        set_training(training);
        Tensor x_in;
        if (spec_.resolution == Resolution::hourly_fused) {
            const Tensor embed = encoder_->forward(b.grids);  // (B*T, embed)
            const auto K = static_cast<std::size_t>(kept_.size());
            const auto E = static_cast<std::size_t>(spec_.encoder_embed);
            Tensor cat = Tensor::zeros({b.B, b.T, static_cast<int>(K + E)});
            const std::size_t steps = static_cast<std::size_t>(b.B) * b.T;
            for (std::size_t bt = 0; bt < steps; ++bt) {
                double* dst = &cat.v[bt * (K + E)];
                std::copy_n(&b.tab.v[bt * K], K, dst);
                std::copy_n(&embed.v[bt * E], E, dst + K);
            }
            x_in = fuse_ln_->forward(cat);
        } else {
            x_in = b.tab;
        }
        const Tensor h = trunk_->forward(x_in, b.mask);
        std::vector<Tensor> logits;
        if (mmoe_) {
            Tensor flat = h;
            flat.shape = {b.B * b.T, spec_.gru_hidden};
            const auto reps = mmoe_->forward(flat);
            for (std::size_t t = 0; t < heads_.size(); ++t)
                logits.push_back(heads_[t]->forward(reps[t]));
        } else {
            for (auto& head : heads_) logits.push_back(head->forward(h));
        }
        return logits;
    }

    /// Mode-specific gradient accumulation; task_losses and bce grads come
    /// from the caller so the loss curve and the backward pass agree.
    void backward(const Batch& b, std::span<const nn::BceResult> bce,
                  std::span<const double> task_losses, Rng& step_rng,
                  PcgradStats* stats = nullptr) {
        const std::size_t tasks = heads_.size();
        if (spec_.mode == TaskMode::mtl_mmoe_pcgrad && tasks > 1) {
            backward_pcgrad(b, bce, step_rng, stats);
            return;
        }
        Tensor dh = Tensor::zeros({b.B, b.T, spec_.gru_hidden});
        for (std::size_t t = 0; t < tasks; ++t) {
            double scale = 1.0;
            if (spec_.mode == TaskMode::mtl_uncertainty) {
                scale = std::exp(-s_.value[t]);
                s_.grad[t] += -scale * task_losses[t] + 1.0;
            }
            Tensor g = bce[t].grad_logits;
            for (double& v : g.v) v *= scale;
            Tensor ghead = heads_[t]->backward(g);
            if (mmoe_) ghead = mmoe_->backward(static_cast<int>(t), ghead);
            for (std::size_t i = 0; i < dh.numel(); ++i) dh[i] += ghead[i];
        }
        backward_trunk(b, dh);
    }

    std::vector<DayProbs> predict(std::span<const PatientDay> rows) override {
        std::vector<DayProbs> out(rows.size());
        for (auto& p : out) p.fill(nan_value());
        const auto groups = group_rows(rows, spec_.max_seq_len);
        const std::size_t chunk = 64;
        for (std::size_t at = 0; at < groups.size(); at += chunk) {
            const std::size_t len = std::min(chunk, groups.size() - at);
            const Batch b = make_batch(rows, std::span(groups).subspan(at, len));
            const auto logits = forward(b, /*training=*/false);
            for (std::size_t t = 0; t < heads_.size(); ++t) {
                const auto target = static_cast<std::size_t>(spec_.targets[t]);
                for (std::size_t bt = 0; bt < b.src.size(); ++bt)
                    if (b.src[bt] != kNoRow)
                        out[b.src[bt]][target] = nn::sigmoid(logits[t][bt]);
            }
        }
        return out;
    }

    std::vector<Parameter*> shared_parameters() {
        std::vector<Parameter*> out;
        if (encoder_) {
            for (Parameter* p : encoder_->parameters()) out.push_back(p);
            for (Parameter* p : fuse_ln_->parameters()) out.push_back(p);
        }
        for (Parameter* p : trunk_->parameters()) out.push_back(p);
        if (mmoe_)
            for (Parameter* p : mmoe_->shared_parameters()) out.push_back(p);
        return out;
    }

    std::vector<Parameter*> parameters() override {
        std::vector<Parameter*> out = shared_parameters();
        for (std::size_t t = 0; t < heads_.size(); ++t) {
            if (mmoe_)
                for (Parameter* p : mmoe_->task_parameters(static_cast<int>(t)))
                    out.push_back(p);
            for (Parameter* p : heads_[t]->parameters()) out.push_back(p);
        }
        if (spec_.mode == TaskMode::mtl_uncertainty) out.push_back(&s_);
        return out;
    }

    void set_training(bool on) { trunk_->set_training(on); }

    Parameter& uncertainty_s() { return s_; }
    MmoeBlock* mmoe() { return mmoe_.get(); }

private:
    void backward_trunk(const Batch& b, const Tensor& dh) {
        Tensor dh_shaped = dh;
        dh_shaped.shape = {b.B, b.T, spec_.gru_hidden};
        const Tensor gx_in = trunk_->backward(dh_shaped);
        if (spec_.resolution != Resolution::hourly_fused) return;
        const Tensor gcat = fuse_ln_->backward(gx_in);
        const auto K = static_cast<std::size_t>(kept_.size());
        const auto E = static_cast<std::size_t>(spec_.encoder_embed);
        const std::size_t steps = static_cast<std::size_t>(b.B) * b.T;
        Tensor gembed = Tensor::zeros({static_cast<int>(steps), static_cast<int>(E)});
        for (std::size_t bt = 0; bt < steps; ++bt)
            std::copy_n(&gcat.v[bt * (K + E) + K], E, &gembed.v[bt * E]);
        encoder_->backward(gembed);
    }

    void backward_pcgrad(const Batch& b, std::span<const nn::BceResult> bce, Rng& step_rng,
                         PcgradStats* stats) {
        const auto shared = shared_parameters();
        std::vector<std::vector<double>> task_grads;
        for (std::size_t t = 0; t < heads_.size(); ++t) {
            for (Parameter* p : shared) p->zero_grad();
            Tensor ghead = heads_[t]->backward(bce[t].grad_logits);
            if (mmoe_) ghead = mmoe_->backward(static_cast<int>(t), ghead);
            backward_trunk(b, ghead);
            std::vector<double> flat;
            for (const Parameter* p : shared)
                flat.insert(flat.end(), p->grad.v.begin(), p->grad.v.end());
            task_grads.push_back(std::move(flat));
        }
        const std::vector<double> combined = pcgrad_combine(std::move(task_grads), step_rng, stats);
        std::size_t at = 0;
        for (Parameter* p : shared)
            for (double& g : p->grad.v) g = combined[at++];
    }

    GridShape grid_;
    std::vector<std::size_t> kept_;
    int input_width_ = 0;
    std::unique_ptr<EventGridEncoder> encoder_;
    std::unique_ptr<nn::LayerNorm> fuse_ln_;
    std::unique_ptr<nn::GruStack> trunk_;
    std::unique_ptr<MmoeBlock> mmoe_;
    std::vector<std::unique_ptr<nn::Linear>> heads_;
    Parameter s_;
};

TrainResult train_gru(const ModelSpec& spec, const FeatureSchema& schema,
                      std::span<const PatientDay> train_rows,
                      std::span<const PatientDay> val_rows, GridShape grid) {
    Rng init(Rng::splitmix(spec.train.seed ^ fnv1a("model-init")));
    auto model = std::make_unique<GruModel>(spec, schema, grid, init);

    std::vector<double> pos_weight;
    TrainResult res;
    res.pos_weight.fill(nan_value());
    for (const Target t : spec.targets) {
        pos_weight.push_back(pos_weight_for(train_rows, t, spec.train.pos_weight_cap));
        res.pos_weight[static_cast<std::size_t>(t)] = pos_weight.back();
    }

    const auto train_groups = group_rows(train_rows, spec.max_seq_len);
    const auto val_groups = group_rows(val_rows, spec.max_seq_len);

    // mode-combined loss over a sequence set, eval mode, batched
    const auto evaluate = [&](std::span<const PatientDay> rows,
                              std::span<const std::pair<std::size_t, int>> groups) {
        if (groups.empty()) return nan_value();
        std::vector<double> sums(spec.targets.size(), 0.0);
        std::vector<std::int64_t> counts(spec.targets.size(), 0);
        const std::size_t chunk = 64;
        for (std::size_t at = 0; at < groups.size(); at += chunk) {
            const std::size_t len = std::min(chunk, groups.size() - at);
            const auto b = model->make_batch(rows, groups.subspan(at, len));
            const auto logits = model->forward(b, /*training=*/false);
            for (std::size_t t = 0; t < spec.targets.size(); ++t) {
                const auto bce = nn::bce_with_logits(logits[t], b.y[t], b.mask3, pos_weight[t]);
                sums[t] += bce.loss * static_cast<double>(bce.valid);
                counts[t] += bce.valid;
            }
        }
        std::vector<double> losses(spec.targets.size(), 0.0);
        for (std::size_t t = 0; t < losses.size(); ++t)
            if (counts[t] > 0) losses[t] = sums[t] / static_cast<double>(counts[t]);
        if (spec.mode == TaskMode::mtl_uncertainty) {
            std::vector<double> s(model->uncertainty_s().value.v);
            return mtl_loss_uncertainty(losses, s);
        }
        return mtl_loss_hard(losses);
    };

    nn::AdamW opt(model->parameters(), spec.train);
    Rng shuffle_rng(Rng::splitmix(spec.train.seed ^ fnv1a("epoch-shuffle")));
    Rng pcgrad_rng(Rng::splitmix(spec.train.seed ^ fnv1a("pcgrad-order")));
    auto order = iota_indices(train_groups.size());

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_params;
    const auto params = model->parameters();
    snapshot_values(params, best_params);

    for (int epoch = 0; epoch < spec.train.max_epochs; ++epoch) {
        shuffle_indices(order, shuffle_rng);
        double train_loss = 0;
        int batches = 0;
        for (std::size_t at = 0; at < order.size();
             at += static_cast<std::size_t>(spec.train.batch_size)) {
            const std::size_t len = std::min<std::size_t>(
                static_cast<std::size_t>(spec.train.batch_size), order.size() - at);
            std::vector<std::pair<std::size_t, int>> chunk;
            for (std::size_t k = 0; k < len; ++k) chunk.push_back(train_groups[order[at + k]]);
            const auto b = model->make_batch(train_rows, chunk);
            const auto logits = model->forward(b, /*training=*/true);
            std::vector<nn::BceResult> bce;
            std::vector<double> losses;
            for (std::size_t t = 0; t < spec.targets.size(); ++t) {
                bce.push_back(nn::bce_with_logits(logits[t], b.y[t], b.mask3, pos_weight[t]));
                losses.push_back(bce.back().loss);
            }
            double combined;
            if (spec.mode == TaskMode::mtl_uncertainty) {
                std::vector<double> s(model->uncertainty_s().value.v);
                combined = mtl_loss_uncertainty(losses, s);
            } else {
                combined = mtl_loss_hard(losses);
            }
            if (!std::isfinite(combined)) throw TrainError("non-finite gru training loss");
            opt.zero_grad();
            model->backward(b, bce, losses, pcgrad_rng, &res.pcgrad);
            opt.step();
            train_loss += combined;
            ++batches;
        }
        train_loss /= std::max(1, batches);

        const double val_loss = evaluate(val_rows, val_groups);
        res.curve.push_back({epoch, train_loss, val_loss});
        const double monitored = std::isnan(val_loss) ? train_loss : val_loss;
        if (monitored < best_val) {
            best_val = monitored;
            res.best_epoch = epoch;
            snapshot_values(params, best_params);
        } else if (epoch - res.best_epoch >= spec.train.patience) {
            break;
        }
    }
    if (res.best_epoch >= 0) restore_values(params, best_params);
    res.model = std::move(model);
    return res;
}

}  // namespace

// ------------------------------------------------------------- factories

std::unique_ptr<Model> make_model(const ModelSpec& spec, const FeatureSchema& schema,
                                  GridShape grid) {
    spec.validate();
    Rng init(Rng::splitmix(spec.train.seed ^ fnv1a("model-init")));
    switch (spec.family) {
        case ModelFamily::logreg: return std::make_unique<LogregModel>(spec, schema);
        case ModelFamily::mlp: return std::make_unique<MlpModel>(spec, schema, init);
        case ModelFamily::gru: return std::make_unique<GruModel>(spec, schema, grid, init);
    }
    throw InternalError("invalid model family");
}

void Model::save(const std::string& path, std::uint64_t seed) {
    const auto params = parameters();
    nn::save_checkpoint(path, params, spec_.config_hash(), seed);
}

void Model::load(const std::string& path) {
    auto params = parameters();
    nn::load_checkpoint(path, params);
}

TrainResult train_model(const ModelSpec& spec, const FeatureSchema& schema,
                        std::span<const PatientDay> train_rows,
                        std::span<const PatientDay> val_rows, GridShape grid) {
    spec.validate();
    switch (spec.family) {
        case ModelFamily::logreg: return train_logreg(spec, schema, train_rows, val_rows);
        case ModelFamily::mlp: return train_mlp(spec, schema, train_rows, val_rows);
        case ModelFamily::gru: return train_gru(spec, schema, train_rows, val_rows, grid);
    }
    throw InternalError("invalid model family");
}

}  // namespace ams
