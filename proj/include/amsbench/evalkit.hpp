#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ams {

/// A metric that may be undefined (single-class sets, zero denominators,
/// empty bins). Undefined values print as "--" and are never silently 0.
using Metric = std::optional<double>;

/// Shortest round-trip decimal, or "--" when undefined.
std::string format_metric(const Metric& m);

/// Parallel scores and 0/1 labels for one (model, target) cell, restricted
/// to the rows the model actually scored.
struct ScoredSet {
    std::vector<double> scores;
    std::vector<int> labels;

    std::size_t size() const { return scores.size(); }
    std::int64_t positives() const;
    double prevalence() const;
    /// Throws InternalError on length mismatch, empty set, or labels
    /// outside {0, 1}.
    void validate() const;
};

/// Mann-Whitney AUROC with half-credit for ties (equals trapezoidal ROC
/// integration). Undefined when the set is single-class.
Metric auroc(const ScoredSet& set);

/// Step-wise average precision over descending unique thresholds:
/// Σ (R_n − R_{n−1}) · P_n. Undefined when there are no positives.
Metric auprc(const ScoredSet& set);

/// Counts and rates at `score >= threshold`; zero-denominator rates are
/// undefined rather than 0.
struct Confusion {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    Metric f1, tpr, tnr, ppv, npv;
};
Confusion confusion_at(const ScoredSet& set, double threshold = 0.5);

struct CalibrationBin {
    double lo = 0, hi = 0;  ///< edges; [lo, hi) except the last bin [lo, hi]
    std::int64_t count = 0;
    Metric mean_predicted;  ///< undefined for empty bins
    Metric observed_rate;
};

/// Equal-width probability bins over [0, 1]; empty bins are emitted with
/// count 0. Throws ConfigError when n_bins < 2 and InternalError when a
/// score falls outside [0, 1].
std::vector<CalibrationBin> calibration_curve(const ScoredSet& set, int n_bins = 10);

/// Everything the benchmark reports for one scored cell.
struct MetricsReport {
    double prevalence = 0;
    Metric auroc_value, auprc_value;
    Metric f1, tpr, tnr, ppv, npv;
    std::vector<CalibrationBin> calibration;
};
MetricsReport evaluate_scored(const ScoredSet& set, int calibration_bins = 10);

/// One results.csv row. An absent row marks a (model, target) cell whose
/// run is missing: every numeric cell prints "--".
struct ResultRow {
    std::string model;
    std::string target;
    std::string resolution;
    std::string task_mode;
    std::uint64_t seed = 0;
    bool absent = false;
    MetricsReport report;
};

/// Header + one line per row, in caller order. Byte-deterministic.
std::string results_csv(const std::vector<ResultRow>& rows);

/// bin_lo,bin_hi,count,mean_predicted,observed_rate per bin.
std::string calibration_csv(const std::vector<CalibrationBin>& bins);

/// One reliability curve per series on a shared diagonal plot.
struct ReliabilitySeries {
    std::string name;
    std::vector<CalibrationBin> bins;
};
std::string reliability_svg(const std::string& title,
                            const std::vector<ReliabilitySeries>& series);

}  // namespace ams
