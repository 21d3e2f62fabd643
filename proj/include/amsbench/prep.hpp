#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "amsbench/cohort.hpp"
#include "amsbench/features.hpp"

namespace ams {

enum class Split { train = 0, val = 1, test = 2 };
constexpr int kNumSplits = 3;
std::string_view split_name(Split s);

/// Controls splitting, winsorization, and sequence assembly.
struct PrepConfig {
    double train_frac = 0.72;
    double val_frac = 0.08;
    double test_frac = 0.20;
    double winsor_lo = 1.0;   ///< percentile, 0..100
    double winsor_hi = 99.0;
    int max_seq_len = 512;
    std::uint64_t seed = 0;

    /// Throws ConfigError naming the first offending field.
    void validate() const;
};

/// Patient-level partition: every admission of a patient lands in the
/// split of its patient, so no subject straddles train and test.
struct SplitAssignment {
    std::uint64_t seed = 0;
    std::array<double, kNumSplits> fractions{};
    std::unordered_map<std::string, Split> by_patient;

    /// Split of a patient; throws InternalError for unknown ids.
    Split of(const std::string& patient_id) const;
};

/// Deterministic per (seed, patient_id); independent of patient order.
SplitAssignment split_patients(const Cohort& cohort, const PrepConfig& config);

/// Indices into `rows` whose patient belongs to `split`, in row order.
std::vector<std::size_t> rows_in_split(std::span<const PatientDay> rows,
                                       const SplitAssignment& assignment, Split split);

/// Per-feature winsorization bounds and standardization moments, fitted on
/// training rows only and applied unchanged everywhere else.
struct Scaler {
    std::string fitted_on = "train";
    std::array<double, 2> winsor_percentiles{1, 99};
    std::vector<std::string> names;  ///< schema order
    std::vector<double> mean, std_dev, low, high;

    /// clip to [low, high], then center and scale. Constant features
    /// (std 0) are stored with std 1 and therefore map to 0.
    double transform_value(std::size_t feature, double v) const;
    void transform(std::vector<double>& features) const;

    /// Audit file: feature name -> {mean, std, low, high}, insertion-ordered.
    void save_json(const std::string& path) const;
    static Scaler load_json(const std::string& path);

    bool operator==(const Scaler&) const = default;
};

/// Percentile bounds via linear interpolation on the sorted training
/// values (rank = q/100 * (n-1)); moments are computed after clipping,
/// with population variance. Throws TrainError on fewer than 2 rows.
Scaler fit_scaler(std::span<const PatientDay> rows, std::span<const std::size_t> train_indices,
                  const FeatureSchema& schema, const PrepConfig& config);

/// Applies the scaler to every row's features, in place.
void apply_scaler(const Scaler& scaler, std::vector<PatientDay>& rows);

/// One admission's patient-days as an ordered sequence, truncated to the
/// configured maximum length.
struct Sequence {
    std::string admission_id;
    std::string patient_id;
    int length = 0;                                     ///< T
    std::vector<double> features;                       ///< T x F row-major
    std::vector<std::array<int, kNumTargets>> labels;   ///< per step
    std::vector<int> day_indices;                       ///< source day_index per step
};

/// Groups consecutive rows by admission (rows must already be ordered by
/// admission and date, as featurize_cohort emits them).
std::vector<Sequence> make_sequences(std::span<const PatientDay> rows, const FeatureSchema& schema,
                                     int max_seq_len);

/// Rectangular mini-batch: sequences padded to the longest length with
/// zero features, zero labels, and mask 0 on padded steps.
struct PaddedBatch {
    int batch = 0, time = 0, features = 0;
    std::vector<double> x;     ///< batch x time x features
    std::vector<double> mask;  ///< batch x time; 1 on real steps
    std::vector<double> y;     ///< batch x time x kNumTargets
};

PaddedBatch pad_batch(std::span<const Sequence> sequences, std::size_t first, std::size_t count);

}  // namespace ams
