#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "amsbench/asi.hpp"
#include "amsbench/cohort.hpp"
#include "amsbench/courses.hpp"
#include "amsbench/time.hpp"

namespace ams {

/// Controls patient-day feature construction.
struct FeaturizerConfig {
    /// Hour of day the prediction anchor falls on; features use the
    /// window_hours strictly before it.
    int anchor_hour = 8;
    int window_hours = 24;

    /// Hourly-grid shape: bins per window. Bin width = window / bins.
    int grid_bins = 24;
    bool with_grid = true;

    /// An agent counts as high-priority when its spectrum index reaches
    /// this threshold.
    int high_priority_asi = 8;

    /// Lookback for the most-recent-value features on infection markers.
    int recent_days = 90;

    /// Throws ConfigError naming the first offending field.
    void validate() const;
};

enum class FeatureKind { statics, one_hot, window_aggregate, trend, exposure };

/// One column of the dense feature vector.
struct FeatureDef {
    std::string name;       ///< unique column name
    FeatureKind kind;
    std::string item_id;    ///< source variable; empty when not item-based
    std::string aggregate;  ///< sum|mean|n|min|max|recent_90d; empty otherwise
};

/// The fixed, ordered feature layout. Every patient-day row has exactly
/// this many columns, in this order.
class FeatureSchema {
public:
    FeatureSchema() = default;

    /// The standard layout for a vocabulary: statics, exposure counters,
    /// primary-agent one-hot, per-item window aggregates with missing
    /// indicators, recent-history values, and vital-sign trends.
    static FeatureSchema standard(const ItemVocab& vocab, const AsiTable& asi,
                                  const FeaturizerConfig& config);

    const std::vector<FeatureDef>& defs() const { return defs_; }
    std::size_t size() const { return defs_.size(); }

    /// Column position of `name`; throws InternalError when absent.
    std::size_t index_of(std::string_view name) const;

private:
    explicit FeatureSchema(std::vector<FeatureDef> defs);

    std::vector<FeatureDef> defs_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// One prediction row: a calendar day of one admission on which at least
/// one antibiotic course is active, anchored at anchor_hour.
struct PatientDay {
    std::string admission_id;
    std::string patient_id;
    int day_index = 0;        ///< ordinal within the admission, 0-based
    std::int64_t date = 0;    ///< calendar date, days since epoch
    Timestamp day_start = 0;  ///< anchor instant; features end strictly here
    bool valid = true;        ///< false only for padding rows downstream

    std::vector<double> features;            ///< schema-ordered, dense
    std::array<int, kNumTargets> labels{};   ///< 0/1 per target

    /// Optional hourly grid, row-major bins x series, plus the matching
    /// observed/filled indicators. Empty when grids are disabled.
    std::vector<float> grid;
    std::vector<float> grid_mask;
};

/// Builds every patient-day of one admission, ordered by date. The events
/// span must hold exactly this admission's target events sorted by time.
std::vector<PatientDay> featurize_admission(const Cohort& cohort, const AdmissionCourses& courses,
                                            std::span<const TargetEvent> events,
                                            const FeatureSchema& schema, const AsiTable& asi,
                                            const FeaturizerConfig& config);

/// Whole-cohort featurization, ordered by (admission_id, date).
std::vector<PatientDay> featurize_cohort(const Cohort& cohort,
                                         const std::vector<AdmissionCourses>& courses,
                                         const TargetDerivation& derivation,
                                         const FeatureSchema& schema, const AsiTable& asi,
                                         const FeaturizerConfig& config);

/// Leak-safety self-test: for `n_days` rows sampled evenly from `rows`,
/// perturbs every measurement event at or after the row's anchor (values
/// shifted, plus injected spikes, including one exactly on the anchor) and
/// rebuilds the row; throws InternalError if any feature, label, or grid
/// cell changes. Cheap enough to run inside the data pipeline.
void assert_leak_safety(const Cohort& cohort, const std::vector<AdmissionCourses>& courses,
                        const TargetDerivation& derivation, std::span<const PatientDay> rows,
                        const FeatureSchema& schema, const AsiTable& asi,
                        const FeaturizerConfig& config, int n_days);

/// patient_days.csv: ids, schema columns, then one label column per target.
void write_patient_days(const std::vector<PatientDay>& rows, const FeatureSchema& schema,
                        const std::string& path);

/// Inverse of write_patient_days; validates the header against `schema`.
std::vector<PatientDay> read_patient_days(const std::string& path, const FeatureSchema& schema);

/// grids.bin: "AMSG" magic, u32 bins, u32 series, u64 rows, then per row
/// bins x series float32 values followed by bins x series indicators.
/// Row order matches the patient-day rows the grids were built from.
void write_grids(const std::vector<PatientDay>& rows, int bins, int series,
                 const std::string& path);

struct GridFile {
    int bins = 0;
    int series = 0;
    std::vector<std::vector<float>> grids;       ///< one per row
    std::vector<std::vector<float>> grid_masks;  ///< parallel indicators
};

GridFile read_grids(const std::string& path);

}  // namespace ams
