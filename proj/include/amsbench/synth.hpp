#pragma once

#include <array>
#include <cstdint>

#include "amsbench/cohort.hpp"
#include "amsbench/courses.hpp"

namespace ams {

/// Configuration of the synthetic cohort generator. The same config + seed
/// always produces the same cohort, byte for byte.
struct SynthConfig {
    std::int64_t n_patients = 1000;
    std::uint64_t seed = 0;

    /// Desired per-patient-day probability of each target, indexed by
    /// Target. Defaults follow a pediatric ICU test-set profile.
    std::array<double, kNumTargets> prevalence = {0.0035, 0.0392, 0.0169, 0.0577};

    /// Antibiotic length-of-therapy distribution (log-normal, in days).
    double los_median_days = 5.0;
    double los_iqr_low_days = 3.0;
    double los_iqr_high_days = 9.0;
    int max_course_days = 14;

    /// Measurement intensity per variable.
    double vitals_per_hour = 0.5;
    double labs_per_hour = 0.10;

    /// Scale of the planted physiology shifts on labeled days (0 = no
    /// learnable signal) and rate of decoy single-day shifts on negative
    /// days (these make single-window snapshots ambiguous, so models with
    /// day-to-day memory have an edge).
    double signal_strength = 1.0;
    double confuser_rate = 0.04;

    /// Chance that a patient has a second (and then a third) admission.
    double multi_admission_rate = 0.10;

    /// Daily prediction anchor the planted signal windows are aligned to.
    int anchor_hour = 8;

    /// Throws ConfigError naming the first offending field.
    void validate() const;
};

/// Deterministically generates a cohort whose derived target labels match
/// the configured prevalences in expectation, with learnable vital/lab
/// shifts in the 24h window preceding each positive day's anchor.
///
/// Construction is course-first: per admission, an antibiotic course
/// skeleton realizing the planted targets is laid out, then measurements
/// are sampled around it.
Cohort generate_synthetic(const SynthConfig& config);

}  // namespace ams
