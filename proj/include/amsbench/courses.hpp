#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amsbench/asi.hpp"
#include "amsbench/cohort.hpp"
#include "amsbench/time.hpp"

namespace ams {

/// Gap-merged contiguous interval of prescriptions for one agent within
/// one admission. Courses shorter than min_span never survive merging.
struct AntibioticCourse {
    std::string admission_id;
    std::string atc_code;
    Timestamp start_time = 0;  ///< earliest constituent start
    Timestamp end_time = 0;    ///< latest constituent end (half-open)
    /// Indices into the prescription list handed to merge_courses,
    /// ordered by start time.
    std::vector<std::size_t> prescriptions;
    /// (start_time, route) of each constituent, ordered by start time.
    std::vector<std::pair<Timestamp, Route>> routes_timeline;

    std::int64_t duration() const { return end_time - start_time; }
    /// Active at instant t (half-open interval).
    bool active_at(Timestamp t) const { return start_time <= t && t < end_time; }
    /// Overlaps [lo, hi).
    bool overlaps(Timestamp lo, Timestamp hi) const { return start_time < hi && end_time > lo; }
};

struct CourseOptions {
    std::int64_t merge_gap = 24 * kHour;  ///< inclusive: gap == merge_gap still merges
    std::int64_t min_span = 24 * kHour;   ///< courses spanning less are dropped
};

/// Merge one admission's prescriptions into courses, per (admission, ATC):
/// sort by start, union consecutive intervals with gap ≤ merge_gap, drop
/// merged courses spanning < min_span. Output ordered by (start_time,
/// atc_code). Prescription indices refer to positions in `prescriptions`.
std::vector<AntibioticCourse> merge_courses(std::span<const PrescriptionRecord> prescriptions,
                                            const CourseOptions& options = {});

/// The four stewardship intervention targets.
enum class Target : int { iv_to_oral = 0, deescalation = 1, discontinuation = 2, short_course = 3 };
constexpr int kNumTargets = 4;
constexpr std::array<Target, 4> kAllTargets = {Target::iv_to_oral, Target::deescalation,
                                               Target::discontinuation, Target::short_course};

std::string_view target_name(Target t);
std::optional<Target> target_from_name(std::string_view name);

/// A derived stewardship event, attached to one calendar day.
struct TargetEvent {
    std::string admission_id;
    Target target = Target::iv_to_oral;
    Timestamp event_time = 0;
    std::size_t course_index = 0;   ///< into the admission's course list
    std::int64_t label_date = 0;    ///< days since epoch of the positive day
};

/// Route switch: first non-IV prescription strictly preceded by an IV
/// prescription within the course. Labeled on the switch day.
std::optional<TargetEvent> label_iv_to_oral(const AntibioticCourse& course,
                                            std::size_t course_index);

/// Spectrum narrowing: first constituent prescription (across the
/// admission's surviving courses, by start time) whose ATC differs from
/// every currently active course and whose ASI is strictly below the
/// maximum ASI among active courses. Unmapped codes are excluded from the
/// comparison; each distinct unmapped code encountered adds a warning.
std::optional<TargetEvent> label_deescalation(std::span<const AntibioticCourse> courses,
                                              const AsiTable& asi,
                                              std::vector<std::string>* warnings = nullptr);

/// Stop with a drug-free window: course ends ≥ horizon before discharge and
/// no other course overlaps [end, end + horizon). Labeled on the final day.
std::optional<TargetEvent> label_discontinuation(const AntibioticCourse& course,
                                                 std::size_t course_index,
                                                 const AdmissionRecord& admission,
                                                 std::span<const AntibioticCourse> all_courses,
                                                 std::int64_t horizon = 72 * kHour);

/// Duration between min_span and max_span, excluding the prophylaxis agent
/// (cefazolin). Labeled on the final day.
std::optional<TargetEvent> label_short_course(const AntibioticCourse& course,
                                              std::size_t course_index,
                                              std::int64_t max_span = 96 * kHour,
                                              std::string_view excluded_atc = "J01DB04");

/// Courses of one admission, in merge_courses order.
struct AdmissionCourses {
    std::string admission_id;
    std::vector<AntibioticCourse> courses;
};

/// Merge every admission's prescriptions; output ordered by admission_id.
std::vector<AdmissionCourses> merge_all_courses(const Cohort& cohort,
                                                const CourseOptions& options = {});

/// Calendar dates (days since epoch, sorted) on which at least one course
/// is active at some instant — the admission's patient-days.
std::vector<std::int64_t> course_dates(std::span<const AntibioticCourse> courses);

/// Per-date label bitmask (bit = Target value) for one admission's events,
/// which must be sorted by event_time. iv_to_oral and de-escalation mark at
/// most one day — the first event's — so an admission never carries two
/// positive days for either; the per-course targets mark every event's day.
std::map<std::int64_t, unsigned> day_label_masks(std::span<const TargetEvent> events);

/// Cohort-level label derivation plus prevalence / co-occurrence summary.
struct TargetDerivation {
    /// All events, ordered by (admission_id, event_time, target).
    std::vector<TargetEvent> events;
    /// Warnings (e.g. ATC codes without a spectrum score).
    std::vector<std::string> warnings;

    std::int64_t total_patient_days = 0;
    std::array<std::int64_t, kNumTargets> positive_days{};  ///< distinct labeled days
    std::array<double, kNumTargets> prevalence{};           ///< positive_days / total
    /// Patient-day counts per label combination; index = bitmask over
    /// Target values (bit 0 = iv_to_oral, ... bit 3 = short_course).
    std::array<std::int64_t, 16> combo_days{};
};

TargetDerivation derive_all_targets(const Cohort& cohort,
                                    const std::vector<AdmissionCourses>& courses,
                                    const AsiTable& asi);

}  // namespace ams
