#include "amsbench/courses.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "amsbench/errors.hpp"

namespace ams {

std::string_view target_name(Target t) {
    switch (t) {
        case Target::iv_to_oral: return "iv_to_oral";
        case Target::deescalation: return "deescalation";
        case Target::discontinuation: return "discontinuation";
        case Target::short_course: return "short_course";
    }
    return "?";
}

std::optional<Target> target_from_name(std::string_view name) {
    for (Target t : kAllTargets)
        if (target_name(t) == name) return t;
    return std::nullopt;
}

std::vector<AntibioticCourse> merge_courses(std::span<const PrescriptionRecord> prescriptions,
                                            const CourseOptions& options) {
    // stable per-ATC grouping: map keeps ATC order deterministic
    std::map<std::string, std::vector<std::size_t>> by_atc;
    for (std::size_t i = 0; i < prescriptions.size(); ++i)
        by_atc[prescriptions[i].atc_code].push_back(i);

    std::vector<AntibioticCourse> courses;
    for (auto& [atc, idx] : by_atc) {
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            const auto& ra = prescriptions[a];
            const auto& rb = prescriptions[b];
            if (ra.start_time != rb.start_time) return ra.start_time < rb.start_time;
            if (ra.end_time != rb.end_time) return ra.end_time < rb.end_time;
            return a < b;
        });
        AntibioticCourse current;
        auto flush = [&]() {
            if (current.prescriptions.empty()) return;
            if (current.duration() >= options.min_span) courses.push_back(current);
            current = AntibioticCourse{};
        };
        for (std::size_t i : idx) {
            const auto& rx = prescriptions[i];
            if (!current.prescriptions.empty() &&
                rx.start_time - current.end_time > options.merge_gap) {
                flush();
            }
            if (current.prescriptions.empty()) {
                current.admission_id = rx.admission_id;
                current.atc_code = rx.atc_code;
                current.start_time = rx.start_time;
                current.end_time = rx.end_time;
            } else {
                current.end_time = std::max(current.end_time, rx.end_time);
            }
            current.prescriptions.push_back(i);
            current.routes_timeline.emplace_back(rx.start_time, rx.route);
        }
        flush();
    }
    std::sort(courses.begin(), courses.end(), [](const auto& a, const auto& b) {
        if (a.start_time != b.start_time) return a.start_time < b.start_time;
        return a.atc_code < b.atc_code;
    });
    return courses;
}

namespace {

/// Final-day label: the calendar date containing the last covered instant.
std::int64_t final_day_date(const AntibioticCourse& course) {
    return date_of(course.end_time - 1);
}

}  // namespace

std::optional<TargetEvent> label_iv_to_oral(const AntibioticCourse& course,
                                            std::size_t course_index) {
    bool seen_iv = false;
    Timestamp iv_start = 0;
    for (const auto& [start, route] : course.routes_timeline) {
        if (route == Route::intravenous) {
            if (!seen_iv) {
                seen_iv = true;
                iv_start = start;
            }
        } else if (seen_iv && start > iv_start) {
            return TargetEvent{course.admission_id, Target::iv_to_oral, start, course_index,
                               date_of(start)};
        }
    }
    return std::nullopt;
}

std::optional<TargetEvent> label_deescalation(std::span<const AntibioticCourse> courses,
                                              const AsiTable& asi,
                                              std::vector<std::string>* warnings) {
    // every constituent prescription start, in chronological order
    struct Start {
        Timestamp t;
        std::size_t course;
    };
    std::vector<Start> starts;
    for (std::size_t c = 0; c < courses.size(); ++c)
        for (const auto& [t, route] : courses[c].routes_timeline) starts.push_back({t, c});
    std::sort(starts.begin(), starts.end(), [&](const Start& a, const Start& b) {
        if (a.t != b.t) return a.t < b.t;
        return courses[a.course].atc_code < courses[b.course].atc_code;
    });

    std::set<std::string> warned;
    auto score = [&](const std::string& atc) -> std::optional<int> {
        const auto s = asi.asi(atc);
        if (!s && warnings && warned.insert(atc).second)
            warnings->push_back("no spectrum score for ATC '" + atc + "', excluded from comparison");
        return s;
    };

    for (const auto& s : starts) {
        const auto& rx_course = courses[s.course];
        const auto rx_asi = score(rx_course.atc_code);
        if (!rx_asi) continue;
        // active courses at the instant this prescription starts
        int max_active_asi = -1;
        bool same_agent_active = false;
        for (const auto& c : courses) {
            if (!(c.start_time < s.t && s.t < c.end_time)) continue;
            if (c.atc_code == rx_course.atc_code) {
                same_agent_active = true;  // continuation, not a new agent
                break;
            }
            const auto c_asi = score(c.atc_code);
            if (c_asi) max_active_asi = std::max(max_active_asi, *c_asi);
        }
        if (same_agent_active || max_active_asi < 0) continue;
        if (*rx_asi < max_active_asi) {
            return TargetEvent{rx_course.admission_id, Target::deescalation, s.t, s.course,
                               date_of(s.t)};
        }
    }
    return std::nullopt;
}

std::optional<TargetEvent> label_discontinuation(const AntibioticCourse& course,
                                                 std::size_t course_index,
                                                 const AdmissionRecord& admission,
                                                 std::span<const AntibioticCourse> all_courses,
                                                 std::int64_t horizon) {
    if (admission.discharge_time - course.end_time < horizon) return std::nullopt;
    for (std::size_t c = 0; c < all_courses.size(); ++c) {
        if (c == course_index) continue;
        // any agent still running in [end, end + horizon) keeps therapy going
        if (all_courses[c].overlaps(course.end_time, course.end_time + horizon))
            return std::nullopt;
    }
    return TargetEvent{course.admission_id, Target::discontinuation, course.end_time, course_index,
                       final_day_date(course)};
}

std::optional<TargetEvent> label_short_course(const AntibioticCourse& course,
                                              std::size_t course_index, std::int64_t max_span,
                                              std::string_view excluded_atc) {
    if (course.duration() >= max_span) return std::nullopt;
    if (course.atc_code == excluded_atc) return std::nullopt;
    return TargetEvent{course.admission_id, Target::short_course, course.end_time, course_index,
                       final_day_date(course)};
}

std::vector<AdmissionCourses> merge_all_courses(const Cohort& cohort,
                                                const CourseOptions& options) {
    std::vector<AdmissionCourses> result;
    result.reserve(cohort.admissions.size());
    for (const auto& adm : cohort.admissions) {
        std::vector<PrescriptionRecord> rx;
        for (std::size_t i : cohort.admission_rx(adm.admission_id))
            rx.push_back(cohort.prescriptions[i]);
        result.push_back({adm.admission_id, merge_courses(rx, options)});
    }
    std::sort(result.begin(), result.end(),
              [](const auto& a, const auto& b) { return a.admission_id < b.admission_id; });
    return result;
}

std::map<std::int64_t, unsigned> day_label_masks(std::span<const TargetEvent> events) {
    std::map<std::int64_t, unsigned> masks;
    std::array<bool, kNumTargets> seen{};
    for (const auto& ev : events) {
        const int t = static_cast<int>(ev.target);
        const bool once = ev.target == Target::iv_to_oral || ev.target == Target::deescalation;
        if (once && seen[t]) continue;
        seen[t] = true;
        masks[ev.label_date] |= 1u << t;
    }
    return masks;
}

std::vector<std::int64_t> course_dates(std::span<const AntibioticCourse> courses) {
    std::set<std::int64_t> dates;
    for (const auto& c : courses) {
        const std::int64_t first = date_of(c.start_time);
        const std::int64_t last = date_of(c.end_time - 1);
        for (std::int64_t d = first; d <= last; ++d) dates.insert(d);
    }
    return {dates.begin(), dates.end()};
}

TargetDerivation derive_all_targets(const Cohort& cohort,
                                    const std::vector<AdmissionCourses>& courses,
                                    const AsiTable& asi) {
    TargetDerivation out;
    for (const auto& ac : courses) {
        const AdmissionRecord* adm = cohort.find_admission(ac.admission_id);
        if (!adm) throw InternalError("courses for unknown admission '" + ac.admission_id + "'");

        std::vector<TargetEvent> events;
        for (std::size_t c = 0; c < ac.courses.size(); ++c) {
            if (auto ev = label_iv_to_oral(ac.courses[c], c)) events.push_back(*ev);
            if (auto ev = label_discontinuation(ac.courses[c], c, *adm, ac.courses))
                events.push_back(*ev);
            if (auto ev = label_short_course(ac.courses[c], c)) events.push_back(*ev);
        }
        if (auto ev = label_deescalation(ac.courses, asi, &out.warnings)) events.push_back(*ev);

        std::sort(events.begin(), events.end(), [](const TargetEvent& a, const TargetEvent& b) {
            if (a.event_time != b.event_time) return a.event_time < b.event_time;
            return static_cast<int>(a.target) < static_cast<int>(b.target);
        });

        // day-level co-occurrence bookkeeping
        const auto dates = course_dates(ac.courses);
        out.total_patient_days += static_cast<std::int64_t>(dates.size());
        std::map<std::int64_t, unsigned> mask_by_date;
        for (std::int64_t d : dates) mask_by_date[d] = 0;
        for (const auto& [date, mask] : day_label_masks(events)) {
            const auto it = mask_by_date.find(date);
            if (it == mask_by_date.end())
                throw InternalError("target event on a non-enumerated day for admission '" +
                                    ac.admission_id + "'");
            it->second |= mask;
        }
        for (const auto& [date, mask] : mask_by_date) {
            out.combo_days[mask] += 1;
            for (Target t : kAllTargets)
                if (mask & (1u << static_cast<int>(t)))
                    out.positive_days[static_cast<int>(t)] += 1;
        }
        out.events.insert(out.events.end(), events.begin(), events.end());
    }
    for (int t = 0; t < kNumTargets; ++t)
        out.prevalence[t] = out.total_patient_days == 0
                                ? 0.0
                                : static_cast<double>(out.positive_days[t]) /
                                      static_cast<double>(out.total_patient_days);
    return out;
}

}  // namespace ams
