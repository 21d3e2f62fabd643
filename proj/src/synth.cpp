#include "amsbench/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "amsbench/errors.hpp"
#include "amsbench/rng.hpp"

namespace ams {

void SynthConfig::validate() const {
    if (n_patients < 0) throw ConfigError("synth.n_patients must be >= 0");
    for (Target t : kAllTargets) {
        const double p = prevalence[static_cast<int>(t)];
        if (!(p >= 0.0 && p <= 1.0))
            throw ConfigError("synth.prevalence_" + std::string(target_name(t)) +
                              " must be in [0,1]");
    }
    if (!(los_median_days > 0)) throw ConfigError("synth.los_median_days must be > 0");
    if (!(los_iqr_low_days > 0 && los_iqr_high_days > los_iqr_low_days))
        throw ConfigError("synth.los_iqr must satisfy 0 < low < high");
    if (max_course_days < 1) throw ConfigError("synth.max_course_days must be >= 1");
    if (!(vitals_per_hour >= 0) || !(labs_per_hour >= 0))
        throw ConfigError("synth.sampling rates must be >= 0");
    if (!(signal_strength >= 0)) throw ConfigError("synth.signal_strength must be >= 0");
    if (!(confuser_rate >= 0 && confuser_rate <= 1))
        throw ConfigError("synth.confuser_rate must be in [0,1]");
    if (!(multi_admission_rate >= 0 && multi_admission_rate <= 1))
        throw ConfigError("synth.multi_admission_rate must be in [0,1]");
    if (anchor_hour < 0 || anchor_hour > 23) throw ConfigError("synth.anchor_hour must be 0..23");
}

namespace {

/// Physiologic baselines per vocabulary item (indexed like ItemVocab::standard()).
struct Baseline {
    double mean, sd, lo, hi;
};
constexpr Baseline kBaselines[] = {
    {37.0, 0.45, 34.0, 42.0},   // temp
    {120.0, 16.0, 40.0, 230.0}, // hr
    {28.0, 6.0, 8.0, 80.0},     // rr
    {97.0, 2.0, 60.0, 100.0},   // spo2
    {55.0, 8.0, 20.0, 120.0},   // dbp
    {95.0, 11.0, 40.0, 180.0},  // sbp
    {10.5, 3.0, 0.5, 60.0},     // wbc
    {22.0, 14.0, 0.1, 300.0},   // crp
    {0.8, 0.7, 0.01, 100.0},    // pct
    {1.6, 0.7, 0.2, 15.0},      // lactate
    {11.0, 1.5, 4.0, 20.0},     // hgb
};
enum Item { TEMP = 0, HR, RR, SPO2, DBP, SBP, WBC, CRP, PCT, LACTATE, HGB, kNumItems };

// Agents used by the course skeletons. The decoy palette is all ASI 5 and
// disjoint from the backbone agents, so concurrent decoy courses can never
// register as spectrum narrowing, and rotating through eight codes keeps
// same-agent decoys too far apart to gap-merge.
constexpr const char* kLongStayAgent = "J01CA01";   // ampicillin, ASI 2
constexpr const char* kShortStayAgent = "J01DB04";  // cefazolin, ASI 3 (short-course exempt)
constexpr const char* kSwitcherooAgent = "J01XA01"; // vancomycin, ASI 5
constexpr const char* kNarrowAgent = "J01CF04";     // oxacillin, ASI 1 (de-escalation trigger)
constexpr const char* kDecoyPalette[] = {"J01GB06", "J01GB03", "J01GB01", "J01XX08",
                                         "J01DD01", "J01DD04", "J01BA01", "J01AA02"};

/// An additive shift applied to one item's measurements inside [lo, hi).
struct Shift {
    Timestamp lo, hi;
    int item;
    double delta;
};

struct AdmissionPlan {
    AdmissionRecord record;
    std::vector<PrescriptionRecord> prescriptions;
    std::vector<Shift> shifts;
};

/// Lays out one admission: course skeleton realizing the planted targets,
/// then the signal shift windows. Pure function of `rng` and config.
AdmissionPlan plan_admission(const SynthConfig& cfg, Rng& rng, const std::string& patient_id,
                             const std::string& admission_id, std::int64_t day0) {
    const double p_iv = cfg.prevalence[static_cast<int>(Target::iv_to_oral)];
    const double p_de = cfg.prevalence[static_cast<int>(Target::deescalation)];
    const double p_dc = cfg.prevalence[static_cast<int>(Target::discontinuation)];
    const double p_sc = cfg.prevalence[static_cast<int>(Target::short_course)];

    // --- length of antibiotic therapy in days, log-normal ---
    const double sigma =
        (std::log(cfg.los_iqr_high_days) - std::log(cfg.los_iqr_low_days)) / (2.0 * 0.6744898);
    const double raw = std::exp(rng.normal(std::log(cfg.los_median_days), sigma));
    const int D = std::clamp(static_cast<int>(std::lround(raw)), 1, cfg.max_course_days);

    // --- plant targets ---
    // short-course: day-level thinning; a mark on the final day of a short
    // stay converts the backbone agent (cefazolin would be exempt), other
    // marks become concurrent decoy courses ending on that day.
    std::set<int> sc_days;
    for (int d = 0; d < D; ++d)
        if (rng.bernoulli(p_sc)) sc_days.insert(d);
    if (sc_days.count(0) && D >= 2) {
        sc_days.erase(0);
        sc_days.insert(1);  // day 0 cannot host a decoy; fold into day 1
    }

    const bool plant_iv = rng.bernoulli(std::min(1.0, p_iv * D));
    bool plant_de = rng.bernoulli(std::min(1.0, p_de * D));
    const bool plant_dc = rng.bernoulli(std::min(1.0, p_dc * D));

    // de-escalation trigger day; >= 2 leaves room for the fever motif
    int u = D <= 2 ? D - 1 : 2 + static_cast<int>(rng.uniform_int(D - 2));
    if (plant_de && plant_dc) {
        // the trigger course must not run past the backbone course, or it
        // would break the planted drug-free window; re-place or give way
        if (D >= 7) {
            u = 2 + static_cast<int>(rng.uniform_int(D - 6));  // u in [2, D-5]
        } else {
            plant_de = false;
        }
    }
    const int s = plant_iv && D >= 2 ? 1 + static_cast<int>(rng.uniform_int(D - 1)) : 0;

    AdmissionPlan plan;
    auto add_rx = [&](const char* atc, Route route, Timestamp lo, Timestamp hi) {
        plan.prescriptions.push_back({admission_id, atc, route, lo, hi});
    };

    // --- backbone course touching exactly dates day0 .. day0+D-1 ---
    const bool switcheroo = D <= 4 && sc_days.count(D - 1);
    if (switcheroo) sc_days.erase(D - 1);
    const char* backbone = switcheroo ? kSwitcherooAgent
                           : D <= 4   ? kShortStayAgent
                                      : kLongStayAgent;
    Timestamp backbone_end;
    if (D == 1) {
        // a single calendar day forces the exact-24h midnight-to-midnight form
        if (plant_iv) {
            add_rx(backbone, Route::intravenous, at_hour(day0, 0), at_hour(day0, 12));
            add_rx(backbone, Route::oral, at_hour(day0, 12), at_hour(day0 + 1, 0));
        } else {
            add_rx(backbone, Route::intravenous, at_hour(day0, 0), at_hour(day0 + 1, 0));
        }
        backbone_end = at_hour(day0 + 1, 0);
    } else {
        for (int d = 0; d < D; ++d) {
            const Route route = plant_iv && d >= s ? Route::oral : Route::intravenous;
            add_rx(backbone, route, at_hour(day0 + d, 10), at_hour(day0 + d, 22));
        }
        backbone_end = at_hour(day0 + D - 1, 22);
    }
    const Timestamp backbone_start = plan.prescriptions.front().start_time;

    // --- decoy short courses, one per remaining marked day ---
    int decoy_idx = 0;
    for (int d : sc_days) {
        const Timestamp end = at_hour(day0 + d, 19) + static_cast<Timestamp>(rng.uniform(0, 2 * kHour));
        const std::int64_t max_dur =
            std::min<std::int64_t>(90 * kHour, end - (backbone_start + kHour));
        const std::int64_t dur = 24 * kHour + static_cast<Timestamp>(
                                                  rng.uniform(0, static_cast<double>(max_dur - 24 * kHour)));
        add_rx(kDecoyPalette[decoy_idx % 8], Route::intravenous, end - dur, end);
        ++decoy_idx;
    }

    // --- de-escalation trigger: a narrow agent for exactly four days ---
    Timestamp therapy_end = backbone_end;
    if (plant_de) {
        const Timestamp lo = u == 0 ? at_hour(day0, 1) : at_hour(day0 + u, 0);
        const Timestamp hi = lo + 96 * kHour;
        add_rx(kNarrowAgent, Route::intravenous, lo, hi);
        therapy_end = std::max(therapy_end, hi);
    }

    // --- admission window ---
    const Timestamp admit = D == 1 ? at_hour(day0, 0)
                                   : at_hour(day0, 4) + static_cast<Timestamp>(
                                                            rng.uniform(0, 3.5 * kHour));
    const Timestamp discharge =
        plant_dc ? backbone_end + 73 * kHour + static_cast<Timestamp>(rng.uniform(0, 47 * kHour))
                 : therapy_end + static_cast<Timestamp>(rng.uniform(6 * kHour, 66 * kHour));
    plan.record = {admission_id, patient_id, admit, discharge, "", "", ""};

    // --- planted physiology, aligned to the anchor-ending windows ---
    const double str = cfg.signal_strength;
    auto shift_window = [&](std::int64_t date, int item, double delta) {
        const Timestamp hi = at_hour(date, cfg.anchor_hour);
        plan.shifts.push_back({hi - 24 * kHour, hi, item, delta * str});
    };
    std::set<int> positive_days;  // relative day offsets carrying any label
    // recovery signature before a short-course end (strong, single window)
    auto sc_all = sc_days;
    if (switcheroo) sc_all.insert(D - 1);
    for (int d : sc_all) {
        shift_window(day0 + d, TEMP, -0.9);
        shift_window(day0 + d, HR, -20.0);
        shift_window(day0 + d, RR, -6.0);
        shift_window(day0 + d, CRP, -14.0);
        shift_window(day0 + d, WBC, -2.5);
        positive_days.insert(d);
    }
    if (plant_dc) {  // settling before a clean stop
        shift_window(day0 + D - 1, TEMP, -0.5);
        shift_window(day0 + D - 1, HR, -10.0);
        shift_window(day0 + D - 1, CRP, -8.0);
        positive_days.insert(D - 1);
    }
    if (plant_iv) {  // stabilization before the oral switch
        shift_window(day0 + s, TEMP, -0.4);
        shift_window(day0 + s, RR, -3.0);
        shift_window(day0 + s, SPO2, 1.2);
        positive_days.insert(s);
    }
    if (plant_de) {
        // two days of fever resolving into the narrowing day: only the
        // multi-day shape separates this from the one-day decoy spikes
        shift_window(day0 + u - 2, TEMP, 1.7);
        shift_window(day0 + u - 2, HR, 26.0);
        shift_window(day0 + u - 2, WBC, 4.0);
        shift_window(day0 + u - 1, TEMP, 1.5);
        shift_window(day0 + u - 1, HR, 22.0);
        shift_window(day0 + u - 1, WBC, 3.5);
        shift_window(day0 + u, TEMP, 0.15);
        shift_window(day0 + u, HR, 2.0);
        positive_days.insert(u);
    }

    // decoy one-day spikes on unlabeled days (away from the fever motif)
    const int last_day = static_cast<int>(date_of(therapy_end - 1) - day0);
    for (int d = 0; d <= last_day; ++d) {
        if (positive_days.count(d)) continue;
        if (plant_de && d >= u - 2 && d <= u) continue;
        if (rng.bernoulli(cfg.confuser_rate)) {
            shift_window(day0 + d, TEMP, 1.6);
            shift_window(day0 + d, HR, 24.0);
            shift_window(day0 + d, WBC, 3.7);
        }
    }
    return plan;
}

}  // namespace

Cohort generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    const auto& vocab = ItemVocab::standard().items();
    if (vocab.size() != kNumItems) throw InternalError("vocabulary/baseline size mismatch");

    const Rng root(Rng::splitmix(cfg.seed ^ 0x5eedc0de0c0ffeeull));
    Cohort cohort;
    // accumulated in output-file order, so write + parse is an identity
    std::vector<EventRecord> charts, labs;

    const std::int64_t epoch_day0 = days_from_civil(2016, 1, 1);
    char idbuf[32];
    for (std::int64_t p = 0; p < cfg.n_patients; ++p) {
        Rng prng = root.fork("patient", static_cast<std::uint64_t>(p));

        std::snprintf(idbuf, sizeof idbuf, "P%06lld", static_cast<long long>(p));
        PatientRecord patient;
        patient.patient_id = idbuf;
        patient.gender = prng.bernoulli(0.5) ? "F" : "M";
        // infant-skewed pediatric age profile
        patient.age_years = std::clamp(std::exp(prng.normal(std::log(0.83), 1.2)), 0.02, 18.0);
        cohort.patients.push_back(patient);

        int n_adm = 1;
        if (prng.bernoulli(cfg.multi_admission_rate)) n_adm = prng.bernoulli(0.25) ? 3 : 2;

        std::int64_t day0 = epoch_day0 + static_cast<std::int64_t>(prng.uniform_int(730));
        for (int a = 0; a < n_adm; ++a) {
            Rng arng = prng.fork("admission", static_cast<std::uint64_t>(a));
            std::snprintf(idbuf, sizeof idbuf, "A%06lld-%d", static_cast<long long>(p), a + 1);
            AdmissionPlan plan =
                plan_admission(cfg, arng, patient.patient_id, idbuf, day0);
            plan.record.admission_type = arng.bernoulli(0.7) ? "emergency" : "elective";
            plan.record.ethnicity = arng.bernoulli(0.85) ? "group_a" : "group_b";
            plan.record.insurance = arng.bernoulli(0.6) ? "public" : "selfpay";
            cohort.admissions.push_back(plan.record);
            for (auto& rx : plan.prescriptions) cohort.prescriptions.push_back(std::move(rx));

            // measurements: per-item independent streams around the skeleton
            std::vector<EventRecord> chart_ev, lab_ev;
            for (int item = 0; item < kNumItems; ++item) {
                Rng erng = arng.fork("events", static_cast<std::uint64_t>(item));
                const Baseline& base = kBaselines[item];
                const bool vital = vocab[item].kind == ItemKind::vital;
                const double rate = (vital ? cfg.vitals_per_hour : cfg.labs_per_hour) / kHour;
                if (rate <= 0) continue;
                auto& sink = vital ? chart_ev : lab_ev;
                const double offset = erng.normal(0.0, 0.3 * base.sd);
                Timestamp t =
                    plan.record.admit_time + static_cast<Timestamp>(erng.exponential(rate));
                while (t <= plan.record.discharge_time) {
                    double delta = 0;
                    for (const auto& sh : plan.shifts)
                        if (sh.item == item && sh.lo <= t && t < sh.hi) delta += sh.delta;
                    const double value = std::clamp(
                        base.mean + offset + erng.normal(0.0, base.sd) + delta, base.lo, base.hi);
                    sink.push_back({plan.record.admission_id, vocab[item].item_id, t, value});
                    t += static_cast<Timestamp>(std::max(1.0, erng.exponential(rate)));
                }
            }
            const auto by_time = [](const EventRecord& x, const EventRecord& y) {
                if (x.timestamp != y.timestamp) return x.timestamp < y.timestamp;
                return x.item_id < y.item_id;
            };
            std::sort(chart_ev.begin(), chart_ev.end(), by_time);
            std::sort(lab_ev.begin(), lab_ev.end(), by_time);
            for (auto& ev : chart_ev) charts.push_back(std::move(ev));
            for (auto& ev : lab_ev) labs.push_back(std::move(ev));

            // next admission, if any, starts well clear of this one
            day0 = date_of(plan.record.discharge_time) + 120 +
                   static_cast<std::int64_t>(prng.uniform_int(240));
        }
    }
    cohort.events.reserve(charts.size() + labs.size());
    for (auto& ev : charts) cohort.events.push_back(std::move(ev));
    for (auto& ev : labs) cohort.events.push_back(std::move(ev));
    cohort.reindex();
    return cohort;
}

}  // namespace ams
