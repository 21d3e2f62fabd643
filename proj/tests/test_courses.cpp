#include <doctest.h>

#include "amsbench/asi.hpp"
#include "amsbench/courses.hpp"
#include "amsbench/rng.hpp"
#include "oracles.hpp"

using namespace ams;

TEST_SUITE_BEGIN("courses");

namespace {

const Timestamp kBase = parse_timestamp("2016-03-01T00:00:00");
Timestamp h(double x) { return kBase + static_cast<Timestamp>(x * kHour); }

PrescriptionRecord rx(const char* atc, Route route, double start_h, double end_h,
                      const char* adm = "A1") {
    return {adm, atc, route, h(start_h), h(end_h)};
}

}  // namespace

TEST_CASE("gap within threshold merges into one course") {
    const auto courses = merge_courses(std::vector{rx("J01DH02", Route::intravenous, 0, 24),
                                                   rx("J01DH02", Route::intravenous, 30, 48)});
    REQUIRE(courses.size() == 1);
    CHECK(courses[0].start_time == h(0));
    CHECK(courses[0].end_time == h(48));
    CHECK(courses[0].prescriptions.size() == 2);
}

TEST_CASE("gap over threshold splits; boundary gap still merges") {
    const auto split = merge_courses(std::vector{rx("J01DH02", Route::intravenous, 0, 24),
                                                 rx("J01DH02", Route::intravenous, 50, 80)});
    CHECK(split.size() == 2);

    // inclusive comparison: a gap of exactly 24h bridges
    const auto joined = merge_courses(std::vector{rx("J01DH02", Route::intravenous, 0, 24),
                                                  rx("J01DH02", Route::intravenous, 48, 72)});
    REQUIRE(joined.size() == 1);
    CHECK(joined[0].end_time == h(72));
}

TEST_CASE("sub-24h courses are dropped, exactly 24h survives") {
    CHECK(merge_courses(std::vector{rx("J01DH02", Route::intravenous, 0, 20)}).empty());
    const auto kept = merge_courses(std::vector{rx("J01DH02", Route::intravenous, 0, 24)});
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].duration() == 24 * kHour);
}

TEST_CASE("overlapping courses of different agents are all retained") {
    const auto courses = merge_courses(std::vector{rx("J01DH02", Route::intravenous, 0, 48),
                                                   rx("J01XA01", Route::intravenous, 10, 60)});
    CHECK(courses.size() == 2);
}

TEST_CASE("merging is idempotent") {
    const auto once = merge_courses(std::vector{rx("J01DH02", Route::intravenous, 0, 24),
                                                rx("J01DH02", Route::intravenous, 30, 48),
                                                rx("J01XA01", Route::intravenous, 5, 40)});
    std::vector<PrescriptionRecord> as_rx;
    for (const auto& c : once)
        as_rx.push_back({c.admission_id, c.atc_code, Route::intravenous, c.start_time, c.end_time});
    const auto twice = merge_courses(as_rx);
    REQUIRE(twice.size() == once.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(twice[i].atc_code == once[i].atc_code);
        CHECK(twice[i].start_time == once[i].start_time);
        CHECK(twice[i].end_time == once[i].end_time);
    }
}

TEST_CASE("merge agrees with union-find oracle on random prescription sets") {
    Rng rng(2024);
    const char* atcs[] = {"J01DH02", "J01XA01", "J01DB04"};
    for (int iter = 0; iter < 500; ++iter) {
        std::vector<PrescriptionRecord> rxs;
        const int n = static_cast<int>(rng.uniform_int(13));
        for (int i = 0; i < n; ++i) {
            const double start = rng.uniform(0, 300);
            const double dur = rng.uniform(1, 80);
            rxs.push_back(rx(atcs[rng.uniform_int(3)], Route::intravenous, start, start + dur));
        }
        const auto expect = oracle::merge_courses_bruteforce(rxs);
        const auto got = merge_courses(rxs);
        REQUIRE(got.size() == expect.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].atc_code == expect[i].atc);
            CHECK(got[i].start_time == expect[i].start);
            CHECK(got[i].end_time == expect[i].end);
        }
    }
}

TEST_CASE("iv_to_oral fires at the first non-IV start preceded by IV") {
    auto course = [&](std::vector<PrescriptionRecord> v) {
        const auto courses = merge_courses(v);
        REQUIRE(courses.size() == 1);
        return courses[0];
    };
    const auto switch_course = course({rx("J01DH02", Route::intravenous, 0, 30),
                                       rx("J01DH02", Route::oral, 50, 80)});
    const auto ev = label_iv_to_oral(switch_course, 0);
    REQUIRE(ev.has_value());
    CHECK(ev->event_time == h(50));
    CHECK(ev->target == Target::iv_to_oral);

    const auto reversed = course({rx("J01DH02", Route::oral, 0, 30),
                                  rx("J01DH02", Route::intravenous, 30, 60)});
    CHECK_FALSE(label_iv_to_oral(reversed, 0).has_value());

    const auto single_route = course({rx("J01DH02", Route::intravenous, 0, 30),
                                      rx("J01DH02", Route::intravenous, 24, 60)});
    CHECK_FALSE(label_iv_to_oral(single_route, 0).has_value());

    // "other" counts as non-intravenous formulation
    const auto other_route = course({rx("J01DH02", Route::intravenous, 0, 30),
                                     rx("J01DH02", Route::other, 40, 70)});
    CHECK(label_iv_to_oral(other_route, 0).has_value());
}

TEST_CASE("deescalation keys on strictly lower spectrum score of a new agent") {
    const AsiTable& asi = AsiTable::builtin();

    // imipenem (ASI 10) running, penicillin (ASI 2) added at 40h
    auto courses = merge_courses(std::vector{rx("J01DH51", Route::intravenous, 0, 96),
                                             rx("J01CE01", Route::oral, 40, 70)});
    auto ev = label_deescalation(courses, asi);
    REQUIRE(ev.has_value());
    CHECK(ev->event_time == h(40));
    CHECK(ev->target == Target::deescalation);

    // equal score is not a narrowing: amikacin (5) → gentamicin (5)
    courses = merge_courses(std::vector{rx("J01GB06", Route::intravenous, 0, 96),
                                        rx("J01GB03", Route::intravenous, 40, 70)});
    CHECK_FALSE(label_deescalation(courses, asi).has_value());

    // single course cannot de-escalate
    courses = merge_courses(std::vector{rx("J01DH51", Route::intravenous, 0, 96)});
    CHECK_FALSE(label_deescalation(courses, asi).has_value());

    // continuation prescriptions of an active agent never trigger
    courses = merge_courses(std::vector{rx("J01DH51", Route::intravenous, 0, 96),
                                        rx("J01CE01", Route::oral, 40, 70),
                                        rx("J01CE01", Route::oral, 60, 90)});
    ev = label_deescalation(courses, asi);
    REQUIRE(ev.has_value());
    CHECK(ev->event_time == h(40));  // first qualifying event only

    // unmapped active agent is excluded from the comparison, with a warning
    std::vector<std::string> warnings;
    courses = merge_courses(std::vector{rx("J02AC01", Route::intravenous, 0, 96),
                                        rx("J01CE01", Route::oral, 40, 70)});
    CHECK_FALSE(label_deescalation(courses, asi, &warnings).has_value());
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("J02AC01") != std::string::npos);
}

TEST_CASE("discontinuation needs 72h left and a drug-free follow-up window") {
    const auto courses = merge_courses(std::vector{rx("J01DH02", Route::intravenous, 0, 48)});
    REQUIRE(courses.size() == 1);
    AdmissionRecord adm{"A1", "P1", h(0), h(48 + 80), "", "", ""};

    auto ev = label_discontinuation(courses[0], 0, adm, courses);
    REQUIRE(ev.has_value());
    CHECK(ev->event_time == h(48));
    CHECK(ev->label_date == date_of(h(48) - 1));  // final day of the course

    adm.discharge_time = h(48 + 48);  // only 48h remaining
    CHECK_FALSE(label_discontinuation(courses[0], 0, adm, courses).has_value());

    adm.discharge_time = h(48 + 72);  // exactly 72h remaining qualifies
    CHECK(label_discontinuation(courses[0], 0, adm, courses).has_value());

    // an overlapping agent in the follow-up window blocks the event
    const auto both = merge_courses(std::vector{rx("J01DH02", Route::intravenous, 0, 48),
                                                rx("J01XA01", Route::intravenous, 38, 78)});
    REQUIRE(both.size() == 2);
    adm.discharge_time = h(48 + 200);
    CHECK_FALSE(label_discontinuation(both[0], 0, adm, both).has_value());
    // ... and the blocking course itself ends with free air after it
    CHECK(label_discontinuation(both[1], 1, adm, both).has_value());
}

TEST_CASE("short course is (24h, 96h) excluding the prophylaxis agent") {
    auto one = [&](const char* atc, double dur) {
        const auto courses = merge_courses(std::vector{rx(atc, Route::intravenous, 0, dur)});
        REQUIRE(courses.size() == 1);
        return courses[0];
    };
    auto ev = label_short_course(one("J01GB06", 60), 0);
    REQUIRE(ev.has_value());
    CHECK(ev->event_time == h(60));
    CHECK(ev->label_date == date_of(h(60) - 1));

    CHECK_FALSE(label_short_course(one("J01GB06", 100), 0).has_value());
    CHECK_FALSE(label_short_course(one("J01GB06", 96), 0).has_value());  // boundary: 96h is not short
    CHECK_FALSE(label_short_course(one("J01DB04", 60), 0).has_value());  // cefazolin exempt
}

TEST_CASE("derive_all_targets on a hand-traced three-admission fixture") {
    Cohort c;
    c.patients = {{"P1", "F", 3}, {"P2", "M", 1}, {"P3", "F", 7}};
    c.admissions = {
        {"A1", "P1", h(0), h(108), "emergency", "e", "i"},
        {"A2", "P2", h(0), h(150), "emergency", "e", "i"},
        {"A3", "P3", h(0), h(130), "emergency", "e", "i"},
    };
    // A1: one gentamicin course [0,60) switching IV→oral at 30h; short (60h)
    c.prescriptions.push_back(rx("J01GB03", Route::intravenous, 0, 30, "A1"));
    c.prescriptions.push_back(rx("J01GB03", Route::oral, 30, 60, "A1"));
    // A2: imipenem [0,96) with penicillin [40,140) → de-escalation at 40h
    c.prescriptions.push_back(rx("J01DH51", Route::intravenous, 0, 96, "A2"));
    c.prescriptions.push_back(rx("J01CE01", Route::oral, 40, 140, "A2"));
    // A3: cefazolin [0,48), discharge 130h → discontinuation at 48h only
    c.prescriptions.push_back(rx("J01DB04", Route::intravenous, 0, 48, "A3"));
    c.reindex();

    const auto courses = merge_all_courses(c);
    const auto derived = derive_all_targets(c, courses, AsiTable::builtin());

    REQUIRE(derived.events.size() == 4);
    CHECK(derived.events[0].admission_id == "A1");
    CHECK(derived.events[0].target == Target::iv_to_oral);
    CHECK(derived.events[0].event_time == h(30));
    CHECK(derived.events[1].admission_id == "A1");
    CHECK(derived.events[1].target == Target::short_course);
    CHECK(derived.events[1].event_time == h(60));
    CHECK(derived.events[2].admission_id == "A2");
    CHECK(derived.events[2].target == Target::deescalation);
    CHECK(derived.events[2].event_time == h(40));
    CHECK(derived.events[3].admission_id == "A3");
    CHECK(derived.events[3].target == Target::discontinuation);
    CHECK(derived.events[3].event_time == h(48));

    // patient-days: A1 covers dates 0-2 (ends 60h), A2 dates 0-5 (140h),
    // A3 dates 0-1 → 11 days, one positive day per target
    CHECK(derived.total_patient_days == 11);
    for (int t = 0; t < kNumTargets; ++t) {
        CHECK(derived.positive_days[t] == 1);
        CHECK(derived.prevalence[t] == doctest::Approx(1.0 / 11));
    }
    CHECK(derived.combo_days[0] == 7);
    CHECK(derived.combo_days[1] == 1);
    CHECK(derived.combo_days[2] == 1);
    CHECK(derived.combo_days[4] == 1);
    CHECK(derived.combo_days[8] == 1);
}

TEST_CASE("derive_all_targets on an empty cohort") {
    Cohort c;
    c.reindex();
    const auto derived = derive_all_targets(c, merge_all_courses(c), AsiTable::builtin());
    CHECK(derived.events.empty());
    CHECK(derived.total_patient_days == 0);
    for (int t = 0; t < kNumTargets; ++t) CHECK(derived.prevalence[t] == 0.0);
}

TEST_CASE("builtin spectrum table equals the shipped csv") {
    const AsiTable from_csv = AsiTable::load_csv(std::string(AMSBENCH_DATA_DIR) + "/asi_map.csv");
    const auto& a = AsiTable::builtin().rows();
    const auto& b = from_csv.rows();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].atc == b[i].atc);
        CHECK(a[i].label == b[i].label);
        CHECK(a[i].asi == b[i].asi);
    }
    // spot checks against the source table
    CHECK(AsiTable::builtin().asi("J01DH51") == 10);
    CHECK(AsiTable::builtin().asi("J01CE01") == 2);
    CHECK(AsiTable::builtin().asi("J01AA12") == 13);
    CHECK(AsiTable::builtin().asi("J01CF04") == 1);
    CHECK_FALSE(AsiTable::builtin().asi("J02AC01").has_value());  // tracked, no score
    CHECK_FALSE(AsiTable::builtin().asi("ZZZ").has_value());      // unknown
    CHECK(AsiTable::builtin().contains("J02AC01"));
    CHECK_FALSE(AsiTable::builtin().contains("ZZZ"));
}

TEST_SUITE_END();
