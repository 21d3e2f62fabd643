#include "amsbench/cohort.hpp"

#include <cmath>
#include <filesystem>

#include "amsbench/csv.hpp"
#include "amsbench/errors.hpp"

namespace ams {

namespace {

constexpr std::string_view kPatientsHeader[] = {"patient_id", "gender", "age_years"};
constexpr std::string_view kAdmissionsHeader[] = {"admission_id", "patient_id",  "admit_time",
                                                  "discharge_time", "admission_type", "ethnicity",
                                                  "insurance"};
constexpr std::string_view kEventsHeader[] = {"admission_id", "item_id", "timestamp", "value"};
constexpr std::string_view kRxHeader[] = {"admission_id", "atc_code", "route", "start_time",
                                          "end_time"};

}  // namespace

std::string_view route_name(Route r) {
    switch (r) {
        case Route::intravenous: return "intravenous";
        case Route::oral: return "oral";
        case Route::other: return "other";
    }
    return "other";
}

std::optional<Route> route_from_name(std::string_view name) {
    if (name == "intravenous") return Route::intravenous;
    if (name == "oral") return Route::oral;
    if (name == "other") return Route::other;
    return std::nullopt;
}

ItemVocab::ItemVocab(std::vector<ItemDef> items) : items_(std::move(items)) {
    for (std::size_t i = 0; i < items_.size(); ++i) index_.emplace(items_[i].item_id, i);
}

const ItemVocab& ItemVocab::standard() {
    static const ItemVocab vocab(std::vector<ItemDef>{
        // bedside vitals (charted)
        {"1001", "temp", ItemKind::vital, false},
        {"1003", "hr", ItemKind::vital, false},
        {"1004", "rr", ItemKind::vital, false},
        {"1006", "spo2", ItemKind::vital, false},
        {"1015", "dbp", ItemKind::vital, false},
        {"1016", "sbp", ItemKind::vital, false},
        // laboratory tests; the three infection markers also expose a
        // most-recent-in-90-days feature
        {"26464-8", "wbc", ItemKind::lab, true},
        {"32264", "crp", ItemKind::lab, true},
        {"33959-8", "pct", ItemKind::lab, true},
        {"2532-0", "lactate", ItemKind::lab, false},
        {"718-7", "hgb", ItemKind::lab, false},
    });
    return vocab;
}

const ItemDef* ItemVocab::find(std::string_view item_id) const {
    const auto it = index_.find(std::string(item_id));
    return it == index_.end() ? nullptr : &items_[it->second];
}

void Cohort::reindex() {
    patient_index.clear();
    admission_index.clear();
    events_by_admission.clear();
    rx_by_admission.clear();
    for (std::size_t i = 0; i < patients.size(); ++i)
        patient_index.emplace(patients[i].patient_id, i);
    for (std::size_t i = 0; i < admissions.size(); ++i)
        admission_index.emplace(admissions[i].admission_id, i);
    for (std::size_t i = 0; i < events.size(); ++i)
        events_by_admission[events[i].admission_id].push_back(i);
    for (std::size_t i = 0; i < prescriptions.size(); ++i)
        rx_by_admission[prescriptions[i].admission_id].push_back(i);
}

const AdmissionRecord* Cohort::find_admission(std::string_view id) const {
    const auto it = admission_index.find(std::string(id));
    return it == admission_index.end() ? nullptr : &admissions[it->second];
}

std::span<const std::size_t> Cohort::admission_events(const std::string& admission_id) const {
    static const std::vector<std::size_t> kEmpty;
    const auto it = events_by_admission.find(admission_id);
    return it == events_by_admission.end() ? kEmpty : it->second;
}

std::span<const std::size_t> Cohort::admission_rx(const std::string& admission_id) const {
    static const std::vector<std::size_t> kEmpty;
    const auto it = rx_by_admission.find(admission_id);
    return it == rx_by_admission.end() ? kEmpty : it->second;
}

CohortPaths CohortPaths::in_dir(const std::string& dir) {
    return CohortPaths{
        dir + "/patients.csv",     dir + "/admissions.csv",    dir + "/chartevents.csv",
        dir + "/labevents.csv",    dir + "/prescriptions.csv",
    };
}

namespace {

std::string table_stem(const std::string& path) {
    return std::filesystem::path(path).stem().string();
}

void parse_events_file(const std::string& path, ItemKind expected_kind, const ItemVocab& vocab,
                       Cohort& cohort, ParseReport* report) {
    CsvReader reader(path, kEventsHeader);
    const std::string table = table_stem(path);
    std::vector<std::string> f;
    while (reader.next(f)) {
        const std::string ctx = path + ":" + std::to_string(reader.record_line());
        EventRecord ev;
        ev.admission_id = f[0];
        ev.item_id = f[1];
        ev.timestamp = parse_timestamp(f[2]);  // malformed timestamp is a hard error
        ev.value = parse_double(f[3], ctx);

        const AdmissionRecord* adm = cohort.find_admission(ev.admission_id);
        const ItemDef* item = vocab.find(ev.item_id);
        std::string reason;
        if (!adm)
            reason = "unknown admission_id '" + ev.admission_id + "'";
        else if (!item)
            reason = "unknown item_id '" + ev.item_id + "'";
        else if (item->kind != expected_kind)
            reason = "item '" + ev.item_id + "' does not belong in " + table;
        else if (!std::isfinite(ev.value))
            reason = "non-finite value";
        else if (ev.timestamp < adm->admit_time || ev.timestamp > adm->discharge_time)
            reason = "timestamp outside admission window";
        if (!reason.empty()) {
            if (report) report->rejects.push_back({table, reader.record_line(), reason});
            continue;
        }
        cohort.events.push_back(std::move(ev));
    }
}

}  // namespace

Cohort parse_cohort(const CohortPaths& paths, const ItemVocab& vocab, ParseReport* report) {
    Cohort cohort;

    {
        CsvReader reader(paths.patients, kPatientsHeader);
        std::vector<std::string> f;
        while (reader.next(f)) {
            const std::string ctx = paths.patients + ":" + std::to_string(reader.record_line());
            PatientRecord p{f[0], f[1], parse_double(f[2], ctx)};
            std::string reason;
            if (p.patient_id.empty())
                reason = "empty patient_id";
            else if (cohort.patient_index.count(p.patient_id))
                reason = "duplicate patient_id '" + p.patient_id + "'";
            else if (!std::isfinite(p.age_years) || p.age_years < 0)
                reason = "age_years out of range";
            if (!reason.empty()) {
                if (report) report->rejects.push_back({"patients", reader.record_line(), reason});
                continue;
            }
            cohort.patient_index.emplace(p.patient_id, cohort.patients.size());
            cohort.patients.push_back(std::move(p));
        }
    }

    {
        CsvReader reader(paths.admissions, kAdmissionsHeader);
        std::vector<std::string> f;
        while (reader.next(f)) {
            AdmissionRecord a;
            a.admission_id = f[0];
            a.patient_id = f[1];
            a.admit_time = parse_timestamp(f[2]);
            a.discharge_time = parse_timestamp(f[3]);
            a.admission_type = f[4];
            a.ethnicity = f[5];
            a.insurance = f[6];
            std::string reason;
            if (a.admission_id.empty())
                reason = "empty admission_id";
            else if (cohort.admission_index.count(a.admission_id))
                reason = "duplicate admission_id '" + a.admission_id + "'";
            else if (!cohort.patient_index.count(a.patient_id))
                reason = "unknown patient_id '" + a.patient_id + "'";
            else if (a.discharge_time <= a.admit_time)
                reason = "discharge_time not after admit_time";
            if (!reason.empty()) {
                if (report) report->rejects.push_back({"admissions", reader.record_line(), reason});
                continue;
            }
            cohort.admission_index.emplace(a.admission_id, cohort.admissions.size());
            cohort.admissions.push_back(std::move(a));
        }
    }

    parse_events_file(paths.chartevents, ItemKind::vital, vocab, cohort, report);
    parse_events_file(paths.labevents, ItemKind::lab, vocab, cohort, report);

    {
        CsvReader reader(paths.prescriptions, kRxHeader);
        std::vector<std::string> f;
        while (reader.next(f)) {
            PrescriptionRecord rx;
            rx.admission_id = f[0];
            rx.atc_code = f[1];
            const auto route = route_from_name(f[2]);
            rx.start_time = parse_timestamp(f[3]);
            rx.end_time = parse_timestamp(f[4]);

            std::string reason;
            if (!cohort.admission_index.count(rx.admission_id))
                reason = "unknown admission_id '" + rx.admission_id + "'";
            else if (rx.atc_code.empty())
                reason = "empty atc_code";
            else if (!route)
                reason = "unknown route '" + f[2] + "'";
            else if (rx.end_time <= rx.start_time)
                reason = "end_time not after start_time";
            if (!reason.empty()) {
                if (report)
                    report->rejects.push_back({"prescriptions", reader.record_line(), reason});
                continue;
            }
            rx.route = *route;
            cohort.prescriptions.push_back(std::move(rx));
        }
    }

    cohort.reindex();
    return cohort;
}

void write_cohort(const Cohort& cohort, const std::string& dir, const ItemVocab& vocab,
                  const ParseReport* report) {
    std::filesystem::create_directories(dir);
    const CohortPaths paths = CohortPaths::in_dir(dir);

    {
        CsvWriter w(paths.patients);
        w.write_row({"patient_id", "gender", "age_years"});
        for (const auto& p : cohort.patients)
            w.write_row({p.patient_id, p.gender, format_double(p.age_years)});
    }
    {
        CsvWriter w(paths.admissions);
        w.write_row({"admission_id", "patient_id", "admit_time", "discharge_time",
                     "admission_type", "ethnicity", "insurance"});
        for (const auto& a : cohort.admissions)
            w.write_row({a.admission_id, a.patient_id, format_timestamp(a.admit_time),
                         format_timestamp(a.discharge_time), a.admission_type, a.ethnicity,
                         a.insurance});
    }
    {
        CsvWriter chart(paths.chartevents);
        CsvWriter lab(paths.labevents);
        const std::string_view header[] = {"admission_id", "item_id", "timestamp", "value"};
        chart.write_row(std::span<const std::string_view>(header));
        lab.write_row(std::span<const std::string_view>(header));
        for (const auto& ev : cohort.events) {
            const ItemDef* item = vocab.find(ev.item_id);
            if (!item) throw InternalError("event with out-of-vocabulary item '" + ev.item_id + "'");
            CsvWriter& w = item->kind == ItemKind::vital ? chart : lab;
            w.write_row({ev.admission_id, ev.item_id, format_timestamp(ev.timestamp),
                         format_double(ev.value)});
        }
    }
    {
        CsvWriter w(paths.prescriptions);
        w.write_row({"admission_id", "atc_code", "route", "start_time", "end_time"});
        for (const auto& rx : cohort.prescriptions)
            w.write_row({rx.admission_id, rx.atc_code, route_name(rx.route),
                         format_timestamp(rx.start_time), format_timestamp(rx.end_time)});
    }
    if (report && !report->rejects.empty()) {
        CsvWriter w(dir + "/rejects.csv");
        w.write_row({"table", "line", "reason"});
        for (const auto& r : report->rejects)
            w.write_row({r.table, std::to_string(r.line), r.reason});
    }
}

}  // namespace ams
