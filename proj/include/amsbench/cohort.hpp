#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "amsbench/time.hpp"

namespace ams {

/// Administration route of a prescription.
enum class Route { intravenous, oral, other };

std::string_view route_name(Route r);
std::optional<Route> route_from_name(std::string_view name);

/// One subject; a subject can have several admissions.
struct PatientRecord {
    std::string patient_id;
    std::string gender;     // categorical token, e.g. "F" / "M"
    double age_years = 0;   // age at first admission, >= 0

    bool operator==(const PatientRecord&) const = default;
};

/// One hospital stay. Times are half-open: the stay covers
/// [admit_time, discharge_time).
struct AdmissionRecord {
    std::string admission_id;
    std::string patient_id;
    Timestamp admit_time = 0;
    Timestamp discharge_time = 0;
    std::string admission_type;
    std::string ethnicity;
    std::string insurance;

    bool operator==(const AdmissionRecord&) const = default;
};

/// A timestamped measurement (vital sign or laboratory value).
struct EventRecord {
    std::string admission_id;
    std::string item_id;   // vocabulary key, see ItemVocab
    Timestamp timestamp = 0;
    double value = 0;      // finite

    bool operator==(const EventRecord&) const = default;
};

/// An antimicrobial order covering [start_time, end_time).
struct PrescriptionRecord {
    std::string admission_id;
    std::string atc_code;  // WHO ATC, e.g. "J01DH02"
    Route route = Route::other;
    Timestamp start_time = 0;
    Timestamp end_time = 0;

    bool operator==(const PrescriptionRecord&) const = default;
};

/// Measurement variable kinds drive which window aggregates are computed.
enum class ItemKind { vital, lab };

/// One in-scope measurement variable.
struct ItemDef {
    std::string item_id;
    std::string name;        // short column-name stem, e.g. "temp"
    ItemKind kind = ItemKind::vital;
    bool recent_90d = false; // also expose most-recent-in-90-days feature
};

/// The closed vocabulary of measurement variables. Events with item_ids
/// outside the vocabulary are quarantined at parse time.
class ItemVocab {
public:
    ItemVocab() = default;
    explicit ItemVocab(std::vector<ItemDef> items);

    /// Six bedside vitals and five laboratory tests used by the benchmark.
    static const ItemVocab& standard();

    const ItemDef* find(std::string_view item_id) const;
    const std::vector<ItemDef>& items() const { return items_; }

private:
    std::vector<ItemDef> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// A row dropped during parsing, with its provenance.
struct RejectRow {
    std::string table;     // file stem, e.g. "chartevents"
    std::int64_t line = 0; // 1-based line in the source file
    std::string reason;

    bool operator==(const RejectRow&) const = default;
};

/// Parse outcome bookkeeping: quarantined rows and soft warnings
/// (e.g. prescriptions whose ATC has no spectrum score).
struct ParseReport {
    std::vector<RejectRow> rejects;
    std::vector<std::string> warnings;
};

/// The in-memory cohort: four record tables plus lookup indexes.
/// Row order is preserved from the source files (or from generation),
/// so write_cohort(parse_cohort(x)) reproduces x byte-for-byte.
struct Cohort {
    std::vector<PatientRecord> patients;
    std::vector<AdmissionRecord> admissions;
    std::vector<EventRecord> events;             // chart + lab merged
    std::vector<PrescriptionRecord> prescriptions;

    bool operator==(const Cohort& other) const {
        return patients == other.patients && admissions == other.admissions &&
               events == other.events && prescriptions == other.prescriptions;
    }

    // --- derived indexes (rebuilt by reindex(), not part of equality) ---
    std::unordered_map<std::string, std::size_t> patient_index;
    std::unordered_map<std::string, std::size_t> admission_index;
    std::unordered_map<std::string, std::vector<std::size_t>> events_by_admission;
    std::unordered_map<std::string, std::vector<std::size_t>> rx_by_admission;

    void reindex();

    const AdmissionRecord* find_admission(std::string_view id) const;
    std::span<const std::size_t> admission_events(const std::string& admission_id) const;
    std::span<const std::size_t> admission_rx(const std::string& admission_id) const;
};

/// File locations for the five cohort tables.
struct CohortPaths {
    std::string patients;
    std::string admissions;
    std::string chartevents;
    std::string labevents;
    std::string prescriptions;

    static CohortPaths in_dir(const std::string& dir);
};

/// Reads and validates the five tables. Structural problems (malformed
/// timestamps, wrong column counts, bad headers) throw ParseError naming
/// file and line. Rows that are well-formed but violate referential or
/// range invariants (orphan admission_id, negative age, out-of-vocabulary
/// item, event outside its admission window, non-positive duration) are
/// quarantined into report->rejects and excluded from the cohort.
Cohort parse_cohort(const CohortPaths& paths, const ItemVocab& vocab, ParseReport* report);

/// Writes the five tables into `dir` (created if needed) plus rejects.csv
/// when `report` carries quarantined rows.
void write_cohort(const Cohort& cohort, const std::string& dir,
                  const ItemVocab& vocab, const ParseReport* report = nullptr);

}  // namespace ams
