#include "amsbench/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "amsbench/csv.hpp"
#include "amsbench/errors.hpp"

namespace ams {

void FeaturizerConfig::validate() const {
    if (anchor_hour < 0 || anchor_hour > 23)
        throw ConfigError("featurizer.anchor_hour must be 0..23");
    if (window_hours <= 0) throw ConfigError("featurizer.window_hours must be > 0");
    if (grid_bins <= 0) throw ConfigError("featurizer.grid_bins must be > 0");
    if ((static_cast<std::int64_t>(window_hours) * kHour) % grid_bins != 0)
        throw ConfigError("featurizer.grid_bins must divide the window evenly");
    if (high_priority_asi <= 0) throw ConfigError("featurizer.high_priority_asi must be > 0");
    if (recent_days <= 0) throw ConfigError("featurizer.recent_days must be > 0");
}

FeatureSchema::FeatureSchema(std::vector<FeatureDef> defs) : defs_(std::move(defs)) {
    for (std::size_t i = 0; i < defs_.size(); ++i) {
        if (!index_.emplace(defs_[i].name, i).second)
            throw InternalError("duplicate feature name '" + defs_[i].name + "'");
    }
}

std::size_t FeatureSchema::index_of(std::string_view name) const {
    const auto it = index_.find(std::string(name));
    if (it == index_.end()) throw InternalError("unknown feature '" + std::string(name) + "'");
    return it->second;
}

FeatureSchema FeatureSchema::standard(const ItemVocab& vocab, const AsiTable& asi,
                                      const FeaturizerConfig& config) {
    config.validate();
    std::vector<FeatureDef> defs;
    auto add = [&](std::string name, FeatureKind kind, std::string item = "",
                   std::string agg = "") {
        defs.push_back({std::move(name), kind, std::move(item), std::move(agg)});
    };

    add("age_years", FeatureKind::statics);
    add("gender_f", FeatureKind::statics);
    add("adm_emergency", FeatureKind::statics);
    add("los_hours", FeatureKind::statics);

    add("hours_since_abx_start", FeatureKind::exposure);
    add("distinct_atc_ever", FeatureKind::exposure);
    add("concurrent_atc_day", FeatureKind::exposure);
    add("high_priority_atc_ever", FeatureKind::exposure);
    add("any_oral_rx_last_3d", FeatureKind::exposure);
    add("primary_asi", FeatureKind::exposure);

    // the day's broadest active agent, one column per scored code
    std::set<std::string> scored;
    for (const auto& row : asi.rows())
        if (row.asi) scored.insert(row.atc);
    for (const auto& atc : scored) add("primary_atc_" + atc, FeatureKind::one_hot);

    for (const auto& item : vocab.items()) {
        const bool vital = item.kind == ItemKind::vital;
        for (const char* agg : {"sum", "mean", "n"})
            add(item.name + "_" + agg, FeatureKind::window_aggregate, item.item_id, agg);
        if (vital) {
            add(item.name + "_min", FeatureKind::window_aggregate, item.item_id, "min");
            add(item.name + "_max", FeatureKind::window_aggregate, item.item_id, "max");
        }
        add(item.name + "_missing", FeatureKind::window_aggregate, item.item_id);
    }
    for (const auto& item : vocab.items()) {
        if (!item.recent_90d) continue;
        add(item.name + "_recent_90d", FeatureKind::window_aggregate, item.item_id, "recent_90d");
        add(item.name + "_recent_90d_missing", FeatureKind::window_aggregate, item.item_id);
    }
    for (const auto& item : vocab.items()) {
        if (item.kind != ItemKind::vital) continue;
        add(item.name + "_delta_prev_day_max", FeatureKind::trend, item.item_id);
        add(item.name + "_delta_prev_day_max_missing", FeatureKind::trend, item.item_id);
        add(item.name + "_delta_abx_start_max", FeatureKind::trend, item.item_id);
        add(item.name + "_delta_abx_start_max_missing", FeatureKind::trend, item.item_id);
        add(item.name + "_var_3d", FeatureKind::trend, item.item_id);
        add(item.name + "_var_3d_missing", FeatureKind::trend, item.item_id);
    }
    return FeatureSchema(std::move(defs));
}

namespace {

struct WindowStats {
    std::int64_t n = 0;
    double sum = 0, min = 0, max = 0;
    double mean() const { return n == 0 ? 0.0 : sum / static_cast<double>(n); }
};

/// One admission's measurements, split per vocabulary item and time-sorted.
struct SeriesIndex {
    std::vector<std::vector<std::pair<Timestamp, double>>> by_item;

    SeriesIndex(const Cohort& cohort, const std::string& admission_id, const ItemVocab& vocab) {
        by_item.resize(vocab.items().size());
        std::unordered_map<std::string_view, std::size_t> pos;
        for (std::size_t i = 0; i < vocab.items().size(); ++i)
            pos.emplace(vocab.items()[i].item_id, i);
        for (const std::size_t e : cohort.admission_events(admission_id)) {
            const EventRecord& ev = cohort.events[e];
            const auto it = pos.find(ev.item_id);
            if (it == pos.end())
                throw InternalError("event item '" + ev.item_id + "' not in vocabulary");
            by_item[it->second].emplace_back(ev.timestamp, ev.value);
        }
        // stable: simultaneous observations keep their source order, so the
        // grid's last-value-per-bin rule stays deterministic
        for (auto& series : by_item)
            std::stable_sort(series.begin(), series.end(),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
    }

    WindowStats stats(std::size_t item, Timestamp lo, Timestamp hi) const {
        WindowStats w;
        const auto& s = by_item[item];
        auto it = std::lower_bound(s.begin(), s.end(), lo,
                                   [](const auto& p, Timestamp t) { return p.first < t; });
        for (; it != s.end() && it->first < hi; ++it) {
            if (w.n == 0) {
                w.min = w.max = it->second;
            } else {
                w.min = std::min(w.min, it->second);
                w.max = std::max(w.max, it->second);
            }
            w.sum += it->second;
            ++w.n;
        }
        return w;
    }

    /// Latest value strictly before `hi`, no older than `lo`.
    std::optional<double> latest(std::size_t item, Timestamp lo, Timestamp hi) const {
        const auto& s = by_item[item];
        auto it = std::lower_bound(s.begin(), s.end(), hi,
                                   [](const auto& p, Timestamp t) { return p.first < t; });
        if (it == s.begin()) return std::nullopt;
        --it;
        if (it->first < lo) return std::nullopt;
        return it->second;
    }
};

}  // namespace

std::vector<PatientDay> featurize_admission(const Cohort& cohort, const AdmissionCourses& courses,
                                            std::span<const TargetEvent> events,
                                            const FeatureSchema& schema, const AsiTable& asi,
                                            const FeaturizerConfig& config) {
    config.validate();
    const AdmissionRecord* adm = cohort.find_admission(courses.admission_id);
    if (!adm) throw InternalError("featurize: unknown admission '" + courses.admission_id + "'");
    const auto pit = cohort.patient_index.find(adm->patient_id);
    if (pit == cohort.patient_index.end())
        throw InternalError("featurize: unknown patient '" + adm->patient_id + "'");
    const PatientRecord& patient = cohort.patients[pit->second];

    const auto dates = course_dates(courses.courses);
    if (dates.empty()) return {};

    const ItemVocab& vocab = ItemVocab::standard();
    const SeriesIndex series(cohort, courses.admission_id, vocab);
    const auto masks = day_label_masks(events);
    const std::int64_t window = static_cast<std::int64_t>(config.window_hours) * kHour;

    std::vector<PatientDay> rows;
    rows.reserve(dates.size());
    for (std::size_t di = 0; di < dates.size(); ++di) {
        const std::int64_t date = dates[di];
        PatientDay row;
        row.admission_id = courses.admission_id;
        row.patient_id = adm->patient_id;
        row.day_index = static_cast<int>(di);
        row.date = date;
        row.day_start = at_hour(date, config.anchor_hour);
        row.features.assign(schema.size(), 0.0);
        auto set = [&](std::string_view name, double v) {
            row.features[schema.index_of(name)] = v;
        };

        set("age_years", patient.age_years);
        set("gender_f", patient.gender == "F" ? 1 : 0);
        set("adm_emergency", adm->admission_type == "emergency" ? 1 : 0);
        set("los_hours", static_cast<double>(row.day_start - adm->admit_time) / kHour);

        // --- exposure: the day's antibiotic context ---
        const Timestamp date_lo = at_hour(date, 0);
        const Timestamp date_hi = at_hour(date + 1, 0);
        Timestamp earliest_active = 0;
        bool any_active = false;
        std::set<std::string_view> active_atc, ever_atc;
        bool high_ever = false;
        int primary_asi = -1;
        std::string_view primary_atc;
        for (const auto& c : courses.courses) {
            if (c.start_time < date_hi) {
                ever_atc.insert(c.atc_code);
                if (const auto s = asi.asi(c.atc_code); s && *s >= config.high_priority_asi)
                    high_ever = true;
            }
            if (!c.overlaps(date_lo, date_hi)) continue;
            active_atc.insert(c.atc_code);
            if (!any_active || c.start_time < earliest_active) earliest_active = c.start_time;
            any_active = true;
            if (const auto s = asi.asi(c.atc_code)) {
                // broadest active agent; ties break to the smaller code
                if (*s > primary_asi || (*s == primary_asi && c.atc_code < primary_atc)) {
                    primary_asi = *s;
                    primary_atc = c.atc_code;
                }
            }
        }
        if (!any_active)
            throw InternalError("enumerated day without an active course for admission '" +
                                courses.admission_id + "'");
        set("hours_since_abx_start",
            static_cast<double>(row.day_start - earliest_active) / kHour);
        set("distinct_atc_ever", static_cast<double>(ever_atc.size()));
        set("concurrent_atc_day", static_cast<double>(active_atc.size()));
        set("high_priority_atc_ever", high_ever ? 1 : 0);
        if (primary_asi >= 0) {
            set("primary_asi", primary_asi);
            set("primary_atc_" + std::string(primary_atc), 1);
        }

        bool oral_3d = false;
        for (const std::size_t r : cohort.admission_rx(courses.admission_id)) {
            const PrescriptionRecord& rx = cohort.prescriptions[r];
            if (rx.route == Route::oral && rx.start_time >= row.day_start - 72 * kHour &&
                rx.start_time < row.day_start)
                oral_3d = true;
        }
        set("any_oral_rx_last_3d", oral_3d ? 1 : 0);

        // --- 24h window aggregates ---
        const Timestamp w_lo = row.day_start - window;
        for (std::size_t i = 0; i < vocab.items().size(); ++i) {
            const auto& item = vocab.items()[i];
            const WindowStats w = series.stats(i, w_lo, row.day_start);
            set(item.name + "_sum", w.sum);
            set(item.name + "_mean", w.mean());
            set(item.name + "_n", static_cast<double>(w.n));
            if (item.kind == ItemKind::vital) {
                set(item.name + "_min", w.min);
                set(item.name + "_max", w.max);
            }
            set(item.name + "_missing", w.n == 0 ? 1 : 0);
            if (item.recent_90d) {
                const auto v = series.latest(i, row.day_start - config.recent_days * kDay,
                                             row.day_start);
                set(item.name + "_recent_90d", v.value_or(0.0));
                set(item.name + "_recent_90d_missing", v ? 0 : 1);
            }
        }

        // --- vital-sign trends against earlier windows ---
        const std::int64_t abx_date = date_of(earliest_active);
        const Timestamp abx_anchor = at_hour(abx_date, config.anchor_hour);
        for (std::size_t i = 0; i < vocab.items().size(); ++i) {
            const auto& item = vocab.items()[i];
            if (item.kind != ItemKind::vital) continue;
            const WindowStats today = series.stats(i, w_lo, row.day_start);
            const WindowStats prev = series.stats(i, w_lo - kDay, row.day_start - kDay);
            if (today.n > 0 && prev.n > 0)
                set(item.name + "_delta_prev_day_max", today.max - prev.max);
            else
                set(item.name + "_delta_prev_day_max_missing", 1);
            const WindowStats ref = series.stats(i, abx_anchor - window, abx_anchor);
            if (today.n > 0 && ref.n > 0)
                set(item.name + "_delta_abx_start_max", today.max - ref.max);
            else
                set(item.name + "_delta_abx_start_max_missing", 1);

            double means[3];
            int avail = 0;
            for (int k = 0; k < 3; ++k) {
                const WindowStats w = series.stats(i, w_lo - k * kDay, row.day_start - k * kDay);
                if (w.n > 0) means[avail++] = w.mean();
            }
            if (avail == 0) {
                set(item.name + "_var_3d_missing", 1);
            } else {
                double mean = 0;
                for (int k = 0; k < avail; ++k) mean += means[k];
                mean /= avail;
                double var = 0;
                for (int k = 0; k < avail; ++k) var += (means[k] - mean) * (means[k] - mean);
                set(item.name + "_var_3d", var / avail);
            }
        }

        if (const auto it = masks.find(date); it != masks.end())
            for (Target t : kAllTargets)
                if (it->second & (1u << static_cast<int>(t)))
                    row.labels[static_cast<int>(t)] = 1;

        // --- hourly grid over the same window ---
        if (config.with_grid) {
            const int B = config.grid_bins;
            const std::size_t S = vocab.items().size();
            const std::int64_t bin_w = window / B;
            row.grid.assign(static_cast<std::size_t>(B) * S, 0.0f);
            row.grid_mask.assign(static_cast<std::size_t>(B) * S, 0.0f);
            for (std::size_t i = 0; i < S; ++i) {
                const auto& s = series.by_item[i];
                auto it = std::lower_bound(s.begin(), s.end(), w_lo,
                                           [](const auto& p, Timestamp t) { return p.first < t; });
                for (; it != s.end() && it->first < row.day_start; ++it) {
                    const auto b = static_cast<std::size_t>((it->first - w_lo) / bin_w);
                    row.grid[b * S + i] = static_cast<float>(it->second);
                    row.grid_mask[b * S + i] = 1.0f;
                }
                for (int b = 1; b < B; ++b) {  // forward fill within the window
                    const std::size_t at = static_cast<std::size_t>(b) * S + i;
                    if (row.grid_mask[at] == 0.0f && row.grid_mask[at - S] == 1.0f) {
                        row.grid[at] = row.grid[at - S];
                        row.grid_mask[at] = 1.0f;
                    }
                }
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {

/// Contiguous slice of derivation events belonging to one admission.
std::span<const TargetEvent> admission_slice(const TargetDerivation& derivation,
                                             const std::string& admission_id, std::size_t& cursor) {
    const auto& ev = derivation.events;
    while (cursor < ev.size() && ev[cursor].admission_id < admission_id) ++cursor;
    std::size_t end = cursor;
    while (end < ev.size() && ev[end].admission_id == admission_id) ++end;
    const std::span<const TargetEvent> s{ev.data() + cursor, end - cursor};
    cursor = end;
    return s;
}

}  // namespace

std::vector<PatientDay> featurize_cohort(const Cohort& cohort,
                                         const std::vector<AdmissionCourses>& courses,
                                         const TargetDerivation& derivation,
                                         const FeatureSchema& schema, const AsiTable& asi,
                                         const FeaturizerConfig& config) {
    std::vector<PatientDay> rows;
    std::size_t cursor = 0;
    for (const auto& ac : courses) {
        auto days = featurize_admission(cohort, ac, admission_slice(derivation, ac.admission_id, cursor),
                                        schema, asi, config);
        for (auto& d : days) rows.push_back(std::move(d));
    }
    return rows;
}

void assert_leak_safety(const Cohort& cohort, const std::vector<AdmissionCourses>& courses,
                        const TargetDerivation& derivation, std::span<const PatientDay> rows,
                        const FeatureSchema& schema, const AsiTable& asi,
                        const FeaturizerConfig& config, int n_days) {
    if (rows.empty() || n_days <= 0) return;
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(n_days), rows.size());
    const ItemVocab& vocab = ItemVocab::standard();

    for (std::size_t k = 0; k < n; ++k) {
        const PatientDay& row = rows[k * rows.size() / n];

        // a one-admission cohort with every event at/after the anchor mangled
        Cohort mini;
        const AdmissionRecord* adm = cohort.find_admission(row.admission_id);
        if (!adm) throw InternalError("leak check: unknown admission '" + row.admission_id + "'");
        mini.patients.push_back(cohort.patients[cohort.patient_index.at(adm->patient_id)]);
        mini.admissions.push_back(*adm);
        for (const std::size_t e : cohort.admission_events(row.admission_id)) {
            EventRecord ev = cohort.events[e];
            if (ev.timestamp >= row.day_start) ev.value += 1000.0;
            mini.events.push_back(std::move(ev));
        }
        for (const auto& item : vocab.items()) {
            // boundary spike exactly on the anchor, plus one an hour later
            mini.events.push_back({row.admission_id, item.item_id, row.day_start, 9999.0});
            mini.events.push_back({row.admission_id, item.item_id, row.day_start + kHour, 9999.0});
        }
        for (const std::size_t r : cohort.admission_rx(row.admission_id))
            mini.prescriptions.push_back(cohort.prescriptions[r]);
        mini.reindex();

        const auto ac = std::lower_bound(
            courses.begin(), courses.end(), row.admission_id,
            [](const AdmissionCourses& a, const std::string& id) { return a.admission_id < id; });
        if (ac == courses.end() || ac->admission_id != row.admission_id)
            throw InternalError("leak check: no courses for admission '" + row.admission_id + "'");

        std::size_t cursor = 0;
        const auto events = admission_slice(derivation, row.admission_id, cursor);
        const auto rebuilt = featurize_admission(mini, *ac, events, schema, asi, config);

        const auto di = static_cast<std::size_t>(row.day_index);
        if (di >= rebuilt.size())
            throw InternalError("leak check: day vanished for admission '" + row.admission_id + "'");
        const PatientDay& got = rebuilt[di];
        const bool same = got.features == row.features && got.labels == row.labels &&
                          got.grid == row.grid && got.grid_mask == row.grid_mask &&
                          got.day_start == row.day_start;
        if (!same)
            throw InternalError("leak check failed: post-anchor data changed admission '" +
                                row.admission_id + "' day " + std::to_string(row.day_index));
    }
}

void write_patient_days(const std::vector<PatientDay>& rows, const FeatureSchema& schema,
                        const std::string& path) {
    CsvWriter w(path);
    std::vector<std::string> fields;
    fields.reserve(4 + schema.size() + kNumTargets);
    for (const char* c : {"admission_id", "patient_id", "day_index", "day_start"})
        fields.emplace_back(c);
    for (const auto& def : schema.defs()) fields.push_back(def.name);
    for (Target t : kAllTargets) fields.push_back("label_" + std::string(target_name(t)));
    w.write_row(fields);

    for (const auto& row : rows) {
        if (row.features.size() != schema.size())
            throw InternalError("patient-day feature count does not match the schema");
        fields.clear();
        fields.push_back(row.admission_id);
        fields.push_back(row.patient_id);
        fields.push_back(std::to_string(row.day_index));
        fields.push_back(format_timestamp(row.day_start));
        for (const double v : row.features) fields.push_back(format_double(v));
        for (const int l : row.labels) fields.push_back(l ? "1" : "0");
        w.write_row(fields);
    }
}

std::vector<PatientDay> read_patient_days(const std::string& path, const FeatureSchema& schema) {
    CsvReader reader(path);
    std::vector<std::string> expected;
    for (const char* c : {"admission_id", "patient_id", "day_index", "day_start"})
        expected.emplace_back(c);
    for (const auto& def : schema.defs()) expected.push_back(def.name);
    for (Target t : kAllTargets) expected.push_back("label_" + std::string(target_name(t)));
    if (reader.header() != expected)
        throw ParseError(path + ": header does not match the feature schema");

    std::vector<PatientDay> rows;
    std::vector<std::string> f;
    while (reader.next(f)) {
        const std::string ctx = path + ":" + std::to_string(reader.record_line());
        PatientDay row;
        row.admission_id = f[0];
        row.patient_id = f[1];
        row.day_index = static_cast<int>(parse_int(f[2], ctx));
        row.day_start = parse_timestamp(f[3]);
        row.date = date_of(row.day_start);
        row.features.reserve(schema.size());
        for (std::size_t i = 0; i < schema.size(); ++i)
            row.features.push_back(parse_double(f[4 + i], ctx));
        for (int t = 0; t < kNumTargets; ++t) {
            const auto v = parse_int(f[4 + schema.size() + t], ctx);
            if (v != 0 && v != 1) throw ParseError(ctx + ": label must be 0 or 1");
            row.labels[t] = static_cast<int>(v);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {
constexpr char kGridMagic[4] = {'A', 'M', 'S', 'G'};
}

void write_grids(const std::vector<PatientDay>& rows, int bins, int series,
                 const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    const std::uint32_t b32 = static_cast<std::uint32_t>(bins);
    const std::uint32_t s32 = static_cast<std::uint32_t>(series);
    const std::uint64_t n64 = rows.size();
    out.write(kGridMagic, 4);
    out.write(reinterpret_cast<const char*>(&b32), sizeof b32);
    out.write(reinterpret_cast<const char*>(&s32), sizeof s32);
    out.write(reinterpret_cast<const char*>(&n64), sizeof n64);
    const std::size_t cells = static_cast<std::size_t>(bins) * static_cast<std::size_t>(series);
    for (const auto& row : rows) {
        if (row.grid.size() != cells || row.grid_mask.size() != cells)
            throw InternalError("grid shape mismatch for admission '" + row.admission_id + "'");
        out.write(reinterpret_cast<const char*>(row.grid.data()),
                  static_cast<std::streamsize>(cells * sizeof(float)));
        out.write(reinterpret_cast<const char*>(row.grid_mask.data()),
                  static_cast<std::streamsize>(cells * sizeof(float)));
    }
    if (!out) throw IoError("failed writing '" + path + "'");
}

GridFile read_grids(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    char magic[4];
    std::uint32_t b32 = 0, s32 = 0;
    std::uint64_t n64 = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&b32), sizeof b32);
    in.read(reinterpret_cast<char*>(&s32), sizeof s32);
    in.read(reinterpret_cast<char*>(&n64), sizeof n64);
    if (!in || std::memcmp(magic, kGridMagic, 4) != 0)
        throw ParseError(path + ": not a grid file");
    GridFile g;
    g.bins = static_cast<int>(b32);
    g.series = static_cast<int>(s32);
    const std::size_t cells = static_cast<std::size_t>(b32) * s32;
    g.grids.resize(n64);
    g.grid_masks.resize(n64);
    for (std::uint64_t r = 0; r < n64; ++r) {
        g.grids[r].resize(cells);
        g.grid_masks[r].resize(cells);
        in.read(reinterpret_cast<char*>(g.grids[r].data()),
                static_cast<std::streamsize>(cells * sizeof(float)));
        in.read(reinterpret_cast<char*>(g.grid_masks[r].data()),
                static_cast<std::streamsize>(cells * sizeof(float)));
        if (!in) throw ParseError(path + ": truncated grid file");
    }
    return g;
}

}  // namespace ams
