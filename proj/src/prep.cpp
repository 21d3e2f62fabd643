#include "amsbench/prep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "amsbench/errors.hpp"
#include "amsbench/rng.hpp"

namespace ams {

std::string_view split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    throw InternalError("invalid split value");
}

void PrepConfig::validate() const {
    for (const double f : {train_frac, val_frac, test_frac})
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("prep.split fractions must be in [0,1]");
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw ConfigError("prep.split fractions must sum to 1");
    if (!(winsor_lo >= 0 && winsor_lo < winsor_hi && winsor_hi <= 100))
        throw ConfigError("prep.winsor percentiles must satisfy 0 <= lo < hi <= 100");
    if (max_seq_len < 1) throw ConfigError("prep.max_seq_len must be >= 1");
}

Split SplitAssignment::of(const std::string& patient_id) const {
    const auto it = by_patient.find(patient_id);
    if (it == by_patient.end())
        throw InternalError("no split recorded for patient '" + patient_id + "'");
    return it->second;
}

SplitAssignment split_patients(const Cohort& cohort, const PrepConfig& config) {
    config.validate();
    SplitAssignment out;
    out.seed = config.seed;
    out.fractions = {config.train_frac, config.val_frac, config.test_frac};
    for (const auto& p : cohort.patients) {
        // keyed by (seed, patient_id) only, so membership survives cohort
        // reordering or other patients being added
        Rng rng(Rng::splitmix(config.seed ^ fnv1a(p.patient_id)));
        const double u = rng.uniform();
        Split s = Split::test;
        if (u < config.train_frac)
            s = Split::train;
        else if (u < config.train_frac + config.val_frac)
            s = Split::val;
        out.by_patient.emplace(p.patient_id, s);
    }
    return out;
}

std::vector<std::size_t> rows_in_split(std::span<const PatientDay> rows,
                                       const SplitAssignment& assignment, Split split) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (assignment.of(rows[i].patient_id) == split) idx.push_back(i);
    return idx;
}

namespace {

/// Linear-interpolation percentile on already-sorted values.
double percentile_sorted(const std::vector<double>& sorted, double q) {
    const double rank = q / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(rank);
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = rank - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

Scaler fit_scaler(std::span<const PatientDay> rows, std::span<const std::size_t> train_indices,
                  const FeatureSchema& schema, const PrepConfig& config) {
    config.validate();
    if (train_indices.size() < 2)
        throw TrainError("scaler needs at least 2 training rows, got " +
                         std::to_string(train_indices.size()));

    Scaler s;
    s.fitted_on = "train";
    s.winsor_percentiles = {config.winsor_lo, config.winsor_hi};
    const std::size_t F = schema.size();
    s.names.reserve(F);
    for (const auto& def : schema.defs()) s.names.push_back(def.name);
    s.mean.resize(F);
    s.std_dev.resize(F);
    s.low.resize(F);
    s.high.resize(F);

    std::vector<double> column(train_indices.size());
    for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t i = 0; i < train_indices.size(); ++i) {
            const PatientDay& row = rows[train_indices[i]];
            if (row.features.size() != F)
                throw InternalError("row feature count does not match the schema");
            column[i] = row.features[f];
        }
        std::sort(column.begin(), column.end());
        const double lo = percentile_sorted(column, config.winsor_lo);
        const double hi = percentile_sorted(column, config.winsor_hi);

        double sum = 0;
        for (double& v : column) {
            v = std::clamp(v, lo, hi);
            sum += v;
        }
        const double mean = sum / static_cast<double>(column.size());
        double ss = 0;
        for (const double v : column) ss += (v - mean) * (v - mean);
        const double var = ss / static_cast<double>(column.size());

        s.low[f] = lo;
        s.high[f] = hi;
        s.mean[f] = mean;
        s.std_dev[f] = var > 0 ? std::sqrt(var) : 1.0;
    }
    return s;
}

double Scaler::transform_value(std::size_t feature, double v) const {
    v = std::clamp(v, low[feature], high[feature]);
    return (v - mean[feature]) / std_dev[feature];
}

void Scaler::transform(std::vector<double>& features) const {
    if (features.size() != mean.size())
        throw InternalError("scaler/feature width mismatch");
    for (std::size_t f = 0; f < features.size(); ++f)
        features[f] = transform_value(f, features[f]);
}

void apply_scaler(const Scaler& scaler, std::vector<PatientDay>& rows) {
    for (auto& row : rows) scaler.transform(row.features);
}

void Scaler::save_json(const std::string& path) const {
    nlohmann::ordered_json j;
    j["fitted_on"] = fitted_on;
    j["winsor_percentiles"] = winsor_percentiles;
    auto& features = j["features"] = nlohmann::ordered_json::object();
    for (std::size_t f = 0; f < names.size(); ++f) {
        features[names[f]] = {{"mean", mean[f]},
                              {"std", std_dev[f]},
                              {"low", low[f]},
                              {"high", high[f]}};
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing '" + path + "'");
}

Scaler Scaler::load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    Scaler s;
    try {
        s.fitted_on = j.at("fitted_on").get<std::string>();
        s.winsor_percentiles = j.at("winsor_percentiles").get<std::array<double, 2>>();
        for (const auto& [name, spec] : j.at("features").items()) {
            s.names.push_back(name);
            s.mean.push_back(spec.at("mean").get<double>());
            s.std_dev.push_back(spec.at("std").get<double>());
            s.low.push_back(spec.at("low").get<double>());
            s.high.push_back(spec.at("high").get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return s;
}

std::vector<Sequence> make_sequences(std::span<const PatientDay> rows, const FeatureSchema& schema,
                                     int max_seq_len) {
    if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
    std::vector<Sequence> seqs;
    const std::size_t F = schema.size();
    for (std::size_t i = 0; i < rows.size();) {
        std::size_t end = i;
        while (end < rows.size() && rows[end].admission_id == rows[i].admission_id) ++end;

        Sequence seq;
        seq.admission_id = rows[i].admission_id;
        seq.patient_id = rows[i].patient_id;
        seq.length = static_cast<int>(
            std::min<std::size_t>(end - i, static_cast<std::size_t>(max_seq_len)));
        seq.features.reserve(static_cast<std::size_t>(seq.length) * F);
        for (std::size_t r = i; r < i + static_cast<std::size_t>(seq.length); ++r) {
            if (rows[r].features.size() != F)
                throw InternalError("row feature count does not match the schema");
            seq.features.insert(seq.features.end(), rows[r].features.begin(),
                                rows[r].features.end());
            seq.labels.push_back(rows[r].labels);
            seq.day_indices.push_back(rows[r].day_index);
        }
        seqs.push_back(std::move(seq));
        i = end;
    }
    return seqs;
}

PaddedBatch pad_batch(std::span<const Sequence> sequences, std::size_t first, std::size_t count) {
    if (first + count > sequences.size() || count == 0)
        throw InternalError("pad_batch range out of bounds");
    PaddedBatch b;
    b.batch = static_cast<int>(count);
    int max_t = 0;
    for (std::size_t s = 0; s < count; ++s) max_t = std::max(max_t, sequences[first + s].length);
    b.time = max_t;
    b.features = sequences[first].length > 0
                     ? static_cast<int>(sequences[first].features.size() /
                                        static_cast<std::size_t>(sequences[first].length))
                     : 0;
    const std::size_t F = static_cast<std::size_t>(b.features);
    b.x.assign(count * static_cast<std::size_t>(max_t) * F, 0.0);
    b.mask.assign(count * static_cast<std::size_t>(max_t), 0.0);
    b.y.assign(count * static_cast<std::size_t>(max_t) * kNumTargets, 0.0);

    for (std::size_t s = 0; s < count; ++s) {
        const Sequence& seq = sequences[first + s];
        for (int t = 0; t < seq.length; ++t) {
            const std::size_t row = (s * static_cast<std::size_t>(max_t) + static_cast<std::size_t>(t));
            std::copy_n(seq.features.begin() + static_cast<std::size_t>(t) * F, F,
                        b.x.begin() + row * F);
            b.mask[row] = 1.0;
            for (int k = 0; k < kNumTargets; ++k)
                b.y[row * kNumTargets + static_cast<std::size_t>(k)] = seq.labels[t][k];
        }
    }
    return b;
}

}  // namespace ams
