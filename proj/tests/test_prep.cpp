#include <doctest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "amsbench/asi.hpp"
#include "amsbench/courses.hpp"
#include "amsbench/errors.hpp"
#include "amsbench/features.hpp"
#include "amsbench/prep.hpp"
#include "amsbench/synth.hpp"

using namespace ams;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("prep");

namespace {

struct Featurized {
    Cohort cohort;
    FeatureSchema schema;
    std::vector<PatientDay> rows;
};

Featurized featurized_cohort(std::int64_t n_patients, std::uint64_t seed) {
    SynthConfig sc;
    sc.n_patients = n_patients;
    sc.seed = seed;
    Featurized fx;
    fx.cohort = generate_synthetic(sc);
    const auto courses = merge_all_courses(fx.cohort);
    const auto derivation = derive_all_targets(fx.cohort, courses, AsiTable::builtin());
    FeaturizerConfig cfg;
    cfg.with_grid = false;
    fx.schema = FeatureSchema::standard(ItemVocab::standard(), AsiTable::builtin(), cfg);
    fx.rows = featurize_cohort(fx.cohort, courses, derivation, fx.schema, AsiTable::builtin(), cfg);
    return fx;
}

/// Minimal row for sequence-shape tests.
PatientDay make_row(const FeatureSchema& schema, const char* adm, int day_index, double fill) {
    PatientDay r;
    r.admission_id = adm;
    r.patient_id = std::string("P_") + adm;
    r.day_index = day_index;
    r.features.assign(schema.size(), fill);
    return r;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* tag)
        : path(fs::temp_directory_path() /
               (std::string("ams_prep_") + tag + "_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

}  // namespace

TEST_CASE("patient split is deterministic and patient-wise") {
    SynthConfig sc;
    sc.n_patients = 200;
    sc.seed = 9;
    sc.multi_admission_rate = 0.5;  // plenty of multi-admission patients
    sc.vitals_per_hour = 0;
    sc.labs_per_hour = 0;
    const Cohort cohort = generate_synthetic(sc);

    PrepConfig pc;
    pc.seed = 1;
    const auto a = split_patients(cohort, pc);
    const auto b = split_patients(cohort, pc);
    CHECK(a.by_patient == b.by_patient);
    pc.seed = 2;
    const auto c = split_patients(cohort, pc);
    CHECK(a.by_patient != c.by_patient);

    // every patient appears exactly once; every admission follows its patient
    CHECK(a.by_patient.size() == cohort.patients.size());
    for (const auto& adm : cohort.admissions) CHECK_NOTHROW(a.of(adm.patient_id));
    CHECK_THROWS_AS(a.of("nobody"), InternalError);
}

TEST_CASE("split sizes follow the configured fractions") {
    SynthConfig sc;
    sc.n_patients = 1000;
    sc.seed = 5;
    sc.vitals_per_hour = 0;
    sc.labs_per_hour = 0;
    const Cohort cohort = generate_synthetic(sc);
    PrepConfig pc;
    pc.seed = 42;
    const auto a = split_patients(cohort, pc);

    int n[kNumSplits] = {};
    for (const auto& [id, s] : a.by_patient) ++n[static_cast<int>(s)];
    CHECK(n[0] + n[1] + n[2] == 1000);
    CHECK(n[0] >= 700);
    CHECK(n[0] <= 740);
    CHECK(n[2] >= 185);
    CHECK(n[2] <= 215);
}

TEST_CASE("invalid prep config is rejected") {
    PrepConfig pc;
    pc.train_frac = 0.8;  // sums to 1.08
    CHECK_THROWS_AS(pc.validate(), ConfigError);
    pc = {};
    pc.winsor_lo = 99;
    pc.winsor_hi = 1;
    CHECK_THROWS_AS(pc.validate(), ConfigError);
    pc = {};
    pc.max_seq_len = 0;
    CHECK_THROWS_AS(pc.validate(), ConfigError);
}

TEST_CASE("scaler clips outliers at the training percentiles") {
    auto fx = featurized_cohort(120, 31);
    PrepConfig pc;
    const auto assignment = split_patients(fx.cohort, pc);
    const auto train = rows_in_split(fx.rows, assignment, Split::train);
    REQUIRE(train.size() > 50);

    // plant a wild outlier in one training column
    const std::size_t f = fx.schema.index_of("hr_mean");
    for (const std::size_t i : train) fx.rows[i].features[f] = 0.0;
    fx.rows[train.back()].features[f] = 1000.0;

    const Scaler s = fit_scaler(fx.rows, train, fx.schema, pc);
    // the 99th-percentile bound sits far below the outlier
    CHECK(s.high[f] < 1000.0);
    CHECK(s.low[f] == 0.0);
    const double top = s.transform_value(f, 1000.0);
    const double capped = s.transform_value(f, s.high[f]);
    CHECK(top == capped);  // clipped before standardizing

    // population standardization: train mean 0, variance 1 (non-constant cols)
    std::vector<std::vector<double>> transformed(fx.schema.size());
    for (const std::size_t i : train) {
        auto feats = fx.rows[i].features;
        s.transform(feats);
        for (std::size_t k = 0; k < feats.size(); ++k) transformed[k].push_back(feats[k]);
    }
    for (std::size_t k = 0; k < fx.schema.size(); ++k) {
        double mean = 0;
        for (const double v : transformed[k]) mean += v;
        mean /= static_cast<double>(transformed[k].size());
        double var = 0;
        for (const double v : transformed[k]) var += (v - mean) * (v - mean);
        var /= static_cast<double>(transformed[k].size());
        CAPTURE(fx.schema.defs()[k].name);
        CHECK(std::abs(mean) <= 1e-9);
        if (s.std_dev[k] != 1.0 || s.high[k] != s.low[k])
            CHECK(std::abs(var - 1.0) <= 1e-6);
    }
}

TEST_CASE("constant features standardize to zero") {
    auto fx = featurized_cohort(40, 8);
    PrepConfig pc;
    const auto assignment = split_patients(fx.cohort, pc);
    const auto train = rows_in_split(fx.rows, assignment, Split::train);
    const std::size_t f = fx.schema.index_of("wbc_mean");
    for (const std::size_t i : train) fx.rows[i].features[f] = 5.0;

    const Scaler s = fit_scaler(fx.rows, train, fx.schema, pc);
    CHECK(s.std_dev[f] == 1.0);
    CHECK(s.transform_value(f, 5.0) == 0.0);
    CHECK(s.transform_value(f, 123.0) == 0.0);  // clipped to the constant
}

TEST_CASE("scaler ignores rows outside the training split") {
    auto fx = featurized_cohort(150, 77);
    PrepConfig pc;
    const auto assignment = split_patients(fx.cohort, pc);
    const auto train = rows_in_split(fx.rows, assignment, Split::train);
    const auto test = rows_in_split(fx.rows, assignment, Split::test);
    REQUIRE(!test.empty());

    const Scaler fitted = fit_scaler(fx.rows, train, fx.schema, pc);
    // mangle every test row; the fit must not move
    for (const std::size_t i : test)
        for (auto& v : fx.rows[i].features) v += 1e6;
    const Scaler refitted = fit_scaler(fx.rows, train, fx.schema, pc);
    CHECK(fitted == refitted);

    // whereas fitting on a polluted index set does move
    std::vector<std::size_t> polluted(train.begin(), train.end());
    polluted.push_back(test.front());
    CHECK(fit_scaler(fx.rows, polluted, fx.schema, pc) != fitted);

    CHECK_THROWS_AS(fit_scaler(fx.rows, std::vector<std::size_t>{}, fx.schema, pc), TrainError);
}

TEST_CASE("scaler json round-trips byte-identically") {
    auto fx = featurized_cohort(60, 19);
    PrepConfig pc;
    const auto assignment = split_patients(fx.cohort, pc);
    const auto train = rows_in_split(fx.rows, assignment, Split::train);
    const Scaler s = fit_scaler(fx.rows, train, fx.schema, pc);

    TempDir dir("scaler");
    const std::string p1 = (dir.path / "scaler.json").string();
    const std::string p2 = (dir.path / "scaler2.json").string();
    s.save_json(p1);
    const Scaler back = Scaler::load_json(p1);
    CHECK(back == s);
    back.save_json(p2);
    CHECK(slurp(p1) == slurp(p2));

    std::ofstream(p1, std::ios::trunc) << "{ not json";
    CHECK_THROWS_AS(Scaler::load_json(p1), ParseError);
    CHECK_THROWS_AS(Scaler::load_json((dir.path / "absent.json").string()), IoError);
}

TEST_CASE("sequences group consecutive admission rows in order") {
    auto fx = featurized_cohort(30, 3);
    const auto seqs = make_sequences(fx.rows, fx.schema, 512);

    std::size_t total = 0;
    std::set<std::string> seen;
    for (const auto& seq : seqs) {
        CHECK(seq.length > 0);
        CHECK(seq.features.size() == static_cast<std::size_t>(seq.length) * fx.schema.size());
        CHECK(seq.labels.size() == static_cast<std::size_t>(seq.length));
        CHECK(seen.insert(seq.admission_id).second);  // one sequence per admission
        for (int t = 0; t < seq.length; ++t) CHECK(seq.day_indices[t] == t);
        total += static_cast<std::size_t>(seq.length);
    }
    CHECK(total == fx.rows.size());
}

TEST_CASE("sequences truncate to the maximum length") {
    const FeatureSchema schema =
        FeatureSchema::standard(ItemVocab::standard(), AsiTable::builtin(), FeaturizerConfig{});
    std::vector<PatientDay> rows;
    for (int d = 0; d < 520; ++d) rows.push_back(make_row(schema, "A1", d, d));
    rows.push_back(make_row(schema, "A2", 0, -1));

    const auto seqs = make_sequences(rows, schema, 512);
    REQUIRE(seqs.size() == 2);
    CHECK(seqs[0].length == 512);
    CHECK(seqs[0].day_indices.back() == 511);  // the first 512 days survive
    CHECK(seqs[1].length == 1);
}

TEST_CASE("padded batches mask out the padding") {
    const FeatureSchema schema =
        FeatureSchema::standard(ItemVocab::standard(), AsiTable::builtin(), FeaturizerConfig{});
    std::vector<PatientDay> rows;
    for (int d = 0; d < 3; ++d) {
        rows.push_back(make_row(schema, "A1", d, 1.0));
        rows.back().labels[0] = 1;
    }
    for (int d = 0; d < 5; ++d) rows.push_back(make_row(schema, "A2", d, 2.0));

    const auto seqs = make_sequences(rows, schema, 512);
    const PaddedBatch b = pad_batch(seqs, 0, 2);
    CHECK(b.batch == 2);
    CHECK(b.time == 5);
    CHECK(b.features == static_cast<int>(schema.size()));

    for (int t = 0; t < 5; ++t) {
        CHECK(b.mask[0 * 5 + t] == (t < 3 ? 1.0 : 0.0));
        CHECK(b.mask[1 * 5 + t] == 1.0);
    }
    // padded steps carry zero features and labels
    const std::size_t F = schema.size();
    for (int t = 3; t < 5; ++t) {
        for (std::size_t f = 0; f < F; ++f) CHECK(b.x[(0 * 5 + t) * F + f] == 0.0);
        for (int k = 0; k < kNumTargets; ++k) CHECK(b.y[(0 * 5 + t) * kNumTargets + k] == 0.0);
    }
    CHECK(b.y[(0 * 5 + 0) * kNumTargets + 0] == 1.0);
    CHECK(b.x[(1 * 5 + 4) * F + 7] == 2.0);
}

TEST_SUITE_END();
