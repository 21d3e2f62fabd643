#include "amsbench/asi.hpp"

#include "amsbench/csv.hpp"
#include "amsbench/errors.hpp"

namespace ams {

AsiTable::AsiTable(std::vector<AsiEntry> rows) : rows_(std::move(rows)) {
    for (const auto& row : rows_) {
        const auto it = by_atc_.find(row.atc);
        if (it == by_atc_.end()) {
            by_atc_.emplace(row.atc, row.asi);
        } else if (it->second != row.asi) {
            throw ParseError("conflicting spectrum scores for ATC '" + row.atc + "'");
        }
    }
}

const AsiTable& AsiTable::builtin() {
    // Transcribed from the tracked-antibiotics table; duplicates and
    // score-less antifungal rows preserved as-is.
    static const AsiTable table(std::vector<AsiEntry>{
        {"J02AX01", "5-fluorocytosine", std::nullopt},
        {"J01FA09", "acetylspiramycin", 4},
        {"J01GB06", "amikacin", 5},
        {"J01CA04", "amoxicillin", 2},
        {"J01CR02", "amoxicillin/clavulanic acid", 6},
        {"J02AA01", "amphotericin b", std::nullopt},
        {"J01CA01", "ampicillin", 2},
        {"J01CR01", "ampicillin/sulbactam", 6},
        {"J01FA10", "azithromycin", 4},
        {"J01DF01", "aztreonam", 5},
        {"J01DC04", "cefaclor", 4},
        {"J01DB04", "cefazolin", 3},
        {"J01DE01", "cefepime", 6},
        {"J01DD62", "cefoperazone/sulbactam", 6},
        {"J01DD01", "cefotaxime", 5},
        {"J01DC05", "cefotetan", 4},
        {"J01DC01", "cefoxitin", 4},
        {"J01DD02", "ceftazidime", 4},
        {"J01DD04", "ceftriaxone", 5},
        {"J01DC02", "cefuroxime", 4},
        {"J01BA01", "chloramphenicol", 5},
        {"J01MA02", "ciprofloxacin", 8},
        {"J01FA09", "clarithromycin", 4},
        {"J01FF01", "clindamycin", 4},
        {"J01EE01", "compound sulfamethoxazole", 4},
        {"J01AA02", "doxycycline", 5},
        {"J01DH03", "erbepenem", 9},
        {"J01FA01", "erythromycin", 2},
        {"J02AC01", "fluconazole", std::nullopt},
        {"J01MA16", "gatifloxacin", 9},
        {"J01GB03", "gentamicin", 5},
        {"J01GB03", "gentamicin 500", 5},
        {"J01DH51", "imipenem", 10},
        {"J02AC02", "itraconazole", std::nullopt},
        {"J01FA07", "josamycin", 4},
        {"J01MA12", "levofloxacin", 9},
        {"J01XX08", "linezolid", 5},
        {"J01DH02", "meropenem", 10},
        {"J01AA08", "minocycline", 5},
        {"J01MA14", "moxifloxacin", 9},
        {"J01XE01", "nitrofurantoin", 2},
        {"J01MA01", "ofloxacin", 9},
        {"J01CF04", "oxacillin", 1},
        {"J01CE01", "penicillin", 2},
        {"J01CA12", "piperacillin", 5},
        {"J01CR05", "piperacillin/tazobactam", 8},
        {"J01XB02", "polymyxin b", 4},
        {"J01FG02", "quinupristin/dalfopristin", 5},
        {"J04AB02", "rifampin", 3},
        {"J01FA06", "roxithromycin", 4},
        {"J01MA09", "sparfloxacin", 8},
        {"J01GA01", "streptomycin 2000", 5},
        {"J01FA15", "telithromycin", 4},
        {"J01AA07", "tetracycline", 5},
        {"J01CA13", "ticarcillin", 5},
        {"J01AA12", "tigecycline", 13},
        {"J01GB01", "tobramycin", 5},
        {"J01XA01", "vancomycin", 5},
        {"J02AC03", "voriconazole", std::nullopt},
    });
    return table;
}

AsiTable AsiTable::load_csv(const std::string& path) {
    constexpr std::string_view kHeader[] = {"atc", "label", "asi"};
    CsvReader reader(path, kHeader);
    std::vector<AsiEntry> rows;
    std::vector<std::string> f;
    while (reader.next(f)) {
        AsiEntry e;
        e.atc = f[0];
        e.label = f[1];
        if (e.atc.empty())
            throw ParseError(path + ":" + std::to_string(reader.record_line()) + ": empty atc");
        if (!f[2].empty()) {
            const auto v = parse_int(f[2], path + ":" + std::to_string(reader.record_line()));
            if (v <= 0)
                throw ParseError(path + ":" + std::to_string(reader.record_line()) +
                                 ": asi must be a positive integer");
            e.asi = static_cast<int>(v);
        }
        rows.push_back(std::move(e));
    }
    return AsiTable(std::move(rows));
}

void AsiTable::save_csv(const std::string& path) const {
    CsvWriter w(path);
    w.write_row({"atc", "label", "asi"});
    for (const auto& r : rows_)
        w.write_row({r.atc, r.label, r.asi ? std::to_string(*r.asi) : std::string()});
}

std::optional<int> AsiTable::asi(std::string_view atc) const {
    const auto it = by_atc_.find(std::string(atc));
    if (it == by_atc_.end()) return std::nullopt;
    return it->second;
}

bool AsiTable::contains(std::string_view atc) const {
    return by_atc_.count(std::string(atc)) != 0;
}

}  // namespace ams
