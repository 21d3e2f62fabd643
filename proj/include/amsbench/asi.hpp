#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ams {

/// One row of the antibiotic spectrum mapping. A missing score means the
/// agent is tracked (e.g. antifungals) but carries no spectrum index;
/// such codes are "unmapped" for the de-escalation comparison.
struct AsiEntry {
    std::string atc;
    std::string label;
    std::optional<int> asi;
};

/// Antibiotic Spectrum Index lookup: ATC code → integer breadth score
/// (higher = broader coverage). Duplicate ATC rows in the source table
/// (same agent under two product labels) are collapsed; inconsistent
/// duplicate scores are a data error.
class AsiTable {
public:
    AsiTable() = default;
    explicit AsiTable(std::vector<AsiEntry> rows);

    /// The scores compiled into the library; equals data/asi_map.csv.
    static const AsiTable& builtin();

    /// Load from a CSV with columns atc,label,asi (asi may be blank).
    static AsiTable load_csv(const std::string& path);

    void save_csv(const std::string& path) const;

    /// Spectrum score; nullopt when the code is unknown or has no score.
    std::optional<int> asi(std::string_view atc) const;

    /// True when the code appears in the table at all (scored or not).
    bool contains(std::string_view atc) const;

    /// Verbatim rows, duplicates included, in table order.
    const std::vector<AsiEntry>& rows() const { return rows_; }

private:
    std::vector<AsiEntry> rows_;
    std::unordered_map<std::string, std::optional<int>> by_atc_;
};

}  // namespace ams
