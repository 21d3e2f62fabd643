#pragma once

// Independent reference implementations used to cross-check the library.
// Deliberately written with different algorithms than the production code:
// union-find interval clustering instead of the sorted sweep, pair counting
// instead of rank statistics, threshold sweeps instead of streaming sums.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "amsbench/cohort.hpp"

namespace oracle {

struct CourseSpan {
    std::string atc;
    ams::Timestamp start;
    ams::Timestamp end;

    bool operator==(const CourseSpan&) const = default;
};

/// Gap-merge via union-find over pairwise interval distances: two
/// prescriptions of the same agent belong to one course iff they are
/// connected by a chain of gaps ≤ merge_gap. Equivalent to (but structured
/// unlike) the production sorted sweep.
inline std::vector<CourseSpan> merge_courses_bruteforce(
    const std::vector<ams::PrescriptionRecord>& rx, std::int64_t merge_gap = 24 * ams::kHour,
    std::int64_t min_span = 24 * ams::kHour) {
    std::map<std::string, std::vector<std::size_t>> by_atc;
    for (std::size_t i = 0; i < rx.size(); ++i) by_atc[rx[i].atc_code].push_back(i);

    std::vector<CourseSpan> out;
    for (const auto& [atc, idx] : by_atc) {
        const std::size_t n = idx.size();
        std::vector<std::size_t> parent(n);
        std::iota(parent.begin(), parent.end(), 0);
        std::function<std::size_t(std::size_t)> find = [&](std::size_t a) {
            return parent[a] == a ? a : parent[a] = find(parent[a]);
        };
        auto gap = [&](std::size_t a, std::size_t b) {
            const auto& ra = rx[idx[a]];
            const auto& rb = rx[idx[b]];
            const ams::Timestamp lo = std::max(ra.start_time, rb.start_time);
            const ams::Timestamp hi = std::min(ra.end_time, rb.end_time);
            return lo <= hi ? std::int64_t{0} : std::int64_t{lo - hi};
        };
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b)
                if (gap(a, b) <= merge_gap) parent[find(a)] = find(b);

        std::map<std::size_t, CourseSpan> spans;
        for (std::size_t a = 0; a < n; ++a) {
            const std::size_t root = find(a);
            auto it = spans.find(root);
            if (it == spans.end()) {
                spans.emplace(root, CourseSpan{atc, rx[idx[a]].start_time, rx[idx[a]].end_time});
            } else {
                it->second.start = std::min(it->second.start, rx[idx[a]].start_time);
                it->second.end = std::max(it->second.end, rx[idx[a]].end_time);
            }
        }
        for (const auto& [root, span] : spans)
            if (span.end - span.start >= min_span) out.push_back(span);
    }
    std::sort(out.begin(), out.end(), [](const CourseSpan& a, const CourseSpan& b) {
        return std::tie(a.start, a.atc) < std::tie(b.start, b.atc);
    });
    return out;
}

/// Pair-counting AUROC: over all positive/negative pairs, count wins and
/// half-count ties. Undefined (single-class input) → returns false.
inline bool auroc_paircount(const std::vector<double>& scores, const std::vector<int>& labels,
                            double& out) {
    long long pos = 0, neg = 0;
    double wins = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 1) ++pos;
        else ++neg;
    }
    if (pos == 0 || neg == 0) return false;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    out = wins / (static_cast<double>(pos) * static_cast<double>(neg));
    return true;
}

/// Average precision by explicit threshold sweep over distinct scores,
/// summing precision(t) * recall-increment(t) from high to low threshold.
/// Ties are handled by stepping over score groups. Undefined when there
/// are no positives → returns false.
inline bool auprc_sweep(const std::vector<double>& scores, const std::vector<int>& labels,
                        double& out) {
    long long total_pos = 0;
    for (int y : labels) total_pos += (y == 1);
    if (total_pos == 0) return false;

    std::vector<double> thresholds(scores);
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    double ap = 0;
    double prev_recall = 0;
    for (double t : thresholds) {
        long long tp = 0, fp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= t) {
                if (labels[i] == 1) ++tp;
                else ++fp;
            }
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    out = ap;
    return true;
}

}  // namespace oracle
