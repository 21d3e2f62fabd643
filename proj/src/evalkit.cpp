#include "amsbench/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "amsbench/csv.hpp"
#include "amsbench/errors.hpp"

namespace ams {

std::string format_metric(const Metric& m) { return m ? format_double(*m) : "--"; }

std::int64_t ScoredSet::positives() const {
    std::int64_t p = 0;
    for (const int y : labels) p += (y == 1);
    return p;
}

double ScoredSet::prevalence() const {
    return size() == 0 ? 0.0
                       : static_cast<double>(positives()) / static_cast<double>(size());
}

void ScoredSet::validate() const {
    if (scores.size() != labels.size())
        throw InternalError("scored set: " + std::to_string(scores.size()) + " scores vs " +
                            std::to_string(labels.size()) + " labels");
    if (scores.empty()) throw InternalError("scored set is empty");
    for (const int y : labels)
        if (y != 0 && y != 1) throw InternalError("scored set labels must be 0 or 1");
    for (const double s : scores)
        if (!std::isfinite(s)) throw InternalError("scored set contains a non-finite score");
}

Metric auroc(const ScoredSet& set) {
    set.validate();
    const auto n = static_cast<std::int64_t>(set.size());
    const std::int64_t pos = set.positives();
    const std::int64_t neg = n - pos;
    if (pos == 0 || neg == 0) return std::nullopt;

    // Mann-Whitney with tie-averaged ranks
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return set.scores[a] < set.scores[b]; });
    double rank_sum_pos = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && set.scores[order[j]] == set.scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k)
            if (set.labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

Metric auprc(const ScoredSet& set) {
    set.validate();
    const std::int64_t pos = set.positives();
    if (pos == 0) return std::nullopt;

    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return set.scores[a] > set.scores[b]; });
    double ap = 0;
    double prev_recall = 0;
    std::int64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;  // step over one distinct threshold at a time
        while (j < order.size() && set.scores[order[j]] == set.scores[order[i]]) {
            (set.labels[order[j]] == 1 ? tp : fp) += 1;
            ++j;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

Confusion confusion_at(const ScoredSet& set, double threshold) {
    set.validate();
    Confusion c;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const bool pred = set.scores[i] >= threshold;
        const bool truth = set.labels[i] == 1;
        if (pred && truth) ++c.tp;
        else if (pred) ++c.fp;
        else if (truth) ++c.fn;
        else ++c.tn;
    }
    const auto rate = [](std::int64_t num, std::int64_t den) -> Metric {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    c.tpr = rate(c.tp, c.tp + c.fn);
    c.tnr = rate(c.tn, c.tn + c.fp);
    c.ppv = rate(c.tp, c.tp + c.fp);
    c.npv = rate(c.tn, c.tn + c.fn);
    c.f1 = rate(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    return c;
}

std::vector<CalibrationBin> calibration_curve(const ScoredSet& set, int n_bins) {
    if (n_bins < 2) throw ConfigError("calibration needs n_bins >= 2");
    set.validate();
    for (const double s : set.scores)
        if (s < 0.0 || s > 1.0)
            throw InternalError("calibration scores must lie in [0, 1], got " +
                                format_double(s));

    std::vector<CalibrationBin> bins(static_cast<std::size_t>(n_bins));
    std::vector<double> score_sum(bins.size(), 0.0);
    std::vector<std::int64_t> pos(bins.size(), 0);
    for (std::size_t b = 0; b < bins.size(); ++b) {
        bins[b].lo = static_cast<double>(b) / n_bins;
        bins[b].hi = static_cast<double>(b + 1) / n_bins;
    }
    for (std::size_t i = 0; i < set.size(); ++i) {
        auto b = static_cast<std::size_t>(set.scores[i] * n_bins);
        if (b >= bins.size()) b = bins.size() - 1;  // score exactly 1.0
        bins[b].count += 1;
        score_sum[b] += set.scores[i];
        pos[b] += set.labels[i];
    }
    for (std::size_t b = 0; b < bins.size(); ++b) {
        if (bins[b].count == 0) continue;  // stays undefined
        bins[b].mean_predicted = score_sum[b] / static_cast<double>(bins[b].count);
        bins[b].observed_rate =
            static_cast<double>(pos[b]) / static_cast<double>(bins[b].count);
    }
    return bins;
}

MetricsReport evaluate_scored(const ScoredSet& set, int calibration_bins) {
    MetricsReport r;
    r.prevalence = set.prevalence();
    r.auroc_value = auroc(set);
    r.auprc_value = auprc(set);
    const Confusion c = confusion_at(set);
    r.f1 = c.f1;
    r.tpr = c.tpr;
    r.tnr = c.tnr;
    r.ppv = c.ppv;
    r.npv = c.npv;
    r.calibration = calibration_curve(set, calibration_bins);
    return r;
}

std::string results_csv(const std::vector<ResultRow>& rows) {
    std::ostringstream out;
    out << "model,target,resolution,task_mode,seed,prevalence,auroc,auprc,f1,tpr,tnr,ppv,npv\n";
    for (const auto& row : rows) {
        out << row.model << ',' << row.target << ',' << row.resolution << ',' << row.task_mode
            << ',' << row.seed << ',';
        if (row.absent) {
            out << "--,--,--,--,--,--,--,--\n";
            continue;
        }
        const auto& r = row.report;
        out << format_double(r.prevalence) << ',' << format_metric(r.auroc_value) << ','
            << format_metric(r.auprc_value) << ',' << format_metric(r.f1) << ','
            << format_metric(r.tpr) << ',' << format_metric(r.tnr) << ','
            << format_metric(r.ppv) << ',' << format_metric(r.npv) << '\n';
    }
    return out.str();
}

std::string calibration_csv(const std::vector<CalibrationBin>& bins) {
    std::ostringstream out;
    out << "bin_lo,bin_hi,count,mean_predicted,observed_rate\n";
    for (const auto& b : bins)
        out << format_double(b.lo) << ',' << format_double(b.hi) << ',' << b.count << ','
            << format_metric(b.mean_predicted) << ',' << format_metric(b.observed_rate) << '\n';
    return out.str();
}

namespace {

constexpr int kSvgSize = 480;
constexpr int kSvgMargin = 56;

double svg_x(double p) { return kSvgMargin + p * (kSvgSize - 2 * kSvgMargin); }
double svg_y(double p) { return kSvgSize - kSvgMargin - p * (kSvgSize - 2 * kSvgMargin); }

const char* series_color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                    "#8c564b"};
    return palette[i % (sizeof(palette) / sizeof(palette[0]))];
}

}  // namespace

std::string reliability_svg(const std::string& title,
                            const std::vector<ReliabilitySeries>& series) {
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSvgSize << "\" height=\""
      << kSvgSize << "\" viewBox=\"0 0 " << kSvgSize << " " << kSvgSize << "\">\n";
    s << "<rect width=\"" << kSvgSize << "\" height=\"" << kSvgSize << "\" fill=\"white\"/>\n";
    s << "<text x=\"" << kSvgSize / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";

    // frame and the perfect-calibration diagonal
    s << "<rect x=\"" << kSvgMargin << "\" y=\"" << kSvgMargin << "\" width=\""
      << kSvgSize - 2 * kSvgMargin << "\" height=\"" << kSvgSize - 2 * kSvgMargin
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
    s << "<line x1=\"" << format_double(svg_x(0)) << "\" y1=\"" << format_double(svg_y(0))
      << "\" x2=\"" << format_double(svg_x(1)) << "\" y2=\"" << format_double(svg_y(1))
      << "\" stroke=\"#888\" stroke-dasharray=\"5,4\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double p = t / 4.0;
        s << "<text x=\"" << format_double(svg_x(p)) << "\" y=\"" << kSvgSize - kSvgMargin + 18
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
          << format_double(p) << "</text>\n";
        s << "<text x=\"" << kSvgMargin - 8 << "\" y=\"" << format_double(svg_y(p) + 4)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
          << format_double(p) << "</text>\n";
    }
    s << "<text x=\"" << kSvgSize / 2 << "\" y=\"" << kSvgSize - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << "mean predicted probability</text>\n";
    s << "<text x=\"16\" y=\"" << kSvgSize / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\""
      << " transform=\"rotate(-90 16 " << kSvgSize / 2 << ")\">observed rate</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* color = series_color(k);
        std::ostringstream pts;
        for (const auto& b : series[k].bins) {
            if (!b.mean_predicted || !b.observed_rate) continue;
            pts << format_double(svg_x(*b.mean_predicted)) << ','
                << format_double(svg_y(*b.observed_rate)) << ' ';
            s << "<circle cx=\"" << format_double(svg_x(*b.mean_predicted)) << "\" cy=\""
              << format_double(svg_y(*b.observed_rate)) << "\" r=\"3\" fill=\"" << color
              << "\"/>\n";
        }
        s << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.5\"/>\n";
        const int ly = kSvgMargin + 16 + static_cast<int>(k) * 16;
        s << "<line x1=\"" << kSvgMargin + 10 << "\" y1=\"" << ly << "\" x2=\""
          << kSvgMargin + 34 << "\" y2=\"" << ly << "\" stroke=\"" << color
          << "\" stroke-width=\"2\"/>\n";
        s << "<text x=\"" << kSvgMargin + 40 << "\" y=\"" << ly + 4
          << "\" font-family=\"sans-serif\" font-size=\"11\">" << series[k].name << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

}  // namespace ams
