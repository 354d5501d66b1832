#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "xferlab/error.hpp"

namespace xferlab {

/// K x K counts; rows are ground truth, columns are predictions.
struct ConfusionMatrix {
    std::size_t k = 0;
    std::vector<std::size_t> counts;  // row-major
    std::vector<std::string> class_names;

    std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * k + pred]; }
    std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * k + pred]; }

    std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

    std::size_t trace() const {
        std::size_t t = 0;
        for (std::size_t c = 0; c < k; ++c) t += at(c, c);
        return t;
    }
};

inline ConfusionMatrix confusion(std::span<const std::size_t> truths, std::span<const std::size_t> preds, std::size_t k,
                                 std::vector<std::string> class_names = {}) {
    if (truths.size() != preds.size())
        throw DataError("confusion: " + std::to_string(truths.size()) + " truths vs " + std::to_string(preds.size()) +
                        " predictions");
    if (k == 0) throw DataError("confusion: class count must be positive");
    if (!class_names.empty() && class_names.size() != k) throw DataError("confusion: class_names length differs from K");
    ConfusionMatrix m{k, std::vector<std::size_t>(k * k, 0), std::move(class_names)};
    for (std::size_t i = 0; i < truths.size(); ++i) {
        if (truths[i] >= k || preds[i] >= k)
            throw DataError("confusion: label out of range at sample " + std::to_string(i));
        ++m.at(truths[i], preds[i]);
    }
    return m;
}

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool undefined = false;  // some denominator was zero; affected values are 0
};

struct MetricsReport {
    double accuracy = 0.0;
    double error_rate = 0.0;
    ClassScores micro;
    ClassScores macro;
    std::vector<ClassScores> per_class;
};

namespace detail {
inline ClassScores scores_from_counts(std::size_t a, std::size_t theta, std::size_t b) {
    ClassScores s;
    if (a + theta == 0) s.undefined = true;
    else s.precision = static_cast<double>(a) / static_cast<double>(a + theta);
    if (a + b == 0) s.undefined = true;
    else s.recall = static_cast<double>(a) / static_cast<double>(a + b);
    if (s.precision == s.recall) s.f1 = s.precision;
    else if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}
}  // namespace detail

/// Per-class A = diagonal, false positives = column minus A, false
/// negatives = row minus A. Micro pools those counts over classes; macro is
/// the unweighted class mean.
inline MetricsReport metrics(const ConfusionMatrix& m) {
    const std::size_t total = m.total();
    if (total == 0) throw DataError("metrics: confusion matrix is empty");
    MetricsReport r;
    std::size_t sa = 0, st = 0, sb = 0;
    for (std::size_t c = 0; c < m.k; ++c) {
        std::size_t row = 0, col = 0;
        for (std::size_t j = 0; j < m.k; ++j) {
            row += m.at(c, j);
            col += m.at(j, c);
        }
        const std::size_t a = m.at(c, c);
        r.per_class.push_back(detail::scores_from_counts(a, col - a, row - a));
        sa += a;
        st += col - a;
        sb += row - a;
    }
    r.micro = detail::scores_from_counts(sa, st, sb);
    for (const auto& s : r.per_class) {
        r.macro.precision += s.precision;
        r.macro.recall += s.recall;
        r.macro.f1 += s.f1;
        r.macro.undefined = r.macro.undefined || s.undefined;
    }
    const double kk = static_cast<double>(m.k);
    r.macro.precision /= kk;
    r.macro.recall /= kk;
    r.macro.f1 /= kk;
    r.accuracy = static_cast<double>(m.trace()) / static_cast<double>(total);
    r.error_rate = 1.0 - r.accuracy;
    return r;
}

struct TopLossEntry {
    std::string id;
    std::size_t predicted = 0;
    std::size_t truth = 0;
    double loss = 0.0;
};

/// The n highest losses, descending. Ties keep input order.
inline std::vector<TopLossEntry> top_losses(std::vector<TopLossEntry> entries, std::size_t n) {
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.loss > b.loss; });
    if (entries.size() > n) entries.resize(n);
    return entries;
}

inline nlohmann::ordered_json to_json(const ClassScores& s) {
    return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"undefined", s.undefined}};
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["accuracy"] = r.accuracy;
    j["error_rate"] = r.error_rate;
    j["precision"] = r.micro.precision;
    j["recall"] = r.micro.recall;
    j["f1"] = r.micro.f1;
    j["macro"] = to_json(r.macro);
    auto pc = nlohmann::ordered_json::array();
    for (const auto& s : r.per_class) pc.push_back(to_json(s));
    j["per_class"] = std::move(pc);
    return j;
}

inline nlohmann::ordered_json to_json(const ConfusionMatrix& m) {
    nlohmann::ordered_json j;
    j["class_names"] = m.class_names;
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < m.k; ++t)
        rows.push_back(std::vector<std::size_t>(m.counts.begin() + static_cast<std::ptrdiff_t>(t * m.k),
                                                m.counts.begin() + static_cast<std::ptrdiff_t>((t + 1) * m.k)));
    j["counts"] = std::move(rows);
    return j;
}

inline nlohmann::ordered_json to_json(const TopLossEntry& e) {
    return {{"id", e.id}, {"predicted", e.predicted}, {"truth", e.truth}, {"loss", e.loss}};
}

/// Grid CSV: header `truth\pred,<names...>`, one row per true class.
inline std::string to_csv(const ConfusionMatrix& m) {
    auto name = [&m](std::size_t c) { return c < m.class_names.size() ? m.class_names[c] : std::to_string(c); };
    std::ostringstream os;
    os << "truth\\pred";
    for (std::size_t c = 0; c < m.k; ++c) os << ',' << name(c);
    os << '\n';
    for (std::size_t t = 0; t < m.k; ++t) {
        os << name(t);
        for (std::size_t p = 0; p < m.k; ++p) os << ',' << m.at(t, p);
        os << '\n';
    }
    return os.str();
}

}  // namespace xferlab
