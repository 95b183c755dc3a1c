#pragma once

#include <algorithm>
#include <string>
#include <unordered_set>
#include <vector>

#include "briefcontext/ranking.hpp"
#include "briefcontext/text.hpp"

namespace briefcontext {

struct PreflightConfig {
    size_t n = 3;
    double iou_threshold = 0.2;
};

/// Verdict of the ranking-consistency check for one question. Low agreement
/// between the two rankings flags the question as at risk of a
/// lost-in-the-middle failure and routes it to the map-reduce path.
struct PreflightVerdict {
    double iou = 0.0;
    bool predicts_issue = false;
};

/// Intersection-over-union of two id sets.
inline double id_set_iou(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::unordered_set<std::string> set_a(a.begin(), a.end());
    std::unordered_set<std::string> set_b(b.begin(), b.end());
    if (set_a.empty() && set_b.empty()) return 1.0;
    size_t inter = 0;
    for (const auto& id : set_a) {
        if (set_b.count(id)) ++inter;
    }
    size_t uni = set_a.size() + set_b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// IoU of the top-n id sets of two rankings. When a ranking is shorter than
/// n the window shrinks to the entries available, so small corpora stay
/// usable.
inline double iou_at_n(const Ranking& r1, const Ranking& r2, size_t n) {
    if (n == 0) {
        throw Error("iou_at_n: n must be positive");
    }
    if (r1.empty() || r2.empty()) {
        throw Error("iou_at_n: rankings must be non-empty");
    }
    return id_set_iou(r1.top_ids(n), r2.top_ids(n));
}

/// An issue is predicted iff iou <= threshold; agreement strictly above the
/// threshold clears the question for the single-pass path.
inline PreflightVerdict preflight_check(const Ranking& r_dense, const Ranking& r_bm25,
                                        const PreflightConfig& config) {
    if (config.n == 0) {
        throw Error("preflight: n must be positive");
    }
    if (config.iou_threshold < 0.0 || config.iou_threshold > 1.0) {
        throw Error("preflight: iou_threshold must be in [0,1]");
    }
    PreflightVerdict verdict;
    verdict.iou = iou_at_n(r_dense, r_bm25, config.n);
    verdict.predicts_issue = verdict.iou <= config.iou_threshold;
    return verdict;
}

/// Ground-truth label: the lost-in-the-middle issue occurred iff no key
/// document appears within the first n entries of the ranking.
inline bool label_issue_occurrence(const Ranking& r, const std::vector<std::string>& key_ids,
                                   size_t n) {
    if (key_ids.empty()) {
        throw Error("label_issue_occurrence: key_ids must be non-empty");
    }
    std::unordered_set<std::string> keys(key_ids.begin(), key_ids.end());
    size_t window = std::min(n, r.size());
    for (size_t i = 0; i < window; ++i) {
        if (keys.count(r.entries[i].id)) return false;
    }
    return true;
}

struct ConfusionCounts {
    size_t tp = 0;
    size_t fp = 0;
    size_t fn = 0;
    size_t tn = 0;

    size_t total() const { return tp + fp + fn + tn; }
};

struct PreflightMetrics {
    ConfusionCounts counts;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double true_negative_rate = 0.0;
    bool division_by_zero = false;
};

/// Derives precision/recall/F1 from confusion counts. TP is a predicted
/// issue that occurred. Any zero denominator yields 0 for that metric with
/// the division_by_zero flag set.
inline PreflightMetrics evaluate_preflight(const ConfusionCounts& counts) {
    PreflightMetrics m;
    m.counts = counts;
    auto ratio = [&m](size_t num, size_t den) {
        if (den == 0) {
            m.division_by_zero = true;
            return 0.0;
        }
        return static_cast<double>(num) / static_cast<double>(den);
    };
    m.precision = ratio(counts.tp, counts.tp + counts.fp);
    m.recall = ratio(counts.tp, counts.tp + counts.fn);
    if (m.precision + m.recall == 0.0) {
        m.division_by_zero = true;
        m.f1 = 0.0;
    } else {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    m.true_negative_rate = ratio(counts.tn, counts.tn + counts.fp);
    return m;
}

/// Aggregates per-item verdicts against truth labels. The two lists are
/// index-aligned; sizes must match.
inline PreflightMetrics evaluate_preflight(const std::vector<bool>& predicted,
                                           const std::vector<bool>& occurred) {
    if (predicted.size() != occurred.size()) {
        throw Error("evaluate_preflight: " + std::to_string(predicted.size()) +
                    " verdicts vs " + std::to_string(occurred.size()) + " truth labels");
    }
    ConfusionCounts counts;
    for (size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] && occurred[i]) ++counts.tp;
        else if (predicted[i] && !occurred[i]) ++counts.fp;
        else if (!predicted[i] && occurred[i]) ++counts.fn;
        else ++counts.tn;
    }
    return evaluate_preflight(counts);
}

} // namespace briefcontext
