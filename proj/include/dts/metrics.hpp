#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dts/error.hpp"

namespace dts::metrics {

struct ScoredRow {
    std::string user_id;
    double score = 0.0;
    int label = 0;
    double weight = 1.0; // impressions this row stands for
};

struct UserAuc {
    std::string user_id;
    std::size_t impressions = 0;
    double auc = 0.0;
};

struct EvalReport {
    std::vector<UserAuc> per_user;
    double weighted_auc = 0.0;
    std::size_t skipped_users = 0;
};

/// Rank-statistic AUC; tied scores are credited one half. Returns NaN when
/// either class is missing.
inline double auc(std::span<const double> scores, std::span<const int> labels)
{
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j); // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                pos_rank_sum += avg_rank;
                ++pos;
            }
        }
        i = j;
    }
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) return std::nan("");
    const double p = static_cast<double>(pos);
    return (pos_rank_sum - p * (p + 1) / 2) / (p * static_cast<double>(neg));
}

/// Impression-weighted mean of per-user AUCs. Users without both a positive
/// and a negative row are skipped.
inline EvalReport weighted_auc(std::span<const ScoredRow> rows)
{
    std::map<std::string, std::vector<const ScoredRow*>> by_user;
    for (const auto& r : rows) {
        if (!std::isfinite(r.score)) throw NumericError("weighted_auc: non-finite score for user '" + r.user_id + "'");
        by_user[r.user_id].push_back(&r);
    }

    EvalReport rep;
    double num = 0.0, den = 0.0;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& [user, urows] : by_user) {
        scores.clear();
        labels.clear();
        double weight = 0.0;
        for (const auto* r : urows) {
            scores.push_back(r->score);
            labels.push_back(r->label);
            weight += r->weight;
        }
        const double a = auc(scores, labels);
        if (std::isnan(a)) {
            ++rep.skipped_users;
            continue;
        }
        rep.per_user.push_back({user, urows.size(), a});
        num += weight * a;
        den += weight;
    }
    if (rep.per_user.empty() || den <= 0) throw DataError("weighted_auc: every user lacks a positive or a negative impression");
    rep.weighted_auc = num / den;
    return rep;
}

/// (measured / base − 1) × 100, rounded to two decimals.
inline double rela_impr(double measured_auc, double base_auc)
{
    if (!(base_auc > 0)) throw UsageError("rela_impr: base AUC must be positive");
    const double pct = (measured_auc / base_auc - 1.0) * 100.0;
    return std::round(pct * 100.0) / 100.0;
}

} // namespace dts::metrics
