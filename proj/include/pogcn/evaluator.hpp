#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pogcn/error.hpp"
#include "pogcn/graph.hpp"
#include "pogcn/model.hpp"
#include "pogcn/rng.hpp"

namespace pogcn {

enum class SplitMode { Random, Temporal };

inline std::string to_string(SplitMode m) { return m == SplitMode::Random ? "random" : "temporal"; }

inline SplitMode parse_split_mode(const std::string& s) {
    if (s == "random") return SplitMode::Random;
    if (s == "temporal") return SplitMode::Temporal;
    fail(ErrorKind::InvalidArgument, "unknown split mode '" + s + "' (random|temporal)");
}

struct SplitSpec {
    SplitMode mode = SplitMode::Random;
    double test_fraction = 0.2;
    std::uint64_t seed = 2024;
};

struct SplitResult {
    std::vector<InteractionLog> train;
    std::vector<InteractionLog> test;
};

/// Per behavior and user, floor(fraction * n) of the user's distinct items
/// are selected (at random, or the latest by timestamp). A selected
/// (user, item) pair leaves training for every behavior, and each behavior
/// that links the pair gets it as a test interaction, so no test pair is
/// ever visible in the training graph.
inline SplitResult split(std::span<const InteractionLog> logs, const SplitSpec& spec) {
    if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
        fail(ErrorKind::InvalidFraction, "test fraction must lie in (0, 1)");
    Rng rng = make_rng(spec.seed, "split");
    std::set<std::pair<Index, Index>> held_out;

    for (const auto& log : logs) {
        if (spec.mode == SplitMode::Temporal && !log.has_timestamps)
            fail(ErrorKind::InvalidArgument,
                 "temporal split needs timestamps for behavior '" + log.behavior + "'");
        // user -> item -> latest timestamp
        std::map<Index, std::map<Index, std::int64_t>> by_user;
        for (const auto& r : log.records) {
            auto [it, inserted] = by_user[r.user].emplace(r.item, r.timestamp);
            if (!inserted) it->second = std::max(it->second, r.timestamp);
        }
        for (const auto& [user, items] : by_user) {
            const auto hold = static_cast<std::size_t>(
                std::floor(spec.test_fraction * static_cast<double>(items.size())));
            if (hold == 0) continue;
            std::vector<std::pair<std::int64_t, Index>> order;
            for (const auto& [item, ts] : items) order.emplace_back(ts, item);
            if (spec.mode == SplitMode::Random) {
                for (std::size_t k = order.size() - 1; k > 0; --k)
                    std::swap(order[k], order[uniform_index(rng, k + 1)]);
            } else {
                std::sort(order.begin(), order.end());
            }
            for (std::size_t k = order.size() - hold; k < order.size(); ++k)
                held_out.emplace(user, order[k].second);
        }
    }

    SplitResult out;
    for (const auto& log : logs) {
        InteractionLog train{log.behavior, {}, log.has_timestamps};
        InteractionLog test{log.behavior, {}, log.has_timestamps};
        std::set<std::pair<Index, Index>> test_seen;
        for (const auto& r : log.records) {
            const std::pair<Index, Index> key{r.user, r.item};
            if (!held_out.contains(key)) {
                train.records.push_back(r);
            } else if (test_seen.insert(key).second) {
                test.records.push_back(r);
            }
        }
        out.train.push_back(std::move(train));
        out.test.push_back(std::move(test));
    }
    return out;
}

/// Fraction of the test items found in the first k positions; nullopt for
/// an empty test set.
inline std::optional<double> recall_at_k(std::span<const Index> ranked, const std::set<Index>& test,
                                         std::size_t k) {
    if (test.empty()) return std::nullopt;
    std::size_t hits = 0;
    for (std::size_t p = 0; p < std::min(k, ranked.size()); ++p)
        if (test.contains(ranked[p])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(test.size());
}

/// Binary-relevance NDCG with gain 1/log2(position + 1), positions from 1.
inline std::optional<double> ndcg_at_k(std::span<const Index> ranked, const std::set<Index>& test,
                                       std::size_t k) {
    if (test.empty()) return std::nullopt;
    double dcg = 0.0;
    for (std::size_t p = 0; p < std::min(k, ranked.size()); ++p)
        if (test.contains(ranked[p])) dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
    double idcg = 0.0;
    for (std::size_t p = 0; p < std::min(k, test.size()); ++p)
        idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
    return dcg / idcg;
}

struct BehaviorMetrics {
    std::string behavior;
    /// Users with a non-empty test set that were scored.
    std::size_t users = 0;
    bool present = false;
    std::vector<double> recall;
    std::vector<double> ndcg;
};

struct EvalReport {
    std::vector<std::size_t> ks;
    std::vector<BehaviorMetrics> per_behavior;
    std::vector<double> mean_recall;
    std::vector<double> mean_ndcg;

    std::string dataset;
    std::string config_hash;
    std::uint64_t seed = 0;
    /// Empty when the run is deterministic.
    std::string timestamp;

    std::size_t k_index(std::size_t k) const {
        auto it = std::find(ks.begin(), ks.end(), k);
        if (it == ks.end()) fail(ErrorKind::InvalidArgument, "K=" + std::to_string(k) + " not evaluated");
        return static_cast<std::size_t>(it - ks.begin());
    }
    double mean_ndcg_at(std::size_t k) const { return mean_ndcg[k_index(k)]; }
    double mean_recall_at(std::size_t k) const { return mean_recall[k_index(k)]; }
};

/// Full-ranking evaluation. For each behavior and each user with test items
/// in it, every item except the user's training items (any behavior) is
/// ranked; metrics are averaged over those users, then across behaviors.
/// Users without any training interaction are not evaluated.
inline EvalReport evaluate(const PropagatedEmbeddings& emb, std::span<const InteractionLog> train_logs,
                           std::span<const InteractionLog> test_logs, std::vector<std::size_t> ks) {
    if (ks.empty()) fail(ErrorKind::InvalidArgument, "no K values to evaluate");
    for (auto k : ks)
        if (k < 1) fail(ErrorKind::InvalidArgument, "K must be >= 1");
    const auto users = static_cast<std::size_t>(emb.users.rows());
    const auto items = static_cast<std::size_t>(emb.items.rows());
    const std::size_t max_k = *std::max_element(ks.begin(), ks.end());

    std::vector<std::vector<Index>> train_items(users);
    for (const auto& log : train_logs)
        for (const auto& r : log.records) {
            if (r.user >= users || r.item >= items)
                fail(ErrorKind::DimensionMismatch, "training interaction outside the embedding tables");
            train_items[r.user].push_back(r.item);
        }
    std::vector<std::vector<std::set<Index>>> tests(test_logs.size(), std::vector<std::set<Index>>(users));
    for (std::size_t b = 0; b < test_logs.size(); ++b)
        for (const auto& r : test_logs[b].records) {
            if (r.user >= users || r.item >= items)
                fail(ErrorKind::DimensionMismatch, "test interaction outside the embedding tables");
            tests[b][r.user].insert(r.item);
        }

    EvalReport report;
    report.ks = ks;
    for (const auto& log : test_logs) {
        BehaviorMetrics m;
        m.behavior = log.behavior;
        m.recall.assign(ks.size(), 0.0);
        m.ndcg.assign(ks.size(), 0.0);
        report.per_behavior.push_back(std::move(m));
    }

    std::vector<char> masked(items, 0);
    for (std::size_t u = 0; u < users; ++u) {
        if (train_items[u].empty()) continue;
        bool any = false;
        for (std::size_t b = 0; b < tests.size(); ++b) any = any || !tests[b][u].empty();
        if (!any) continue;

        for (Index i : train_items[u]) masked[i] = 1;
        const auto scores = score_all(emb, u);
        const auto ranked = top_k_from_scores(scores, max_k, masked);
        for (Index i : train_items[u]) masked[i] = 0;

        for (std::size_t b = 0; b < tests.size(); ++b) {
            if (tests[b][u].empty()) continue;
            auto& m = report.per_behavior[b];
            ++m.users;
            for (std::size_t q = 0; q < ks.size(); ++q) {
                m.recall[q] += *recall_at_k(ranked, tests[b][u], ks[q]);
                m.ndcg[q] += *ndcg_at_k(ranked, tests[b][u], ks[q]);
            }
        }
    }

    report.mean_recall.assign(ks.size(), 0.0);
    report.mean_ndcg.assign(ks.size(), 0.0);
    std::size_t present = 0;
    for (auto& m : report.per_behavior) {
        if (m.users == 0) {
            std::cerr << "warning: behavior '" << m.behavior
                      << "' has no test users and is excluded from the mean\n";
            continue;
        }
        m.present = true;
        ++present;
        for (std::size_t q = 0; q < ks.size(); ++q) {
            m.recall[q] /= static_cast<double>(m.users);
            m.ndcg[q] /= static_cast<double>(m.users);
            report.mean_recall[q] += m.recall[q];
            report.mean_ndcg[q] += m.ndcg[q];
        }
    }
    if (present == 0) fail(ErrorKind::NoTestUsers, "no behavior has test users");
    for (std::size_t q = 0; q < ks.size(); ++q) {
        report.mean_recall[q] /= static_cast<double>(present);
        report.mean_ndcg[q] /= static_cast<double>(present);
    }
    return report;
}

/// Shortest round-trip decimal form.
inline std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["ks"] = r.ks;
    j["per_behavior"] = nlohmann::json::object();
    for (const auto& m : r.per_behavior) {
        nlohmann::json b;
        b["present"] = m.present;
        b["users"] = m.users;
        for (std::size_t q = 0; q < r.ks.size(); ++q) {
            const auto k = std::to_string(r.ks[q]);
            b["recall@" + k] = m.present ? nlohmann::json(m.recall[q]) : nlohmann::json();
            b["ndcg@" + k] = m.present ? nlohmann::json(m.ndcg[q]) : nlohmann::json();
        }
        j["per_behavior"][m.behavior] = b;
    }
    for (std::size_t q = 0; q < r.ks.size(); ++q) {
        const auto k = std::to_string(r.ks[q]);
        j["mean"]["recall@" + k] = r.mean_recall[q];
        j["mean"]["ndcg@" + k] = r.mean_ndcg[q];
    }
    j["metadata"] = {{"dataset", r.dataset},
                     {"config_hash", r.config_hash},
                     {"seed", r.seed},
                     {"timestamp", r.timestamp.empty() ? nlohmann::json() : nlohmann::json(r.timestamp)}};
    return j;
}

/// behavior<TAB>metric<TAB>k<TAB>value rows after '#'-prefixed metadata lines;
/// the cross-behavior mean uses behavior "mean".
inline std::string to_tsv(const EvalReport& r) {
    std::ostringstream out;
    out << "#config_hash\t" << r.config_hash << "\n#seed\t" << r.seed << "\n";
    out << "behavior\tmetric\tk\tvalue\n";
    auto rows = [&](const std::string& name, const std::vector<double>& recall,
                    const std::vector<double>& ndcg) {
        for (std::size_t q = 0; q < r.ks.size(); ++q) {
            out << name << "\trecall\t" << r.ks[q] << '\t' << format_double(recall[q]) << '\n';
            out << name << "\tndcg\t" << r.ks[q] << '\t' << format_double(ndcg[q]) << '\n';
        }
    };
    for (const auto& m : r.per_behavior)
        if (m.present) rows(m.behavior, m.recall, m.ndcg);
    rows("mean", r.mean_recall, r.mean_ndcg);
    return out.str();
}

/// Human-readable per-behavior table with a Mean row.
inline std::string format_table(const EvalReport& r) {
    std::ostringstream out;
    char buf[64];
    out << "behavior    ";
    for (auto k : r.ks) {
        std::snprintf(buf, sizeof buf, "  Recall@%-4zu  NDCG@%-4zu", k, k);
        out << buf;
    }
    out << '\n';
    auto row = [&](const std::string& name, const std::vector<double>& rec, const std::vector<double>& nd) {
        std::snprintf(buf, sizeof buf, "%-12s", name.c_str());
        out << buf;
        for (std::size_t q = 0; q < r.ks.size(); ++q) {
            std::snprintf(buf, sizeof buf, "  %11.4f  %9.4f", rec[q], nd[q]);
            out << buf;
        }
        out << '\n';
    };
    for (const auto& m : r.per_behavior) {
        if (m.present) row(m.behavior, m.recall, m.ndcg);
        else out << m.behavior << "  (no test users)\n";
    }
    row("Mean", r.mean_recall, r.mean_ndcg);
    return out.str();
}

} // namespace pogcn
