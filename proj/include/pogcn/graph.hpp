#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pogcn/behavior_order.hpp"
#include "pogcn/error.hpp"

namespace pogcn {

using Index = std::uint32_t;

struct Interaction {
    Index user = 0;
    Index item = 0;
    std::int64_t timestamp = 0;

    friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Raw events of one behavior. Duplicates are allowed; timestamps are only
/// meaningful when `has_timestamps` is set and never affect the graph.
struct InteractionLog {
    std::string behavior;
    std::vector<Interaction> records;
    bool has_timestamps = false;
};

struct CombinationEdge {
    Index user = 0;
    Index item = 0;
    BehaviorSet behaviors;

    friend bool operator==(const CombinationEdge&, const CombinationEdge&) = default;
};

/// One edge per linked (user, item) pair carrying the set of behaviors that
/// link them. Edges are sorted by (user, item).
struct CombinationGraph {
    std::size_t users = 0;
    std::size_t items = 0;
    BehaviorOrder order;
    std::vector<CombinationEdge> edges;

    /// Edge count per distinct combination.
    std::map<BehaviorSet, std::size_t> combination_counts() const {
        std::map<BehaviorSet, std::size_t> out;
        for (const auto& e : edges) ++out[e.behaviors];
        return out;
    }

    std::vector<BehaviorSet> observed_combinations() const {
        std::vector<BehaviorSet> out;
        for (const auto& [set, n] : combination_counts()) out.push_back(set);
        return out;
    }
};

inline CombinationGraph merge_logs(std::span<const InteractionLog> logs, const BehaviorOrder& order,
                                   std::size_t users, std::size_t items) {
    std::set<std::string> seen;
    struct Keyed {
        std::uint64_t key;
        std::uint32_t bits;
    };
    std::vector<Keyed> keyed;
    for (const auto& log : logs) {
        if (!seen.insert(log.behavior).second)
            fail(ErrorKind::DuplicateBehaviorLog, "two logs for behavior '" + log.behavior + "'");
        const auto bit = BehaviorSet::single(order.index_of(log.behavior)).bits();
        for (const auto& r : log.records) {
            if (r.user >= users || r.item >= items)
                fail(ErrorKind::IndexOutOfRange,
                     "interaction (" + std::to_string(r.user) + ", " + std::to_string(r.item) +
                         ") outside " + std::to_string(users) + "x" + std::to_string(items));
            keyed.push_back({(std::uint64_t{r.user} << 32) | r.item, bit});
        }
    }
    std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) { return a.key < b.key; });

    CombinationGraph g;
    g.users = users;
    g.items = items;
    g.order = order;
    for (std::size_t k = 0; k < keyed.size();) {
        std::uint32_t bits = 0;
        std::size_t j = k;
        for (; j < keyed.size() && keyed[j].key == keyed[k].key; ++j) bits |= keyed[j].bits;
        g.edges.push_back({static_cast<Index>(keyed[k].key >> 32),
                           static_cast<Index>(keyed[k].key & 0xffffffffu), BehaviorSet(bits)});
        k = j;
    }
    return g;
}

struct PogEdge {
    Index user = 0;
    Index item = 0;
    double weight = 0.0;
    int rank = 0;

    friend bool operator==(const PogEdge&, const PogEdge&) = default;
};

/// Weighted bipartite user-item graph with edge weight rank^tau, weighted
/// degrees, and positive-pair pools keyed by combination rank.
class PogGraph {
public:
    PogGraph() = default;

    /// Builds from explicit edges. Edges are sorted into (user, item) order;
    /// duplicate pairs and negative or non-finite weights are rejected.
    static PogGraph from_edges(std::size_t users, std::size_t items, double tau,
                               std::vector<PogEdge> edges) {
        if (!(tau >= 0.0) || !std::isfinite(tau))
            fail(ErrorKind::InvalidArgument, "tau must be finite and >= 0");
        std::sort(edges.begin(), edges.end(), [](const PogEdge& a, const PogEdge& b) {
            return a.user != b.user ? a.user < b.user : a.item < b.item;
        });
        PogGraph g;
        g.users_ = users;
        g.items_ = items;
        g.tau_ = tau;
        g.user_degree_.assign(users, 0.0);
        g.item_degree_.assign(items, 0.0);
        g.user_offsets_.assign(users + 1, 0);
        for (std::size_t e = 0; e < edges.size(); ++e) {
            const auto& edge = edges[e];
            if (edge.user >= users || edge.item >= items)
                fail(ErrorKind::IndexOutOfRange, "edge endpoint outside the index space");
            if (!(edge.weight >= 0.0) || !std::isfinite(edge.weight))
                fail(ErrorKind::InvalidArgument, "edge weights must be finite and >= 0");
            if (e > 0 && edges[e - 1].user == edge.user && edges[e - 1].item == edge.item)
                fail(ErrorKind::InvalidArgument, "duplicate edge");
            g.user_degree_[edge.user] += edge.weight;
            g.item_degree_[edge.item] += edge.weight;
            ++g.user_offsets_[edge.user + 1];
            g.pools_[edge.rank].push_back(e);
        }
        for (std::size_t u = 0; u < users; ++u) g.user_offsets_[u + 1] += g.user_offsets_[u];
        g.edges_ = std::move(edges);
        return g;
    }

    std::size_t users() const { return users_; }
    std::size_t items() const { return items_; }
    double tau() const { return tau_; }
    std::size_t edge_count() const { return edges_.size(); }
    const std::vector<PogEdge>& edges() const { return edges_; }
    const std::vector<double>& user_degree() const { return user_degree_; }
    const std::vector<double>& item_degree() const { return item_degree_; }

    /// Edge indices of each rank's positive pairs, ascending.
    const std::map<int, std::vector<std::size_t>>& pools() const { return pools_; }

    /// Edges of one user, sorted by item.
    std::span<const PogEdge> user_edges(Index user) const {
        return std::span<const PogEdge>(edges_).subspan(user_offsets_[user],
                                                        user_offsets_[user + 1] - user_offsets_[user]);
    }

    friend bool operator==(const PogGraph& a, const PogGraph& b) {
        return a.users_ == b.users_ && a.items_ == b.items_ && a.tau_ == b.tau_ && a.edges_ == b.edges_;
    }

private:
    std::size_t users_ = 0;
    std::size_t items_ = 0;
    double tau_ = 0.0;
    std::vector<PogEdge> edges_;
    std::vector<double> user_degree_;
    std::vector<double> item_degree_;
    std::vector<std::size_t> user_offsets_;
    std::map<int, std::vector<std::size_t>> pools_;
};

inline double combination_weight(int rank, double tau) {
    return std::pow(static_cast<double>(rank), tau);
}

inline PogGraph build_pog(const CombinationGraph& cg, const CombinationRank& ranks, double tau) {
    if (!(cg.order == ranks.order()))
        fail(ErrorKind::InvalidArgument, "rank function was built for a different behavior order");
    std::vector<PogEdge> edges;
    edges.reserve(cg.edges.size());
    for (const auto& e : cg.edges) {
        const int r = ranks.rank_of(e.behaviors);
        edges.push_back({e.user, e.item, combination_weight(r, tau), r});
    }
    return PogGraph::from_edges(cg.users, cg.items, tau, std::move(edges));
}

/// Old-to-new index tables; removed ids map to kRemoved.
struct FilterResult {
    static constexpr std::int64_t kRemoved = -1;

    std::vector<InteractionLog> logs;
    std::vector<std::int64_t> user_map;
    std::vector<std::int64_t> item_map;
    std::size_t users = 0;
    std::size_t items = 0;
};

/// Repeatedly drops users and items with fewer than `min_count` records
/// (summed over all behaviors, counted as given) until nothing changes, then
/// compacts the surviving ids in ascending order.
inline FilterResult filter_min_interactions(std::span<const InteractionLog> logs, std::size_t users,
                                            std::size_t items, std::int64_t min_count) {
    if (min_count < 0) fail(ErrorKind::InvalidArgument, "min_count must be >= 0");
    std::vector<char> user_alive(users, 1), item_alive(items, 1);
    for (const auto& log : logs)
        for (const auto& r : log.records)
            if (r.user >= users || r.item >= items)
                fail(ErrorKind::IndexOutOfRange, "interaction outside the index space");

    if (min_count > 0) {
        bool changed = true;
        while (changed) {
            changed = false;
            std::vector<std::int64_t> uc(users, 0), ic(items, 0);
            for (const auto& log : logs)
                for (const auto& r : log.records)
                    if (user_alive[r.user] && item_alive[r.item]) {
                        ++uc[r.user];
                        ++ic[r.item];
                    }
            for (std::size_t u = 0; u < users; ++u)
                if (user_alive[u] && uc[u] < min_count) user_alive[u] = 0, changed = true;
            for (std::size_t i = 0; i < items; ++i)
                if (item_alive[i] && ic[i] < min_count) item_alive[i] = 0, changed = true;
        }
    }

    FilterResult out;
    out.user_map.assign(users, FilterResult::kRemoved);
    out.item_map.assign(items, FilterResult::kRemoved);
    for (std::size_t u = 0; u < users; ++u)
        if (user_alive[u]) out.user_map[u] = static_cast<std::int64_t>(out.users++);
    for (std::size_t i = 0; i < items; ++i)
        if (item_alive[i]) out.item_map[i] = static_cast<std::int64_t>(out.items++);

    std::size_t kept = 0;
    for (const auto& log : logs) {
        InteractionLog filtered{log.behavior, {}, log.has_timestamps};
        for (const auto& r : log.records) {
            if (!user_alive[r.user] || !item_alive[r.item]) continue;
            filtered.records.push_back({static_cast<Index>(out.user_map[r.user]),
                                        static_cast<Index>(out.item_map[r.item]), r.timestamp});
        }
        kept += filtered.records.size();
        out.logs.push_back(std::move(filtered));
    }
    if (min_count > 0 && kept == 0)
        fail(ErrorKind::AllFiltered, "no interaction survives min_count=" + std::to_string(min_count));
    return out;
}

} // namespace pogcn
