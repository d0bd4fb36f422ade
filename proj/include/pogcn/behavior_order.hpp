#pragma once

#include <algorithm>
#include <bit>
#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pogcn/error.hpp"

namespace pogcn {

/// A behavior combination: a set of behavior indices of one BehaviorOrder,
/// stored as a bitmask (bit b set <=> behavior b present).
class BehaviorSet {
public:
    constexpr BehaviorSet() = default;
    constexpr explicit BehaviorSet(std::uint32_t bits) : bits_(bits) {}

    static constexpr BehaviorSet single(std::size_t behavior) {
        return BehaviorSet(std::uint32_t{1} << behavior);
    }

    constexpr std::uint32_t bits() const { return bits_; }
    constexpr bool empty() const { return bits_ == 0; }
    constexpr int size() const { return std::popcount(bits_); }
    constexpr bool contains(std::size_t behavior) const { return (bits_ >> behavior) & 1u; }

    constexpr BehaviorSet with(std::size_t behavior) const {
        return BehaviorSet(bits_ | (std::uint32_t{1} << behavior));
    }
    constexpr bool is_subset_of(BehaviorSet other) const { return (bits_ & ~other.bits_) == 0; }

    friend constexpr auto operator<=>(BehaviorSet, BehaviorSet) = default;

private:
    std::uint32_t bits_ = 0;
};

inline constexpr std::size_t kMaxBehaviors = 32;
/// Upper bound on the behavior count for the all-subsets rank universe.
inline constexpr std::size_t kMaxEnumeratedBehaviors = 20;

/// Graded partial order over behaviors, declared as levels in ascending
/// importance. Behaviors in one level are mutually incomparable, every
/// behavior in level k is below every behavior in level k+1, and the rank of
/// a behavior is its 1-based level index.
class BehaviorOrder {
public:
    BehaviorOrder() = default;

    /// Validates a level declaration. Behavior indices follow declaration
    /// order (level 1 first).
    static BehaviorOrder from_levels(const std::vector<std::vector<std::string>>& levels) {
        if (levels.empty()) fail(ErrorKind::EmptyOrder, "partial order declares no levels");
        BehaviorOrder order;
        for (std::size_t k = 0; k < levels.size(); ++k) {
            if (levels[k].empty())
                fail(ErrorKind::EmptyLevel, "level " + std::to_string(k + 1) + " is empty");
            for (const auto& name : levels[k]) {
                if (order.index_.contains(name))
                    fail(ErrorKind::DuplicateBehavior, "behavior '" + name + "' declared twice");
                if (order.names_.size() == kMaxBehaviors)
                    fail(ErrorKind::TooManyBehaviors,
                         "at most " + std::to_string(kMaxBehaviors) + " behaviors are supported");
                order.index_.emplace(name, order.names_.size());
                order.names_.push_back(name);
                order.rank_.push_back(static_cast<int>(k + 1));
            }
            order.level_sizes_.push_back(static_cast<int>(levels[k].size()));
        }
        return order;
    }

    std::size_t size() const { return names_.size(); }
    int max_rank() const { return static_cast<int>(level_sizes_.size()); }
    const std::vector<std::string>& names() const { return names_; }
    const std::string& name(std::size_t behavior) const { return names_.at(behavior); }

    /// Rank (level index) of a behavior, >= 1.
    int rank(std::size_t behavior) const { return rank_.at(behavior); }
    int rank(const std::string& name) const { return rank_[index_of(name)]; }
    int level_size(int rank) const { return level_sizes_.at(static_cast<std::size_t>(rank - 1)); }

    std::vector<std::vector<std::string>> levels() const {
        std::vector<std::vector<std::string>> out(level_sizes_.size());
        for (std::size_t b = 0; b < names_.size(); ++b)
            out[static_cast<std::size_t>(rank_[b] - 1)].push_back(names_[b]);
        return out;
    }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) fail(ErrorKind::UnknownBehavior, "unknown behavior '" + name + "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    BehaviorSet make_set(std::span<const std::string> names) const {
        BehaviorSet set;
        for (const auto& n : names) set = set.with(index_of(n));
        return set;
    }
    BehaviorSet make_set(std::initializer_list<std::string> names) const {
        std::vector<std::string> v(names);
        return make_set(std::span<const std::string>(v));
    }

    BehaviorSet full_set() const {
        return BehaviorSet(names_.size() == 32 ? ~std::uint32_t{0}
                                               : (std::uint32_t{1} << names_.size()) - 1);
    }

    /// Throws UnknownBehavior when the set references an index outside the order.
    void check(BehaviorSet set) const {
        if (!set.is_subset_of(full_set()))
            fail(ErrorKind::UnknownBehavior, "combination references an undeclared behavior");
    }

    /// Member names joined with '+', in declaration order.
    std::string format(BehaviorSet set) const {
        std::string out;
        for (std::size_t b = 0; b < names_.size(); ++b) {
            if (!set.contains(b)) continue;
            if (!out.empty()) out += '+';
            out += names_[b];
        }
        return out;
    }

    /// Number of members of `set` whose rank equals `rank`.
    int count_at_rank(BehaviorSet set, int rank) const {
        int n = 0;
        for (std::size_t b = 0; b < names_.size(); ++b)
            if (set.contains(b) && rank_[b] == rank) ++n;
        return n;
    }

    friend bool operator==(const BehaviorOrder& a, const BehaviorOrder& b) {
        return a.names_ == b.names_ && a.rank_ == b.rank_;
    }

private:
    std::vector<std::string> names_;
    std::vector<int> rank_;
    std::vector<int> level_sizes_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Per-rank member counts of a combination, highest rank first:
/// counts[0] = f(max_rank, C), ..., counts.back() = f(1, C).
struct RankCountVector {
    std::vector<int> counts;

    int total() const {
        int s = 0;
        for (int c : counts) s += c;
        return s;
    }

    friend auto operator<=>(const RankCountVector&, const RankCountVector&) = default;
};

inline RankCountVector rank_counts(const BehaviorOrder& order, BehaviorSet set) {
    order.check(set);
    RankCountVector v;
    v.counts.assign(static_cast<std::size_t>(order.max_rank()), 0);
    for (std::size_t b = 0; b < order.size(); ++b)
        if (set.contains(b)) ++v.counts[static_cast<std::size_t>(order.max_rank() - order.rank(b))];
    return v;
}

enum class Relation { Less, Greater, Equal, Incomparable };

inline const char* to_string(Relation r) {
    switch (r) {
    case Relation::Less: return "Less";
    case Relation::Greater: return "Greater";
    case Relation::Equal: return "Equal";
    case Relation::Incomparable: return "Incomparable";
    }
    return "?";
}

/// Behavior-combination comparison by intensity counts: equal sets are Equal;
/// otherwise per-rank member counts are compared from the highest rank down
/// and the first strict difference decides. Distinct sets with identical
/// counts at every rank are Incomparable.
inline Relation compare_combinations(BehaviorSet a, BehaviorSet b, const BehaviorOrder& order) {
    order.check(a);
    order.check(b);
    if (a.empty() || b.empty()) fail(ErrorKind::InvalidArgument, "combinations must be non-empty");
    if (a == b) return Relation::Equal;
    for (int k = order.max_rank(); k >= 1; --k) {
        const int fa = order.count_at_rank(a, k);
        const int fb = order.count_at_rank(b, k);
        if (fa < fb) return Relation::Less;
        if (fb < fa) return Relation::Greater;
    }
    return Relation::Incomparable;
}

/// Graded rank over a universe of behavior combinations. Combinations with
/// identical rank-count vectors form one class; classes are numbered 1..n in
/// ascending lexicographic order of their vectors.
class CombinationRank {
public:
    CombinationRank() = default;

    const BehaviorOrder& order() const { return order_; }

    bool contains(BehaviorSet set) const { return table_.contains(set.bits()); }

    int rank_of(BehaviorSet set) const {
        auto it = table_.find(set.bits());
        if (it == table_.end())
            fail(ErrorKind::UnrankedCombination,
                 "combination {" + order_.format(set) + "} has no rank");
        return it->second;
    }

    int class_count() const { return static_cast<int>(classes_.size()); }

    /// classes()[r-1] holds the combinations of rank r, sorted by bitmask.
    const std::vector<std::vector<BehaviorSet>>& classes() const { return classes_; }

    /// (combination, rank) ordered by rank, then bitmask.
    std::vector<std::pair<BehaviorSet, int>> entries() const {
        std::vector<std::pair<BehaviorSet, int>> out;
        for (std::size_t r = 0; r < classes_.size(); ++r)
            for (auto set : classes_[r]) out.emplace_back(set, static_cast<int>(r + 1));
        return out;
    }

private:
    friend CombinationRank build_rank_function(const BehaviorOrder&, std::span<const BehaviorSet>);

    BehaviorOrder order_;
    std::unordered_map<std::uint32_t, int> table_;
    std::vector<std::vector<BehaviorSet>> classes_;
};

inline CombinationRank build_rank_function(const BehaviorOrder& order,
                                           std::span<const BehaviorSet> universe) {
    if (universe.empty()) fail(ErrorKind::EmptyUniverse, "rank universe is empty");
    std::map<RankCountVector, std::vector<BehaviorSet>> groups;
    for (auto set : universe) {
        if (set.empty()) fail(ErrorKind::InvalidArgument, "rank universe contains the empty set");
        groups[rank_counts(order, set)].push_back(set);
    }
    CombinationRank ranks;
    ranks.order_ = order;
    int rank = 0;
    for (auto& [vec, members] : groups) {
        ++rank;
        std::sort(members.begin(), members.end());
        members.erase(std::unique(members.begin(), members.end()), members.end());
        for (auto set : members) ranks.table_.emplace(set.bits(), rank);
        ranks.classes_.push_back(std::move(members));
    }
    return ranks;
}

/// Every non-empty subset of the order's behaviors.
inline std::vector<BehaviorSet> all_subsets(const BehaviorOrder& order) {
    if (order.size() > kMaxEnumeratedBehaviors)
        fail(ErrorKind::TooManyBehaviors,
             "all-subsets universe supports at most " + std::to_string(kMaxEnumeratedBehaviors) +
                 " behaviors; use the observed universe");
    std::vector<BehaviorSet> out;
    const std::uint32_t n = std::uint32_t{1} << order.size();
    out.reserve(n - 1);
    for (std::uint32_t bits = 1; bits < n; ++bits) out.emplace_back(bits);
    return out;
}

inline CombinationRank build_rank_function(const BehaviorOrder& order) {
    auto universe = all_subsets(order);
    return build_rank_function(order, universe);
}

} // namespace pogcn
