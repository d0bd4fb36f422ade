#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pogcn/behavior_order.hpp"
#include "pogcn/error.hpp"
#include "pogcn/evaluator.hpp"
#include "pogcn/graph.hpp"
#include "pogcn/model.hpp"

namespace pogcn {

// ---------------------------------------------------------------------------
// Interaction TSV: user_id<TAB>item_id[<TAB>timestamp]

struct BehaviorSource {
    std::string behavior;
    std::string path;
};

/// Logs over a shared contiguous id space. Raw ids are indexed in order of
/// first appearance, scanning sources in the given order.
struct Dataset {
    std::vector<InteractionLog> logs;
    std::vector<std::string> user_ids;
    std::vector<std::string> item_ids;

    std::size_t users() const { return user_ids.size(); }
    std::size_t items() const { return item_ids.size(); }
    std::size_t interactions() const {
        std::size_t n = 0;
        for (const auto& l : logs) n += l.records.size();
        return n;
    }
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find('\t', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

class IdTable {
public:
    Index intern(std::string_view raw, std::vector<std::string>& names) {
        auto [it, inserted] = index_.try_emplace(std::string(raw), static_cast<Index>(names.size()));
        if (inserted) names.emplace_back(raw);
        return it->second;
    }

private:
    std::unordered_map<std::string, Index> index_;
};

} // namespace detail

/// Parses one behavior's TSV text; `source` names the input in errors.
inline void parse_interactions(std::istream& in, const std::string& source, bool header,
                               InteractionLog& log, detail::IdTable& users, detail::IdTable& items,
                               Dataset& ds) {
    std::string line;
    std::size_t lineno = 0;
    bool all_timestamped = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (header && lineno == 1) continue;
        if (line.empty()) continue;
        const auto fields = detail::split_tabs(line);
        if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() || fields[1].empty())
            fail(ErrorKind::ParseError, source + ":" + std::to_string(lineno) +
                                            ": expected user_id<TAB>item_id[<TAB>timestamp], got '" +
                                            line + "'");
        Interaction r;
        r.user = users.intern(fields[0], ds.user_ids);
        r.item = items.intern(fields[1], ds.item_ids);
        if (fields.size() == 3) {
            const auto ts = fields[2];
            auto res = std::from_chars(ts.data(), ts.data() + ts.size(), r.timestamp);
            if (res.ec != std::errc() || res.ptr != ts.data() + ts.size())
                fail(ErrorKind::ParseError,
                     source + ":" + std::to_string(lineno) + ": bad timestamp '" + std::string(ts) + "'");
        } else {
            all_timestamped = false;
        }
        log.records.push_back(r);
    }
    log.has_timestamps = all_timestamped && !log.records.empty();
}

inline Dataset load_dataset(std::span<const BehaviorSource> sources, bool header = false) {
    for (const auto& s : sources)
        if (!std::filesystem::is_regular_file(s.path))
            fail(ErrorKind::FileNotFound, "cannot read '" + s.path + "' (behavior " + s.behavior + ")");
    Dataset ds;
    detail::IdTable users, items;
    for (const auto& s : sources) {
        std::ifstream in(s.path);
        if (!in) fail(ErrorKind::FileNotFound, "cannot open '" + s.path + "'");
        InteractionLog log;
        log.behavior = s.behavior;
        parse_interactions(in, s.path, header, log, users, items, ds);
        ds.logs.push_back(std::move(log));
    }
    return ds;
}

/// Applies min-interaction filtering to a dataset, keeping the raw id tables aligned.
inline Dataset filter_dataset(const Dataset& ds, std::int64_t min_count) {
    auto res = filter_min_interactions(ds.logs, ds.users(), ds.items(), min_count);
    Dataset out;
    out.logs = std::move(res.logs);
    out.user_ids.resize(res.users);
    out.item_ids.resize(res.items);
    for (std::size_t u = 0; u < res.user_map.size(); ++u)
        if (res.user_map[u] >= 0) out.user_ids[static_cast<std::size_t>(res.user_map[u])] = ds.user_ids[u];
    for (std::size_t i = 0; i < res.item_map.size(); ++i)
        if (res.item_map[i] >= 0) out.item_ids[static_cast<std::size_t>(res.item_map[i])] = ds.item_ids[i];
    return out;
}

inline void write_interactions_tsv(const std::string& path, const InteractionLog& log,
                                   std::span<const std::string> user_ids = {},
                                   std::span<const std::string> item_ids = {}) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::FileNotFound, "cannot write '" + path + "'");
    for (const auto& r : log.records) {
        if (user_ids.empty()) out << r.user; else out << user_ids[r.user];
        out << '\t';
        if (item_ids.empty()) out << r.item; else out << item_ids[r.item];
        if (log.has_timestamps) out << '\t' << r.timestamp;
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Little-endian binary helpers

namespace detail {

class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) fail(ErrorKind::FileNotFound, "cannot write '" + path + "'");
    }

    void bytes(std::string_view b) { out_.write(b.data(), static_cast<std::streamsize>(b.size())); }
    void u32(std::uint32_t v) { uint(v, 4); }
    void u64(std::uint64_t v) { uint(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void finish() {
        out_.flush();
        if (!out_) fail(ErrorKind::FileNotFound, "write to '" + path_ + "' failed");
    }

private:
    void uint(std::uint64_t v, int n) {
        std::array<char, 8> buf{};
        for (int k = 0; k < n; ++k) buf[static_cast<std::size_t>(k)] = static_cast<char>((v >> (8 * k)) & 0xff);
        out_.write(buf.data(), n);
    }

    std::ofstream out_;
    std::string path_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) fail(ErrorKind::FileNotFound, "cannot read '" + path + "'");
        size_ = std::filesystem::file_size(path);
    }

    /// Fails unless at least `count * unit` unread bytes remain.
    void expect(std::uint64_t count, std::uint64_t unit) {
        const auto pos = static_cast<std::uint64_t>(in_.tellg());
        if (unit != 0 && count > (size_ - pos) / unit)
            fail(ErrorKind::FormatError, "'" + path_ + "' is truncated");
    }

    std::string bytes(std::size_t n) {
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
    std::uint64_t u64() { return uint(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    void read(char* dst, std::size_t n) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            fail(ErrorKind::FormatError, "'" + path_ + "' is truncated");
    }
    std::uint64_t uint(int n) {
        std::array<unsigned char, 8> buf{};
        read(reinterpret_cast<char*>(buf.data()), static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int k = n - 1; k >= 0; --k) v = (v << 8) | buf[static_cast<std::size_t>(k)];
        return v;
    }

    std::ifstream in_;
    std::string path_;
    std::uint64_t size_ = 0;
};

} // namespace detail

// ---------------------------------------------------------------------------
// POG snapshot
//
//   "POGGRAPH" | u32 version | u64 users | u64 items | f64 tau | u64 edges
//   edges x (u32 user, u32 item, f64 weight) | edges x u32 combination rank

inline constexpr std::string_view kPogMagic = "POGGRAPH";
inline constexpr std::uint32_t kPogVersion = 1;

inline void write_pog_snapshot(const std::string& path, const PogGraph& g) {
    detail::BinaryWriter w(path);
    w.bytes(kPogMagic);
    w.u32(kPogVersion);
    w.u64(g.users());
    w.u64(g.items());
    w.f64(g.tau());
    w.u64(g.edge_count());
    for (const auto& e : g.edges()) {
        w.u32(e.user);
        w.u32(e.item);
        w.f64(e.weight);
    }
    for (const auto& e : g.edges()) w.u32(static_cast<std::uint32_t>(e.rank));
    w.finish();
}

inline PogGraph read_pog_snapshot(const std::string& path) {
    detail::BinaryReader r(path);
    if (r.bytes(kPogMagic.size()) != kPogMagic) fail(ErrorKind::FormatError, "'" + path + "' is not a POG snapshot");
    if (const auto v = r.u32(); v != kPogVersion)
        fail(ErrorKind::FormatError, "unsupported POG snapshot version " + std::to_string(v));
    const auto users = r.u64();
    const auto items = r.u64();
    const double tau = r.f64();
    const auto n = r.u64();
    r.expect(n, 20);
    std::vector<PogEdge> edges(n);
    for (auto& e : edges) {
        e.user = r.u32();
        e.item = r.u32();
        e.weight = r.f64();
    }
    for (auto& e : edges) e.rank = static_cast<int>(r.u32());
    if (!r.at_end()) fail(ErrorKind::FormatError, "'" + path + "' has trailing bytes");
    return PogGraph::from_edges(users, items, tau, std::move(edges));
}

/// u<TAB>i<TAB>weight, canonical edge order.
inline void write_edge_list_tsv(const std::string& path, const PogGraph& g) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::FileNotFound, "cannot write '" + path + "'");
    for (const auto& e : g.edges()) out << e.user << '\t' << e.item << '\t' << format_double(e.weight) << '\n';
}

/// combination<TAB>rank<TAB>weight, ascending rank.
inline void write_rank_table_tsv(const std::string& path, const CombinationRank& ranks, double tau) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::FileNotFound, "cannot write '" + path + "'");
    out << "combination\trank\tweight\n";
    for (const auto& [set, rank] : ranks.entries())
        out << ranks.order().format(set) << '\t' << rank << '\t'
            << format_double(combination_weight(rank, tau)) << '\n';
}

// ---------------------------------------------------------------------------
// Embedding snapshot
//
//   "POGEMBED" | u32 version | u64 users | u64 items | u32 dim | u32 layers |
//   f64 tau | users x dim f32 | items x dim f32  (row-major)

inline constexpr std::string_view kEmbeddingMagic = "POGEMBED";
inline constexpr std::uint32_t kEmbeddingVersion = 1;

struct EmbeddingSnapshot {
    PropagatedEmbeddings embeddings;
    int layers = 0;
    double tau = 0.0;
};

inline void write_embedding_snapshot(const std::string& path, const PropagatedEmbeddings& emb, int layers,
                                     double tau) {
    detail::BinaryWriter w(path);
    w.bytes(kEmbeddingMagic);
    w.u32(kEmbeddingVersion);
    w.u64(static_cast<std::uint64_t>(emb.users.rows()));
    w.u64(static_cast<std::uint64_t>(emb.items.rows()));
    w.u32(static_cast<std::uint32_t>(emb.users.cols()));
    w.u32(static_cast<std::uint32_t>(layers));
    w.f64(tau);
    for (const Matrix* m : {&emb.users, &emb.items})
        for (Eigen::Index r = 0; r < m->rows(); ++r)
            for (Eigen::Index c = 0; c < m->cols(); ++c) w.f32(static_cast<float>((*m)(r, c)));
    w.finish();
}

inline EmbeddingSnapshot read_embedding_snapshot(const std::string& path) {
    detail::BinaryReader r(path);
    if (r.bytes(kEmbeddingMagic.size()) != kEmbeddingMagic)
        fail(ErrorKind::FormatError, "'" + path + "' is not an embedding snapshot");
    if (const auto v = r.u32(); v != kEmbeddingVersion)
        fail(ErrorKind::FormatError, "unsupported embedding snapshot version " + std::to_string(v));
    const auto users = r.u64();
    const auto items = r.u64();
    const auto dim = r.u32();
    EmbeddingSnapshot s;
    s.layers = static_cast<int>(r.u32());
    s.tau = r.f64();
    if (users > (std::uint64_t{1} << 40) || items > (std::uint64_t{1} << 40))
        fail(ErrorKind::FormatError, "'" + path + "' declares implausible table sizes");
    r.expect((users + items) * dim, 4);
    s.embeddings.users.resize(static_cast<Eigen::Index>(users), static_cast<Eigen::Index>(dim));
    s.embeddings.items.resize(static_cast<Eigen::Index>(items), static_cast<Eigen::Index>(dim));
    for (Matrix* m : {&s.embeddings.users, &s.embeddings.items})
        for (Eigen::Index i = 0; i < m->rows(); ++i)
            for (Eigen::Index c = 0; c < m->cols(); ++c) (*m)(i, c) = r.f32();
    if (!r.at_end()) fail(ErrorKind::FormatError, "'" + path + "' has trailing bytes");
    return s;
}

/// id<TAB>v1,...,vd for every row.
inline void write_embedding_tsv(const std::string& path, const Matrix& table) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::FileNotFound, "cannot write '" + path + "'");
    for (Eigen::Index r = 0; r < table.rows(); ++r) {
        out << r << '\t';
        for (Eigen::Index c = 0; c < table.cols(); ++c) {
            if (c) out << ',';
            char buf[32];
            auto res = std::to_chars(buf, buf + sizeof buf, static_cast<float>(table(r, c)));
            out.write(buf, res.ptr - buf);
        }
        out << '\n';
    }
}

} // namespace pogcn
