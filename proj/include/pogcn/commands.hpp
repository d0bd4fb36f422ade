#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pogcn/behavior_order.hpp"
#include "pogcn/config.hpp"
#include "pogcn/error.hpp"
#include "pogcn/evaluator.hpp"
#include "pogcn/graph.hpp"
#include "pogcn/io.hpp"
#include "pogcn/model.hpp"
#include "pogcn/synthetic.hpp"
#include "pogcn/trainer.hpp"

namespace pogcn {

namespace fs = std::filesystem;

inline CombinationRank build_ranks(const BehaviorOrder& order, const CombinationGraph& cg,
                                   RankUniverse universe) {
    if (universe == RankUniverse::AllSubsets) return build_rank_function(order);
    return build_rank_function(order, cg.observed_combinations());
}

/// Dataset after filtering and splitting, plus the graph the model trains on.
/// `fit` is the training split minus the validation hold-out (equal to
/// `split.train` when validation is disabled).
struct PreparedData {
    Dataset dataset;
    BehaviorOrder order;
    SplitResult split;
    std::vector<InteractionLog> fit;
    std::vector<InteractionLog> validation;
    CombinationRank ranks;
    PogGraph graph;

    bool has_validation() const {
        for (const auto& l : validation)
            if (!l.records.empty()) return true;
        return false;
    }
};

inline Dataset load_filtered(const RunConfig& cfg) {
    const auto sources = cfg.resolved_sources();
    return filter_dataset(load_dataset(sources, cfg.header), cfg.min_interactions);
}

inline PreparedData prepare(const RunConfig& cfg) {
    cfg.validate();
    PreparedData p;
    p.order = BehaviorOrder::from_levels(cfg.levels);
    for (const auto& s : cfg.behaviors) p.order.index_of(s.behavior);
    p.dataset = load_filtered(cfg);
    SplitSpec test_spec = cfg.split;
    test_spec.seed = cfg.seed;
    p.split = split(p.dataset.logs, test_spec);
    if (cfg.val_fraction > 0.0) {
        SplitSpec val_spec{cfg.split.mode, cfg.val_fraction, derive_seed(cfg.seed, "validation")};
        auto inner = split(p.split.train, val_spec);
        p.fit = std::move(inner.train);
        p.validation = std::move(inner.test);
    } else {
        p.fit = p.split.train;
    }
    const auto cg = merge_logs(p.fit, p.order, p.dataset.users(), p.dataset.items());
    p.ranks = build_ranks(p.order, cg, cfg.rank_universe);
    p.graph = build_pog(cg, p.ranks, cfg.tau);
    return p;
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::FileNotFound, "cannot write '" + path.string() + "'");
    out << text;
}

// ---------------------------------------------------------------------------

struct BuildGraphOutput {
    fs::path snapshot;
    fs::path edges;
    fs::path rank_table;
    std::string summary;
};

/// Builds the graph over the full (filtered) dataset.
inline BuildGraphOutput cmd_build_graph(const RunConfig& cfg, const fs::path& out_dir) {
    const auto order = BehaviorOrder::from_levels(cfg.levels);
    const auto ds = load_filtered(cfg);
    const auto cg = merge_logs(ds.logs, order, ds.users(), ds.items());
    const auto ranks = build_ranks(order, cg, cfg.rank_universe);
    const auto g = build_pog(cg, ranks, cfg.tau);

    fs::create_directories(out_dir);
    BuildGraphOutput out{out_dir / "pog.bin", out_dir / "pog_edges.tsv", out_dir / "rank_table.tsv", {}};
    write_pog_snapshot(out.snapshot.string(), g);
    write_edge_list_tsv(out.edges.string(), g);
    write_rank_table_tsv(out.rank_table.string(), ranks, cfg.tau);

    std::ostringstream s;
    s << "users\t" << g.users() << "\nitems\t" << g.items() << "\nedges\t" << g.edge_count() << '\n';
    for (const auto& log : ds.logs) s << "interactions[" << log.behavior << "]\t" << log.records.size() << '\n';
    for (const auto& [set, n] : cg.combination_counts())
        s << "combination[" << order.format(set) << "]\trank=" << ranks.rank_of(set) << "\tedges=" << n << '\n';
    out.summary = s.str();
    return out;
}

// ---------------------------------------------------------------------------

struct TrainOutput {
    std::string config_hash;
    fs::path run_dir;
    fs::path final_checkpoint;
    fs::path best_checkpoint;
    fs::path log;
    TrainResult result;
};

inline std::string format_train_log(const std::vector<EpochRecord>& log) {
    std::ostringstream out;
    out << "epoch\tstep\tloss\tval_mean_ndcg\n";
    for (const auto& r : log)
        out << r.epoch << '\t' << r.step << '\t' << format_double(r.loss) << '\t'
            << (std::isnan(r.val_mean_ndcg) ? std::string("NA") : format_double(r.val_mean_ndcg)) << '\n';
    return out.str();
}

inline fs::path run_directory(const RunConfig& cfg) {
    return fs::path(cfg.resolve(cfg.output_dir)) / "runs" / config_hash(cfg);
}

/// Validation metric: mean NDCG@20 over behaviors.
inline Validator make_validator(const PreparedData& p) {
    if (!p.has_validation()) return {};
    return [&p](const PropagatedEmbeddings& emb) {
        return evaluate(emb, p.fit, p.validation, {20}).mean_ndcg_at(20);
    };
}

inline TrainOutput cmd_train(const RunConfig& cfg, bool register_run = true) {
    const auto p = prepare(cfg);
    TrainOutput out;
    out.config_hash = config_hash(cfg);
    out.run_dir = run_directory(cfg);
    fs::create_directories(out.run_dir);
    save_config((out.run_dir / "config.json").string(), cfg);

    out.result = train(p.graph, cfg.train_config(), p.fit, make_validator(p));
    out.final_checkpoint = out.run_dir / "final.ckpt";
    out.best_checkpoint = out.run_dir / "best.ckpt";
    out.log = out.run_dir / "train_log.tsv";
    write_embedding_snapshot(out.final_checkpoint.string(), propagate(out.result.final_model, p.graph),
                             cfg.layers, cfg.tau);
    write_embedding_snapshot(out.best_checkpoint.string(), propagate(out.result.best_model, p.graph),
                             cfg.layers, cfg.tau);
    write_text(out.log, format_train_log(out.result.log));
    if (register_run)
        append_manifest((fs::path(cfg.resolve(cfg.output_dir)) / "manifest.tsv").string(),
                        {out.config_hash, "-", out.best_checkpoint.string()});
    return out;
}

// ---------------------------------------------------------------------------

struct EvalOutput {
    EvalReport report;
    fs::path json;
    fs::path tsv;
};

inline void check_checkpoint(const EmbeddingSnapshot& snap, const Dataset& ds) {
    const auto m = static_cast<std::size_t>(snap.embeddings.users.rows());
    const auto n = static_cast<std::size_t>(snap.embeddings.items.rows());
    if (m != ds.users() || n != ds.items())
        fail(ErrorKind::DimensionMismatch, "checkpoint is " + std::to_string(m) + " users x " +
                                               std::to_string(n) + " items but dataset is " +
                                               std::to_string(ds.users()) + " users x " +
                                               std::to_string(ds.items()) + " items");
}

/// Evaluates a checkpoint on the test split; reports go to `out_dir`
/// (default: the checkpoint's directory).
inline EvalOutput cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, fs::path out_dir = {}) {
    cfg.validate();
    const auto snap = read_embedding_snapshot(checkpoint.string());
    const auto ds = load_filtered(cfg);
    check_checkpoint(snap, ds);
    SplitSpec spec = cfg.split;
    spec.seed = cfg.seed;
    const auto sp = split(ds.logs, spec);

    EvalOutput out;
    out.report = evaluate(snap.embeddings, sp.train, sp.test, cfg.ks);
    out.report.dataset = cfg.dataset_name;
    out.report.config_hash = config_hash(cfg);
    out.report.seed = cfg.seed;
    if (!cfg.deterministic) out.report.timestamp = utc_timestamp();

    if (out_dir.empty()) out_dir = checkpoint.parent_path();
    fs::create_directories(out_dir);
    out.json = out_dir / "report.json";
    out.tsv = out_dir / "report.tsv";
    write_text(out.json, to_json(out.report).dump(2) + "\n");
    write_text(out.tsv, to_tsv(out.report));
    return out;
}

// ---------------------------------------------------------------------------

struct SweepCell {
    double tau, gamma, lr, reg;
    std::string config_hash;
    double mean_ndcg;
};

struct SweepOutput {
    std::vector<SweepCell> cells;
    fs::path manifest;
    fs::path curve;
};

inline std::vector<RunConfig> sweep_cells(const RunConfig& base) {
    const auto& g = base.sweep;
    if (!g.tau && !g.gamma && !g.lr && !g.reg)
        fail(ErrorKind::InvalidArgument, "sweep declares no grid");
    auto axis = [](const std::optional<std::vector<double>>& grid, double base_value, const char* name) {
        if (!grid) return std::vector<double>{base_value};
        if (grid->empty()) fail(ErrorKind::InvalidArgument, std::string("sweep grid '") + name + "' is empty");
        return *grid;
    };
    const auto taus = axis(g.tau, base.tau, "tau");
    const auto gammas = axis(g.gamma, base.gamma, "gamma");
    const auto lrs = axis(g.lr, base.lr, "lr");
    const auto regs = axis(g.reg, base.reg, "reg");
    const std::size_t total = taus.size() * gammas.size() * lrs.size() * regs.size();
    if (total > g.max_cells)
        fail(ErrorKind::GridTooLarge,
             std::to_string(total) + " cells exceed the cap of " + std::to_string(g.max_cells));
    std::vector<RunConfig> cells;
    for (double t : taus)
        for (double ga : gammas)
            for (double l : lrs)
                for (double r : regs) {
                    RunConfig c = base;
                    c.tau = t;
                    c.gamma = ga;
                    c.lr = l;
                    c.reg = r;
                    cells.push_back(std::move(c));
                }
    return cells;
}

/// Runs the grid sequentially: train, evaluate on the test split, register.
/// Writes tau<TAB>gamma<TAB>mean_ndcg (NDCG@20 when evaluated, else the first K).
inline SweepOutput cmd_sweep(const RunConfig& base) {
    const auto cells = sweep_cells(base);
    const fs::path root = base.resolve(base.output_dir);
    fs::create_directories(root);
    SweepOutput out;
    out.manifest = root / "manifest.tsv";
    out.curve = root / "sweep.tsv";
    const std::size_t k = std::find(base.ks.begin(), base.ks.end(), 20) != base.ks.end() ? 20 : base.ks.front();

    std::ostringstream curve;
    curve << "tau\tgamma\tmean_ndcg\n";
    for (const auto& cell : cells) {
        auto trained = cmd_train(cell, false);
        auto evaluated = cmd_eval(cell, trained.best_checkpoint, trained.run_dir);
        append_manifest(out.manifest.string(),
                        {trained.config_hash, evaluated.json.string(), trained.best_checkpoint.string()});
        const double ndcg = evaluated.report.mean_ndcg_at(k);
        out.cells.push_back({cell.tau, cell.gamma, cell.lr, cell.reg, trained.config_hash, ndcg});
        curve << format_double(cell.tau) << '\t' << format_double(cell.gamma) << '\t' << format_double(ndcg) << '\n';
    }
    write_text(out.curve, curve.str());
    return out;
}

// ---------------------------------------------------------------------------

/// One line per requested user: raw_user<TAB>item1,item2,... (raw ids),
/// training items masked. Lists shorter than k are not padded.
inline std::vector<std::string> cmd_recommend(const RunConfig& cfg, const fs::path& checkpoint,
                                              const std::vector<std::string>& user_ids, std::size_t k) {
    cfg.validate();
    const auto snap = read_embedding_snapshot(checkpoint.string());
    const auto ds = load_filtered(cfg);
    check_checkpoint(snap, ds);
    SplitSpec spec = cfg.split;
    spec.seed = cfg.seed;
    const auto sp = split(ds.logs, spec);

    std::unordered_map<std::string, Index> index;
    for (std::size_t u = 0; u < ds.users(); ++u) index.emplace(ds.user_ids[u], static_cast<Index>(u));
    std::vector<std::vector<Index>> seen(ds.users());
    for (const auto& log : sp.train)
        for (const auto& r : log.records) seen[r.user].push_back(r.item);

    std::vector<std::string> lines;
    for (const auto& raw : user_ids) {
        auto it = index.find(raw);
        if (it == index.end()) fail(ErrorKind::UnknownUser, "unknown user '" + raw + "'");
        const auto items = top_k(snap.embeddings, it->second, k, seen[it->second]);
        std::string line = raw + '\t';
        for (std::size_t r = 0; r < items.size(); ++r) {
            if (r) line += ',';
            line += ds.item_ids[items[r]];
        }
        lines.push_back(std::move(line));
    }
    return lines;
}

// ---------------------------------------------------------------------------

/// Writes the planted dataset as click/cart/buy TSVs plus a starter config.
inline fs::path cmd_synth(const fs::path& out_dir, const PlantedConfig& pc) {
    const auto ds = make_planted_dataset(pc);
    fs::create_directories(out_dir);
    RunConfig cfg;
    cfg.dataset_name = "planted";
    cfg.levels = ds.levels;
    cfg.tau = 2.0;
    cfg.gamma = 1.0;
    cfg.epochs = 60;
    cfg.batch_size = 1024;
    cfg.lr = 5e-3;
    cfg.output_dir = "runs";
    cfg.ks = {10, 20};
    for (const auto& log : ds.logs) {
        const auto file = log.behavior + ".tsv";
        write_interactions_tsv((out_dir / file).string(), log);
        cfg.behaviors.push_back({log.behavior, file});
    }
    const auto path = out_dir / "config.json";
    save_config(path.string(), cfg);
    return path;
}

} // namespace pogcn
