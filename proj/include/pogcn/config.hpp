#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pogcn/error.hpp"
#include "pogcn/evaluator.hpp"
#include "pogcn/io.hpp"
#include "pogcn/rng.hpp"
#include "pogcn/trainer.hpp"

namespace pogcn {

enum class RankUniverse { AllSubsets, Observed };

inline std::string to_string(RankUniverse u) { return u == RankUniverse::AllSubsets ? "all" : "observed"; }

inline RankUniverse parse_rank_universe(const std::string& s) {
    if (s == "all") return RankUniverse::AllSubsets;
    if (s == "observed") return RankUniverse::Observed;
    fail(ErrorKind::InvalidArgument, "unknown rank universe '" + s + "' (all|observed)");
}

/// Hyperparameter grids for `sweep`; an empty grid means "use the base value".
struct SweepGrid {
    std::optional<std::vector<double>> tau;
    std::optional<std::vector<double>> gamma;
    std::optional<std::vector<double>> lr;
    std::optional<std::vector<double>> reg;
    std::size_t max_cells = 256;
};

/// Everything that defines a run. Relative dataset paths resolve against
/// `base_dir`, which is not part of the serialized form.
struct RunConfig {
    std::string dataset_name = "dataset";
    std::vector<BehaviorSource> behaviors;
    bool header = false;
    std::vector<std::vector<std::string>> levels;
    RankUniverse rank_universe = RankUniverse::AllSubsets;
    std::int64_t min_interactions = 0;

    double tau = 1.0;
    double gamma = 1.0;
    std::size_t dim = 64;
    int layers = 2;
    double init_sigma = 0.1;
    double lr = 1e-3;
    double reg = 1e-4;
    int epochs = 100;
    std::size_t batch_size = 1024;
    SamplerMode sampler_mode = SamplerMode::POBPR;
    std::map<std::string, double> mtl_weights;
    int eval_every = 5;
    int patience = 10;
    /// Share of the training split held back for early stopping; 0 disables it.
    double val_fraction = 0.1;

    std::vector<std::size_t> ks{20};
    SplitSpec split;
    std::uint64_t seed = 2024;
    bool deterministic = true;

    std::string output_dir = "runs";
    SweepGrid sweep;

    std::filesystem::path base_dir;

    std::string resolve(const std::string& path) const {
        const std::filesystem::path p(path);
        return (p.is_absolute() || base_dir.empty()) ? p.string() : (base_dir / p).string();
    }

    std::vector<BehaviorSource> resolved_sources() const {
        auto out = behaviors;
        for (auto& s : out) s.path = resolve(s.path);
        return out;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.dim = dim;
        t.layers = layers;
        t.init_sigma = init_sigma;
        t.lr = lr;
        t.l2_reg = reg;
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.gamma = gamma;
        t.seed = seed;
        t.sampler_mode = sampler_mode;
        t.mtl_weights = mtl_weights;
        t.eval_every = eval_every;
        t.patience = patience;
        t.deterministic = deterministic;
        return t;
    }

    void validate() const {
        if (behaviors.empty()) fail(ErrorKind::InvalidArgument, "config lists no behavior data");
        if (levels.empty()) fail(ErrorKind::EmptyOrder, "config declares no behavior levels");
        if (!(tau >= 0.0)) fail(ErrorKind::InvalidArgument, "tau must be >= 0");
        if (ks.empty()) fail(ErrorKind::InvalidArgument, "ks must not be empty");
        if (!(val_fraction >= 0.0 && val_fraction < 1.0))
            fail(ErrorKind::InvalidFraction, "val_fraction must lie in [0, 1)");
        train_config().validate();
    }
};

/// Hash-relevant fields only (no output_dir, sweep grids or base_dir).
inline nlohmann::json experiment_json(const RunConfig& c) {
    nlohmann::json data = nlohmann::json::array();
    for (const auto& s : c.behaviors) data.push_back({{"behavior", s.behavior}, {"path", s.path}});
    return {
        {"dataset_name", c.dataset_name},
        {"data", data},
        {"header", c.header},
        {"levels", c.levels},
        {"rank_universe", to_string(c.rank_universe)},
        {"min_interactions", c.min_interactions},
        {"tau", c.tau},
        {"gamma", c.gamma},
        {"dim", c.dim},
        {"layers", c.layers},
        {"init_sigma", c.init_sigma},
        {"lr", c.lr},
        {"reg", c.reg},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"sampler_mode", to_string(c.sampler_mode)},
        {"mtl_weights", c.mtl_weights},
        {"eval_every", c.eval_every},
        {"patience", c.patience},
        {"val_fraction", c.val_fraction},
        {"ks", c.ks},
        {"split", {{"mode", to_string(c.split.mode)}, {"test_fraction", c.split.test_fraction}}},
        {"seed", c.seed},
        {"deterministic", c.deterministic},
    };
}

inline nlohmann::json to_json(const RunConfig& c) {
    auto j = experiment_json(c);
    j["output_dir"] = c.output_dir;
    nlohmann::json sweep = {{"max_cells", c.sweep.max_cells}};
    if (c.sweep.tau) sweep["tau"] = *c.sweep.tau;
    if (c.sweep.gamma) sweep["gamma"] = *c.sweep.gamma;
    if (c.sweep.lr) sweep["lr"] = *c.sweep.lr;
    if (c.sweep.reg) sweep["reg"] = *c.sweep.reg;
    j["sweep"] = sweep;
    return j;
}

/// 16 hex digits of FNV-1a over the canonical (key-sorted, compact) JSON.
inline std::string config_hash(const RunConfig& c) {
    const auto h = fnv1a64(experiment_json(c).dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "dataset_name", "data", "header", "levels", "rank_universe", "min_interactions", "tau",
        "gamma", "dim", "layers", "init_sigma", "lr", "reg", "epochs", "batch_size", "sampler_mode",
        "mtl_weights", "eval_every", "patience", "val_fraction", "ks", "split", "seed",
        "deterministic", "output_dir", "sweep"};
    if (!j.is_object()) fail(ErrorKind::ParseError, "config must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!known.contains(key)) fail(ErrorKind::ParseError, "unknown config key '" + key + "'");

    RunConfig c;
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
        };
        get("dataset_name", c.dataset_name);
        if (j.contains("data"))
            for (const auto& s : j.at("data"))
                c.behaviors.push_back({s.at("behavior").get<std::string>(), s.at("path").get<std::string>()});
        get("header", c.header);
        get("levels", c.levels);
        if (j.contains("rank_universe")) c.rank_universe = parse_rank_universe(j.at("rank_universe"));
        get("min_interactions", c.min_interactions);
        get("tau", c.tau);
        get("gamma", c.gamma);
        get("dim", c.dim);
        get("layers", c.layers);
        get("init_sigma", c.init_sigma);
        get("lr", c.lr);
        get("reg", c.reg);
        get("epochs", c.epochs);
        get("batch_size", c.batch_size);
        if (j.contains("sampler_mode")) c.sampler_mode = parse_sampler_mode(j.at("sampler_mode"));
        get("mtl_weights", c.mtl_weights);
        get("eval_every", c.eval_every);
        get("patience", c.patience);
        get("val_fraction", c.val_fraction);
        get("ks", c.ks);
        if (j.contains("split")) {
            const auto& s = j.at("split");
            if (s.contains("mode")) c.split.mode = parse_split_mode(s.at("mode"));
            if (s.contains("test_fraction")) c.split.test_fraction = s.at("test_fraction");
        }
        get("seed", c.seed);
        get("deterministic", c.deterministic);
        get("output_dir", c.output_dir);
        if (j.contains("sweep")) {
            const auto& s = j.at("sweep");
            if (s.contains("tau")) c.sweep.tau = s.at("tau").get<std::vector<double>>();
            if (s.contains("gamma")) c.sweep.gamma = s.at("gamma").get<std::vector<double>>();
            if (s.contains("lr")) c.sweep.lr = s.at("lr").get<std::vector<double>>();
            if (s.contains("reg")) c.sweep.reg = s.at("reg").get<std::vector<double>>();
            if (s.contains("max_cells")) c.sweep.max_cells = s.at("max_cells");
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("config: ") + e.what());
    }
    c.split.seed = c.seed;
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::FileNotFound, "cannot read config '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, path + ": " + e.what());
    }
    auto c = config_from_json(j);
    c.base_dir = std::filesystem::absolute(path).parent_path();
    return c;
}

inline void save_config(const std::string& path, const RunConfig& c) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::FileNotFound, "cannot write '" + path + "'");
    out << to_json(c).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Experiment manifest: append-only config_hash<TAB>report<TAB>checkpoint

struct ManifestEntry {
    std::string config_hash;
    std::string report;
    std::string checkpoint;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::vector<ManifestEntry> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::getline(ls, e.config_hash, '\t');
        std::getline(ls, e.report, '\t');
        std::getline(ls, e.checkpoint, '\t');
        out.push_back(e);
    }
    return out;
}

/// Appends unless the hash is already listed; returns whether it appended.
/// Referenced files must exist ("-" marks an absent report).
inline bool append_manifest(const std::string& path, const ManifestEntry& entry) {
    for (const auto* f : {&entry.report, &entry.checkpoint})
        if (*f != "-" && !std::filesystem::exists(*f))
            fail(ErrorKind::FileNotFound, "manifest entry references missing file '" + *f + "'");
    for (const auto& e : read_manifest(path))
        if (e.config_hash == entry.config_hash) return false;
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) fail(ErrorKind::FileNotFound, "cannot append to '" + path + "'");
    if (fresh) out << "#config_hash\treport\tcheckpoint\n";
    out << entry.config_hash << '\t' << entry.report << '\t' << entry.checkpoint << '\n';
    return true;
}

} // namespace pogcn
