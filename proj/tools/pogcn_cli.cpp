#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pogcn/pogcn.hpp"

namespace {

/// Flags that override the config file.
struct Overrides {
    std::optional<double> tau, gamma, lr, reg;
    std::optional<int> layers, epochs;
    std::optional<std::size_t> dim, batch_size;
    std::optional<std::uint64_t> seed;
    std::vector<std::size_t> ks;
    std::optional<std::string> sampler_mode, split, output_dir;
    std::optional<double> test_fraction;
    std::optional<bool> deterministic;

    void attach(CLI::App* cmd) {
        cmd->add_option("--tau", tau, "edge-weight temperature (>= 0)");
        cmd->add_option("--gamma", gamma, "sampling temperature");
        cmd->add_option("--layers", layers, "propagation layers L");
        cmd->add_option("--dim", dim, "embedding dimension");
        cmd->add_option("--lr", lr, "Adam learning rate");
        cmd->add_option("--reg", reg, "L2 regularization weight");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--batch-size", batch_size, "triples per step");
        cmd->add_option("--seed", seed, "run seed");
        cmd->add_option("--k", ks, "cutoffs for Recall/NDCG (repeatable or comma list)")->delimiter(',');
        cmd->add_option("--sampler-mode", sampler_mode, "pobpr | uniform | mtl");
        cmd->add_option("--split", split, "random | temporal");
        cmd->add_option("--test-fraction", test_fraction, "held-out share per user and behavior");
        cmd->add_option("--out-dir", output_dir, "output directory (overrides output_dir)");
        cmd->add_option("--deterministic", deterministic, "true | false");
    }

    void apply(pogcn::RunConfig& c) const {
        if (tau) c.tau = *tau;
        if (gamma) c.gamma = *gamma;
        if (lr) c.lr = *lr;
        if (reg) c.reg = *reg;
        if (layers) c.layers = *layers;
        if (epochs) c.epochs = *epochs;
        if (dim) c.dim = *dim;
        if (batch_size) c.batch_size = *batch_size;
        if (seed) c.seed = *seed;
        if (!ks.empty()) c.ks = ks;
        if (sampler_mode) c.sampler_mode = pogcn::parse_sampler_mode(*sampler_mode);
        if (split) c.split.mode = pogcn::parse_split_mode(*split);
        if (test_fraction) c.split.test_fraction = *test_fraction;
        if (output_dir) {
            c.output_dir = std::filesystem::absolute(*output_dir).string();
        }
        if (deterministic) c.deterministic = *deterministic;
        c.split.seed = c.seed;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-behavior graph collaborative filtering over a partial-order weighted graph"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides ov;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("-c,--config", config_path, "run configuration (JSON)")->required();
        ov.attach(cmd);
    };

    auto* build = app.add_subcommand("build-graph", "build the weighted graph and rank table");
    add_common(build);
    std::string graph_out = "graph";
    build->add_option("-o,--output", graph_out, "directory for pog.bin, pog_edges.tsv, rank_table.tsv");

    auto* train_cmd = app.add_subcommand("train", "train embeddings and write checkpoints");
    add_common(train_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "full-ranking evaluation of a checkpoint");
    add_common(eval_cmd);
    std::string checkpoint;
    std::string report_dir;
    eval_cmd->add_option("--checkpoint", checkpoint, "embedding snapshot")->required();
    eval_cmd->add_option("-o,--output", report_dir, "report directory (default: checkpoint's)");

    auto* sweep_cmd = app.add_subcommand("sweep", "grid search over tau/gamma/lr/reg");
    add_common(sweep_cmd);

    auto* rec_cmd = app.add_subcommand("recommend", "top-k items for given users");
    add_common(rec_cmd);
    std::vector<std::string> users;
    std::size_t rec_k = 10;
    rec_cmd->add_option("--checkpoint", checkpoint, "embedding snapshot")->required();
    rec_cmd->add_option("--users", users, "raw user ids")->delimiter(',')->required();
    rec_cmd->add_option("--top", rec_k, "items per user");

    auto* synth_cmd = app.add_subcommand("synth", "write a planted-preference dataset and config");
    std::string synth_out = "planted";
    pogcn::PlantedConfig planted;
    synth_cmd->add_option("-o,--output", synth_out, "output directory");
    synth_cmd->add_option("--users", planted.users);
    synth_cmd->add_option("--items", planted.items);
    synth_cmd->add_option("--seed", planted.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error\tUsage\t" << e.what() << '\n';
        return 2;
    }

    try {
        if (synth_cmd->parsed()) {
            std::cout << pogcn::cmd_synth(synth_out, planted).string() << '\n';
            return 0;
        }
        auto cfg = pogcn::load_config(config_path);
        ov.apply(cfg);

        if (build->parsed()) {
            const auto out = pogcn::cmd_build_graph(cfg, graph_out);
            std::cout << out.summary;
        } else if (train_cmd->parsed()) {
            const auto out = pogcn::cmd_train(cfg);
            std::cout << pogcn::format_train_log(out.result.log);
            std::cout << "run\t" << out.run_dir.string() << "\nbest_epoch\t" << out.result.best_epoch
                      << "\ncheckpoint\t" << out.best_checkpoint.string() << '\n';
        } else if (eval_cmd->parsed()) {
            const auto out = pogcn::cmd_eval(cfg, checkpoint, report_dir);
            std::cout << pogcn::format_table(out.report) << "report\t" << out.json.string() << '\n';
        } else if (sweep_cmd->parsed()) {
            const auto out = pogcn::cmd_sweep(cfg);
            for (const auto& c : out.cells)
                std::cout << c.config_hash << "\ttau=" << c.tau << "\tgamma=" << c.gamma << "\tlr=" << c.lr
                          << "\treg=" << c.reg << "\tmean_ndcg=" << c.mean_ndcg << '\n';
            std::cout << "manifest\t" << out.manifest.string() << "\ncurve\t" << out.curve.string() << '\n';
        } else if (rec_cmd->parsed()) {
            for (const auto& line : pogcn::cmd_recommend(cfg, checkpoint, users, rec_k)) std::cout << line << '\n';
        }
    } catch (const pogcn::Error& e) {
        const std::string tag(pogcn::to_string(e.kind()));
        std::string msg = e.what();
        if (msg.rfind(tag + ": ", 0) == 0) msg.erase(0, tag.size() + 2);
        std::cerr << "error\t" << tag << '\t' << msg << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error\tInternal\t" << e.what() << '\n';
        return 1;
    }
    return 0;
}
