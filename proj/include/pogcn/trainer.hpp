#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pogcn/error.hpp"
#include "pogcn/graph.hpp"
#include "pogcn/model.hpp"
#include "pogcn/rng.hpp"

namespace pogcn {

/// Multinomial over combination-rank pools with p_h proportional to
/// rank_h^gamma * count_h. Only non-empty pools are listed.
struct CombinationDistribution {
    std::vector<int> ranks;
    std::vector<std::size_t> counts;
    std::vector<double> probs;
    /// Running sums of the unnormalized weights; back() is the total.
    std::vector<double> cumulative;
    double gamma = 1.0;

    static CombinationDistribution from_counts(std::vector<int> ranks, std::vector<std::size_t> counts,
                                               double gamma) {
        if (ranks.size() != counts.size())
            fail(ErrorKind::InvalidArgument, "ranks and counts differ in length");
        if (!std::isfinite(gamma)) fail(ErrorKind::InvalidArgument, "gamma must be finite");
        CombinationDistribution d;
        d.gamma = gamma;
        for (std::size_t h = 0; h < ranks.size(); ++h) {
            if (counts[h] == 0) continue;
            if (ranks[h] < 1) fail(ErrorKind::InvalidArgument, "ranks must be >= 1");
            d.ranks.push_back(ranks[h]);
            d.counts.push_back(counts[h]);
        }
        if (d.ranks.empty()) fail(ErrorKind::EmptyGraph, "no non-empty combination pool");
        double total = 0.0;
        for (std::size_t h = 0; h < d.ranks.size(); ++h) {
            total += std::pow(static_cast<double>(d.ranks[h]), gamma) * static_cast<double>(d.counts[h]);
            d.cumulative.push_back(total);
        }
        for (std::size_t h = 0; h < d.ranks.size(); ++h)
            d.probs.push_back(std::pow(static_cast<double>(d.ranks[h]), gamma) *
                              static_cast<double>(d.counts[h]) / total);
        return d;
    }

    /// Index into ranks/probs.
    std::size_t sample(Rng& rng) const {
        const double x = uniform01(rng) * cumulative.back();
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
        return std::min(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
    }
};

inline CombinationDistribution build_distribution(const PogGraph& g, double gamma) {
    if (g.edge_count() == 0) fail(ErrorKind::EmptyGraph, "graph has no edges");
    std::vector<int> ranks;
    std::vector<std::size_t> counts;
    for (const auto& [rank, pool] : g.pools()) {
        ranks.push_back(rank);
        counts.push_back(pool.size());
    }
    return CombinationDistribution::from_counts(std::move(ranks), std::move(counts), gamma);
}

struct TrainTriple {
    Index user = 0;
    Index pos = 0;
    Index neg = 0;

    friend bool operator==(const TrainTriple&, const TrainTriple&) = default;
};

/// Uniform draws from the items a user never interacted with under any
/// training behavior, i.e. the non-neighbors of the user in the graph.
class NegativeSampler {
public:
    explicit NegativeSampler(const PogGraph& g) : g_(&g) {}

    bool has_negative(Index user) const { return g_->user_edges(user).size() < g_->items(); }

    bool is_positive(Index user, Index item) const {
        const auto edges = g_->user_edges(user);
        auto it = std::lower_bound(edges.begin(), edges.end(), item,
                                   [](const PogEdge& e, Index i) { return e.item < i; });
        return it != edges.end() && it->item == item;
    }

    Index sample(Index user, Rng& rng) const {
        const auto edges = g_->user_edges(user);
        const std::size_t n = g_->items();
        if (edges.size() >= n)
            fail(ErrorKind::NoNegativeAvailable,
                 "user " + std::to_string(user) + " interacted with every item");
        if (2 * edges.size() <= n) {
            for (;;) {
                const auto j = static_cast<Index>(uniform_index(rng, n));
                if (!is_positive(user, j)) return j;
            }
        }
        // Dense user: pick the r-th non-neighbor directly.
        std::uint64_t r = uniform_index(rng, n - edges.size());
        Index j = 0;
        for (const auto& e : edges) {
            if (r < e.item - j) break;
            r -= e.item - j;
            j = e.item + 1;
        }
        return static_cast<Index>(j + r);
    }

private:
    const PogGraph* g_;
};

/// Draws (user, positive, negative) triples: a combination rank from the
/// multinomial, a pair uniformly from that rank's pool, and a negative item
/// uniformly from the user's non-interacted items. Users who interacted
/// with every item are dropped from the pools (with a warning) and the
/// distribution is recomputed over what remains.
class PairSampler {
public:
    PairSampler(const PogGraph& g, double gamma) : g_(&g), negatives_(g) {
        if (g.edge_count() == 0) fail(ErrorKind::EmptyGraph, "graph has no edges");
        std::vector<int> ranks;
        std::vector<std::size_t> counts;
        std::size_t dropped_users = 0;
        std::vector<char> warned(g.users(), 0);
        for (const auto& [rank, pool] : g.pools()) {
            std::vector<std::size_t> kept;
            kept.reserve(pool.size());
            for (auto e : pool) {
                const Index u = g.edges()[e].user;
                if (negatives_.has_negative(u)) {
                    kept.push_back(e);
                } else if (!warned[u]) {
                    warned[u] = 1;
                    ++dropped_users;
                }
            }
            if (kept.empty()) continue;
            ranks.push_back(rank);
            counts.push_back(kept.size());
            pools_.push_back(std::move(kept));
        }
        if (dropped_users > 0)
            std::cerr << "warning: " << dropped_users
                      << " user(s) interacted with every item and are excluded from sampling\n";
        if (pools_.empty())
            fail(ErrorKind::NoNegativeAvailable, "no user has a negative item to sample");
        dist_ = CombinationDistribution::from_counts(std::move(ranks), std::move(counts), gamma);
    }

    const CombinationDistribution& distribution() const { return dist_; }

    TrainTriple sample(Rng& rng) const {
        const auto h = dist_.sample(rng);
        const auto& pool = pools_[h];
        const auto& edge = g_->edges()[pool[uniform_index(rng, pool.size())]];
        const Index j = negatives_.sample(edge.user, rng);
        assert(!negatives_.is_positive(edge.user, j));
        return {edge.user, edge.item, j};
    }

    std::vector<TrainTriple> sample_batch(std::size_t batch_size, Rng& rng) const {
        std::vector<TrainTriple> out;
        out.reserve(batch_size);
        for (std::size_t b = 0; b < batch_size; ++b) out.push_back(sample(rng));
        return out;
    }

    /// Rank of the pool a triple's positive pair belongs to.
    int rank_of_pool(std::size_t h) const { return dist_.ranks[h]; }

private:
    const PogGraph* g_;
    NegativeSampler negatives_;
    std::vector<std::vector<std::size_t>> pools_;
    CombinationDistribution dist_;
};

/// One-shot convenience over PairSampler; the distribution's gamma is used.
inline std::vector<TrainTriple> sample_batch(const CombinationDistribution& dist, const PogGraph& g,
                                             std::size_t batch_size, Rng& rng) {
    PairSampler sampler(g, dist.gamma);
    return sampler.sample_batch(batch_size, rng);
}

/// -ln sigmoid(x), stable for large |x|.
inline double neg_log_sigmoid(double x) {
    return x >= 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double z = std::exp(x);
    return z / (1.0 + z);
}

struct LossResult {
    double loss = 0.0;
    double bpr = 0.0;
    double reg = 0.0;
    /// Gradient w.r.t. layer-0 user and item tables.
    Matrix grad_users;
    Matrix grad_items;
};

/// A batch of triples sharing one task weight.
struct WeightedTriples {
    double weight = 1.0;
    std::vector<TrainTriple> triples;
};

/// sum_t weight_t * -ln sigmoid(y_ui - y_uj) + l2_reg * ||E0 rows touched||^2,
/// differentiated through the full layer-averaged propagation.
inline LossResult weighted_bpr_loss(const EmbeddingModel& model, const PogGraph& g,
                                    std::span<const WeightedTriples> batches, double l2_reg) {
    const auto emb = propagate(model, g);
    Matrix grad_u = Matrix::Zero(emb.users.rows(), emb.users.cols());
    Matrix grad_i = Matrix::Zero(emb.items.rows(), emb.items.cols());
    std::vector<char> touched_u(g.users(), 0), touched_i(g.items(), 0);

    LossResult out;
    for (const auto& batch : batches) {
        if (!(batch.weight >= 0.0)) fail(ErrorKind::InvalidArgument, "task weights must be >= 0");
        for (const auto& t : batch.triples) {
            if (t.user >= g.users() || t.pos >= g.items() || t.neg >= g.items())
                fail(ErrorKind::IndexOutOfRange, "triple index out of range");
            touched_u[t.user] = 1;
            touched_i[t.pos] = 1;
            touched_i[t.neg] = 1;
            if (batch.weight == 0.0) continue;
            const auto eu = emb.users.row(t.user);
            const auto ei = emb.items.row(t.pos);
            const auto ej = emb.items.row(t.neg);
            const double x = eu.dot(ei) - eu.dot(ej);
            out.bpr += batch.weight * neg_log_sigmoid(x);
            const double dx = -batch.weight * sigmoid(-x);
            grad_u.row(t.user) += dx * (ei - ej);
            grad_i.row(t.pos) += dx * eu;
            grad_i.row(t.neg) -= dx * eu;
        }
    }

    auto back = apply_propagation(g, grad_u, grad_i, model.layers);
    out.grad_users = std::move(back.users);
    out.grad_items = std::move(back.items);
    for (std::size_t u = 0; u < g.users(); ++u)
        if (touched_u[u]) {
            out.reg += l2_reg * model.users.row(static_cast<Eigen::Index>(u)).squaredNorm();
            out.grad_users.row(static_cast<Eigen::Index>(u)) +=
                2.0 * l2_reg * model.users.row(static_cast<Eigen::Index>(u));
        }
    for (std::size_t i = 0; i < g.items(); ++i)
        if (touched_i[i]) {
            out.reg += l2_reg * model.items.row(static_cast<Eigen::Index>(i)).squaredNorm();
            out.grad_items.row(static_cast<Eigen::Index>(i)) +=
                2.0 * l2_reg * model.items.row(static_cast<Eigen::Index>(i));
        }
    out.loss = out.bpr + out.reg;
    if (!std::isfinite(out.loss)) fail(ErrorKind::NonFiniteLoss, "loss is not finite");
    return out;
}

inline LossResult pobpr_loss(const EmbeddingModel& model, const PogGraph& g,
                             std::span<const TrainTriple> triples, double l2_reg) {
    WeightedTriples batch{1.0, {triples.begin(), triples.end()}};
    return weighted_bpr_loss(model, g, std::span<const WeightedTriples>(&batch, 1), l2_reg);
}

/// Triples of one behavior together with its task weight alpha_k.
struct BehaviorTask {
    std::string behavior;
    double weight = 1.0;
    std::vector<TrainTriple> triples;
};

inline LossResult mtl_bpr_loss(const EmbeddingModel& model, const PogGraph& g,
                               std::span<const BehaviorTask> tasks, double l2_reg) {
    std::vector<WeightedTriples> batches;
    for (const auto& t : tasks) batches.push_back({t.weight, t.triples});
    return weighted_bpr_loss(model, g, batches, l2_reg);
}

/// Per-triple -ln sigmoid(y_ui - y_uj) on fixed embeddings.
inline std::vector<double> triple_losses(const PropagatedEmbeddings& emb,
                                         std::span<const TrainTriple> triples) {
    std::vector<double> out;
    out.reserve(triples.size());
    for (const auto& t : triples)
        out.push_back(neg_log_sigmoid(score(emb, t.user, t.pos) - score(emb, t.user, t.neg)));
    return out;
}

/// Uniform positive pairs of one behavior with all-behavior negatives.
class BehaviorPairSampler {
public:
    BehaviorPairSampler(const PogGraph& g, const InteractionLog& log) : negatives_(g) {
        for (const auto& r : log.records)
            if (r.user < g.users() && r.item < g.items() && negatives_.has_negative(r.user))
                pairs_.push_back({r.user, r.item});
        std::sort(pairs_.begin(), pairs_.end());
        pairs_.erase(std::unique(pairs_.begin(), pairs_.end()), pairs_.end());
    }

    bool empty() const { return pairs_.empty(); }

    std::vector<TrainTriple> sample_batch(std::size_t batch_size, Rng& rng) const {
        std::vector<TrainTriple> out;
        out.reserve(batch_size);
        for (std::size_t b = 0; b < batch_size; ++b) {
            const auto& [u, i] = pairs_[uniform_index(rng, pairs_.size())];
            out.push_back({u, i, negatives_.sample(u, rng)});
        }
        return out;
    }

private:
    NegativeSampler negatives_;
    std::vector<std::pair<Index, Index>> pairs_;
};

enum class SamplerMode { POBPR, UniformBPR, MTLBPR };

inline std::string to_string(SamplerMode m) {
    switch (m) {
    case SamplerMode::POBPR: return "pobpr";
    case SamplerMode::UniformBPR: return "uniform";
    case SamplerMode::MTLBPR: return "mtl";
    }
    return "?";
}

inline SamplerMode parse_sampler_mode(const std::string& s) {
    if (s == "pobpr") return SamplerMode::POBPR;
    if (s == "uniform") return SamplerMode::UniformBPR;
    if (s == "mtl") return SamplerMode::MTLBPR;
    fail(ErrorKind::InvalidArgument, "unknown sampler mode '" + s + "' (pobpr|uniform|mtl)");
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(const EmbeddingModel& model, double lr, AdamConfig cfg = {})
        : lr_(lr), cfg_(cfg),
          m_u_(Matrix::Zero(model.users.rows(), model.users.cols())), v_u_(m_u_),
          m_i_(Matrix::Zero(model.items.rows(), model.items.cols())), v_i_(m_i_) {}

    void step(EmbeddingModel& model, const Matrix& grad_users, const Matrix& grad_items) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        update(model.users, grad_users, m_u_, v_u_, c1, c2);
        update(model.items, grad_items, m_i_, v_i_, c1, c2);
    }

private:
    void update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, double c1, double c2) const {
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
        param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
    }

    double lr_;
    AdamConfig cfg_;
    long t_ = 0;
    Matrix m_u_, v_u_, m_i_, v_i_;
};

struct TrainConfig {
    std::size_t dim = 64;
    int layers = 2;
    double init_sigma = 0.1;
    double lr = 1e-3;
    double l2_reg = 1e-4;
    int epochs = 100;
    std::size_t batch_size = 1024;
    double gamma = 1.0;
    std::uint64_t seed = 2024;
    SamplerMode sampler_mode = SamplerMode::POBPR;
    /// alpha_k per behavior for MTL-BPR; missing behaviors weigh 1.
    std::map<std::string, double> mtl_weights;
    AdamConfig adam;
    int eval_every = 5;
    int patience = 10;
    bool deterministic = true;

    void validate() const {
        if (!(lr > 0.0)) fail(ErrorKind::InvalidArgument, "lr must be > 0");
        if (batch_size < 1) fail(ErrorKind::InvalidArgument, "batch_size must be >= 1");
        if (epochs < 1) fail(ErrorKind::InvalidArgument, "epochs must be >= 1");
        if (!(l2_reg >= 0.0)) fail(ErrorKind::InvalidArgument, "l2_reg must be >= 0");
        if (eval_every < 1 || patience < 1)
            fail(ErrorKind::InvalidArgument, "eval_every and patience must be >= 1");
    }
};

struct EpochRecord {
    int epoch = 0;
    long step = 0;
    /// Mean objective per sampled triple over the epoch.
    double loss = 0.0;
    /// NaN when validation did not run this epoch.
    double val_mean_ndcg = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
    EmbeddingModel final_model;
    EmbeddingModel best_model;
    std::vector<EpochRecord> log;
    double best_val = std::numeric_limits<double>::quiet_NaN();
    int best_epoch = 0;
    bool early_stopped = false;
};

/// Thrown when the objective stops being finite; carries the last model
/// whose loss was finite.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& message, EmbeddingModel last_finite)
        : Error(ErrorKind::Diverged, "Diverged: " + message), last_finite_(std::move(last_finite)) {}

    const EmbeddingModel& last_finite() const { return last_finite_; }

private:
    EmbeddingModel last_finite_;
};

/// Scores propagated embeddings on held-out data (higher is better).
using Validator = std::function<double(const PropagatedEmbeddings&)>;

/// Adam on layer-0 embeddings. One epoch is ceil(|edges| / batch_size)
/// steps. With a validator, it runs every `eval_every` epochs; training stops
/// after `patience` evaluations without improvement and `best_model` keeps
/// the best-scoring weights.
inline TrainResult train(const PogGraph& g, const TrainConfig& cfg,
                         std::span<const InteractionLog> behavior_logs = {},
                         const Validator& validate = {}) {
    cfg.validate();
    if (g.edge_count() == 0) fail(ErrorKind::EmptyGraph, "cannot train on a graph without edges");

    TrainResult result;
    EmbeddingModel model = init_embeddings(g.users(), g.items(), cfg.dim, cfg.seed, cfg.init_sigma,
                                           cfg.layers);
    Adam adam(model, cfg.lr, cfg.adam);
    Rng rng = make_rng(cfg.seed, "sampler");

    std::optional<PairSampler> pair_sampler;
    std::vector<std::pair<double, BehaviorPairSampler>> behavior_samplers;
    if (cfg.sampler_mode == SamplerMode::MTLBPR) {
        for (const auto& log : behavior_logs) {
            auto it = cfg.mtl_weights.find(log.behavior);
            const double w = it == cfg.mtl_weights.end() ? 1.0 : it->second;
            if (!(w >= 0.0)) fail(ErrorKind::InvalidArgument, "MTL weights must be >= 0");
            BehaviorPairSampler s(g, log);
            if (w > 0.0 && !s.empty()) behavior_samplers.emplace_back(w, std::move(s));
        }
        if (behavior_samplers.empty())
            fail(ErrorKind::InvalidArgument, "MTL-BPR needs at least one weighted behavior log");
    } else {
        pair_sampler.emplace(g, cfg.sampler_mode == SamplerMode::UniformBPR ? 0.0 : cfg.gamma);
    }

    const long steps_per_epoch =
        static_cast<long>((g.edge_count() + cfg.batch_size - 1) / cfg.batch_size);
    long step = 0;
    int stale = 0;
    result.best_model = model;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t epoch_triples = 0;
        for (long s = 0; s < steps_per_epoch; ++s, ++step) {
            LossResult lr;
            try {
                if (pair_sampler) {
                    const auto triples = pair_sampler->sample_batch(cfg.batch_size, rng);
                    lr = pobpr_loss(model, g, triples, cfg.l2_reg);
                    epoch_triples += triples.size();
                } else {
                    std::vector<BehaviorTask> tasks;
                    for (const auto& [w, sampler] : behavior_samplers) {
                        tasks.push_back({"", w, sampler.sample_batch(cfg.batch_size, rng)});
                        epoch_triples += cfg.batch_size;
                    }
                    lr = mtl_bpr_loss(model, g, tasks, cfg.l2_reg);
                }
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::NonFiniteLoss || e.kind() == ErrorKind::NonFiniteValue)
                    throw TrainingDiverged("epoch " + std::to_string(epoch) + ": " + e.what(), model);
                throw;
            }
            epoch_loss += lr.loss;
            EmbeddingModel before = model;
            adam.step(model, lr.grad_users, lr.grad_items);
            if (!all_finite(model.users) || !all_finite(model.items))
                throw TrainingDiverged("update produced non-finite weights", std::move(before));
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.step = step;
        rec.loss = epoch_loss / static_cast<double>(std::max<std::size_t>(epoch_triples, 1));
        if (validate && epoch % cfg.eval_every == 0) {
            rec.val_mean_ndcg = validate(propagate(model, g));
            if (std::isnan(result.best_val) || rec.val_mean_ndcg > result.best_val) {
                result.best_val = rec.val_mean_ndcg;
                result.best_epoch = epoch;
                result.best_model = model;
                stale = 0;
            } else if (++stale >= cfg.patience) {
                result.log.push_back(rec);
                result.early_stopped = true;
                break;
            }
        }
        result.log.push_back(rec);
    }
    result.final_model = model;
    if (!validate) {
        result.best_model = model;
        result.best_epoch = result.log.empty() ? 0 : result.log.back().epoch;
    }
    return result;
}

} // namespace pogcn
