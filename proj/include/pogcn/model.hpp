#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "pogcn/error.hpp"
#include "pogcn/graph.hpp"
#include "pogcn/rng.hpp"

namespace pogcn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Layer-0 embedding tables plus the propagation depth.
struct EmbeddingModel {
    Matrix users;
    Matrix items;
    int layers = 2;

    std::size_t dim() const { return static_cast<std::size_t>(users.cols()); }
};

struct PropagatedEmbeddings {
    Matrix users;
    Matrix items;
    /// Per-layer (users, items), filled only on request.
    std::vector<std::pair<Matrix, Matrix>> per_layer;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// N(0, sigma^2) entries; users are drawn before items, row-major.
inline EmbeddingModel init_embeddings(std::size_t users, std::size_t items, std::size_t dim,
                                      std::uint64_t seed, double sigma = 0.1, int layers = 2) {
    if (users < 1 || items < 1 || dim < 1)
        fail(ErrorKind::InvalidDimension, "users, items and dim must all be >= 1");
    if (layers < 0) fail(ErrorKind::InvalidDimension, "layers must be >= 0");
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
        fail(ErrorKind::InvalidArgument, "init sigma must be finite and >= 0");
    Rng rng = make_rng(seed, "init");
    EmbeddingModel model;
    model.layers = layers;
    const auto d = static_cast<Eigen::Index>(dim);
    model.users.resize(static_cast<Eigen::Index>(users), d);
    model.items.resize(static_cast<Eigen::Index>(items), d);
    for (Eigen::Index r = 0; r < model.users.rows(); ++r)
        for (Eigen::Index c = 0; c < d; ++c) model.users(r, c) = sigma * standard_normal(rng);
    for (Eigen::Index r = 0; r < model.items.rows(); ++r)
        for (Eigen::Index c = 0; c < d; ++c) model.items(r, c) = sigma * standard_normal(rng);
    return model;
}

/// Symmetric degree normalization R_ui / (sqrt(deg u) * sqrt(deg i)) per
/// edge, in canonical edge order.
inline std::vector<double> edge_coefficients(const PogGraph& g) {
    std::vector<double> coeff(g.edge_count());
    const auto& du = g.user_degree();
    const auto& di = g.item_degree();
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
        const auto& edge = g.edges()[e];
        const double denom = std::sqrt(du[edge.user]) * std::sqrt(di[edge.item]);
        coeff[e] = denom > 0.0 ? edge.weight / denom : 0.0;
    }
    return coeff;
}

/// Layer-averaged propagation (1/(L+1)) * sum_{l=0..L} A_hat^l applied to the
/// stacked (users; items) matrix, by per-edge message accumulation. A_hat is
/// symmetric, so the same map is its own adjoint and also carries gradients
/// from final embeddings back to layer 0.
inline PropagatedEmbeddings apply_propagation(const PogGraph& g, const Matrix& users,
                                              const Matrix& items, int layers,
                                              bool keep_layers = false) {
    if (static_cast<std::size_t>(users.rows()) != g.users() ||
        static_cast<std::size_t>(items.rows()) != g.items() || users.cols() != items.cols())
        fail(ErrorKind::DimensionMismatch,
             "embeddings " + std::to_string(users.rows()) + "+" + std::to_string(items.rows()) +
                 " rows vs graph " + std::to_string(g.users()) + "+" + std::to_string(g.items()));
    if (layers < 0) fail(ErrorKind::InvalidDimension, "layers must be >= 0");

    const auto coeff = edge_coefficients(g);
    PropagatedEmbeddings out;
    out.users = users;
    out.items = items;
    if (keep_layers) out.per_layer.emplace_back(users, items);

    Matrix cur_u = users, cur_i = items;
    Matrix next_u(users.rows(), users.cols()), next_i(items.rows(), items.cols());
    for (int l = 0; l < layers; ++l) {
        next_u.setZero();
        next_i.setZero();
        for (std::size_t e = 0; e < coeff.size(); ++e) {
            const auto& edge = g.edges()[e];
            next_u.row(edge.user).noalias() += coeff[e] * cur_i.row(edge.item);
            next_i.row(edge.item).noalias() += coeff[e] * cur_u.row(edge.user);
        }
        std::swap(cur_u, next_u);
        std::swap(cur_i, next_i);
        out.users += cur_u;
        out.items += cur_i;
        if (keep_layers) out.per_layer.emplace_back(cur_u, cur_i);
    }
    const double scale = 1.0 / static_cast<double>(layers + 1);
    out.users *= scale;
    out.items *= scale;
    if (!all_finite(out.users) || !all_finite(out.items))
        fail(ErrorKind::NonFiniteValue, "propagation produced a non-finite value");
    return out;
}

inline PropagatedEmbeddings propagate(const EmbeddingModel& model, const PogGraph& g,
                                      bool keep_layers = false) {
    return apply_propagation(g, model.users, model.items, model.layers, keep_layers);
}

/// Same propagation built as D^-1/2 A D^-1/2 over the (M+N)-square adjacency
/// with A = [0 R; R^T 0], degrees taken from A's row sums.
inline PropagatedEmbeddings propagate_matrix(const EmbeddingModel& model, const PogGraph& g) {
    const auto m = static_cast<Eigen::Index>(g.users());
    const auto n = static_cast<Eigen::Index>(g.items());
    if (model.users.rows() != m || model.items.rows() != n)
        fail(ErrorKind::DimensionMismatch, "embedding tables do not match the graph");

    using Sparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(2 * g.edge_count());
    for (const auto& e : g.edges()) {
        triplets.emplace_back(e.user, m + e.item, e.weight);
        triplets.emplace_back(m + e.item, e.user, e.weight);
    }
    Sparse adj(m + n, m + n);
    adj.setFromTriplets(triplets.begin(), triplets.end());

    Eigen::VectorXd inv_sqrt_deg(m + n);
    for (Eigen::Index r = 0; r < m + n; ++r) {
        const double deg = adj.row(r).sum();
        inv_sqrt_deg(r) = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
    }
    const Sparse norm_adj = inv_sqrt_deg.asDiagonal() * adj * inv_sqrt_deg.asDiagonal();

    Matrix layer(m + n, model.users.cols());
    layer << model.users, model.items;
    Matrix total = layer;
    for (int l = 0; l < model.layers; ++l) {
        layer = norm_adj * layer;
        total += layer;
    }
    total /= static_cast<double>(model.layers + 1);

    PropagatedEmbeddings out;
    out.users = total.topRows(m);
    out.items = total.bottomRows(n);
    return out;
}

inline double score(const PropagatedEmbeddings& emb, std::size_t user, std::size_t item) {
    if (user >= static_cast<std::size_t>(emb.users.rows()) ||
        item >= static_cast<std::size_t>(emb.items.rows()))
        fail(ErrorKind::IndexOutOfRange, "score index out of range");
    return emb.users.row(static_cast<Eigen::Index>(user)).dot(emb.items.row(static_cast<Eigen::Index>(item)));
}

/// All item scores for one user.
inline std::vector<double> score_all(const PropagatedEmbeddings& emb, std::size_t user) {
    if (user >= static_cast<std::size_t>(emb.users.rows()))
        fail(ErrorKind::IndexOutOfRange, "user index out of range");
    Eigen::VectorXd s = emb.items * emb.users.row(static_cast<Eigen::Index>(user)).transpose();
    return std::vector<double>(s.data(), s.data() + s.size());
}

/// Highest-scoring unmasked items, descending score, ties by ascending index.
/// `masked[i] != 0` excludes item i; an empty mask excludes nothing.
inline std::vector<Index> top_k_from_scores(std::span<const double> scores, std::size_t k,
                                            std::span<const char> masked = {}) {
    if (k < 1) fail(ErrorKind::InvalidArgument, "k must be >= 1");
    std::vector<Index> candidates;
    candidates.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (masked.empty() || !masked[i]) candidates.push_back(static_cast<Index>(i));
    const auto better = [&](Index a, Index b) {
        return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    };
    const std::size_t take = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                      candidates.end(), better);
    candidates.resize(take);
    return candidates;
}

inline std::vector<Index> top_k(const PropagatedEmbeddings& emb, std::size_t user, std::size_t k,
                                std::span<const Index> mask = {}) {
    const auto scores = score_all(emb, user);
    std::vector<char> masked(scores.size(), 0);
    for (Index i : mask) {
        if (i >= scores.size()) fail(ErrorKind::IndexOutOfRange, "masked item out of range");
        masked[i] = 1;
    }
    return top_k_from_scores(scores, k, masked);
}

} // namespace pogcn
