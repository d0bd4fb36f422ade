// Builds the weighted graph for a click <= favor <= buy toy log, trains a
// few epochs and prints each user's top-3 unseen items.

#include <iostream>

#include "pogcn/pogcn.hpp"

int main() {
    using namespace pogcn;
    const auto order = BehaviorOrder::from_levels({{"click"}, {"favor"}, {"buy"}});
    const std::vector<InteractionLog> logs{
        {"click", {{0, 0, 0}, {1, 1, 0}, {2, 2, 0}, {0, 1, 0}, {3, 3, 0}}, false},
        {"favor", {{0, 1, 0}, {2, 2, 0}, {3, 4, 0}}, false},
        {"buy", {{2, 2, 0}, {3, 4, 0}}, false},
    };
    const auto ranks = build_rank_function(order);
    for (const auto& [set, rank] : ranks.entries())
        std::cout << order.format(set) << " -> rank " << rank << '\n';

    const auto combos = merge_logs(logs, order, 4, 6);
    const auto graph = build_pog(combos, ranks, /*tau=*/1.0);

    TrainConfig cfg;
    cfg.dim = 8;
    cfg.epochs = 30;
    cfg.batch_size = 4;
    cfg.lr = 0.01;
    const auto result = train(graph, cfg);
    const auto emb = propagate(result.final_model, graph);

    for (Index u = 0; u < graph.users(); ++u) {
        std::vector<Index> seen;
        for (const auto& e : graph.user_edges(u)) seen.push_back(e.item);
        std::cout << "user " << u << ':';
        for (Index i : top_k(emb, u, 3, seen)) std::cout << ' ' << i;
        std::cout << '\n';
    }
}
