#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pogcn/graph.hpp"
#include "pogcn/rng.hpp"

namespace pogcn {

/// Planted-preference generator for three nested behaviors
/// (click <= cart <= buy). Each user and item gets a latent factor vector;
/// clicks mix preference-driven picks with uniform noise, carts are the
/// clicked items the user likes most, and buys are the most-liked carts.
struct PlantedConfig {
    std::size_t users = 200;
    std::size_t items = 300;
    std::size_t factors = 8;
    std::size_t clicks_per_user = 70;
    /// Share of each user's clicks drawn uniformly instead of by preference.
    double click_noise = 0.5;
    /// Softmax temperature for preference-driven clicks.
    double temperature = 0.5;
    /// Carts keep this share of clicks (highest affinity first); buys keep
    /// this share of carts. Each promotion is independently dropped with
    /// probability `promotion_noise`.
    double cart_share = 0.35;
    double buy_share = 0.4;
    double promotion_noise = 0.15;
    std::uint64_t seed = 7;
};

struct PlantedDataset {
    std::size_t users = 0;
    std::size_t items = 0;
    std::vector<InteractionLog> logs;  // click, cart, buy
    std::vector<std::vector<std::string>> levels{{"click"}, {"cart"}, {"buy"}};
};

inline PlantedDataset make_planted_dataset(const PlantedConfig& cfg) {
    Rng rng = make_rng(cfg.seed, "planted");
    const auto f = cfg.factors;
    std::vector<double> uf(cfg.users * f), itf(cfg.items * f);
    for (auto& x : uf) x = standard_normal(rng);
    for (auto& x : itf) x = standard_normal(rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(f));

    PlantedDataset ds;
    ds.users = cfg.users;
    ds.items = cfg.items;
    ds.logs = {{"click", {}, false}, {"cart", {}, false}, {"buy", {}, false}};

    const std::size_t clicks = std::min(cfg.clicks_per_user, cfg.items);
    const auto noisy = static_cast<std::size_t>(std::round(cfg.click_noise * static_cast<double>(clicks)));
    std::vector<double> affinity(cfg.items);
    for (std::size_t u = 0; u < cfg.users; ++u) {
        for (std::size_t i = 0; i < cfg.items; ++i) {
            double a = 0.0;
            for (std::size_t k = 0; k < f; ++k) a += uf[u * f + k] * itf[i * f + k];
            affinity[i] = a * scale;
        }
        // Preference-driven picks without replacement (Gumbel top-k), then noise.
        std::vector<std::pair<double, Index>> keyed;
        for (std::size_t i = 0; i < cfg.items; ++i) {
            double x;
            do { x = uniform01(rng); } while (x <= 0.0);
            keyed.emplace_back(affinity[i] / cfg.temperature - std::log(-std::log(x)), static_cast<Index>(i));
        }
        std::sort(keyed.begin(), keyed.end(), std::greater<>());
        std::vector<char> clicked(cfg.items, 0);
        std::vector<Index> chosen;
        for (std::size_t k = 0; k < clicks - noisy; ++k) {
            chosen.push_back(keyed[k].second);
            clicked[keyed[k].second] = 1;
        }
        while (chosen.size() < clicks) {
            const auto i = static_cast<Index>(uniform_index(rng, cfg.items));
            if (clicked[i]) continue;
            clicked[i] = 1;
            chosen.push_back(i);
        }
        std::sort(chosen.begin(), chosen.end());
        for (Index i : chosen) ds.logs[0].records.push_back({static_cast<Index>(u), i, 0});

        auto promote = [&](const std::vector<Index>& from, double share, InteractionLog& log) {
            std::vector<Index> ordered = from;
            std::sort(ordered.begin(), ordered.end(),
                      [&](Index a, Index b) { return affinity[a] != affinity[b] ? affinity[a] > affinity[b] : a < b; });
            const auto n = static_cast<std::size_t>(std::round(share * static_cast<double>(ordered.size())));
            std::vector<Index> out;
            for (std::size_t k = 0; k < n; ++k)
                if (uniform01(rng) >= cfg.promotion_noise) out.push_back(ordered[k]);
            std::sort(out.begin(), out.end());
            for (Index i : out) log.records.push_back({static_cast<Index>(u), i, 0});
            return out;
        };
        const auto carts = promote(chosen, cfg.cart_share, ds.logs[1]);
        promote(carts, cfg.buy_share, ds.logs[2]);
    }
    return ds;
}

} // namespace pogcn
