#include "mce/coalition.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace mce {

double MemoOracle::operator()(uint64_t subset) {
    if (subset == 0) return game_->empty_value;
    auto it = cache_.find(subset);
    if (it != cache_.end()) return it->second;
    double v;
    try {
        v = game_->value(subset);
    } catch (const std::exception& e) {
        throw std::runtime_error("value oracle failed on subset mask " + std::to_string(subset) +
                                 ": " + e.what());
    }
    ++calls_;
    cache_.emplace(subset, v);
    return v;
}

std::vector<uint64_t> enumerate_subsets(uint64_t mask) {
    std::vector<int> bits;
    for (int i = 0; i < 64; ++i) {
        if (mask & (1ull << i)) bits.push_back(i);
    }
    const int p = static_cast<int>(bits.size());
    std::vector<uint64_t> out;
    if (p == 0) return out;
    out.reserve((1ull << p) - 1);
    for (uint64_t k = 1; k < (1ull << p); ++k) {
        uint64_t s = 0;
        for (int i = 0; i < p; ++i) {
            if (k & (1ull << i)) s |= 1ull << bits[static_cast<size_t>(i)];
        }
        out.push_back(s);  // monotone in k since bit positions are ascending
    }
    return out;
}

namespace {

void check_restriction(const CoalitionGame& game, uint64_t restrict_mask) {
    if (game.players < 0 || game.players > 64) {
        throw ConfigError("coalition game: player count " + std::to_string(game.players) +
                          " outside [0, 64]");
    }
    uint64_t full = game.players == 64 ? ~0ull : (1ull << game.players) - 1;
    if (restrict_mask & ~full) {
        throw ContractError("shapley: restriction mask includes players outside the game");
    }
}

}  // namespace

ShapleyResult exact_shapley(const CoalitionGame& game, uint64_t restrict_mask) {
    check_restriction(game, restrict_mask);
    ShapleyResult res;
    res.phi.assign(static_cast<size_t>(game.players), 0.0);
    res.method = "exact";
    if (restrict_mask == 0) return res;

    const int r = std::popcount(restrict_mask);
    // weight(s) = s! (r-s-1)! / r! = 1 / (r * binom(r-1, s))
    std::vector<double> weight(static_cast<size_t>(r), 0.0);
    double binom = 1.0;
    for (int s = 0; s < r; ++s) {
        weight[static_cast<size_t>(s)] = 1.0 / (static_cast<double>(r) * binom);
        binom = binom * static_cast<double>(r - 1 - s) / static_cast<double>(s + 1);
    }

    MemoOracle value(game);
    for (int i = 0; i < game.players; ++i) {
        uint64_t bit = 1ull << i;
        if (!(restrict_mask & bit)) continue;
        uint64_t others = restrict_mask & ~bit;
        double phi = 0.0;
        // submasks of `others`, descending, plus the empty set
        uint64_t s = others;
        while (true) {
            double w = weight[static_cast<size_t>(std::popcount(s))];
            phi += w * (value(s | bit) - value(s));
            if (s == 0) break;
            s = (s - 1) & others;
        }
        res.phi[static_cast<size_t>(i)] = phi;
    }
    res.oracle_calls = value.calls();
    return res;
}

ShapleyResult mc_shapley(const CoalitionGame& game, uint64_t restrict_mask, int permutations,
                         uint64_t seed) {
    check_restriction(game, restrict_mask);
    if (permutations < 1) throw ConfigError("mc_shapley: permutation count must be >= 1");
    ShapleyResult res;
    res.phi.assign(static_cast<size_t>(game.players), 0.0);
    res.method =
        "monte_carlo(K=" + std::to_string(permutations) + ", seed=" + std::to_string(seed) + ")";
    if (restrict_mask == 0) return res;

    std::vector<int> order;
    for (int i = 0; i < game.players; ++i) {
        if (restrict_mask & (1ull << i)) order.push_back(i);
    }

    MemoOracle value(game);
    Rng rng(seed);
    for (int k = 0; k < permutations; ++k) {
        rng.shuffle(order);
        uint64_t prefix = 0;
        double prev = game.empty_value;
        for (int p : order) {
            prefix |= 1ull << p;
            double cur = value(prefix);
            res.phi[static_cast<size_t>(p)] += cur - prev;
            prev = cur;
        }
    }
    for (double& v : res.phi) v /= static_cast<double>(permutations);
    res.oracle_calls = value.calls();
    return res;
}

CoalitionGame load_game_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("game file: cannot open '" + path + "'");
    std::string line;
    int players = -1;
    auto table = std::make_shared<std::map<uint64_t, double>>();
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ss(line);
        std::string first;
        if (!(ss >> first)) continue;
        if (first == "players") {
            std::string eq;
            long p;
            if (!(ss >> eq >> p) || eq != "=") {
                throw ConfigError("game file line " + std::to_string(lineno) +
                                  ": expected 'players = M'");
            }
            players = static_cast<int>(p);
            continue;
        }
        uint64_t mask;
        double value;
        try {
            size_t pos = 0;
            mask = std::stoull(first, &pos);
            if (pos != first.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw ConfigError("game file line " + std::to_string(lineno) +
                              ": cannot parse subset mask '" + first + "'");
        }
        if (!(ss >> value)) {
            throw ConfigError("game file line " + std::to_string(lineno) +
                              ": expected 'bitmask value'");
        }
        (*table)[mask] = value;
    }
    if (players < 1 || players > 20) {
        throw ConfigError("game file: must declare 'players = M' with M in 1..20");
    }
    for (uint64_t s = 0; s < (1ull << players); ++s) {
        if (!table->count(s)) {
            throw ConfigError("game file: subset mask " + std::to_string(s) +
                              " missing from the table");
        }
    }
    CoalitionGame g;
    g.players = players;
    g.empty_value = table->at(0);
    g.value = [table](uint64_t s) { return table->at(s); };
    return g;
}

}  // namespace mce
