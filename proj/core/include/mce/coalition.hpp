#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mce/errors.hpp"
#include "mce/rng.hpp"

namespace mce {

/// Cooperative game over up to 64 players identified by bit index. The
/// characteristic function is queried with non-empty bitmasks only; the
/// empty-coalition payoff is carried as data so attribution can work with
/// differences without spending oracle calls on it.
struct CoalitionGame {
    int players = 0;
    std::function<double(uint64_t)> value;  // payoff of a non-empty coalition
    double empty_value = 0.0;
};

struct ShapleyResult {
    std::vector<double> phi;  // one entry per player; 0 outside the restriction
    long oracle_calls = 0;
    std::string method;
};

/// Memoizing view of a game's characteristic function. Guarantees the
/// oracle behaves as a pure function and counts distinct evaluations.
class MemoOracle {
  public:
    explicit MemoOracle(const CoalitionGame& game) : game_(&game) {}

    double operator()(uint64_t subset);
    long calls() const { return calls_; }

  private:
    const CoalitionGame* game_;
    std::unordered_map<uint64_t, double> cache_;
    long calls_ = 0;
};

/// All non-empty sub-bitmasks of `mask`, ascending by bitmask value.
std::vector<uint64_t> enumerate_subsets(uint64_t mask);

/// Exact Shapley values of the players inside `restrict_mask` via the
/// weighted-subset formula; players outside the restriction get 0.
ShapleyResult exact_shapley(const CoalitionGame& game, uint64_t restrict_mask);

/// Monte-Carlo Shapley estimate: averages marginal contributions over
/// `permutations` uniformly sampled join orders of the restricted players.
/// Subset values are memoized, so repeated coalitions cost one oracle call
/// and results are deterministic for a given seed.
ShapleyResult mc_shapley(const CoalitionGame& game, uint64_t restrict_mask, int permutations,
                         uint64_t seed);

/// Characteristic-function table file: a `players = M` header, then one
/// `bitmask value` line per subset (decimal bitmask). Every subset of the
/// M players must appear; the mask-0 line supplies the empty payoff.
CoalitionGame load_game_file(const std::string& path);

}  // namespace mce
