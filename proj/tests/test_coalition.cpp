#include <bit>
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "mce/coalition.hpp"
#include "support/oracles.hpp"

using namespace mce;
using mce::testing::permutation_average_shapley;
using mce::testing::random_table_game;

TEST_CASE("enumerate_subsets covers the power set in ascending order") {
    auto subsets = enumerate_subsets(0b111);
    REQUIRE(subsets.size() == 7);
    for (size_t i = 1; i < subsets.size(); ++i) CHECK(subsets[i - 1] < subsets[i]);

    auto sparse = enumerate_subsets(0b101);  // second player missing
    CHECK(sparse == std::vector<uint64_t>{0b001, 0b100, 0b101});

    CHECK(enumerate_subsets(0).empty());
}

TEST_CASE("additive game attributes its weights") {
    std::vector<double> w = {0.2, 0.3, 0.5};
    CoalitionGame g;
    g.players = 3;
    g.value = [w](uint64_t s) {
        double acc = 0.0;
        for (int i = 0; i < 3; ++i) {
            if (s & (1ull << i)) acc += w[static_cast<size_t>(i)];
        }
        return acc;
    };
    auto res = exact_shapley(g, 0b111);
    CHECK(res.phi[0] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(res.phi[1] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(res.phi[2] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(res.method == "exact");
}

TEST_CASE("symmetric two-player game splits the surplus") {
    CoalitionGame g;
    g.players = 2;
    g.value = [](uint64_t s) { return s == 0b11 ? 1.0 : 0.5; };
    auto res = exact_shapley(g, 0b11);
    CHECK(res.phi[0] == doctest::Approx(0.5));
    CHECK(res.phi[1] == doctest::Approx(0.5));
}

TEST_CASE("exact shapley equals the permutation average on random games") {
    Rng rng(2024);
    for (int players = 2; players <= 5; ++players) {
        for (int rep = 0; rep < 25; ++rep) {
            CoalitionGame g = random_table_game(players, rng);
            uint64_t full = (1ull << players) - 1;
            auto fast = exact_shapley(g, full);
            auto brute = permutation_average_shapley(g, full);
            for (int i = 0; i < players; ++i) {
                CHECK(std::fabs(fast.phi[static_cast<size_t>(i)] - brute[static_cast<size_t>(i)]) < 1e-10);
            }
        }
    }
}

TEST_CASE("shapley axioms hold on randomized games") {
    Rng rng(7);
    for (int players = 2; players <= 6; ++players) {
        CoalitionGame g = random_table_game(players, rng);
        uint64_t full = (1ull << players) - 1;
        auto res = exact_shapley(g, full);

        // Efficiency.
        double total = 0.0;
        for (double v : res.phi) total += v;
        CHECK(std::fabs(total - (g.value(full) - g.empty_value)) < 1e-10);
    }

    // Dummy: a player whose marginals vanish gets zero.
    {
        CoalitionGame g = random_table_game(3, rng);
        auto base = g.value;
        CoalitionGame with_dummy;
        with_dummy.players = 4;
        with_dummy.value = [base](uint64_t s) { return s & 0b111 ? base(s & 0b111) : 0.0; };
        auto res = exact_shapley(with_dummy, 0b1111);
        CHECK(std::fabs(res.phi[3]) < 1e-12);
    }

    // Symmetry: interchangeable players receive equal shares.
    {
        CoalitionGame g;
        g.players = 3;
        g.value = [](uint64_t s) {
            int c = std::popcount(s & 0b011);  // players 0 and 1 interchangeable
            bool third = s & 0b100;
            return 0.4 * c + (third ? 0.7 : 0.0) + (c == 2 ? 0.3 : 0.0);
        };
        auto res = exact_shapley(g, 0b111);
        CHECK(res.phi[0] == doctest::Approx(res.phi[1]).epsilon(1e-12));
    }

    // Additivity: phi is linear in the game.
    {
        CoalitionGame g1 = random_table_game(4, rng);
        CoalitionGame g2 = random_table_game(4, rng);
        CoalitionGame sum;
        sum.players = 4;
        auto v1 = g1.value;
        auto v2 = g2.value;
        sum.value = [v1, v2](uint64_t s) { return v1(s) + v2(s); };
        auto a = exact_shapley(g1, 0b1111);
        auto b = exact_shapley(g2, 0b1111);
        auto c = exact_shapley(sum, 0b1111);
        for (int i = 0; i < 4; ++i) {
            CHECK(c.phi[static_cast<size_t>(i)] ==
                  doctest::Approx(a.phi[static_cast<size_t>(i)] + b.phi[static_cast<size_t>(i)])
                      .epsilon(1e-10));
        }
    }
}

TEST_CASE("restriction zeroes players outside the mask") {
    Rng rng(12);
    CoalitionGame g = random_table_game(4, rng);
    auto res = exact_shapley(g, 0b0101);
    CHECK(res.phi[1] == 0.0);
    CHECK(res.phi[3] == 0.0);

    // Efficiency within the restriction.
    CHECK(res.phi[0] + res.phi[2] == doctest::Approx(g.value(0b0101) - g.empty_value).epsilon(1e-12));

    CHECK_THROWS_AS(exact_shapley(g, 0b10000), ContractError);
}

TEST_CASE("oracle failures carry the offending subset") {
    CoalitionGame g;
    g.players = 2;
    g.value = [](uint64_t s) -> double {
        if (s == 0b11) throw std::runtime_error("bad payoff");
        return 0.0;
    };
    try {
        exact_shapley(g, 0b11);
        FAIL("expected an oracle failure");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("subset mask 3") != std::string::npos);
    }
}

TEST_CASE("two-player monte carlo reconstructs the estimator definition") {
    CoalitionGame g;
    g.players = 2;
    g.value = [](uint64_t s) { return s == 0b11 ? 1.0 : (s == 0b01 ? 0.6 : 0.1); };
    const int k = 400;
    const uint64_t seed = 99;
    auto res = mc_shapley(g, 0b11, k, seed);

    // Replay the sampling stream to recover the permutation frequencies.
    Rng rng(seed);
    std::vector<int> order = {0, 1};
    int first_is_0 = 0;
    for (int i = 0; i < k; ++i) {
        rng.shuffle(order);
        if (order[0] == 0) ++first_is_0;
    }
    double f0 = static_cast<double>(first_is_0) / k;
    // Player 0 joins first with frequency f0 (marginal 0.6), else adds 0.9.
    CHECK(res.phi[0] == doctest::Approx(f0 * 0.6 + (1 - f0) * 0.9).epsilon(1e-12));
    CHECK(res.phi[1] == doctest::Approx(f0 * 0.4 + (1 - f0) * 0.1).epsilon(1e-12));

    // With both orders enumerated the estimate is exact.
    auto exact = exact_shapley(g, 0b11);
    double avg0 = 0.5 * 0.6 + 0.5 * 0.9;
    CHECK(exact.phi[0] == doctest::Approx(avg0).epsilon(1e-12));
}

TEST_CASE("monte carlo is deterministic per seed") {
    Rng rng(3);
    CoalitionGame g = random_table_game(4, rng);
    auto a = mc_shapley(g, 0b1111, 500, 42);
    auto b = mc_shapley(g, 0b1111, 500, 42);
    CHECK(a.phi == b.phi);
    CHECK(a.method == "monte_carlo(K=500, seed=42)");
    auto c = mc_shapley(g, 0b1111, 500, 43);
    CHECK(a.phi != c.phi);
}

TEST_CASE("monte carlo converges and the memo bounds oracle calls") {
    Rng rng(17);
    double worst_mean = 0.0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        CoalitionGame g = random_table_game(4, rng);
        auto exact = exact_shapley(g, 0b1111);
        auto mc = mc_shapley(g, 0b1111, 2000, seed);
        double worst = 0.0;
        for (int i = 0; i < 4; ++i) {
            worst = std::max(worst,
                             std::fabs(mc.phi[static_cast<size_t>(i)] - exact.phi[static_cast<size_t>(i)]));
        }
        worst_mean += worst;
        CHECK(mc.oracle_calls <= 15);  // 2^4 - 1 non-empty coalitions
    }
    CHECK(worst_mean / 10.0 < 0.05);
}

TEST_CASE("game files demand a complete table") {
    const char* path = "/tmp/mce_game_missing.txt";
    {
        std::ofstream out(path);
        out << "players = 2\n0 0.0\n1 0.4\n3 1.0\n";  // mask 2 missing
    }
    try {
        load_game_file(path);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("mask 2") != std::string::npos);
    }
    {
        std::ofstream out(path);
        out << "players = 2\n0 0.0\n1 0.4\n2 0.6\n3 1.0\n";
    }
    CoalitionGame g = load_game_file(path);
    CHECK(g.players == 2);
    CHECK(g.empty_value == 0.0);
    auto res = exact_shapley(g, 0b11);
    CHECK(res.phi[0] == doctest::Approx(0.4));
    CHECK(res.phi[1] == doctest::Approx(0.6));
}
