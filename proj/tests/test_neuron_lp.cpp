#include "support.hpp"

#include "qnnrepair/neuron_lp.hpp"

#include <doctest.h>

using namespace qnnrepair;
using namespace qnnrepair::testing;

namespace
{

NeuronLP analytic_lp()
{
    NeuronLP lp;
    lp.weights = {1.0, -2.0};
    lp.epsilon = 0.0;
    lp.constraints = {{0, {1.0, 1.0}, 1, 0}};
    return lp;
}

NeuronLP random_lp(std::mt19937_64 &rng)
{
    std::uniform_int_distribution<std::size_t> fan(1, 2), count(1, 3);
    std::uniform_real_distribution<double> w(-1.0, 1.0), mag(0.5, 1.0), eps(0.0, 0.01);
    std::bernoulli_distribution sign(0.5);
    NeuronLP lp;
    const std::size_t m = fan(rng);
    for (std::size_t i = 0; i < m; i++)
        lp.weights.push_back(w(rng));
    lp.bias = 0.2 * w(rng);
    lp.epsilon = eps(rng);
    const std::size_t k = count(rng);
    for (std::size_t c = 0; c < k; c++)
    {
        LPConstraint con;
        con.test_id = c;
        for (std::size_t i = 0; i < m; i++)
            con.x.push_back(sign(rng) ? mag(rng) : -mag(rng));
        // only disagreeing tests become constraints: the target is the opposite of the current status
        con.current_status = lp.pre_activation(con) > 0.0 ? 1 : 0;
        con.target_status = 1 - con.current_status;
        lp.constraints.push_back(std::move(con));
    }
    return lp;
}

/// One-hidden-layer float/quantized pair whose hidden neuron 0 carries weights [1, -2] in the quantized
/// model and [1, 0.5] in the float one.
struct HandPair
{
    Model f;
    QuantizedModel q;
};

HandPair hand_pair()
{
    auto build = [](float w1) {
        return Model({Layer::dense(mat(2, 2, {1.0f, 0.0f, w1, 0.0f}), vec({0.0f, 0.0f}), true), Layer::dense(mat(2, 2, {1, 0, 0, 1}), vec({0, 0}))},
                     {2}, 2);
    };
    return {build(0.5f), quantize_with_scale(build(-2.0f), 1.0f / 32.0f)};
}

} // namespace

TEST_CASE("analytic case: minimal M is 0.5 with a symmetric correction")
{
    const NeuronLP lp = analytic_lp();
    CHECK(lp.pre_activation(lp.constraints[0]) == -1.0);
    const LPSolution sol = solve_lp(lp);
    REQUIRE(sol.status == LPStatus::optimal);
    CHECK(sol.M == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(sol.deltas[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(sol.deltas[1] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("a constraint already met at margin epsilon needs no change")
{
    NeuronLP lp;
    lp.weights = {0.5};
    lp.epsilon = 1.0;
    lp.constraints = {{0, {2.0}, 1, 0}};
    const LPSolution sol = solve_lp(lp);
    REQUIRE(sol.status == LPStatus::optimal);
    CHECK(sol.M == doctest::Approx(0.0));
    CHECK(sol.deltas[0] == doctest::Approx(0.0));
}

TEST_CASE("contradictory constraints are infeasible")
{
    NeuronLP lp;
    lp.weights = {0.0};
    lp.constraints = {{0, {1.0}, 1, 0}, {1, {1.0}, 0, 1}};
    const LPSolution sol = solve_lp(lp);
    CHECK(sol.status == LPStatus::infeasible);
    CHECK(sol.phase1_objective > 1e-9);
}

TEST_CASE("an M bound below the optimum makes the problem infeasible")
{
    NeuronLP lp = analytic_lp();
    lp.big_M_bound = 0.4;
    CHECK(solve_lp(lp).status == LPStatus::infeasible);
    lp.big_M_bound = 0.6;
    CHECK(solve_lp(lp).status == LPStatus::optimal);
}

TEST_CASE("an empty problem is refused")
{
    NeuronLP lp;
    lp.weights = {1.0};
    CHECK_THROWS_AS(solve_lp(lp), std::invalid_argument);
}

TEST_CASE("simplex agrees with an exhaustive grid search")
{
    std::mt19937_64 rng(555);
    const double step = 5e-4, cap = 0.75;
    int compared = 0;
    for (int t = 0; t < 400 && compared < 120; t++)
    {
        const NeuronLP lp = random_lp(rng);
        const LPSolution sol = solve_lp(lp);
        if (sol.status == LPStatus::optimal)
        {
            const auto check = substitute(lp, sol);
            CHECK(check.margin_slack >= -1e-9);
            CHECK(check.bound_excess <= 1e-9);
            if (sol.M > cap - 0.01)
                continue;
        }
        const double grid = grid_min_M(lp, step, cap);
        if (sol.status == LPStatus::infeasible)
        {
            CHECK(grid < 0.0);
            continue;
        }
        REQUIRE(sol.status == LPStatus::optimal);
        REQUIRE(grid >= 0.0);
        CHECK(std::abs(sol.M - grid) <= 1e-3);
        compared++;
    }
    CHECK(compared >= 100);
}

TEST_CASE("scaling every input by c > 0 leaves the epsilon-free problem unchanged")
{
    std::mt19937_64 rng(8);
    for (int t = 0; t < 50; t++)
    {
        NeuronLP lp = random_lp(rng);
        lp.epsilon = 0.0;
        lp.bias = 0.0; // the bias would not scale with x
        for (auto &c : lp.constraints)
        {
            c.current_status = lp.pre_activation(c) > 0.0 ? 1 : 0;
            c.target_status = 1 - c.current_status;
        }
        NeuronLP scaled = lp;
        const double factor = std::uniform_real_distribution<double>(0.1, 10.0)(rng);
        for (auto &c : scaled.constraints)
            for (auto &v : c.x)
                v *= factor;
        const LPSolution a = solve_lp(lp), b = solve_lp(scaled);
        REQUIRE(a.status == b.status);
        if (a.status != LPStatus::optimal)
            continue;
        CHECK(a.M == doctest::Approx(b.M).epsilon(1e-9).scale(1.0));
        CHECK(substitute(scaled, a).margin_slack >= -1e-9);
        CHECK(substitute(lp, b).margin_slack >= -1e-9);
    }
}

TEST_CASE("building the LP from a hand-made model pair")
{
    const HandPair p = hand_pair();
    Dataset ds;
    ds.num_classes = 2;
    ds.push_back(vec({1.0f, 1.0f}), 0); // quantized -1 (off), float 1.5 (on)
    ds.push_back(vec({1.0f, -1.0f}), 0); // both on
    ds.push_back(vec({2.0f, 2.0f}), 1); // quantized -2 (off), float 3 (on)

    const auto lp = build_neuron_lp(p.f, p.q, {0, 0}, ds, 0.0);
    REQUIRE(lp.has_value());
    CHECK(lp->weights == std::vector<double>{1.0, -2.0});
    REQUIRE(lp->constraints.size() == 2);
    CHECK(lp->constraints[0].x == std::vector<double>{1.0, 1.0});
    CHECK(lp->constraints[0].target_status == 1);
    CHECK(lp->constraints[0].current_status == 0);
    CHECK(lp->pre_activation(lp->constraints[0]) == -1.0);
    for (const auto &c : lp->constraints)
        CHECK(c.current_status != c.target_status);

    // neuron 1 has zero weights in both models: nothing to constrain
    CHECK_FALSE(build_neuron_lp(p.f, p.q, {0, 1}, ds).has_value());
    CHECK_THROWS(build_neuron_lp(p.f, p.q, {0, 7}, ds));
}

TEST_CASE("failing tests fill the constraint cap first")
{
    const HandPair p = hand_pair();
    Dataset ds;
    ds.num_classes = 2;
    for (int i = 0; i < 6; i++)
        ds.push_back(vec({1.0f + 0.1f * static_cast<float>(i), 1.0f}), 0);
    const auto obs = observe_layer(p.f, p.q, ds, 0);
    std::vector<TestOutcome> outcomes(ds.size());
    for (std::size_t i = 0; i < ds.size(); i++)
        outcomes[i] = {ds.ids[i], 0, 0, i == 4 || i == 5};
    const auto lp = build_neuron_lp(p.q, {0, 0}, obs, outcomes, 1e-3, 3);
    REQUIRE(lp.has_value());
    REQUIRE(lp->constraints.size() == 3);
    CHECK(lp->constraints[0].test_id == ds.ids[4]);
    CHECK(lp->constraints[1].test_id == ds.ids[5]);
    CHECK(lp->constraints[2].test_id == ds.ids[0]);
}

TEST_CASE("LP export matches the reviewed golden files")
{
    for (const auto *name : {"analytic", "bounded"})
    {
        const auto json = fixture(std::string("lp/") + name + ".json");
        const auto golden = fixture(std::string("lp/") + name + ".lp");
        const NeuronLP lp = load_neuron_lp(json);
        CHECK(format_lp(lp) == read_bytes(golden));

        TempDir dir(std::string("lp_") + name);
        export_lp(lp, dir / "a.lp");
        export_lp(lp, dir / "b.lp");
        CHECK(read_bytes(dir / "a.lp") == read_bytes(golden));
        CHECK(read_bytes(dir / "a.lp") == read_bytes(dir / "b.lp"));

        save_neuron_lp(lp, dir / "copy.json");
        CHECK(format_lp(load_neuron_lp(dir / "copy.json")) == format_lp(lp));
    }
}

TEST_CASE("an unbounded M appears only as M >= 0")
{
    const std::string text = format_lp(analytic_lp());
    const std::string bounds = text.substr(text.find("Bounds\n"));
    CHECK(bounds.rfind("Bounds\n M >= 0\n d0 free\n", 0) == 0);
    CHECK(bounds.find("M <=") == std::string::npos);
    NeuronLP bounded = analytic_lp();
    bounded.big_M_bound = 3.0;
    CHECK(format_lp(bounded).find(" 0 <= M <= 3\n") != std::string::npos);
}
