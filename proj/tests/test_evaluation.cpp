#include "support.hpp"

#include "qnnrepair/evaluation.hpp"
#include "qnnrepair/fault_localization.hpp"

#include <doctest.h>

#include <algorithm>

using namespace qnnrepair;
using namespace qnnrepair::testing;

namespace
{

/// Always predicts class 0 whatever the input.
Model constant_model()
{
    return Model({Layer::dense(mat(2, 3, std::vector<float>(6, 0.0f)), vec({1, 0, 0}))}, {2}, 3);
}

Dataset reversed(const Dataset &ds)
{
    Dataset out;
    out.num_classes = ds.num_classes;
    for (std::size_t i = ds.size(); i-- > 0;)
    {
        out.inputs.push_back(ds.inputs[i]);
        out.labels.push_back(ds.labels[i]);
        out.ids.push_back(ds.ids[i]);
    }
    return out;
}

} // namespace

TEST_CASE("constant predictor scores the share of its class")
{
    Dataset ds;
    ds.num_classes = 3;
    for (int i = 0; i < 10; i++)
        ds.push_back(vec({static_cast<float>(i), 1.0f}), i < 4 ? 0 : 1 + static_cast<std::size_t>(i % 2));
    const EvalResult r = accuracy(constant_model(), ds, "ds");
    CHECK(r.n == 10);
    CHECK(r.correct == 4);
    CHECK(r.accuracy == doctest::Approx(0.4));
    CHECK(r.dataset_id == "ds");
    CHECK_FALSE(r.fidelity.has_value());
    const EvalResult again = accuracy(constant_model(), ds, "ds");
    CHECK(again.correct == r.correct);
    CHECK(again.accuracy == r.accuracy);
}

TEST_CASE("a lookup model gets its memorised points right")
{
    const Model lookup({Layer::dense(mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), vec({0, 0, 0}))}, {3}, 3);
    Dataset ds;
    ds.num_classes = 3;
    ds.push_back(vec({1, 0, 0}), 0);
    ds.push_back(vec({0, 1, 0}), 1);
    ds.push_back(vec({0, 0, 1}), 2);
    CHECK(accuracy(lookup, ds).accuracy == 1.0);
}

TEST_CASE("fidelity counts label agreement")
{
    std::mt19937_64 rng(10);
    const Model m = random_mlp({2, 4, 3}, rng);
    Dataset ds;
    ds.num_classes = 3;
    for (int i = 0; i < 4; i++)
        ds.push_back(random_tensor({2}, rng), 0);
    CHECK(fidelity(m, m, ds) == 1.0);

    // predicts class 0 on three inputs and class 1 on the fourth
    const Model selector({Layer::dense(mat(2, 3, {0, 1, 0, 0, 0, 0}), vec({0.5f, 0, 0}))}, {2}, 3);
    Dataset four;
    four.num_classes = 3;
    for (float v : {0.0f, 0.1f, -3.0f, 2.0f})
        four.push_back(vec({v, 0.0f}), 0);
    CHECK(fidelity(constant_model(), selector, four) == doctest::Approx(0.75));
    CHECK(fidelity(selector, constant_model(), four) == doctest::Approx(0.75));

    const auto er = evaluate_against(selector, constant_model(), four, "four");
    REQUIRE(er.fidelity.has_value());
    CHECK(*er.fidelity == doctest::Approx(0.75));
    CHECK(er.accuracy == doctest::Approx(0.75));
}

TEST_CASE("exactly representable quantization has fidelity 1")
{
    const Model m({Layer::dense(mat(2, 2, {0.5f, -0.25f, 1.0f, 0.125f}), vec({0.1f, 0})), Layer::relu(),
                   Layer::dense(mat(2, 2, {1.0f, -1.0f, 0.75f, 0.5f}), vec({0, 0}))},
                  {2}, 2);
    const QuantizedModel q = quantize_with_scale(m, 1.0f / 64.0f);
    std::mt19937_64 rng(1);
    Dataset ds;
    ds.num_classes = 2;
    for (int i = 0; i < 50; i++)
        ds.push_back(random_tensor({2}, rng), 0);
    CHECK(fidelity(m, q, ds) == 1.0);
}

TEST_CASE("empty datasets are rejected")
{
    CHECK_THROWS_AS(accuracy(constant_model(), Dataset{}), std::invalid_argument);
    CHECK_THROWS_AS(fidelity(constant_model(), constant_model(), Dataset{}), std::invalid_argument);
}

TEST_CASE("fixture properties: symmetry, reordering, and agreement with classify_tests")
{
    const Model f = load_model(fixture("mlp_float.json"));
    const QuantizedModel q = load_quantized_model(fixture("mlp_quant.json"));
    const Dataset val = load_dataset(fixture("mlp_val.csv"), DatasetFormat::csv, 3);

    const double fq = fidelity(f, q, val);
    CHECK(fq == fidelity(q, f, val));
    CHECK(fq == fidelity(f, q, reversed(val), 3));
    CHECK(accuracy(q, val).correct == accuracy(q, reversed(val), "", 2).correct);

    const auto outcomes = classify_tests(f, q, val);
    const auto failing = static_cast<std::size_t>(std::count_if(outcomes.begin(), outcomes.end(), [](const TestOutcome &o) { return o.is_failing; }));
    CHECK(failing > 0);
    CHECK(fq == static_cast<double>(val.size() - failing) / static_cast<double>(val.size()));
    CHECK(1.0 - fq == doctest::Approx(static_cast<double>(failing) / static_cast<double>(val.size())).epsilon(1e-15));
}
