#include "support.hpp"

#include "qnnrepair/evaluation.hpp"
#include "qnnrepair/fault_localization.hpp"
#include "qnnrepair/quantizer.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace qnnrepair;
using namespace qnnrepair::testing;

TEST_CASE("all-zero tensor gets unit scale")
{
    const auto q = quantize_tensor(vec({0, 0, 0}));
    CHECK(q.scale == 1.0f);
    CHECK(q.zero_point == 0);
    CHECK(q.data == std::vector<std::int8_t>{0, 0, 0});
}

TEST_CASE("scale is max|r| / 127")
{
    const auto q = quantize_tensor(vec({1.27f, -1.27f}));
    CHECK(q.scale == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(q.data == std::vector<std::int8_t>{127, -127});

    const auto single = quantize_tensor(vec({100.0f}));
    CHECK(single.scale == doctest::Approx(100.0 / 127.0).epsilon(1e-7));
    CHECK(single.data[0] == 127);
}

TEST_CASE("fixed-scale quantization rounds r / S")
{
    const auto q = quantize_tensor(vec({1.2f}), 0.5f, 0);
    CHECK(q.data[0] == 2);
    CHECK(dequantize(q)[0] == 1.0f);
    // half away from zero, and clamping
    const auto h = quantize_tensor(vec({0.25f, -0.25f, 1000.0f, -1000.0f}), 0.5f, 0);
    CHECK(h.data == std::vector<std::int8_t>{1, -1, 127, -127});
}

TEST_CASE("dequantize applies S * (q - Z)")
{
    QuantizedTensor qt;
    qt.shape = {1};
    qt.data = {2};
    qt.scale = 0.5f;
    CHECK(dequantize(qt)[0] == 1.0f);

    qt.shape = {4};
    qt.data = {0, 0, 0, 0};
    qt.scale = 0.37f;
    const Tensor zeros = dequantize(qt);
    for (float v : zeros.values())
        CHECK(v == 0.0f);
}

TEST_CASE("non-finite values are rejected")
{
    CHECK_THROWS_AS(quantize_tensor(vec({1.0f, std::numeric_limits<float>::quiet_NaN()})), std::invalid_argument);
    CHECK_THROWS_AS(quantize_tensor(vec({std::numeric_limits<float>::infinity()})), std::invalid_argument);
    CHECK_THROWS_AS(quantize_tensor(vec({1.0f}), 0.0f, 0), std::invalid_argument);
}

TEST_CASE("round trip stays within half a step on random tensors")
{
    std::mt19937_64 rng(1234);
    std::uniform_int_distribution<std::size_t> len(1, 64);
    std::uniform_real_distribution<double> log_mag(-6.0, 3.0);
    for (int t = 0; t < 1000; t++)
    {
        const float mag = static_cast<float>(std::pow(10.0, log_mag(rng)));
        const Tensor v = random_tensor({len(rng)}, rng, mag);
        const auto q = quantize_tensor(v);
        REQUIRE(q.scale > 0.0f);
        const Tensor back = dequantize(q);
        const double half = static_cast<double>(q.scale) / 2.0;
        for (std::size_t i = 0; i < v.size(); i++)
        {
            CHECK(q.data[i] >= -kQuantMax);
            CHECK(q.data[i] <= kQuantMax);
            CHECK(std::abs(static_cast<double>(v[i]) - q.real_value(i)) <= half + 1e-9);
            // the float32 product can land one rounding step further away
            const double ulp = std::abs(std::nextafter(back[i], std::numeric_limits<float>::infinity()) - back[i]);
            CHECK(std::abs(static_cast<double>(v[i]) - back[i]) <= half + ulp);
        }
    }
}

TEST_CASE("quantization is odd-symmetric")
{
    std::mt19937_64 rng(99);
    for (int t = 0; t < 200; t++)
    {
        const Tensor v = random_tensor({17}, rng, 3.0f);
        std::vector<float> neg(v.values().begin(), v.values().end());
        for (auto &x : neg)
            x = -x;
        const auto a = quantize_tensor(v);
        const auto b = quantize_tensor(vec(neg));
        CHECK(a.scale == b.scale);
        for (std::size_t i = 0; i < a.size(); i++)
            CHECK(a.data[i] == -b.data[i]);
    }
}

TEST_CASE("quantize_model keeps topology and biases")
{
    const Model m({Layer::dense(mat(2, 2, {1, 0, 0, 1}), vec({0.3f, -0.2f}), true), Layer::dense(mat(2, 2, {1, 0, 0, 1}), vec({0, 0}))}, {2}, 2);
    const QuantizedModel q = quantize_model(m);
    REQUIRE(q.num_layers() == 2);
    CHECK(q.layer(0).fused_relu);
    CHECK(*q.layer(0).bias == *m.layer(0).bias);
    const auto &w = *q.layer(0).weights;
    for (std::size_t i = 0; i < w.size(); i++)
        CHECK(std::abs(w.real_value(i) - (*m.layer(0).weights)[i]) <= w.scale / 2.0);
}

TEST_CASE("exactly representable weights give identical logits and activations")
{
    // multiples of 1/16 with max magnitude 127/16, so the symmetric scale is exactly 1/16
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> code(-127, 127);
    auto exact = [&](std::size_t r, std::size_t c) {
        std::vector<float> v(r * c);
        for (auto &x : v)
            x = static_cast<float>(code(rng)) / 16.0f;
        v[0] = 127.0f / 16.0f;
        return mat(r, c, std::move(v));
    };
    const Model m({Layer::dense(exact(4, 5), vec({0.1f, 0, 0, -0.1f, 0.2f}), true), Layer::dense(exact(5, 3), vec({0, 0, 0}))}, {4}, 3);
    const QuantizedModel q = quantize_model(m);
    CHECK(q.layer(0).weights->scale == 1.0f / 16.0f);
    for (int t = 0; t < 20; t++)
    {
        const Tensor x = random_tensor({4}, rng);
        CHECK(quantized_forward(q, x) == forward(m, x));
        const auto a = capture_activations(m, x, {0, 1});
        const auto b = capture_activations_q(q, x, {0, 1});
        for (std::size_t k = 0; k < a.size(); k++)
        {
            CHECK(a[k].status == b[k].status);
            CHECK(a[k].pre_activation == b[k].pre_activation);
        }
    }
}

TEST_CASE("quantized logits stay within an interval bound of the float logits")
{
    std::mt19937_64 rng(21);
    for (int t = 0; t < 50; t++)
    {
        const Model m = random_mlp({6, 8, 3}, rng, false);
        const QuantizedModel q = quantize_model(m);
        const Tensor x = random_tensor({6}, rng);
        const double s1 = q.layer(0).weights->scale, s2 = q.layer(1).weights->scale;
        const auto &w2 = *m.layer(1).weights;

        double sum_x = 0.0;
        for (float v : x.values())
            sum_x += std::abs(v);
        const double hidden_err = sum_x * s1 / 2.0; // relu is 1-Lipschitz
        const Tensor hidden = apply_layer(m.layer(0), x);
        const Tensor fo = forward(m, x), qo = quantized_forward(q, x);
        for (std::size_t k = 0; k < 3; k++)
        {
            double bound = 0.0;
            for (std::size_t j = 0; j < 8; j++)
                bound += (std::abs(w2[j * 3 + k]) + s2 / 2.0) * hidden_err + std::abs(hidden[j]) * s2 / 2.0;
            CHECK(std::abs(static_cast<double>(fo[k]) - qo[k]) <= bound + 1e-5);
        }
    }
}

TEST_CASE("the Conv3 fixture loses a little accuracy under int8")
{
    const Model f = load_model(fixture("conv3.json"));
    const QuantizedModel q = load_quantized_model(fixture("conv3_quant.json"));
    const Dataset val = load_dataset(fixture("conv3_val.csv"), DatasetFormat::csv, 3).with_shape(f.input_shape());
    const double fa = accuracy(f, val).accuracy, qa = accuracy(q, val).accuracy;
    CHECK(fa >= qa);
    CHECK(fa - qa <= 0.05);
    const auto outcomes = classify_tests(f, q, val);
    CHECK(std::count_if(outcomes.begin(), outcomes.end(), [](const TestOutcome &o) { return o.is_failing; }) > 0);
}

TEST_CASE("float patches and requantization")
{
    std::mt19937_64 rng(8);
    const Model m = random_mlp({3, 4, 2}, rng, false);
    QuantizedModel q = quantize_model(m);
    const std::vector<float> patch = {0.5f, -0.25f, 0.125f};
    q.set_float_column(0, 2, patch);
    CHECK(q.neuron_weights(0, 2) == patch);
    const auto &eff = *q.effective_model().layer(0).weights;
    for (std::size_t i = 0; i < 3; i++)
        CHECK(eff[i * 4 + 2] == patch[i]);
    CHECK_THROWS(q.set_float_column(0, 2, {1.0f}));
    CHECK_THROWS(q.set_float_column(0, 9, patch));

    TempDir dir("quant_save");
    save_quantized_model(q, dir / "q.json");
    const QuantizedModel back = load_quantized_model(dir / "q.json");
    CHECK(back.layer(0).float_columns == q.layer(0).float_columns);
    CHECK(back.layer(0).weights->data == q.layer(0).weights->data);
    CHECK(back.layer(0).weights->scale == q.layer(0).weights->scale);
    const Tensor x = random_tensor({3}, rng);
    CHECK(quantized_forward(back, x) == quantized_forward(q, x));

    q.requantize_layer(0, *m.layer(0).weights);
    CHECK(q.layer(0).float_columns.empty());
}
