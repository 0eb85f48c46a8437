// Regenerates the files under tests/fixtures. Outputs are committed; the tests never run this.
#include "qnnrepair/dataset.hpp"
#include "qnnrepair/evaluation.hpp"
#include "qnnrepair/experiment.hpp"
#include "qnnrepair/fault_localization.hpp"
#include "qnnrepair/model.hpp"
#include "qnnrepair/neuron_lp.hpp"
#include "qnnrepair/quantizer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

using namespace qnnrepair;
namespace fs = std::filesystem;

namespace
{

constexpr std::size_t kImage = 8;
constexpr std::size_t kConvClasses = 3;

// 8x8 grey images: a horizontal bar, a vertical bar or a diagonal at a random offset, plus noise.
Dataset make_bar_images(std::size_t rows, double noise, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, noise);
    std::uniform_int_distribution<std::size_t> pos(1, kImage - 2);
    Dataset ds;
    ds.num_classes = kConvClasses;
    for (std::size_t r = 0; r < rows; r++)
    {
        const std::size_t label = r % kConvClasses;
        const std::size_t p = pos(rng);
        std::vector<float> px(kImage * kImage);
        for (std::size_t y = 0; y < kImage; y++)
            for (std::size_t x = 0; x < kImage; x++)
            {
                bool on = false;
                if (label == 0)
                    on = y == p;
                else if (label == 1)
                    on = x == p;
                else
                    on = (x + kImage - y) % kImage == p;
                px[y * kImage + x] = static_cast<float>((on ? 1.0 : 0.0) + gauss(rng));
            }
        ds.push_back(Tensor({kImage, kImage, 1}, std::move(px)), label);
    }
    return ds;
}

Tensor random_tensor(Shape shape, std::size_t fan_in, std::mt19937_64 &rng)
{
    std::size_t n = 1;
    for (auto d : shape)
        n *= d;
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
    std::vector<float> v(n);
    for (auto &x : v)
        x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
}

void write_conv3(const fs::path &dir)
{
    std::mt19937_64 rng(3);
    std::vector<Layer> features;
    features.push_back(Layer::conv2d(random_tensor({3, 3, 1, 4}, 9, rng), Tensor({4}, std::vector<float>(4, 0.0f)), 1, true));
    features.push_back(Layer::conv2d(random_tensor({3, 3, 4, 8}, 36, rng), Tensor({8}, std::vector<float>(8, 0.0f)), 1, true));
    features.push_back(Layer::conv2d(random_tensor({3, 3, 8, 8}, 72, rng), Tensor({8}, std::vector<float>(8, 0.0f)), 1, true));
    features.push_back(Layer::flatten());

    auto embed = [&](const Dataset &images) {
        Dataset out;
        out.num_classes = images.num_classes;
        for (std::size_t i = 0; i < images.size(); i++)
        {
            Tensor t = images.inputs[i];
            for (const auto &l : features)
                t = apply_layer(l, t);
            out.push_back(std::move(t), images.labels[i]);
        }
        return out;
    };

    const Dataset train = make_bar_images(1500, 0.3, 30);
    const Model head = train_mlp(embed(train), {16, 40, 0.01, 31});

    std::vector<Layer> layers = features;
    layers.push_back(Layer::dense(*head.layer(0).weights, *head.layer(0).bias, true));
    layers.push_back(Layer::dense(*head.layer(2).weights, *head.layer(2).bias));
    const Model conv3(std::move(layers), {kImage, kImage, 1}, kConvClasses);
    const QuantizedModel q = quantize_model(conv3);

    // Validation set: ordinary images with a few float/int8 disagreements (float correct) from a larger pool mixed in,
    // the first one placed at row 7.
    const Dataset pool = make_bar_images(20000, 0.3, 32);
    const auto outcomes = classify_tests(conv3, q, pool);
    std::vector<std::size_t> flips, agree;
    // flips where float is right and int8 wrong come first
    for (std::size_t i = 0; i < pool.size(); i++)
        if (outcomes[i].is_failing && outcomes[i].float_label == pool.labels[i])
            flips.push_back(i);
        else if (!outcomes[i].is_failing)
            agree.push_back(i);
    std::cout << "conv3: " << flips.size() << " flips in pool of " << pool.size() << "\n";
    if (flips.empty())
        throw std::runtime_error("no float/int8 disagreement found for the conv3 fixture");

    Dataset val;
    val.num_classes = kConvClasses;
    std::size_t next_flip = 0, next_agree = 0;
    for (std::size_t row = 0; row < 200; row++)
    {
        const bool take_flip = next_flip < flips.size() && next_flip < 6 && (row == 7 || (row > 7 && row % 29 == 0));
        const std::size_t src = take_flip ? flips[next_flip++] : agree[next_agree++];
        val.push_back(pool.inputs[src], pool.labels[src]);
    }
    save_model(conv3, dir / "conv3.json");
    save_quantized_model(q, dir / "conv3_quant.json");
    save_dataset(val, dir / "conv3_val.csv", DatasetFormat::csv);
    std::cout << "conv3 float " << accuracy(conv3, val).accuracy << " int8 " << accuracy(q, val).accuracy << "\n";
}

void write_mlp(const fs::path &dir)
{
    const Dataset all = make_blobs(1200, 20, 3, 0.35, 1.0, 7);
    const Dataset train = all.slice(0, 700);
    const Dataset repair_set = all.slice(700, 200);
    const Dataset val = all.slice(900, 300);
    const Model f = train_mlp(train, {16, 20, 0.01, 8});
    const QuantizedModel int8 = quantize_model(f);

    // Mis-quantize the output layer until the repair set has a handful of failing tests.
    QuantizedModel q = int8;
    for (int bits = 1; bits <= 7; bits++)
    {
        q = coarsen_layer(int8, f, 2, bits);
        const auto outcomes = classify_tests(f, q, repair_set);
        const auto failing = std::count_if(outcomes.begin(), outcomes.end(), [](const TestOutcome &o) { return o.is_failing; });
        std::cout << "mlp: coarsen " << bits << " bits -> " << failing << " failing\n";
        if (failing >= 10)
            break;
    }
    save_model(f, dir / "mlp_float.json");
    save_quantized_model(q, dir / "mlp_quant.json");
    save_dataset(repair_set, dir / "mlp_repair.csv", DatasetFormat::csv);
    save_dataset(val, dir / "mlp_val.csv", DatasetFormat::csv);
}

void write_datasets(const fs::path &dir)
{
    std::ofstream(dir / "two_rows.csv") << "0,0.5,-1,2\n1,1.25,0,-0.75\n";
    const Dataset blobs = make_blobs(1000, 4, 3, 1.0, 1.0, 11);
    save_dataset(blobs, dir / "rows1000.csv", DatasetFormat::csv);
    save_dataset(blobs, dir / "rows1000.bin", DatasetFormat::bin);
}

void write_lps(const fs::path &dir)
{
    fs::create_directories(dir / "lp");
    NeuronLP analytic;
    analytic.neuron = {0, 0};
    analytic.weights = {1.0, -2.0};
    analytic.bias = 0.0;
    analytic.epsilon = 0.0;
    analytic.constraints = {{0, {1.0, 1.0}, 1, 0}};
    save_neuron_lp(analytic, dir / "lp" / "analytic.json");
    export_lp(analytic, dir / "lp" / "analytic.lp");

    NeuronLP bounded;
    bounded.neuron = {2, 1};
    bounded.weights = {0.25, -0.5, 0.125};
    bounded.bias = 0.1;
    bounded.epsilon = 1e-3;
    bounded.big_M_bound = 2.0;
    bounded.constraints = {{3, {1.0, 0.5, 0.0}, 0, 1}, {5, {0.2, 1.5, -1.0}, 1, 0}, {9, {0.0, 0.0, 2.0}, 0, 1}};
    save_neuron_lp(bounded, dir / "lp" / "bounded.json");
    export_lp(bounded, dir / "lp" / "bounded.lp");
}

} // namespace

int main(int argc, char **argv)
{
    const fs::path dir = argc > 1 ? fs::path(argv[1]) : fs::path("tests/fixtures");
    fs::create_directories(dir);
    try
    {
        write_datasets(dir);
        write_lps(dir);
        write_mlp(dir);
        write_conv3(dir);
    }
    catch (const std::exception &e)
    {
        std::cerr << "make_fixtures: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
