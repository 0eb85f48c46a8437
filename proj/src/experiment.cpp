#include "qnnrepair/experiment.hpp"

#include "qnnrepair/evaluation.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace qnnrepair
{

namespace
{

struct Preset
{
    std::size_t train_rows = 0;
    std::size_t repair_rows = 0;
    std::size_t validation_rows = 0;
    TrainOptions train;
    /// target layer, counted among dense layers from the input
    std::size_t target_dense = 0;
    double min_calibration_gap = 0.0;
};

Preset preset_for(const std::string &name)
{
    Preset p;
    if (name == "mlp-blobs")
    {
        p.train_rows = 1500;
        p.repair_rows = 500;
        p.validation_rows = 1000;
        p.train = {32, 20, 0.01, 0};
        p.target_dense = 0;
        p.min_calibration_gap = 0.04;
        return p;
    }
    if (name == "mnist-mini")
    {
        p.train_rows = 5000;
        p.repair_rows = 500;
        p.validation_rows = 2000;
        p.train = {32, 3, 0.01, 0};
        p.target_dense = 0;
        p.min_calibration_gap = 0.02;
        return p;
    }
    throw std::invalid_argument("unknown preset '" + name + "'");
}

float he_init(std::mt19937_64 &rng, std::size_t fan_in)
{
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
    return dist(rng);
}

struct Splits
{
    Dataset train;
    Dataset repair;
    Dataset validation;
};

Splits load_splits(const ExperimentOptions &options, const Preset &preset)
{
    Splits s;
    if (options.preset == "mlp-blobs")
    {
        const std::size_t total = preset.train_rows + preset.repair_rows + preset.validation_rows;
        const Dataset all = make_blobs(total, 20, 3, 0.35, 1.0, options.seed);
        s.train = all.slice(0, preset.train_rows);
        s.repair = all.slice(preset.train_rows, preset.repair_rows);
        s.validation = all.slice(preset.train_rows + preset.repair_rows, preset.validation_rows);
        return s;
    }
    if (!options.data_dir)
        throw std::invalid_argument("preset mnist-mini needs --data-dir with the MNIST IDX files");
    const auto &dir = *options.data_dir;
    const auto train_images = dir / "train-images-idx3-ubyte", train_labels = dir / "train-labels-idx1-ubyte";
    const auto test_images = dir / "t10k-images-idx3-ubyte", test_labels = dir / "t10k-labels-idx1-ubyte";
    for (const auto &p : {train_images, train_labels, test_images, test_labels})
        if (!std::filesystem::exists(p))
            throw std::runtime_error("missing dataset file " + p.string());
    const Dataset train_all = load_mnist_idx(train_images, train_labels, preset.train_rows + preset.repair_rows);
    s.train = train_all.slice(0, preset.train_rows);
    s.repair = train_all.slice(preset.train_rows, preset.repair_rows);
    s.validation = load_mnist_idx(test_images, test_labels, preset.validation_rows);
    return s;
}

std::string fmt_pct(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
    return buf;
}

void write_text(const std::filesystem::path &path, const std::string &text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << text;
}

} // namespace

Dataset make_blobs(std::size_t rows, std::size_t dims, std::size_t classes, double center_spread, double cluster_std, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<std::vector<double>> centers(classes, std::vector<double>(dims));
    for (auto &c : centers)
        for (auto &v : c)
            v = center_spread * unit(rng);
    Dataset ds;
    ds.num_classes = classes;
    for (std::size_t r = 0; r < rows; r++)
    {
        const std::size_t label = r % classes;
        std::vector<float> x(dims);
        for (std::size_t d = 0; d < dims; d++)
            x[d] = static_cast<float>(centers[label][d] + cluster_std * unit(rng));
        ds.push_back(Tensor({dims}, std::move(x)), label);
    }
    return ds;
}

Model train_mlp(const Dataset &train, const TrainOptions &options)
{
    if (train.empty())
        throw std::invalid_argument("cannot train on an empty dataset");
    const std::size_t in = train.inputs.front().size();
    const std::size_t hid = options.hidden;
    const std::size_t out = train.num_classes;
    std::mt19937_64 rng(options.seed);
    std::vector<float> w1(in * hid), b1(hid, 0.0f), w2(hid * out), b2(out, 0.0f);
    for (auto &v : w1)
        v = he_init(rng, in);
    for (auto &v : w2)
        v = he_init(rng, hid);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> pre(hid), h(hid), z(out), g(out), gh(hid);
    const double lr = options.learning_rate;
    for (std::size_t epoch = 0; epoch < options.epochs; epoch++)
    {
        for (std::size_t i = order.size(); i > 1; i--)
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
        for (std::size_t idx : order)
        {
            const auto x = train.inputs[idx].values();
            for (std::size_t j = 0; j < hid; j++)
            {
                double acc = b1[j];
                for (std::size_t i = 0; i < in; i++)
                    acc += static_cast<double>(w1[i * hid + j]) * x[i];
                pre[j] = acc;
                h[j] = acc > 0.0 ? acc : 0.0;
            }
            double zmax = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < out; k++)
            {
                double acc = b2[k];
                for (std::size_t j = 0; j < hid; j++)
                    acc += static_cast<double>(w2[j * out + k]) * h[j];
                z[k] = acc;
                zmax = std::max(zmax, acc);
            }
            double denom = 0.0;
            for (std::size_t k = 0; k < out; k++)
                denom += std::exp(z[k] - zmax);
            for (std::size_t k = 0; k < out; k++)
                g[k] = std::exp(z[k] - zmax) / denom - (k == train.labels[idx] ? 1.0 : 0.0);
            for (std::size_t j = 0; j < hid; j++)
            {
                double acc = 0.0;
                for (std::size_t k = 0; k < out; k++)
                    acc += static_cast<double>(w2[j * out + k]) * g[k];
                gh[j] = pre[j] > 0.0 ? acc : 0.0;
            }
            for (std::size_t j = 0; j < hid; j++)
                for (std::size_t k = 0; k < out; k++)
                    w2[j * out + k] -= static_cast<float>(lr * h[j] * g[k]);
            for (std::size_t k = 0; k < out; k++)
                b2[k] -= static_cast<float>(lr * g[k]);
            for (std::size_t i = 0; i < in; i++)
                if (x[i] != 0.0f)
                    for (std::size_t j = 0; j < hid; j++)
                        w1[i * hid + j] -= static_cast<float>(lr * x[i] * gh[j]);
            for (std::size_t j = 0; j < hid; j++)
                b1[j] -= static_cast<float>(lr * gh[j]);
        }
    }
    std::vector<Layer> layers;
    layers.push_back(Layer::dense(Tensor({in, hid}, std::move(w1)), Tensor({hid}, std::move(b1))));
    layers.push_back(Layer::relu());
    layers.push_back(Layer::dense(Tensor({hid, out}, std::move(w2)), Tensor({out}, std::move(b2))));
    return Model(std::move(layers), {in}, out);
}

QuantizedModel coarsen_layer(const QuantizedModel &qmodel, const Model &fmodel, std::size_t layer, int coarsen_bits)
{
    std::vector<QuantizedLayer> layers = qmodel.layers();
    QuantizedLayer &q = layers.at(layer);
    if (!q.weights)
        throw std::invalid_argument("layer " + std::to_string(layer) + " has no weights to coarsen");
    const float scale = q.weights->scale * static_cast<float>(std::ldexp(1.0, coarsen_bits));
    q.weights = quantize_tensor(*fmodel.layer(layer).weights, scale, 0);
    q.float_columns.clear();
    return QuantizedModel(std::move(layers), qmodel.input_shape(), qmodel.num_classes());
}

ExperimentResult run_experiment(const ExperimentOptions &options)
{
    const Preset preset = preset_for(options.preset);
    Splits splits = load_splits(options, preset);

    TrainOptions train_opts = preset.train;
    train_opts.seed = options.seed;
    const Model fmodel = train_mlp(splits.train, train_opts);
    const QuantizedModel int8 = quantize_model(fmodel);

    ExperimentResult result;
    result.preset = options.preset;
    result.seed = options.seed;
    result.top_n = options.top_n;
    result.target_layer = fmodel.dense_layer_indices().at(preset.target_dense);

    // Widen the float/int8 gap on the target layer, calibrated on the training split only.
    const double train_float = accuracy(fmodel, splits.train).accuracy;
    QuantizedModel qmodel = int8;
    result.misquantization = {result.target_layer, 0};
    for (int bits = 1; bits <= 6; bits++)
    {
        qmodel = coarsen_layer(int8, fmodel, result.target_layer, bits);
        result.misquantization.coarsen_bits = bits;
        if (train_float - accuracy(qmodel, splits.train).accuracy >= preset.min_calibration_gap)
            break;
    }
    spdlog::info("target layer {} coarsened by {} bit(s)", result.target_layer, result.misquantization.coarsen_bits);

    result.float_accuracy = accuracy(fmodel, splits.validation, "validation", options.workers).accuracy;
    result.int8_accuracy = accuracy(int8, splits.validation, "validation", options.workers).accuracy;
    result.quantized_accuracy = accuracy(qmodel, splits.validation, "validation", options.workers).accuracy;
    result.quantized_fidelity = fidelity(fmodel, qmodel, splits.validation, options.workers);

    RepairConfig base;
    base.target_layer = result.target_layer;
    base.max_neurons = options.top_n;
    base.epsilon = options.epsilon;
    base.time_budget_seconds = options.time_budget_seconds;
    base.max_constraints = options.max_constraints;
    base.patch_mode = options.patch_mode;
    base.workers = options.workers;

    std::vector<std::size_t> sizes;
    for (std::size_t n : {std::size_t{10}, std::size_t{100}})
        if (n < splits.repair.size())
            sizes.push_back(n);
    sizes.push_back(splits.repair.size());

    for (std::size_t n : sizes)
    {
        const Dataset repair_set = splits.repair.slice(0, n);
        ExperimentRow row;
        row.repair_images = n;
        for (Metric m : kAllMetrics)
        {
            RepairConfig cfg = base;
            cfg.metric = m;
            auto res = repair(fmodel, qmodel, repair_set, splits.validation, cfg);
            row.failing_tests = res.report.failing_tests;
            row.results.push_back({std::string(to_string(m)), res.report.after.accuracy, res.report.after.fidelity.value_or(0.0), res.report.solved,
                                   res.report.attempted(), 1});
            if (n == splits.repair.size())
                result.reports.push_back(std::move(res.report));
        }
        SelectionResult random{"random", 0.0, 0.0, 0, 0, std::max<std::size_t>(options.trials, 1)};
        for (std::size_t trial = 0; trial < random.trials; trial++)
        {
            RepairConfig cfg = base;
            cfg.metric.reset();
            cfg.seed = options.seed * 1000 + trial;
            const auto res = repair(fmodel, qmodel, repair_set, splits.validation, cfg);
            random.accuracy += res.report.after.accuracy;
            random.fidelity += res.report.after.fidelity.value_or(0.0);
            random.solved += res.report.solved;
            random.attempted += res.report.attempted();
        }
        random.accuracy /= static_cast<double>(random.trials);
        random.fidelity /= static_cast<double>(random.trials);
        row.results.push_back(random);
        result.rows.push_back(std::move(row));
    }

    const ExperimentRow &headline = result.rows.back();
    result.best_accuracy = -1.0;
    for (const auto &r : headline.results)
        if (r.selection != "random" && r.accuracy > result.best_accuracy)
        {
            result.best_accuracy = r.accuracy;
            result.best_selection = r.selection;
        }

    if (options.out_dir)
    {
        const auto &dir = *options.out_dir;
        std::filesystem::create_directories(dir / "reports");
        save_model(fmodel, dir / "float_model.json");
        save_quantized_model(qmodel, dir / "quantized_model.json");
        save_dataset(splits.repair, dir / "repair_set.csv", DatasetFormat::csv);
        save_dataset(splits.validation, dir / "validation_set.csv", DatasetFormat::csv);
        for (const auto &rep : result.reports)
            write_text(dir / "reports" / (rep.selection + ".json"), report_to_json(rep).dump(1) + "\n");
        write_text(dir / "experiment.json", experiment_to_json(result).dump(1) + "\n");

        std::ostringstream csv;
        csv << "repair_images";
        for (const auto &r : headline.results)
            csv << ',' << r.selection;
        csv << '\n';
        for (const auto &row : result.rows)
        {
            csv << row.repair_images;
            for (const auto &r : row.results)
                csv << ',' << sig6(r.accuracy);
            csv << '\n';
        }
        write_text(dir / "comparison.csv", csv.str());

        // importance distribution of every metric on the full repair set, for external plotting
        const auto outcomes = classify_tests(fmodel, qmodel, splits.repair, options.workers);
        const auto obs = observe_layer(fmodel, qmodel, splits.repair, result.target_layer, options.workers);
        const auto spectra = accumulate_spectra(build_diff_matrix(obs), outcomes);
        std::ostringstream dist;
        dist << "neuron_index,C_af,C_nf,C_as,C_ns";
        for (Metric m : kAllMetrics)
            dist << ',' << to_string(m);
        dist << '\n';
        std::vector<std::vector<ImportanceScore>> scores;
        for (Metric m : kAllMetrics)
            scores.push_back(score_neurons(spectra, m));
        for (std::size_t n = 0; n < spectra.size(); n++)
        {
            dist << n << ',' << spectra[n].af << ',' << spectra[n].nf << ',' << spectra[n].as << ',' << spectra[n].ns;
            for (const auto &s : scores)
                dist << ',' << sig6(s[n].value);
            dist << '\n';
        }
        write_text(dir / "importance.csv", dist.str());
    }
    return result;
}

nlohmann::json experiment_to_json(const ExperimentResult &result)
{
    using nlohmann::json;
    json doc;
    doc["preset"] = result.preset;
    doc["seed"] = result.seed;
    doc["target_layer"] = result.target_layer;
    doc["top_n"] = result.top_n;
    doc["misquantization"] = {{"layer", result.misquantization.layer}, {"coarsen_bits", result.misquantization.coarsen_bits}};
    doc["validation"] = {{"float_accuracy", sig6(result.float_accuracy)},
                         {"int8_accuracy", sig6(result.int8_accuracy)},
                         {"quantized_accuracy", sig6(result.quantized_accuracy)},
                         {"quantized_fidelity", sig6(result.quantized_fidelity)}};
    doc["rows"] = json::array();
    for (const auto &row : result.rows)
    {
        json r;
        r["repair_images"] = row.repair_images;
        r["failing_tests"] = row.failing_tests;
        r["results"] = json::array();
        for (const auto &s : row.results)
            r["results"].push_back({{"selection", s.selection},
                                    {"accuracy", sig6(s.accuracy)},
                                    {"fidelity", sig6(s.fidelity)},
                                    {"solved", s.solved},
                                    {"attempted", s.attempted},
                                    {"trials", s.trials}});
        doc["rows"].push_back(std::move(r));
    }
    doc["best"] = {{"selection", result.best_selection}, {"accuracy", sig6(result.best_accuracy)}};
    doc["reports"] = json::array();
    for (const auto &rep : result.reports)
        doc["reports"].push_back(report_to_json(rep));
    return doc;
}

std::string experiment_table(const ExperimentResult &result)
{
    std::ostringstream out;
    out << "preset " << result.preset << ", seed " << result.seed << ", repairing top " << result.top_n << " neuron(s) of layer " << result.target_layer
        << '\n';
    out << "validation accuracy: float " << fmt_pct(result.float_accuracy) << ", int8 " << fmt_pct(result.int8_accuracy) << ", mis-quantized ("
        << result.misquantization.coarsen_bits << " bit coarser) " << fmt_pct(result.quantized_accuracy) << '\n';
    char cell[32];
    out << "#images";
    for (const auto &r : result.rows.front().results)
    {
        std::snprintf(cell, sizeof(cell), " %10s", r.selection.c_str());
        out << cell;
    }
    out << '\n';
    for (const auto &row : result.rows)
    {
        std::snprintf(cell, sizeof(cell), "%7zu", row.repair_images);
        out << cell;
        for (const auto &r : row.results)
        {
            std::snprintf(cell, sizeof(cell), " %10s", fmt_pct(r.accuracy).c_str());
            out << cell;
        }
        out << '\n';
    }
    out << "best metric: " << result.best_selection << " at " << fmt_pct(result.best_accuracy) << '\n';
    return out.str();
}

} // namespace qnnrepair
