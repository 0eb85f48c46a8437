#include "qnnrepair/cli.hpp"

#include "qnnrepair/dataset.hpp"
#include "qnnrepair/evaluation.hpp"
#include "qnnrepair/experiment.hpp"
#include "qnnrepair/fault_localization.hpp"
#include "qnnrepair/model.hpp"
#include "qnnrepair/quantizer.hpp"
#include "qnnrepair/repair.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace qnnrepair
{

void configure_logging()
{
    static bool configured = false;
    if (!configured)
    {
        auto logger = spdlog::stderr_color_mt("qnnrepair");
        spdlog::set_default_logger(logger);
        configured = true;
    }
    const char *level = std::getenv("QNNREPAIR_LOG");
    spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
}

namespace
{

Dataset load_for_model(const std::string &path, const std::string &format, const Shape &input_shape, std::size_t num_classes)
{
    Dataset ds;
    if (format == "cifar10")
        ds = load_cifar10_batch(path);
    else
    {
        const DatasetFormat fmt = format.empty() ? dataset_format_for(path) : dataset_format_from_string(format);
        ds = load_dataset(path, fmt, fmt == DatasetFormat::csv ? std::optional<std::size_t>(num_classes) : std::nullopt);
    }
    if (ds.num_classes > num_classes)
        throw ParseError(path + ": dataset has " + std::to_string(ds.num_classes) + " classes, model has " + std::to_string(num_classes));
    ds.num_classes = num_classes;
    ds.validate();
    return ds.with_shape(input_shape);
}

void write_file(const std::string &path, const std::string &text)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw std::runtime_error("cannot write " + path);
    f << text;
}

struct RepairArgs
{
    std::string float_path;
    std::string quant_path;
    std::string repair_set;
    std::string validation;
    std::string format;
    std::string metric = "tarantula";
    std::size_t top = 1;
    double epsilon = kDefaultEpsilon;
    double time_budget = 60.0;
    std::string patch_mode = "float_patch";
    std::string lp_dir;
    bool recompute_inputs = false;
    std::size_t workers = 1;
    std::uint64_t seed = 0;
    std::string out_dir;
    long layer = -1;
    std::size_t max_constraints = kDefaultMaxConstraints;
    double accuracy_threshold = -1.0;
    int dstar_exponent = 2;
    bool timings = false;
};

int run_repair(const RepairArgs &a, std::ostream &out)
{
    const Model fmodel = load_model(a.float_path);
    const QuantizedModel qmodel = load_quantized_model(a.quant_path);
    const Dataset repair_set = load_for_model(a.repair_set, a.format, fmodel.input_shape(), fmodel.num_classes());
    const Dataset validation = load_for_model(a.validation, a.format, fmodel.input_shape(), fmodel.num_classes());

    RepairConfig cfg;
    if (a.layer >= 0)
        cfg.target_layer = static_cast<std::size_t>(a.layer);
    if (a.metric != "random")
        cfg.metric = metric_from_string(a.metric);
    else
        cfg.metric.reset();
    cfg.seed = a.seed;
    cfg.max_neurons = a.top;
    cfg.epsilon = a.epsilon;
    cfg.time_budget_seconds = a.time_budget;
    cfg.patch_mode = patch_mode_from_string(a.patch_mode);
    cfg.max_constraints = a.max_constraints;
    cfg.recompute_inputs = a.recompute_inputs;
    cfg.workers = a.workers;
    cfg.dstar_exponent = a.dstar_exponent;
    if (a.accuracy_threshold >= 0.0)
        cfg.accuracy_threshold = a.accuracy_threshold;
    if (!a.lp_dir.empty())
        cfg.lp_dir = a.lp_dir;

    const auto result = repair(fmodel, qmodel, repair_set, validation, cfg);
    out << report_table(result.report);
    if (!a.out_dir.empty())
    {
        std::filesystem::create_directories(a.out_dir);
        const std::filesystem::path dir(a.out_dir);
        save_quantized_model(result.model, dir / "repaired.json");
        write_file((dir / "report.json").string(), report_to_json(result.report, a.timings).dump(1) + "\n");
    }
    return result.report.solved == 0 ? kExitNothingSolved : kExitOk;
}

} // namespace

int cli_main(int argc, const char *const *argv, std::ostream &out, std::ostream &err)
{
    configure_logging();
    CLI::App app{"Localize and repair the neurons behind float/int8 disagreements in quantized classifiers"};
    app.require_subcommand(1);

    std::vector<std::string> metric_names;
    for (Metric m : kAllMetrics)
        metric_names.emplace_back(to_string(m));
    std::vector<std::string> selection_names = metric_names;
    selection_names.emplace_back("random");

    // quantize
    auto *quantize = app.add_subcommand("quantize", "Quantize a float model to int8 weights");
    std::string q_model, q_out;
    quantize->add_option("--model", q_model, "Float model JSON")->required()->check(CLI::ExistingFile);
    quantize->add_option("--out", q_out, "Quantized model JSON to write")->required();

    // eval
    auto *eval = app.add_subcommand("eval", "Accuracy (and fidelity to a reference) on a dataset");
    std::string e_model, e_quant, e_data, e_format, e_reference, e_out;
    std::size_t e_workers = 1;
    eval->add_option("--model", e_model, "Float model JSON")->check(CLI::ExistingFile);
    eval->add_option("--quant", e_quant, "Quantized model JSON")->check(CLI::ExistingFile);
    eval->add_option("--data", e_data, "Dataset (csv or bin)")->required()->check(CLI::ExistingFile);
    eval->add_option("--format", e_format, "csv, bin or cifar10 (default: by extension)");
    eval->add_option("--reference", e_reference, "Float reference model for fidelity")->check(CLI::ExistingFile);
    eval->add_option("--out", e_out, "Write the result as JSON");
    eval->add_option("--workers", e_workers, "Worker threads");

    // localize
    auto *localize = app.add_subcommand("localize", "Rank the neurons of a dense layer by suspiciousness");
    std::string l_float, l_quant, l_data, l_format, l_metric = "tarantula", l_out;
    long l_layer = -1;
    int l_exponent = 2;
    std::size_t l_workers = 1;
    localize->add_option("--float", l_float, "Float model JSON")->required()->check(CLI::ExistingFile);
    localize->add_option("--quant", l_quant, "Quantized model JSON")->required()->check(CLI::ExistingFile);
    localize->add_option("--repair-set", l_data, "Repair set")->required()->check(CLI::ExistingFile);
    localize->add_option("--format", l_format, "csv or bin (default: by extension)");
    localize->add_option("--metric", l_metric, "tarantula, ochiai, dstar, jaccard, ample, euclid or wong3")->check(CLI::IsMember(metric_names));
    localize->add_option("--layer", l_layer, "Dense layer index (default: last dense layer)");
    localize->add_option("--dstar-exponent", l_exponent, "Exponent of DStar");
    localize->add_option("--out", l_out, "CSV output (default: stdout)");
    localize->add_option("--workers", l_workers, "Worker threads");

    // repair
    auto *repair_cmd = app.add_subcommand("repair", "Repair a quantized model");
    RepairArgs r;
    repair_cmd->add_option("--float", r.float_path, "Float model JSON")->required()->check(CLI::ExistingFile);
    repair_cmd->add_option("--quant", r.quant_path, "Quantized model JSON")->required()->check(CLI::ExistingFile);
    repair_cmd->add_option("--repair-set", r.repair_set, "Repair set")->required()->check(CLI::ExistingFile);
    repair_cmd->add_option("--val", r.validation, "Validation set")->required()->check(CLI::ExistingFile);
    repair_cmd->add_option("--format", r.format, "csv, bin or cifar10 (default: by extension)");
    repair_cmd->add_option("--metric", r.metric, "Suspiciousness metric, or random")->check(CLI::IsMember(selection_names));
    repair_cmd->add_option("--top", r.top, "Number of neurons to repair")->check(CLI::PositiveNumber);
    repair_cmd->add_option("--layer", r.layer, "Dense layer index (default: last dense layer)");
    repair_cmd->add_option("--epsilon", r.epsilon, "Strict-inequality margin")->check(CLI::NonNegativeNumber);
    repair_cmd->add_option("--time-budget", r.time_budget, "Seconds per neuron LP");
    repair_cmd->add_option("--patch-mode", r.patch_mode, "float_patch or requantize")->check(CLI::IsMember({"float_patch", "requantize"}));
    repair_cmd->add_option("--max-constraints", r.max_constraints, "Constraint cap per neuron")->check(CLI::PositiveNumber);
    repair_cmd->add_option("--accuracy-threshold", r.accuracy_threshold, "Stop once validation accuracy exceeds this");
    repair_cmd->add_option("--dstar-exponent", r.dstar_exponent, "Exponent of DStar");
    repair_cmd->add_option("--lp-dir", r.lp_dir, "Export every neuron LP here");
    repair_cmd->add_flag("--recompute-inputs", r.recompute_inputs, "Rebuild later LPs against the patched model");
    repair_cmd->add_option("--workers", r.workers, "Worker threads");
    repair_cmd->add_option("--seed", r.seed, "Seed for random selection");
    repair_cmd->add_option("--out", r.out_dir, "Directory for repaired.json and report.json");
    repair_cmd->add_flag("--timings", r.timings, "Include wall times in report.json");

    // experiment
    auto *experiment = app.add_subcommand("experiment", "Train, quantize and repair a desk-scale model with every metric");
    ExperimentOptions x;
    std::string x_out, x_data, x_patch = "float_patch";
    experiment->add_option("--preset", x.preset, "mlp-blobs or mnist-mini");
    experiment->add_option("--seed", x.seed, "Seed");
    experiment->add_option("--top", x.top_n, "Neurons to repair per run")->check(CLI::PositiveNumber);
    experiment->add_option("--trials", x.trials, "Random-selection trials")->check(CLI::PositiveNumber);
    experiment->add_option("--epsilon", x.epsilon, "Strict-inequality margin")->check(CLI::NonNegativeNumber);
    experiment->add_option("--time-budget", x.time_budget_seconds, "Seconds per neuron LP");
    experiment->add_option("--patch-mode", x_patch, "float_patch or requantize")->check(CLI::IsMember({"float_patch", "requantize"}));
    experiment->add_option("--workers", x.workers, "Worker threads");
    experiment->add_option("--data-dir", x_data, "Directory with MNIST IDX files (mnist-mini)");
    experiment->add_option("--out", x_out, "Artifact directory");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp &e)
    {
        app.exit(e, out, err);
        return kExitOk;
    }
    catch (const CLI::CallForAllHelp &e)
    {
        app.exit(e, out, err);
        return kExitOk;
    }
    catch (const CLI::ParseError &e)
    {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try
    {
        if (*quantize)
        {
            const Model model = load_model(q_model);
            save_quantized_model(quantize_model(model), q_out);
            out << "wrote " << q_out << '\n';
            return kExitOk;
        }
        if (*eval)
        {
            if (e_model.empty() == e_quant.empty())
            {
                err << "eval: give exactly one of --model or --quant\n";
                return kExitUsage;
            }
            std::optional<Model> fm;
            std::optional<QuantizedModel> qm;
            if (!e_model.empty())
                fm = load_model(e_model);
            else
                qm = load_quantized_model(e_quant);
            const Shape &shape = fm ? fm->input_shape() : qm->input_shape();
            const std::size_t classes = fm ? fm->num_classes() : qm->num_classes();
            const Dataset data = load_for_model(e_data, e_format, shape, classes);
            EvalResult res = fm ? accuracy(*fm, data, e_data, e_workers) : accuracy(*qm, data, e_data, e_workers);
            if (!e_reference.empty())
            {
                const Model ref = load_model(e_reference);
                res.fidelity = fm ? fidelity(ref, *fm, data, e_workers) : fidelity(ref, *qm, data, e_workers);
            }
            out << "dataset,n,correct,accuracy,fidelity\n";
            out << res.dataset_id << ',' << res.n << ',' << res.correct << ',' << sig6(res.accuracy) << ',';
            if (res.fidelity)
                out << sig6(*res.fidelity);
            out << '\n';
            if (!e_out.empty())
            {
                nlohmann::json doc{{"dataset", res.dataset_id}, {"n", res.n}, {"correct", res.correct}, {"accuracy", sig6(res.accuracy)}};
                doc["fidelity"] = res.fidelity ? nlohmann::json(sig6(*res.fidelity)) : nlohmann::json(nullptr);
                write_file(e_out, doc.dump(1) + "\n");
            }
            return kExitOk;
        }
        if (*localize)
        {
            const Model fmodel = load_model(l_float);
            const QuantizedModel qmodel = load_quantized_model(l_quant);
            const Metric metric = metric_from_string(l_metric);
            const std::size_t layer = l_layer >= 0 ? static_cast<std::size_t>(l_layer) : fmodel.last_dense_layer();
            const Dataset data = load_for_model(l_data, l_format, fmodel.input_shape(), fmodel.num_classes());
            const auto outcomes = classify_tests(fmodel, qmodel, data, l_workers);
            const auto obs = observe_layer(fmodel, qmodel, data, layer, l_workers);
            const auto spectra = accumulate_spectra(build_diff_matrix(obs), outcomes);
            const auto scores = score_neurons(spectra, metric, l_exponent);
            const auto order = rank_neurons(scores);
            std::vector<std::size_t> rank_of(order.size());
            for (std::size_t k = 0; k < order.size(); k++)
                rank_of[order[k]] = k;
            std::ostringstream csv;
            csv << "neuron_index,C_af,C_nf,C_as,C_ns," << to_string(metric) << ",rank\n";
            for (std::size_t n = 0; n < spectra.size(); n++)
                csv << n << ',' << spectra[n].af << ',' << spectra[n].nf << ',' << spectra[n].as << ',' << spectra[n].ns << ',' << sig6(scores[n].value) << ','
                    << rank_of[n] << '\n';
            if (l_out.empty())
                out << csv.str();
            else
                write_file(l_out, csv.str());
            return kExitOk;
        }
        if (*repair_cmd)
            return run_repair(r, out);
        if (*experiment)
        {
            x.patch_mode = patch_mode_from_string(x_patch);
            if (!x_out.empty())
                x.out_dir = x_out;
            if (!x_data.empty())
                x.data_dir = x_data;
            const auto result = run_experiment(x);
            out << experiment_table(result);
            return kExitOk;
        }
    }
    catch (const std::exception &e)
    {
        err << "error: " << e.what() << '\n';
        return kExitRuntimeError;
    }
    return kExitUsage;
}

} // namespace qnnrepair
