#include "qnnrepair/repair.hpp"

#include "qnnrepair/parallel.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace qnnrepair
{

namespace
{

void require_same_topology(const Model &f, const Model &q)
{
    if (f.num_layers() != q.num_layers() || f.input_shape() != q.input_shape() || f.num_classes() != q.num_classes())
        throw ShapeError("float and quantized models differ in topology");
    for (std::size_t i = 0; i < f.num_layers(); i++)
        if (f.layer(i).kind != q.layer(i).kind || f.output_shape(i) != q.output_shape(i))
            throw ShapeError("float and quantized models differ at layer " + std::to_string(i));
}

std::vector<std::size_t> random_order(std::size_t width, std::uint64_t seed)
{
    std::vector<std::size_t> order(width);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the order does not depend on the standard library
    for (std::size_t i = width; i > 1; i--)
    {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

struct PlannedSolve
{
    std::optional<NeuronLP> problem;
    LPSolution solution;
    double seconds = 0.0;
};

PlannedSolve solve_one(std::optional<NeuronLP> problem, const RepairConfig &config)
{
    PlannedSolve out;
    out.problem = std::move(problem);
    if (!out.problem)
        return out;
    const auto start = std::chrono::steady_clock::now();
    out.solution = solve_lp(*out.problem, config.time_budget_seconds);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

void export_problem(const NeuronLP &problem, const RepairConfig &config)
{
    if (!config.lp_dir)
        return;
    std::filesystem::create_directories(*config.lp_dir);
    export_lp(problem, *config.lp_dir / ("layer" + std::to_string(problem.neuron.layer) + "_neuron" + std::to_string(problem.neuron.index) + ".lp"));
}

} // namespace

std::string_view to_string(PatchMode mode) noexcept
{
    return mode == PatchMode::float_patch ? "float_patch" : "requantize";
}

PatchMode patch_mode_from_string(std::string_view name)
{
    if (name == "float_patch" || name == "float")
        return PatchMode::float_patch;
    if (name == "requantize")
        return PatchMode::requantize;
    throw std::invalid_argument("unknown patch mode '" + std::string(name) + "'");
}

std::string_view to_string(NeuronOutcome outcome) noexcept
{
    switch (outcome)
    {
        case NeuronOutcome::solved:
            return "solved";
        case NeuronOutcome::infeasible:
            return "infeasible";
        case NeuronOutcome::timeout:
            return "timeout";
        case NeuronOutcome::skipped:
            return "skipped";
    }
    return "unknown";
}

std::string RepairConfig::selection_name() const
{
    return metric ? std::string(to_string(*metric)) : std::string("random");
}

void RepairConfig::validate() const
{
    if (max_neurons < 1)
        throw std::invalid_argument("the number of neurons to repair must be at least 1");
    if (!(epsilon >= 0.0))
        throw std::invalid_argument("epsilon must be non-negative");
    if (max_constraints < 1)
        throw std::invalid_argument("max_constraints must be at least 1");
}

double sig6(double value)
{
    if (!std::isfinite(value) || value == 0.0)
        return value == 0.0 ? 0.0 : value;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", value);
    return std::strtod(buf, nullptr);
}

void apply_deltas(QuantizedModel &qmodel, NeuronId neuron, std::span<const double> deltas, PatchMode mode)
{
    auto column = qmodel.neuron_weights(neuron.layer, neuron.index);
    if (deltas.size() != column.size())
        throw ShapeError("got " + std::to_string(deltas.size()) + " deltas for a fan-in of " + std::to_string(column.size()));
    for (std::size_t i = 0; i < column.size(); i++)
        column[i] = static_cast<float>(static_cast<double>(column[i]) + deltas[i]);

    if (mode == PatchMode::float_patch)
    {
        qmodel.set_float_column(neuron.layer, neuron.index, std::move(column));
        return;
    }
    Tensor weights = *qmodel.effective_model().layer(neuron.layer).weights;
    const std::size_t out_dim = weights.shape()[1];
    for (std::size_t i = 0; i < column.size(); i++)
        weights[i * out_dim + neuron.index] = column[i];
    qmodel.requantize_layer(neuron.layer, weights);
}

RepairResult repair(const Model &fmodel, const QuantizedModel &qmodel, const Dataset &repair_set, const Dataset &validation_set,
                    const RepairConfig &config)
{
    config.validate();
    require_same_topology(fmodel, qmodel.effective_model());
    const std::size_t layer = config.target_layer.value_or(fmodel.last_dense_layer());
    if (layer >= fmodel.num_layers())
        throw std::out_of_range("target layer " + std::to_string(layer) + " out of range");
    if (fmodel.layer(layer).kind != LayerKind::dense)
        throw std::invalid_argument("target layer " + std::to_string(layer) + " is not a dense layer");

    RepairResult result{qmodel, {}};
    RepairReport &report = result.report;
    report.target_layer = layer;
    report.selection = config.selection_name();
    report.patch_mode = config.patch_mode;
    report.epsilon = config.epsilon;
    report.max_neurons = config.max_neurons;
    report.max_constraints = config.max_constraints;
    report.recompute_inputs = config.recompute_inputs;
    report.repair_set_size = repair_set.size();

    const auto outcomes = classify_tests(fmodel, qmodel, repair_set, config.workers);
    report.failing_tests = static_cast<std::size_t>(std::count_if(outcomes.begin(), outcomes.end(), [](const TestOutcome &o) { return o.is_failing; }));
    report.passing_tests = outcomes.size() - report.failing_tests;

    auto evaluate = [&](const QuantizedModel &m) { return evaluate_against(m, fmodel, validation_set, "validation", config.workers); };
    report.float_accuracy = accuracy(fmodel, validation_set, "validation", config.workers).accuracy;
    report.before = evaluate(qmodel);

    if (report.failing_tests == 0)
    {
        report.warnings.push_back("no failing tests in the repair set; nothing to repair");
        spdlog::warn("no failing tests in the repair set; model returned unchanged");
        report.after = report.before;
        return result;
    }

    auto observations = observe_layer(fmodel, qmodel, repair_set, layer, config.workers);
    const std::size_t width = fmodel.layer(layer).units();

    std::vector<std::size_t> order;
    std::vector<std::optional<double>> importance_of(width);
    if (config.metric)
    {
        const auto spectra = accumulate_spectra(build_diff_matrix(observations), outcomes);
        const auto scores = score_neurons(spectra, *config.metric, config.dstar_exponent);
        for (const auto &s : scores)
            importance_of[s.neuron] = s.value;
        order = rank_neurons(scores);
    }
    else
        order = random_order(width, config.seed);
    order.resize(std::min(config.max_neurons, width));
    spdlog::info("repairing {} neuron(s) of layer {} selected by {}", order.size(), layer, report.selection);

    const bool sequential = config.recompute_inputs || config.patch_mode == PatchMode::requantize || config.accuracy_threshold.has_value();
    std::vector<PlannedSolve> planned(order.size());
    if (!sequential)
    {
        parallel_for(order.size(), config.workers, [&](std::size_t k) {
            auto problem = build_neuron_lp(qmodel, {layer, order[k]}, observations, outcomes, config.epsilon, config.max_constraints);
            planned[k] = solve_one(std::move(problem), config);
        });
    }

    for (std::size_t k = 0; k < order.size(); k++)
    {
        const NeuronId id{layer, order[k]};
        if (sequential)
        {
            if (config.recompute_inputs && k > 0)
                observations = observe_layer(fmodel, result.model, repair_set, layer, config.workers);
            const QuantizedModel &source = config.recompute_inputs ? result.model : qmodel;
            planned[k] = solve_one(build_neuron_lp(source, id, observations, outcomes, config.epsilon, config.max_constraints), config);
        }
        const PlannedSolve &ps = planned[k];

        NeuronRecord rec;
        rec.neuron = id.index;
        rec.rank = k;
        rec.importance = importance_of[id.index];
        rec.seconds = ps.seconds;
        if (!ps.problem)
            rec.outcome = NeuronOutcome::skipped;
        else
        {
            export_problem(*ps.problem, config);
            rec.constraints = ps.problem->constraints.size();
            for (const auto &c : ps.problem->constraints)
                rec.constraint_tests.push_back(c.test_id);
            rec.pivots = ps.solution.pivots;
            switch (ps.solution.status)
            {
                case LPStatus::optimal:
                    rec.outcome = NeuronOutcome::solved;
                    rec.M = ps.solution.M;
                    apply_deltas(result.model, id, ps.solution.deltas, config.patch_mode);
                    break;
                case LPStatus::infeasible:
                    rec.outcome = NeuronOutcome::infeasible;
                    break;
                case LPStatus::timeout:
                    rec.outcome = NeuronOutcome::timeout;
                    break;
            }
        }
        spdlog::debug("neuron {} (rank {}): {} with {} constraints", rec.neuron, rec.rank, to_string(rec.outcome), rec.constraints);
        report.records.push_back(std::move(rec));

        if (config.accuracy_threshold && report.records.back().outcome == NeuronOutcome::solved)
        {
            const double acc = accuracy(result.model, validation_set, "validation", config.workers).accuracy;
            if (acc > *config.accuracy_threshold)
            {
                report.early_stopped = true;
                break;
            }
        }
    }

    // Constraint fidelity: re-capture each solved neuron's constraint tests on the final model.
    std::unordered_map<std::size_t, std::size_t> row_of;
    for (std::size_t r = 0; r < repair_set.size(); r++)
        row_of.emplace(repair_set.ids[r], r);
    const std::set<std::size_t> filter{layer};
    for (std::size_t k = 0; k < report.records.size(); k++)
    {
        NeuronRecord &rec = report.records[k];
        switch (rec.outcome)
        {
            case NeuronOutcome::solved:
                report.solved++;
                break;
            case NeuronOutcome::infeasible:
                report.infeasible++;
                break;
            case NeuronOutcome::timeout:
                report.timeout++;
                break;
            case NeuronOutcome::skipped:
                report.skipped++;
                break;
        }
        if (rec.outcome != NeuronOutcome::solved)
            continue;
        std::size_t matched = 0;
        for (std::size_t test_id : rec.constraint_tests)
        {
            const auto &input = repair_set.inputs[row_of.at(test_id)];
            const auto f = capture_activations(fmodel, input, filter).front().status[rec.neuron];
            const auto q = capture_activations_q(result.model, input, filter).front().status[rec.neuron];
            matched += f == q ? 1 : 0;
        }
        rec.constraint_fidelity = static_cast<double>(matched) / static_cast<double>(rec.constraint_tests.size());
        if (config.patch_mode == PatchMode::requantize && matched < rec.constraint_tests.size())
            report.warnings.push_back("neuron " + std::to_string(rec.neuron) + ": requantization lost " + std::to_string(rec.constraint_tests.size() - matched) +
                                      " of " + std::to_string(rec.constraint_tests.size()) + " solved constraints");
    }

    report.after = evaluate(result.model);
    if (report.solved == 0)
        report.warnings.push_back("no neuron was solved");
    return result;
}

nlohmann::json report_to_json(const RepairReport &report, bool include_timings)
{
    using nlohmann::json;
    json doc;
    doc["target_layer"] = report.target_layer;
    doc["selection"] = report.selection;
    doc["patch_mode"] = std::string(to_string(report.patch_mode));
    doc["epsilon"] = sig6(report.epsilon);
    doc["max_neurons"] = report.max_neurons;
    doc["max_constraints"] = report.max_constraints;
    doc["recompute_inputs"] = report.recompute_inputs;
    doc["repair_set"] = {{"size", report.repair_set_size}, {"failing", report.failing_tests}, {"passing", report.passing_tests}};
    doc["neurons"] = json::array();
    for (const auto &r : report.records)
    {
        json node;
        node["neuron"] = r.neuron;
        node["rank"] = r.rank;
        node["importance"] = r.importance ? json(sig6(*r.importance)) : json(nullptr);
        node["status"] = std::string(to_string(r.outcome));
        node["M"] = sig6(r.M);
        node["constraints"] = r.constraints;
        node["pivots"] = r.pivots;
        node["constraint_fidelity"] = r.constraint_fidelity ? json(sig6(*r.constraint_fidelity)) : json(nullptr);
        if (include_timings)
            node["seconds"] = sig6(r.seconds);
        doc["neurons"].push_back(std::move(node));
    }
    doc["counts"] = {{"attempted", report.attempted()},
                     {"solved", report.solved},
                     {"infeasible", report.infeasible},
                     {"timeout", report.timeout},
                     {"skipped", report.skipped}};
    doc["early_stopped"] = report.early_stopped;
    doc["validation"] = {{"n", report.before.n},
                         {"float_accuracy", sig6(report.float_accuracy)},
                         {"accuracy_before", sig6(report.before.accuracy)},
                         {"accuracy_after", sig6(report.after.accuracy)},
                         {"fidelity_before", sig6(report.before.fidelity.value_or(0.0))},
                         {"fidelity_after", sig6(report.after.fidelity.value_or(0.0))}};
    doc["warnings"] = report.warnings;
    return doc;
}

std::string report_table(const RepairReport &report)
{
    std::ostringstream out;
    char line[160];
    out << "layer " << report.target_layer << ", selection " << report.selection << ", " << to_string(report.patch_mode) << '\n';
    out << "repair set " << report.repair_set_size << " (" << report.failing_tests << " failing, " << report.passing_tests << " passing)\n";
    std::snprintf(line, sizeof(line), "%6s %6s %12s %11s %12s %6s %9s\n", "rank", "neuron", "importance", "status", "M", "cons", "time[s]");
    out << line;
    for (const auto &r : report.records)
    {
        std::snprintf(line, sizeof(line), "%6zu %6zu %12.6g %11s %12.6g %6zu %9.3f\n", r.rank, r.neuron, r.importance.value_or(std::nan("")),
                      std::string(to_string(r.outcome)).c_str(), r.M, r.constraints, r.seconds);
        out << line;
    }
    std::snprintf(line, sizeof(line), "attempted %zu: solved %zu, infeasible %zu, timeout %zu, skipped %zu%s\n", report.attempted(), report.solved,
                  report.infeasible, report.timeout, report.skipped, report.early_stopped ? " (early stop)" : "");
    out << line;
    std::snprintf(line, sizeof(line), "validation accuracy: float %.4f, quantized %.4f, repaired %.4f\n", report.float_accuracy, report.before.accuracy,
                  report.after.accuracy);
    out << line;
    std::snprintf(line, sizeof(line), "fidelity to float:   quantized %.4f, repaired %.4f\n", report.before.fidelity.value_or(0.0),
                  report.after.fidelity.value_or(0.0));
    out << line;
    for (const auto &w : report.warnings)
        out << "warning: " << w << '\n';
    return out.str();
}

} // namespace qnnrepair
