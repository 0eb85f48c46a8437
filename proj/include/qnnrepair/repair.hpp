#ifndef QNNREPAIR_REPAIR_HPP_
#define QNNREPAIR_REPAIR_HPP_

#include "qnnrepair/dataset.hpp"
#include "qnnrepair/evaluation.hpp"
#include "qnnrepair/fault_localization.hpp"
#include "qnnrepair/neuron_lp.hpp"
#include "qnnrepair/quantizer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qnnrepair
{

enum class PatchMode
{
    /// corrected weights stay at full precision (mixed-precision layer)
    float_patch,
    /// corrected weights are re-quantized with a fresh per-tensor scale
    requantize
};

std::string_view to_string(PatchMode mode) noexcept;
PatchMode patch_mode_from_string(std::string_view name);

struct RepairConfig
{
    /// Defaults to the last dense layer.
    std::optional<std::size_t> target_layer;
    /// nullopt selects neurons uniformly at random (seeded) instead of by suspiciousness.
    std::optional<Metric> metric = Metric::tarantula;
    std::uint64_t seed = 0;
    std::size_t max_neurons = 1;
    double epsilon = kDefaultEpsilon;
    double time_budget_seconds = 60.0;
    PatchMode patch_mode = PatchMode::float_patch;
    std::optional<double> accuracy_threshold;
    std::size_t max_constraints = kDefaultMaxConstraints;
    bool recompute_inputs = false;
    int dstar_exponent = 2;
    std::size_t workers = 1;
    /// When set, every generated neuron LP is exported there.
    std::optional<std::filesystem::path> lp_dir;

    std::string selection_name() const;
    void validate() const;
};

enum class NeuronOutcome
{
    solved,
    infeasible,
    timeout,
    /// no test disagrees on the neuron, nothing to solve
    skipped
};

std::string_view to_string(NeuronOutcome outcome) noexcept;

struct NeuronRecord
{
    std::size_t neuron = 0;
    std::size_t rank = 0;
    std::optional<double> importance;
    NeuronOutcome outcome = NeuronOutcome::skipped;
    double M = 0.0;
    std::size_t constraints = 0;
    std::size_t pivots = 0;
    double seconds = 0.0;
    /// Share of the neuron's constraint tests whose status matches the float model after repair.
    std::optional<double> constraint_fidelity;
    /// Test ids the neuron's LP constrained.
    std::vector<std::size_t> constraint_tests;
};

struct RepairReport
{
    std::size_t target_layer = 0;
    std::string selection;
    PatchMode patch_mode = PatchMode::float_patch;
    double epsilon = 0.0;
    std::size_t max_neurons = 0;
    std::size_t max_constraints = 0;
    bool recompute_inputs = false;

    std::size_t repair_set_size = 0;
    std::size_t failing_tests = 0;
    std::size_t passing_tests = 0;

    std::vector<NeuronRecord> records;
    std::size_t solved = 0;
    std::size_t infeasible = 0;
    std::size_t timeout = 0;
    std::size_t skipped = 0;
    bool early_stopped = false;

    double float_accuracy = 0.0;
    EvalResult before;
    EvalResult after;
    std::vector<std::string> warnings;

    std::size_t attempted() const noexcept { return records.size(); }
};

struct RepairResult
{
    QuantizedModel model;
    RepairReport report;
};

/// Adds deltas to one dense neuron's incoming weights.
void apply_deltas(QuantizedModel &qmodel, NeuronId neuron, std::span<const double> deltas, PatchMode mode);

/*
 * Localize-and-correct: classify the repair set, build spectra on the target layer, rank neurons
 * by the configured metric, then solve and patch the top-N neurons in rank order. LPs are built
 * from the pre-repair quantized activations unless recompute_inputs is set. Accuracy and fidelity
 * are measured on the validation set only.
 */
RepairResult repair(const Model &fmodel, const QuantizedModel &qmodel, const Dataset &repair_set, const Dataset &validation_set,
                    const RepairConfig &config);

/// Floats rounded to 6 significant digits; wall times only when include_timings is set.
nlohmann::json report_to_json(const RepairReport &report, bool include_timings = false);
std::string report_table(const RepairReport &report);

/// Rounds to 6 significant digits so JSON output is stable.
double sig6(double value);

} // namespace qnnrepair

#endif // QNNREPAIR_REPAIR_HPP_
