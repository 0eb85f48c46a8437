#ifndef QNNREPAIR_EXPERIMENT_HPP_
#define QNNREPAIR_EXPERIMENT_HPP_

#include "qnnrepair/dataset.hpp"
#include "qnnrepair/model.hpp"
#include "qnnrepair/quantizer.hpp"
#include "qnnrepair/repair.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace qnnrepair
{

/// Isotropic Gaussian clusters; class c is centred on a random point, rows are interleaved by class.
Dataset make_blobs(std::size_t rows, std::size_t dims, std::size_t classes, double center_spread, double cluster_std, std::uint64_t seed);

struct TrainOptions
{
    std::size_t hidden = 32;
    std::size_t epochs = 20;
    double learning_rate = 0.01;
    std::uint64_t seed = 0;
};

/// dense -> relu -> dense classifier trained with plain per-sample SGD on softmax cross-entropy.
Model train_mlp(const Dataset &train, const TrainOptions &options);

struct Misquantization
{
    std::size_t layer = 0;
    /// The layer's scale is multiplied by 2^coarsen_bits before rounding.
    int coarsen_bits = 0;
};

/// Re-quantizes one layer with a coarser scale (fewer effective bits) to widen the float/quantized gap.
QuantizedModel coarsen_layer(const QuantizedModel &qmodel, const Model &fmodel, std::size_t layer, int coarsen_bits);

struct ExperimentOptions
{
    std::string preset = "mlp-blobs";
    std::uint64_t seed = 42;
    std::size_t top_n = 8;
    std::size_t trials = 10;
    double epsilon = kDefaultEpsilon;
    double time_budget_seconds = 60.0;
    std::size_t max_constraints = kDefaultMaxConstraints;
    PatchMode patch_mode = PatchMode::float_patch;
    std::size_t workers = 1;
    /// Where mnist-mini looks for its IDX files.
    std::optional<std::filesystem::path> data_dir;
    std::optional<std::filesystem::path> out_dir;
};

struct SelectionResult
{
    std::string selection;
    double accuracy = 0.0;
    double fidelity = 0.0;
    std::size_t solved = 0;
    std::size_t attempted = 0;
    /// Random selection: number of averaged trials.
    std::size_t trials = 1;
};

struct ExperimentRow
{
    std::size_t repair_images = 0;
    std::size_t failing_tests = 0;
    std::vector<SelectionResult> results;
};

struct ExperimentResult
{
    std::string preset;
    std::uint64_t seed = 0;
    std::size_t target_layer = 0;
    std::size_t top_n = 0;
    Misquantization misquantization;
    double float_accuracy = 0.0;
    double int8_accuracy = 0.0;
    double quantized_accuracy = 0.0;
    double quantized_fidelity = 0.0;
    std::vector<ExperimentRow> rows;
    std::string best_selection;
    double best_accuracy = 0.0;
    /// Reports of the metric runs on the full repair set.
    std::vector<RepairReport> reports;
};

ExperimentResult run_experiment(const ExperimentOptions &options);

nlohmann::json experiment_to_json(const ExperimentResult &result);
std::string experiment_table(const ExperimentResult &result);

} // namespace qnnrepair

#endif // QNNREPAIR_EXPERIMENT_HPP_
