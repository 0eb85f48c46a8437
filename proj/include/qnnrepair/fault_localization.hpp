#ifndef QNNREPAIR_FAULT_LOCALIZATION_HPP_
#define QNNREPAIR_FAULT_LOCALIZATION_HPP_

#include "qnnrepair/dataset.hpp"
#include "qnnrepair/model.hpp"
#include "qnnrepair/quantizer.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace qnnrepair
{

struct TestOutcome
{
    std::size_t input_id = 0;
    std::size_t float_label = 0;
    std::size_t quant_label = 0;
    bool is_failing = false;
};

/// A test fails when the float and quantized models predict different labels.
std::vector<TestOutcome> classify_tests(const Model &fmodel, const QuantizedModel &qmodel, const Dataset &repair_set, std::size_t workers = 1);

/// What one test shows at one dense layer of both models.
struct LayerObservation
{
    std::vector<std::uint8_t> float_status;
    std::vector<std::uint8_t> quant_status;
    /// Input to the layer inside the quantized model.
    Tensor quant_input;
    Tensor quant_pre_activation;
};

std::vector<LayerObservation> observe_layer(const Model &fmodel, const QuantizedModel &qmodel, const Dataset &tests, std::size_t layer_index, std::size_t workers = 1);

/// rows = tests, cols = neurons; entry 1 iff the float and quantized activation statuses differ.
class DiffMatrix
{
    public:
        DiffMatrix(std::size_t rows, std::size_t cols);

        std::size_t rows() const noexcept { return rows_; }
        std::size_t cols() const noexcept { return cols_; }
        std::uint8_t at(std::size_t test, std::size_t neuron) const { return entries_.at(test * cols_ + neuron); }
        void set(std::size_t test, std::size_t neuron, bool differs) { entries_.at(test * cols_ + neuron) = differs ? 1 : 0; }
        std::span<const std::uint8_t> row(std::size_t test) const { return std::span(entries_).subspan(test * cols_, cols_); }

    private:
        std::size_t rows_;
        std::size_t cols_;
        std::vector<std::uint8_t> entries_;
};

DiffMatrix build_diff_matrix(const Model &fmodel, const QuantizedModel &qmodel, const Dataset &tests, std::size_t layer_index);
DiffMatrix build_diff_matrix(std::span<const LayerObservation> observations);

/*
 * Per-neuron spectrum. "Activated" means the float and quantized statuses differ on the test:
 * af/as count failing/passing tests with a difference, nf/ns the remaining failing/passing tests.
 */
struct NeuronSpectrum
{
    std::uint64_t af = 0;
    std::uint64_t nf = 0;
    std::uint64_t as = 0;
    std::uint64_t ns = 0;

    friend bool operator==(const NeuronSpectrum &, const NeuronSpectrum &) = default;
};

using SpectraCounters = std::vector<NeuronSpectrum>;

SpectraCounters accumulate_spectra(const DiffMatrix &diff, std::span<const TestOutcome> outcomes);

enum class Metric
{
    tarantula,
    ochiai,
    dstar,
    jaccard,
    ample,
    euclid,
    wong3
};

inline constexpr std::array<Metric, 7> kAllMetrics = {Metric::tarantula, Metric::ochiai, Metric::dstar, Metric::jaccard, Metric::ample, Metric::euclid, Metric::wong3};

std::string_view to_string(Metric metric) noexcept;
/// Throws std::invalid_argument for an unknown name.
Metric metric_from_string(std::string_view name);

/// Suspiciousness of one neuron. A 0/0 term evaluates to 0. DStar with a zero denominator and a
/// non-zero numerator returns +infinity; score_neurons maps that to a finite sentinel.
double importance(const NeuronSpectrum &c, Metric metric, int dstar_exponent = 2);

struct ImportanceScore
{
    std::size_t neuron = 0;
    Metric metric = Metric::tarantula;
    double value = 0.0;
};

/// Scores every neuron; infinite DStar scores become (largest finite score + 1).
std::vector<ImportanceScore> score_neurons(const SpectraCounters &spectra, Metric metric, int dstar_exponent = 2);

/// Descending by value, ties by ascending neuron index. All scores must share one metric.
std::vector<std::size_t> rank_neurons(std::span<const ImportanceScore> scores);

} // namespace qnnrepair

#endif // QNNREPAIR_FAULT_LOCALIZATION_HPP_
