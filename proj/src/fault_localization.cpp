#include "qnnrepair/fault_localization.hpp"

#include "qnnrepair/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace qnnrepair
{

namespace
{

void require_dense(const Model &model, std::size_t layer_index)
{
    if (layer_index >= model.num_layers())
        throw std::out_of_range("layer index " + std::to_string(layer_index) + " out of range");
    if (model.layer(layer_index).kind != LayerKind::dense)
        throw std::invalid_argument("layer " + std::to_string(layer_index) + " is not a dense layer");
}

// a / b with 0/0 -> 0
double ratio(double a, double b)
{
    return b == 0.0 ? 0.0 : a / b;
}

} // namespace

std::vector<TestOutcome> classify_tests(const Model &fmodel, const QuantizedModel &qmodel, const Dataset &repair_set, std::size_t workers)
{
    std::vector<TestOutcome> outcomes(repair_set.size());
    parallel_for(repair_set.size(), workers, [&](std::size_t t) {
        TestOutcome &o = outcomes[t];
        o.input_id = repair_set.ids[t];
        o.float_label = argmax_label(forward(fmodel, repair_set.inputs[t]));
        o.quant_label = argmax_label(quantized_forward(qmodel, repair_set.inputs[t]));
        o.is_failing = o.float_label != o.quant_label;
    });
    return outcomes;
}

std::vector<LayerObservation> observe_layer(const Model &fmodel, const QuantizedModel &qmodel, const Dataset &tests, std::size_t layer_index, std::size_t workers)
{
    require_dense(fmodel, layer_index);
    require_dense(qmodel.effective_model(), layer_index);
    std::vector<LayerObservation> obs(tests.size());
    const std::set<std::size_t> filter{layer_index};
    parallel_for(tests.size(), workers, [&](std::size_t t) {
        const auto frec = capture_activations(fmodel, tests.inputs[t], filter);
        obs[t].float_status = frec.front().status;
        obs[t].quant_input = layer_input(qmodel.effective_model(), tests.inputs[t], layer_index);
        apply_layer(qmodel.effective_model().layer(layer_index), obs[t].quant_input, &obs[t].quant_pre_activation);
        obs[t].quant_status = activation_status(obs[t].quant_pre_activation);
    });
    return obs;
}

DiffMatrix::DiffMatrix(std::size_t rows, std::size_t cols) :
        rows_(rows),
        cols_(cols),
        entries_(rows * cols, 0)
{
}

DiffMatrix build_diff_matrix(const Model &fmodel, const QuantizedModel &qmodel, const Dataset &tests, std::size_t layer_index)
{
    const auto obs = observe_layer(fmodel, qmodel, tests, layer_index);
    if (obs.empty())
        return DiffMatrix(0, fmodel.layer(layer_index).units());
    return build_diff_matrix(obs);
}

DiffMatrix build_diff_matrix(std::span<const LayerObservation> observations)
{
    const std::size_t cols = observations.empty() ? 0 : observations.front().float_status.size();
    DiffMatrix diff(observations.size(), cols);
    for (std::size_t t = 0; t < observations.size(); t++)
    {
        const auto &o = observations[t];
        if (o.float_status.size() != cols || o.quant_status.size() != cols)
            throw ShapeError("status vectors of test " + std::to_string(t) + " do not match the layer width");
        for (std::size_t n = 0; n < cols; n++)
            diff.set(t, n, o.float_status[n] != o.quant_status[n]);
    }
    return diff;
}

SpectraCounters accumulate_spectra(const DiffMatrix &diff, std::span<const TestOutcome> outcomes)
{
    if (diff.rows() != outcomes.size())
        throw std::invalid_argument("diff matrix has " + std::to_string(diff.rows()) + " rows but there are " + std::to_string(outcomes.size()) + " outcomes");
    SpectraCounters spectra(diff.cols());
    std::uint64_t failing = 0;
    for (std::size_t t = 0; t < outcomes.size(); t++)
    {
        const auto row = diff.row(t);
        if (outcomes[t].is_failing)
        {
            failing++;
            for (std::size_t n = 0; n < row.size(); n++)
                spectra[n].af += row[n];
        }
        else
            for (std::size_t n = 0; n < row.size(); n++)
                spectra[n].as += row[n];
    }
    const std::uint64_t passing = outcomes.size() - failing;
    for (auto &c : spectra)
    {
        c.nf = failing - c.af;
        c.ns = passing - c.as;
    }
    return spectra;
}

std::string_view to_string(Metric metric) noexcept
{
    switch (metric)
    {
        case Metric::tarantula:
            return "tarantula";
        case Metric::ochiai:
            return "ochiai";
        case Metric::dstar:
            return "dstar";
        case Metric::jaccard:
            return "jaccard";
        case Metric::ample:
            return "ample";
        case Metric::euclid:
            return "euclid";
        case Metric::wong3:
            return "wong3";
    }
    return "unknown";
}

Metric metric_from_string(std::string_view name)
{
    for (Metric m : kAllMetrics)
        if (to_string(m) == name)
            return m;
    throw std::invalid_argument("unknown metric '" + std::string(name) + "'");
}

double importance(const NeuronSpectrum &c, Metric metric, int dstar_exponent)
{
    const double af = static_cast<double>(c.af);
    const double nf = static_cast<double>(c.nf);
    const double as = static_cast<double>(c.as);
    const double ns = static_cast<double>(c.ns);
    switch (metric)
    {
        case Metric::tarantula:
        {
            const double fail_part = ratio(af, af + nf);
            const double pass_part = ratio(as, as + ns);
            return ratio(fail_part, fail_part + pass_part);
        }
        case Metric::ochiai:
            return ratio(af, std::sqrt((af + as) * (af + nf)));
        case Metric::dstar:
        {
            const double numerator = std::pow(af, dstar_exponent);
            const double denominator = as + nf;
            if (denominator == 0.0)
                return numerator == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
            return numerator / denominator;
        }
        case Metric::jaccard:
            return ratio(af, af + nf + as);
        case Metric::ample:
            return std::fabs(ratio(af, af + nf) - ratio(as, as + ns));
        case Metric::euclid:
            return std::sqrt(af + ns);
        case Metric::wong3:
        {
            double h = 0.0;
            if (as <= 2.0)
                h = as;
            else if (as <= 10.0)
                h = 2.0 + 0.1 * (as - 2.0);
            else
                h = 2.8 + 0.01 * (as - 10.0);
            return af - h;
        }
    }
    throw std::invalid_argument("unknown metric");
}

std::vector<ImportanceScore> score_neurons(const SpectraCounters &spectra, Metric metric, int dstar_exponent)
{
    std::vector<ImportanceScore> scores(spectra.size());
    double max_finite = -std::numeric_limits<double>::infinity();
    bool any_infinite = false;
    for (std::size_t n = 0; n < spectra.size(); n++)
    {
        scores[n] = {n, metric, importance(spectra[n], metric, dstar_exponent)};
        if (std::isinf(scores[n].value))
            any_infinite = true;
        else
            max_finite = std::max(max_finite, scores[n].value);
    }
    if (any_infinite)
    {
        const double sentinel = (std::isfinite(max_finite) ? max_finite : 0.0) + 1.0;
        for (auto &s : scores)
            if (std::isinf(s.value))
                s.value = sentinel;
    }
    return scores;
}

std::vector<std::size_t> rank_neurons(std::span<const ImportanceScore> scores)
{
    for (const auto &s : scores)
        if (s.metric != scores.front().metric)
            throw std::invalid_argument("rank_neurons called with mixed metrics");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a].value != scores[b].value)
            return scores[a].value > scores[b].value;
        return scores[a].neuron < scores[b].neuron;
    });
    std::vector<std::size_t> neurons(order.size());
    for (std::size_t i = 0; i < order.size(); i++)
        neurons[i] = scores[order[i]].neuron;
    return neurons;
}

} // namespace qnnrepair
