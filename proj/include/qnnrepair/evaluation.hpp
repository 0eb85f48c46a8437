#ifndef QNNREPAIR_EVALUATION_HPP_
#define QNNREPAIR_EVALUATION_HPP_

#include "qnnrepair/dataset.hpp"
#include "qnnrepair/model.hpp"
#include "qnnrepair/parallel.hpp"
#include "qnnrepair/quantizer.hpp"

#include <concepts>
#include <optional>
#include <stdexcept>
#include <string>

namespace qnnrepair
{

inline Tensor infer(const Model &model, const Tensor &input)
{
    return forward(model, input);
}

inline Tensor infer(const QuantizedModel &model, const Tensor &input)
{
    return quantized_forward(model, input);
}

template <class Net>
concept Classifier = requires(const Net &net, const Tensor &x) {
    { infer(net, x) } -> std::same_as<Tensor>;
};

struct EvalResult
{
    std::string dataset_id;
    std::size_t n = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    std::optional<double> fidelity;
};

template <Classifier Net>
std::vector<std::size_t> predict_labels(const Net &net, const Dataset &dataset, std::size_t workers = 1)
{
    std::vector<std::size_t> labels(dataset.size());
    parallel_for(dataset.size(), workers, [&](std::size_t i) { labels[i] = argmax_label(infer(net, dataset.inputs[i])); });
    return labels;
}

template <Classifier Net>
EvalResult accuracy(const Net &net, const Dataset &dataset, std::string dataset_id = {}, std::size_t workers = 1)
{
    if (dataset.empty())
        throw std::invalid_argument("accuracy of an empty dataset");
    const auto predicted = predict_labels(net, dataset, workers);
    EvalResult r;
    r.dataset_id = std::move(dataset_id);
    r.n = dataset.size();
    for (std::size_t i = 0; i < r.n; i++)
        r.correct += predicted[i] == dataset.labels[i] ? 1 : 0;
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.n);
    return r;
}

/// Fraction of inputs on which both networks predict the same label. Labels are not used.
template <Classifier A, Classifier B>
double fidelity(const A &first, const B &second, const Dataset &dataset, std::size_t workers = 1)
{
    if (dataset.empty())
        throw std::invalid_argument("fidelity of an empty dataset");
    const auto a = predict_labels(first, dataset, workers);
    const auto b = predict_labels(second, dataset, workers);
    std::size_t disagreements = 0;
    for (std::size_t i = 0; i < a.size(); i++)
        disagreements += a[i] != b[i] ? 1 : 0;
    return static_cast<double>(a.size() - disagreements) / static_cast<double>(a.size());
}

/// Accuracy of `net` with its fidelity to `reference` filled in.
template <Classifier Net, Classifier Ref>
EvalResult evaluate_against(const Net &net, const Ref &reference, const Dataset &dataset, std::string dataset_id = {}, std::size_t workers = 1)
{
    EvalResult r = accuracy(net, dataset, std::move(dataset_id), workers);
    r.fidelity = fidelity(reference, net, dataset, workers);
    return r;
}

} // namespace qnnrepair

#endif // QNNREPAIR_EVALUATION_HPP_
