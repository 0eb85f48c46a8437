#include "qnnrepair/quantizer.hpp"

#include "json_io.hpp"

#include <algorithm>
#include <cmath>

namespace qnnrepair
{

namespace
{

std::int8_t round_and_clamp(double x)
{
    const double q = std::clamp(std::round(x), static_cast<double>(-kQuantMax), static_cast<double>(kQuantMax));
    return static_cast<std::int8_t>(q);
}

Model build_effective(const std::vector<QuantizedLayer> &qlayers, Shape input_shape, std::size_t num_classes)
{
    std::vector<Layer> layers;
    layers.reserve(qlayers.size());
    for (std::size_t li = 0; li < qlayers.size(); li++)
    {
        const QuantizedLayer &q = qlayers[li];
        Layer l;
        l.kind = q.kind;
        l.stride = q.stride;
        l.pool_size = q.pool_size;
        l.fused_relu = q.fused_relu;
        l.bias = q.bias;
        if (q.weights)
        {
            Tensor w = dequantize(*q.weights);
            if (!q.float_columns.empty())
            {
                if (q.kind != LayerKind::dense || w.shape().size() != 2)
                    throw ShapeError("float columns are only valid on dense layers");
                const std::size_t in_dim = w.shape()[0], out_dim = w.shape()[1];
                for (const auto &[neuron, column] : q.float_columns)
                {
                    if (neuron >= out_dim || column.size() != in_dim)
                        throw ShapeError("float column " + std::to_string(neuron) + " of layer " + std::to_string(li) + " does not fit");
                    for (std::size_t i = 0; i < in_dim; i++)
                        w[i * out_dim + neuron] = column[i];
                }
            }
            l.weights = std::move(w);
        }
        layers.push_back(std::move(l));
    }
    return Model(std::move(layers), std::move(input_shape), num_classes);
}

} // namespace

QuantizedTensor quantize_tensor(const Tensor &values)
{
    if (!values.all_finite())
        throw std::invalid_argument("cannot quantize non-finite values");
    double max_abs = 0.0;
    for (float v : values.values())
        max_abs = std::max(max_abs, std::fabs(static_cast<double>(v)));
    const float scale = max_abs > 0.0 ? static_cast<float>(max_abs / kQuantMax) : 1.0f;
    return quantize_tensor(values, scale, 0);
}

QuantizedTensor quantize_tensor(const Tensor &values, float scale, std::int32_t zero_point)
{
    if (!(scale > 0.0f) || !std::isfinite(scale))
        throw std::invalid_argument("scale must be positive and finite");
    if (!values.all_finite())
        throw std::invalid_argument("cannot quantize non-finite values");
    QuantizedTensor qt;
    qt.shape = values.shape();
    qt.scale = scale;
    qt.zero_point = zero_point;
    qt.data.resize(values.size());
    for (std::size_t i = 0; i < values.size(); i++)
        qt.data[i] = round_and_clamp(static_cast<double>(values[i]) / scale + zero_point);
    return qt;
}

Tensor dequantize(const QuantizedTensor &qt)
{
    std::vector<float> out(qt.size());
    for (std::size_t i = 0; i < qt.size(); i++)
        out[i] = static_cast<float>(qt.real_value(i));
    return Tensor(qt.shape, std::move(out));
}

QuantizedModel::QuantizedModel(std::vector<QuantizedLayer> layers, Shape input_shape, std::size_t num_classes) :
        layers_(std::move(layers)),
        effective_(build_effective(layers_, std::move(input_shape), num_classes))
{
}

void QuantizedModel::rebuild()
{
    effective_ = build_effective(layers_, effective_.input_shape(), effective_.num_classes());
}

std::vector<float> QuantizedModel::neuron_weights(std::size_t layer_index, std::size_t neuron) const
{
    const Layer &l = effective_.layer(layer_index);
    if (l.kind != LayerKind::dense)
        throw std::invalid_argument("layer " + std::to_string(layer_index) + " is not dense");
    const std::size_t in_dim = l.weights->shape()[0], out_dim = l.weights->shape()[1];
    if (neuron >= out_dim)
        throw std::out_of_range("neuron " + std::to_string(neuron) + " out of range");
    std::vector<float> column(in_dim);
    for (std::size_t i = 0; i < in_dim; i++)
        column[i] = (*l.weights)[i * out_dim + neuron];
    return column;
}

void QuantizedModel::set_float_column(std::size_t layer_index, std::size_t neuron, std::vector<float> weights)
{
    QuantizedLayer &q = layers_.at(layer_index);
    if (q.kind != LayerKind::dense)
        throw std::invalid_argument("layer " + std::to_string(layer_index) + " is not dense");
    const std::size_t in_dim = q.weights->shape[0], out_dim = q.weights->shape[1];
    if (neuron >= out_dim)
        throw std::out_of_range("neuron " + std::to_string(neuron) + " out of range");
    if (weights.size() != in_dim)
        throw ShapeError("column length " + std::to_string(weights.size()) + " does not match fan-in " + std::to_string(in_dim));
    q.float_columns[neuron] = std::move(weights);
    rebuild();
}

void QuantizedModel::requantize_layer(std::size_t layer_index, const Tensor &float_weights)
{
    QuantizedLayer &q = layers_.at(layer_index);
    if (!q.weights)
        throw std::invalid_argument("layer " + std::to_string(layer_index) + " has no weights");
    if (float_weights.shape() != q.weights->shape)
        throw ShapeError("requantized weights must keep shape " + shape_to_string(q.weights->shape));
    q.weights = quantize_tensor(float_weights);
    q.float_columns.clear();
    rebuild();
}

QuantizedModel quantize_model(const Model &model)
{
    std::vector<QuantizedLayer> layers;
    for (const Layer &l : model.layers())
    {
        QuantizedLayer q;
        q.kind = l.kind;
        q.bias = l.bias;
        q.stride = l.stride;
        q.pool_size = l.pool_size;
        q.fused_relu = l.fused_relu;
        if (l.weights)
            q.weights = quantize_tensor(*l.weights);
        layers.push_back(std::move(q));
    }
    return QuantizedModel(std::move(layers), model.input_shape(), model.num_classes());
}

Tensor quantized_forward(const QuantizedModel &qmodel, const Tensor &input)
{
    return forward(qmodel.effective_model(), input);
}

std::vector<ActivationRecord> capture_activations_q(const QuantizedModel &qmodel, const Tensor &input, const std::set<std::size_t> &layer_filter)
{
    return capture_activations(qmodel.effective_model(), input, layer_filter);
}

QuantizedModel load_quantized_model(const std::filesystem::path &path)
{
    using detail::FloatJson;
    const FloatJson doc = detail::read_json_file(path);
    const auto base = path.parent_path();
    try
    {
        Shape input_shape = detail::shape_from_json(doc.at("input_shape"));
        const auto num_classes = doc.at("num_classes").get<std::size_t>();
        std::vector<QuantizedLayer> layers;
        for (const auto &node : doc.at("layers"))
        {
            QuantizedLayer q;
            q.kind = layer_kind_from_string(node.at("kind").get<std::string>());
            if (node.contains("weights"))
            {
                const auto &w = node.at("weights");
                QuantizedTensor qt;
                qt.shape = detail::shape_from_json(w.at("shape"));
                qt.scale = w.at("scale").get<float>();
                qt.zero_point = w.value("zero_point", std::int32_t{0});
                if (!(qt.scale > 0.0f) || !std::isfinite(qt.scale))
                    throw ParseError("weight scale must be positive");
                for (const auto &v : w.at("data_i8"))
                {
                    const auto code = v.get<std::int64_t>();
                    if (code < -128 || code > 127)
                        throw ParseError("int8 code out of range: " + std::to_string(code));
                    qt.data.push_back(static_cast<std::int8_t>(code));
                }
                if (qt.data.size() != element_count(qt.shape))
                    throw ShapeError("quantized tensor shape " + shape_to_string(qt.shape) + " does not match " + std::to_string(qt.data.size()) + " codes");
                q.weights = std::move(qt);
            }
            if (node.contains("bias"))
                q.bias = detail::tensor_from_json(node.at("bias"), base);
            if (q.kind == LayerKind::maxpool2d)
            {
                q.pool_size = node.value("pool_size", std::size_t{2});
                q.stride = node.value("stride", q.pool_size);
            }
            else
                q.stride = node.value("stride", std::size_t{1});
            q.fused_relu = node.value("activation", std::string("linear")) == "relu";
            if (node.contains("float_patches"))
                for (const auto &patch : node.at("float_patches"))
                    q.float_columns[patch.at("neuron").get<std::size_t>()] = patch.at("weights").get<std::vector<float>>();
            layers.push_back(std::move(q));
        }
        return QuantizedModel(std::move(layers), std::move(input_shape), num_classes);
    }
    catch (const nlohmann::json::exception &e)
    {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void save_quantized_model(const QuantizedModel &qmodel, const std::filesystem::path &path)
{
    using detail::FloatJson;
    FloatJson doc;
    doc["input_shape"] = qmodel.input_shape();
    doc["num_classes"] = qmodel.num_classes();
    doc["layers"] = FloatJson::array();
    for (const QuantizedLayer &q : qmodel.layers())
    {
        FloatJson node;
        node["kind"] = std::string(to_string(q.kind));
        if (q.kind == LayerKind::conv2d)
            node["stride"] = q.stride;
        if (q.kind == LayerKind::maxpool2d)
        {
            node["pool_size"] = q.pool_size;
            node["stride"] = q.stride;
        }
        if (q.fused_relu)
            node["activation"] = "relu";
        if (q.weights)
        {
            FloatJson w;
            w["shape"] = q.weights->shape;
            w["scale"] = q.weights->scale;
            w["zero_point"] = q.weights->zero_point;
            std::vector<int> codes(q.weights->data.begin(), q.weights->data.end());
            w["data_i8"] = codes;
            node["weights"] = std::move(w);
        }
        if (q.bias)
        {
            node["bias"]["shape"] = q.bias->shape();
            node["bias"]["data"] = q.bias->data();
        }
        if (!q.float_columns.empty())
        {
            node["float_patches"] = FloatJson::array();
            for (const auto &[neuron, column] : q.float_columns)
                node["float_patches"].push_back({{"neuron", neuron}, {"weights", column}});
        }
        doc["layers"].push_back(std::move(node));
    }
    detail::write_json_file(doc, path);
}

} // namespace qnnrepair
