#include "qnnrepair/model.hpp"

#include "json_io.hpp"

#include <algorithm>
#include <limits>

namespace qnnrepair
{

namespace
{

void require(bool condition, const std::string &message)
{
    if (!condition)
        throw ShapeError(message);
}

Shape infer_output_shape(const Layer &layer, const Shape &in, std::size_t index)
{
    const std::string where = "layer " + std::to_string(index) + " (" + std::string(to_string(layer.kind)) + "): ";
    switch (layer.kind)
    {
        case LayerKind::dense:
        {
            require(layer.weights && layer.bias, where + "missing weights or bias");
            const Shape &w = layer.weights->shape();
            require(w.size() == 2, where + "weights must be [in_dim, out_dim]");
            require(layer.bias->shape() == Shape{w[1]}, where + "bias must be [out_dim]");
            require(in.size() == 1, where + "expects a flat input, got " + shape_to_string(in));
            require(in[0] == w[0], where + "expects in_dim " + std::to_string(w[0]) + ", got " + std::to_string(in[0]));
            return {w[1]};
        }
        case LayerKind::conv2d:
        {
            require(layer.weights && layer.bias, where + "missing weights or bias");
            const Shape &w = layer.weights->shape();
            require(w.size() == 4, where + "weights must be [kh, kw, in_ch, out_ch]");
            require(layer.bias->shape() == Shape{w[3]}, where + "bias must be [out_ch]");
            require(layer.stride > 0, where + "stride must be positive");
            require(in.size() == 3, where + "expects an HWC input, got " + shape_to_string(in));
            require(in[2] == w[2], where + "channel mismatch");
            require(in[0] >= w[0] && in[1] >= w[1], where + "kernel larger than input");
            return {(in[0] - w[0]) / layer.stride + 1, (in[1] - w[1]) / layer.stride + 1, w[3]};
        }
        case LayerKind::maxpool2d:
        {
            require(in.size() == 3, where + "expects an HWC input, got " + shape_to_string(in));
            require(layer.pool_size > 0 && layer.stride > 0, where + "pool size and stride must be positive");
            require(in[0] >= layer.pool_size && in[1] >= layer.pool_size, where + "window larger than input");
            return {(in[0] - layer.pool_size) / layer.stride + 1, (in[1] - layer.pool_size) / layer.stride + 1, in[2]};
        }
        case LayerKind::flatten:
            return {element_count(in)};
        case LayerKind::relu:
            return in;
    }
    throw ShapeError(where + "unknown layer kind");
}

Tensor dense_affine(const Layer &layer, const Tensor &input)
{
    const Tensor &w = *layer.weights;
    const Tensor &b = *layer.bias;
    const std::size_t in_dim = w.shape()[0];
    const std::size_t out_dim = w.shape()[1];
    require(input.size() == in_dim, "dense input size mismatch");
    Tensor out({out_dim});
    for (std::size_t j = 0; j < out_dim; j++)
    {
        double acc = b[j];
        for (std::size_t i = 0; i < in_dim; i++)
            acc += static_cast<double>(w[i * out_dim + j]) * input[i];
        out[j] = static_cast<float>(acc);
    }
    return out;
}

Tensor conv2d_affine(const Layer &layer, const Tensor &input)
{
    const Tensor &w = *layer.weights;
    const Tensor &b = *layer.bias;
    const std::size_t kh = w.shape()[0], kw = w.shape()[1], cin = w.shape()[2], cout = w.shape()[3];
    const std::size_t h = input.shape()[0], wd = input.shape()[1];
    const std::size_t s = layer.stride;
    const std::size_t oh = (h - kh) / s + 1, ow = (wd - kw) / s + 1;
    Tensor out({oh, ow, cout});
    for (std::size_t y = 0; y < oh; y++)
        for (std::size_t x = 0; x < ow; x++)
            for (std::size_t co = 0; co < cout; co++)
            {
                double acc = b[co];
                for (std::size_t dy = 0; dy < kh; dy++)
                    for (std::size_t dx = 0; dx < kw; dx++)
                    {
                        const std::size_t in_base = ((y * s + dy) * wd + (x * s + dx)) * cin;
                        const std::size_t w_base = (dy * kw + dx) * cin * cout;
                        for (std::size_t ci = 0; ci < cin; ci++)
                            acc += static_cast<double>(w[w_base + ci * cout + co]) * input[in_base + ci];
                    }
                out[(y * ow + x) * cout + co] = static_cast<float>(acc);
            }
    return out;
}

Tensor maxpool(const Layer &layer, const Tensor &input)
{
    const std::size_t h = input.shape()[0], wd = input.shape()[1], c = input.shape()[2];
    const std::size_t p = layer.pool_size, s = layer.stride;
    const std::size_t oh = (h - p) / s + 1, ow = (wd - p) / s + 1;
    Tensor out({oh, ow, c});
    for (std::size_t y = 0; y < oh; y++)
        for (std::size_t x = 0; x < ow; x++)
            for (std::size_t ch = 0; ch < c; ch++)
            {
                float best = -std::numeric_limits<float>::infinity();
                for (std::size_t dy = 0; dy < p; dy++)
                    for (std::size_t dx = 0; dx < p; dx++)
                        best = std::max(best, input[((y * s + dy) * wd + (x * s + dx)) * c + ch]);
                out[(y * ow + x) * c + ch] = best;
            }
    return out;
}

void relu_inplace(Tensor &t)
{
    for (float &v : t.values())
        v = v > 0.0f ? v : 0.0f;
}

} // namespace

std::string_view to_string(LayerKind kind) noexcept
{
    switch (kind)
    {
        case LayerKind::dense:
            return "dense";
        case LayerKind::relu:
            return "relu";
        case LayerKind::conv2d:
            return "conv2d";
        case LayerKind::maxpool2d:
            return "maxpool2d";
        case LayerKind::flatten:
            return "flatten";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name)
{
    for (auto kind : {LayerKind::dense, LayerKind::relu, LayerKind::conv2d, LayerKind::maxpool2d, LayerKind::flatten})
        if (to_string(kind) == name)
            return kind;
    throw ParseError("unknown layer kind '" + std::string(name) + "'");
}

std::size_t Layer::units() const
{
    if (!is_affine() || !weights)
        throw std::invalid_argument("units() needs a dense or conv2d layer");
    return weights->shape().back();
}

std::size_t Layer::fan_in() const
{
    if (kind != LayerKind::dense || !weights)
        throw std::invalid_argument("fan_in() needs a dense layer");
    return weights->shape()[0];
}

Layer Layer::dense(Tensor weights, Tensor bias, bool fused_relu)
{
    Layer l;
    l.kind = LayerKind::dense;
    l.weights = std::move(weights);
    l.bias = std::move(bias);
    l.fused_relu = fused_relu;
    return l;
}

Layer Layer::conv2d(Tensor weights, Tensor bias, std::size_t stride, bool fused_relu)
{
    Layer l;
    l.kind = LayerKind::conv2d;
    l.weights = std::move(weights);
    l.bias = std::move(bias);
    l.stride = stride;
    l.fused_relu = fused_relu;
    return l;
}

Layer Layer::maxpool2d(std::size_t pool_size, std::size_t stride)
{
    Layer l;
    l.kind = LayerKind::maxpool2d;
    l.pool_size = pool_size;
    l.stride = stride;
    return l;
}

Layer Layer::relu()
{
    return Layer{};
}

Layer Layer::flatten()
{
    Layer l;
    l.kind = LayerKind::flatten;
    return l;
}

Model::Model(std::vector<Layer> layers, Shape input_shape, std::size_t num_classes) :
        layers_(std::move(layers)),
        input_shape_(std::move(input_shape)),
        num_classes_(num_classes)
{
    require(!layers_.empty(), "model has no layers");
    require(num_classes_ > 0, "num_classes must be positive");
    Shape current = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); i++)
    {
        const Layer &l = layers_[i];
        if (l.weights && !l.weights->all_finite())
            throw ShapeError("layer " + std::to_string(i) + " has non-finite weights");
        if (l.bias && !l.bias->all_finite())
            throw ShapeError("layer " + std::to_string(i) + " has non-finite bias");
        current = infer_output_shape(l, current, i);
        output_shapes_.push_back(current);
    }
    require(layers_.back().kind == LayerKind::dense && !layers_.back().fused_relu, "final layer must be a dense layer without activation");
    require(current == Shape{num_classes_}, "final layer width " + shape_to_string(current) + " does not match num_classes " + std::to_string(num_classes_));
}

const Shape &Model::layer_input_shape(std::size_t index) const
{
    if (index >= layers_.size())
        throw std::out_of_range("layer index " + std::to_string(index) + " out of range");
    return index == 0 ? input_shape_ : output_shapes_[index - 1];
}

std::vector<std::size_t> Model::dense_layer_indices() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers_.size(); i++)
        if (layers_[i].kind == LayerKind::dense)
            out.push_back(i);
    return out;
}

std::size_t Model::last_dense_layer() const
{
    return dense_layer_indices().back();
}

std::vector<std::uint8_t> activation_status(const Tensor &pre_activation)
{
    std::vector<std::uint8_t> status(pre_activation.size());
    for (std::size_t i = 0; i < status.size(); i++)
        status[i] = pre_activation[i] > 0.0f ? 1 : 0;
    return status;
}

Tensor apply_layer(const Layer &layer, const Tensor &input, Tensor *pre_activation)
{
    switch (layer.kind)
    {
        case LayerKind::dense:
        case LayerKind::conv2d:
        {
            Tensor out = layer.kind == LayerKind::dense ? dense_affine(layer, input) : conv2d_affine(layer, input);
            if (pre_activation)
                *pre_activation = out;
            if (layer.fused_relu)
                relu_inplace(out);
            return out;
        }
        case LayerKind::relu:
        {
            Tensor out = input;
            relu_inplace(out);
            return out;
        }
        case LayerKind::maxpool2d:
            return maxpool(layer, input);
        case LayerKind::flatten:
            return input.reshaped({input.size()});
    }
    throw ShapeError("unknown layer kind");
}

Tensor forward(const Model &model, const Tensor &input)
{
    if (input.shape() != model.input_shape())
        throw ShapeError("input shape " + shape_to_string(input.shape()) + " does not match model input " + shape_to_string(model.input_shape()));
    Tensor current = input;
    for (const Layer &l : model.layers())
        current = apply_layer(l, current);
    return current;
}

Tensor layer_input(const Model &model, const Tensor &input, std::size_t layer_index)
{
    if (layer_index >= model.num_layers())
        throw std::out_of_range("layer index " + std::to_string(layer_index) + " out of range");
    if (input.shape() != model.input_shape())
        throw ShapeError("input shape " + shape_to_string(input.shape()) + " does not match model input " + shape_to_string(model.input_shape()));
    Tensor current = input;
    for (std::size_t i = 0; i < layer_index; i++)
        current = apply_layer(model.layer(i), current);
    return current;
}

std::vector<ActivationRecord> capture_activations(const Model &model, const Tensor &input, const std::set<std::size_t> &layer_filter)
{
    for (std::size_t idx : layer_filter)
    {
        if (idx >= model.num_layers())
            throw std::out_of_range("layer index " + std::to_string(idx) + " out of range");
        if (!model.layer(idx).is_affine())
            throw std::invalid_argument("layer " + std::to_string(idx) + " is not a dense or conv2d layer");
    }
    if (input.shape() != model.input_shape())
        throw ShapeError("input shape " + shape_to_string(input.shape()) + " does not match model input " + shape_to_string(model.input_shape()));

    std::vector<ActivationRecord> records;
    if (layer_filter.empty())
        return records;
    const std::size_t last = *layer_filter.rbegin();
    Tensor current = input;
    for (std::size_t i = 0; i <= last; i++)
    {
        if (layer_filter.contains(i))
        {
            ActivationRecord rec;
            rec.layer_index = i;
            current = apply_layer(model.layer(i), current, &rec.pre_activation);
            rec.status = activation_status(rec.pre_activation);
            records.push_back(std::move(rec));
        }
        else
            current = apply_layer(model.layer(i), current);
    }
    return records;
}

std::size_t argmax_label(const Tensor &logits)
{
    if (logits.empty())
        throw std::invalid_argument("argmax of an empty tensor");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); i++)
        if (logits[i] > logits[best])
            best = i;
    return best;
}

Model load_model(const std::filesystem::path &path)
{
    using detail::FloatJson;
    const FloatJson doc = detail::read_json_file(path);
    const auto base = path.parent_path();
    try
    {
        Shape input_shape = detail::shape_from_json(doc.at("input_shape"));
        const auto num_classes = doc.at("num_classes").get<std::size_t>();
        std::vector<Layer> layers;
        for (const auto &node : doc.at("layers"))
        {
            Layer l;
            l.kind = layer_kind_from_string(node.at("kind").get<std::string>());
            if (node.contains("weights"))
                l.weights = detail::tensor_from_json(node.at("weights"), base);
            if (node.contains("bias"))
                l.bias = detail::tensor_from_json(node.at("bias"), base);
            if (l.kind == LayerKind::maxpool2d)
            {
                l.pool_size = node.value("pool_size", std::size_t{2});
                l.stride = node.value("stride", l.pool_size);
            }
            else
                l.stride = node.value("stride", std::size_t{1});
            l.fused_relu = node.value("activation", std::string("linear")) == "relu";
            layers.push_back(std::move(l));
        }
        return Model(std::move(layers), std::move(input_shape), num_classes);
    }
    catch (const nlohmann::json::exception &e)
    {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void save_model(const Model &model, const std::filesystem::path &path, std::size_t sidecar_threshold)
{
    using detail::FloatJson;
    detail::TensorWriter writer(path, sidecar_threshold);
    FloatJson doc;
    doc["input_shape"] = model.input_shape();
    doc["num_classes"] = model.num_classes();
    doc["layers"] = FloatJson::array();
    for (const Layer &l : model.layers())
    {
        FloatJson node;
        node["kind"] = std::string(to_string(l.kind));
        if (l.kind == LayerKind::conv2d)
            node["stride"] = l.stride;
        if (l.kind == LayerKind::maxpool2d)
        {
            node["pool_size"] = l.pool_size;
            node["stride"] = l.stride;
        }
        if (l.fused_relu)
            node["activation"] = "relu";
        if (l.weights)
            node["weights"] = writer.write(*l.weights);
        if (l.bias)
            node["bias"] = writer.write(*l.bias);
        doc["layers"].push_back(std::move(node));
    }
    detail::write_json_file(doc, path);
}

} // namespace qnnrepair
