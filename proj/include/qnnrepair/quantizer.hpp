#ifndef QNNREPAIR_QUANTIZER_HPP_
#define QNNREPAIR_QUANTIZER_HPP_

#include "qnnrepair/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace qnnrepair
{

inline constexpr int kQuantMax = 127;

/// int8 codes with an affine map r = scale * (q - zero_point).
struct QuantizedTensor
{
    Shape shape;
    std::vector<std::int8_t> data;
    float scale = 1.0f;
    std::int32_t zero_point = 0;

    std::size_t size() const noexcept { return data.size(); }
    /// Dequantized value of element i in double precision.
    double real_value(std::size_t i) const noexcept
    {
        return static_cast<double>(scale) * (static_cast<double>(data[i]) - zero_point);
    }
};

/// Symmetric per-tensor quantization: scale = max|r| / 127, zero point 0, q = round(r / scale)
/// (half away from zero) clamped to [-127, 127]. An all-zero tensor gets scale 1.
QuantizedTensor quantize_tensor(const Tensor &values);

/// Quantization with a caller-provided scale and zero point.
QuantizedTensor quantize_tensor(const Tensor &values, float scale, std::int32_t zero_point);

Tensor dequantize(const QuantizedTensor &qt);

struct QuantizedLayer
{
    LayerKind kind = LayerKind::relu;
    std::optional<QuantizedTensor> weights;
    std::optional<Tensor> bias;
    std::size_t stride = 1;
    std::size_t pool_size = 2;
    bool fused_relu = false;
    /// Dense neurons whose incoming weights are held at full precision (after a float patch).
    std::map<std::size_t, std::vector<float>> float_columns;
};

/*
 * Weight-quantized twin of a Model: dense/conv weights are int8 with a per-tensor scale, biases
 * and activations stay float32. Inference runs in float on the dequantized weights, so the
 * dequantized network is cached and rebuilt whenever a patch is applied.
 */
class QuantizedModel
{
    public:
        QuantizedModel(std::vector<QuantizedLayer> layers, Shape input_shape, std::size_t num_classes);

        const std::vector<QuantizedLayer> &layers() const noexcept { return layers_; }
        const QuantizedLayer &layer(std::size_t index) const { return layers_.at(index); }
        std::size_t num_layers() const noexcept { return layers_.size(); }
        const Shape &input_shape() const noexcept { return effective_.input_shape(); }
        std::size_t num_classes() const noexcept { return effective_.num_classes(); }

        /// The float network actually evaluated: dequantized weights plus any float-patched columns.
        const Model &effective_model() const noexcept { return effective_; }

        /// Dequantized incoming weights of one dense neuron.
        std::vector<float> neuron_weights(std::size_t layer_index, std::size_t neuron) const;

        /// Stores one dense neuron's incoming weights at full precision.
        void set_float_column(std::size_t layer_index, std::size_t neuron, std::vector<float> weights);

        /// Replaces a layer's weights by a fresh per-tensor quantization of float_weights.
        void requantize_layer(std::size_t layer_index, const Tensor &float_weights);

    private:
        void rebuild();

        std::vector<QuantizedLayer> layers_;
        Model effective_;
};

QuantizedModel quantize_model(const Model &model);

Tensor quantized_forward(const QuantizedModel &qmodel, const Tensor &input);

std::vector<ActivationRecord> capture_activations_q(const QuantizedModel &qmodel, const Tensor &input, const std::set<std::size_t> &layer_filter);

QuantizedModel load_quantized_model(const std::filesystem::path &path);
void save_quantized_model(const QuantizedModel &qmodel, const std::filesystem::path &path);

} // namespace qnnrepair

#endif // QNNREPAIR_QUANTIZER_HPP_
