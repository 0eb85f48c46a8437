#ifndef QNNREPAIR_MODEL_HPP_
#define QNNREPAIR_MODEL_HPP_

#include "qnnrepair/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace qnnrepair
{

enum class LayerKind
{
    dense,
    relu,
    conv2d,
    maxpool2d,
    flatten
};

std::string_view to_string(LayerKind kind) noexcept;
LayerKind layer_kind_from_string(std::string_view name);

/*
 * One layer of a feed-forward classifier.
 *
 * dense weights are [in_dim, out_dim] and conv2d weights [kh, kw, in_ch, out_ch], both with a
 * bias of [out]. Feature maps are laid out HWC. conv2d uses valid padding; maxpool2d uses a
 * square window. A dense or conv2d layer may carry a fused ReLU (Keras style), in which case its
 * pre-activation is the affine output before the ReLU.
 */
struct Layer
{
    LayerKind kind = LayerKind::relu;
    std::optional<Tensor> weights;
    std::optional<Tensor> bias;
    std::size_t stride = 1;
    std::size_t pool_size = 2;
    bool fused_relu = false;

    bool is_affine() const noexcept { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
    /// Number of output units (neurons / channels) of an affine layer.
    std::size_t units() const;
    /// Fan-in of one dense neuron.
    std::size_t fan_in() const;

    static Layer dense(Tensor weights, Tensor bias, bool fused_relu = false);
    static Layer conv2d(Tensor weights, Tensor bias, std::size_t stride = 1, bool fused_relu = false);
    static Layer maxpool2d(std::size_t pool_size = 2, std::size_t stride = 2);
    static Layer relu();
    static Layer flatten();
};

/// Full-precision feed-forward classifier. Immutable once constructed; shapes are validated up front.
class Model
{
    public:
        Model(std::vector<Layer> layers, Shape input_shape, std::size_t num_classes);

        const std::vector<Layer> &layers() const noexcept { return layers_; }
        const Layer &layer(std::size_t index) const { return layers_.at(index); }
        std::size_t num_layers() const noexcept { return layers_.size(); }
        const Shape &input_shape() const noexcept { return input_shape_; }
        std::size_t num_classes() const noexcept { return num_classes_; }
        /// Output shape of layer i (input shape of layer i + 1).
        const Shape &output_shape(std::size_t index) const { return output_shapes_.at(index); }
        /// Input shape of layer i.
        const Shape &layer_input_shape(std::size_t index) const;

        std::vector<std::size_t> dense_layer_indices() const;
        std::size_t last_dense_layer() const;

    private:
        std::vector<Layer> layers_;
        Shape input_shape_;
        std::size_t num_classes_;
        std::vector<Shape> output_shapes_;
};

struct ActivationRecord
{
    std::size_t layer_index = 0;
    Tensor pre_activation;
    /// status[j] == 1 iff pre_activation[j] > 0
    std::vector<std::uint8_t> status;
};

std::vector<std::uint8_t> activation_status(const Tensor &pre_activation);

/// Applies a single layer. For affine layers the pre-ReLU output is written to pre_activation when given.
Tensor apply_layer(const Layer &layer, const Tensor &input, Tensor *pre_activation = nullptr);

Tensor forward(const Model &model, const Tensor &input);

/// Input to layer_index (the output of the preceding layer) for one model input.
Tensor layer_input(const Model &model, const Tensor &input, std::size_t layer_index);

std::vector<ActivationRecord> capture_activations(const Model &model, const Tensor &input, const std::set<std::size_t> &layer_filter);

/// Smallest index achieving the maximum.
std::size_t argmax_label(const Tensor &logits);

Model load_model(const std::filesystem::path &path);

/// Tensors with more than sidecar_threshold elements go to a little-endian f32 blob next to the JSON file.
void save_model(const Model &model, const std::filesystem::path &path, std::size_t sidecar_threshold = 0);

} // namespace qnnrepair

#endif // QNNREPAIR_MODEL_HPP_
