#ifndef QNNREPAIR_DATASET_HPP_
#define QNNREPAIR_DATASET_HPP_

#include "qnnrepair/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

namespace qnnrepair
{

enum class DatasetFormat
{
    csv,
    bin
};

DatasetFormat dataset_format_from_string(std::string_view name);
/// Guesses from the file extension (.csv, otherwise binary).
DatasetFormat dataset_format_for(const std::filesystem::path &path);

/// Labelled inputs. Row order is significant; ids are stable per-row identifiers.
struct Dataset
{
    std::vector<Tensor> inputs;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> ids;
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return inputs.size(); }
    bool empty() const noexcept { return inputs.empty(); }

    void push_back(Tensor input, std::size_t label);
    /// Copy with every input reshaped (element counts must agree).
    Dataset with_shape(const Shape &shape) const;
    /// Rows [begin, begin + count), ids preserved.
    Dataset slice(std::size_t begin, std::size_t count) const;
    /// Throws if labels/inputs disagree in length or a label is out of range.
    void validate() const;
};

/*
 * CSV rows are `label,v1,v2,...`. The binary format is little-endian: magic "QNRD", u32 row count,
 * u32 feature count, u32 num_classes, then per row a u32 label followed by f32 features.
 * For CSV the class count comes from `num_classes` (or 1 + max label when absent).
 */
Dataset load_dataset(const std::filesystem::path &path, DatasetFormat format, std::optional<std::size_t> num_classes = std::nullopt);
void save_dataset(const Dataset &dataset, const std::filesystem::path &path, DatasetFormat format);

/// CIFAR-10 binary batch (1 label byte + 3072 CHW pixel bytes per record), returned as HWC in [0, 1].
Dataset load_cifar10_batch(const std::filesystem::path &path);

/// MNIST IDX image/label pair, flattened to 784 features in [0, 1].
Dataset load_mnist_idx(const std::filesystem::path &images, const std::filesystem::path &labels, std::size_t max_rows);

} // namespace qnnrepair

#endif // QNNREPAIR_DATASET_HPP_
