#ifndef QNNREPAIR_TENSOR_HPP_
#define QNNREPAIR_TENSOR_HPP_

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qnnrepair
{

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape &shape);
std::string shape_to_string(const Shape &shape);

class ShapeError : public std::runtime_error
{
    public:
        using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error
{
    public:
        using std::runtime_error::runtime_error;
};

/// Row-major float32 tensor. The element count always matches the shape.
class Tensor
{
    public:
        Tensor() = default;
        explicit Tensor(Shape shape);
        Tensor(Shape shape, std::vector<float> data);

        const Shape &shape() const noexcept { return shape_; }
        std::size_t size() const noexcept { return data_.size(); }
        bool empty() const noexcept { return data_.empty(); }

        std::span<const float> values() const noexcept { return data_; }
        std::span<float> values() noexcept { return data_; }
        const std::vector<float> &data() const noexcept { return data_; }

        float operator[](std::size_t i) const noexcept { return data_[i]; }
        float &operator[](std::size_t i) noexcept { return data_[i]; }

        /// Same data under a different shape with the same element count.
        Tensor reshaped(Shape shape) const;

        bool all_finite() const noexcept;

        friend bool operator==(const Tensor &, const Tensor &) = default;

    private:
        Shape shape_;
        std::vector<float> data_;
};

} // namespace qnnrepair

#endif // QNNREPAIR_TENSOR_HPP_
