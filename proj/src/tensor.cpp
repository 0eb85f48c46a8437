#include "qnnrepair/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace qnnrepair
{

std::size_t element_count(const Shape &shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape &shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); i++)
    {
        if (i > 0)
            out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape) :
        shape_(std::move(shape)),
        data_(element_count(shape_), 0.0f)
{
}

Tensor::Tensor(Shape shape, std::vector<float> data) :
        shape_(std::move(shape)),
        data_(std::move(data))
{
    if (element_count(shape_) != data_.size())
        throw ShapeError("tensor shape " + shape_to_string(shape_) + " does not match " + std::to_string(data_.size()) + " values");
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept
{
    for (float v : data_)
        if (!std::isfinite(v))
            return false;
    return true;
}

} // namespace qnnrepair
