#ifndef QNNREPAIR_SRC_JSON_IO_HPP_
#define QNNREPAIR_SRC_JSON_IO_HPP_

#include "qnnrepair/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace qnnrepair::detail
{

// float-valued JSON so weights print as the shortest float32 literal
using FloatJson = nlohmann::basic_json<std::map, std::vector, std::string, bool, std::int64_t, std::uint64_t, float>;

FloatJson read_json_file(const std::filesystem::path &path);
void write_json_file(const FloatJson &doc, const std::filesystem::path &path);

Shape shape_from_json(const FloatJson &node);

/// Reads {"shape", "data"} or {"shape", "blob", "offset"} relative to base_dir.
Tensor tensor_from_json(const FloatJson &node, const std::filesystem::path &base_dir);

/// Appends to the sidecar stream when the tensor is larger than sidecar_threshold (0 disables).
class TensorWriter
{
    public:
        TensorWriter(std::filesystem::path json_path, std::size_t sidecar_threshold);
        FloatJson write(const Tensor &tensor);

    private:
        std::filesystem::path blob_path_;
        std::size_t threshold_;
        std::ofstream blob_;
        std::uint64_t offset_ = 0;
};

void write_f32_le(std::ostream &out, float value);
float read_f32_le(std::istream &in);
void write_u32_le(std::ostream &out, std::uint32_t value);
std::uint32_t read_u32_le(std::istream &in);

} // namespace qnnrepair::detail

#endif // QNNREPAIR_SRC_JSON_IO_HPP_
