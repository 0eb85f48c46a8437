#include "json_io.hpp"

#include <array>
#include <bit>
#include <cstring>

namespace qnnrepair::detail
{

FloatJson read_json_file(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open " + path.string());
    try
    {
        return FloatJson::parse(in);
    }
    catch (const nlohmann::json::exception &e)
    {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void write_json_file(const FloatJson &doc, const std::filesystem::path &path)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(1) << '\n';
    if (!out)
        throw std::runtime_error("write failed: " + path.string());
}

Shape shape_from_json(const FloatJson &node)
{
    if (!node.is_array())
        throw ParseError("shape must be an array");
    Shape shape;
    for (const auto &dim : node)
    {
        if (!dim.is_number_unsigned() && !(dim.is_number_integer() && dim.get<std::int64_t>() >= 0))
            throw ParseError("shape entries must be non-negative integers");
        shape.push_back(dim.get<std::size_t>());
    }
    return shape;
}

Tensor tensor_from_json(const FloatJson &node, const std::filesystem::path &base_dir)
{
    if (!node.is_object() || !node.contains("shape"))
        throw ParseError("tensor must be an object with a shape");
    Shape shape = shape_from_json(node.at("shape"));
    std::vector<float> data;
    if (node.contains("data"))
    {
        const auto &values = node.at("data");
        if (!values.is_array())
            throw ParseError("tensor data must be an array");
        data.reserve(values.size());
        for (const auto &v : values)
        {
            if (!v.is_number())
                throw ParseError("tensor data must be numeric");
            data.push_back(v.get<float>());
        }
    }
    else if (node.contains("blob"))
    {
        const auto blob_path = base_dir / node.at("blob").get<std::string>();
        const auto offset = node.value("offset", std::uint64_t{0});
        std::ifstream in(blob_path, std::ios::binary);
        if (!in)
            throw ParseError("cannot open sidecar " + blob_path.string());
        in.seekg(static_cast<std::streamoff>(offset));
        data.resize(element_count(shape));
        for (auto &v : data)
            v = read_f32_le(in);
        if (!in)
            throw ParseError("sidecar " + blob_path.string() + " is truncated");
    }
    else
        throw ParseError("tensor needs data or blob");

    if (element_count(shape) != data.size())
        throw ShapeError("tensor shape " + shape_to_string(shape) + " does not match " + std::to_string(data.size()) + " values");
    Tensor t(std::move(shape), std::move(data));
    if (!t.all_finite())
        throw ParseError("tensor contains non-finite values");
    return t;
}

TensorWriter::TensorWriter(std::filesystem::path json_path, std::size_t sidecar_threshold) :
        blob_path_(json_path.replace_extension(".bin")),
        threshold_(sidecar_threshold)
{
}

FloatJson TensorWriter::write(const Tensor &tensor)
{
    FloatJson node;
    node["shape"] = tensor.shape();
    if (threshold_ == 0 || tensor.size() <= threshold_)
    {
        node["data"] = tensor.data();
        return node;
    }
    if (!blob_.is_open())
    {
        blob_.open(blob_path_, std::ios::binary | std::ios::trunc);
        if (!blob_)
            throw std::runtime_error("cannot write " + blob_path_.string());
    }
    node["blob"] = blob_path_.filename().string();
    node["offset"] = offset_;
    for (float v : tensor.values())
        write_f32_le(blob_, v);
    offset_ += 4 * tensor.size();
    return node;
}

void write_u32_le(std::ostream &out, std::uint32_t value)
{
    std::array<char, 4> bytes{};
    for (int i = 0; i < 4; i++)
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
    out.write(bytes.data(), 4);
}

std::uint32_t read_u32_le(std::istream &in)
{
    std::array<unsigned char, 4> bytes{};
    in.read(reinterpret_cast<char *>(bytes.data()), 4);
    std::uint32_t value = 0;
    for (int i = 0; i < 4; i++)
        value |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
    return value;
}

void write_f32_le(std::ostream &out, float value)
{
    write_u32_le(out, std::bit_cast<std::uint32_t>(value));
}

float read_f32_le(std::istream &in)
{
    return std::bit_cast<float>(read_u32_le(in));
}

} // namespace qnnrepair::detail
