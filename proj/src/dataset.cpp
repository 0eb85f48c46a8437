#include "qnnrepair/dataset.hpp"

#include "json_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace qnnrepair
{

namespace
{

constexpr char kMagic[4] = {'Q', 'N', 'R', 'D'};

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

template <class T>
T parse_number(std::string_view field, std::size_t line_no)
{
    field = trim(field);
    T value{};
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size())
        throw ParseError("line " + std::to_string(line_no) + ": malformed field '" + std::string(field) + "'");
    return value;
}

Dataset load_csv(const std::filesystem::path &path, std::optional<std::size_t> num_classes)
{
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open " + path.string());
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    std::size_t max_label = 0;
    while (std::getline(in, line))
    {
        line_no++;
        if (trim(line).empty())
            continue;
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (true)
        {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos)
                break;
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() < 2)
            throw ParseError(path.string() + " line " + std::to_string(line_no) + ": expected label and features");
        if (width == 0)
            width = fields.size() - 1;
        else if (fields.size() - 1 != width)
            throw ParseError(path.string() + " line " + std::to_string(line_no) + ": expected " + std::to_string(width) + " features");
        const auto label = parse_number<std::size_t>(fields[0], line_no);
        std::vector<float> values;
        values.reserve(width);
        for (std::size_t i = 1; i < fields.size(); i++)
            values.push_back(parse_number<float>(fields[i], line_no));
        max_label = std::max(max_label, label);
        ds.push_back(Tensor({width}, std::move(values)), label);
    }
    ds.num_classes = num_classes.value_or(ds.empty() ? 0 : max_label + 1);
    ds.validate();
    return ds;
}

Dataset load_bin(const std::filesystem::path &path, std::optional<std::size_t> num_classes)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError("cannot open " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || !std::equal(magic, magic + 4, kMagic))
        throw ParseError(path.string() + ": bad magic");
    const std::uint32_t rows = detail::read_u32_le(in);
    const std::uint32_t features = detail::read_u32_le(in);
    const std::uint32_t classes = detail::read_u32_le(in);
    if (!in)
        throw ParseError(path.string() + ": truncated header");
    if (num_classes && *num_classes != classes)
        throw ParseError(path.string() + ": header declares " + std::to_string(classes) + " classes, expected " + std::to_string(*num_classes));
    Dataset ds;
    ds.num_classes = classes;
    for (std::uint32_t r = 0; r < rows; r++)
    {
        const std::uint32_t label = detail::read_u32_le(in);
        std::vector<float> values(features);
        for (auto &v : values)
            v = detail::read_f32_le(in);
        if (!in)
            throw ParseError(path.string() + ": truncated at row " + std::to_string(r));
        ds.push_back(Tensor({features}, std::move(values)), label);
    }
    ds.validate();
    return ds;
}

std::vector<unsigned char> read_bytes(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError("cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t be32(const std::vector<unsigned char> &bytes, std::size_t offset)
{
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) | (std::uint32_t{bytes[offset + 2]} << 8) | bytes[offset + 3];
}

} // namespace

DatasetFormat dataset_format_from_string(std::string_view name)
{
    if (name == "csv")
        return DatasetFormat::csv;
    if (name == "bin")
        return DatasetFormat::bin;
    throw std::invalid_argument("unknown dataset format '" + std::string(name) + "'");
}

DatasetFormat dataset_format_for(const std::filesystem::path &path)
{
    return path.extension() == ".csv" ? DatasetFormat::csv : DatasetFormat::bin;
}

void Dataset::push_back(Tensor input, std::size_t label)
{
    ids.push_back(inputs.size());
    inputs.push_back(std::move(input));
    labels.push_back(label);
}

Dataset Dataset::with_shape(const Shape &shape) const
{
    Dataset out = *this;
    for (auto &t : out.inputs)
    {
        if (t.size() != element_count(shape))
            throw ShapeError("dataset row has " + std::to_string(t.size()) + " features, model expects " + shape_to_string(shape));
        t = t.reshaped(shape);
    }
    return out;
}

Dataset Dataset::slice(std::size_t begin, std::size_t count) const
{
    if (begin > size())
        throw std::out_of_range("slice start past end of dataset");
    const std::size_t end = std::min(size(), begin + count);
    Dataset out;
    out.num_classes = num_classes;
    out.inputs.assign(inputs.begin() + begin, inputs.begin() + end);
    out.labels.assign(labels.begin() + begin, labels.begin() + end);
    out.ids.assign(ids.begin() + begin, ids.begin() + end);
    return out;
}

void Dataset::validate() const
{
    if (inputs.size() != labels.size() || inputs.size() != ids.size())
        throw ParseError("dataset has mismatched input/label/id counts");
    for (std::size_t i = 0; i < labels.size(); i++)
        if (labels[i] >= num_classes)
            throw ParseError("row " + std::to_string(i) + ": label " + std::to_string(labels[i]) + " out of range for " + std::to_string(num_classes) + " classes");
}

Dataset load_dataset(const std::filesystem::path &path, DatasetFormat format, std::optional<std::size_t> num_classes)
{
    return format == DatasetFormat::csv ? load_csv(path, num_classes) : load_bin(path, num_classes);
}

void save_dataset(const Dataset &dataset, const std::filesystem::path &path, DatasetFormat format)
{
    dataset.validate();
    if (format == DatasetFormat::csv)
    {
        std::ofstream out(path);
        if (!out)
            throw std::runtime_error("cannot write " + path.string());
        char buf[32];
        for (std::size_t r = 0; r < dataset.size(); r++)
        {
            out << dataset.labels[r];
            for (float v : dataset.inputs[r].values())
            {
                const auto res = std::to_chars(buf, buf + sizeof(buf), v);
                out << ',' << std::string_view(buf, res.ptr - buf);
            }
            out << '\n';
        }
        if (!out)
            throw std::runtime_error("write failed: " + path.string());
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    const std::size_t features = dataset.empty() ? 0 : dataset.inputs.front().size();
    out.write(kMagic, 4);
    detail::write_u32_le(out, static_cast<std::uint32_t>(dataset.size()));
    detail::write_u32_le(out, static_cast<std::uint32_t>(features));
    detail::write_u32_le(out, static_cast<std::uint32_t>(dataset.num_classes));
    for (std::size_t r = 0; r < dataset.size(); r++)
    {
        if (dataset.inputs[r].size() != features)
            throw ShapeError("ragged dataset cannot be written in binary format");
        detail::write_u32_le(out, static_cast<std::uint32_t>(dataset.labels[r]));
        for (float v : dataset.inputs[r].values())
            detail::write_f32_le(out, v);
    }
    if (!out)
        throw std::runtime_error("write failed: " + path.string());
}

Dataset load_cifar10_batch(const std::filesystem::path &path)
{
    constexpr std::size_t kSide = 32, kChannels = 3, kRecord = 1 + kSide * kSide * kChannels;
    const auto bytes = read_bytes(path);
    if (bytes.empty() || bytes.size() % kRecord != 0)
        throw ParseError(path.string() + ": not a CIFAR-10 binary batch");
    Dataset ds;
    ds.num_classes = 10;
    for (std::size_t off = 0; off < bytes.size(); off += kRecord)
    {
        Tensor img({kSide, kSide, kChannels});
        for (std::size_t c = 0; c < kChannels; c++)
            for (std::size_t p = 0; p < kSide * kSide; p++)
                img[p * kChannels + c] = bytes[off + 1 + c * kSide * kSide + p] / 255.0f;
        ds.push_back(std::move(img), bytes[off]);
    }
    ds.validate();
    return ds;
}

Dataset load_mnist_idx(const std::filesystem::path &images, const std::filesystem::path &labels, std::size_t max_rows)
{
    const auto img = read_bytes(images);
    const auto lab = read_bytes(labels);
    if (img.size() < 16 || be32(img, 0) != 0x00000803)
        throw ParseError(images.string() + ": not an IDX image file");
    if (lab.size() < 8 || be32(lab, 0) != 0x00000801)
        throw ParseError(labels.string() + ": not an IDX label file");
    const std::size_t count = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
    if (be32(lab, 4) != count || img.size() < 16 + count * rows * cols || lab.size() < 8 + count)
        throw ParseError("IDX image/label files disagree or are truncated");
    Dataset ds;
    ds.num_classes = 10;
    const std::size_t n = std::min(count, max_rows);
    const std::size_t pixels = rows * cols;
    for (std::size_t r = 0; r < n; r++)
    {
        Tensor t({pixels});
        for (std::size_t p = 0; p < pixels; p++)
            t[p] = img[16 + r * pixels + p] / 255.0f;
        ds.push_back(std::move(t), lab[8 + r]);
    }
    ds.validate();
    return ds;
}

} // namespace qnnrepair
